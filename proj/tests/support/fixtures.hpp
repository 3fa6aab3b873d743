#pragma once

#include <string>

#include "threadfuzz/mtir.hpp"

namespace threadfuzz::testing {

inline std::string source_path(const std::string& rel) { return std::string(THREADFUZZ_SOURCE_DIR) + "/" + rel; }

inline ir::Program load_benchmark(const std::string& name) {
  return ir::load_program_file(source_path("benchmarks/" + name + "/" + name + ".mtir"));
}

inline ir::InstrId id_of(const ir::Program& p, const std::string& fn, const std::string& block, std::uint32_t index) {
  const auto f = *p.find_function(fn);
  const auto& blocks = p.functions[f].blocks;
  for (std::uint32_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].id == block) return {f, b, index};
  }
  throw std::runtime_error("no block " + fn + ":" + block);
}

}  // namespace threadfuzz::testing
