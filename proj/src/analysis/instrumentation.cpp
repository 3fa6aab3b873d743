#include <algorithm>
#include <unordered_set>

#include "threadfuzz/analysis.hpp"
#include "threadfuzz/rng.hpp"

namespace threadfuzz::analysis {

std::size_t cfg_edge_count(const ir::Function& fn) {
  std::size_t e = 0;
  for (std::uint32_t b = 0; b < fn.blocks.size(); ++b) e += fn.successors(b).size();
  return e;
}

long cyclomatic_complexity(std::size_t edges, std::size_t blocks) {
  return static_cast<long>(edges) - static_cast<long>(blocks) + 2;
}

double cyclomatic_probability(std::size_t edges, std::size_t blocks) {
  const long mc = cyclomatic_complexity(edges, blocks);
  if (mc <= 0) return kDegenerateComplexityProbability;
  return std::min(static_cast<double>(mc) / 10.0, 1.0);
}

double cyclomatic_probability(const ir::Function& fn) {
  return cyclomatic_probability(cfg_edge_count(fn), fn.blocks.size());
}

double selective_probability(double p_cc, double p_s0) { return std::min(p_cc, p_s0); }

double selective_probability(const ir::Function& fn, double p_s0) {
  return selective_probability(cyclomatic_probability(fn), p_s0);
}

double interleaving_probability(double p_cc, std::size_t memory_instructions, std::size_t instructions,
                                double p_m0) {
  if (instructions == 0) return 0.0;
  return std::min(p_cc * static_cast<double>(memory_instructions) / static_cast<double>(instructions), p_m0);
}

double interleaving_probability(const ir::Function& fn, std::uint32_t block, double p_m0) {
  const auto counts = ir::count_instructions(fn).per_block[block];
  return interleaving_probability(cyclomatic_probability(fn), counts.memory_instructions, counts.instructions, p_m0);
}

std::string to_string(InstrumentationMode mode) { return mode == InstrumentationMode::Muzz ? "muzz" : "afl"; }

std::vector<std::int32_t> InstrumentationPlan::label_table(const ir::Program& program) const {
  std::vector<std::int32_t> table(program.instruction_count(), -1);
  for (const auto& [id, label] : deputies) table[program.flat_index(id)] = label;
  return table;
}

InstrumentationPlan plan_instrumentation(const ir::Program& program, const SuspiciousScope& scope,
                                         InstrumentationMode mode, std::uint64_t rng_seed,
                                         const PlanParams& params) {
  InstrumentationPlan plan;
  plan.mode = mode;
  plan.rng_seed = rng_seed;
  plan.params = params;
  Rng rng(rng_seed);

  std::vector<InstrId> chosen;
  for (std::uint32_t f = 0; f < program.functions.size(); ++f) {
    const auto& fn = program.functions[f];
    const auto counts = ir::count_instructions(fn);
    FunctionAudit audit;
    audit.name = fn.name;
    audit.edges = cfg_edge_count(fn);
    audit.blocks = fn.blocks.size();
    audit.complexity = cyclomatic_complexity(audit.edges, audit.blocks);
    audit.p_cc = cyclomatic_probability(audit.edges, audit.blocks);
    audit.p_s = selective_probability(audit.p_cc, params.selective_bound);

    for (std::uint32_t b = 0; b < fn.blocks.size(); ++b) {
      const auto& bc = counts.per_block[b];
      const double p_m = params.forced_interleaving
                             ? *params.forced_interleaving
                             : interleaving_probability(audit.p_cc, bc.memory_instructions, bc.instructions,
                                                        params.interleaving_bound);
      bool in_scope = false;
      for (std::uint32_t i = 0; i < fn.blocks[b].instructions.size(); ++i) in_scope |= scope.contains({f, b, i});
      audit.block_p_m.push_back(p_m);
      audit.block_in_scope.push_back(in_scope);

      for (std::uint32_t i = 0; i < fn.blocks[b].instructions.size(); ++i) {
        const InstrId id{f, b, i};
        const double u = rng.uniform();
        double p = 0.0;
        if (mode == InstrumentationMode::Afl) {
          p = i == 0 ? 1.0 : 0.0;
        } else if (in_scope) {
          p = i == 0 ? 1.0 : (scope.contains(id) ? p_m : 0.0);
        } else {
          p = i == 0 ? audit.p_s : 0.0;
        }
        if (u < p) chosen.push_back(id);
      }
    }
    plan.audit.push_back(std::move(audit));
  }

  constexpr std::size_t kLabelSpace = 1u << 16;
  plan.labels_distinct = chosen.size() <= kLabelSpace;
  std::unordered_set<std::uint16_t> used;
  for (const auto& id : chosen) {
    auto label = static_cast<std::uint16_t>(rng.next() & 0xffff);
    if (plan.labels_distinct) {
      while (used.count(label)) label = static_cast<std::uint16_t>(rng.next() & 0xffff);
      used.insert(label);
    }
    plan.deputies.emplace(id, label);
  }
  return plan;
}

}  // namespace threadfuzz::analysis
