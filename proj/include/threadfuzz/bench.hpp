// JSON reports, benchmark manifests and the cross-mode comparison table.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "threadfuzz/analysis.hpp"
#include "threadfuzz/fuzzer.hpp"
#include "threadfuzz/replay.hpp"

namespace threadfuzz::bench {

using nlohmann::json;
using fuzz::Bytes;

json analysis_report(const ir::Program& program, const std::string& program_path,
                     const analysis::StaticAnalysis& analysis, const analysis::InstrumentationPlan& plan);
// Wall-clock values go under "timing" so the rest can be compared byte for byte.
json campaign_report(const fuzz::CampaignReport& report, const std::string& program_path);
json replay_report(const replay::ReplayReport& report, const replay::ReplayConfig& config,
                   const std::string& program_path);
// Copy without any "timing" member, at every depth.
json without_timing(json j);

std::string to_hex(std::span<const std::uint8_t> bytes);
Bytes from_hex(std::string_view hex);  // throws std::invalid_argument

struct PlantedCrash {
  std::string key;
  bool concurrency_dependent = false;
};

// benchmarks/<name>/manifest.json
struct BenchmarkCase {
  std::string name;
  std::filesystem::path dir;
  std::string program_file;  // relative to dir
  std::vector<Bytes> initial_seeds;
  std::vector<std::string> expected_scope;  // L_m as "fn:block:index"
  std::optional<std::size_t> interleaving_points;
  std::vector<PlantedCrash> planted_crashes;
  std::vector<std::string> planted_violations;
  std::vector<Bytes> witness_inputs;  // inputs whose exhaustive schedules expose the ground truth
  std::uint64_t fuzz_budget = 10'000;
  std::uint64_t replay_budget = 1'000;

  std::filesystem::path program_path() const { return dir / program_file; }
};

BenchmarkCase load_case(const std::filesystem::path& dir);
json case_json(const BenchmarkCase& c);
// Subdirectories of root holding a manifest.json, sorted by name.
std::vector<std::filesystem::path> list_cases(const std::filesystem::path& root);

struct BenchOptions {
  std::vector<fuzz::Mode> modes = {fuzz::Mode::Muzz, fuzz::Mode::Mafl, fuzz::Mode::Afl};
  std::uint32_t runs = 5;
  std::uint64_t master_seed = 0;  // run r uses master_seed + r
  std::optional<std::uint64_t> budget_execs;   // default: manifest
  std::optional<std::uint64_t> replay_execs;   // default: manifest
  replay::Pattern pattern = replay::Pattern::P2;
  std::uint32_t workers = 1;
};

// Runs every (mode, run) campaign plus a replay of its queue, writing
// <out>/<mode>/run_<r>/{campaign,replay}.json and <out>/manifest.json, then
// aggregates them into <out>/bench.json. Returns the table.
json run_bench(const BenchmarkCase& c, const BenchOptions& options, const std::filesystem::path& out);

// Pure aggregation of raw artifacts: one row per campaign, per-mode medians
// and the ordering checks.
json aggregate(const std::vector<std::pair<json, json>>& campaign_and_replay, const BenchmarkCase* planted);
// Re-reads the artifacts run_bench wrote and aggregates them again.
json aggregate_dir(const std::filesystem::path& out);

double median(std::vector<double> values);
std::string format_table(const json& table);

}  // namespace threadfuzz::bench
