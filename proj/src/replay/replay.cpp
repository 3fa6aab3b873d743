#include <algorithm>
#include <chrono>
#include <set>

#include "threadfuzz/replay.hpp"
#include "threadfuzz/rng.hpp"

namespace threadfuzz::replay {

std::string to_string(Pattern p) { return p == Pattern::P1 ? "p1" : "p2"; }

const BugReport* ReplayReport::find(const std::string& key) const {
  for (const auto& b : bugs) {
    if (b.key == key) return &b;
  }
  return nullptr;
}

std::uint32_t executions_per_turn(const ReplaySeed& seed, const ReplayConfig& config) {
  if (config.pattern == Pattern::P1) return 1;
  if (config.afl_corpus) return 5;
  const std::uint32_t k = config.n0 == 0 ? 1 : seed.n_c / config.n0;
  return std::clamp<std::uint32_t>(k, 1, 5);
}

ReplayReport replay(const ir::Program& program, std::span<const ReplaySeed> corpus, const ReplayConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  ReplayReport report;
  report.pattern = config.pattern;
  report.budget = config.budget_execs;
  // Detectors only need the trace, so the replay target is uninstrumented.
  const vm::InstrumentedProgram target(program, analysis::InstrumentationPlan{});
  const std::uint64_t base = derive_seed(config.master_seed, 0x4e91);
  std::map<std::string, BugReport> bugs;
  std::set<std::string> truth(config.ground_truth.begin(), config.ground_truth.end());

  while (!corpus.empty() && report.executions < config.budget_execs) {
    for (const auto& seed : corpus) {
      const std::uint32_t k = executions_per_turn(seed, config);
      for (std::uint32_t i = 0; i < k && report.executions < config.budget_execs; ++i) {
        vm::SchedulerConfig cfg = config.scheduler;
        cfg.schedule_rng_seed = derive_seed(base, report.executions);
        cfg.record_trace = true;
        const auto res = vm::execute(target, seed.bytes, cfg);
        ++report.executions;
        ++report.executions_per_seed[seed.id];
        const auto found = detect_violations(program, res.trace, res.status);
        if (found.empty()) continue;
        ++report.violating_executions;
        for (const auto& v : found) {
          ++report.violations_by_kind[to_string(v.kind)];
          const auto key = v.key(program);
          auto it = bugs.find(key);
          if (it == bugs.end()) {
            BugReport b;
            b.key = key;
            b.kind = v.kind;
            for (const auto& s : v.sites) b.sites.push_back(program.describe(s));
            b.var = v.var;
            b.first_exposure = report.executions;
            b.first_seed = seed.id;
            b.schedule_seed = cfg.schedule_rng_seed;
            it = bugs.emplace(key, std::move(b)).first;
            truth.erase(key);
            if (!config.ground_truth.empty() && truth.empty() && !report.time_to_expose_all) {
              report.time_to_expose_all = report.executions;
            }
          }
          ++it->second.exposures;
        }
      }
      if (report.executions >= config.budget_execs) break;
    }
  }
  for (auto& [k, b] : bugs) report.bugs.push_back(std::move(b));
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - started;
  report.wall_seconds = dt.count();
  return report;
}

ReplayReport replay_p1(const ir::Program& program, std::span<const ReplaySeed> corpus, ReplayConfig config) {
  config.pattern = Pattern::P1;
  return replay(program, corpus, config);
}

ReplayReport replay_p2(const ir::Program& program, std::span<const ReplaySeed> corpus, ReplayConfig config) {
  config.pattern = Pattern::P2;
  return replay(program, corpus, config);
}

}  // namespace threadfuzz::replay
