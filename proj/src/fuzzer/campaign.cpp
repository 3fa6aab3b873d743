#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include "threadfuzz/fuzzer.hpp"

namespace threadfuzz::fuzz {

namespace {

// Stream salts, so each consumer of the master seed gets its own sequence.
constexpr std::uint64_t kPlanSalt = 0x91a7;
constexpr std::uint64_t kCampaignSalt = 0xf022;
constexpr std::uint64_t kScheduleSalt = 0x5eed;

struct RunSummary {
  std::vector<std::pair<std::uint16_t, std::uint8_t>> hits;
  vm::ContextSignature sig;
  bool is_mt = false;
  vm::ExitStatus status;
  std::uint64_t steps = 0;
  std::uint64_t schedule_seed = 0;
  std::uint64_t coverage_hash = 0;
};

struct Evaluation {
  std::vector<RunSummary> runs;
};

class Campaign {
 public:
  Campaign(const ir::Program& program, const FuzzConfig& config)
      : program_(program),
        config_(config),
        rng_(derive_seed(config.master_seed, kCampaignSalt)),
        schedule_base_(derive_seed(config.master_seed, kScheduleSalt)),
        started_(std::chrono::steady_clock::now()) {
    const auto a = analysis::analyze_program(program);
    plan_ = analysis::plan_instrumentation(program, a.scope, instrumentation_for(config.mode),
                                           derive_seed(config.master_seed, kPlanSalt), config.plan_params);
    target_ = vm::InstrumentedProgram(program, plan_);
  }

  CampaignReport run(std::span<const InitialSeed> initial) {
    std::uint32_t max_id = 0;
    bool any_id = false;
    for (const auto& s : initial) {
      if (s.id) {
        max_id = std::max(max_id, *s.id);
        any_id = true;
      }
    }
    next_id_ = any_id ? max_id + 1 : 0;

    for (const auto& s : initial) {
      Seed seed;
      seed.id = s.id ? *s.id : next_id_++;
      seed.bytes = s.bytes.empty() ? Bytes{0} : s.bytes;
      seed.initial = true;
      if (remaining() == 0) {
        queue_.push_back(std::move(seed));
        continue;
      }
      const auto eval = evaluate(seed.bytes, mutant_counter_++, remaining());
      process(std::move(seed), eval);
    }

    std::size_t cursor = 0;
    while (!queue_.empty() && !out_of_budget()) {
      if (cursor >= queue_.size()) {
        cursor = 0;
        ++cycles_;
      }
      QueueNovelty novelty;
      for (const auto& s : queue_) {
        novelty.pending_new_trace += s.pending_new_trace;
        novelty.pending_new_mt_ctx += s.pending_new_mt_ctx;
      }
      if (!select_next_seed(queue_[cursor], novelty, config_.selection, config_.mode != Mode::Afl, rng_, global_)) {
        ++cursor;
        continue;
      }
      fuzz_round(cursor);
      ++cursor;
    }
    return report();
  }

 private:
  std::uint64_t remaining() const { return config_.budget_execs - std::min(config_.budget_execs, execs_); }

  bool out_of_budget() const {
    if (remaining() == 0) return true;
    if (config_.budget_seconds) {
      const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - started_;
      return dt.count() >= *config_.budget_seconds;
    }
    return false;
  }

  std::uint64_t schedule_seed(std::uint64_t mutant, std::uint32_t run) const {
    return derive_seed(derive_seed(schedule_base_, mutant), run);
  }

  // Runs one input N_c times (or fewer: first crash, max_runs). Pure.
  Evaluation evaluate(const Bytes& input, std::uint64_t mutant, std::uint64_t max_runs) const {
    Evaluation ev;
    std::uint32_t target_runs = config_.n0;
    std::set<vm::ContextSignature> sigs;
    for (std::uint32_t r = 0; r < target_runs && r < max_runs; ++r) {
      vm::SchedulerConfig cfg = config_.scheduler;
      cfg.schedule_rng_seed = schedule_seed(mutant, r);
      cfg.intervention_enabled = config_.mode != Mode::Afl;
      cfg.record_trace = false;
      const auto res = vm::execute(target_, input, cfg);
      RunSummary s;
      s.hits.reserve(res.coverage.touched().size());
      std::uint64_t h = vm::kFnvOffsetBasis;
      auto touched = res.coverage.touched();
      std::sort(touched.begin(), touched.end());
      for (auto slot : touched) {
        s.hits.emplace_back(slot, res.coverage.at(slot));
        h = (h ^ (static_cast<std::uint64_t>(slot) << 8 | res.coverage.at(slot))) * vm::kFnvPrime;
      }
      s.coverage_hash = h;
      s.sig = res.s_ctx;
      s.is_mt = res.is_mt;
      s.status = res.status;
      s.steps = res.steps_executed;
      s.schedule_seed = cfg.schedule_rng_seed;
      if (res.is_mt) sigs.insert(res.s_ctx);
      const bool crashed = res.crashed();
      ev.runs.push_back(std::move(s));
      if (crashed) break;
      if (r + 1 == config_.n0) {
        if (config_.mode == Mode::Afl) {
          bool unstable = false;
          for (const auto& run : ev.runs) unstable |= run.coverage_hash != ev.runs.front().coverage_hash;
          target_runs = repetition_count_nondeterministic(unstable, config_.n0, config_.nv);
        } else {
          target_runs = repetition_count(static_cast<std::uint32_t>(sigs.size()), config_.n0, config_.nv);
        }
      }
    }
    return ev;
  }

  // Folds an evaluation into the global state; returns true when queued.
  bool process(Seed seed, const Evaluation& ev) {
    const std::size_t n = std::min<std::uint64_t>(ev.runs.size(), remaining());
    if (n == 0) return false;
    execs_ += n;
    for (std::size_t r = 0; r < n; ++r) {
      if (ev.runs[r].status.kind == vm::ExitKind::Crash) {
        vm::ExecutionResult res;
        res.status = ev.runs[r].status;
        res.is_mt = ev.runs[r].is_mt;
        triage_crash(res, seed.bytes, execs_, ev.runs[r].schedule_seed, global_);
        return false;
      }
    }
    bool new_trace = false;
    bool new_ctx = false;
    bool is_mt = false;
    double steps = 0;
    for (std::size_t r = 0; r < n; ++r) {
      const auto& run = ev.runs[r];
      steps += static_cast<double>(run.steps);
      is_mt |= run.is_mt;
      if (run.status.kind == vm::ExitKind::StepBudgetExhausted) {
        ++hangs_;
        continue;
      }
      new_trace |= cov_new_trace(run.hits, global_);
      if (config_.mode != Mode::Afl) new_ctx |= cov_new_mt_ctx(run.is_mt, run.sig, global_);
      if (run.is_mt) seed.signatures.insert(run.sig);
    }
    if (!seed.initial && !new_trace && !new_ctx) return false;

    seed.is_mt = is_mt;
    seed.c_m = static_cast<std::uint32_t>(seed.signatures.size());
    seed.n_c = static_cast<std::uint32_t>(n);
    seed.avg_exec_steps = steps / static_cast<double>(n);
    seed.discovered_at = execs_;
    seed.covered_new_trace = new_trace;
    seed.covered_new_mt_ctx = new_ctx;
    seed.pending_new_trace = new_trace;
    seed.pending_new_mt_ctx = new_ctx;
    seed.schedule_seed = ev.runs.front().schedule_seed;
    if (!seed.initial) {
      ++global_.n_all;
      if (is_mt) ++global_.n_mt;
    }
    queue_.push_back(std::move(seed));
    return true;
  }

  void fuzz_round(std::size_t index) {
    double total_steps = 0, total_len = 0;
    for (const auto& s : queue_) {
      total_steps += s.avg_exec_steps;
      total_len += static_cast<double>(s.bytes.size());
    }
    const double n = static_cast<double>(queue_.size());
    const std::uint32_t m = mutation_chance(queue_[index], total_steps / n, total_len / n, config_);

    // Mutants of one round only depend on the queue as it was when the
    // round started, so they can be generated up front.
    std::vector<Bytes> pool;
    pool.reserve(queue_.size());
    for (const auto& s : queue_) pool.push_back(s.bytes);
    const Bytes parent_bytes = queue_[index].bytes;
    const std::uint32_t parent_id = queue_[index].id;

    std::vector<Bytes> mutants;
    mutants.reserve(m);
    for (std::uint32_t i = 0; i < m; ++i) mutants.push_back(mutate(parent_bytes, rng_, pool, config_.mutation));
    const std::uint64_t first_mutant = mutant_counter_;
    mutant_counter_ += m;

    const std::size_t chunk = config_.workers > 1 ? config_.workers * 4 : 1;
    for (std::size_t start = 0; start < mutants.size(); start += chunk) {
      if (out_of_budget()) return;
      const std::size_t end = std::min(mutants.size(), start + chunk);
      std::vector<Evaluation> evals(end - start);
      const std::uint64_t cap = remaining();
      if (config_.workers > 1) {
        std::atomic<std::size_t> next{start};
        std::vector<std::thread> pool_threads;
        for (std::uint32_t w = 0; w < config_.workers; ++w) {
          pool_threads.emplace_back([&] {
            for (std::size_t i = next++; i < end; i = next++) evals[i - start] = evaluate(mutants[i], first_mutant + i, cap);
          });
        }
        for (auto& t : pool_threads) t.join();
      } else {
        evals[0] = evaluate(mutants[start], first_mutant + start, cap);
      }
      for (std::size_t i = start; i < end; ++i) {
        if (remaining() == 0) return;
        Seed child;
        child.id = next_id_;
        child.parent = parent_id;
        child.bytes = std::move(mutants[i]);
        if (process(std::move(child), evals[i - start])) ++next_id_;
      }
    }
    // Locate the parent again: admissions only append, so the index holds.
    queue_[index].pending_new_trace = false;
    queue_[index].pending_new_mt_ctx = false;
    ++queue_[index].fuzz_rounds;
  }

  CampaignReport report() const {
    CampaignReport r;
    r.config = config_;
    r.deputy_count = plan_.deputy_count();
    r.queue = queue_;
    for (const auto& [key, rec] : global_.crashes) r.crashes.push_back(rec);
    r.executions = execs_;
    r.n_all = global_.n_all;
    r.n_mt = global_.n_mt;
    r.n_c = global_.n_c;
    r.n_c_m = global_.n_c_m;
    r.n_c_s = global_.n_c_s;
    r.context_consults = global_.context_consults;
    r.hangs = hangs_;
    r.cycles = cycles_;
    r.next_id = next_id_;
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - started_;
    r.wall_seconds = dt.count();
    return r;
  }

  const ir::Program& program_;
  FuzzConfig config_;
  analysis::InstrumentationPlan plan_;
  vm::InstrumentedProgram target_;
  Rng rng_;
  std::uint64_t schedule_base_;
  std::chrono::steady_clock::time_point started_;

  GlobalState global_;
  std::vector<Seed> queue_;
  std::uint64_t execs_ = 0;
  std::uint64_t mutant_counter_ = 0;
  std::uint64_t hangs_ = 0;
  std::uint64_t cycles_ = 0;
  std::uint32_t next_id_ = 0;
};

}  // namespace

std::uint32_t mutation_chance(const Seed& seed, double avg_steps, double avg_len, const FuzzConfig& config) {
  const double speed = seed.avg_exec_steps > 0 && avg_steps > 0 ? avg_steps / seed.avg_exec_steps : 1.0;
  const double size = seed.bytes.empty() || avg_len <= 0 ? 1.0 : avg_len / static_cast<double>(seed.bytes.size());
  const double m = std::round(config.mutation_k * speed * size);
  return static_cast<std::uint32_t>(
      std::clamp(m, static_cast<double>(config.mutation_min), static_cast<double>(config.mutation_max)));
}

CampaignReport fuzz_campaign(const ir::Program& program, const FuzzConfig& config,
                             std::span<const InitialSeed> initial_seeds) {
  Campaign c(program, config);
  if (initial_seeds.empty()) {
    const InitialSeed fallback{Bytes{0}, std::nullopt};
    return c.run(std::span<const InitialSeed>(&fallback, 1));
  }
  return c.run(initial_seeds);
}

}  // namespace threadfuzz::fuzz
