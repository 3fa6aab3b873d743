// threadfuzz command-line front end.
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "threadfuzz/bench.hpp"

namespace fs = std::filesystem;
using namespace threadfuzz;
using bench::json;

namespace {

struct Globals {
  std::uint64_t master_seed = 0;
  std::string out = "threadfuzz-out";
  bool json = false;
};

void write_json(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

fuzz::Mode mode_or_throw(const std::string& s) {
  auto m = fuzz::parse_mode(s);
  if (!m) throw CLI::ValidationError("--mode", "expected muzz|mafl|afl");
  return *m;
}

const std::vector<std::string> kModes = {"muzz", "mafl", "afl"};

int cmd_analyze(const Globals& g, const std::string& program_path, const std::string& mode_name,
                const analysis::PlanParams& params) {
  const auto program = ir::load_program_file(program_path);
  const auto a = analysis::analyze_program(program);
  const auto plan = analysis::plan_instrumentation(program, a.scope, fuzz::instrumentation_for(mode_or_throw(mode_name)),
                                                   derive_seed(g.master_seed, 0x91a7), params);
  const auto report = bench::analysis_report(program, program_path, a, plan);
  write_json(fs::path(g.out) / "analysis.json", report);
  if (g.json) {
    std::cout << report.dump(2) << "\n";
  } else {
    std::printf("scope (L_m): %zu instructions\n", a.scope.size());
    for (const auto& s : report["scope"]) std::printf("  %s\n", s.get<std::string>().c_str());
    std::printf("deputies: %zu (%s)\ninterleaving points: %zu\n", plan.deputy_count(), mode_name.c_str(),
                report["interleaving_points"].get<std::size_t>());
  }
  return 0;
}

struct FuzzArgs {
  std::string program;
  std::string mode = "muzz";
  std::uint64_t budget = 10'000;
  std::optional<double> seconds;
  std::string seeds_dir;
  std::vector<std::string> seed_hex;
  std::string resume;
  std::uint32_t workers = 4;
  std::uint32_t n0 = fuzz::kDefaultN0;
  std::uint32_t nv = fuzz::kDefaultNv;
  std::uint64_t max_steps = 1'000'000;
};

int cmd_fuzz(const Globals& g, const FuzzArgs& a) {
  const auto program = ir::load_program_file(a.program);
  fuzz::FuzzConfig cfg;
  cfg.mode = mode_or_throw(a.mode);
  cfg.master_seed = g.master_seed;
  cfg.budget_execs = a.budget;
  cfg.budget_seconds = a.seconds;
  cfg.workers = a.workers;
  cfg.n0 = a.n0;
  cfg.nv = a.nv;
  cfg.scheduler.max_steps = a.max_steps;

  std::vector<fuzz::InitialSeed> seeds;
  if (!a.resume.empty()) {
    const auto queue = fuzz::read_queue(fs::path(a.resume) / "corpus");
    if (queue.empty()) throw std::runtime_error("no queue under " + a.resume + "/corpus");
    for (const auto& s : queue) seeds.push_back({s.bytes, s.id});
  }
  if (!a.seeds_dir.empty()) {
    for (auto& s : fuzz::read_seed_dir(a.seeds_dir)) seeds.push_back(std::move(s));
  }
  for (const auto& h : a.seed_hex) seeds.push_back({bench::from_hex(h), std::nullopt});

  const auto report = fuzz::fuzz_campaign(program, cfg, seeds);
  const fs::path out(g.out);
  fuzz::write_corpus(out / "corpus", report);
  const auto j = bench::campaign_report(report, a.program);
  write_json(out / "campaign.json", j);
  if (g.json) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::printf("%s: %llu execs, N_all=%llu N_mt=%llu (%.3f), N_c=%llu (N_c^m=%llu, N_c^s=%llu), queue %zu, %.2fs\n",
                a.mode.c_str(), static_cast<unsigned long long>(report.executions),
                static_cast<unsigned long long>(report.n_all), static_cast<unsigned long long>(report.n_mt),
                report.mt_ratio(), static_cast<unsigned long long>(report.n_c),
                static_cast<unsigned long long>(report.n_c_m), static_cast<unsigned long long>(report.n_c_s),
                report.queue.size(), report.wall_seconds);
    for (const auto& c : report.crashes) std::printf("  crash %s%s\n", c.key.c_str(), c.is_mt ? " [mt]" : "");
  }
  return 0;
}

struct ReplayArgs {
  std::string program;
  std::string corpus;
  std::string pattern = "p2";
  std::uint64_t budget = 1000;
  bool afl_corpus = false;
  std::vector<std::string> ground_truth;
  std::string manifest;
};

int cmd_replay(const Globals& g, const ReplayArgs& a) {
  const auto program = ir::load_program_file(a.program);
  replay::ReplayConfig rc;
  rc.pattern = a.pattern == "p1" ? replay::Pattern::P1 : replay::Pattern::P2;
  rc.budget_execs = a.budget;
  rc.master_seed = g.master_seed;
  rc.afl_corpus = a.afl_corpus;
  rc.ground_truth = a.ground_truth;
  if (!a.manifest.empty()) {
    const auto c = bench::load_case(fs::path(a.manifest).parent_path());
    rc.ground_truth.insert(rc.ground_truth.end(), c.planted_violations.begin(), c.planted_violations.end());
  }
  std::vector<replay::ReplaySeed> corpus;
  for (const auto& s : fuzz::read_queue(a.corpus)) corpus.push_back({s.id, s.bytes, s.n_c});
  if (corpus.empty()) throw std::runtime_error("no queue seeds under " + a.corpus);
  const auto r = replay::replay(program, corpus, rc);
  const auto j = bench::replay_report(r, rc, a.program);
  write_json(fs::path(g.out) / "replay.json", j);
  if (g.json) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::printf("%s: %llu execs, N_e^m=%llu, N_B^m=%zu\n", a.pattern.c_str(),
                static_cast<unsigned long long>(r.executions), static_cast<unsigned long long>(r.violating_executions),
                r.bugs.size());
    for (const auto& b : r.bugs) {
      std::printf("  %s (first at %llu, %llu hits)\n", b.key.c_str(), static_cast<unsigned long long>(b.first_exposure),
                  static_cast<unsigned long long>(b.exposures));
    }
  }
  return 0;
}

struct BenchArgs {
  std::string benchmark;
  std::uint32_t runs = 5;
  std::vector<std::string> modes = kModes;
  std::optional<std::uint64_t> budget;
  std::optional<std::uint64_t> replay_budget;
  std::string pattern = "p2";
  std::uint32_t workers = 4;
};

void print_table(const Globals& g, const json& table) {
  if (g.json) {
    std::cout << table.dump(2) << "\n";
  } else {
    std::cout << bench::format_table(table);
  }
}

int cmd_bench(const Globals& g, const BenchArgs& a) {
  const auto c = bench::load_case(a.benchmark);
  bench::BenchOptions o;
  o.modes.clear();
  for (const auto& m : a.modes) o.modes.push_back(mode_or_throw(m));
  o.runs = a.runs;
  o.master_seed = g.master_seed;
  o.budget_execs = a.budget;
  o.replay_execs = a.replay_budget;
  o.pattern = a.pattern == "p1" ? replay::Pattern::P1 : replay::Pattern::P2;
  o.workers = a.workers;
  print_table(g, bench::run_bench(c, o, fs::path(g.out) / "bench" / c.name));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Thread-aware grey-box fuzzer for mtir programs"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--master-seed", g.master_seed, "Seed for every random stream")->envname("THREADFUZZ_MASTER_SEED");
  app.add_option("--out", g.out, "Output directory")->envname("THREADFUZZ_OUT");
  app.add_flag("--json", g.json, "Print the JSON report instead of a summary")->envname("THREADFUZZ_JSON");

  std::string program, mode = "muzz";
  analysis::PlanParams params;
  auto* analyze = app.add_subcommand("analyze", "Static scope and instrumentation plan");
  analyze->add_option("--program", program, "mtir file")->required();
  analyze->add_option("--mode", mode, "muzz|mafl|afl")->check(CLI::IsMember(kModes));
  analyze->add_option("--ps0", params.selective_bound, "Selective instrumentation bound")->check(CLI::Range(0.0, 1.0));
  analyze->add_option("--pm0", params.interleaving_bound, "Interleaving instrumentation bound")->check(CLI::Range(0.0, 1.0));

  FuzzArgs fa;
  auto* fuzz_cmd = app.add_subcommand("fuzz", "Run a fuzzing campaign");
  fuzz_cmd->add_option("--program", fa.program, "mtir file")->required();
  fuzz_cmd->add_option("--mode", fa.mode, "muzz|mafl|afl")->check(CLI::IsMember(kModes));
  fuzz_cmd->add_option("--budget-execs", fa.budget, "Execution budget");
  fuzz_cmd->add_option("--budget-seconds", fa.seconds, "Wall-clock budget (not reproducible)")->check(CLI::PositiveNumber);
  fuzz_cmd->add_option("--seeds", fa.seeds_dir, "Directory of initial seed files")->check(CLI::ExistingDirectory);
  fuzz_cmd->add_option("--seed-hex", fa.seed_hex, "Initial seed as hex (repeatable)");
  fuzz_cmd->add_option("--resume", fa.resume, "Earlier --out directory whose queue to continue")->check(CLI::ExistingDirectory);
  fuzz_cmd->add_option("--workers", fa.workers, "Evaluation threads")->check(CLI::Range(1, 256));
  fuzz_cmd->add_option("--n0", fa.n0, "Base repetitions per seed")->check(CLI::Range(1, 1 << 16));
  fuzz_cmd->add_option("--nv", fa.nv, "Repetition bonus cap")->check(CLI::Range(0, 1 << 16));
  fuzz_cmd->add_option("--max-steps", fa.max_steps, "Step budget per execution")->check(CLI::PositiveNumber);

  ReplayArgs ra;
  auto* replay_cmd = app.add_subcommand("replay", "Replay a queue under the concurrency-bug detectors");
  replay_cmd->add_option("--program", ra.program, "mtir file")->required();
  replay_cmd->add_option("--corpus", ra.corpus, "Corpus directory (with queue/)")->required()->check(CLI::ExistingDirectory);
  replay_cmd->add_option("--pattern", ra.pattern, "p1|p2")->check(CLI::IsMember({"p1", "p2"}));
  replay_cmd->add_option("--budget-execs", ra.budget, "Execution budget");
  replay_cmd->add_flag("--afl-corpus", ra.afl_corpus, "Corpus came from an AFL-mode campaign");
  replay_cmd->add_option("--ground-truth", ra.ground_truth, "Violation key to time (repeatable)");
  replay_cmd->add_option("--manifest", ra.manifest, "Benchmark manifest supplying ground truth")->check(CLI::ExistingFile);

  BenchArgs ba;
  auto* bench_cmd = app.add_subcommand("bench", "Compare modes over repeated campaigns on a benchmark");
  bench_cmd->add_option("--benchmark", ba.benchmark, "Benchmark directory (with manifest.json)")
      ->required()
      ->check(CLI::ExistingDirectory);
  bench_cmd->add_option("--runs", ba.runs, "Campaigns per mode")->check(CLI::Range(1, 1000));
  bench_cmd->add_option("--modes", ba.modes, "Subset of muzz,mafl,afl")->delimiter(',')->check(CLI::IsMember(kModes));
  bench_cmd->add_option("--budget-execs", ba.budget, "Per-campaign budget (default: manifest)");
  bench_cmd->add_option("--replay-execs", ba.replay_budget, "Per-replay budget (default: manifest)");
  bench_cmd->add_option("--pattern", ba.pattern, "Replay pattern p1|p2")->check(CLI::IsMember({"p1", "p2"}));
  bench_cmd->add_option("--workers", ba.workers, "Evaluation threads per campaign")->check(CLI::Range(1, 256));

  std::string report_dir;
  auto* report_cmd = app.add_subcommand("report", "Re-aggregate the raw artifacts of a bench run");
  report_cmd->add_option("--dir", report_dir, "Directory written by bench")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*analyze) return cmd_analyze(g, program, mode, params);
    if (*fuzz_cmd) return cmd_fuzz(g, fa);
    if (*replay_cmd) return cmd_replay(g, ra);
    if (*bench_cmd) return cmd_bench(g, ba);
    if (*report_cmd) {
      print_table(g, bench::aggregate_dir(report_dir));
      return 0;
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
