#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "threadfuzz/bench.hpp"

namespace threadfuzz::bench {

namespace fs = std::filesystem;

namespace {

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return json::parse(in);
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

std::vector<Bytes> hex_list(const json& j) {
  std::vector<Bytes> out;
  for (const auto& s : j) out.push_back(from_hex(s.get<std::string>()));
  return out;
}

json hex_array(const std::vector<Bytes>& v) {
  json out = json::array();
  for (const auto& b : v) out.push_back(to_hex(b));
  return out;
}

}  // namespace

BenchmarkCase load_case(const fs::path& dir) {
  const json j = read_json(dir / "manifest.json");
  BenchmarkCase c;
  c.dir = dir;
  c.name = j.at("name").get<std::string>();
  c.program_file = j.at("program").get<std::string>();
  c.initial_seeds = hex_list(j.at("initial_seeds_hex"));
  c.expected_scope = j.at("expected_scope").get<std::vector<std::string>>();
  if (j.contains("interleaving_points")) c.interleaving_points = j["interleaving_points"].get<std::size_t>();
  for (const auto& pc : j.at("planted_crashes")) {
    c.planted_crashes.push_back({pc.at("key").get<std::string>(), pc.at("concurrency_dependent").get<bool>()});
  }
  c.planted_violations = j.at("planted_violations").get<std::vector<std::string>>();
  c.witness_inputs = hex_list(j.at("witness_inputs_hex"));
  c.fuzz_budget = j.at("budgets").at("fuzz_execs").get<std::uint64_t>();
  c.replay_budget = j.at("budgets").at("replay_execs").get<std::uint64_t>();
  return c;
}

json case_json(const BenchmarkCase& c) {
  json pcs = json::array();
  for (const auto& pc : c.planted_crashes) pcs.push_back({{"key", pc.key}, {"concurrency_dependent", pc.concurrency_dependent}});
  json j = {{"name", c.name},
            {"program", c.program_file},
            {"initial_seeds_hex", hex_array(c.initial_seeds)},
            {"expected_scope", c.expected_scope},
            {"planted_crashes", pcs},
            {"planted_violations", c.planted_violations},
            {"witness_inputs_hex", hex_array(c.witness_inputs)},
            {"budgets", {{"fuzz_execs", c.fuzz_budget}, {"replay_execs", c.replay_budget}}}};
  if (c.interleaving_points) j["interleaving_points"] = *c.interleaving_points;
  return j;
}

std::vector<fs::path> list_cases(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

json aggregate(const std::vector<std::pair<json, json>>& artifacts, const BenchmarkCase* planted) {
  json rows = json::array();
  std::map<std::string, std::vector<json>> by_mode;
  std::vector<std::string> mode_order;
  for (const auto& [campaign, rep] : artifacts) {
    const auto& m = campaign.at("metrics");
    std::set<std::string> crash_keys;
    for (const auto& part : {"multithreaded", "single_threaded"}) {
      for (const auto& v : campaign.at("vulnerabilities").at(part)) crash_keys.insert(v.at("key").get<std::string>());
    }
    json found = json::array();
    if (planted) {
      for (const auto& pc : planted->planted_crashes) {
        if (crash_keys.count(pc.key)) found.push_back(pc.key);
      }
    }
    json bugs = json::array();
    for (const auto& b : rep.at("bugs")) bugs.push_back(b.at("key"));
    const std::string mode = campaign.at("config").at("mode").get<std::string>();
    json row = {{"mode", mode},
                {"master_seed", campaign.at("config").at("master_seed")},
                {"executions", campaign.at("executions")},
                {"n_all", m.at("n_all")},
                {"n_mt", m.at("n_mt")},
                {"mt_ratio", m.at("mt_ratio")},
                {"n_c", m.at("n_c")},
                {"n_c_m", m.at("n_c_m")},
                {"n_c_s", m.at("n_c_s")},
                {"n_e_m", rep.at("violating_executions")},
                {"n_b_m", rep.at("n_b_m")},
                {"planted_crashes_found", found},
                {"bugs", bugs}};
    if (!by_mode.count(mode)) mode_order.push_back(mode);
    by_mode[mode].push_back(row);
    rows.push_back(row);
  }

  json medians = json::array();
  std::map<std::string, double> median_ratio;
  for (const auto& mode : mode_order) {
    auto col = [&](const char* field) {
      std::vector<double> v;
      for (const auto& r : by_mode[mode]) v.push_back(r.at(field).get<double>());
      return median(v);
    };
    median_ratio[mode] = col("mt_ratio");
    medians.push_back({{"mode", mode},
                       {"runs", by_mode[mode].size()},
                       {"n_mt", col("n_mt")},
                       {"mt_ratio", col("mt_ratio")},
                       {"n_c_m", col("n_c_m")},
                       {"n_b_m", col("n_b_m")}});
  }

  json checks = json::array();
  if (median_ratio.count("muzz") && median_ratio.count("mafl") && median_ratio.count("afl")) {
    const double mu = median_ratio["muzz"], ma = median_ratio["mafl"], af = median_ratio["afl"];
    checks.push_back({{"name", "mt-ratio order muzz >= mafl >= afl"}, {"pass", mu >= ma && ma >= af}});
    checks.push_back({{"name", "mt-ratio gap muzz - afl >= 0.05"}, {"pass", mu - af >= 0.05}});
  }
  if (planted && by_mode.count("muzz") && by_mode.count("afl")) {
    for (const auto& pc : planted->planted_crashes) {
      if (!pc.concurrency_dependent) continue;
      auto hits = [&](const std::string& mode) {
        std::size_t n = 0;
        for (const auto& r : by_mode[mode]) {
          for (const auto& k : r.at("planted_crashes_found")) n += k == pc.key;
        }
        return n;
      };
      const std::size_t runs = by_mode["muzz"].size();
      const std::size_t mu = hits("muzz"), af = hits("afl");
      checks.push_back({{"name", "planted crash " + pc.key + ": muzz in >= 80% of runs, afl in fewer"},
                        {"muzz_runs", mu},
                        {"afl_runs", af},
                        {"pass", mu * 5 >= runs * 4 && af < mu}});
    }
  }
  return {{"kind", "bench"},
          {"case", planted ? json(planted->name) : json(nullptr)},
          {"rows", rows},
          {"medians", medians},
          {"checks", checks}};
}

json run_bench(const BenchmarkCase& c, const BenchOptions& o, const fs::path& out) {
  const auto program = ir::load_program_file(c.program_path().string());
  fs::create_directories(out);
  write_json(out / "manifest.json", case_json(c));
  std::vector<fuzz::InitialSeed> seeds;
  for (const auto& s : c.initial_seeds) seeds.push_back({s, std::nullopt});

  std::vector<std::pair<json, json>> artifacts;
  for (auto mode : o.modes) {
    for (std::uint32_t r = 0; r < o.runs; ++r) {
      fuzz::FuzzConfig cfg;
      cfg.mode = mode;
      cfg.master_seed = o.master_seed + r;
      cfg.budget_execs = o.budget_execs.value_or(c.fuzz_budget);
      cfg.workers = o.workers;
      const auto campaign = fuzz::fuzz_campaign(program, cfg, seeds);

      replay::ReplayConfig rc;
      rc.pattern = o.pattern;
      rc.budget_execs = o.replay_execs.value_or(c.replay_budget);
      rc.master_seed = cfg.master_seed;
      rc.n0 = cfg.n0;
      rc.afl_corpus = mode == fuzz::Mode::Afl;
      rc.ground_truth = c.planted_violations;
      std::vector<replay::ReplaySeed> corpus;
      for (const auto& s : campaign.queue) corpus.push_back({s.id, s.bytes, s.n_c});
      const auto rep = replay::replay(program, corpus, rc);

      const auto dir = out / fuzz::to_string(mode) / ("run_" + std::to_string(r));
      fs::create_directories(dir);
      auto cj = campaign_report(campaign, c.program_path().string());
      auto rj = replay_report(rep, rc, c.program_path().string());
      write_json(dir / "campaign.json", cj);
      write_json(dir / "replay.json", rj);
      artifacts.emplace_back(std::move(cj), std::move(rj));
    }
  }
  auto table = aggregate(artifacts, &c);
  write_json(out / "bench.json", table);
  return table;
}

json aggregate_dir(const fs::path& out) {
  std::optional<BenchmarkCase> planted;
  if (fs::exists(out / "manifest.json")) planted = load_case(out);
  std::vector<std::pair<json, json>> artifacts;
  for (const auto* mode : {"muzz", "mafl", "afl"}) {
    const auto mdir = out / mode;
    if (!fs::exists(mdir)) continue;
    std::vector<std::pair<int, fs::path>> runs;
    for (const auto& e : fs::directory_iterator(mdir)) {
      const auto name = e.path().filename().string();
      if (e.is_directory() && name.rfind("run_", 0) == 0) runs.emplace_back(std::stoi(name.substr(4)), e.path());
    }
    std::sort(runs.begin(), runs.end());
    for (const auto& [r, dir] : runs) artifacts.emplace_back(read_json(dir / "campaign.json"), read_json(dir / "replay.json"));
  }
  if (artifacts.empty()) throw std::runtime_error("no campaign artifacts under " + out.string());
  return aggregate(artifacts, planted ? &*planted : nullptr);
}

std::string format_table(const json& t) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %12s %8s %8s %9s %6s %6s %6s\n", "mode", "seed", "N_all", "N_mt", "N_mt/N_all",
                "N_c^m", "N_B^m", "N_e^m");
  os << line;
  for (const auto& r : t.at("rows")) {
    std::snprintf(line, sizeof line, "%-6s %12llu %8llu %8llu %9.3f %6llu %6llu %6llu\n",
                  r.at("mode").get<std::string>().c_str(), r.at("master_seed").get<unsigned long long>(),
                  r.at("n_all").get<unsigned long long>(), r.at("n_mt").get<unsigned long long>(),
                  r.at("mt_ratio").get<double>(), r.at("n_c_m").get<unsigned long long>(),
                  r.at("n_b_m").get<unsigned long long>(), r.at("n_e_m").get<unsigned long long>());
    os << line;
  }
  for (const auto& m : t.at("medians")) {
    std::snprintf(line, sizeof line, "%-6s %12s %8s %8.1f %9.3f %6.1f %6.1f\n", m.at("mode").get<std::string>().c_str(),
                  "median", "", m.at("n_mt").get<double>(), m.at("mt_ratio").get<double>(), m.at("n_c_m").get<double>(),
                  m.at("n_b_m").get<double>());
    os << line;
  }
  for (const auto& c : t.at("checks")) {
    os << (c.at("pass").get<bool>() ? "PASS " : "FAIL ") << c.at("name").get<std::string>() << "\n";
  }
  return os.str();
}

}  // namespace threadfuzz::bench
