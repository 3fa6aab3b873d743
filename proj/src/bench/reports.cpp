#include <stdexcept>

#include "threadfuzz/bench.hpp"

namespace threadfuzz::bench {

namespace {

json sites(const ir::Program& p, const std::set<ir::InstrId>& ids) {
  json out = json::array();
  for (const auto& id : ids) out.push_back(p.describe(id));
  return out;
}

json function_names(const ir::Program& p, const std::set<std::uint32_t>& fns) {
  json out = json::array();
  for (auto f : fns) out.push_back(p.functions[f].name);
  return out;
}

json crash_json(const fuzz::CrashRecord& c) {
  return {{"key", c.key},
          {"tag", c.tag},
          {"frames", c.frames},
          {"is_mt", c.is_mt},
          {"found_at", c.found_at},
          {"schedule_seed", c.schedule_seed},
          {"hits", c.hits},
          {"input_hex", to_hex(c.input)},
          {"dir", fuzz::crash_dir_name(c.key)}};
}

}  // namespace

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static const char* kDigits = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s += kDigits[b >> 4];
    s += kDigits[b & 15];
  }
  return s;
}

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2) throw std::invalid_argument("odd-length hex string");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw std::invalid_argument(std::string("bad hex digit '") + c + "'");
  };
  Bytes out;
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(nibble(hex[i]) << 4 | nibble(hex[i + 1])));
  }
  return out;
}

json analysis_report(const ir::Program& program, const std::string& program_path,
                     const analysis::StaticAnalysis& a, const analysis::InstrumentationPlan& plan) {
  json j;
  j["kind"] = "analysis";
  j["program"] = program_path;
  j["mode"] = analysis::to_string(plan.mode);
  j["plan_seed"] = plan.rng_seed;
  j["params"] = {{"selective_bound", plan.params.selective_bound},
                 {"interleaving_bound", plan.params.interleaving_bound}};
  std::size_t blocks = 0;
  for (const auto& f : program.functions) blocks += f.blocks.size();
  j["instruction_count"] = program.instruction_count();
  j["block_count"] = blocks;

  json fns = json::array();
  for (const auto& f : plan.audit) {
    fns.push_back({{"name", f.name},
                   {"edges", f.edges},
                   {"blocks", f.blocks},
                   {"complexity", f.complexity},
                   {"p_cc", f.p_cc},
                   {"p_s", f.p_s},
                   {"block_p_m", f.block_p_m},
                   {"block_in_scope", f.block_in_scope}});
  }
  j["functions"] = fns;

  json shared = json::array();
  for (const auto& v : a.sets.shared_vars) shared.push_back(v);
  j["thread_sets"] = {{"fork_sites", sites(program, a.sets.fork_sites)},
                      {"join_sites", sites(program, a.sets.join_sites)},
                      {"lock_sites", sites(program, a.sets.lock_sites)},
                      {"unlock_sites", sites(program, a.sets.unlock_sites)},
                      {"shared_vars", shared},
                      {"forked_functions", function_names(program, a.sets.forked_functions)},
                      {"concurrent_functions", function_names(program, a.sets.concurrent_functions)}};
  j["scope"] = sites(program, a.scope.instructions);
  j["scope_size"] = a.scope.size();
  j["interleaving_points"] = analysis::interleaving_points(program, a.sets);

  json deps = json::array();
  for (const auto& [id, label] : plan.deputies) deps.push_back({{"site", program.describe(id)}, {"label", label}});
  j["deputies"] = deps;
  j["deputy_count"] = plan.deputy_count();
  j["labels_distinct"] = plan.labels_distinct;
  return j;
}

json campaign_report(const fuzz::CampaignReport& r, const std::string& program_path) {
  const auto& c = r.config;
  json j;
  j["kind"] = "campaign";
  j["program"] = program_path;
  j["config"] = {{"mode", fuzz::to_string(c.mode)},
                 {"master_seed", c.master_seed},
                 {"n0", c.n0},
                 {"nv", c.nv},
                 {"budget_execs", c.budget_execs},
                 {"budget_seconds", c.budget_seconds ? json(*c.budget_seconds) : json(nullptr)},
                 {"workers", c.workers},
                 {"selection", {{"p_ynt", c.selection.p_ynt}, {"p_ynn", c.selection.p_ynn}, {"p_nnn", c.selection.p_nnn}}},
                 {"plan",
                  {{"selective_bound", c.plan_params.selective_bound},
                   {"interleaving_bound", c.plan_params.interleaving_bound}}},
                 {"mutation",
                  {{"k", c.mutation_k}, {"min", c.mutation_min}, {"max", c.mutation_max}, {"max_len", c.mutation.max_len}}},
                 {"max_steps", c.scheduler.max_steps}};
  j["deputy_count"] = r.deputy_count;
  j["executions"] = r.executions;
  j["cycles"] = r.cycles;
  j["hangs"] = r.hangs;
  j["context_consults"] = r.context_consults;
  j["metrics"] = {{"n_all", r.n_all},   {"n_mt", r.n_mt}, {"mt_ratio", r.mt_ratio()},
                  {"n_c", r.n_c},       {"n_c_m", r.n_c_m}, {"n_c_s", r.n_c_s}};
  json mt = json::array(), st = json::array();
  for (const auto& crash : r.crashes) (crash.is_mt ? mt : st).push_back(crash_json(crash));
  j["vulnerabilities"] = {{"multithreaded", mt}, {"single_threaded", st}};
  json queue = json::array();
  for (const auto& s : r.queue) {
    queue.push_back({{"id", s.id},
                     {"file", fuzz::seed_file_name(s.id)},
                     {"parent", s.parent ? json(*s.parent) : json(nullptr)},
                     {"initial", s.initial},
                     {"length", s.bytes.size()},
                     {"is_mt", s.is_mt},
                     {"c_m", s.c_m},
                     {"n_c", s.n_c},
                     {"discovered_at", s.discovered_at},
                     {"covered_new_trace", s.covered_new_trace},
                     {"covered_new_mt_ctx", s.covered_new_mt_ctx},
                     {"schedule_seed", s.schedule_seed}});
  }
  j["queue"] = queue;
  j["next_id"] = r.next_id;
  j["timing"] = {{"wall_seconds", r.wall_seconds}};
  return j;
}

json replay_report(const replay::ReplayReport& r, const replay::ReplayConfig& config, const std::string& program_path) {
  json j;
  j["kind"] = "replay";
  j["program"] = program_path;
  j["pattern"] = replay::to_string(r.pattern);
  j["budget"] = r.budget;
  j["master_seed"] = config.master_seed;
  j["n0"] = config.n0;
  j["afl_corpus"] = config.afl_corpus;
  j["executions"] = r.executions;
  j["violating_executions"] = r.violating_executions;
  j["n_b_m"] = r.bugs.size();
  j["violations_by_kind"] = r.violations_by_kind;
  json bugs = json::array();
  for (const auto& b : r.bugs) {
    bugs.push_back({{"key", b.key},
                    {"kind", replay::to_string(b.kind)},
                    {"sites", b.sites},
                    {"var", b.var},
                    {"first_exposure", b.first_exposure},
                    {"exposures", b.exposures},
                    {"first_seed", b.first_seed},
                    {"schedule_seed", b.schedule_seed}});
  }
  j["bugs"] = bugs;
  json per_seed = json::array();
  for (const auto& [id, n] : r.executions_per_seed) per_seed.push_back({{"id", id}, {"executions", n}});
  j["executions_per_seed"] = per_seed;
  j["ground_truth"] = config.ground_truth;
  j["time_to_expose_all"] = r.time_to_expose_all ? json(*r.time_to_expose_all) : json(nullptr);
  j["timing"] = {{"wall_seconds", r.wall_seconds}};
  return j;
}

json without_timing(json j) {
  if (j.is_object()) {
    j.erase("timing");
    for (auto& [k, v] : j.items()) v = without_timing(v);
  } else if (j.is_array()) {
    for (auto& v : j) v = without_timing(v);
  }
  return j;
}

}  // namespace threadfuzz::bench
