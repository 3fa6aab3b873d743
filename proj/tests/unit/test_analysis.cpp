#include <queue>

#include "alg2_oracle.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "program_gen.hpp"
#include "threadfuzz/analysis.hpp"

using namespace threadfuzz;
using namespace threadfuzz::analysis;
using threadfuzz::testing::id_of;

namespace {

std::set<std::string> describe_all(const ir::Program& p, const std::set<InstrId>& ids) {
  std::set<std::string> out;
  for (const auto& id : ids) out.insert(p.describe(id));
  return out;
}

const std::set<std::string> kFig1Scope = {
    "modify:entry:0",  "compute:entry:0", "compute:entry:1", "compute:entry:2", "compute:entry:3",
    "compute:entry:4", "compute:fix:0",   "compute:locked:4", "compute:locked:5",
};

}  // namespace

TEST_CASE("icfg of a straight-line program has no inter-procedural edges") {
  const auto p = ir::parse_program("fn main { b0: x = const 1; y = add x 2; exit y }");
  const auto g = build_icfg(p);
  CHECK(g.node_count() == 3);
  CHECK(g.call_edges.empty());
  CHECK(g.fork_edges.empty());
}

TEST_CASE("icfg of fig1 has the expected call and fork edges") {
  const auto p = testing::load_benchmark("fig1");
  const auto g = build_icfg(p);
  CHECK(g.node_count() == p.instruction_count());
  std::multiset<std::pair<std::string, std::string>> forks, calls;
  for (const auto& e : g.fork_edges) forks.insert({p.functions[e.site.function].name, p.functions[e.callee].name});
  for (const auto& e : g.call_edges) calls.insert({p.functions[e.site.function].name, p.functions[e.callee].name});
  CHECK(forks == std::multiset<std::pair<std::string, std::string>>{{"main", "compute"}, {"main", "compute"}});
  CHECK(calls.count({"check", "modify"}) == 1);
  CHECK(calls.count({"compute", "modify"}) == 2);
  for (const auto& e : g.fork_edges) CHECK(p.at(e.site).op == ir::Opcode::Fork);
}

TEST_CASE("a call inside a loop is one static call edge") {
  const auto p = ir::parse_program(
      "fn main {\nb0:\n  i = const 3\n  jmp loop\nloop:\n  call f()\n  i = sub i 1\n  br i loop done\n"
      "done:\n  exit 0\n}\nfn f { b0: ret }");
  CHECK(build_icfg(p).call_edges.size() == 1);
}

TEST_CASE("thread sets") {
  SUBCASE("no threads") {
    const auto p = ir::parse_program("global g = 0\nfn main { b0: store g = 1; exit 0 }");
    const auto ts = compute_thread_sets(build_icfg(p));
    CHECK(ts.fork_sites.empty());
    CHECK(ts.forked_functions.empty());
    CHECK(ts.shared_vars.empty());
  }
  SUBCASE("fig1") {
    const auto p = testing::load_benchmark("fig1");
    const auto ts = compute_thread_sets(build_icfg(p));
    CHECK(ts.forked_functions == std::set<std::uint32_t>{*p.find_function("compute")});
    CHECK(describe_all(p, ts.lock_sites) == std::set<std::string>{"compute:locked:0"});
    CHECK(describe_all(p, ts.unlock_sites) == std::set<std::string>{"compute:locked:3"});
    CHECK(ts.fork_sites.size() == 2);
    CHECK(ts.join_sites.size() == 2);
    CHECK(ts.shared_vars == std::set<std::string>{"g_var", "s_var"});
  }
  SUBCASE("nested forks") {
    const auto p = ir::parse_program(
        "fn main { b0: t = fork a(0); join t; exit 0 }\nfn a(x) { b0: t = fork b(x); join t; ret }\n"
        "fn b(x) { b0: ret }\nfn c { b0: ret }");
    const auto ts = compute_thread_sets(build_icfg(p));
    CHECK(ts.forked_functions == std::set<std::uint32_t>{1, 2});
    CHECK(ts.concurrent_functions == std::set<std::uint32_t>{1, 2});
  }
}

TEST_CASE("forked-function closure matches a brute-force reachability search") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto p = ir::parse_program(testing::random_program_text(seed));
    const auto ts = compute_thread_sets(build_icfg(p));
    // Oracle: fork targets, plus everything transitively reachable from them.
    std::set<std::uint32_t> forked;
    std::map<std::uint32_t, std::set<std::uint32_t>> out;
    for (std::uint32_t f = 0; f < p.functions.size(); ++f) {
      for (const auto& b : p.functions[f].blocks) {
        for (const auto& i : b.instructions) {
          if (i.op == ir::Opcode::Fork) forked.insert(i.target);
          if (i.op == ir::Opcode::Fork || i.op == ir::Opcode::Call) out[f].insert(i.target);
        }
      }
    }
    std::set<std::uint32_t> reach = forked;
    std::queue<std::uint32_t> q;
    for (auto f : forked) q.push(f);
    while (!q.empty()) {
      auto f = q.front();
      q.pop();
      for (auto g : out[f]) {
        if (reach.insert(g).second) q.push(g);
      }
    }
    CAPTURE(seed);
    CHECK(ts.forked_functions == forked);
    for (auto f : reach) CHECK(ts.concurrent_functions.count(f) == 1);
  }
}

TEST_CASE("fig1 suspicious scope equals the golden set") {
  const auto p = testing::load_benchmark("fig1");
  const auto a = analyze_program(p);
  CHECK(describe_all(p, a.scope.instructions) == kFig1Scope);
  // guarded call, lock and unlock are out
  CHECK_FALSE(a.scope.contains(id_of(p, "compute", "locked", 2)));
  CHECK_FALSE(a.scope.contains(id_of(p, "compute", "locked", 0)));
  CHECK_FALSE(a.scope.contains(id_of(p, "compute", "locked", 3)));
}

TEST_CASE("threads touching no shared variables give an empty scope") {
  const auto p = ir::parse_program(
      "global g = 0\nfn main { b0: t = fork w(1); join t; exit 0 }\nfn w(x) { b0: y = add x 1; ret y }");
  CHECK(analyze_program(p).scope.size() == 0);
}

TEST_CASE("a function used sequentially and concurrently stays in scope") {
  const auto p = ir::parse_program(
      "global g = 0\nfn main { b0: call bump(); t = fork w(0); join t; exit 0 }\n"
      "fn w(x) { b0: call bump(); ret }\nfn bump { b0: store g = add @g 1; ret }");
  const auto a = analyze_program(p);
  CHECK(a.scope.contains(id_of(p, "bump", "b0", 0)));
}

TEST_CASE("read-only functions contribute no scope from their loads") {
  const auto p = ir::parse_program(
      "global g = 0\nfn main { b0: t = fork r(0); u = fork w(0); join t; join u; exit 0 }\n"
      "fn r(x) { b0: v = load g; ret v }\nfn w(x) { b0: store g = 1; ret }");
  const auto a = analyze_program(p);
  CHECK_FALSE(a.scope.contains(id_of(p, "r", "b0", 0)));
  CHECK(a.scope.contains(id_of(p, "w", "b0", 0)));
}

TEST_CASE("main's accesses between fork and join are multithreaded") {
  const auto p = ir::parse_program(
      "global g = 0\nfn main { b0: store g = 1; t = fork w(0); store g = 2; join t; store g = 3; exit 0 }\n"
      "fn w(x) { b0: store g = add @g 1; ret }");
  const auto a = analyze_program(p);
  CHECK_FALSE(a.scope.contains(id_of(p, "main", "b0", 0)));
  CHECK(a.scope.contains(id_of(p, "main", "b0", 2)));
  CHECK_FALSE(a.scope.contains(id_of(p, "main", "b0", 4)));
}

TEST_CASE("unbalanced unlock is reported") {
  const auto p = ir::parse_program("mutex 0\nfn main { b0: unlock 0; exit 0 }");
  CHECK_THROWS_AS(analyze_program(p), UnbalancedLocks);
}

TEST_CASE("held-lock dataflow takes the minimum at joins") {
  const auto p = ir::parse_program(
      "mutex 0\nfn main {\nb0:\n  c = inputlen\n  br c l u\nl:\n  lock 0\n  jmp m\nu:\n  jmp m\nm:\n  nop\n"
      "  exit 0\n}");
  const auto held = held_lock_counts(p.functions[0]);
  CHECK(held[3][0] == 0);
  CHECK(held[1][1] == 1);
}

TEST_CASE("scope soundness on random programs") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto p = ir::parse_program(testing::random_program_text(seed));
    const auto a = analyze_program(p);
    for (const auto& id : a.scope.instructions) {
      CAPTURE(p.describe(id));
      CHECK(a.sets.in_multithreaded_context(id));
      const auto& inst = p.at(id);
      const bool direct = inst.op == ir::Opcode::LoadShared || inst.op == ir::Opcode::StoreShared;
      if (direct) CHECK(a.sets.shared_vars.count(inst.symbol) == 1);
      CHECK(held_lock_counts(p.functions[id.function])[id.block][id.index] == 0);
    }
  }
}

// ---------------------------------------------------------------------------

struct FormulaRow {
  std::size_t e, n, nm, ninstr;
  double p_cc, p_s, p_m;
};

TEST_CASE("probability formulas over a table of tuples") {
  // p_s with P_s0 = 0.5; p_m with P_m0 = 0.33.
  const FormulaRow rows[] = {
      {14, 10, 1, 6, 0.6, 0.5, 0.1},   {30, 10, 2, 4, 1.0, 0.5, 0.33},   {0, 1, 0, 5, 0.1, 0.1, 0.0},
      {0, 1, 1, 1, 0.1, 0.1, 0.1},     {1, 2, 1, 2, 0.1, 0.1, 0.05},     {2, 3, 3, 3, 0.1, 0.1, 0.1},
      {3, 3, 1, 4, 0.2, 0.2, 0.05},    {4, 3, 2, 5, 0.3, 0.3, 0.12},     {5, 3, 1, 1, 0.4, 0.4, 0.33},
      {6, 3, 3, 10, 0.5, 0.5, 0.15},   {7, 3, 0, 3, 0.6, 0.5, 0.0},      {8, 3, 1, 7, 0.7, 0.5, 0.1},
      {9, 3, 1, 2, 0.8, 0.5, 0.33},    {10, 3, 1, 9, 0.9, 0.5, 0.1},     {11, 3, 1, 10, 1.0, 0.5, 0.1},
      {12, 3, 4, 4, 1.0, 0.5, 0.33},   {2, 5, 1, 1, 0.1, 0.1, 0.1},      {0, 4, 2, 4, 0.1, 0.1, 0.05},
      {3, 4, 1, 4, 0.1, 0.1, 0.025},   {100, 5, 1, 3, 1.0, 0.5, 0.33},   {21, 10, 1, 5, 1.0, 0.5, 0.2},
      {13, 10, 2, 8, 0.5, 0.5, 0.125},
  };
  for (const auto& r : rows) {
    CAPTURE(r.e);
    CAPTURE(r.n);
    const double pcc = cyclomatic_probability(r.e, r.n);
    CHECK(pcc == doctest::Approx(r.p_cc).epsilon(1e-12));
    CHECK(selective_probability(pcc) == doctest::Approx(r.p_s).epsilon(1e-12));
    CHECK(interleaving_probability(pcc, r.nm, r.ninstr) == doctest::Approx(r.p_m).epsilon(1e-12));
  }
  CHECK(selective_probability(0.6, 0.9) == 0.6);
  CHECK(selective_probability(0.3) == 0.3);
  CHECK(cyclomatic_complexity(14, 10) == 6);
}

TEST_CASE("probability bounds on random programs") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = ir::parse_program(testing::random_program_text(seed));
    for (const auto& fn : p.functions) {
      const double pcc = cyclomatic_probability(fn);
      CHECK(pcc > 0.0);
      CHECK(pcc <= 1.0);
      const double ps = selective_probability(fn);
      CHECK(ps >= 0.0);
      CHECK(ps <= kDefaultSelectiveBound);
      for (std::uint32_t b = 0; b < fn.blocks.size(); ++b) {
        const double pm = interleaving_probability(fn, b);
        CHECK(pm >= 0.0);
        CHECK(pm <= kDefaultInterleavingBound);
      }
    }
  }
}

TEST_CASE("afl instrumentation keeps exactly the block entries") {
  const auto p = testing::load_benchmark("fig1");
  const auto a = analyze_program(p);
  const auto plan = plan_instrumentation(p, a.scope, InstrumentationMode::Afl, 1);
  std::size_t blocks = 0;
  for (const auto& f : p.functions) blocks += f.blocks.size();
  CHECK(plan.deputy_count() == blocks);
  CHECK(plan.deputy_count() == 9);
  for (const auto& [id, label] : plan.deputies) CHECK(id.index == 0);
}

TEST_CASE("muzz instrumentation is deterministic and keeps scope-block entries") {
  const auto p = testing::load_benchmark("fig1");
  const auto a = analyze_program(p);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p1 = plan_instrumentation(p, a.scope, InstrumentationMode::Muzz, seed);
    const auto p2 = plan_instrumentation(p, a.scope, InstrumentationMode::Muzz, seed);
    CHECK(p1.deputies == p2.deputies);
    CHECK(p1.labels_distinct);
    for (const auto& id : a.scope.instructions) CHECK(p1.is_deputy({id.function, id.block, 0}));
  }
}

TEST_CASE("forced interleaving probability of 1 instruments the whole scope") {
  const auto p = testing::load_benchmark("fig1");
  const auto a = analyze_program(p);
  PlanParams params;
  params.forced_interleaving = 1.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto plan = plan_instrumentation(p, a.scope, InstrumentationMode::Muzz, seed, params);
    for (const auto& id : a.scope.instructions) CHECK(plan.is_deputy(id));
    testing::ReferencePlanInput in;
    in.seed = seed;
    in.forced_pm = 1.0;
    CHECK(plan.deputies == testing::reference_plan(p, a.scope.instructions, in));
  }
}

TEST_CASE("plan matches the reference re-derivation on random programs") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = ir::parse_program(testing::random_program_text(seed));
    const auto a = analyze_program(p);
    for (auto mode : {InstrumentationMode::Muzz, InstrumentationMode::Afl}) {
      const auto plan = plan_instrumentation(p, a.scope, mode, seed * 31 + 7);
      testing::ReferencePlanInput in;
      in.afl = mode == InstrumentationMode::Afl;
      in.seed = seed * 31 + 7;
      CAPTURE(seed);
      CHECK(plan.deputies == testing::reference_plan(p, a.scope.instructions, in));
    }
  }
}

TEST_CASE("raising the bounds never removes a deputy") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = ir::parse_program(testing::random_program_text(seed));
    const auto a = analyze_program(p);
    PlanParams lo, hi_m, hi_s;
    lo.selective_bound = 0.2;
    lo.interleaving_bound = 0.1;
    hi_m = lo;
    hi_m.interleaving_bound = 0.9;
    hi_s = lo;
    hi_s.selective_bound = 0.9;
    const auto base = plan_instrumentation(p, a.scope, InstrumentationMode::Muzz, seed, lo);
    for (const auto& params : {hi_m, hi_s}) {
      const auto more = plan_instrumentation(p, a.scope, InstrumentationMode::Muzz, seed, params);
      for (const auto& [id, label] : base.deputies) CHECK(more.is_deputy(id));
    }
  }
}
