#include <map>
#include <memory>
#include <set>

#include "doctest.h"
#include "enumerator.hpp"
#include "fixtures.hpp"
#include "threadfuzz/executor.hpp"

using namespace threadfuzz;
using namespace threadfuzz::vm;

namespace {

struct Built {
  ir::Program program;
  analysis::InstrumentationPlan plan;
  InstrumentedProgram target;
};

std::unique_ptr<Built> build(ir::Program p, analysis::InstrumentationMode mode = analysis::InstrumentationMode::Muzz,
                             std::uint64_t seed = 1) {
  auto b = std::make_unique<Built>();
  b->program = std::move(p);
  const auto a = analysis::analyze_program(b->program);
  b->plan = analysis::plan_instrumentation(b->program, a.scope, mode, seed);
  b->target = InstrumentedProgram(b->program, b->plan);
  return b;
}

std::unique_ptr<Built> build_text(const std::string& text) { return build(ir::parse_program(text)); }

std::vector<std::uint8_t> bytes(std::initializer_list<int> v) { return {v.begin(), v.end()}; }

// "F" passes fig1's check; 0x90 makes s_var non-negative.
const std::vector<std::uint8_t> kFig1Input = bytes({'F', 0x90});

std::int64_t global_value(const ir::Program& p, const ExecutionResult& r, const std::string& name) {
  return r.final_globals[*p.find_global(name)];
}

}  // namespace

TEST_CASE("single-threaded run has an empty context signature") {
  auto b = build_text("global g = 0\nmutex 0\nfn main { b0: lock 0; store g = 1; unlock 0; exit 7 }");
  const auto r = execute(b->target, {}, {});
  CHECK(r.status.kind == ExitKind::Exit);
  CHECK(r.status.code == 7);
  CHECK_FALSE(r.is_mt);
  CHECK(r.s_ctx.empty());
  CHECK(r.threads_forked == 0);
  CHECK(r.steps_executed == 4);
}

TEST_CASE("mutual lock wait is a deadlock") {
  auto b = build_text(
      "mutex 0\nmutex 1\n"
      "fn main { b0: t = fork a(0); u = fork c(0); join t; join u; exit 0 }\n"
      "fn a(x) { b0: lock 0; nop; nop; lock 1; unlock 1; unlock 0; ret }\n"
      "fn c(x) { b0: lock 1; nop; nop; lock 0; unlock 0; unlock 1; ret }");
  const auto res = testing::enumerate_interleavings(b->target, {});
  std::set<ExitKind> kinds;
  for (const auto& o : res.outcomes) kinds.insert(o.kind);
  CHECK(kinds.count(ExitKind::Deadlock) == 1);
  bool seen = false;
  for (std::uint64_t s = 0; s < 200 && !seen; ++s) {
    SchedulerConfig cfg;
    cfg.schedule_rng_seed = s;
    const auto r = execute(b->target, {}, cfg);
    if (r.status.kind == ExitKind::Deadlock) {
      seen = true;
      CHECK(r.status.blocked.size() == 3);
    }
  }
  CHECK(seen);
}

TEST_CASE("fig1 final g_var is 2 or 4 and both occur") {
  auto b = build(testing::load_benchmark("fig1"));
  const auto exhaustive = testing::enumerate_interleavings(b->target, kFig1Input);
  CHECK_FALSE(exhaustive.truncated);
  std::set<std::int64_t> enumerated;
  const auto g = *b->program.find_global("g_var");
  for (const auto& s : exhaustive.final_globals) enumerated.insert(s[g]);
  CHECK(enumerated == std::set<std::int64_t>{2, 4});

  std::set<std::int64_t> sampled;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    SchedulerConfig cfg;
    cfg.schedule_rng_seed = s;
    sampled.insert(global_value(b->program, execute(b->target, kFig1Input, cfg), "g_var"));
  }
  CHECK(sampled == std::set<std::int64_t>{2, 4});
}

TEST_CASE("execution is deterministic for a fixed schedule seed") {
  auto b = build(testing::load_benchmark("fig1"));
  for (std::uint64_t s = 0; s < 50; ++s) {
    SchedulerConfig cfg;
    cfg.schedule_rng_seed = s;
    cfg.record_trace = true;
    const auto r1 = execute(b->target, kFig1Input, cfg);
    const auto r2 = execute(b->target, kFig1Input, cfg);
    CHECK(r1.status == r2.status);
    CHECK(r1.coverage == r2.coverage);
    CHECK(r1.s_ctx == r2.s_ctx);
    CHECK(r1.trace == r2.trace);
    CHECK(r1.final_globals == r2.final_globals);
  }
}

TEST_CASE("crash records") {
  SUBCASE("division by zero with backtrace") {
    auto b = build_text("fn main { b0: call f(0); exit 0 }\nfn f(x) { b0: nop; y = div 1 x; ret y }");
    const auto r = execute(b->target, {}, {});
    REQUIRE(r.status.kind == ExitKind::Crash);
    CHECK(r.status.tag == "div-by-zero");
    REQUIRE(r.status.backtrace.size() == 2);
    CHECK(r.status.backtrace[0].function == "f");
    CHECK(r.status.backtrace[0].index == 1);
    CHECK(r.status.backtrace[1].function == "main");
    CHECK(r.status.backtrace[1].index == 0);
  }
  SUBCASE("crash opcode") {
    auto b = build_text("fn main { b0: crash \"overflow\" }");
    const auto r = execute(b->target, {}, {});
    CHECK(r.status.tag == "overflow");
  }
  SUBCASE("undeclared global") {
    auto b = build_text("fn main { b0: x = load nothing; exit x }");
    CHECK(execute(b->target, {}, {}).status.tag == "undeclared-global");
  }
  SUBCASE("unlock of a free mutex") {
    // The analysis rejects this program, so run it uninstrumented.
    const auto p = ir::parse_program("mutex 0\nfn main { b0: call u(); exit 0 }\nfn u { b0: unlock 0; ret }");
    const InstrumentedProgram target(p, analysis::InstrumentationPlan{});
    CHECK(execute(target, {}, {}).status.tag == "bad-unlock");
  }
  SUBCASE("join of an unknown handle") {
    auto b = build_text("fn main { b0: join 5; exit 0 }");
    CHECK(execute(b->target, {}, {}).status.tag == "bad-join");
  }
}

TEST_CASE("step budget exhaustion is a hang") {
  auto b = build_text("fn main { b0: jmp b0 }");
  SchedulerConfig cfg;
  cfg.max_steps = 1000;
  const auto r = execute(b->target, {}, cfg);
  CHECK(r.status.kind == ExitKind::StepBudgetExhausted);
  CHECK(r.steps_executed == 1000);
  CHECK(r.hung());
}

TEST_CASE("input bytes and length") {
  auto b = build_text("fn main { b0: a = input 1; b = input 9; n = inputlen; x = mul a 100; y = add x n; z = add y b; exit z }");
  const auto r = execute(b->target, bytes({1, 2, 3}), {});
  CHECK(r.status.code == 203);
}

TEST_CASE("arithmetic wraps") {
  auto b = build_text("fn main { b0: x = const 9223372036854775807; y = add x 1; z = lt y 0; exit z }");
  CHECK(execute(b->target, {}, {}).status.code == 1);
}

TEST_CASE("context hashing") {
  CHECK(hash_context({}) == kFnvOffsetBasis);
  // Independent byte-wise FNV-1a over loc=0x0102, nctx=3.
  const std::uint8_t raw[] = {0x02, 0x01, 0x03, 0x00, 0x00, 0x00};
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto c : raw) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  const ContextEvent ev{0x0102, 3};
  CHECK(hash_context(std::span<const ContextEvent>(&ev, 1)) == h);
}

TEST_CASE("context events use the last deputy before the call site, or 0") {
  auto b = build_text(
      "mutex 0\nglobal g = 0\n"
      "fn main { b0: t = fork w(0); join t; exit 0 }\n"
      "fn w(x) { b0: lock 0; store g = 1; unlock 0; ret }");
  // Hand-made plan: only w's store is a deputy.
  analysis::InstrumentationPlan plan;
  const auto w = *b->program.find_function("w");
  plan.deputies[ir::InstrId{w, 0, 1}] = 0x1234;
  const InstrumentedProgram target(b->program, plan);
  const auto r = execute(target, {}, {});
  REQUIRE(r.is_mt);
  REQUIRE(r.context_events[0].size() == 1);
  CHECK(r.context_events[0][0] == ContextEvent{0, 1});
  REQUIRE(r.context_events[1].size() == 1);
  CHECK(r.context_events[1][0] == ContextEvent{0x1234, 1});
  REQUIRE(r.context_events[2].size() == 1);
  CHECK(r.context_events[2][0] == ContextEvent{0, 0});
  CHECK(r.s_ctx.lock == hash_context(r.context_events[0]));
}

TEST_CASE("distinct signatures") {
  std::vector<ExecutionResult> rs(8);
  for (auto& r : rs) {
    r.is_mt = true;
    r.s_ctx.lock = 1;
  }
  CHECK(distinct_signatures(rs) == 1);
  rs[1].s_ctx.lock = 2;
  rs[2].s_ctx.join = 3;
  CHECK(distinct_signatures(rs) == 3);
  rs[3].is_mt = false;
  rs[3].s_ctx.lock = 99;
  CHECK(distinct_signatures(rs) == 3);
}

TEST_CASE("fig1 shows at least two contexts over 40 schedule seeds") {
  auto b = build(testing::load_benchmark("fig1"));
  std::vector<ExecutionResult> rs;
  for (std::uint64_t s = 0; s < 40; ++s) {
    SchedulerConfig cfg;
    cfg.schedule_rng_seed = s;
    rs.push_back(execute(b->target, kFig1Input, cfg));
  }
  CHECK(distinct_signatures(rs) >= 2);
}

TEST_CASE("coverage equals a per-thread recomputation from the trace") {
  auto b = build(testing::load_benchmark("fig1"), analysis::InstrumentationMode::Muzz, 3);
  for (std::uint64_t s = 0; s < 30; ++s) {
    SchedulerConfig cfg;
    cfg.schedule_rng_seed = s;
    cfg.record_trace = true;
    const auto r = execute(b->target, kFig1Input, cfg);
    std::map<std::uint32_t, std::uint16_t> prev;
    std::map<std::uint16_t, int> counts;
    for (const auto& e : r.trace) {
      const auto it = b->plan.deputies.find(e.site);
      if (it == b->plan.deputies.end()) continue;
      const std::uint16_t slot = static_cast<std::uint16_t>((prev[e.nctx] >> 1) ^ it->second);
      counts[slot] = std::min(counts[slot] + 1, 255);
      prev[e.nctx] = it->second;
    }
    for (std::size_t slot = 0; slot < kMapSize; ++slot) {
      const auto it = counts.find(static_cast<std::uint16_t>(slot));
      CHECK(r.coverage.at(slot) == (it == counts.end() ? 0 : it->second));
    }
  }
}

TEST_CASE("schedule intervention does not reduce context diversity on fig1") {
  auto b = build(testing::load_benchmark("fig1"));
  int wins = 0;
  for (int rep = 0; rep < 5; ++rep) {
    std::set<ContextSignature> on, off;
    for (std::uint64_t s = 0; s < 1000; ++s) {
      SchedulerConfig cfg;
      cfg.schedule_rng_seed = rep * 100000 + s;
      on.insert(execute(b->target, kFig1Input, cfg).s_ctx);
      cfg.intervention_enabled = false;
      off.insert(execute(b->target, kFig1Input, cfg).s_ctx);
    }
    if (on.size() >= off.size()) ++wins;
  }
  CHECK(wins >= 4);
}

TEST_CASE("trace dump format") {
  auto b = build_text("global g = 0\nfn main { b0: store g = 2; exit 0 }");
  SchedulerConfig cfg;
  cfg.record_trace = true;
  const auto r = execute(b->target, {}, cfg);
  CHECK(format_trace(b->program, r.trace) == "0,main,b0,0,store,g:w\n0,main,b0,1,exit\n");
}
