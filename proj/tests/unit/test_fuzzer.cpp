#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "threadfuzz/fuzzer.hpp"

using namespace threadfuzz;
using namespace threadfuzz::fuzz;

namespace {

// Bucket thresholds written out independently of count_class.
std::uint8_t bucket_oracle(unsigned h) {
  const unsigned lo[] = {1, 2, 3, 4, 8, 16, 32, 128};
  if (h == 0) return 0;
  int cls = 0;
  for (int i = 0; i < 8; ++i) {
    if (h >= lo[i]) cls = i;
  }
  return static_cast<std::uint8_t>(1u << cls);
}

bool differs_in_one_bit(const Bytes& a, const Bytes& b) {
  if (a.size() != b.size()) return false;
  int bits = 0;
  for (std::size_t i = 0; i < a.size(); ++i) bits += __builtin_popcount(a[i] ^ b[i]);
  return bits == 1;
}

int differing_bytes(const Bytes& a, const Bytes& b) {
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
  return n;
}

// out == in with one contiguous block of at most kMaxBlock bytes removed.
bool is_block_deletion(const Bytes& in, const Bytes& out) {
  if (out.size() >= in.size() || in.size() - out.size() > kMaxBlock) return false;
  const std::size_t n = in.size() - out.size();
  for (std::size_t pos = 0; pos + n <= in.size(); ++pos) {
    Bytes t = in;
    t.erase(t.begin() + static_cast<std::ptrdiff_t>(pos), t.begin() + static_cast<std::ptrdiff_t>(pos + n));
    if (t == out) return true;
  }
  return false;
}

// out == in with a copy of one of its own blocks inserted somewhere.
bool is_block_duplication(const Bytes& in, const Bytes& out) {
  if (out.size() <= in.size() || out.size() - in.size() > kMaxBlock) return false;
  const std::size_t n = out.size() - in.size();
  for (std::size_t from = 0; from + n <= in.size(); ++from) {
    const Bytes block(in.begin() + static_cast<std::ptrdiff_t>(from), in.begin() + static_cast<std::ptrdiff_t>(from + n));
    for (std::size_t to = 0; to <= in.size(); ++to) {
      Bytes t = in;
      t.insert(t.begin() + static_cast<std::ptrdiff_t>(to), block.begin(), block.end());
      if (t == out) return true;
    }
  }
  return false;
}

// out == a[:i] + b[j:] for some i >= 1 and some pool member b.
bool is_splice(const Bytes& a, const std::vector<Bytes>& pool, const Bytes& out) {
  for (const auto& b : pool) {
    for (std::size_t i = 1; i <= a.size(); ++i) {
      for (std::size_t j = 0; j < std::max<std::size_t>(b.size(), 1); ++j) {
        Bytes t(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(i));
        if (j < b.size()) t.insert(t.end(), b.begin() + static_cast<std::ptrdiff_t>(j), b.end());
        if (t == out) return true;
      }
    }
  }
  return false;
}

bool is_arith(const Bytes& in, const Bytes& out) {
  if (in.size() != out.size()) return false;
  for (std::size_t width : {1u, 2u, 4u}) {
    for (std::size_t pos = 0; pos + width <= in.size(); ++pos) {
      bool outside_same = true;
      for (std::size_t i = 0; i < in.size(); ++i) {
        if ((i < pos || i >= pos + width) && in[i] != out[i]) outside_same = false;
      }
      if (!outside_same) continue;
      std::uint64_t a = 0, b = 0;
      for (std::size_t i = 0; i < width; ++i) {
        a |= std::uint64_t{in[pos + i]} << (8 * i);
        b |= std::uint64_t{out[pos + i]} << (8 * i);
      }
      const std::uint64_t mod = width == 4 ? (1ull << 32) : (1ull << (8 * width));
      const std::uint64_t up = (b + mod - a) % mod, down = (a + mod - b) % mod;
      if ((up >= 1 && up <= kArithMax) || (down >= 1 && down <= kArithMax)) return true;
    }
  }
  return false;
}

Seed front(bool new_trace, bool new_ctx) {
  Seed s;
  s.pending_new_trace = new_trace;
  s.pending_new_mt_ctx = new_ctx;
  return s;
}

double selection_rate(const Seed& s, const QueueNovelty& q, bool ctx, std::uint64_t seed, int draws = 20000) {
  Rng rng(seed);
  GlobalState g;
  int hits = 0;
  for (int i = 0; i < draws; ++i) hits += select_next_seed(s, q, SelectionParams{}, ctx, rng, g);
  return static_cast<double>(hits) / draws;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Every file under dir, by relative path.
std::map<std::string, std::string> snapshot(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[std::filesystem::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("threadfuzz_" + name);
  std::filesystem::remove_all(p);
  return p;
}

FuzzConfig small_config(Mode mode, std::uint64_t seed, std::uint64_t budget = 3000) {
  FuzzConfig c;
  c.mode = mode;
  c.master_seed = seed;
  c.budget_execs = budget;
  return c;
}

}  // namespace

TEST_CASE("hit counts fall into the eight AFL classes") {
  for (unsigned h = 0; h < 256; ++h) CHECK(count_class(static_cast<std::uint8_t>(h)) == bucket_oracle(h));
}

TEST_CASE("trace novelty tracks count classes per slot") {
  GlobalState g;
  using Hits = std::vector<std::pair<std::uint16_t, std::uint8_t>>;
  CHECK(cov_new_trace(Hits{{10, 1}}, g));
  CHECK_FALSE(cov_new_trace(Hits{{10, 1}}, g));
  CHECK(cov_new_trace(Hits{{10, 2}}, g));
  CHECK(cov_new_trace(Hits{{10, 4}}, g));
  CHECK_FALSE(cov_new_trace(Hits{{10, 7}}, g));  // same class as 4
  CHECK(cov_new_trace(Hits{{11, 7}}, g));
  CHECK(cov_new_trace(Hits{{12, 1}}, g, false));
  CHECK(cov_new_trace(Hits{{12, 1}}, g, false));  // no update, still new
  CHECK(g.virgin[12] == 0);
  CHECK_FALSE(cov_new_trace(Hits{}, g));
}

TEST_CASE("context novelty needs a multithreaded run with an unseen signature") {
  GlobalState g;
  vm::ContextSignature a{1, 2, 3}, b{1, 2, 4};
  CHECK_FALSE(cov_new_mt_ctx(false, a, g));
  CHECK(g.seen_ctx.empty());
  CHECK(cov_new_mt_ctx(true, a, g));
  CHECK_FALSE(cov_new_mt_ctx(true, a, g));
  CHECK(cov_new_mt_ctx(true, b, g, false));
  CHECK(cov_new_mt_ctx(true, b, g));
  CHECK(g.seen_ctx.size() == 2);
}

TEST_CASE("seed selection frequencies") {
  SUBCASE("new-trace front is fuzzed with P_ynt") {
    CHECK(std::abs(selection_rate(front(true, false), {1, 0}, true, 11) - 0.95) <= 0.01);
  }
  SUBCASE("old front with novelty pending elsewhere uses P_ynn") {
    const double r = selection_rate(front(false, false), {3, 1}, true, 12);
    CHECK(std::abs(r - 0.01) <= 0.01);
  }
  SUBCASE("queue without novelty uses P_nnn") {
    const double r = selection_rate(front(false, false), {0, 0}, true, 13);
    CHECK(std::abs(r - 0.15) <= 0.01);
  }
  SUBCASE("new mt-context front is always fuzzed") {
    CHECK(selection_rate(front(false, true), {0, 1}, true, 14) == 1.0);
  }
  SUBCASE("context-blind selection ignores pending contexts") {
    const double r = selection_rate(front(false, true), {0, 1}, false, 15);
    CHECK(std::abs(r - 0.15) <= 0.01);
  }
}

TEST_CASE("context-blind selection never consults context novelty") {
  Rng rng(1);
  GlobalState g;
  for (int i = 0; i < 100; ++i) select_next_seed(front(true, true), {1, 1}, {}, false, rng, g);
  CHECK(g.context_consults == 0);
  for (int i = 0; i < 100; ++i) select_next_seed(front(true, true), {1, 1}, {}, true, rng, g);
  CHECK(g.context_consults == 100);
}

TEST_CASE("repetition counts") {
  CHECK(repetition_count(0) == 8);
  CHECK(repetition_count(1) == 16);
  CHECK(repetition_count(2) == 24);
  CHECK(repetition_count(4) == 40);
  CHECK(repetition_count(5) == 40);
  CHECK(repetition_count(1000) == 40);
  CHECK(repetition_count(3, 4, 100) == 16);
  CHECK(repetition_count(3, 8, 0) == 8);
  CHECK(repetition_count_nondeterministic(false) == 8);
  CHECK(repetition_count_nondeterministic(true) == 40);
  CHECK(repetition_count_nondeterministic(true, 2, 5) == 7);
}

TEST_CASE("mutation operator examples") {
  const std::vector<Bytes> no_pool;
  SUBCASE("bit flip on a zero byte sets exactly one bit, all eight reachable") {
    std::set<std::uint8_t> seen;
    for (std::uint64_t s = 0; s < 400; ++s) {
      Rng rng(s);
      const auto out = apply_mutation(MutationOp::BitFlip, Bytes{0x00}, rng, no_pool);
      REQUIRE(out.size() == 1);
      CHECK(__builtin_popcount(out[0]) == 1);
      seen.insert(out[0]);
    }
    CHECK(seen.size() == 8);
    CHECK(seen.count(0x80));
  }
  SUBCASE("deleting from a single byte is a no-op") {
    Rng rng(3);
    CHECK(apply_mutation(MutationOp::DeleteBlock, Bytes{0x42}, rng, no_pool) == Bytes{0x42});
  }
  SUBCASE("empty input is treated as one zero byte") {
    Rng rng(4);
    const auto out = apply_mutation(MutationOp::ByteFlip, Bytes{}, rng, no_pool);
    CHECK(out == Bytes{0xff});
  }
  SUBCASE("splice without a pool returns the input") {
    Rng rng(5);
    CHECK(apply_mutation(MutationOp::Splice, Bytes{1, 2, 3}, rng, no_pool) == Bytes{1, 2, 3});
  }
  SUBCASE("results are capped at max_len") {
    Rng rng(6);
    const Bytes big(40, 7);
    for (int i = 0; i < 50; ++i) {
      CHECK(apply_mutation(MutationOp::DuplicateBlock, big, rng, no_pool, MutationLimits{48}).size() <= 48);
    }
  }
}

TEST_CASE("every operator's output matches its structural description") {
  Rng gen(99);
  for (int trial = 0; trial < 400; ++trial) {
    Bytes in(1 + gen.below(12));
    for (auto& b : in) b = static_cast<std::uint8_t>(gen.below(256));
    std::vector<Bytes> pool;
    for (int k = 0; k < 3; ++k) {
      Bytes p(gen.below(8));
      for (auto& b : p) b = static_cast<std::uint8_t>(gen.below(256));
      pool.push_back(p);
    }
    Rng rng(gen.next());
    MutationOp op;
    const auto out = mutate(in, rng, pool, {}, &op);
    CAPTURE(to_string(op));
    switch (op) {
      case MutationOp::BitFlip: CHECK(differs_in_one_bit(in, out)); break;
      case MutationOp::ByteFlip:
        REQUIRE(out.size() == in.size());
        CHECK(differing_bytes(in, out) == 1);
        for (std::size_t i = 0; i < in.size(); ++i) {
          if (in[i] != out[i]) CHECK((in[i] ^ out[i]) == 0xff);
        }
        break;
      case MutationOp::RandomByte:
        REQUIRE(out.size() == in.size());
        CHECK(differing_bytes(in, out) == 1);
        break;
      case MutationOp::Arith: CHECK(is_arith(in, out)); break;
      case MutationOp::Interesting: {
        REQUIRE(out.size() == in.size());
        CHECK(differing_bytes(in, out) <= 2);
        break;
      }
      case MutationOp::DeleteBlock: CHECK((in.size() == 1 ? out == in : is_block_deletion(in, out))); break;
      case MutationOp::DuplicateBlock: CHECK(is_block_duplication(in, out)); break;
      case MutationOp::Splice: CHECK(is_splice(in, pool, out)); break;
    }
  }
}

TEST_CASE("operators are chosen uniformly") {
  Rng rng(17);
  std::map<MutationOp, int> counts;
  const int draws = 16000;
  for (int i = 0; i < draws; ++i) {
    MutationOp op;
    mutate(Bytes{1, 2, 3, 4}, rng, {}, {}, &op);
    ++counts[op];
  }
  CHECK(counts.size() == kMutationOpCount);
  for (const auto& [op, n] : counts) CHECK(std::abs(n / double(draws) - 1.0 / kMutationOpCount) < 0.015);
}

TEST_CASE("crash triage deduplicates by tag and innermost frames") {
  GlobalState g;
  vm::ExecutionResult r;
  r.status.kind = vm::ExitKind::Crash;
  r.status.tag = "div-by-zero";
  auto frame = [](std::string fn, std::string block, std::uint32_t idx) {
    vm::Frame f;
    f.function = std::move(fn);
    f.block = std::move(block);
    f.index = idx;
    return f;
  };
  r.status.backtrace = {frame("f", "b0", 2), frame("g", "b1", 0), frame("main", "b0", 1), frame("x", "y", 9)};
  r.is_mt = true;
  CHECK(crash_key(r.status) == "div-by-zero|f:b0:2|g:b1:0|main:b0:1");

  const auto first = triage_crash(r, Bytes{1}, 10, 77, g);
  CHECK(first.is_new);
  r.status.backtrace.back() = frame("other", "z", 0);  // beyond the triage depth
  const auto dup = triage_crash(r, Bytes{2}, 20, 78, g);
  CHECK_FALSE(dup.is_new);
  CHECK(dup.key == first.key);
  CHECK(g.crashes.at(first.key).hits == 2);
  CHECK(g.crashes.at(first.key).input == Bytes{1});
  CHECK(g.crashes.at(first.key).frames.size() == kTriageFrames);

  r.is_mt = false;
  r.status.tag = "bad-unlock";
  CHECK(triage_crash(r, Bytes{3}, 30, 79, g).is_new);
  CHECK(g.n_c == 2);
  CHECK(g.n_c_m == 1);
  CHECK(g.n_c_s == 1);
}

TEST_CASE("mutation chance clamps to its bounds") {
  FuzzConfig c;
  Seed s;
  s.bytes = Bytes(10);
  s.avg_exec_steps = 100;
  CHECK(mutation_chance(s, 100, 10, c) == 128);
  CHECK(mutation_chance(s, 200, 10, c) == 256);
  CHECK(mutation_chance(s, 1, 10, c) == 16);
  CHECK(mutation_chance(s, 100000, 10, c) == 1024);
  s.avg_exec_steps = 0;
  CHECK(mutation_chance(s, 100, 5, c) == 64);
}

TEST_CASE("modes parse and map to instrumentation") {
  for (auto m : {Mode::Muzz, Mode::Mafl, Mode::Afl}) CHECK(parse_mode(to_string(m)) == m);
  CHECK_FALSE(parse_mode("MUZ"));
  CHECK(instrumentation_for(Mode::Muzz) == analysis::InstrumentationMode::Muzz);
  CHECK(instrumentation_for(Mode::Mafl) == analysis::InstrumentationMode::Afl);
}

TEST_CASE("zero budget queues the initial seeds without running them") {
  const auto p = testing::load_benchmark("fig1");
  const std::vector<InitialSeed> seeds = {{Bytes{'F', 1}, std::nullopt}, {Bytes{2}, std::nullopt}};
  const auto r = fuzz_campaign(p, small_config(Mode::Muzz, 1, 0), seeds);
  CHECK(r.executions == 0);
  CHECK(r.queue.size() == 2);
  CHECK(r.n_all == 0);
  CHECK(r.next_id == 2);
}

TEST_CASE("campaign invariants across modes") {
  const auto p = testing::load_benchmark("fig1");
  const std::vector<InitialSeed> seeds = {{Bytes{'F', 0x10}, std::nullopt}};
  for (auto mode : {Mode::Muzz, Mode::Mafl, Mode::Afl}) {
    CAPTURE(to_string(mode));
    const auto r = fuzz_campaign(p, small_config(mode, 5), seeds);
    CHECK(r.executions == 3000);
    CHECK(r.n_mt <= r.n_all);
    CHECK(r.n_c == r.n_c_m + r.n_c_s);
    CHECK(r.n_c == r.crashes.size());
    std::uint64_t generated = 0;
    std::set<std::uint32_t> ids;
    for (const auto& s : r.queue) {
      ids.insert(s.id);
      CHECK(s.n_c >= 1);
      CHECK(s.n_c <= r.config.n0 + r.config.nv);
      if (s.initial) continue;
      ++generated;
      CHECK(s.parent.has_value());
      CHECK((s.covered_new_trace || s.covered_new_mt_ctx));
      if (mode == Mode::Afl) CHECK_FALSE(s.covered_new_mt_ctx);
      CHECK(s.c_m <= s.n_c);
    }
    CHECK(ids.size() == r.queue.size());
    CHECK(generated == r.n_all);
    if (mode == Mode::Afl) {
      CHECK(r.context_consults == 0);
    } else {
      CHECK(r.context_consults > 0);
    }
  }
}

TEST_CASE("campaigns are deterministic and worker count does not change results") {
  const auto p = testing::load_benchmark("fig1");
  const std::vector<InitialSeed> seeds = {{Bytes{'F', 0x10}, std::nullopt}};
  auto cfg = small_config(Mode::Muzz, 9, 2500);
  const auto a = fuzz_campaign(p, cfg, seeds);
  const auto b = fuzz_campaign(p, cfg, seeds);
  cfg.workers = 3;
  const auto c = fuzz_campaign(p, cfg, seeds);
  for (const auto* other : {&b, &c}) {
    REQUIRE(a.queue.size() == other->queue.size());
    for (std::size_t i = 0; i < a.queue.size(); ++i) {
      CHECK(a.queue[i].bytes == other->queue[i].bytes);
      CHECK(a.queue[i].id == other->queue[i].id);
      CHECK(a.queue[i].c_m == other->queue[i].c_m);
      CHECK(a.queue[i].schedule_seed == other->queue[i].schedule_seed);
    }
    CHECK(a.executions == other->executions);
    CHECK(a.n_mt == other->n_mt);
  }
  const auto d1 = fresh_dir("det_a"), d2 = fresh_dir("det_b");
  write_corpus(d1, a);
  write_corpus(d2, b);
  CHECK(snapshot(d1) == snapshot(d2));
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST_CASE("corpus round trip and resume continue queue ids") {
  const auto p = testing::load_benchmark("fig1");
  const std::vector<InitialSeed> seeds = {{Bytes{'F', 0x10}, std::nullopt}};
  const auto first = fuzz_campaign(p, small_config(Mode::Muzz, 4, 1500), seeds);
  const auto dir = fresh_dir("resume");
  write_corpus(dir, first);
  const auto back = read_queue(dir);
  REQUIRE(back.size() == first.queue.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].id == first.queue[i].id);
    CHECK(back[i].bytes == first.queue[i].bytes);
    CHECK(back[i].c_m == first.queue[i].c_m);
    CHECK(back[i].n_c == first.queue[i].n_c);
    CHECK(back[i].parent == first.queue[i].parent);
  }
  std::vector<InitialSeed> resume;
  std::uint32_t max_id = 0;
  for (const auto& s : back) {
    resume.push_back({s.bytes, s.id});
    max_id = std::max(max_id, s.id);
  }
  const auto second = fuzz_campaign(p, small_config(Mode::Muzz, 5, 3000), resume);
  std::uint32_t prev = 0;
  bool first_new = true;
  for (const auto& s : second.queue) {
    if (s.initial) continue;
    CHECK(s.id > max_id);
    if (!first_new) CHECK(s.id > prev);
    prev = s.id;
    first_new = false;
  }
  std::filesystem::remove_all(dir);
}
