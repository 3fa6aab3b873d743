#include <algorithm>

#include "threadfuzz/fuzzer.hpp"

namespace threadfuzz::fuzz {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::Muzz: return "muzz";
    case Mode::Mafl: return "mafl";
    case Mode::Afl: return "afl";
  }
  return "?";
}

std::optional<Mode> parse_mode(std::string_view text) {
  if (text == "muzz") return Mode::Muzz;
  if (text == "mafl") return Mode::Mafl;
  if (text == "afl") return Mode::Afl;
  return std::nullopt;
}

analysis::InstrumentationMode instrumentation_for(Mode mode) {
  return mode == Mode::Muzz ? analysis::InstrumentationMode::Muzz : analysis::InstrumentationMode::Afl;
}

std::uint8_t count_class(std::uint8_t hits) {
  if (hits == 0) return 0;
  if (hits == 1) return 1;
  if (hits == 2) return 2;
  if (hits == 3) return 4;
  if (hits <= 7) return 8;
  if (hits <= 15) return 16;
  if (hits <= 31) return 32;
  if (hits <= 127) return 64;
  return 128;
}

bool cov_new_trace(std::span<const std::pair<std::uint16_t, std::uint8_t>> hits, GlobalState& global, bool update) {
  bool fresh = false;
  for (const auto& [slot, count] : hits) {
    const std::uint8_t cls = count_class(count);
    if ((global.virgin[slot] & cls) == 0) {
      fresh = true;
      if (!update) return true;
      global.virgin[slot] |= cls;
    }
  }
  return fresh;
}

bool cov_new_trace(const vm::ExecutionResult& result, GlobalState& global, bool update) {
  std::vector<std::pair<std::uint16_t, std::uint8_t>> hits;
  hits.reserve(result.coverage.touched().size());
  for (auto slot : result.coverage.touched()) hits.emplace_back(slot, result.coverage.at(slot));
  return cov_new_trace(hits, global, update);
}

bool cov_new_mt_ctx(bool is_mt, const vm::ContextSignature& sig, GlobalState& global, bool update) {
  if (!is_mt) return false;
  if (global.seen_ctx.count(sig)) return false;
  if (update) global.seen_ctx.insert(sig);
  return true;
}

bool cov_new_mt_ctx(const vm::ExecutionResult& result, GlobalState& global, bool update) {
  return cov_new_mt_ctx(result.is_mt, result.s_ctx, global, update);
}

bool select_next_seed(const Seed& front, const QueueNovelty& queue, const SelectionParams& params,
                      bool context_aware, Rng& rng, GlobalState& global) {
  bool interesting = queue.pending_new_trace > 0;
  if (context_aware) {
    ++global.context_consults;
    interesting = interesting || queue.pending_new_mt_ctx > 0;
  }
  if (!interesting) return rng.bernoulli(params.p_nnn);
  if (context_aware && front.pending_new_mt_ctx) return true;
  if (front.pending_new_trace) return rng.bernoulli(params.p_ynt);
  return rng.bernoulli(params.p_ynn);
}

std::uint32_t repetition_count(std::uint32_t c_m, std::uint32_t n0, std::uint32_t nv) {
  const std::uint64_t bonus = static_cast<std::uint64_t>(n0) * c_m;
  return n0 + static_cast<std::uint32_t>(std::min<std::uint64_t>(nv, bonus));
}

std::uint32_t repetition_count_nondeterministic(bool unstable, std::uint32_t n0, std::uint32_t nv) {
  return n0 + (unstable ? nv : 0);
}

std::string crash_key(const vm::ExitStatus& status) {
  std::string key = status.tag;
  for (std::size_t i = 0; i < status.backtrace.size() && i < kTriageFrames; ++i) {
    const auto& f = status.backtrace[i];
    key += "|" + f.function + ":" + f.block + ":" + std::to_string(f.index);
  }
  return key;
}

TriageOutcome triage_crash(const vm::ExecutionResult& result, std::span<const std::uint8_t> input,
                           std::uint64_t clock, std::uint64_t schedule_seed, GlobalState& global) {
  TriageOutcome out;
  out.key = crash_key(result.status);
  auto it = global.crashes.find(out.key);
  if (it != global.crashes.end()) {
    ++it->second.hits;
    return out;
  }
  out.is_new = true;
  CrashRecord rec;
  rec.key = out.key;
  rec.tag = result.status.tag;
  for (std::size_t i = 0; i < result.status.backtrace.size() && i < kTriageFrames; ++i) {
    const auto& f = result.status.backtrace[i];
    rec.frames.push_back(f.function + ":" + f.block + ":" + std::to_string(f.index));
  }
  rec.input.assign(input.begin(), input.end());
  rec.is_mt = result.is_mt;
  rec.found_at = clock;
  rec.schedule_seed = schedule_seed;
  rec.hits = 1;
  global.crashes.emplace(out.key, std::move(rec));
  ++global.n_c;
  if (result.is_mt) {
    ++global.n_c_m;
  } else {
    ++global.n_c_s;
  }
  return out;
}

}  // namespace threadfuzz::fuzz
