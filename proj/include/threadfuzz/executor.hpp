// Deterministic interpreter for instrumented mtir programs.
//
// Threads are simulated: one instruction is one atomic scheduling unit and
// a seeded, priority-weighted scheduler picks the next thread at every
// step. The same (program, plan, input, scheduler config) always yields the
// same ExecutionResult.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "threadfuzz/analysis.hpp"
#include "threadfuzz/mtir.hpp"

namespace threadfuzz::vm {

using ir::InstrId;

inline constexpr std::size_t kMapSize = 1u << 16;
inline constexpr std::uint32_t kMaxPriority = 32;

struct SchedulerConfig {
  std::uint64_t schedule_rng_seed = 0;
  std::uint64_t max_steps = 1'000'000;
  std::uint32_t num_thread_slots = 16;  // informational
  bool intervention_enabled = true;
  bool record_trace = false;
};

// 64 KiB transition hit-count map. Counts saturate at 255. Storage is
// allocated on the first hit, so uninstrumented runs stay cheap to copy.
class CoverageMap {
 public:
  void hit(std::uint16_t slot) {
    if (hits_.empty()) hits_.assign(kMapSize, 0);
    std::uint8_t& h = hits_[slot];
    if (h == 0) touched_.push_back(slot);
    if (h != 255) ++h;
  }
  std::uint8_t at(std::size_t slot) const { return hits_.empty() ? 0 : hits_[slot]; }
  // Slots with a nonzero count, in first-hit order.
  const std::vector<std::uint16_t>& touched() const { return touched_; }

  friend bool operator==(const CoverageMap& a, const CoverageMap& b) {
    if (a.hits_.empty() || b.hits_.empty()) return a.touched_.empty() && b.touched_.empty();
    return a.hits_ == b.hits_;
  }

 private:
  std::vector<std::uint8_t> hits_;
  std::vector<std::uint16_t> touched_;
};

// Transition slot for a thread moving from prev_label to cur_label.
inline std::uint16_t transition_slot(std::uint16_t prev_label, std::uint16_t cur_label) {
  return static_cast<std::uint16_t>((prev_label >> 1) ^ cur_label);
}

// One thread-context event TC = <Loc, N_ctx>.
struct ContextEvent {
  std::uint16_t loc = 0;
  std::uint32_t nctx = 0;
  friend bool operator==(const ContextEvent&, const ContextEvent&) = default;
};

inline constexpr std::uint64_t kFnvOffsetBasis = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

// FNV-1a over the events, each fed as loc (2 bytes LE) then nctx (4 bytes LE).
std::uint64_t hash_context(std::span<const ContextEvent> events);

enum class ContextApi : std::uint8_t { Lock = 0, Unlock = 1, Join = 2 };

// S_ctx = <H(TLock), H(TUnLock), H(TJoin)>.
struct ContextSignature {
  std::uint64_t lock = kFnvOffsetBasis;
  std::uint64_t unlock = kFnvOffsetBasis;
  std::uint64_t join = kFnvOffsetBasis;

  bool empty() const { return lock == kFnvOffsetBasis && unlock == kFnvOffsetBasis && join == kFnvOffsetBasis; }
  friend auto operator<=>(const ContextSignature&, const ContextSignature&) = default;
};

struct Frame {
  std::string function;
  std::string block;
  std::uint32_t index = 0;
  InstrId id;
  friend bool operator==(const Frame& a, const Frame& b) { return a.id == b.id; }
};

enum class ExitKind : std::uint8_t { Exit, Crash, Deadlock, StepBudgetExhausted };

std::string to_string(ExitKind kind);

struct BlockedThread {
  std::uint32_t nctx = 0;
  InstrId site;
  friend bool operator==(const BlockedThread&, const BlockedThread&) = default;
};

struct ExitStatus {
  ExitKind kind = ExitKind::Exit;
  std::int64_t code = 0;          // Exit
  std::string tag;                // Crash
  std::vector<Frame> backtrace;   // Crash: innermost frame first
  std::vector<BlockedThread> blocked;  // Deadlock
  friend bool operator==(const ExitStatus&, const ExitStatus&) = default;
};

// One executed step, recorded when SchedulerConfig::record_trace is set.
struct TraceEvent {
  std::uint32_t nctx = 0;
  InstrId site;
  ir::Opcode op = ir::Opcode::Nop;
  std::int32_t global = -1;  // shared variable touched
  bool reads = false;
  bool writes = false;
  std::int32_t mutex = -1;   // Lock / Unlock
  std::int32_t other = -1;   // Fork: child nctx; Join: joined nctx
  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

struct ExecutionResult {
  ExitStatus status;
  CoverageMap coverage;
  ContextSignature s_ctx;
  std::array<std::vector<ContextEvent>, 3> context_events;  // indexed by ContextApi
  bool is_mt = false;
  std::uint64_t steps_executed = 0;
  std::uint32_t threads_forked = 0;
  std::vector<std::int64_t> final_globals;
  std::vector<TraceEvent> trace;

  bool crashed() const { return status.kind == ExitKind::Crash; }
  bool hung() const { return status.kind == ExitKind::StepBudgetExhausted; }
};

// A program together with the label of every instruction (-1: no deputy).
struct InstrumentedProgram {
  const ir::Program* program = nullptr;
  std::vector<std::int32_t> labels;

  InstrumentedProgram() = default;
  InstrumentedProgram(const ir::Program& p, const analysis::InstrumentationPlan& plan)
      : program(&p), labels(plan.label_table(p)) {}
};

// Step-level interpreter. execute() drives it with the randomized scheduler;
// exhaustive explorers drive it directly and copy it to branch.
class Machine {
 public:
  Machine(const InstrumentedProgram& target, std::span<const std::uint8_t> input, bool record_trace);

  bool finished() const { return finished_; }
  std::size_t thread_count() const { return threads_.size(); }
  std::uint64_t steps() const { return steps_; }

  bool enabled(std::uint32_t thread) const;
  void enabled_threads(std::vector<std::uint32_t>& out) const;
  // True when the thread's next instruction touches shared state or
  // synchronises (the only points where scheduling choices matter).
  bool next_is_visible(std::uint32_t thread) const;
  InstrId next_site(std::uint32_t thread) const;

  void step(std::uint32_t thread);

  void stop_deadlocked();
  void stop_budget_exhausted();

  const std::vector<std::int64_t>& globals() const { return globals_; }
  const ExitStatus& status() const { return status_; }

  ExecutionResult take_result();

 private:
  struct StackFrame {
    std::uint32_t function = 0;
    std::uint32_t block = 0;
    std::uint32_t index = 0;
    std::vector<std::int64_t> locals;
  };
  struct Thread {
    std::vector<StackFrame> stack;
    std::int32_t prev_label = 0;
    std::int32_t last_label = -1;
    bool done = false;
  };

  const ir::Instruction& current(const Thread& t) const;
  std::int64_t value(const StackFrame& f, const ir::Operand& o) const;
  void crash(std::uint32_t thread, std::string tag);
  void exit_program(std::int64_t code);

  const ir::Program* program_;
  const std::vector<std::int32_t>* labels_;
  std::span<const std::uint8_t> input_;
  bool record_trace_;

  std::vector<Thread> threads_;
  std::vector<std::int64_t> globals_;
  std::vector<std::int32_t> mutex_owner_;  // indexed by mutex id, -1 free
  std::vector<std::uint8_t> joined_;
  bool finished_ = false;
  std::uint64_t steps_ = 0;
  ExitStatus status_;
  CoverageMap coverage_;
  std::array<std::vector<ContextEvent>, 3> context_;
  std::vector<TraceEvent> trace_;
};

ExecutionResult execute(const InstrumentedProgram& target, std::span<const std::uint8_t> input,
                        const SchedulerConfig& cfg);
ExecutionResult execute(const analysis::InstrumentationPlan& plan, const ir::Program& program,
                        std::span<const std::uint8_t> input, const SchedulerConfig& cfg);

// C_m: number of distinct S_ctx values among the multithreaded results.
std::size_t distinct_signatures(std::span<const ExecutionResult> results);

// Line-per-step dump: "nctx,function,block,index,opcode[,detail]".
std::string format_trace(const ir::Program& program, std::span<const TraceEvent> trace);

}  // namespace threadfuzz::vm
