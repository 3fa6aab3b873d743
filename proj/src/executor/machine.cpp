#include <algorithm>
#include <set>
#include <sstream>

#include "threadfuzz/executor.hpp"
#include "threadfuzz/rng.hpp"

namespace threadfuzz::vm {

using ir::ArithOp;
using ir::Opcode;
using ir::Operand;

namespace {

std::int64_t wrap_add(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) + static_cast<std::uint64_t>(b));
}
std::int64_t wrap_sub(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) - static_cast<std::uint64_t>(b));
}
std::int64_t wrap_mul(std::int64_t a, std::int64_t b) {
  return static_cast<std::int64_t>(static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(b));
}

// Returns false on division by zero.
bool arith(ArithOp op, std::int64_t a, std::int64_t b, std::int64_t& out) {
  switch (op) {
    case ArithOp::Add: out = wrap_add(a, b); return true;
    case ArithOp::Sub: out = wrap_sub(a, b); return true;
    case ArithOp::Mul: out = wrap_mul(a, b); return true;
    case ArithOp::Div:
    case ArithOp::Rem:
      if (b == 0) return false;
      if (a == INT64_MIN && b == -1) {
        out = op == ArithOp::Div ? INT64_MIN : 0;
      } else {
        out = op == ArithOp::Div ? a / b : a % b;
      }
      return true;
    case ArithOp::And: out = a & b; return true;
    case ArithOp::Or: out = a | b; return true;
    case ArithOp::Xor: out = a ^ b; return true;
    case ArithOp::Shl: out = static_cast<std::int64_t>(static_cast<std::uint64_t>(a) << (b & 63)); return true;
    case ArithOp::Shr: out = a >> (b & 63); return true;
    case ArithOp::Eq: out = a == b; return true;
    case ArithOp::Ne: out = a != b; return true;
    case ArithOp::Lt: out = a < b; return true;
    case ArithOp::Le: out = a <= b; return true;
    case ArithOp::Gt: out = a > b; return true;
    case ArithOp::Ge: out = a >= b; return true;
  }
  return true;
}

}  // namespace

std::uint64_t hash_context(std::span<const ContextEvent> events) {
  std::uint64_t h = kFnvOffsetBasis;
  auto feed = [&h](std::uint8_t byte) {
    h ^= byte;
    h *= kFnvPrime;
  };
  for (const auto& e : events) {
    feed(static_cast<std::uint8_t>(e.loc & 0xff));
    feed(static_cast<std::uint8_t>(e.loc >> 8));
    for (int s = 0; s < 32; s += 8) feed(static_cast<std::uint8_t>((e.nctx >> s) & 0xff));
  }
  return h;
}

std::string to_string(ExitKind kind) {
  switch (kind) {
    case ExitKind::Exit: return "exit";
    case ExitKind::Crash: return "crash";
    case ExitKind::Deadlock: return "deadlock";
    case ExitKind::StepBudgetExhausted: return "step-budget-exhausted";
  }
  return "?";
}

Machine::Machine(const InstrumentedProgram& target, std::span<const std::uint8_t> input, bool record_trace)
    : program_(target.program), labels_(&target.labels), input_(input), record_trace_(record_trace) {
  const ir::Program& p = *program_;
  globals_.reserve(p.globals.size());
  for (const auto& g : p.globals) globals_.push_back(g.initial);
  const std::uint32_t max_mutex = p.mutexes.empty() ? 0 : p.mutexes.back() + 1;
  mutex_owner_.assign(max_mutex, -1);

  Thread main;
  StackFrame f;
  f.function = p.entry;
  f.block = p.functions[p.entry].entry_block;
  f.locals.assign(p.functions[p.entry].locals.size(), 0);
  main.stack.push_back(std::move(f));
  threads_.push_back(std::move(main));
  joined_.push_back(0);
}

const ir::Instruction& Machine::current(const Thread& t) const {
  const auto& f = t.stack.back();
  return program_->functions[f.function].blocks[f.block].instructions[f.index];
}

std::int64_t Machine::value(const StackFrame& f, const Operand& o) const {
  switch (o.kind) {
    case Operand::Kind::Imm: return o.imm;
    case Operand::Kind::Local: return f.locals[o.index];
    case Operand::Kind::Shared: return globals_[o.index];
  }
  return 0;
}

InstrId Machine::next_site(std::uint32_t thread) const {
  const auto& f = threads_[thread].stack.back();
  return {f.function, f.block, f.index};
}

bool Machine::enabled(std::uint32_t thread) const {
  if (finished_) return false;
  const Thread& t = threads_[thread];
  if (t.done) return false;
  const auto& inst = current(t);
  if (inst.op == Opcode::Lock) return mutex_owner_[inst.target] < 0;
  if (inst.op == Opcode::Join) {
    const std::int64_t h = value(t.stack.back(), inst.operands[0]);
    if (h <= 0 || h >= static_cast<std::int64_t>(threads_.size()) || h == thread) return true;  // crashes
    return threads_[static_cast<std::size_t>(h)].done;
  }
  return true;
}

void Machine::enabled_threads(std::vector<std::uint32_t>& out) const {
  out.clear();
  for (std::uint32_t t = 0; t < threads_.size(); ++t) {
    if (enabled(t)) out.push_back(t);
  }
}

bool Machine::next_is_visible(std::uint32_t thread) const {
  const Thread& t = threads_[thread];
  if (t.done) return false;
  switch (current(t).op) {
    case Opcode::LoadShared:
    case Opcode::StoreShared:
    case Opcode::Lock:
    case Opcode::Unlock:
    case Opcode::Fork:
    case Opcode::Join:
    case Opcode::Exit:
    case Opcode::Crash:
      return true;
    case Opcode::Arith: {
      const auto op = *current(t).arith;
      return op == ArithOp::Div || op == ArithOp::Rem;  // may end the program
    }
    case Opcode::Return:
      return thread == 0 && t.stack.size() == 1;  // ends the program
    default:
      return false;
  }
}

void Machine::crash(std::uint32_t thread, std::string tag) {
  status_.kind = ExitKind::Crash;
  status_.tag = std::move(tag);
  const auto& stack = threads_[thread].stack;
  for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
    const auto& fn = program_->functions[it->function];
    status_.backtrace.push_back({fn.name, fn.blocks[it->block].id, it->index, {it->function, it->block, it->index}});
  }
  finished_ = true;
}

void Machine::exit_program(std::int64_t code) {
  status_.kind = ExitKind::Exit;
  status_.code = code;
  finished_ = true;
}

void Machine::stop_deadlocked() {
  status_.kind = ExitKind::Deadlock;
  for (std::uint32_t t = 0; t < threads_.size(); ++t) {
    if (!threads_[t].done) status_.blocked.push_back({t, next_site(t)});
  }
  finished_ = true;
}

void Machine::stop_budget_exhausted() {
  status_.kind = ExitKind::StepBudgetExhausted;
  finished_ = true;
}

void Machine::step(std::uint32_t tid) {
  Thread& t = threads_[tid];
  StackFrame& f = t.stack.back();
  const InstrId site{f.function, f.block, f.index};
  const auto& inst = program_->functions[f.function].blocks[f.block].instructions[f.index];
  ++steps_;

  // Loc for context events is the last deputy strictly before this instruction.
  const std::int32_t loc_before = t.last_label;
  const std::int32_t label = (*labels_)[program_->flat_index(site)];
  if (label >= 0) {
    coverage_.hit(transition_slot(static_cast<std::uint16_t>(t.prev_label), static_cast<std::uint16_t>(label)));
    t.prev_label = label;
    t.last_label = label;
  }
  TraceEvent ev;
  ev.nctx = tid;
  ev.site = site;
  ev.op = inst.op;
  auto emit = [&] {
    if (record_trace_) trace_.push_back(ev);
  };
  auto context = [&](ContextApi api) {
    const auto loc = static_cast<std::uint16_t>(loc_before < 0 ? 0 : loc_before);
    context_[static_cast<std::size_t>(api)].push_back({loc, tid});
  };

  switch (inst.op) {
    case Opcode::Const:
      f.locals[*inst.dst] = value(f, inst.operands[0]);
      ++f.index;
      break;
    case Opcode::Arith: {
      std::int64_t r = 0;
      if (!arith(*inst.arith, value(f, inst.operands[0]), value(f, inst.operands[1]), r)) {
        emit();
        crash(tid, "div-by-zero");
        return;
      }
      f.locals[*inst.dst] = r;
      ++f.index;
      break;
    }
    case Opcode::LoadShared:
      if (inst.target == ir::kUndeclaredGlobal) {
        emit();
        crash(tid, "undeclared-global");
        return;
      }
      ev.global = static_cast<std::int32_t>(inst.target);
      ev.reads = true;
      f.locals[*inst.dst] = globals_[inst.target];
      ++f.index;
      break;
    case Opcode::StoreShared: {
      if (inst.target == ir::kUndeclaredGlobal) {
        emit();
        crash(tid, "undeclared-global");
        return;
      }
      ev.global = static_cast<std::int32_t>(inst.target);
      ev.writes = true;
      for (const auto& o : inst.operands) ev.reads |= o.kind == Operand::Kind::Shared;
      std::int64_t r = value(f, inst.operands[0]);
      if (inst.arith && !arith(*inst.arith, r, value(f, inst.operands[1]), r)) {
        emit();
        crash(tid, "div-by-zero");
        return;
      }
      globals_[inst.target] = r;
      ++f.index;
      break;
    }
    case Opcode::LoadInput: {
      const std::int64_t off = value(f, inst.operands[0]);
      f.locals[*inst.dst] =
          off >= 0 && static_cast<std::uint64_t>(off) < input_.size() ? input_[static_cast<std::size_t>(off)] : 0;
      ++f.index;
      break;
    }
    case Opcode::InputLen:
      f.locals[*inst.dst] = static_cast<std::int64_t>(input_.size());
      ++f.index;
      break;
    case Opcode::Branch:
      f.block = value(f, inst.operands[0]) != 0 ? inst.then_block : inst.else_block;
      f.index = 0;
      break;
    case Opcode::Jump:
      f.block = inst.then_block;
      f.index = 0;
      break;
    case Opcode::Call: {
      const auto& callee = program_->functions[inst.target];
      StackFrame nf;
      nf.function = inst.target;
      nf.block = callee.entry_block;
      nf.locals.assign(callee.locals.size(), 0);
      for (std::size_t i = 0; i < inst.operands.size(); ++i) nf.locals[i] = value(f, inst.operands[i]);
      t.stack.push_back(std::move(nf));  // invalidates f
      break;
    }
    case Opcode::Return: {
      const std::int64_t r = inst.operands.empty() ? 0 : value(f, inst.operands[0]);
      t.stack.pop_back();
      if (t.stack.empty()) {
        t.done = true;
        // Held mutexes stay held, as with a native thread that exits while locked.
        emit();
        if (tid == 0) exit_program(r);
        return;
      }
      StackFrame& caller = t.stack.back();
      const auto& call = program_->functions[caller.function].blocks[caller.block].instructions[caller.index];
      if (call.dst) caller.locals[*call.dst] = r;
      ++caller.index;
      break;
    }
    case Opcode::Exit:
      emit();
      exit_program(value(f, inst.operands[0]));
      return;
    case Opcode::Crash:
      emit();
      crash(tid, inst.symbol);
      return;
    case Opcode::Fork: {
      const auto child_id = static_cast<std::uint32_t>(threads_.size());
      const auto& callee = program_->functions[inst.target];
      Thread child;
      StackFrame nf;
      nf.function = inst.target;
      nf.block = callee.entry_block;
      nf.locals.assign(callee.locals.size(), 0);
      if (!callee.params.empty()) nf.locals[0] = value(f, inst.operands[0]);
      child.stack.push_back(std::move(nf));
      if (inst.dst) f.locals[*inst.dst] = child_id;
      ++f.index;
      ev.other = static_cast<std::int32_t>(child_id);
      threads_.push_back(std::move(child));  // invalidates t and f
      joined_.push_back(0);
      break;
    }
    case Opcode::Join: {
      const std::int64_t h = value(f, inst.operands[0]);
      if (h <= 0 || h >= static_cast<std::int64_t>(threads_.size()) || h == tid) {
        emit();
        crash(tid, "bad-join");
        return;
      }
      joined_[static_cast<std::size_t>(h)] = 1;
      ev.other = static_cast<std::int32_t>(h);
      context(ContextApi::Join);
      ++f.index;
      break;
    }
    case Opcode::Lock:
      mutex_owner_[inst.target] = static_cast<std::int32_t>(tid);
      ev.mutex = static_cast<std::int32_t>(inst.target);
      context(ContextApi::Lock);
      ++f.index;
      break;
    case Opcode::Unlock:
      if (mutex_owner_[inst.target] != static_cast<std::int32_t>(tid)) {
        emit();
        crash(tid, "bad-unlock");
        return;
      }
      mutex_owner_[inst.target] = -1;
      ev.mutex = static_cast<std::int32_t>(inst.target);
      context(ContextApi::Unlock);
      ++f.index;
      break;
    case Opcode::Nop:
      ++f.index;
      break;
  }
  emit();
}

ExecutionResult Machine::take_result() {
  ExecutionResult r;
  r.status = std::move(status_);
  r.coverage = std::move(coverage_);
  r.is_mt = threads_.size() > 1;
  r.threads_forked = static_cast<std::uint32_t>(threads_.size() - 1);
  r.steps_executed = steps_;
  r.final_globals = globals_;
  r.trace = std::move(trace_);
  if (r.is_mt) {
    r.context_events = std::move(context_);
    r.s_ctx.lock = hash_context(r.context_events[0]);
    r.s_ctx.unlock = hash_context(r.context_events[1]);
    r.s_ctx.join = hash_context(r.context_events[2]);
  }
  return r;
}

ExecutionResult execute(const InstrumentedProgram& target, std::span<const std::uint8_t> input,
                        const SchedulerConfig& cfg) {
  Machine m(target, input, cfg.record_trace);
  Rng rng(cfg.schedule_rng_seed);
  auto draw = [&]() -> std::uint32_t {
    return cfg.intervention_enabled ? static_cast<std::uint32_t>(1 + rng.below(kMaxPriority)) : 1u;
  };
  std::vector<std::uint32_t> priority{draw()};
  std::vector<std::uint32_t> enabled;
  while (!m.finished()) {
    if (m.steps() >= cfg.max_steps) {
      m.stop_budget_exhausted();
      break;
    }
    m.enabled_threads(enabled);
    if (enabled.empty()) {
      m.stop_deadlocked();
      break;
    }
    std::uint32_t pick = enabled[0];
    if (enabled.size() > 1) {
      std::uint64_t total = 0;
      for (auto t : enabled) total += priority[t];
      std::uint64_t r = rng.below(total);
      for (auto t : enabled) {
        if (r < priority[t]) {
          pick = t;
          break;
        }
        r -= priority[t];
      }
    }
    m.step(pick);
    while (priority.size() < m.thread_count()) priority.push_back(draw());
  }
  return m.take_result();
}

ExecutionResult execute(const analysis::InstrumentationPlan& plan, const ir::Program& program,
                        std::span<const std::uint8_t> input, const SchedulerConfig& cfg) {
  const InstrumentedProgram target(program, plan);
  return execute(target, input, cfg);
}

std::size_t distinct_signatures(std::span<const ExecutionResult> results) {
  std::set<ContextSignature> seen;
  for (const auto& r : results) {
    if (r.is_mt) seen.insert(r.s_ctx);
  }
  return seen.size();
}

std::string format_trace(const ir::Program& program, std::span<const TraceEvent> trace) {
  std::ostringstream out;
  for (const auto& e : trace) {
    const auto& fn = program.functions[e.site.function];
    out << e.nctx << ',' << fn.name << ',' << fn.blocks[e.site.block].id << ',' << e.site.index << ','
        << ir::opcode_name(e.op);
    if (e.global >= 0) {
      out << ',' << program.globals[static_cast<std::size_t>(e.global)].name << ':' << (e.reads ? "r" : "")
          << (e.writes ? "w" : "");
    } else if (e.mutex >= 0) {
      out << ",m" << e.mutex;
    } else if (e.other >= 0) {
      out << ",t" << e.other;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace threadfuzz::vm
