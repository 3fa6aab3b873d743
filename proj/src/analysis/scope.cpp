#include <algorithm>
#include <climits>
#include <deque>

#include "threadfuzz/analysis.hpp"

namespace threadfuzz::analysis {

using ir::Opcode;
using ir::Operand;

namespace {

// Upper bound on tracked outstanding threads; loops that fork saturate here.
constexpr int kOutstandingCap = 64;

struct ForkRegions {
  // Outstanding-thread count before each instruction, per function; -1 when unreachable.
  std::vector<std::vector<std::vector<int>>> before;
  std::vector<int> at_return;  // max outstanding count when the function returns
};

// May-analysis of "a thread forked here (or by a callee) has not been joined
// yet": forward dataflow, meet = max, fork +1, join -1 (floored at 0).
ForkRegions outstanding_threads(const ir::Program& p) {
  ForkRegions r;
  r.at_return.assign(p.functions.size(), 0);
  r.before.resize(p.functions.size());
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::uint32_t f = 0; f < p.functions.size(); ++f) {
      const auto& fn = p.functions[f];
      auto& in = r.before[f];
      in.assign(fn.blocks.size(), {});
      for (std::uint32_t b = 0; b < fn.blocks.size(); ++b) in[b].assign(fn.blocks[b].instructions.size(), -1);
      std::vector<int> block_in(fn.blocks.size(), -1);
      block_in[fn.entry_block] = 0;
      std::deque<std::uint32_t> work{fn.entry_block};
      int ret = 0;
      while (!work.empty()) {
        const auto b = work.front();
        work.pop_front();
        int cur = block_in[b];
        for (std::uint32_t i = 0; i < fn.blocks[b].instructions.size(); ++i) {
          const auto& inst = fn.blocks[b].instructions[i];
          in[b][i] = cur;
          switch (inst.op) {
            case Opcode::Fork:
              cur = std::min(cur + 1, kOutstandingCap);
              break;
            case Opcode::Join:
              cur = std::max(cur - 1, 0);
              break;
            case Opcode::Call:
              cur = std::min(cur + r.at_return[inst.target], kOutstandingCap);
              break;
            case Opcode::Return:
              ret = std::max(ret, cur);
              break;
            default:
              break;
          }
        }
        for (auto s : fn.successors(b)) {
          if (cur > block_in[s]) {
            block_in[s] = cur;
            work.push_back(s);
          }
        }
      }
      if (ret != r.at_return[f]) {
        r.at_return[f] = ret;
        changed = true;
      }
    }
  }
  return r;
}

bool reads_local(const ir::Instruction& inst, const std::vector<bool>& tainted) {
  return std::any_of(inst.operands.begin(), inst.operands.end(), [&](const Operand& o) {
    return o.kind == Operand::Kind::Local && tainted[o.index];
  });
}

}  // namespace

ThreadSets compute_thread_sets(const Icfg& icfg) {
  const ir::Program& p = *icfg.program;
  ThreadSets ts;
  for (std::uint32_t f = 0; f < p.functions.size(); ++f) {
    const auto& fn = p.functions[f];
    for (std::uint32_t b = 0; b < fn.blocks.size(); ++b) {
      for (std::uint32_t i = 0; i < fn.blocks[b].instructions.size(); ++i) {
        const InstrId id{f, b, i};
        switch (fn.blocks[b].instructions[i].op) {
          case Opcode::Fork: ts.fork_sites.insert(id); break;
          case Opcode::Join: ts.join_sites.insert(id); break;
          case Opcode::Lock: ts.lock_sites.insert(id); break;
          case Opcode::Unlock: ts.unlock_sites.insert(id); break;
          default: break;
        }
      }
    }
  }
  for (const auto& e : icfg.fork_edges) ts.forked_functions.insert(e.callee);
  if (ts.forked_functions.empty()) return ts;

  ts.concurrent_functions = icfg.reachable_functions(ts.forked_functions);
  const ForkRegions regions = outstanding_threads(p);

  // Grow the concurrent set with callees of call sites that execute while
  // a forked thread is alive, until nothing changes.
  bool changed = true;
  while (changed) {
    changed = false;
    ts.concurrent_region.clear();
    std::set<std::uint32_t> roots;
    for (std::uint32_t f = 0; f < p.functions.size(); ++f) {
      if (ts.concurrent_functions.count(f)) continue;
      const auto& fn = p.functions[f];
      for (std::uint32_t b = 0; b < fn.blocks.size(); ++b) {
        for (std::uint32_t i = 0; i < fn.blocks[b].instructions.size(); ++i) {
          if (regions.before[f][b][i] <= 0) continue;
          ts.concurrent_region.insert({f, b, i});
          const auto& inst = fn.blocks[b].instructions[i];
          if (inst.op == Opcode::Call && !ts.concurrent_functions.count(inst.target)) roots.insert(inst.target);
        }
      }
    }
    if (!roots.empty()) {
      for (auto g : icfg.reachable_functions(roots)) changed |= ts.concurrent_functions.insert(g).second;
    }
  }
  for (auto it = ts.concurrent_region.begin(); it != ts.concurrent_region.end();) {
    it = ts.concurrent_functions.count(it->function) ? ts.concurrent_region.erase(it) : std::next(it);
  }

  for (std::uint32_t f = 0; f < p.functions.size(); ++f) {
    const auto& fn = p.functions[f];
    for (std::uint32_t b = 0; b < fn.blocks.size(); ++b) {
      for (std::uint32_t i = 0; i < fn.blocks[b].instructions.size(); ++i) {
        const auto& inst = fn.blocks[b].instructions[i];
        if ((inst.op == Opcode::LoadShared || inst.op == Opcode::StoreShared) &&
            ts.in_multithreaded_context({f, b, i})) {
          ts.shared_vars.insert(inst.symbol);
        }
      }
    }
  }
  return ts;
}

std::vector<std::vector<int>> held_lock_counts(const ir::Function& fn) {
  constexpr int kUnreached = INT_MAX;
  std::vector<std::vector<int>> in(fn.blocks.size());
  for (std::size_t b = 0; b < fn.blocks.size(); ++b) in[b].assign(fn.blocks[b].instructions.size(), kUnreached);
  std::vector<int> block_in(fn.blocks.size(), kUnreached);
  block_in[fn.entry_block] = 0;
  std::deque<std::uint32_t> work{fn.entry_block};
  while (!work.empty()) {
    const auto b = work.front();
    work.pop_front();
    int cur = block_in[b];
    for (std::size_t i = 0; i < fn.blocks[b].instructions.size(); ++i) {
      in[b][i] = cur;
      const auto op = fn.blocks[b].instructions[i].op;
      if (op == Opcode::Lock) {
        ++cur;
      } else if (op == Opcode::Unlock) {
        if (--cur < 0) throw UnbalancedLocks(fn.name);
      }
    }
    for (auto s : fn.successors(b)) {
      if (cur < block_in[s]) {
        block_in[s] = cur;
        work.push_back(s);
      }
    }
  }
  for (auto& row : in) {
    for (auto& v : row) {
      if (v == kUnreached) v = 0;
    }
  }
  return in;
}

SuspiciousScope extract_suspicious_scope(const Icfg& icfg, const ThreadSets& sets) {
  const ir::Program& p = *icfg.program;
  SuspiciousScope scope;
  for (std::uint32_t f = 0; f < p.functions.size(); ++f) {
    const auto& fn = p.functions[f];
    const auto held = held_lock_counts(fn);  // C2; also rejects unbalanced functions
    if (sets.shared_vars.empty()) continue;

    auto shared = [&](const ir::Instruction& inst) { return sets.shared_vars.count(inst.symbol) > 0; };
    bool writes_shared = false;
    for (const auto& b : fn.blocks) {
      for (const auto& inst : b.instructions) writes_shared |= inst.op == Opcode::StoreShared && shared(inst);
    }

    // Locals data-dependent on a shared variable (flow-insensitive).
    std::vector<bool> tainted(fn.locals.size(), false);
    bool grew = true;
    while (grew) {
      grew = false;
      for (const auto& b : fn.blocks) {
        for (const auto& inst : b.instructions) {
          if (!inst.dst || tainted[*inst.dst]) continue;
          const bool from_shared = inst.op == Opcode::LoadShared && writes_shared && shared(inst);
          if (from_shared || reads_local(inst, tainted)) {
            tainted[*inst.dst] = true;
            grew = true;
          }
        }
      }
    }

    for (std::uint32_t b = 0; b < fn.blocks.size(); ++b) {
      for (std::uint32_t i = 0; i < fn.blocks[b].instructions.size(); ++i) {
        const InstrId id{f, b, i};
        if (!sets.in_multithreaded_context(id)) continue;  // C1
        if (held[b][i] > 0) continue;                      // C2
        const auto& inst = fn.blocks[b].instructions[i];
        const bool c3 = (inst.op == Opcode::StoreShared && shared(inst)) ||
                        (inst.op == Opcode::LoadShared && writes_shared && shared(inst)) ||
                        reads_local(inst, tainted);
        if (c3) scope.instructions.insert(id);
      }
    }
  }
  return scope;
}

StaticAnalysis analyze_program(const ir::Program& program) {
  StaticAnalysis a;
  a.icfg = build_icfg(program);
  a.sets = compute_thread_sets(a.icfg);
  a.scope = extract_suspicious_scope(a.icfg, a.sets);
  return a;
}

std::size_t interleaving_points(const ir::Program& program, const ThreadSets& sets) {
  std::size_t n = 0;
  for (auto f : sets.concurrent_functions) {
    for (const auto& b : program.functions[f].blocks) {
      for (const auto& inst : b.instructions) {
        switch (inst.op) {
          case Opcode::LoadShared:
          case Opcode::StoreShared:
          case Opcode::Lock:
          case Opcode::Unlock:
          case Opcode::Fork:
          case Opcode::Join:
            ++n;
            break;
          default:
            break;
        }
      }
    }
  }
  return n;
}

}  // namespace threadfuzz::analysis
