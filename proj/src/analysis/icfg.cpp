#include <deque>

#include "threadfuzz/analysis.hpp"

namespace threadfuzz::analysis {

using ir::Opcode;

Icfg build_icfg(const ir::Program& program) {
  Icfg g;
  g.program = &program;
  g.succ.assign(program.instruction_count(), {});
  g.pred.assign(program.instruction_count(), {});
  for (std::uint32_t f = 0; f < program.functions.size(); ++f) {
    const auto& fn = program.functions[f];
    for (std::uint32_t b = 0; b < fn.blocks.size(); ++b) {
      const auto& insts = fn.blocks[b].instructions;
      for (std::uint32_t i = 0; i < insts.size(); ++i) {
        const InstrId id{f, b, i};
        const auto from = program.flat_index(id);
        if (i + 1 < insts.size()) {
          g.succ[from].push_back(program.flat_index({f, b, i + 1}));
        } else {
          for (auto s : fn.successors(b)) g.succ[from].push_back(program.flat_index({f, s, 0}));
        }
        if (insts[i].op == Opcode::Call) g.call_edges.push_back({id, insts[i].target});
        if (insts[i].op == Opcode::Fork) g.fork_edges.push_back({id, insts[i].target});
      }
    }
  }
  for (std::uint32_t n = 0; n < g.succ.size(); ++n) {
    for (auto s : g.succ[n]) g.pred[s].push_back(n);
  }
  return g;
}

std::set<std::uint32_t> Icfg::reachable_functions(const std::set<std::uint32_t>& roots) const {
  std::set<std::uint32_t> seen(roots.begin(), roots.end());
  std::deque<std::uint32_t> work(roots.begin(), roots.end());
  while (!work.empty()) {
    const auto f = work.front();
    work.pop_front();
    auto visit = [&](const std::vector<InterEdge>& edges) {
      for (const auto& e : edges) {
        if (e.site.function == f && seen.insert(e.callee).second) work.push_back(e.callee);
      }
    };
    visit(call_edges);
    visit(fork_edges);
  }
  return seen;
}

}  // namespace threadfuzz::analysis
