#include "race_oracle.hpp"

#include <algorithm>
#include <map>
#include <vector>

namespace threadfuzz::testing {

std::set<std::string> naive_races(const ir::Program& program, std::span<const vm::TraceEvent> trace) {
  const std::size_t n = trace.size();
  std::vector<std::vector<std::size_t>> succ(n);
  std::map<std::uint32_t, std::size_t> last_of_thread;
  std::map<std::uint32_t, std::size_t> fork_event;  // child -> fork index
  std::map<std::int32_t, std::size_t> last_unlock;

  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = trace[i];
    if (auto it = last_of_thread.find(e.nctx); it != last_of_thread.end()) {
      succ[it->second].push_back(i);
    } else if (auto f = fork_event.find(e.nctx); f != fork_event.end()) {
      succ[f->second].push_back(i);
    }
    last_of_thread[e.nctx] = i;
    if (e.op == ir::Opcode::Fork && e.other >= 0) fork_event[static_cast<std::uint32_t>(e.other)] = i;
    if (e.op == ir::Opcode::Join && e.other >= 0) {
      // The joined thread's last event, if it ran at all; otherwise its fork.
      const auto child = static_cast<std::uint32_t>(e.other);
      if (auto it = last_of_thread.find(child); it != last_of_thread.end()) {
        succ[it->second].push_back(i);
      } else if (auto f = fork_event.find(child); f != fork_event.end()) {
        succ[f->second].push_back(i);
      }
    }
    if (e.op == ir::Opcode::Lock && e.mutex >= 0) {
      if (auto it = last_unlock.find(e.mutex); it != last_unlock.end()) succ[it->second].push_back(i);
    }
    if (e.op == ir::Opcode::Unlock && e.mutex >= 0) last_unlock[e.mutex] = i;
  }

  // reach[i][j]: i happens before j. Edges only point forward in the trace,
  // so a reverse sweep closes the relation.
  std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
  for (std::size_t i = n; i-- > 0;) {
    for (auto j : succ[i]) {
      reach[i][j] = true;
      for (std::size_t k = j + 1; k < n; ++k) {
        if (reach[j][k]) reach[i][k] = true;
      }
    }
  }

  // Locks held by the issuing thread at every event.
  std::vector<std::set<std::int32_t>> lockset(n);
  std::map<std::uint32_t, std::set<std::int32_t>> held;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = trace[i];
    lockset[i] = held[e.nctx];
    if (e.op == ir::Opcode::Lock && e.mutex >= 0) held[e.nctx].insert(e.mutex);
    if (e.op == ir::Opcode::Unlock && e.mutex >= 0) held[e.nctx].erase(e.mutex);
  }

  std::set<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = trace[i];
    if (a.global < 0 || (!a.reads && !a.writes)) continue;
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& b = trace[j];
      if (b.global != a.global || b.nctx == a.nctx || (!a.writes && !b.writes)) continue;
      if (reach[i][j]) continue;
      bool shared_lock = false;
      for (auto m : lockset[i]) shared_lock |= lockset[j].count(m) > 0;
      if (shared_lock) continue;
      auto s1 = a.site, s2 = b.site;
      if (s2 < s1) std::swap(s1, s2);
      out.insert(program.describe(s1) + "," + program.describe(s2) + "|" +
                 program.globals[static_cast<std::size_t>(a.global)].name);
    }
  }
  return out;
}

}  // namespace threadfuzz::testing
