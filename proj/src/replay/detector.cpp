#include <algorithm>
#include <functional>
#include <set>

#include "threadfuzz/replay.hpp"

namespace threadfuzz::replay {

using ir::Opcode;

std::string to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::DataRace: return "data-race";
    case ViolationKind::LockOrderInversion: return "lock-order-inversion";
    case ViolationKind::Deadlock: return "deadlock";
    case ViolationKind::ThreadLeak: return "thread-leak";
  }
  return "?";
}

std::string Violation::key(const ir::Program& program) const {
  std::string k = to_string(kind) + "|";
  for (std::size_t i = 0; i < sites.size(); ++i) k += (i ? "," : "") + program.describe(sites[i]);
  return k + "|" + var;
}

void VectorClock::set(std::uint32_t t, std::uint32_t v) {
  if (t >= c_.size()) c_.resize(t + 1, 0);
  c_[t] = v;
}

void VectorClock::join(const VectorClock& o) {
  if (o.c_.size() > c_.size()) c_.resize(o.c_.size(), 0);
  for (std::size_t i = 0; i < o.c_.size(); ++i) c_[i] = std::max(c_[i], o.c_[i]);
}

bool VectorClock::leq(const VectorClock& o) const {
  for (std::size_t i = 0; i < c_.size(); ++i) {
    if (c_[i] > o.get(static_cast<std::uint32_t>(i))) return false;
  }
  return true;
}

bool operator==(const VectorClock& a, const VectorClock& b) { return a.leq(b) && b.leq(a); }

namespace {

struct Access {
  std::uint32_t thread;
  InstrId site;
  bool write;
  VectorClock clock;
  std::set<std::int32_t> locks;
};

struct LockEdge {
  std::int32_t from, to;
  std::uint32_t thread;
  InstrId site;  // acquisition of `to`
};

std::vector<std::vector<std::int32_t>> strongly_connected(const std::set<std::int32_t>& nodes,
                                                          const std::vector<LockEdge>& edges) {
  std::map<std::int32_t, std::vector<std::int32_t>> adj;
  for (const auto& e : edges) adj[e.from].push_back(e.to);
  std::map<std::int32_t, int> index, low;
  std::set<std::int32_t> on_stack;
  std::vector<std::int32_t> stack;
  std::vector<std::vector<std::int32_t>> out;
  int counter = 0;
  std::function<void(std::int32_t)> visit = [&](std::int32_t v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack.insert(v);
    for (auto w : adj[v]) {
      if (!index.count(w)) {
        visit(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack.count(w)) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<std::int32_t> comp;
      std::int32_t w;
      do {
        w = stack.back();
        stack.pop_back();
        on_stack.erase(w);
        comp.push_back(w);
      } while (w != v);
      std::sort(comp.begin(), comp.end());
      out.push_back(std::move(comp));
    }
  };
  for (auto n : nodes) {
    if (!index.count(n)) visit(n);
  }
  return out;
}

}  // namespace

std::vector<Violation> detect_violations(const ir::Program& program, std::span<const vm::TraceEvent> trace,
                                         const vm::ExitStatus& status) {
  std::vector<VectorClock> clock(1);
  clock[0].set(0, 1);
  std::vector<std::vector<std::pair<std::int32_t, InstrId>>> held(1);  // per thread: (mutex, acquire site)
  std::map<std::int32_t, VectorClock> released;
  std::map<std::int32_t, std::uint32_t> owner;
  std::map<std::uint32_t, InstrId> fork_site;
  std::set<std::uint32_t> joined;
  std::map<std::int32_t, std::vector<Access>> accesses;
  std::vector<LockEdge> lock_edges;
  std::set<std::int32_t> lock_nodes;

  for (const auto& e : trace) {
    const auto t = e.nctx;
    if (t >= clock.size()) throw MalformedTrace("event from thread " + std::to_string(t) + " before its fork");
    switch (e.op) {
      case Opcode::LoadShared:
      case Opcode::StoreShared: {
        if (e.global < 0) break;  // crashed on an undeclared global
        std::set<std::int32_t> ls;
        for (const auto& [m, site] : held[t]) ls.insert(m);
        accesses[e.global].push_back({t, e.site, e.writes, clock[t], std::move(ls)});
        break;
      }
      case Opcode::Fork: {
        if (e.other < 0) break;
        const auto child = static_cast<std::uint32_t>(e.other);
        if (child != clock.size()) throw MalformedTrace("non-dense thread numbering");
        clock.push_back(clock[t]);
        clock.back().tick(child);
        held.emplace_back();
        fork_site[child] = e.site;
        clock[t].tick(t);
        break;
      }
      case Opcode::Join: {
        if (e.other < 0) break;
        const auto child = static_cast<std::uint32_t>(e.other);
        if (child >= clock.size()) throw MalformedTrace("join of unknown thread");
        clock[t].join(clock[child]);
        joined.insert(child);
        break;
      }
      case Opcode::Lock: {
        if (e.mutex < 0) break;
        if (owner.count(e.mutex)) throw MalformedTrace("lock of a held mutex");
        owner[e.mutex] = t;
        if (auto it = released.find(e.mutex); it != released.end()) clock[t].join(it->second);
        lock_nodes.insert(e.mutex);
        for (const auto& [h, site] : held[t]) lock_edges.push_back({h, e.mutex, t, e.site});
        held[t].push_back({e.mutex, e.site});
        break;
      }
      case Opcode::Unlock: {
        if (e.mutex < 0) break;  // the unlock crashed
        auto it = owner.find(e.mutex);
        if (it == owner.end() || it->second != t) throw MalformedTrace("unlock of a mutex not held");
        owner.erase(it);
        auto& h = held[t];
        h.erase(std::find_if(h.begin(), h.end(), [&](const auto& p) { return p.first == e.mutex; }));
        released[e.mutex] = clock[t];
        clock[t].tick(t);
        break;
      }
      default:
        break;
    }
  }

  std::vector<Violation> out;
  std::set<std::string> seen;
  auto add = [&](Violation v) {
    if (seen.insert(v.key(program)).second) out.push_back(std::move(v));
  };

  for (const auto& [g, list] : accesses) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      for (std::size_t j = i + 1; j < list.size(); ++j) {
        const auto& a = list[i];
        const auto& b = list[j];
        if (a.thread == b.thread || (!a.write && !b.write)) continue;
        if (a.clock.get(a.thread) <= b.clock.get(a.thread)) continue;  // a happens before b
        const bool common_lock = std::any_of(a.locks.begin(), a.locks.end(), [&](auto m) { return b.locks.count(m); });
        if (common_lock) continue;
        Violation v;
        v.kind = ViolationKind::DataRace;
        v.sites = {a.site, b.site};
        std::sort(v.sites.begin(), v.sites.end());
        v.var = program.globals[static_cast<std::size_t>(g)].name;
        v.threads = {std::min(a.thread, b.thread), std::max(a.thread, b.thread)};
        add(std::move(v));
      }
    }
  }

  for (const auto& comp : strongly_connected(lock_nodes, lock_edges)) {
    if (comp.size() < 2) continue;
    const std::set<std::int32_t> members(comp.begin(), comp.end());
    std::set<std::uint32_t> threads;
    std::set<InstrId> sites;
    for (const auto& e : lock_edges) {
      if (members.count(e.from) && members.count(e.to)) {
        threads.insert(e.thread);
        sites.insert(e.site);
      }
    }
    if (threads.size() < 2) continue;
    Violation v;
    v.kind = ViolationKind::LockOrderInversion;
    v.sites.assign(sites.begin(), sites.end());
    for (std::size_t i = 0; i < comp.size(); ++i) v.var += (i ? ",m" : "m") + std::to_string(comp[i]);
    v.threads.assign(threads.begin(), threads.end());
    add(std::move(v));
  }

  if (status.kind == vm::ExitKind::Deadlock) {
    Violation v;
    v.kind = ViolationKind::Deadlock;
    for (const auto& b : status.blocked) {
      v.sites.push_back(b.site);
      v.threads.push_back(b.nctx);
    }
    std::sort(v.sites.begin(), v.sites.end());
    std::sort(v.threads.begin(), v.threads.end());
    add(std::move(v));
  }

  if (status.kind == vm::ExitKind::Exit) {
    for (const auto& [child, site] : fork_site) {
      if (joined.count(child)) continue;
      Violation v;
      v.kind = ViolationKind::ThreadLeak;
      v.sites = {site};
      v.threads = {child};
      add(std::move(v));
    }
  }
  return out;
}

}  // namespace threadfuzz::replay
