// Concurrency-bug detection over VM traces and seed replay patterns.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "threadfuzz/analysis.hpp"
#include "threadfuzz/executor.hpp"
#include "threadfuzz/mtir.hpp"

namespace threadfuzz::replay {

using ir::InstrId;

class MalformedTrace : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ViolationKind { DataRace, LockOrderInversion, Deadlock, ThreadLeak };

std::string to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind = ViolationKind::DataRace;
  std::vector<InstrId> sites;          // sorted
  std::string var;                     // race: global; lock order: "m<a>,m<b>"
  std::vector<std::uint32_t> threads;  // N_ctx values involved, sorted
  std::uint64_t schedule_seed = 0;

  // Root-cause key: kind, sorted sites and variable.
  std::string key(const ir::Program& program) const;
};

// Vector clock over N_ctx values; absent components are 0.
class VectorClock {
 public:
  std::uint32_t get(std::uint32_t t) const { return t < c_.size() ? c_[t] : 0; }
  void set(std::uint32_t t, std::uint32_t v);
  void tick(std::uint32_t t) { set(t, get(t) + 1); }
  void join(const VectorClock& o);
  // Every component <= the other's.
  bool leq(const VectorClock& o) const;
  friend bool operator==(const VectorClock& a, const VectorClock& b);

 private:
  std::vector<std::uint32_t> c_;
};

// Races need vector-clock concurrency (fork/join and release->acquire edges)
// plus disjoint held-lock sets. Lock-order inversions come from cycles in the
// lock-acquisition graph across threads; deadlocks and unjoined threads are
// read off the run's end state.
std::vector<Violation> detect_violations(const ir::Program& program, std::span<const vm::TraceEvent> trace,
                                         const vm::ExitStatus& status);

// ---------------------------------------------------------------------------

enum class Pattern { P1, P2 };
std::string to_string(Pattern p);

struct ReplaySeed {
  std::uint32_t id = 0;
  std::vector<std::uint8_t> bytes;
  std::uint32_t n_c = 8;
};

struct ReplayConfig {
  Pattern pattern = Pattern::P1;
  std::uint64_t budget_execs = 1000;
  std::uint64_t master_seed = 0;
  std::uint32_t n0 = 8;
  bool afl_corpus = false;  // P2 then replays every seed 5 times per turn
  vm::SchedulerConfig scheduler;
  std::vector<std::string> ground_truth;  // keys whose joint exposure time is reported
};

struct BugReport {
  std::string key;
  ViolationKind kind = ViolationKind::DataRace;
  std::vector<std::string> sites;
  std::string var;
  std::uint64_t first_exposure = 0;  // 1-based execution index
  std::uint64_t exposures = 0;
  std::uint32_t first_seed = 0;
  std::uint64_t schedule_seed = 0;
};

struct ReplayReport {
  Pattern pattern = Pattern::P1;
  std::uint64_t budget = 0;
  std::uint64_t executions = 0;
  std::uint64_t violating_executions = 0;  // N_e^m
  std::vector<BugReport> bugs;             // N_B^m = bugs.size(), key order
  std::map<std::string, std::uint64_t> violations_by_kind;
  std::map<std::uint32_t, std::uint64_t> executions_per_seed;
  std::optional<std::uint64_t> time_to_expose_all;  // ground truth fully exposed
  double wall_seconds = 0;

  const BugReport* find(const std::string& key) const;
};

// Executions per turn for one seed: 1 under P1; N_c / N_0 clamped to 1..5
// under P2 (5 for AFL corpora).
std::uint32_t executions_per_turn(const ReplaySeed& seed, const ReplayConfig& config);

ReplayReport replay(const ir::Program& program, std::span<const ReplaySeed> corpus, const ReplayConfig& config);
ReplayReport replay_p1(const ir::Program& program, std::span<const ReplaySeed> corpus, ReplayConfig config);
ReplayReport replay_p2(const ir::Program& program, std::span<const ReplaySeed> corpus, ReplayConfig config);

}  // namespace threadfuzz::replay
