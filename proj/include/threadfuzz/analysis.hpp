// Thread-aware static analysis and coverage instrumentation planning.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "threadfuzz/mtir.hpp"

namespace threadfuzz::analysis {

using ir::InstrId;

// Interprocedural CFG whose nodes are instructions (flat ids).
struct Icfg {
  struct InterEdge {
    InstrId site;
    std::uint32_t callee = 0;
  };

  const ir::Program* program = nullptr;
  std::vector<std::vector<std::uint32_t>> succ;  // intra-procedural
  std::vector<std::vector<std::uint32_t>> pred;
  std::vector<InterEdge> call_edges;  // one per Call instruction
  std::vector<InterEdge> fork_edges;  // one per Fork instruction

  std::size_t node_count() const { return succ.size(); }
  // Functions reachable from `roots` through call and fork edges (roots included).
  std::set<std::uint32_t> reachable_functions(const std::set<std::uint32_t>& roots) const;
};

Icfg build_icfg(const ir::Program& program);

struct ThreadSets {
  std::set<InstrId> fork_sites;    // TFork
  std::set<InstrId> join_sites;    // TJoin
  std::set<InstrId> lock_sites;    // TLock
  std::set<InstrId> unlock_sites;  // TUnLock
  std::set<std::string> shared_vars;           // TShareVar
  std::set<std::uint32_t> forked_functions;    // F_fork
  // Functions that may run concurrently with another thread: everything
  // reachable from F_fork plus callees of call sites inside a forking
  // function's multithreaded region.
  std::set<std::uint32_t> concurrent_functions;
  // Instructions of forking functions that execute while a forked thread
  // may still be alive.
  std::set<InstrId> concurrent_region;

  // C1 for a single instruction.
  bool in_multithreaded_context(InstrId id) const {
    return concurrent_functions.count(id.function) > 0 || concurrent_region.count(id) > 0;
  }
};

ThreadSets compute_thread_sets(const Icfg& icfg);

class UnbalancedLocks : public std::runtime_error {
 public:
  explicit UnbalancedLocks(const std::string& function)
      : std::runtime_error("unbalanced lock release in function '" + function + "'"), function_(function) {}
  const std::string& function() const { return function_; }

 private:
  std::string function_;
};

// Held-lock count before each instruction of `fn` (forward dataflow, meet =
// minimum). Throws UnbalancedLocks when some path releases more than it holds.
std::vector<std::vector<int>> held_lock_counts(const ir::Function& fn);

struct SuspiciousScope {
  std::set<InstrId> instructions;  // L_m
  bool contains(InstrId id) const { return instructions.count(id) > 0; }
  std::size_t size() const { return instructions.size(); }
};

SuspiciousScope extract_suspicious_scope(const Icfg& icfg, const ThreadSets& sets);

// ---------------------------------------------------------------------------
// Instrumentation probabilities.

inline constexpr double kDefaultSelectiveBound = 0.5;      // P_s0
inline constexpr double kDefaultInterleavingBound = 0.33;  // P_m0
inline constexpr double kDegenerateComplexityProbability = 0.1;

// E(f): intra-procedural CFG edges between blocks.
std::size_t cfg_edge_count(const ir::Function& fn);
// M_c(f) = E - N + 2.
long cyclomatic_complexity(std::size_t edges, std::size_t blocks);
// P_cc = min(M_c / 10, 1), with M_c <= 0 clamped to 0.1.
double cyclomatic_probability(std::size_t edges, std::size_t blocks);
double cyclomatic_probability(const ir::Function& fn);
// P_s = min(P_cc, P_s0).
double selective_probability(double p_cc, double p_s0 = kDefaultSelectiveBound);
double selective_probability(const ir::Function& fn, double p_s0 = kDefaultSelectiveBound);
// P_m = min(P_cc * N_m(b) / N(b), P_m0).
double interleaving_probability(double p_cc, std::size_t memory_instructions, std::size_t instructions,
                                double p_m0 = kDefaultInterleavingBound);
double interleaving_probability(const ir::Function& fn, std::uint32_t block,
                                double p_m0 = kDefaultInterleavingBound);

// ---------------------------------------------------------------------------
// Coverage-oriented instrumentation.

enum class InstrumentationMode { Muzz, Afl };

std::string to_string(InstrumentationMode mode);

struct PlanParams {
  double selective_bound = kDefaultSelectiveBound;       // P_s0
  double interleaving_bound = kDefaultInterleavingBound;  // P_m0
  std::optional<double> forced_interleaving;             // overrides P_m for every block
};

struct FunctionAudit {
  std::string name;
  std::size_t edges = 0;
  std::size_t blocks = 0;
  long complexity = 0;  // M_c
  double p_cc = 0;
  double p_s = 0;
  std::vector<double> block_p_m;
  std::vector<bool> block_in_scope;  // L_m(b) non-empty
};

struct InstrumentationPlan {
  InstrumentationMode mode = InstrumentationMode::Afl;
  std::uint64_t rng_seed = 0;
  PlanParams params;
  std::map<InstrId, std::uint16_t> deputies;  // instruction -> label
  std::vector<FunctionAudit> audit;
  bool labels_distinct = true;

  std::size_t deputy_count() const { return deputies.size(); }
  bool is_deputy(InstrId id) const { return deputies.count(id) > 0; }

  // Per flat instruction id: label, or -1 when not a deputy.
  std::vector<std::int32_t> label_table(const ir::Program& program) const;
};

// Placement draws one u ~ U[0,1) per instruction in declaration order and
// keeps the instruction when u < its probability; labels are drawn afterwards
// from the same stream.
InstrumentationPlan plan_instrumentation(const ir::Program& program, const SuspiciousScope& scope,
                                         InstrumentationMode mode, std::uint64_t rng_seed,
                                         const PlanParams& params = {});

// Convenience: ICFG, thread sets and scope in one call.
struct StaticAnalysis {
  Icfg icfg;
  ThreadSets sets;
  SuspiciousScope scope;
};

StaticAnalysis analyze_program(const ir::Program& program);

// Static count of shared-access and synchronisation instructions inside
// concurrently running functions.
std::size_t interleaving_points(const ir::Program& program, const ThreadSets& sets);

}  // namespace threadfuzz::analysis
