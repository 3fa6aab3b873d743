// Grey-box fuzzing loop with thread-aware seed selection and repeated
// execution.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "threadfuzz/analysis.hpp"
#include "threadfuzz/executor.hpp"
#include "threadfuzz/mtir.hpp"
#include "threadfuzz/rng.hpp"

namespace threadfuzz::fuzz {

using Bytes = std::vector<std::uint8_t>;

// MUZZ: thread-aware instrumentation plus every dynamic strategy.
// MAFL: block-entry instrumentation plus every dynamic strategy.
// AFL:  block-entry instrumentation, no context feedback, no schedule
//       intervention, repetition by the non-determinism bonus.
enum class Mode { Muzz, Mafl, Afl };

std::string to_string(Mode mode);
std::optional<Mode> parse_mode(std::string_view text);
analysis::InstrumentationMode instrumentation_for(Mode mode);

inline constexpr std::uint32_t kDefaultN0 = 8;
inline constexpr std::uint32_t kDefaultNv = 32;

struct Seed {
  std::uint32_t id = 0;
  std::optional<std::uint32_t> parent;
  Bytes bytes;
  bool initial = false;
  bool is_mt = false;
  std::uint32_t c_m = 0;          // distinct S_ctx seen over this seed's runs
  std::uint32_t n_c = kDefaultN0;  // repetitions used at admission
  double avg_exec_steps = 0;
  std::uint64_t discovered_at = 0;  // campaign clock (executions)
  bool covered_new_trace = false;
  bool covered_new_mt_ctx = false;
  // Novelty not yet exploited by a full mutation round.
  bool pending_new_trace = false;
  bool pending_new_mt_ctx = false;
  std::uint32_t fuzz_rounds = 0;
  std::uint64_t schedule_seed = 0;  // first schedule seed the seed ran with
  std::set<vm::ContextSignature> signatures;
};

// AFL hit-count classes: 1, 2, 3, 4-7, 8-15, 16-31, 32-127, 128+ map to one
// bit each; 0 maps to 0.
std::uint8_t count_class(std::uint8_t hits);

struct CrashRecord {
  std::string key;
  std::string tag;
  std::vector<std::string> frames;  // innermost first, at most kTriageFrames
  Bytes input;
  bool is_mt = false;
  std::uint64_t found_at = 0;
  std::uint64_t schedule_seed = 0;
  std::uint32_t hits = 0;
};

inline constexpr std::size_t kTriageFrames = 3;

struct GlobalState {
  std::vector<std::uint8_t> virgin = std::vector<std::uint8_t>(vm::kMapSize, 0);  // seen count classes
  std::set<vm::ContextSignature> seen_ctx;
  std::uint64_t n_all = 0;  // generated seeds admitted to the queue
  std::uint64_t n_mt = 0;   // ... of which multithreading-relevant
  std::uint64_t n_c = 0;    // distinct crashes
  std::uint64_t n_c_m = 0;
  std::uint64_t n_c_s = 0;
  std::map<std::string, CrashRecord> crashes;
  std::uint64_t context_consults = 0;  // selections that looked at context novelty
};

// True when some touched slot lands in a count class never seen before.
// With update set the classes are merged into the virgin map.
bool cov_new_trace(const vm::ExecutionResult& result, GlobalState& global, bool update = true);
bool cov_new_trace(std::span<const std::pair<std::uint16_t, std::uint8_t>> hits, GlobalState& global,
                   bool update = true);
// True when the run is multithreaded with a signature never seen before.
bool cov_new_mt_ctx(const vm::ExecutionResult& result, GlobalState& global, bool update = true);
bool cov_new_mt_ctx(bool is_mt, const vm::ContextSignature& sig, GlobalState& global, bool update = true);

struct SelectionParams {
  double p_ynt = 0.95;
  double p_ynn = 0.01;
  double p_nnn = 0.15;
};

struct QueueNovelty {
  std::size_t pending_new_trace = 0;
  std::size_t pending_new_mt_ctx = 0;
};

// Whether the queue front is fuzzed this round. With context_aware unset the
// mt-context branch is skipped and never consulted.
bool select_next_seed(const Seed& front, const QueueNovelty& queue, const SelectionParams& params,
                      bool context_aware, Rng& rng, GlobalState& global);

// N_c = N_0 + min(N_v, N_0 * C_m).
std::uint32_t repetition_count(std::uint32_t c_m, std::uint32_t n0 = kDefaultN0, std::uint32_t nv = kDefaultNv);
// N_c = N_0 + N_v * B_v.
std::uint32_t repetition_count_nondeterministic(bool unstable, std::uint32_t n0 = kDefaultN0,
                                                std::uint32_t nv = kDefaultNv);

// ---------------------------------------------------------------------------
// Mutation

enum class MutationOp : std::uint8_t {
  BitFlip,
  ByteFlip,
  RandomByte,
  Arith,
  Interesting,
  DeleteBlock,
  DuplicateBlock,
  Splice,
};
inline constexpr std::size_t kMutationOpCount = 8;

std::string to_string(MutationOp op);

inline constexpr std::int32_t kArithMax = 35;
inline constexpr std::int64_t kInterestingValues[] = {0, 1, -1, 127, 128, 255, 256, 32767, 65535};
inline constexpr std::size_t kMaxBlock = 32;

struct MutationLimits {
  std::size_t max_len = 1024;
};

// Applies one operator. `pool` supplies splice partners.
Bytes apply_mutation(MutationOp op, std::span<const std::uint8_t> input, Rng& rng,
                     std::span<const Bytes> pool, const MutationLimits& limits = {});
// Picks an operator uniformly, then applies it.
Bytes mutate(std::span<const std::uint8_t> input, Rng& rng, std::span<const Bytes> pool,
             const MutationLimits& limits = {}, MutationOp* chosen = nullptr);

// ---------------------------------------------------------------------------
// Triage

std::string crash_key(const vm::ExitStatus& status);

struct TriageOutcome {
  std::string key;
  bool is_new = false;
};

TriageOutcome triage_crash(const vm::ExecutionResult& result, std::span<const std::uint8_t> input,
                           std::uint64_t clock, std::uint64_t schedule_seed, GlobalState& global);

// ---------------------------------------------------------------------------
// Campaign

struct FuzzConfig {
  Mode mode = Mode::Muzz;
  SelectionParams selection;
  std::uint32_t n0 = kDefaultN0;
  std::uint32_t nv = kDefaultNv;
  std::uint64_t budget_execs = 10'000;
  std::optional<double> budget_seconds;  // wall clock; breaks reproducibility
  vm::SchedulerConfig scheduler;          // template; seed and intervention are overridden
  std::uint64_t master_seed = 0;
  analysis::PlanParams plan_params;
  // Mutation chance M = clamp(round(K * speed * size), min, max).
  double mutation_k = 128;
  std::uint32_t mutation_min = 16;
  std::uint32_t mutation_max = 1024;
  MutationLimits mutation;
  std::uint32_t workers = 1;  // >1 evaluates mutants on worker threads
};

struct CampaignReport {
  FuzzConfig config;
  std::size_t deputy_count = 0;
  std::vector<Seed> queue;
  std::vector<CrashRecord> crashes;  // in key order
  std::uint64_t executions = 0;
  std::uint64_t n_all = 0;
  std::uint64_t n_mt = 0;
  std::uint64_t n_c = 0;
  std::uint64_t n_c_m = 0;
  std::uint64_t n_c_s = 0;
  std::uint64_t context_consults = 0;
  std::uint64_t hangs = 0;
  std::uint64_t cycles = 0;
  std::uint32_t next_id = 0;
  double wall_seconds = 0;  // timing only; excluded from determinism checks

  double mt_ratio() const { return n_all == 0 ? 0.0 : static_cast<double>(n_mt) / static_cast<double>(n_all); }
};

struct InitialSeed {
  Bytes bytes;
  std::optional<std::uint32_t> id;  // kept when resuming
};

CampaignReport fuzz_campaign(const ir::Program& program, const FuzzConfig& config,
                             std::span<const InitialSeed> initial_seeds);

// Mutation chance of a seed against the queue averages.
std::uint32_t mutation_chance(const Seed& seed, double avg_steps, double avg_len, const FuzzConfig& config);

// ---------------------------------------------------------------------------
// Corpus directory: queue/id_NNNNNN (+ .json), crashes/key_*/input

std::string seed_file_name(std::uint32_t id);
std::string crash_dir_name(const std::string& key);  // "key_" + 16 hex digits of the key hash
void write_corpus(const std::filesystem::path& dir, const CampaignReport& report);
std::vector<InitialSeed> read_seed_dir(const std::filesystem::path& dir);  // plain seed files
// Queue seeds of an existing corpus, with metadata.
std::vector<Seed> read_queue(const std::filesystem::path& corpus);

}  // namespace threadfuzz::fuzz
