#pragma once
#include "brf/astgen.hpp"
#include "brf/runtime.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace brf {

// One fuzzing input: a generated program plus the simulated syscall
// sequence that creates its maps, loads, attaches, and triggers it. The
// prologue is the dependency closure of the program and is never mutated;
// only trigger payloads and auxiliary map syscalls are.
struct PrologueCall {
    enum Kind : std::uint8_t { kMapCreate, kLoad, kAttach };
    Kind kind = kMapCreate;
    int ordinal = 0; // map ordinal for kMapCreate

    bool operator==(const PrologueCall&) const = default;
};

struct TriggerCall {
    bool is_test_run = true;
    AttachKind kind = AttachKind::socket; // for event triggers
    std::vector<std::uint8_t> payload;

    bool operator==(const TriggerCall&) const = default;
};

struct AuxCall {
    enum Kind : std::uint8_t { kUpdate, kLookup, kDelete };
    Kind kind = kUpdate;
    int ordinal = 0; // map ordinal
    std::vector<std::uint8_t> key;
    std::vector<std::uint8_t> value;
    bool value_is_prog_id = false; // PROG_ARRAY slot: value = loaded prog id

    bool operator==(const AuxCall&) const = default;
};

struct FuzzInput {
    std::uint64_t kernel_seed = 0;
    ProgramAst ast;
    std::vector<PrologueCall> fixed_prologue;
    std::vector<AuxCall> aux_calls;       // run between prologue and triggers
    std::vector<TriggerCall> trigger_calls; // always at least one test_run

    bool operator==(const FuzzInput&) const = default;
};

FuzzInput build_input(const ProgramAst& ast, std::uint64_t kernel_seed, Rng& rng,
                      const Catalog& cat);

std::string serialize_input(const FuzzInput& input, const Catalog& cat);
std::variant<FuzzInput, AstError> parse_input(const std::string& text, const Catalog& cat);
std::string input_digest(const FuzzInput& input, const Catalog& cat);

// Everything observed while executing one input against a fresh kernel.
struct ExecOutcome {
    bool compiled = false;
    bool load_ok = false;
    bool attach_ok = false;
    bool executed = false; // at least one engine run completed
    std::string reject_rule; // verifier rule_id when load failed
    CoverageMap signature;
    std::vector<BugReport> findings; // input_digest filled in
    std::uint32_t insns = 0;
    std::uint32_t helpers = 0;
    std::uint32_t maps = 0;
};

ExecOutcome execute_input(const FuzzInput& input, SimKernel& kernel, const Catalog& cat);

struct CorpusEntry {
    FuzzInput input;
    CoverageMap signature;
    std::uint32_t insns = 0;
    std::uint32_t helpers = 0;
    std::uint32_t maps = 0;
};

// Coverage-novelty-gated input store; insertion requires the signature to
// hit a probe the corpus has not seen.
class Corpus {
  public:
    bool insert_if_novel(CorpusEntry entry);
    // Union-merge another corpus; commutative and idempotent.
    void merge(const Corpus& o);
    const std::vector<CorpusEntry>& entries() const { return entries_; }
    const CoverageMap& total_coverage() const { return total_; }
    const std::set<std::string>& digests() const { return digests_; }
    void set_digest_fn(std::function<std::string(const FuzzInput&)> fn) { digest_ = std::move(fn); }

  private:
    std::vector<CorpusEntry> entries_;
    CoverageMap total_;
    std::set<std::string> digests_;
    std::function<std::string(const FuzzInput&)> digest_;
};

struct SchedulerConfig {
    double p_generate = 0.3;
    double p_mutate_prog = 0.5;
    double p_mutate_aux = 0.2;
    int batch = 16; // inputs per worker between corpus merges
};

enum class ActionKind : std::uint8_t { generate_new, mutate_program, mutate_aux };

struct Action {
    ActionKind kind = ActionKind::generate_new;
    std::size_t entry = 0; // corpus index for the mutate actions
};

Action schedule_next(const Corpus& corpus, const SchedulerConfig& cfg, Rng& rng);

// Session budget: wall-clock ("600s") or input count ("5000i").
struct Budget {
    std::optional<double> seconds;
    std::optional<std::uint64_t> inputs;
};
std::optional<Budget> parse_budget(const std::string& text);

struct Stats {
    std::uint64_t inputs_total = 0;
    std::uint64_t generated = 0;
    std::uint64_t mutated_prog = 0;
    std::uint64_t mutated_aux = 0;
    std::uint64_t loads_attempted = 0;
    std::uint64_t loads_succeeded = 0;
    std::uint64_t attaches_attempted = 0;
    std::uint64_t attaches_succeeded = 0;
    std::uint64_t inputs_unique = 0; // distinct programs attempted
    std::uint64_t executed_unique = 0;
    std::uint64_t corpus_size = 0;
    std::uint64_t findings_total = 0;
    std::map<std::string, std::uint64_t> rule_histogram;
    // Expressiveness over verifier-accepted programs.
    std::uint64_t sum_insns = 0, max_insns = 0;
    std::uint64_t sum_helpers = 0, max_helpers = 0;
    std::uint64_t sum_maps = 0, max_maps = 0;
    // (inputs processed, probes covered) checkpoints; monotone by union.
    std::vector<std::pair<std::uint64_t, std::uint64_t>> coverage_curve;
    std::uint64_t probes_covered = 0;
};

struct FuzzConfig {
    std::uint64_t seed = 1;
    int workers = 1;
    SchedulerConfig sched;
    GenConfig gen;
    SeededBugSet bugs;
    bool coverage_guided = true; // gate corpus insertion (guided vs blind)
    Budget budget{std::nullopt, 1000};
    const Catalog* catalog = nullptr; // builtin when null
};

struct FuzzSession {
    Stats stats;
    Corpus corpus;
    std::vector<BugReport> findings; // deduped by (oracle, location)
    // The input that first produced each deduped finding, for replay.
    std::vector<std::pair<FuzzInput, BugReport>> reproducers;
    CoverageMap coverage;
};

FuzzSession fuzz_loop(const FuzzConfig& cfg);

// Greedy reduction: drops aux calls, triggers, and program statements while
// the predicate keeps holding; the prologue shrinks only through map-dep
// recomputation.
FuzzInput minimize_input(const FuzzInput& input,
                         const std::function<bool(const FuzzInput&)>& predicate,
                         const Catalog& cat);

// Human-readable summary with rate +/- standard error, Table-style.
std::string report_stats(const Stats& stats);
// Line-oriented machine form; deterministic for identical sessions.
std::string stats_lines(const Stats& stats, const FuzzConfig& cfg,
                        const std::vector<BugReport>& findings);

} // namespace brf
