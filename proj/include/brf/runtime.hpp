#pragma once
#include "brf/ast.hpp"
#include "brf/catalog.hpp"
#include "brf/isa.hpp"
#include "brf/lower.hpp"
#include "brf/rng.hpp"
#include "brf/verifier.hpp"

#include <bit>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace brf {

// Static probe id space for execution-attributed coverage. Fixed at build;
// both execution engines hit the same ids so coverage is engine-independent.
namespace probes {

constexpr std::uint32_t kOpcodeBase = 0;   // + opcode byte
constexpr std::uint32_t kHelperBase = 256; // + helper id
constexpr std::uint32_t kMapBase = 448;    // + map type * kMapStride + path

constexpr std::uint32_t kMapStride = 16;
enum MapPath : std::uint32_t {
    kLookupHit = 0,
    kLookupMiss,
    kUpdateNew,
    kUpdateReplace,
    kUpdateReject,
    kDeleteHit,
    kDeleteMiss,
    kPushOk,
    kPushReject,
    kPopOk,
    kPopEmpty,
    kPeekOk,
    kPeekEmpty,
    kReserveOk,
    kReserveReject,
    kCommit,
};

constexpr std::uint32_t kTailcallTransfer = 608;
constexpr std::uint32_t kTailcallBadKey = 609;
constexpr std::uint32_t kTailcallEmptySlot = 610;
constexpr std::uint32_t kTailcallDepthLimit = 611;
constexpr std::uint32_t kCtxBuildBase = 612; // + program type
constexpr std::uint32_t kLockBucket = 618;
constexpr std::uint32_t kLockQueue = 619;
constexpr std::uint32_t kRingbufLeak = 620;
constexpr std::uint32_t kEngineDivergence = 621;

constexpr std::uint32_t kNumProbes = 640;

std::uint32_t opcode(std::uint8_t op);
std::uint32_t helper(HelperId id);
std::uint32_t map_path(MapTypeId mt, MapPath path);

} // namespace probes

// Execution-attributed counters over the static probe space, recorded as
// AFL-style log-scale hit buckets (1, 2, 3, 4-7, 8-15, 16-31, 32-127,
// 128-511, 512-2047, 2048-8191, 8192-32767, 32768+). A coverage unit is a
// (probe, bucket) pair; merge is an idempotent union of units, so
// accumulation is monotone regardless of merge order.
class CoverageMap {
  public:
    static constexpr int kBuckets = 12;
    static int bucket(std::uint32_t n); // n >= 1

    CoverageMap() : counts_(probes::kNumProbes, 0), masks_(probes::kNumProbes, 0) {}

    void hit(std::uint32_t id);
    bool test(std::uint32_t id) const { return id < masks_.size() && masks_[id] != 0; }
    // Number of lit (probe, bucket) units.
    std::size_t count() const { return units_; }
    // Number of distinct probes hit at least once.
    std::size_t distinct() const;
    // Number of lit buckets for one probe (0 if never hit).
    int depth(std::uint32_t id) const {
        return id < masks_.size() ? std::popcount(static_cast<unsigned>(masks_[id])) : 0;
    }
    void merge(const CoverageMap& o);
    // Adds o's raw counts (saturating), lighting any buckets passed; used to
    // attribute repeated executions within one kernel session. Unlike merge,
    // accumulating the same delta twice deepens buckets.
    void accumulate(const CoverageMap& o);
    // True if o lights at least one unit this map has not seen.
    bool would_grow(const CoverageMap& o) const;
    std::vector<std::uint32_t> ids() const; // distinct probe ids

    bool operator==(const CoverageMap& o) const { return masks_ == o.masks_; }

  private:
    std::vector<std::uint32_t> counts_;
    std::vector<std::uint16_t> masks_; // bit i set once the count reaches bucket i
    std::size_t units_ = 0;
};

enum class BugOracle : std::uint8_t {
    oob_access,
    null_deref,
    ref_leak_runtime,
    lock_context_violation,
    exec_divergence,
};
const char* to_string(BugOracle o);

struct BugReport {
    BugOracle oracle = BugOracle::oob_access;
    std::uint32_t location = 0; // probe id
    std::string detail;
    std::string input_digest; // filled by the harness

    bool operator==(const BugReport&) const = default;
};

struct ExecResult {
    std::uint64_t return_value = 0;
    std::vector<std::pair<HelperId, std::uint64_t>> helper_trace; // (id, args digest)
    std::uint64_t insn_count = 0;
    CoverageMap coverage_delta;
    std::vector<BugReport> oracle_findings;
    bool aborted = false; // stopped early on an oracle finding or bad opcode
};

struct SeededBugSet {
    bool tailcall_oob = false;
    bool lookup_null_passthrough = false;
    bool ringbuf_leak = false;
    bool queue_lock_ctx = false;
    bool shift_ub = false;

    bool any() const {
        return tailcall_oob || lookup_null_passthrough || ringbuf_leak || queue_lock_ctx ||
               shift_ub;
    }
    static SeededBugSet all();
    // "all", "none", or a comma-separated list of bug names.
    static std::optional<SeededBugSet> parse(const std::string& text);
    static const std::vector<std::string>& names();
};

// Context a lock acquisition happened in, lockdep-style.
enum class AcqContext : std::uint8_t { task_irq_enabled, task_irq_disabled, interrupt };

class LockContextTracker {
  public:
    // held: lock classes already held when acquiring (ordering observations).
    void record_acquire(std::uint64_t lock_class, AcqContext ctx,
                        const std::vector<std::uint64_t>& held = {});
    // Self-deadlock rule (same class in interrupt and irq-enabled task
    // context) and cyclic pairwise ordering.
    std::vector<BugReport> check() const;
    void clear();

  private:
    std::map<std::uint64_t, std::set<AcqContext>> contexts_;
    std::set<std::pair<std::uint64_t, std::uint64_t>> order_edges_;
};

struct RuntimeError {
    std::string code;
    std::string message;
};

constexpr std::uint64_t kInsnCap = 1'000'000;
constexpr int kTailCallDepthCap = 33;
constexpr int kNumCpus = 4;
constexpr std::uint32_t kArenaSize = 4096;

struct MapInstance {
    std::uint32_t id = 0;
    MapSpecRequest spec;
    // Storage by family; only the fields for spec.map_type are used.
    std::vector<std::uint8_t> flat;     // ARRAY / PERCPU_ARRAY (cpu-major)
    std::map<std::vector<std::uint8_t>, std::vector<std::uint8_t>> table; // HASH / LRU_HASH
    std::map<std::vector<std::uint8_t>, std::uint64_t> recency;           // LRU bookkeeping
    std::deque<std::vector<std::uint8_t>> fifo; // QUEUE (front=oldest) / STACK (back=top)
    std::vector<std::uint32_t> prog_slots;      // PROG_ARRAY (0 = empty)
    std::vector<std::uint8_t> ring;             // RINGBUF region
    std::uint64_t ring_used = 0;                // committed + outstanding bytes
    std::vector<std::uint8_t> storage_slot;     // CGROUP_STORAGE single value
    std::uint64_t events = 0;                   // PERF_EVENT_ARRAY output count
    std::uint64_t tick = 0;
    // Values removed while a same-execution pointer may still reference them
    // stay alive here until the next execution (models the RCU grace period).
    std::vector<std::vector<std::uint8_t>> graveyard;
};

struct LoadedProgram {
    std::uint32_t id = 0;
    RawProgram image; // relocated: wide loads hold runtime map ids
    ProgramTypeId type = ProgramTypeId::SOCKET_FILTER;
    VerifySummary summary;
    std::vector<std::uint32_t> map_handles; // by ordinal
};

enum class EngineKind : std::uint8_t { interp, linear };

// The simulated kernel: maps, programs, attach points, helpers, coverage,
// oracles. Owned by one worker; copyable so the differential runner can
// execute both engines from the same snapshot.
class SimKernel {
  public:
    explicit SimKernel(std::uint64_t seed, std::uint32_t worker_id = 0, SeededBugSet bugs = {},
                       const Catalog* cat = nullptr);

    // --- syscall surface ---
    std::variant<std::uint32_t, RuntimeError> sys_map_create(const MapSpecRequest& spec);
    std::variant<std::uint32_t, VerifierError> sys_prog_load(const CompiledProgram& container,
                                                             const std::vector<std::uint32_t>& handles);
    std::optional<RuntimeError> sys_prog_attach(std::uint32_t prog_id, AttachKind kind,
                                                std::optional<std::uint32_t> target = {});
    std::uint32_t create_target_resource(AttachKind kind);
    std::variant<ExecResult, RuntimeError> sys_test_run(std::uint32_t prog_id,
                                                        const std::vector<std::uint8_t>& payload);
    std::vector<ExecResult> trigger_event(AttachKind kind,
                                          const std::vector<std::uint8_t>& payload);

    // Userspace-side map manipulation (aux syscalls).
    std::optional<RuntimeError> user_map_update(std::uint32_t id,
                                                const std::vector<std::uint8_t>& key,
                                                const std::vector<std::uint8_t>& value);
    std::optional<std::vector<std::uint8_t>> user_map_lookup(std::uint32_t id,
                                                             const std::vector<std::uint8_t>& key);
    std::optional<RuntimeError> user_map_delete(std::uint32_t id,
                                                const std::vector<std::uint8_t>& key);

    // --- execution engines ---
    ExecResult execute(std::uint32_t prog_id, const std::vector<std::uint8_t>& payload,
                       EngineKind engine, bool in_interrupt = false);
    // Runs both engines from the same snapshot, keeps the interpreter's
    // effects, and reports exec_divergence when observables differ.
    ExecResult execute_dual(std::uint32_t prog_id, const std::vector<std::uint8_t>& payload,
                            bool in_interrupt = false);

    // --- session state ---
    const CoverageMap& coverage() const { return coverage_; }
    LockContextTracker& lock_tracker() { return lock_tracker_; }
    std::vector<BugReport> lockdep_check() const { return lock_tracker_.check(); }
    std::uint64_t map_state_digest() const;
    const LoadedProgram* program(std::uint32_t id) const;
    const MapInstance* map(std::uint32_t id) const;
    const Catalog& catalog() const { return *cat_; }
    const SeededBugSet& bugs() const { return bugs_; }
    std::uint32_t worker_id() const { return worker_id_; }

  private:
    friend struct ExecEnv;

    MapInstance* map_mut(std::uint32_t id);
    ExecResult run(std::uint32_t prog_id, const std::vector<std::uint8_t>& payload,
                   EngineKind engine, bool in_interrupt, std::uint32_t cpu);

    const Catalog* cat_;
    std::uint64_t seed_;
    std::uint32_t worker_id_;
    SeededBugSet bugs_;
    Rng rng_;
    std::uint64_t clock_ = 1;
    std::uint32_t next_map_id_ = 1;
    std::uint32_t next_prog_id_ = 1;
    std::uint32_t next_target_id_ = 1;
    std::uint32_t next_cpu_ = 0;
    std::map<std::uint32_t, MapInstance> maps_;
    std::map<std::uint32_t, LoadedProgram> programs_;
    std::map<AttachKind, std::vector<std::uint32_t>> attach_points_;
    std::map<AttachKind, std::set<std::uint32_t>> targets_;
    std::vector<std::uint8_t> kernel_arena_;
    LockContextTracker lock_tracker_;
    CoverageMap coverage_;
};

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);

} // namespace brf
