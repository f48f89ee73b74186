#include "brf/runtime.hpp"

#include "brf/interval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cstring>

namespace brf {

// ---------------------------------------------------------------------------
// probes / coverage
// ---------------------------------------------------------------------------

namespace probes {
std::uint32_t opcode(std::uint8_t op) { return kOpcodeBase + op; }
std::uint32_t helper(HelperId id) { return kHelperBase + std::min<std::uint32_t>(id, 191); }
std::uint32_t map_path(MapTypeId mt, MapPath path) {
    return kMapBase + static_cast<std::uint32_t>(mt) * kMapStride + path;
}
} // namespace probes

int CoverageMap::bucket(std::uint32_t n) {
    if (n <= 3)
        return static_cast<int>(n) - 1;
    if (n < 8)
        return 3;
    if (n < 16)
        return 4;
    if (n < 32)
        return 5;
    if (n < 128)
        return 6;
    if (n < 512)
        return 7;
    if (n < 2048)
        return 8;
    if (n < 8192)
        return 9;
    if (n < 32768)
        return 10;
    return 11;
}

namespace {
constexpr std::uint32_t kCountCap = 32768;
} // namespace

void CoverageMap::hit(std::uint32_t id) {
    if (id >= counts_.size())
        return;
    if (counts_[id] < kCountCap)
        ++counts_[id];
    std::uint16_t bit = static_cast<std::uint16_t>(1u << bucket(counts_[id]));
    if (!(masks_[id] & bit)) {
        masks_[id] |= bit;
        ++units_;
    }
}

void CoverageMap::merge(const CoverageMap& o) {
    for (std::size_t i = 0; i < masks_.size(); ++i) {
        std::uint16_t add = static_cast<std::uint16_t>(o.masks_[i] & ~masks_[i]);
        if (add) {
            masks_[i] |= add;
            units_ += static_cast<std::size_t>(std::popcount(add));
        }
        counts_[i] = std::max(counts_[i], o.counts_[i]);
    }
}

void CoverageMap::accumulate(const CoverageMap& o) {
    for (std::size_t i = 0; i < counts_.size(); ++i) {
        if (!o.counts_[i] && !o.masks_[i])
            continue;
        counts_[i] = std::min(kCountCap, counts_[i] + o.counts_[i]);
        // Counts grow one hit at a time, so every bucket up to the current
        // one has been passed through.
        std::uint16_t reach =
            counts_[i] ? static_cast<std::uint16_t>((1u << (bucket(counts_[i]) + 1)) - 1) : 0;
        std::uint16_t add = static_cast<std::uint16_t>((reach | o.masks_[i]) & ~masks_[i]);
        if (add) {
            masks_[i] |= add;
            units_ += static_cast<std::size_t>(std::popcount(add));
        }
    }
}

bool CoverageMap::would_grow(const CoverageMap& o) const {
    for (std::size_t i = 0; i < masks_.size(); ++i)
        if (o.masks_[i] & ~masks_[i])
            return true;
    return false;
}

std::size_t CoverageMap::distinct() const {
    std::size_t n = 0;
    for (std::uint8_t m : masks_)
        n += m != 0;
    return n;
}

std::vector<std::uint32_t> CoverageMap::ids() const {
    std::vector<std::uint32_t> out;
    for (std::size_t i = 0; i < masks_.size(); ++i)
        if (masks_[i])
            out.push_back(static_cast<std::uint32_t>(i));
    return out;
}

const char* to_string(BugOracle o) {
    switch (o) {
    case BugOracle::oob_access: return "oob_access";
    case BugOracle::null_deref: return "null_deref";
    case BugOracle::ref_leak_runtime: return "ref_leak_runtime";
    case BugOracle::lock_context_violation: return "lock_context_violation";
    case BugOracle::exec_divergence: return "exec_divergence";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// seeded bugs
// ---------------------------------------------------------------------------

const std::vector<std::string>& SeededBugSet::names() {
    static const std::vector<std::string> n = {"tailcall_oob", "lookup_null_passthrough",
                                               "ringbuf_leak", "queue_lock_ctx", "shift_ub"};
    return n;
}

SeededBugSet SeededBugSet::all() {
    SeededBugSet s;
    s.tailcall_oob = s.lookup_null_passthrough = s.ringbuf_leak = s.queue_lock_ctx = s.shift_ub =
        true;
    return s;
}

std::optional<SeededBugSet> SeededBugSet::parse(const std::string& text) {
    if (text.empty() || text == "none")
        return SeededBugSet{};
    if (text == "all")
        return all();
    SeededBugSet s;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t comma = text.find(',', pos);
        std::string item = text.substr(pos, comma == std::string::npos ? comma : comma - pos);
        if (item == "tailcall_oob")
            s.tailcall_oob = true;
        else if (item == "lookup_null_passthrough")
            s.lookup_null_passthrough = true;
        else if (item == "ringbuf_leak")
            s.ringbuf_leak = true;
        else if (item == "queue_lock_ctx")
            s.queue_lock_ctx = true;
        else if (item == "shift_ub")
            s.shift_ub = true;
        else
            return std::nullopt;
        if (comma == std::string::npos)
            break;
        pos = comma + 1;
    }
    return s;
}

// ---------------------------------------------------------------------------
// lockdep-style tracker
// ---------------------------------------------------------------------------

void LockContextTracker::record_acquire(std::uint64_t lock_class, AcqContext ctx,
                                        const std::vector<std::uint64_t>& held) {
    contexts_[lock_class].insert(ctx);
    for (std::uint64_t h : held)
        if (h != lock_class)
            order_edges_.emplace(h, lock_class);
}

std::vector<BugReport> LockContextTracker::check() const {
    std::vector<BugReport> out;
    for (const auto& [cls, ctxs] : contexts_) {
        if (ctxs.count(AcqContext::interrupt) && ctxs.count(AcqContext::task_irq_enabled)) {
            out.push_back(BugReport{
                BugOracle::lock_context_violation, probes::kLockQueue,
                fmt::format("lock class {:#x} acquired in interrupt context and in task "
                            "context with interrupts enabled",
                            cls),
                ""});
        }
    }
    for (const auto& [a, b] : order_edges_) {
        if (a < b && order_edges_.count({b, a})) {
            out.push_back(BugReport{
                BugOracle::lock_context_violation, probes::kLockBucket,
                fmt::format("lock ordering cycle between classes {:#x} and {:#x}", a, b), ""});
        }
    }
    return out;
}

void LockContextTracker::clear() {
    contexts_.clear();
    order_edges_.clear();
}

// ---------------------------------------------------------------------------
// misc
// ---------------------------------------------------------------------------

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t len, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::uint64_t fnv_u64(std::uint64_t h, std::uint64_t v) {
    std::uint8_t buf[8];
    for (int i = 0; i < 8; ++i)
        buf[i] = static_cast<std::uint8_t>(v >> (8 * i));
    return fnv1a64(buf, 8, h);
}

void put_le(std::uint8_t* dst, std::uint64_t v, std::uint32_t width) {
    for (std::uint32_t i = 0; i < width; ++i)
        dst[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint64_t get_le(const std::uint8_t* src, std::uint32_t width) {
    std::uint64_t v = 0;
    for (std::uint32_t i = 0; i < width; ++i)
        v |= static_cast<std::uint64_t>(src[i]) << (8 * i);
    return v;
}

// Tagged runtime values: a region pointer carries a region index and a
// 32-bit byte offset; a map handle carries the runtime map id. Plain 64-bit
// arithmetic on region pointers adjusts the offset field exactly because
// verified offsets never overflow 32 bits.
constexpr std::uint64_t kRegionTag = 0xB5ULL << 56;
constexpr std::uint64_t kMapTag = 0xA7ULL << 56;
constexpr std::uint64_t kTagMask = 0xffULL << 56;

std::uint64_t region_ptr(std::uint32_t region_idx, std::uint32_t offset) {
    return kRegionTag | (static_cast<std::uint64_t>(region_idx) << 32) | offset;
}

std::uint64_t map_handle_value(std::uint32_t map_id) { return kMapTag | map_id; }

int mem_width(std::uint8_t opcode) {
    switch (opcode & op::kSizeMask) {
    case op::kSizeB: return 1;
    case op::kSizeH: return 2;
    case op::kSizeW: return 4;
    default: return 8;
    }
}

} // namespace

// ---------------------------------------------------------------------------
// execution environment shared by both engines
// ---------------------------------------------------------------------------

struct Region {
    std::uint8_t* base = nullptr;
    std::uint32_t size = 0;
    bool writable = true;
};

struct ExecEnv {
    SimKernel& k;
    const std::vector<std::uint8_t>& payload;
    std::uint32_t cpu = 0;
    bool in_interrupt = false;

    std::vector<Region> regions;
    std::vector<std::uint8_t> stack = std::vector<std::uint8_t>(kStackSize, 0);
    std::vector<std::uint8_t> ctx;
    std::vector<std::uint8_t> sock = std::vector<std::uint8_t>(16, 0);
    std::uint64_t ctx_ptr = 0;
    const LoadedProgram* prog = nullptr;
    int tail_depth = 0;
    ExecResult res;
    bool stop = false;

    struct Reservation {
        std::uint32_t map_id;
        std::uint32_t region_idx;
        std::uint32_t size;
    };
    std::vector<Reservation> outstanding;

    void probe(std::uint32_t id) { res.coverage_delta.hit(id); }

    void finding(BugOracle o, std::uint32_t loc, std::string detail, bool abort = true) {
        for (const auto& f : res.oracle_findings)
            if (f.oracle == o && f.location == loc)
                return;
        res.oracle_findings.push_back(BugReport{o, loc, std::move(detail), ""});
        if (abort) {
            res.aborted = true;
            stop = true;
        }
    }

    std::uint64_t make_region(std::uint8_t* base, std::uint32_t size, bool writable) {
        regions.push_back(Region{base, size, writable});
        return region_ptr(static_cast<std::uint32_t>(regions.size() - 1), 0);
    }

    // Resolves addr to (region, offset); reports an oracle finding on failure.
    Region* resolve(std::uint64_t addr, std::uint32_t width, bool write, std::uint32_t loc,
                    std::uint32_t& off_out) {
        if (addr == 0) {
            finding(BugOracle::null_deref, loc, "null pointer dereference");
            return nullptr;
        }
        if ((addr & kTagMask) != kRegionTag) {
            finding(BugOracle::oob_access, loc,
                    fmt::format("wild address {:#x}", addr));
            return nullptr;
        }
        std::uint32_t idx = static_cast<std::uint32_t>((addr >> 32) & 0xffffff);
        std::uint32_t off = static_cast<std::uint32_t>(addr);
        if (idx >= regions.size()) {
            finding(BugOracle::oob_access, loc, "dangling region reference");
            return nullptr;
        }
        Region& r = regions[idx];
        if (off > r.size || width > r.size - off) {
            finding(BugOracle::oob_access, loc,
                    fmt::format("access [{}, {}) outside a {}-byte region", off, off + width,
                                r.size));
            return nullptr;
        }
        if (write && !r.writable) {
            finding(BugOracle::oob_access, loc, "write to a read-only region");
            return nullptr;
        }
        off_out = off;
        return &r;
    }

    bool mem_read(std::uint64_t addr, std::uint32_t width, std::uint64_t& out,
                  std::uint32_t loc) {
        std::uint32_t off = 0;
        Region* r = resolve(addr, width, false, loc, off);
        if (!r)
            return false;
        out = get_le(r->base + off, width);
        return true;
    }

    bool mem_write(std::uint64_t addr, std::uint32_t width, std::uint64_t value,
                   std::uint32_t loc) {
        std::uint32_t off = 0;
        Region* r = resolve(addr, width, true, loc, off);
        if (!r)
            return false;
        put_le(r->base + off, value, width);
        return true;
    }

    bool read_bytes(std::uint64_t addr, std::uint32_t len, std::uint8_t* dst,
                    std::uint32_t loc) {
        std::uint32_t off = 0;
        Region* r = resolve(addr, len, false, loc, off);
        if (!r)
            return false;
        std::memcpy(dst, r->base + off, len);
        return true;
    }

    bool write_bytes(std::uint64_t addr, std::uint32_t len, const std::uint8_t* src,
                     std::uint32_t loc) {
        std::uint32_t off = 0;
        Region* r = resolve(addr, len, true, loc, off);
        if (!r)
            return false;
        std::memcpy(r->base + off, src, len);
        return true;
    }

    MapInstance* decode_map(std::uint64_t v, std::uint32_t loc) {
        if ((v & kTagMask) != kMapTag) {
            finding(BugOracle::oob_access, loc, "helper expected a map handle");
            return nullptr;
        }
        MapInstance* m = k.map_mut(static_cast<std::uint32_t>(v));
        if (!m)
            finding(BugOracle::oob_access, loc, "helper got a stale map handle");
        return m;
    }

    void record_lock(MapInstance& m, LockContext kind) {
        AcqContext ctx;
        if (in_interrupt)
            ctx = AcqContext::interrupt;
        else if (kind == LockContext::takes_queue_lock && k.bugs_.queue_lock_ctx)
            ctx = AcqContext::task_irq_enabled; // the seeded bug: lock taken without
                                                // disabling interrupts
        else
            ctx = AcqContext::task_irq_disabled;
        k.lock_tracker_.record_acquire(m.id, ctx);
    }

    bool helper_call(HelperId id, std::uint64_t* r, std::optional<std::uint32_t>* transfer);
    void finish(std::uint64_t r0);
};

namespace {

std::uint64_t args_digest(const std::uint64_t* r) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int i = 1; i <= 5; ++i)
        h = fnv_u64(h, r[i]);
    return h;
}

} // namespace

bool ExecEnv::helper_call(HelperId id, std::uint64_t* r, std::optional<std::uint32_t>* transfer) {
    std::uint32_t loc = probes::helper(id);
    probe(loc);
    res.helper_trace.emplace_back(id, args_digest(r));
    std::uint64_t r0 = 0;
    auto map_probe = [&](const MapInstance& m, probes::MapPath p) {
        probe(probes::map_path(m.spec.map_type, p));
    };

    switch (id) {
    case 1: { // map_lookup_elem
        MapInstance* m = decode_map(r[1], loc);
        if (!m)
            return false;
        std::vector<std::uint8_t> key(m->spec.key_size);
        if (m->spec.key_size && !read_bytes(r[2], m->spec.key_size, key.data(), loc))
            return false;
        std::uint8_t* value = nullptr;
        switch (m->spec.map_type) {
        case MapTypeId::ARRAY:
        case MapTypeId::PERCPU_ARRAY: {
            std::uint32_t idx = static_cast<std::uint32_t>(get_le(key.data(), 4));
            if (idx < m->spec.max_entries) {
                std::size_t slot = idx;
                if (m->spec.map_type == MapTypeId::PERCPU_ARRAY)
                    slot += static_cast<std::size_t>(cpu) * m->spec.max_entries;
                value = m->flat.data() + slot * m->spec.value_size;
            }
            break;
        }
        case MapTypeId::HASH:
        case MapTypeId::LRU_HASH: {
            auto it = m->table.find(key);
            if (it != m->table.end()) {
                value = it->second.data();
                if (m->spec.map_type == MapTypeId::LRU_HASH)
                    m->recency[key] = ++m->tick;
            }
            break;
        }
        case MapTypeId::CGROUP_STORAGE:
            value = m->storage_slot.data();
            break;
        default:
            break;
        }
        if (value) {
            map_probe(*m, probes::kLookupHit);
            r0 = make_region(value, m->spec.value_size, true);
        } else {
            map_probe(*m, probes::kLookupMiss);
            if (k.bugs_.lookup_null_passthrough) {
                finding(BugOracle::null_deref, loc,
                        "helper dereferenced a missed lookup result internally");
                return false;
            }
            r0 = 0;
        }
        break;
    }
    case 2: { // map_update_elem
        MapInstance* m = decode_map(r[1], loc);
        if (!m)
            return false;
        if (m->spec.map_type == MapTypeId::HASH || m->spec.map_type == MapTypeId::LRU_HASH)
            record_lock(*m, LockContext::takes_bucket_lock);
        std::vector<std::uint8_t> key(m->spec.key_size);
        std::vector<std::uint8_t> value(m->spec.value_size);
        if ((m->spec.key_size && !read_bytes(r[2], m->spec.key_size, key.data(), loc)) ||
            (m->spec.value_size && !read_bytes(r[3], m->spec.value_size, value.data(), loc)))
            return false;
        switch (m->spec.map_type) {
        case MapTypeId::ARRAY:
        case MapTypeId::PERCPU_ARRAY: {
            std::uint32_t idx = static_cast<std::uint32_t>(get_le(key.data(), 4));
            if (idx >= m->spec.max_entries) {
                map_probe(*m, probes::kUpdateReject);
                r0 = static_cast<std::uint64_t>(-1);
                break;
            }
            std::size_t slot = idx;
            if (m->spec.map_type == MapTypeId::PERCPU_ARRAY)
                slot += static_cast<std::size_t>(cpu) * m->spec.max_entries;
            std::copy(value.begin(), value.end(), m->flat.begin() + slot * m->spec.value_size);
            map_probe(*m, probes::kUpdateReplace);
            break;
        }
        case MapTypeId::HASH:
        case MapTypeId::LRU_HASH: {
            auto it = m->table.find(key);
            if (it != m->table.end()) {
                std::copy(value.begin(), value.end(), it->second.begin());
                map_probe(*m, probes::kUpdateReplace);
            } else if (m->table.size() >= m->spec.max_entries) {
                if (m->spec.map_type == MapTypeId::HASH) {
                    map_probe(*m, probes::kUpdateReject);
                    r0 = static_cast<std::uint64_t>(-1);
                } else {
                    // LRU eviction; the victim value stays alive until the
                    // next execution in case a live pointer references it.
                    auto victim =
                        std::min_element(m->recency.begin(), m->recency.end(),
                                         [](const auto& a, const auto& b) {
                                             return a.second < b.second;
                                         });
                    m->graveyard.push_back(std::move(m->table[victim->first]));
                    m->table.erase(victim->first);
                    m->recency.erase(victim->first);
                    m->table[key] = value;
                    m->recency[key] = ++m->tick;
                    map_probe(*m, probes::kDeleteHit);
                    map_probe(*m, probes::kUpdateNew);
                }
            } else {
                m->table[key] = value;
                if (m->spec.map_type == MapTypeId::LRU_HASH)
                    m->recency[key] = ++m->tick;
                map_probe(*m, probes::kUpdateNew);
            }
            break;
        }
        case MapTypeId::CGROUP_STORAGE:
            std::copy(value.begin(), value.end(), m->storage_slot.begin());
            map_probe(*m, probes::kUpdateReplace);
            break;
        default:
            map_probe(*m, probes::kUpdateReject);
            r0 = static_cast<std::uint64_t>(-1);
            break;
        }
        break;
    }
    case 3: { // map_delete_elem
        MapInstance* m = decode_map(r[1], loc);
        if (!m)
            return false;
        record_lock(*m, LockContext::takes_bucket_lock);
        std::vector<std::uint8_t> key(m->spec.key_size);
        if (m->spec.key_size && !read_bytes(r[2], m->spec.key_size, key.data(), loc))
            return false;
        auto it = m->table.find(key);
        if (it == m->table.end()) {
            map_probe(*m, probes::kDeleteMiss);
            r0 = static_cast<std::uint64_t>(-1);
        } else {
            m->graveyard.push_back(std::move(it->second));
            m->table.erase(it);
            m->recency.erase(key);
            map_probe(*m, probes::kDeleteHit);
        }
        break;
    }
    case 5: // ktime_get_ns
        k.clock_ += 1000;
        r0 = k.clock_;
        break;
    case 7: // get_prandom_u32
        r0 = static_cast<std::uint32_t>(k.rng_.next());
        break;
    case 8: // get_smp_processor_id
        r0 = cpu;
        break;
    case 12: { // tail_call
        MapInstance* m = decode_map(r[2], loc);
        if (!m)
            return false;
        std::uint64_t key = r[3];
        if (tail_depth + 1 >= kTailCallDepthCap) {
            probe(probes::kTailcallDepthLimit);
            r0 = static_cast<std::uint64_t>(-1);
            break;
        }
        if (key >= m->spec.max_entries) {
            if (k.bugs_.tailcall_oob) {
                // The seeded bug skips the bound check and indexes the
                // program array out of bounds.
                finding(BugOracle::oob_access, probes::kTailcallBadKey,
                        fmt::format("tail_call key {} indexes past {} entries", key,
                                    m->spec.max_entries));
                return false;
            }
            probe(probes::kTailcallBadKey);
            r0 = static_cast<std::uint64_t>(-1);
            break;
        }
        std::uint32_t target = m->prog_slots[static_cast<std::size_t>(key)];
        if (target == 0 || !k.program(target)) {
            probe(probes::kTailcallEmptySlot);
            r0 = static_cast<std::uint64_t>(-1);
            break;
        }
        probe(probes::kTailcallTransfer);
        ++tail_depth;
        *transfer = target;
        r0 = r[0]; // control transfer: r0 is not written by the helper
        break;
    }
    case 14: // get_current_pid_tgid
        r0 = (static_cast<std::uint64_t>(1000 + k.worker_id_) << 32) | (1000 + k.worker_id_);
        break;
    case 25: { // perf_event_output
        MapInstance* m = decode_map(r[2], loc);
        if (!m)
            return false;
        std::uint32_t size = static_cast<std::uint32_t>(r[5]);
        std::vector<std::uint8_t> buf(size);
        if (size && !read_bytes(r[4], size, buf.data(), loc))
            return false;
        ++m->events;
        map_probe(*m, probes::kPushOk);
        break;
    }
    case 26: { // skb_load_bytes
        std::uint64_t off = r[2];
        std::uint32_t len = static_cast<std::uint32_t>(r[4]);
        if (off > payload.size() || len > payload.size() - off) {
            r0 = static_cast<std::uint64_t>(-14);
            break;
        }
        if (len && !write_bytes(r[3], len, payload.data() + off, loc))
            return false;
        break;
    }
    case 27: // get_stackid
        r0 = fnv_u64(fnv_u64(0xcbf29ce484222325ULL, prog->id), r[2]) % 1024;
        break;
    case 87: { // map_push_elem
        MapInstance* m = decode_map(r[1], loc);
        if (!m)
            return false;
        record_lock(*m, LockContext::takes_queue_lock);
        if (m->fifo.size() >= m->spec.max_entries) {
            map_probe(*m, probes::kPushReject);
            r0 = static_cast<std::uint64_t>(-1);
            break;
        }
        std::vector<std::uint8_t> value(m->spec.value_size);
        if (!read_bytes(r[2], m->spec.value_size, value.data(), loc))
            return false;
        m->fifo.push_back(std::move(value));
        map_probe(*m, probes::kPushOk);
        break;
    }
    case 88:   // map_pop_elem
    case 89: { // map_peek_elem
        MapInstance* m = decode_map(r[1], loc);
        if (!m)
            return false;
        record_lock(*m, LockContext::takes_queue_lock);
        if (m->fifo.empty()) {
            map_probe(*m, id == 88 ? probes::kPopEmpty : probes::kPeekEmpty);
            r0 = static_cast<std::uint64_t>(-2); // -ENOENT
            break;
        }
        bool from_front = m->spec.map_type == MapTypeId::QUEUE;
        const auto& value = from_front ? m->fifo.front() : m->fifo.back();
        if (!write_bytes(r[2], m->spec.value_size, value.data(), loc))
            return false;
        if (id == 88) {
            if (from_front)
                m->fifo.pop_front();
            else
                m->fifo.pop_back();
            map_probe(*m, probes::kPopOk);
        } else {
            map_probe(*m, probes::kPeekOk);
        }
        break;
    }
    case 113: { // probe_read_kernel
        std::uint32_t size = static_cast<std::uint32_t>(r[2]);
        std::uint64_t src = r[3];
        if (src > k.kernel_arena_.size() || size > k.kernel_arena_.size() - src) {
            r0 = static_cast<std::uint64_t>(-14);
            break;
        }
        if (size && !write_bytes(r[1], size, k.kernel_arena_.data() + src, loc))
            return false;
        break;
    }
    case 130: { // ringbuf_output
        MapInstance* m = decode_map(r[1], loc);
        if (!m)
            return false;
        std::uint32_t size = static_cast<std::uint32_t>(r[3]);
        std::uint64_t need = static_cast<std::uint64_t>(size) + 8;
        if (need > m->ring.size() - m->ring_used) {
            map_probe(*m, probes::kReserveReject);
            r0 = static_cast<std::uint64_t>(-1);
            break;
        }
        std::vector<std::uint8_t> buf(size);
        if (size && !read_bytes(r[2], size, buf.data(), loc))
            return false;
        put_le(m->ring.data() + m->ring_used, size, 8);
        std::copy(buf.begin(), buf.end(), m->ring.begin() + static_cast<std::ptrdiff_t>(m->ring_used) + 8);
        m->ring_used += need;
        map_probe(*m, probes::kReserveOk);
        map_probe(*m, probes::kCommit);
        break;
    }
    case 131: { // ringbuf_reserve
        MapInstance* m = decode_map(r[1], loc);
        if (!m)
            return false;
        std::uint32_t size = static_cast<std::uint32_t>(r[2]);
        std::uint64_t need = static_cast<std::uint64_t>(size) + 8;
        if (size == 0 || need > m->ring.size() - m->ring_used) {
            map_probe(*m, probes::kReserveReject);
            r0 = 0;
            break;
        }
        put_le(m->ring.data() + m->ring_used, size, 8);
        std::uint64_t ptr = make_region(m->ring.data() + m->ring_used + 8, size, true);
        m->ring_used += need;
        outstanding.push_back(
            Reservation{m->id, static_cast<std::uint32_t>((ptr >> 32) & 0xffffff), size});
        map_probe(*m, probes::kReserveOk);
        r0 = ptr;
        break;
    }
    case 132:   // ringbuf_submit
    case 133: { // ringbuf_discard
        if (id == 133 && k.bugs_.ringbuf_leak)
            break; // the seeded bug: discard forgets to release the reservation
        std::uint32_t idx = static_cast<std::uint32_t>((r[1] >> 32) & 0xffffff);
        auto it = std::find_if(outstanding.begin(), outstanding.end(),
                               [&](const Reservation& res_) { return res_.region_idx == idx; });
        if (it != outstanding.end()) {
            MapInstance* m = k.map_mut(it->map_id);
            if (m)
                map_probe(*m, probes::kCommit);
            outstanding.erase(it);
        }
        break;
    }
    case 134: { // ringbuf_query
        MapInstance* m = decode_map(r[1], loc);
        if (!m)
            return false;
        std::uint64_t reserved = 0;
        for (const auto& res_ : outstanding)
            if (res_.map_id == m->id)
                reserved += res_.size;
        r0 = reserved;
        break;
    }
    default:
        finding(BugOracle::oob_access, loc, fmt::format("call to unknown helper {}", id));
        return false;
    }

    r[0] = r0;
    for (int i = 1; i <= 5; ++i)
        r[i] = 0; // caller-saved registers are clobbered deterministically
    return !stop;
}

void ExecEnv::finish(std::uint64_t r0) {
    res.return_value = r0;
    if (!outstanding.empty())
        finding(BugOracle::ref_leak_runtime, probes::kRingbufLeak,
                fmt::format("{} ring buffer reservation(s) still outstanding at exit",
                            outstanding.size()),
                /*abort=*/false);
}

// ---------------------------------------------------------------------------
// engine 1: on-the-fly interpreter
// ---------------------------------------------------------------------------

namespace {

struct ImageView {
    const RawProgram* img = nullptr;
    std::vector<std::uint32_t> slots;
    std::map<std::uint32_t, int> slot_to_idx;

    void load(const RawProgram& p) {
        img = &p;
        slots = p.slot_index();
        slot_to_idx.clear();
        for (std::size_t i = 0; i < slots.size(); ++i)
            slot_to_idx[slots[i]] = static_cast<int>(i);
    }
    // -1 when the target is not an instruction start (cannot happen for
    // verified programs; checked defensively).
    int branch_target(int idx, std::int32_t off) const {
        std::int64_t slot = static_cast<std::int64_t>(slots[static_cast<std::size_t>(idx)]) + 1 + off;
        if (slot < 0)
            return -1;
        auto it = slot_to_idx.find(static_cast<std::uint32_t>(slot));
        return it == slot_to_idx.end() ? -1 : it->second;
    }
};

bool eval_cond(std::uint8_t nib, std::uint64_t a, std::uint64_t b, bool is32) {
    if (is32) {
        a = static_cast<std::uint32_t>(a);
        b = static_cast<std::uint32_t>(b);
    }
    std::int64_t sa = is32 ? static_cast<std::int32_t>(a) : static_cast<std::int64_t>(a);
    std::int64_t sb = is32 ? static_cast<std::int32_t>(b) : static_cast<std::int64_t>(b);
    switch (nib) {
    case op::kJmpJeq: return a == b;
    case op::kJmpJne: return a != b;
    case op::kJmpJgt: return a > b;
    case op::kJmpJge: return a >= b;
    case op::kJmpJset: return (a & b) != 0;
    case op::kJmpJlt: return a < b;
    case op::kJmpJle: return a <= b;
    case op::kJmpJsgt: return sa > sb;
    case op::kJmpJsge: return sa >= sb;
    case op::kJmpJslt: return sa < sb;
    case op::kJmpJsle: return sa <= sb;
    }
    return false;
}

void interp_loop(ExecEnv& env, std::uint64_t* r) {
    ImageView view;
    view.load(env.prog->image);
    int idx = 0;
    while (!env.stop) {
        if (++env.res.insn_count > kInsnCap) {
            env.res.aborted = true;
            return;
        }
        if (idx < 0 || static_cast<std::size_t>(idx) >= view.img->insns.size()) {
            env.res.aborted = true;
            return;
        }
        const Instruction& insn = view.img->insns[static_cast<std::size_t>(idx)];
        std::uint32_t loc = probes::opcode(insn.opcode);
        env.probe(loc);
        std::uint8_t cls = insn.cls();
        switch (cls) {
        case op::kClassAlu64:
        case op::kClassAlu32: {
            std::uint8_t nib = insn.opcode & op::kAluOpMask;
            if (nib == op::kAluEnd) {
                env.res.aborted = true;
                return;
            }
            std::uint64_t src = (insn.opcode & op::kSrcReg)
                                    ? r[insn.src_reg]
                                    : static_cast<std::uint64_t>(
                                          static_cast<std::int64_t>(insn.imm));
            r[insn.dst_reg] = cls == op::kClassAlu64
                                  ? concrete_alu64(nib, r[insn.dst_reg], src)
                                  : concrete_alu32(nib, r[insn.dst_reg], src);
            ++idx;
            break;
        }
        case op::kClassLd: {
            if (!insn.wide_imm) {
                env.res.aborted = true;
                return;
            }
            if (insn.src_reg == op::kRelocatedMapRef)
                r[insn.dst_reg] =
                    map_handle_value(static_cast<std::uint32_t>(*insn.wide_imm));
            else if (insn.src_reg == 0)
                r[insn.dst_reg] = static_cast<std::uint64_t>(*insn.wide_imm);
            else {
                env.res.aborted = true; // unrelocated or unknown pseudo form
                return;
            }
            ++idx;
            break;
        }
        case op::kClassLdx: {
            std::uint64_t v = 0;
            if (!env.mem_read(r[insn.src_reg] + static_cast<std::int64_t>(insn.offset),
                              static_cast<std::uint32_t>(mem_width(insn.opcode)), v, loc))
                return;
            r[insn.dst_reg] = v;
            ++idx;
            break;
        }
        case op::kClassSt:
        case op::kClassStx: {
            if ((insn.opcode & op::kModeMask) == op::kModeAtomic) {
                env.res.aborted = true;
                return;
            }
            std::uint64_t v = cls == op::kClassStx
                                  ? r[insn.src_reg]
                                  : static_cast<std::uint64_t>(
                                        static_cast<std::int64_t>(insn.imm));
            if (!env.mem_write(r[insn.dst_reg] + static_cast<std::int64_t>(insn.offset),
                               static_cast<std::uint32_t>(mem_width(insn.opcode)), v, loc))
                return;
            ++idx;
            break;
        }
        case op::kClassJmp:
        case op::kClassJmp32: {
            std::uint8_t nib = insn.opcode & 0xf0;
            if (nib == op::kJmpExit) {
                env.finish(r[0]);
                return;
            }
            if (nib == op::kJmpJa) {
                idx = view.branch_target(idx, insn.offset);
                break;
            }
            if (nib == op::kJmpCall) {
                std::optional<std::uint32_t> transfer;
                if (!env.helper_call(static_cast<HelperId>(insn.imm), r, &transfer))
                    return;
                if (transfer) {
                    const LoadedProgram* next = env.k.program(*transfer);
                    env.prog = next;
                    view.load(next->image);
                    r[1] = env.ctx_ptr;
                    idx = 0;
                } else {
                    ++idx;
                }
                break;
            }
            std::uint64_t b = (insn.opcode & op::kSrcReg)
                                  ? r[insn.src_reg]
                                  : static_cast<std::uint64_t>(
                                        static_cast<std::int64_t>(insn.imm));
            if (eval_cond(nib, r[insn.dst_reg], b, cls == op::kClassJmp32))
                idx = view.branch_target(idx, insn.offset);
            else
                ++idx;
            break;
        }
        default:
            env.res.aborted = true;
            return;
        }
    }
}

// ---------------------------------------------------------------------------
// engine 2: pre-decoded linear executor (independent dispatch + arithmetic)
// ---------------------------------------------------------------------------

struct LinOp {
    enum Kind : std::uint8_t {
        kAlu64,
        kAlu32,
        kLoadImm64,
        kLoadMapHandle,
        kLdx,
        kSt,
        kStx,
        kJump,
        kCond,
        kCond32,
        kCall,
        kExit,
        kBad,
    };
    Kind kind = kBad;
    std::uint8_t opcode = 0; // original byte, for probes
    std::uint8_t aluop = 0;  // ALU nibble or jump nibble
    std::uint8_t dst = 0;
    std::uint8_t src = 0;
    bool src_is_reg = false;
    std::uint8_t width = 0;
    std::int16_t off = 0;
    std::int64_t imm = 0;
    int target = -1; // resolved jump target (instruction index)
};

std::vector<LinOp> predecode(const RawProgram& p) {
    std::vector<LinOp> ops(p.insns.size());
    auto slots = p.slot_index();
    std::map<std::uint32_t, int> slot_to_idx;
    for (std::size_t i = 0; i < slots.size(); ++i)
        slot_to_idx[slots[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < p.insns.size(); ++i) {
        const Instruction& insn = p.insns[i];
        LinOp& o = ops[i];
        o.opcode = insn.opcode;
        o.dst = insn.dst_reg;
        o.src = insn.src_reg;
        o.src_is_reg = insn.opcode & op::kSrcReg;
        o.off = insn.offset;
        o.imm = static_cast<std::int64_t>(insn.imm);
        std::uint8_t cls = insn.cls();
        auto resolve_target = [&]() {
            std::int64_t slot = static_cast<std::int64_t>(slots[i]) + 1 + insn.offset;
            auto it = slot < 0 ? slot_to_idx.end()
                               : slot_to_idx.find(static_cast<std::uint32_t>(slot));
            o.target = it == slot_to_idx.end() ? -1 : it->second;
        };
        switch (cls) {
        case op::kClassAlu64:
        case op::kClassAlu32:
            o.kind = cls == op::kClassAlu64 ? LinOp::kAlu64 : LinOp::kAlu32;
            o.aluop = insn.opcode & op::kAluOpMask;
            if (o.aluop == op::kAluEnd)
                o.kind = LinOp::kBad;
            break;
        case op::kClassLd:
            if (!insn.wide_imm) {
                o.kind = LinOp::kBad;
            } else if (insn.src_reg == op::kRelocatedMapRef) {
                o.kind = LinOp::kLoadMapHandle;
                o.imm = *insn.wide_imm;
            } else if (insn.src_reg == 0) {
                o.kind = LinOp::kLoadImm64;
                o.imm = *insn.wide_imm;
            } else {
                o.kind = LinOp::kBad;
            }
            break;
        case op::kClassLdx:
            o.kind = LinOp::kLdx;
            o.width = static_cast<std::uint8_t>(mem_width(insn.opcode));
            break;
        case op::kClassSt:
        case op::kClassStx:
            o.kind = (insn.opcode & op::kModeMask) == op::kModeAtomic
                         ? LinOp::kBad
                         : (cls == op::kClassSt ? LinOp::kSt : LinOp::kStx);
            o.width = static_cast<std::uint8_t>(mem_width(insn.opcode));
            break;
        case op::kClassJmp:
        case op::kClassJmp32: {
            std::uint8_t nib = insn.opcode & 0xf0;
            o.aluop = nib;
            if (nib == op::kJmpExit) {
                o.kind = LinOp::kExit;
            } else if (nib == op::kJmpCall) {
                o.kind = LinOp::kCall;
            } else if (nib == op::kJmpJa) {
                o.kind = LinOp::kJump;
                resolve_target();
            } else {
                o.kind = cls == op::kClassJmp ? LinOp::kCond : LinOp::kCond32;
                resolve_target();
            }
            break;
        }
        default:
            o.kind = LinOp::kBad;
            break;
        }
    }
    return ops;
}

// Independent ALU implementation for the second engine. `buggy_shift`
// models the seeded divergence: shift amounts >= the word size are not
// masked and produce zero (sign for arithmetic right shift).
std::uint64_t lin_alu64(std::uint8_t nib, std::uint64_t a, std::uint64_t b, bool buggy_shift) {
    switch (nib) {
    case op::kAluAdd: return a + b;
    case op::kAluSub: return a - b;
    case op::kAluMul: return a * b;
    case op::kAluDiv: return b ? a / b : 0;
    case op::kAluOr: return a | b;
    case op::kAluAnd: return a & b;
    case op::kAluLsh:
        if (buggy_shift && b >= 64)
            return 0;
        return a << (b & 63);
    case op::kAluRsh:
        if (buggy_shift && b >= 64)
            return 0;
        return a >> (b & 63);
    case op::kAluNeg: return ~a + 1;
    case op::kAluMod: return b ? a % b : a;
    case op::kAluXor: return a ^ b;
    case op::kAluMov: return b;
    case op::kAluArsh:
        if (buggy_shift && b >= 64)
            return static_cast<std::int64_t>(a) < 0 ? ~0ULL : 0;
        return static_cast<std::uint64_t>(static_cast<std::int64_t>(a) >> (b & 63));
    }
    return 0;
}

std::uint64_t lin_alu32(std::uint8_t nib, std::uint64_t av, std::uint64_t bv, bool buggy_shift) {
    std::uint32_t a = static_cast<std::uint32_t>(av);
    std::uint32_t b = static_cast<std::uint32_t>(bv);
    switch (nib) {
    case op::kAluAdd: return a + b;
    case op::kAluSub: return a - b;
    case op::kAluMul: return a * b;
    case op::kAluDiv: return b ? a / b : 0;
    case op::kAluOr: return a | b;
    case op::kAluAnd: return a & b;
    case op::kAluLsh:
        if (buggy_shift && bv >= 32)
            return 0;
        return a << (b & 31);
    case op::kAluRsh:
        if (buggy_shift && bv >= 32)
            return 0;
        return a >> (b & 31);
    case op::kAluNeg: return static_cast<std::uint32_t>(~a + 1);
    case op::kAluMod: return b ? a % b : a;
    case op::kAluXor: return a ^ b;
    case op::kAluMov: return b;
    case op::kAluArsh:
        if (buggy_shift && bv >= 32)
            return static_cast<std::int32_t>(a) < 0 ? 0xffffffffULL : 0;
        return static_cast<std::uint32_t>(static_cast<std::int32_t>(a) >> (b & 31));
    }
    return 0;
}

void linear_loop(ExecEnv& env, std::uint64_t* r) {
    bool buggy_shift = env.k.bugs().shift_ub;
    std::vector<LinOp> ops = predecode(env.prog->image);
    int idx = 0;
    while (!env.stop) {
        if (++env.res.insn_count > kInsnCap) {
            env.res.aborted = true;
            return;
        }
        if (idx < 0 || static_cast<std::size_t>(idx) >= ops.size()) {
            env.res.aborted = true;
            return;
        }
        const LinOp& o = ops[static_cast<std::size_t>(idx)];
        std::uint32_t loc = probes::opcode(o.opcode);
        env.probe(loc);
        switch (o.kind) {
        case LinOp::kAlu64:
        case LinOp::kAlu32: {
            std::uint64_t b = o.src_is_reg ? r[o.src] : static_cast<std::uint64_t>(o.imm);
            r[o.dst] = o.kind == LinOp::kAlu64 ? lin_alu64(o.aluop, r[o.dst], b, buggy_shift)
                                               : lin_alu32(o.aluop, r[o.dst], b, buggy_shift);
            ++idx;
            break;
        }
        case LinOp::kLoadImm64:
            r[o.dst] = static_cast<std::uint64_t>(o.imm);
            ++idx;
            break;
        case LinOp::kLoadMapHandle:
            r[o.dst] = map_handle_value(static_cast<std::uint32_t>(o.imm));
            ++idx;
            break;
        case LinOp::kLdx: {
            std::uint64_t v = 0;
            if (!env.mem_read(r[o.src] + o.off, o.width, v, loc))
                return;
            r[o.dst] = v;
            ++idx;
            break;
        }
        case LinOp::kSt:
        case LinOp::kStx: {
            std::uint64_t v =
                o.kind == LinOp::kStx ? r[o.src] : static_cast<std::uint64_t>(o.imm);
            if (!env.mem_write(r[o.dst] + o.off, o.width, v, loc))
                return;
            ++idx;
            break;
        }
        case LinOp::kJump:
            idx = o.target;
            break;
        case LinOp::kCond:
        case LinOp::kCond32: {
            std::uint64_t b = o.src_is_reg ? r[o.src] : static_cast<std::uint64_t>(o.imm);
            idx = eval_cond(o.aluop, r[o.dst], b, o.kind == LinOp::kCond32) ? o.target : idx + 1;
            break;
        }
        case LinOp::kCall: {
            std::optional<std::uint32_t> transfer;
            if (!env.helper_call(static_cast<HelperId>(o.imm), r, &transfer))
                return;
            if (transfer) {
                const LoadedProgram* next = env.k.program(*transfer);
                env.prog = next;
                ops = predecode(next->image);
                r[1] = env.ctx_ptr;
                idx = 0;
            } else {
                ++idx;
            }
            break;
        }
        case LinOp::kExit:
            env.finish(r[0]);
            return;
        case LinOp::kBad:
            env.res.aborted = true;
            return;
        }
    }
}

} // namespace

// ---------------------------------------------------------------------------
// SimKernel
// ---------------------------------------------------------------------------

SimKernel::SimKernel(std::uint64_t seed, std::uint32_t worker_id, SeededBugSet bugs,
                     const Catalog* cat)
    : cat_(cat ? cat : &Catalog::builtin()), seed_(seed), worker_id_(worker_id), bugs_(bugs),
      rng_(seed ^ (0x9e3779b97f4a7c15ULL * (worker_id + 1))) {
    kernel_arena_.resize(kArenaSize);
    Rng arena_rng(seed ^ 0xa4e0a4e0a4e0a4e0ULL);
    for (auto& b : kernel_arena_)
        b = static_cast<std::uint8_t>(arena_rng.next());
}

const LoadedProgram* SimKernel::program(std::uint32_t id) const {
    auto it = programs_.find(id);
    return it == programs_.end() ? nullptr : &it->second;
}

const MapInstance* SimKernel::map(std::uint32_t id) const {
    auto it = maps_.find(id);
    return it == maps_.end() ? nullptr : &it->second;
}

MapInstance* SimKernel::map_mut(std::uint32_t id) {
    auto it = maps_.find(id);
    return it == maps_.end() ? nullptr : &it->second;
}

std::variant<std::uint32_t, RuntimeError> SimKernel::sys_map_create(const MapSpecRequest& spec) {
    const MapTypeSpec& cons = cat_->map_attr_constraints(spec.map_type);
    if (!cons.key_size.admits(spec.key_size))
        return RuntimeError{"attr_invalid", fmt::format("key_size {} not admitted for {}",
                                                        spec.key_size, to_string(spec.map_type))};
    if (!cons.value_size.admits(spec.value_size))
        return RuntimeError{"attr_invalid",
                            fmt::format("value_size {} not admitted for {}", spec.value_size,
                                        to_string(spec.map_type))};
    if (!cons.max_entries.admits(spec.max_entries))
        return RuntimeError{"attr_invalid",
                            fmt::format("max_entries {} not admitted for {}", spec.max_entries,
                                        to_string(spec.map_type))};
    if (!cons.flags_valid(spec.flags))
        return RuntimeError{"attr_invalid", fmt::format("flags {:#x} not admitted for {}",
                                                        spec.flags, to_string(spec.map_type))};
    MapInstance m;
    m.id = next_map_id_++;
    m.spec = spec;
    switch (spec.map_type) {
    case MapTypeId::ARRAY:
        m.flat.assign(static_cast<std::size_t>(spec.max_entries) * spec.value_size, 0);
        break;
    case MapTypeId::PERCPU_ARRAY:
        m.flat.assign(static_cast<std::size_t>(kNumCpus) * spec.max_entries * spec.value_size, 0);
        break;
    case MapTypeId::PROG_ARRAY:
        m.prog_slots.assign(spec.max_entries, 0);
        break;
    case MapTypeId::RINGBUF:
        m.ring.assign(spec.max_entries, 0);
        break;
    case MapTypeId::CGROUP_STORAGE:
        m.storage_slot.assign(spec.value_size, 0);
        break;
    default:
        break;
    }
    std::uint32_t id = m.id;
    maps_.emplace(id, std::move(m));
    return id;
}

std::variant<std::uint32_t, VerifierError>
SimKernel::sys_prog_load(const CompiledProgram& container, const std::vector<std::uint32_t>& handles) {
    auto verdict = verify(container.prog, container.map_deps, container.prog.prog_type, *cat_);
    if (auto* err = std::get_if<VerifierError>(&verdict))
        return *err;
    std::map<std::uint32_t, std::uint64_t> handle_map;
    for (std::size_t i = 0; i < handles.size(); ++i) {
        const MapInstance* m = map(handles[i]);
        if (!m || i >= container.map_deps.size() ||
            m->spec.map_type != container.map_deps[i].map_type)
            return VerifierError{ErrorCategory::other, "reloc_unresolved", -1,
                                 fmt::format("handle for map ordinal {} is missing or of the "
                                             "wrong type",
                                             i)};
        handle_map[static_cast<std::uint32_t>(i)] = m->id;
    }
    auto relocated = relocate(container.prog, handle_map);
    if (auto* err = std::get_if<RelocateError>(&relocated))
        return VerifierError{ErrorCategory::other, err->rule_id, -1, err->message};
    LoadedProgram lp;
    lp.id = next_prog_id_++;
    lp.image = std::get<RawProgram>(std::move(relocated));
    lp.type = container.prog.prog_type;
    lp.summary = std::get<VerifySummary>(verdict);
    lp.map_handles = handles;
    std::uint32_t id = lp.id;
    programs_.emplace(id, std::move(lp));
    return id;
}

std::uint32_t SimKernel::create_target_resource(AttachKind kind) {
    std::uint32_t id = next_target_id_++;
    targets_[kind].insert(id);
    return id;
}

std::optional<RuntimeError> SimKernel::sys_prog_attach(std::uint32_t prog_id, AttachKind kind,
                                                       std::optional<std::uint32_t> target) {
    const LoadedProgram* lp = program(prog_id);
    if (!lp)
        return RuntimeError{"no_such_prog", fmt::format("program {} is not loaded", prog_id)};
    AttachKind expected = cat_->program_type(lp->type).attach_kind;
    if (kind != expected)
        return RuntimeError{"attach_type_mismatch",
                            fmt::format("{} programs attach to {}, not {}", to_string(lp->type),
                                        to_string(expected), to_string(kind))};
    bool needs_target = kind == AttachKind::cgroup || kind == AttachKind::device;
    if (needs_target && (!target || !targets_[kind].count(*target)))
        return RuntimeError{"attach_target_missing",
                            fmt::format("{} attachment needs a target resource",
                                        to_string(kind))};
    attach_points_[kind].push_back(prog_id);
    return std::nullopt;
}

std::variant<ExecResult, RuntimeError>
SimKernel::sys_test_run(std::uint32_t prog_id, const std::vector<std::uint8_t>& payload) {
    const LoadedProgram* lp = program(prog_id);
    if (!lp)
        return RuntimeError{"no_such_prog", fmt::format("program {} is not loaded", prog_id)};
    if (!cat_->program_type(lp->type).test_runnable)
        return RuntimeError{"test_run_unsupported",
                            fmt::format("{} cannot be test-run", to_string(lp->type))};
    return execute_dual(prog_id, payload, /*in_interrupt=*/false);
}

std::vector<ExecResult> SimKernel::trigger_event(AttachKind kind,
                                                 const std::vector<std::uint8_t>& payload) {
    std::vector<ExecResult> out;
    auto it = attach_points_.find(kind);
    if (it == attach_points_.end())
        return out;
    bool in_interrupt = kind == AttachKind::trace_event;
    std::vector<std::uint32_t> ids = it->second;
    for (std::uint32_t id : ids)
        out.push_back(execute_dual(id, payload, in_interrupt));
    return out;
}

ExecResult SimKernel::execute(std::uint32_t prog_id, const std::vector<std::uint8_t>& payload,
                              EngineKind engine, bool in_interrupt) {
    std::uint32_t cpu = next_cpu_;
    next_cpu_ = (next_cpu_ + 1) % kNumCpus;
    return run(prog_id, payload, engine, in_interrupt, cpu);
}

ExecResult SimKernel::execute_dual(std::uint32_t prog_id, const std::vector<std::uint8_t>& payload,
                                   bool in_interrupt) {
    SimKernel shadow = *this; // snapshot for the second engine
    ExecResult linear = shadow.execute(prog_id, payload, EngineKind::linear, in_interrupt);
    ExecResult result = execute(prog_id, payload, EngineKind::interp, in_interrupt);
    bool diverged = result.return_value != linear.return_value ||
                    result.helper_trace != linear.helper_trace ||
                    map_state_digest() != shadow.map_state_digest();
    if (diverged) {
        result.oracle_findings.push_back(BugReport{
            BugOracle::exec_divergence, probes::kEngineDivergence,
            fmt::format("engines disagree: interp r0={:#x}, linear r0={:#x}",
                        result.return_value, linear.return_value),
            ""});
    }
    return result;
}

ExecResult SimKernel::run(std::uint32_t prog_id, const std::vector<std::uint8_t>& payload,
                          EngineKind engine, bool in_interrupt, std::uint32_t cpu) {
    const LoadedProgram* lp = program(prog_id);
    if (!lp) {
        ExecResult r;
        r.aborted = true;
        return r;
    }
    // Values removed from maps in earlier executions can now be collected.
    for (auto& [id, m] : maps_)
        m.graveyard.clear();

    ExecEnv env{*this, payload};
    env.cpu = cpu;
    env.in_interrupt = in_interrupt;
    env.prog = lp;

    const ContextDescriptor& desc = cat_->program_type(lp->type).context;
    env.ctx.assign(desc.byte_size, 0);
    std::uint64_t sock_ptr = env.make_region(env.sock.data(), 16, false);
    switch (lp->type) {
    case ProgramTypeId::SOCKET_FILTER:
        put_le(env.ctx.data() + 0, payload.size(), 4);
        put_le(env.ctx.data() + 4, 0x0800, 4);
        put_le(env.ctx.data() + 16, cpu, 4);
        put_le(env.ctx.data() + 24, sock_ptr, 8);
        break;
    case ProgramTypeId::KPROBE:
    case ProgramTypeId::TRACEPOINT: {
        for (std::uint32_t i = 0; i < 4; ++i) {
            std::uint8_t buf[8] = {};
            for (std::uint32_t b = 0; b < 8 && i * 8 + b < payload.size(); ++b)
                buf[b] = payload[i * 8 + b];
            put_le(env.ctx.data() + i * 8, get_le(buf, 8), 8);
        }
        if (lp->type == ProgramTypeId::KPROBE) {
            put_le(env.ctx.data() + 32,
                   0xffffffff81000000ULL + (fnv1a64(payload.data(), payload.size()) & 0xffff), 8);
            put_le(env.ctx.data() + 40, 0xffffc90000000000ULL, 8);
        }
        break;
    }
    case ProgramTypeId::PERF_EVENT: {
        put_le(env.ctx.data() + 0, 4000, 8);
        std::uint8_t buf[8] = {};
        for (std::uint32_t b = 0; b < 8 && b < payload.size(); ++b)
            buf[b] = payload[b];
        put_le(env.ctx.data() + 8, get_le(buf, 8), 8);
        break;
    }
    case ProgramTypeId::CGROUP_SOCK:
        put_le(env.ctx.data() + 0, 2, 4);  // AF_INET
        put_le(env.ctx.data() + 4, 1, 4);  // SOCK_STREAM
        put_le(env.ctx.data() + 8, 6, 4);  // IPPROTO_TCP
        break;
    case ProgramTypeId::XDP:
        put_le(env.ctx.data() + 0, payload.size(), 4);
        put_le(env.ctx.data() + 4, 1, 4);
        put_le(env.ctx.data() + 8, cpu, 4);
        break;
    }
    env.probe(probes::kCtxBuildBase + static_cast<std::uint32_t>(lp->type));
    env.ctx_ptr = env.make_region(env.ctx.data(), desc.byte_size, true);
    std::uint64_t stack_top = env.make_region(env.stack.data(), kStackSize, true) + kStackSize;

    std::uint64_t regs[11] = {};
    regs[1] = env.ctx_ptr;
    regs[kFrameReg] = stack_top;

    if (engine == EngineKind::interp)
        interp_loop(env, regs);
    else
        linear_loop(env, regs);

    // Session-level lock findings surface on the execution that completed
    // the offending pattern.
    for (const auto& f : lock_tracker_.check())
        env.finding(f.oracle, f.location, f.detail, /*abort=*/false);

    coverage_.accumulate(env.res.coverage_delta);
    return env.res;
}

std::optional<RuntimeError> SimKernel::user_map_update(std::uint32_t id,
                                                       const std::vector<std::uint8_t>& key,
                                                       const std::vector<std::uint8_t>& value) {
    MapInstance* m = map_mut(id);
    if (!m)
        return RuntimeError{"no_such_map", fmt::format("map {} does not exist", id)};
    if (key.size() != m->spec.key_size || value.size() != m->spec.value_size)
        return RuntimeError{"attr_invalid", "key/value size mismatch"};
    switch (m->spec.map_type) {
    case MapTypeId::ARRAY:
    case MapTypeId::PERCPU_ARRAY: {
        std::uint32_t idx = static_cast<std::uint32_t>(get_le(key.data(), 4));
        if (idx >= m->spec.max_entries)
            return RuntimeError{"key_oob", fmt::format("index {} out of range", idx)};
        // Userspace updates write every per-cpu slot.
        int copies = m->spec.map_type == MapTypeId::PERCPU_ARRAY ? kNumCpus : 1;
        for (int c = 0; c < copies; ++c)
            std::copy(value.begin(), value.end(),
                      m->flat.begin() +
                          (static_cast<std::size_t>(c) * m->spec.max_entries + idx) *
                              m->spec.value_size);
        return std::nullopt;
    }
    case MapTypeId::PROG_ARRAY: {
        std::uint32_t idx = static_cast<std::uint32_t>(get_le(key.data(), 4));
        if (idx >= m->spec.max_entries)
            return RuntimeError{"key_oob", fmt::format("index {} out of range", idx)};
        m->prog_slots[idx] = static_cast<std::uint32_t>(get_le(value.data(), 4));
        return std::nullopt;
    }
    case MapTypeId::HASH:
    case MapTypeId::LRU_HASH: {
        lock_tracker_.record_acquire(m->id, AcqContext::task_irq_disabled);
        auto it = m->table.find(key);
        if (it != m->table.end()) {
            std::copy(value.begin(), value.end(), it->second.begin());
        } else if (m->table.size() >= m->spec.max_entries &&
                   m->spec.map_type == MapTypeId::HASH) {
            return RuntimeError{"map_full", "hash map is full"};
        } else {
            if (m->table.size() >= m->spec.max_entries) {
                auto victim = std::min_element(
                    m->recency.begin(), m->recency.end(),
                    [](const auto& a, const auto& b) { return a.second < b.second; });
                m->graveyard.push_back(std::move(m->table[victim->first]));
                m->table.erase(victim->first);
                m->recency.erase(victim->first);
            }
            m->table[key] = value;
            if (m->spec.map_type == MapTypeId::LRU_HASH)
                m->recency[key] = ++m->tick;
        }
        return std::nullopt;
    }
    case MapTypeId::QUEUE:
    case MapTypeId::STACK:
        if (m->fifo.size() >= m->spec.max_entries)
            return RuntimeError{"map_full", "queue is full"};
        m->fifo.push_back(value);
        return std::nullopt;
    case MapTypeId::CGROUP_STORAGE:
        std::copy(value.begin(), value.end(), m->storage_slot.begin());
        return std::nullopt;
    default:
        return RuntimeError{"op_unsupported",
                            fmt::format("update not supported on {}", to_string(m->spec.map_type))};
    }
}

std::optional<std::vector<std::uint8_t>>
SimKernel::user_map_lookup(std::uint32_t id, const std::vector<std::uint8_t>& key) {
    MapInstance* m = map_mut(id);
    if (!m || key.size() != m->spec.key_size)
        return std::nullopt;
    switch (m->spec.map_type) {
    case MapTypeId::ARRAY: {
        std::uint32_t idx = static_cast<std::uint32_t>(get_le(key.data(), 4));
        if (idx >= m->spec.max_entries)
            return std::nullopt;
        auto begin = m->flat.begin() + static_cast<std::size_t>(idx) * m->spec.value_size;
        return std::vector<std::uint8_t>(begin, begin + m->spec.value_size);
    }
    case MapTypeId::HASH:
    case MapTypeId::LRU_HASH: {
        auto it = m->table.find(key);
        if (it == m->table.end())
            return std::nullopt;
        return it->second;
    }
    case MapTypeId::CGROUP_STORAGE:
        return m->storage_slot;
    default:
        return std::nullopt;
    }
}

std::optional<RuntimeError> SimKernel::user_map_delete(std::uint32_t id,
                                                       const std::vector<std::uint8_t>& key) {
    MapInstance* m = map_mut(id);
    if (!m)
        return RuntimeError{"no_such_map", fmt::format("map {} does not exist", id)};
    if (m->spec.map_type != MapTypeId::HASH && m->spec.map_type != MapTypeId::LRU_HASH)
        return RuntimeError{"op_unsupported",
                            fmt::format("delete not supported on {}", to_string(m->spec.map_type))};
    lock_tracker_.record_acquire(m->id, AcqContext::task_irq_disabled);
    auto it = m->table.find(key);
    if (it == m->table.end())
        return RuntimeError{"no_such_key", "key not present"};
    m->graveyard.push_back(std::move(it->second));
    m->table.erase(it);
    m->recency.erase(key);
    return std::nullopt;
}

std::uint64_t SimKernel::map_state_digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [id, m] : maps_) {
        h = fnv_u64(h, id);
        h = fnv_u64(h, static_cast<std::uint64_t>(m.spec.map_type));
        h = fnv1a64(m.flat.data(), m.flat.size(), h);
        for (const auto& [k, v] : m.table) {
            h = fnv1a64(k.data(), k.size(), h);
            h = fnv1a64(v.data(), v.size(), h);
        }
        for (const auto& e : m.fifo)
            h = fnv1a64(e.data(), e.size(), h);
        for (std::uint32_t slot : m.prog_slots)
            h = fnv_u64(h, slot);
        h = fnv1a64(m.ring.data(), m.ring.size(), h);
        h = fnv_u64(h, m.ring_used);
        h = fnv1a64(m.storage_slot.data(), m.storage_slot.size(), h);
        h = fnv_u64(h, m.events);
    }
    return h;
}

} // namespace brf
