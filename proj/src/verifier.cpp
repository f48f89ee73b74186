#include "brf/verifier.hpp"

#include "brf/lower.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <map>

namespace brf {

const char* to_string(ErrorCategory c) {
    switch (c) {
    case ErrorCategory::syntax: return "syntax";
    case ErrorCategory::semantic: return "semantic";
    case ErrorCategory::internal: return "internal";
    case ErrorCategory::other: return "other";
    }
    return "?";
}

namespace {

constexpr std::uint64_t kU64Max = ~0ULL;
constexpr std::int64_t kI64Min = std::numeric_limits<std::int64_t>::min();
constexpr std::int64_t kI64Max = std::numeric_limits<std::int64_t>::max();

ValueRange width_range(int width_bytes) {
    if (width_bytes >= 8)
        return ValueRange::top();
    return ValueRange::unsigned_range(0, (1ULL << (8 * width_bytes)) - 1);
}

int access_width(std::uint8_t opcode) {
    switch (opcode & op::kSizeMask) {
    case op::kSizeB: return 1;
    case op::kSizeH: return 2;
    case op::kSizeW: return 4;
    default: return 8;
    }
}

struct PathState {
    std::array<RegState, kMaxReg + 1> regs;
    std::array<StackSlot, kStackSlots> stack;
    std::map<std::uint32_t, RefNullness> refs;
};

// Successor bookkeeping computed once from the instruction list.
struct Cfg {
    std::vector<int> fall;   // -1 if none
    std::vector<int> branch; // -1 if none
};

std::optional<VerifierError> build_cfg(const RawProgram& prog, Cfg& cfg) {
    auto sem = [](const char* rule, int idx, std::string msg) {
        return VerifierError{ErrorCategory::semantic, rule, idx, std::move(msg)};
    };
    const auto& insns = prog.insns;
    if (insns.empty())
        return sem("bad_last_insn", -1, "empty program");
    auto slots = prog.slot_index();
    std::map<std::uint32_t, int> slot_to_idx;
    for (std::size_t i = 0; i < insns.size(); ++i)
        slot_to_idx[slots[i]] = static_cast<int>(i);
    int n = static_cast<int>(insns.size());
    cfg.fall.assign(n, -1);
    cfg.branch.assign(n, -1);
    for (int i = 0; i < n; ++i) {
        const Instruction& insn = insns[i];
        std::uint8_t cls = insn.cls();
        bool is_jmp_cls = cls == op::kClassJmp || cls == op::kClassJmp32;
        std::uint8_t nib = insn.opcode & 0xf0;
        bool is_exit = is_jmp_cls && nib == op::kJmpExit;
        bool is_ja = cls == op::kClassJmp && nib == op::kJmpJa;
        bool is_call = is_jmp_cls && nib == op::kJmpCall;
        bool is_cond = is_jmp_cls && !is_exit && !is_ja && !is_call;
        if (is_ja || is_cond) {
            std::int64_t target_slot = static_cast<std::int64_t>(slots[i]) + 1 + insn.offset;
            auto it = target_slot < 0
                          ? slot_to_idx.end()
                          : slot_to_idx.find(static_cast<std::uint32_t>(target_slot));
            if (it == slot_to_idx.end())
                return sem("jump_out_of_range", i,
                           fmt::format("jump to slot {} has no instruction", target_slot));
            cfg.branch[i] = it->second;
        }
        bool needs_fall = !is_exit && !is_ja;
        if (needs_fall) {
            if (i + 1 >= n)
                return sem("bad_last_insn", i, "control can run off the end of the program");
            cfg.fall[i] = i + 1;
        }
    }
    // Cycle check: iterative DFS with colors.
    enum Color : std::uint8_t { kWhite, kGray, kBlack };
    std::vector<Color> color(n, kWhite);
    std::vector<std::pair<int, int>> dfs; // (node, next successor 0/1/2)
    dfs.emplace_back(0, 0);
    color[0] = kGray;
    std::vector<bool> reached(n, false);
    reached[0] = true;
    while (!dfs.empty()) {
        auto& [node, next] = dfs.back();
        int succ = -1;
        if (next == 0)
            succ = cfg.branch[node];
        else if (next == 1)
            succ = cfg.fall[node];
        if (next >= 2) {
            color[node] = kBlack;
            dfs.pop_back();
            continue;
        }
        ++next;
        if (succ < 0)
            continue;
        if (color[succ] == kGray)
            return sem("loop_detected", node,
                       fmt::format("back-edge from {} to {}", node, succ));
        if (color[succ] == kWhite) {
            color[succ] = kGray;
            reached[succ] = true;
            dfs.emplace_back(succ, 0);
        }
    }
    for (int i = 0; i < n; ++i)
        if (!reached[i])
            return sem("unreachable_insn", i, "instruction is never reached");
    return std::nullopt;
}

class Verifier {
  public:
    Verifier(const RawProgram& prog, const std::vector<MapSpecRequest>& maps, ProgramTypeId pt,
             const Catalog& cat, const VerifyOptions& opts)
        : prog_(prog), maps_(maps), pt_(pt), cat_(cat), opts_(opts) {}

    std::variant<VerifySummary, VerifierError> run() {
        if (auto err = build_cfg(prog_, cfg_))
            return *err;
        PathState init;
        RegState ctx;
        ctx.vtype = VerifierValueType::PTR_TO_CTX;
        ctx.range = ValueRange::constant(0);
        init.regs[1] = ctx;
        RegState fp;
        fp.vtype = VerifierValueType::PTR_TO_STACK;
        fp.range = ValueRange::constant(0);
        init.regs[kFrameReg] = fp;

        std::vector<std::pair<int, PathState>> work;
        work.emplace_back(0, std::move(init));
        while (!work.empty()) {
            auto [idx, state] = std::move(work.back());
            work.pop_back();
            // Walk a straight run; only branches push extra work.
            while (true) {
                if (++summary_.insns_processed > opts_.max_processed_insns)
                    return VerifierError{ErrorCategory::internal, "complexity_exceeded", idx,
                                         fmt::format("more than {} instructions processed",
                                                     opts_.max_processed_insns)};
                const Instruction& insn = prog_.insns[static_cast<std::size_t>(idx)];
                std::uint8_t cls = insn.cls();
                bool done = false;
                if (cls == op::kClassJmp || cls == op::kClassJmp32) {
                    std::uint8_t nib = insn.opcode & 0xf0;
                    if (nib == op::kJmpExit) {
                        if (!finalize(state, idx))
                            return *error_;
                        ++summary_.paths_explored;
                        done = true;
                    } else if (nib == op::kJmpJa) {
                        idx = cfg_.branch[idx];
                    } else if (nib == op::kJmpCall) {
                        if (!step_call(state, insn, idx))
                            return *error_;
                        idx = cfg_.fall[idx];
                    } else {
                        int taken = cfg_.branch[idx];
                        int fall = cfg_.fall[idx];
                        PathState taken_state = state;
                        bool taken_ok = false, fall_ok = false;
                        if (!step_branch(state, taken_state, insn, idx, taken_ok, fall_ok))
                            return *error_;
                        if (taken_ok && fall_ok) {
                            work.emplace_back(taken, std::move(taken_state));
                            idx = fall;
                        } else if (taken_ok) {
                            state = std::move(taken_state);
                            idx = taken;
                        } else if (fall_ok) {
                            idx = fall;
                        } else {
                            // No feasible successor: dead path.
                            done = true;
                        }
                    }
                } else if (cls == op::kClassAlu64 || cls == op::kClassAlu32) {
                    if (!step_alu(state, insn, idx))
                        return *error_;
                    idx = cfg_.fall[idx];
                } else if (cls == op::kClassLd) {
                    if (!step_lddw(state, insn, idx))
                        return *error_;
                    idx = cfg_.fall[idx];
                } else {
                    if (!step_mem(state, insn, idx))
                        return *error_;
                    idx = cfg_.fall[idx];
                }
                if (done)
                    break;
            }
        }
        return summary_;
    }

  private:
    const RawProgram& prog_;
    const std::vector<MapSpecRequest>& maps_;
    ProgramTypeId pt_;
    const Catalog& cat_;
    VerifyOptions opts_;
    Cfg cfg_;
    VerifySummary summary_;
    std::optional<VerifierError> error_;
    std::uint32_t next_ref_id_ = 1;

    bool fail(const char* rule, int idx, std::string msg,
              ErrorCategory cat = ErrorCategory::semantic) {
        if (!error_)
            error_ = VerifierError{cat, rule, idx, std::move(msg)};
        return false;
    }

    void touch_stack(std::int64_t byte_off) {
        std::uint32_t depth = static_cast<std::uint32_t>(-byte_off);
        summary_.max_stack_depth = std::max(summary_.max_stack_depth, depth);
    }

    static bool ptr_kind_allows_arith(VerifierValueType t) {
        return t == VerifierValueType::PTR_TO_STACK || t == VerifierValueType::PTR_TO_MAP_VALUE ||
               t == VerifierValueType::PTR_TO_MEM;
    }

    // ---- ALU ----

    bool step_alu(PathState& st, const Instruction& insn, int idx) {
        std::uint8_t nib = insn.opcode & op::kAluOpMask;
        bool is64 = insn.cls() == op::kClassAlu64;
        if (nib == op::kAluEnd)
            return fail("unsupported_insn", idx, "byte-swap instructions are not modeled");
        if (insn.dst_reg == kFrameReg)
            return fail("frame_reg_write", idx, "r10 is read-only");
        RegState& dst = st.regs[insn.dst_reg];
        RegState rhs;
        if (nib == op::kAluNeg) {
            rhs = RegState::scalar(ValueRange::constant(0));
        } else if (insn.opcode & op::kSrcReg) {
            rhs = st.regs[insn.src_reg];
            if (!rhs.is_init())
                return fail("uninit_reg_read", idx,
                            fmt::format("r{} is not initialized", insn.src_reg));
        } else {
            rhs = RegState::scalar(
                ValueRange::constant(static_cast<std::uint64_t>(static_cast<std::int64_t>(insn.imm))));
        }
        if (nib == op::kAluMov) {
            if (!is64) {
                if (rhs.is_pointer())
                    return fail("ptr_arith_forbidden", idx, "32-bit move would truncate a pointer");
                dst = RegState::scalar(alu32_range(op::kAluMov, ValueRange::constant(0), rhs.range));
            } else {
                dst = rhs;
            }
            return true;
        }
        if (!dst.is_init())
            return fail("uninit_reg_read", idx, fmt::format("r{} is not initialized", insn.dst_reg));
        if (!is64) {
            if (dst.is_pointer() || rhs.is_pointer())
                return fail("ptr_arith_forbidden", idx, "32-bit arithmetic on a pointer");
            dst = RegState::scalar(alu32_range(nib, dst.range, rhs.range));
            return true;
        }
        if (dst.is_pointer()) {
            if (rhs.is_pointer())
                return fail("ptr_arith_forbidden", idx, "arithmetic between two pointers");
            if (nib != op::kAluAdd && nib != op::kAluSub)
                return fail("ptr_arith_forbidden", idx, "only +/- allowed on pointers");
            if (!ptr_kind_allows_arith(dst.vtype))
                return fail("ptr_arith_forbidden", idx,
                            fmt::format("pointer arithmetic on {}", to_string(dst.vtype)));
            if (dst.maybe_null)
                return fail("ptr_arith_forbidden", idx, "arithmetic on a possibly-null pointer");
            dst.range = nib == op::kAluAdd ? range_add(dst.range, rhs.range)
                                           : range_sub(dst.range, rhs.range);
            return true;
        }
        if (rhs.is_pointer())
            return fail("ptr_arith_forbidden", idx, "scalar op with pointer operand");
        if (nib == op::kAluNeg)
            dst.range = range_neg(dst.range);
        else
            dst.range = alu64_range(nib, dst.range, rhs.range);
        return true;
    }

    static ValueRange alu64_range(std::uint8_t nib, const ValueRange& a, const ValueRange& b) {
        if (a.is_const() && b.is_const())
            return ValueRange::constant(concrete_alu64(nib, a.const_value(), b.const_value()));
        switch (nib) {
        case op::kAluAdd: return range_add(a, b);
        case op::kAluSub: return range_sub(a, b);
        case op::kAluMul: return range_mul(a, b);
        case op::kAluDiv: return range_div(a, b);
        case op::kAluOr: return range_or(a, b);
        case op::kAluAnd: return range_and(a, b);
        case op::kAluLsh: return range_lsh(a, b);
        case op::kAluRsh: return range_rsh(a, b);
        case op::kAluMod: return range_mod(a, b);
        case op::kAluXor: return range_xor(a, b);
        case op::kAluArsh: return range_arsh(a, b);
        }
        return ValueRange::top();
    }

    static ValueRange alu32_range(std::uint8_t nib, const ValueRange& a, const ValueRange& b) {
        if (a.is_const() && b.is_const())
            return ValueRange::constant(concrete_alu32(nib, a.const_value(), b.const_value()));
        return ValueRange::unsigned_range(0, 0xffffffffULL);
    }

    // ---- wide immediate load ----

    bool step_lddw(PathState& st, const Instruction& insn, int idx) {
        if (!insn.is_wide() || !insn.wide_imm)
            return fail("unsupported_insn", idx, "legacy packet loads are not modeled");
        if (insn.src_reg == op::kPseudoMapRef) {
            auto ordinal = static_cast<std::uint64_t>(*insn.wide_imm);
            if (ordinal >= maps_.size())
                return fail("bad_map_ref", idx,
                            fmt::format("map ordinal {} out of range", ordinal));
            RegState r;
            r.vtype = VerifierValueType::CONST_PTR_TO_MAP;
            r.range = ValueRange::constant(0);
            r.map_ordinal = static_cast<std::uint32_t>(ordinal);
            st.regs[insn.dst_reg] = r;
            return true;
        }
        if (insn.src_reg == op::kRelocatedMapRef)
            return fail("bad_map_ref", idx, "image was relocated before verification");
        if (insn.src_reg != 0)
            return fail("bad_map_ref", idx,
                        fmt::format("unknown wide-load tag {}", insn.src_reg));
        st.regs[insn.dst_reg] =
            RegState::scalar(ValueRange::constant(static_cast<std::uint64_t>(*insn.wide_imm)));
        return true;
    }

    // ---- memory ----

    bool stack_load(PathState& st, const RegState& ptr, const Instruction& insn, int idx) {
        if (!ptr.range.is_const())
            return fail("stack_oob", idx, "stack access at a variable offset");
        std::int64_t off = static_cast<std::int64_t>(ptr.range.const_value()) + insn.offset;
        int w = access_width(insn.opcode);
        if (off < -kStackSize || off + w > 0)
            return fail("stack_oob", idx,
                        fmt::format("stack access at fp{:+} width {}", off, w));
        touch_stack(off);
        std::int64_t byte = off + kStackSize;
        if (w == 8 && byte % 8 == 0) {
            StackSlot& slot = st.stack[static_cast<std::size_t>(byte / 8)];
            if (slot.kind == StackSlot::kSpill) {
                st.regs[insn.dst_reg] = slot.spill;
                return true;
            }
        }
        for (std::int64_t b = byte; b < byte + w; ++b) {
            const StackSlot& slot = st.stack[static_cast<std::size_t>(b / 8)];
            if (slot.kind == StackSlot::kEmpty)
                return fail("stack_oob", idx, "read of uninitialized stack");
            if (slot.kind == StackSlot::kSpill && slot.spill.is_pointer())
                return fail("ptr_leak", idx, "partial read of a spilled pointer");
            if (slot.kind == StackSlot::kMisc && !(slot.init_mask & (1u << (b % 8))))
                return fail("stack_oob", idx, "read of uninitialized stack");
        }
        st.regs[insn.dst_reg] = RegState::scalar(width_range(w));
        return true;
    }

    bool stack_store(PathState& st, const RegState& ptr, const Instruction& insn,
                     const RegState& src, int idx) {
        if (!ptr.range.is_const())
            return fail("stack_oob", idx, "stack access at a variable offset");
        std::int64_t off = static_cast<std::int64_t>(ptr.range.const_value()) + insn.offset;
        int w = access_width(insn.opcode);
        if (off < -kStackSize || off + w > 0)
            return fail("stack_oob", idx,
                        fmt::format("stack access at fp{:+} width {}", off, w));
        touch_stack(off);
        std::int64_t byte = off + kStackSize;
        if (w == 8 && byte % 8 == 0) {
            StackSlot& slot = st.stack[static_cast<std::size_t>(byte / 8)];
            slot.kind = StackSlot::kSpill;
            slot.spill = src;
            slot.init_mask = 0xff;
            return true;
        }
        if (src.is_pointer())
            return fail("ptr_leak", idx, "partial spill of a pointer");
        for (std::int64_t b = byte; b < byte + w; ++b) {
            StackSlot& slot = st.stack[static_cast<std::size_t>(b / 8)];
            if (slot.kind == StackSlot::kSpill) {
                slot.kind = StackSlot::kMisc;
                slot.init_mask = 0xff; // every byte was defined by the spill
            } else if (slot.kind == StackSlot::kEmpty) {
                slot.kind = StackSlot::kMisc;
            }
            slot.init_mask |= static_cast<std::uint8_t>(1u << (b % 8));
        }
        return true;
    }

    bool region_bounds_ok(const RegState& ptr, std::int64_t off, int w) {
        std::int64_t lo = ptr.range.smin + off;
        std::int64_t hi = ptr.range.smax + off + w;
        return lo >= 0 && hi <= static_cast<std::int64_t>(*ptr.mem_size) &&
               ptr.range.umax <= static_cast<std::uint64_t>(kI64Max);
    }

    bool step_mem(PathState& st, const Instruction& insn, int idx) {
        std::uint8_t cls = insn.cls();
        if ((insn.opcode & op::kModeMask) == op::kModeAtomic)
            return fail("unsupported_insn", idx, "atomic operations are not modeled");
        int w = access_width(insn.opcode);
        bool is_load = cls == op::kClassLdx;
        const RegState& ptr = is_load ? st.regs[insn.src_reg] : st.regs[insn.dst_reg];
        if (!ptr.is_init())
            return fail("uninit_reg_read", idx, "memory access through uninitialized register");
        RegState src;
        if (cls == op::kClassStx) {
            src = st.regs[insn.src_reg];
            if (!src.is_init())
                return fail("uninit_reg_read", idx,
                            fmt::format("r{} is not initialized", insn.src_reg));
        } else if (cls == op::kClassSt) {
            src = RegState::scalar(
                ValueRange::constant(static_cast<std::uint64_t>(static_cast<std::int64_t>(insn.imm))));
        }
        switch (ptr.vtype) {
        case VerifierValueType::PTR_TO_STACK:
            return is_load ? stack_load(st, ptr, insn, idx) : stack_store(st, ptr, insn, src, idx);
        case VerifierValueType::PTR_TO_CTX: {
            if (!ptr.range.is_const())
                return fail("ctx_access_denied", idx, "context access at a variable offset");
            std::int64_t off = static_cast<std::int64_t>(ptr.range.const_value()) + insn.offset;
            const ContextDescriptor& ctx = cat_.program_type(pt_).context;
            const ContextField* field =
                off < 0 ? nullptr
                        : ctx.field_at(static_cast<std::uint32_t>(off), static_cast<std::uint32_t>(w));
            if (!field)
                return fail("ctx_access_denied", idx,
                            fmt::format("no context field at offset {} width {}", off, w));
            if (is_load) {
                if (!field->read_allowed)
                    return fail("ctx_access_denied", idx,
                                fmt::format("field {} is not readable", field->name));
                if (field->yields == VerifierValueType::SCALAR) {
                    st.regs[insn.dst_reg] = RegState::scalar(width_range(w));
                } else {
                    RegState r;
                    r.vtype = field->yields;
                    r.range = ValueRange::constant(0);
                    st.regs[insn.dst_reg] = r;
                }
                return true;
            }
            if (!field->write_allowed)
                return fail("ctx_access_denied", idx,
                            fmt::format("field {} is not writable", field->name));
            if (src.is_pointer())
                return fail("ptr_leak", idx, "pointer store into the context");
            return true;
        }
        case VerifierValueType::PTR_TO_MAP_VALUE:
        case VerifierValueType::PTR_TO_MEM: {
            if (ptr.maybe_null)
                return fail("null_deref", idx,
                            fmt::format("access through possibly-null {}", to_string(ptr.vtype)));
            if (!region_bounds_ok(ptr, insn.offset, w))
                return fail("mem_oob", idx,
                            fmt::format("access outside the {}-byte region", *ptr.mem_size));
            if (is_load)
                st.regs[insn.dst_reg] = RegState::scalar(width_range(w));
            else if (src.is_pointer())
                return fail("ptr_leak", idx, "pointer store into shared memory");
            return true;
        }
        default:
            return fail("invalid_mem_access", idx,
                        fmt::format("cannot dereference {}", to_string(ptr.vtype)));
        }
    }

    // ---- branches ----

    // Constraint the taken/fallthrough arm puts on the left operand.
    static std::optional<ValueRange> arm_constraint(std::uint8_t nib, bool taken,
                                                    const ValueRange& rhs) {
        ValueRange c = ValueRange::top();
        auto u_at_least = [&](std::uint64_t lo) { c.umin = lo; };
        auto u_at_most = [&](std::uint64_t hi) { c.umax = hi; };
        auto s_at_least = [&](std::int64_t lo) { c.smin = lo; };
        auto s_at_most = [&](std::int64_t hi) { c.smax = hi; };
        switch (nib) {
        case op::kJmpJeq:
            if (!taken)
                return std::nullopt;
            return rhs;
        case op::kJmpJne:
            if (taken)
                return std::nullopt;
            return rhs;
        case op::kJmpJgt:
            if (taken) {
                if (rhs.umin == kU64Max)
                    return ValueRange{1, 0, 0, 0}; // infeasible
                u_at_least(rhs.umin + 1);
            } else
                u_at_most(rhs.umax);
            break;
        case op::kJmpJge:
            if (taken)
                u_at_least(rhs.umin);
            else {
                if (rhs.umax == 0)
                    return ValueRange{1, 0, 0, 0};
                u_at_most(rhs.umax - 1);
            }
            break;
        case op::kJmpJlt:
            if (taken) {
                if (rhs.umax == 0)
                    return ValueRange{1, 0, 0, 0};
                u_at_most(rhs.umax - 1);
            } else
                u_at_least(rhs.umin);
            break;
        case op::kJmpJle:
            if (taken)
                u_at_most(rhs.umax);
            else {
                if (rhs.umin == kU64Max)
                    return ValueRange{1, 0, 0, 0};
                u_at_least(rhs.umin + 1);
            }
            break;
        case op::kJmpJsgt:
            if (taken) {
                if (rhs.smin == kI64Max)
                    return ValueRange{1, 0, 0, 0};
                s_at_least(rhs.smin + 1);
            } else
                s_at_most(rhs.smax);
            break;
        case op::kJmpJsge:
            if (taken)
                s_at_least(rhs.smin);
            else {
                if (rhs.smax == kI64Min)
                    return ValueRange{1, 0, 0, 0};
                s_at_most(rhs.smax - 1);
            }
            break;
        case op::kJmpJslt:
            if (taken) {
                if (rhs.smax == kI64Min)
                    return ValueRange{1, 0, 0, 0};
                s_at_most(rhs.smax - 1);
            } else
                s_at_least(rhs.smin);
            break;
        case op::kJmpJsle:
            if (taken)
                s_at_most(rhs.smax);
            else {
                if (rhs.smin == kI64Max)
                    return ValueRange{1, 0, 0, 0};
                s_at_least(rhs.smin + 1);
            }
            break;
        default: // JSET and anything else: no narrowing
            return std::nullopt;
        }
        return c;
    }

    static bool concrete_cmp(std::uint8_t nib, std::uint64_t a, std::uint64_t b) {
        auto sa = static_cast<std::int64_t>(a);
        auto sb = static_cast<std::int64_t>(b);
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

    // On return, taken_ok/fall_ok say which arms are feasible; `fall` keeps
    // the fallthrough state, `taken` the branch-taken state.
    bool step_branch(PathState& fall, PathState& taken, const Instruction& insn, int idx,
                     bool& taken_ok, bool& fall_ok) {
        std::uint8_t nib = insn.opcode & 0xf0;
        bool is32 = insn.cls() == op::kClassJmp32;
        RegState& dst_f = fall.regs[insn.dst_reg];
        RegState& dst_t = taken.regs[insn.dst_reg];
        if (!dst_f.is_init())
            return fail("uninit_reg_read", idx,
                        fmt::format("r{} is not initialized", insn.dst_reg));
        bool rhs_is_reg = insn.opcode & op::kSrcReg;
        RegState rhs;
        if (rhs_is_reg) {
            rhs = fall.regs[insn.src_reg];
            if (!rhs.is_init())
                return fail("uninit_reg_read", idx,
                            fmt::format("r{} is not initialized", insn.src_reg));
        } else {
            rhs = RegState::scalar(
                ValueRange::constant(static_cast<std::uint64_t>(static_cast<std::int64_t>(insn.imm))));
        }

        // Pointer null-compare: `if rX ==/!= 0`.
        bool rhs_zero = rhs.is_scalar() && rhs.known_const() == std::uint64_t{0};
        if (dst_f.is_pointer()) {
            if (is32 || !rhs_zero || (nib != op::kJmpJeq && nib != op::kJmpJne))
                return fail("bad_cmp_types", idx,
                            "pointers may only be compared against zero with ==/!=");
            bool eq_is_taken = nib == op::kJmpJeq;
            if (!dst_f.maybe_null) {
                // Non-null pointer: exactly one arm survives.
                taken_ok = !eq_is_taken;
                fall_ok = eq_is_taken;
                if (taken_ok && dst_t.ref_id)
                    taken.refs[*dst_t.ref_id] = RefNullness::proven_nonnull;
                return true;
            }
            PathState& null_arm = eq_is_taken ? taken : fall;
            PathState& nonnull_arm = eq_is_taken ? fall : taken;
            RegState& null_reg = null_arm.regs[insn.dst_reg];
            RegState& nonnull_reg = nonnull_arm.regs[insn.dst_reg];
            if (null_reg.ref_id) {
                auto it = null_arm.refs.find(*null_reg.ref_id);
                if (it != null_arm.refs.end() && it->second == RefNullness::unknown)
                    it->second = RefNullness::proven_null;
            }
            if (nonnull_reg.ref_id)
                nonnull_arm.refs[*nonnull_reg.ref_id] = RefNullness::proven_nonnull;
            null_reg = RegState::scalar(ValueRange::constant(0));
            nonnull_reg.maybe_null = false;
            taken_ok = fall_ok = true;
            return true;
        }
        if (rhs.is_pointer())
            return fail("bad_cmp_types", idx, "comparison between scalar and pointer");

        // Scalar compare. Fully constant operands decide the branch.
        auto dc = dst_f.known_const();
        auto rc = rhs.known_const();
        if (dc && rc) {
            std::uint64_t a = *dc, b = *rc;
            if (is32) {
                a = static_cast<std::uint32_t>(a);
                b = static_cast<std::uint32_t>(b);
            }
            bool t = concrete_cmp(nib, a, b);
            taken_ok = t;
            fall_ok = !t;
            return true;
        }
        if (is32 || nib == op::kJmpJset) {
            taken_ok = fall_ok = true;
            return true;
        }
        taken_ok = fall_ok = true;
        if (auto c = arm_constraint(nib, true, rhs.range)) {
            ValueRange narrowed = dst_t.range.intersect(*c);
            if (!narrowed.valid())
                taken_ok = false;
            else
                dst_t.range = narrowed;
        }
        if (auto c = arm_constraint(nib, false, rhs.range)) {
            ValueRange narrowed = dst_f.range.intersect(*c);
            if (!narrowed.valid())
                fall_ok = false;
            else
                dst_f.range = narrowed;
        }
        return true;
    }

    // ---- helper calls ----

    // Extent in bytes readable/writable through ptr starting at its offset,
    // or nullopt with an error reported.
    std::optional<std::uint64_t> region_extent(const RegState& ptr, int idx) {
        if (ptr.vtype == VerifierValueType::PTR_TO_STACK) {
            if (!ptr.range.is_const()) {
                fail("stack_oob", idx, "stack region at a variable offset");
                return std::nullopt;
            }
            std::int64_t off = static_cast<std::int64_t>(ptr.range.const_value());
            if (off < -kStackSize || off > 0) {
                fail("stack_oob", idx, "stack region outside the frame");
                return std::nullopt;
            }
            return static_cast<std::uint64_t>(-off);
        }
        // PTR_TO_MAP_VALUE / PTR_TO_MEM
        if (ptr.range.smin < 0 || ptr.range.smax > static_cast<std::int64_t>(*ptr.mem_size)) {
            fail("mem_oob", idx, "region pointer outside its bounds");
            return std::nullopt;
        }
        return *ptr.mem_size - static_cast<std::uint64_t>(ptr.range.smax);
    }

    bool check_stack_region_read(PathState& st, const RegState& ptr, std::uint64_t len, int idx) {
        std::int64_t base = static_cast<std::int64_t>(ptr.range.const_value()) + kStackSize;
        touch_stack(static_cast<std::int64_t>(ptr.range.const_value()));
        for (std::uint64_t b = 0; b < len; ++b) {
            const StackSlot& slot = st.stack[static_cast<std::size_t>((base + static_cast<std::int64_t>(b)) / 8)];
            std::int64_t bit = (base + static_cast<std::int64_t>(b)) % 8;
            bool ok = slot.kind == StackSlot::kSpill ||
                      (slot.kind == StackSlot::kMisc && (slot.init_mask & (1u << bit)));
            if (!ok)
                return fail("stack_oob", idx, "helper reads uninitialized stack");
        }
        return true;
    }

    void mark_stack_region_written(PathState& st, const RegState& ptr, std::uint64_t certain,
                                   std::uint64_t possible) {
        std::int64_t base = static_cast<std::int64_t>(ptr.range.const_value()) + kStackSize;
        touch_stack(static_cast<std::int64_t>(ptr.range.const_value()));
        for (std::uint64_t b = 0; b < possible; ++b) {
            StackSlot& slot = st.stack[static_cast<std::size_t>((base + static_cast<std::int64_t>(b)) / 8)];
            std::int64_t bit = (base + static_cast<std::int64_t>(b)) % 8;
            if (slot.kind == StackSlot::kSpill) {
                slot.kind = StackSlot::kMisc;
                slot.init_mask = 0xff;
            }
            if (b < certain) {
                if (slot.kind == StackSlot::kEmpty)
                    slot.kind = StackSlot::kMisc;
                slot.init_mask |= static_cast<std::uint8_t>(1u << bit);
            }
        }
    }

    bool check_mem_arg(PathState& st, const RegState& ptr, ArgType at, const ValueRange& size,
                       int idx) {
        auto extent = region_extent(ptr, idx);
        if (!extent)
            return false;
        if (size.umax > *extent)
            return fail("size_exceeds_mem", idx,
                        fmt::format("size may reach {} over a {}-byte region", size.umax, *extent));
        bool writes = at == ArgType::PTR_TO_UNINIT_MEM || at == ArgType::PTR_TO_UNINIT_MAP_VALUE;
        if (ptr.vtype == VerifierValueType::PTR_TO_STACK) {
            if (writes)
                mark_stack_region_written(st, ptr, size.umin, size.umax);
            else if (!check_stack_region_read(st, ptr, size.umax, idx))
                return false;
        }
        return true;
    }

    void invalidate_ref(PathState& st, std::uint32_t ref_id) {
        for (auto& reg : st.regs)
            if (reg.ref_id == ref_id)
                reg = RegState::uninit();
        for (auto& slot : st.stack)
            if (slot.kind == StackSlot::kSpill && slot.spill.ref_id == ref_id) {
                slot.kind = StackSlot::kMisc;
                slot.init_mask = 0xff;
            }
    }

    bool step_call(PathState& st, const Instruction& insn, int idx) {
        auto helper_id = static_cast<HelperId>(insn.imm);
        const HelperProto* proto = cat_.helper(helper_id);
        if (!proto || !cat_.helpers_for(pt_).count(helper_id))
            return fail("helper_unavailable", idx,
                        fmt::format("helper {} is not available to {}",
                                    proto ? proto->name : std::to_string(insn.imm),
                                    to_string(pt_)));
        const MapSpecRequest* map_spec = nullptr;
        std::uint32_t map_ordinal = 0;
        std::optional<std::uint32_t> released_ref;

        for (std::size_t i = 0; i < proto->args.size(); ++i) {
            int reg_no = static_cast<int>(i) + 1;
            RegState& reg = st.regs[static_cast<std::size_t>(reg_no)];
            ArgType at = proto->args[i];
            if (!reg.is_init())
                return fail("uninit_reg_read", idx,
                            fmt::format("argument r{} of {} is not initialized", reg_no,
                                        proto->name));
            const auto& compat = cat_.compatible_value_types(at);
            if (!compat.count(reg.vtype))
                return fail("arg_type_mismatch", idx,
                            fmt::format("{} argument {} wants {}, got {}", proto->name, i + 1,
                                        to_string(at), to_string(reg.vtype)));
            if (reg.maybe_null && at != ArgType::ANYTHING)
                return fail("arg_type_mismatch", idx,
                            fmt::format("{} argument {} may be null", proto->name, i + 1));
            switch (at) {
            case ArgType::CONST_MAP_PTR: {
                map_ordinal = *reg.map_ordinal;
                map_spec = &maps_[map_ordinal];
                auto allowed = cat_.maps_for(pt_, helper_id);
                if (!allowed || !allowed->count(map_spec->map_type))
                    return fail("map_func_incompat", idx,
                                fmt::format("{} cannot operate on a {} map under {}", proto->name,
                                            to_string(map_spec->map_type), to_string(pt_)));
                if (map_spec->flags & cat_.program_type(pt_).forbidden_map_flags)
                    return fail("map_func_incompat", idx,
                                fmt::format("map flags {:#x} forbidden under {}", map_spec->flags,
                                            to_string(pt_)));
                break;
            }
            case ArgType::PTR_TO_MAP_KEY:
            case ArgType::PTR_TO_MAP_VALUE:
            case ArgType::PTR_TO_UNINIT_MAP_VALUE: {
                if (!map_spec)
                    return fail("arg_type_mismatch", idx, "key/value argument without a map");
                std::uint32_t need = at == ArgType::PTR_TO_MAP_KEY ? map_spec->key_size
                                                                   : map_spec->value_size;
                if (!check_mem_arg(st, reg, at, ValueRange::constant(need), idx))
                    return false;
                break;
            }
            case ArgType::PTR_TO_MEM:
            case ArgType::PTR_TO_UNINIT_MEM: {
                // The size argument always follows the region argument.
                if (i + 1 >= proto->args.size() ||
                    (proto->args[i + 1] != ArgType::CONST_SIZE &&
                     proto->args[i + 1] != ArgType::CONST_SIZE_OR_ZERO))
                    return fail("arg_type_mismatch", idx, "memory argument without a size");
                const RegState& size_reg = st.regs[static_cast<std::size_t>(reg_no) + 1];
                if (!size_reg.is_init() || !size_reg.is_scalar())
                    return fail("uninit_reg_read", idx, "size argument is not a scalar");
                bool may_be_zero = proto->args[i + 1] == ArgType::CONST_SIZE_OR_ZERO;
                if (!may_be_zero && size_reg.range.umin == 0)
                    return fail("zero_size_forbidden", idx,
                                fmt::format("{} size argument may be zero", proto->name));
                if (!check_mem_arg(st, reg, at, size_reg.range, idx))
                    return false;
                break;
            }
            case ArgType::CONST_SIZE:
            case ArgType::CONST_SIZE_OR_ZERO: {
                bool paired = i > 0 && (proto->args[i - 1] == ArgType::PTR_TO_MEM ||
                                        proto->args[i - 1] == ArgType::PTR_TO_UNINIT_MEM);
                if (!paired) {
                    // Allocation-style size (ringbuf_reserve): must be exact.
                    if (!reg.known_const())
                        return fail("alloc_size_not_const", idx,
                                    fmt::format("{} needs a known-constant size", proto->name));
                    if (*reg.known_const() == 0)
                        return fail("zero_size_forbidden", idx,
                                    fmt::format("{} size argument may be zero", proto->name));
                }
                break;
            }
            case ArgType::PTR_TO_CTX:
                if (!reg.range.is_const() || reg.range.const_value() != 0)
                    return fail("arg_type_mismatch", idx, "context argument must be unoffset");
                break;
            case ArgType::PTR_TO_REF:
                if (!reg.ref_id)
                    return fail("release_without_ref", idx,
                                fmt::format("{} needs an acquired reference", proto->name));
                if (!reg.range.is_const() || reg.range.const_value() != 0)
                    return fail("arg_type_mismatch", idx, "reference argument must be unoffset");
                released_ref = reg.ref_id;
                break;
            case ArgType::ANYTHING:
                break;
            }
        }

        if (proto->releases_ref) {
            if (!released_ref || !st.refs.count(*released_ref))
                return fail("release_without_ref", idx,
                            fmt::format("{} releases nothing", proto->name));
            st.refs.erase(*released_ref);
            invalidate_ref(st, *released_ref);
        }

        // Return value & clobbers.
        RegState r0;
        switch (proto->ret) {
        case RetKind::VOID:
            r0 = RegState::uninit();
            break;
        case RetKind::SCALAR:
            r0 = RegState::scalar(ValueRange::top());
            break;
        case RetKind::PTR_TO_MAP_VALUE_OR_NULL:
            r0.vtype = VerifierValueType::PTR_TO_MAP_VALUE;
            r0.range = ValueRange::constant(0);
            r0.maybe_null = true;
            r0.map_ordinal = map_ordinal;
            r0.mem_size = map_spec ? map_spec->value_size : 0;
            break;
        case RetKind::PTR_TO_MEM_OR_NULL: {
            r0.vtype = VerifierValueType::PTR_TO_MEM;
            r0.range = ValueRange::constant(0);
            r0.maybe_null = true;
            // Size comes from the allocation-size argument (known const).
            std::uint64_t size = 0;
            for (std::size_t i = 0; i < proto->args.size(); ++i)
                if (proto->args[i] == ArgType::CONST_SIZE)
                    size = *st.regs[i + 1].known_const();
            r0.mem_size = static_cast<std::uint32_t>(size);
            break;
        }
        }
        if (proto->acquires_ref) {
            r0.ref_id = next_ref_id_++;
            st.refs[*r0.ref_id] = RefNullness::unknown;
        }
        st.regs[0] = r0;
        for (int r = 1; r <= 5; ++r)
            st.regs[static_cast<std::size_t>(r)] = RegState::uninit();

        summary_.helpers_called.insert(helper_id);
        if (map_spec)
            summary_.maps_touched.insert(map_ordinal);
        return true;
    }

    bool finalize(PathState& st, int idx) {
        const RegState& r0 = st.regs[0];
        if (!r0.is_init() || !r0.is_scalar())
            return fail("r0_uninit", idx, r0.is_init() ? "r0 holds a pointer at exit"
                                                       : "r0 is not set at exit");
        for (const auto& [id, nullness] : st.refs)
            if (nullness != RefNullness::proven_null)
                return fail("ref_leak", idx,
                            fmt::format("reference {} may still be live at exit", id));
        return true;
    }
};

} // namespace

std::optional<VerifierError> check_cfg(const RawProgram& prog) {
    Cfg cfg;
    return build_cfg(prog, cfg);
}

std::variant<VerifySummary, VerifierError> verify(const RawProgram& prog,
                                                  const std::vector<MapSpecRequest>& maps,
                                                  ProgramTypeId pt, const Catalog& cat,
                                                  const VerifyOptions& opts) {
    return Verifier(prog, maps, pt, cat, opts).run();
}

} // namespace brf
