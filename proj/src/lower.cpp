#include "brf/lower.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>
#include <set>

namespace brf {

namespace {

constexpr int kStackBytes = 512;
constexpr int kFirstPinReg = 6; // r6-r8 survive helper calls
constexpr int kLastPinReg = 8;
constexpr int kCtxReg = 9;

bool fits_i32(std::int64_t v) {
    return v >= std::numeric_limits<std::int32_t>::min() &&
           v <= std::numeric_limits<std::int32_t>::max();
}

// Does any later statement (deeply) read this variable?
bool var_used_in(const std::vector<Stmt>& stmts, std::size_t from, int var);

bool var_used_in_stmt(const Stmt& stmt, int var) {
    if (const auto* call = std::get_if<CallStmt>(&stmt.node)) {
        for (const auto& a : call->args)
            if (a.kind == ArgKind::kVar && a.index == var)
                return true;
        return false;
    }
    if (const auto* blk = std::get_if<BlockStmt>(&stmt.node)) {
        for (const auto& g : blk->guards)
            if (g.var == var)
                return true;
        return var_used_in(blk->body, 0, var);
    }
    return false;
}

bool var_used_in(const std::vector<Stmt>& stmts, std::size_t from, int var) {
    for (std::size_t i = from; i < stmts.size(); ++i)
        if (var_used_in_stmt(stmts[i], var))
            return true;
    return false;
}

void collect_result_vars(const std::vector<Stmt>& stmts, std::vector<int>& out) {
    for (const auto& s : stmts) {
        if (const auto* call = std::get_if<CallStmt>(&s.node)) {
            if (call->result_var)
                out.push_back(*call->result_var);
        } else if (const auto* blk = std::get_if<BlockStmt>(&s.node)) {
            collect_result_vars(blk->body, out);
        }
    }
}

bool stmts_use_ctx(const std::vector<Stmt>& stmts) {
    for (const auto& s : stmts) {
        if (const auto* call = std::get_if<CallStmt>(&s.node)) {
            for (const auto& a : call->args)
                if (a.kind == ArgKind::kCtx)
                    return true;
        } else if (const auto* blk = std::get_if<BlockStmt>(&s.node)) {
            if (stmts_use_ctx(blk->body))
                return true;
        }
    }
    return false;
}

struct BlockCtx {
    const BlockCtx* parent = nullptr;
    std::map<int, int> pinned; // var -> register
    int next_pin = kFirstPinReg;
    std::vector<std::size_t> end_jumps; // insn indexes to patch to block end
};

struct Lowerer {
    const ProgramAst& ast;
    const Catalog& cat;
    std::map<int, int> var_off;
    std::map<int, int> buf_off;
    std::vector<Instruction> out;
    std::vector<Relocation> relocs;
    bool uses_ctx = false;
    std::string err;

    Lowerer(const ProgramAst& a, const Catalog& c) : ast(a), cat(c) {}

    bool fail(std::string m) {
        if (err.empty())
            err = std::move(m);
        return false;
    }

    void emit(const Instruction& insn) { out.push_back(insn); }

    std::int16_t voff(int var) const { return static_cast<std::int16_t>(var_off.at(var)); }

    bool layout() {
        std::set<int> vars, bufs_seen;
        std::map<int, std::uint32_t> buf_sizes;
        for (const auto& b : ast.ctx_bindings)
            vars.insert(b.var);
        bool undeclared_buf = false;
        auto walk = [&](const std::vector<Stmt>& stmts, auto&& self) -> void {
            for (const auto& s : stmts) {
                if (const auto* let = std::get_if<LetStmt>(&s.node))
                    vars.insert(let->var);
                else if (const auto* buf = std::get_if<BufStmt>(&s.node))
                    buf_sizes[buf->buf] = buf->size;
                else if (const auto* call = std::get_if<CallStmt>(&s.node)) {
                    if (call->result_var)
                        vars.insert(*call->result_var);
                    // A read of a never-assigned variable still gets a slot;
                    // the verifier rejects the uninitialized load.
                    for (const auto& a : call->args) {
                        if (a.kind == ArgKind::kVar)
                            vars.insert(a.index);
                        else if (a.kind == ArgKind::kBuf && !buf_sizes.count(a.index))
                            undeclared_buf = true;
                    }
                } else if (const auto* blk = std::get_if<BlockStmt>(&s.node)) {
                    for (const auto& g : blk->guards)
                        vars.insert(g.var);
                    self(blk->body, self);
                }
            }
        };
        walk(ast.stmts, walk);
        if (ast.ret.is_var)
            vars.insert(ast.ret.var);
        if (undeclared_buf)
            return fail("buffer used before declaration");
        int used = 0;
        for (int v : vars) {
            used += 8;
            var_off[v] = -used;
        }
        for (const auto& [b, size] : buf_sizes) {
            used += static_cast<int>((size + 7) & ~7u);
            buf_off[b] = -used;
        }
        if (used > kStackBytes)
            return fail(fmt::format("frame needs {} bytes, budget is {}", used, kStackBytes));
        return true;
    }

    void emit_load_imm(int reg, std::int64_t v) {
        if (fits_i32(v))
            emit(make_mov64_imm(reg, static_cast<std::int32_t>(v)));
        else
            emit(make_lddw(reg, v));
    }

    int find_pin(const BlockCtx* ctx, int var) const {
        for (; ctx; ctx = ctx->parent) {
            auto it = ctx->pinned.find(var);
            if (it != ctx->pinned.end())
                return it->second;
        }
        return -1;
    }

    bool emit_arg(int reg, const ArgExpr& a, const BlockCtx* ctx) {
        switch (a.kind) {
        case ArgKind::kLiteral:
            emit_load_imm(reg, a.literal);
            return true;
        case ArgKind::kVar: {
            int pin = find_pin(ctx, a.index);
            if (pin >= 0)
                emit(make_mov64_reg(reg, pin));
            else
                emit(make_ldx(8, reg, kFrameReg, voff(a.index)));
            return true;
        }
        case ArgKind::kBuf:
            emit(make_mov64_reg(reg, kFrameReg));
            emit(make_alu64_imm(op::kAluAdd, reg, buf_off.at(a.index)));
            return true;
        case ArgKind::kMap:
            relocs.push_back({static_cast<std::uint32_t>(out.size()),
                              static_cast<std::uint32_t>(a.index)});
            emit(make_lddw(reg, a.index, op::kPseudoMapRef));
            return true;
        case ArgKind::kCtx:
            emit(make_mov64_reg(reg, kCtxReg));
            return true;
        }
        return fail("bad argument kind");
    }

    bool lower_call(const CallStmt& call, BlockCtx* ctx, bool used_later) {
        const HelperProto* proto = cat.helper(call.helper);
        if (!proto)
            return fail(fmt::format("unknown helper id {}", call.helper));
        for (std::size_t i = 0; i < call.args.size(); ++i)
            if (!emit_arg(static_cast<int>(i) + 1, call.args[i], ctx))
                return false;
        emit(make_call(static_cast<std::int32_t>(call.helper)));
        if (!call.result_var)
            return true;
        if (proto->ret == RetKind::VOID)
            return fail(fmt::format("{} returns nothing", proto->name));
        int var = *call.result_var;
        if (proto->ret_nullable && ctx && used_later) {
            // Keep the value in a call-preserved register so the null check
            // below still covers later uses; the frame slot copy may be null
            // on paths that skip this block.
            if (ctx->next_pin > kLastPinReg)
                return fail("too many guarded values live in one block");
            int pin = ctx->next_pin++;
            ctx->pinned[var] = pin;
            emit(make_mov64_reg(pin, 0));
            emit(make_stx(8, kFrameReg, voff(var), pin));
            ctx->end_jumps.push_back(out.size());
            emit(make_jmp_imm(op::kJmpJeq, pin, 0, 0));
        } else {
            emit(make_stx(8, kFrameReg, voff(var), 0));
        }
        return true;
    }

    bool lower_block(const BlockStmt& blk, BlockCtx* parent) {
        BlockCtx ctx;
        ctx.parent = parent;
        ctx.next_pin = parent ? parent->next_pin : kFirstPinReg;
        // Paths that skip the block must still leave every result variable
        // initialized (to constant zero).
        std::vector<int> results;
        collect_result_vars(blk.body, results);
        if (!results.empty()) {
            emit(make_mov64_imm(0, 0));
            for (int v : results)
                emit(make_stx(8, kFrameReg, voff(v), 0));
        }
        for (const auto& g : blk.guards) {
            int pin = find_pin(&ctx, g.var);
            if (pin < 0) {
                if (ctx.next_pin > kLastPinReg)
                    return fail("too many guarded values live in one block");
                pin = ctx.next_pin++;
                ctx.pinned[g.var] = pin;
                emit(make_ldx(8, pin, kFrameReg, voff(g.var)));
            }
            ctx.end_jumps.push_back(out.size());
            switch (g.kind) {
            case GuardKind::kNonNull:
                emit(make_jmp_imm(op::kJmpJeq, pin, 0, 0));
                break;
            case GuardKind::kULe:
                if (g.bound <= 0x7fffffffULL) {
                    emit(make_jmp_imm(op::kJmpJgt, pin, static_cast<std::int32_t>(g.bound), 0));
                } else {
                    ctx.end_jumps.back() += 1; // the load below comes first
                    emit_load_imm(0, static_cast<std::int64_t>(g.bound));
                    emit(make_jmp_reg(op::kJmpJgt, pin, 0, 0));
                }
                break;
            case GuardKind::kUGe:
                if (g.bound <= 0x7fffffffULL) {
                    emit(make_jmp_imm(op::kJmpJlt, pin, static_cast<std::int32_t>(g.bound), 0));
                } else {
                    ctx.end_jumps.back() += 1;
                    emit_load_imm(0, static_cast<std::int64_t>(g.bound));
                    emit(make_jmp_reg(op::kJmpJlt, pin, 0, 0));
                }
                break;
            }
        }
        if (!lower_stmts(blk.body, &ctx))
            return false;
        // Patch every failed guard / failed null check to land here.
        std::vector<std::uint32_t> slot(out.size() + 1, 0);
        for (std::size_t i = 0; i < out.size(); ++i)
            slot[i + 1] = slot[i] + static_cast<std::uint32_t>(out[i].slots());
        for (std::size_t j : ctx.end_jumps) {
            std::int64_t delta =
                static_cast<std::int64_t>(slot[out.size()]) - static_cast<std::int64_t>(slot[j] + 1);
            if (delta > std::numeric_limits<std::int16_t>::max())
                return fail("block too large for a 16-bit branch");
            out[j].offset = static_cast<std::int16_t>(delta);
        }
        return true;
    }

    bool lower_stmts(const std::vector<Stmt>& stmts, BlockCtx* ctx) {
        for (std::size_t i = 0; i < stmts.size(); ++i) {
            const Stmt& s = stmts[i];
            if (const auto* let = std::get_if<LetStmt>(&s.node)) {
                emit_load_imm(0, let->value);
                emit(make_stx(8, kFrameReg, voff(let->var), 0));
            } else if (const auto* buf = std::get_if<BufStmt>(&s.node)) {
                int base = buf_off.at(buf->buf);
                for (std::uint32_t k = 0; k < (buf->size + 7) / 8; ++k)
                    emit(make_st_imm(8, kFrameReg, static_cast<std::int16_t>(base + 8 * k), 0));
            } else if (const auto* call = std::get_if<CallStmt>(&s.node)) {
                bool used_later = call->result_var &&
                                  ctx != nullptr &&
                                  var_used_in(stmts, i + 1, *call->result_var);
                if (!lower_call(*call, ctx, used_later))
                    return false;
            } else if (const auto* blk = std::get_if<BlockStmt>(&s.node)) {
                if (!lower_block(*blk, ctx))
                    return false;
            }
        }
        return true;
    }

    bool run() {
        if (!layout())
            return false;
        uses_ctx = !ast.ctx_bindings.empty() || stmts_use_ctx(ast.stmts);
        if (uses_ctx)
            emit(make_mov64_reg(kCtxReg, 1));
        const auto& fields = cat.program_type(ast.prog_type).context.fields;
        for (const auto& b : ast.ctx_bindings) {
            auto it = std::find_if(fields.begin(), fields.end(),
                                   [&](const ContextField& f) { return f.name == b.field; });
            if (it == fields.end())
                return fail(fmt::format("no context field {} on {}", b.field,
                                        to_string(ast.prog_type)));
            if (!it->read_allowed)
                return fail(fmt::format("context field {} is not readable", b.field));
            emit(make_ldx(static_cast<int>(it->width), 0, kCtxReg,
                          static_cast<std::int16_t>(it->offset)));
            emit(make_stx(8, kFrameReg, voff(b.var), 0));
        }
        if (!lower_stmts(ast.stmts, nullptr))
            return false;
        if (ast.ret.is_var)
            emit(make_ldx(8, 0, kFrameReg, voff(ast.ret.var)));
        else
            emit_load_imm(0, ast.ret.value);
        emit(make_exit());
        return true;
    }
};

} // namespace

std::variant<CompiledProgram, LowerError> compile_ast(const ProgramAst& ast, const Catalog& cat) {
    Lowerer lw(ast, cat);
    if (!lw.run())
        return LowerError{lw.err};
    CompiledProgram cp;
    cp.prog.prog_type = ast.prog_type;
    cp.prog.section_name = section_name(ast.prog_type, cat);
    cp.prog.insns = std::move(lw.out);
    cp.prog.relocations = std::move(lw.relocs);
    cp.map_deps = ast.map_deps;
    return cp;
}

std::string section_name(ProgramTypeId pt, const Catalog& cat) {
    return cat.program_type(pt).section_name;
}

std::variant<RawProgram, RelocateError> relocate(const RawProgram& prog,
                                                 const std::map<std::uint32_t, std::uint64_t>& handles) {
    for (const auto& insn : prog.insns)
        if (insn.is_wide() && insn.src_reg == op::kRelocatedMapRef)
            return RelocateError{"already_relocated", "image already holds runtime map ids"};
    RawProgram out = prog;
    for (const auto& rel : prog.relocations) {
        if (rel.insn_index >= out.insns.size())
            return RelocateError{"reloc_unresolved",
                                 fmt::format("relocation index {} out of range", rel.insn_index)};
        Instruction& insn = out.insns[rel.insn_index];
        if (!insn.is_wide() || insn.src_reg != op::kPseudoMapRef)
            return RelocateError{"reloc_unresolved",
                                 fmt::format("instruction {} is not a map reference", rel.insn_index)};
        auto it = handles.find(rel.map_ordinal);
        if (it == handles.end())
            return RelocateError{"reloc_unresolved",
                                 fmt::format("no handle for map ordinal {}", rel.map_ordinal)};
        insn.wide_imm = static_cast<std::int64_t>(it->second);
        insn.imm = static_cast<std::int32_t>(it->second & 0xffffffffu);
        insn.src_reg = op::kRelocatedMapRef;
    }
    for (const auto& insn : out.insns)
        if (insn.is_wide() && insn.src_reg == op::kPseudoMapRef)
            return RelocateError{"reloc_unresolved", "map reference without a relocation record"};
    out.relocations.clear();
    return out;
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

struct Cursor {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;
    bool ok = true;

    bool need(std::size_t n) {
        if (pos + n > bytes.size())
            ok = false;
        return ok;
    }
    std::uint8_t u8() {
        if (!need(1))
            return 0;
        return bytes[pos++];
    }
    std::uint16_t u16() {
        if (!need(2))
            return 0;
        std::uint16_t v = static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        if (!need(4))
            return 0;
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
};

constexpr std::uint16_t kBrfpVersion = 1;

} // namespace

std::vector<std::uint8_t> write_brfp(const CompiledProgram& cp) {
    std::vector<std::uint8_t> out = {'B', 'R', 'F', 'P'};
    put_u16(out, kBrfpVersion);
    put_u16(out, static_cast<std::uint16_t>(cp.prog.prog_type));
    put_u16(out, static_cast<std::uint16_t>(cp.prog.section_name.size()));
    out.insert(out.end(), cp.prog.section_name.begin(), cp.prog.section_name.end());
    put_u16(out, static_cast<std::uint16_t>(cp.map_deps.size()));
    for (const auto& m : cp.map_deps) {
        out.push_back(static_cast<std::uint8_t>(m.map_type));
        put_u32(out, m.key_size);
        put_u32(out, m.value_size);
        put_u32(out, m.max_entries);
        put_u32(out, m.flags);
    }
    put_u16(out, static_cast<std::uint16_t>(cp.prog.relocations.size()));
    for (const auto& r : cp.prog.relocations) {
        put_u32(out, r.insn_index);
        put_u32(out, r.map_ordinal);
    }
    auto encoded = encode_program(cp.prog.insns);
    if (std::holds_alternative<EncodeError>(encoded))
        throw std::runtime_error("container write over unencodable program: " +
                                 std::get<EncodeError>(encoded).message);
    const auto& bytes = std::get<std::vector<std::uint8_t>>(encoded);
    put_u32(out, static_cast<std::uint32_t>(bytes.size()));
    out.insert(out.end(), bytes.begin(), bytes.end());
    return out;
}

std::variant<CompiledProgram, SyntaxError> read_brfp(const std::vector<std::uint8_t>& bytes) {
    Cursor c{bytes};
    auto err = [&](const std::string& msg) {
        return SyntaxError{msg, static_cast<std::uint32_t>(c.pos)};
    };
    if (!c.need(4) || bytes[0] != 'B' || bytes[1] != 'R' || bytes[2] != 'F' || bytes[3] != 'P')
        return err("bad magic");
    c.pos = 4;
    if (c.u16() != kBrfpVersion)
        return err("unsupported container version");
    CompiledProgram cp;
    std::uint16_t pt = c.u16();
    if (!c.ok || pt >= kNumProgramTypes)
        return err("bad program type");
    cp.prog.prog_type = static_cast<ProgramTypeId>(pt);
    std::uint16_t nlen = c.u16();
    if (!c.need(nlen))
        return err("truncated section name");
    cp.prog.section_name.assign(bytes.begin() + static_cast<long>(c.pos),
                                bytes.begin() + static_cast<long>(c.pos + nlen));
    c.pos += nlen;
    std::uint16_t nmaps = c.u16();
    for (std::uint16_t i = 0; c.ok && i < nmaps; ++i) {
        MapSpecRequest m;
        std::uint8_t mt = c.u8();
        if (mt >= kNumMapTypes)
            return err("bad map type");
        m.map_type = static_cast<MapTypeId>(mt);
        m.key_size = c.u32();
        m.value_size = c.u32();
        m.max_entries = c.u32();
        m.flags = c.u32();
        cp.map_deps.push_back(m);
    }
    std::uint16_t nrel = c.u16();
    for (std::uint16_t i = 0; c.ok && i < nrel; ++i) {
        Relocation r;
        r.insn_index = c.u32();
        r.map_ordinal = c.u32();
        cp.prog.relocations.push_back(r);
    }
    std::uint32_t ilen = c.u32();
    if (!c.ok || !c.need(ilen))
        return err("truncated container");
    std::vector<std::uint8_t> insn_bytes(bytes.begin() + static_cast<long>(c.pos),
                                         bytes.begin() + static_cast<long>(c.pos + ilen));
    std::size_t insn_base = c.pos;
    c.pos += ilen;
    if (c.pos != bytes.size())
        return err("trailing bytes after container");
    auto decoded = decode_program_bytes(insn_bytes);
    if (auto* se = std::get_if<SyntaxError>(&decoded)) {
        se->byte_offset += static_cast<std::uint32_t>(insn_base);
        return *se;
    }
    cp.prog.insns = std::move(std::get<std::vector<Instruction>>(decoded));
    for (const auto& r : cp.prog.relocations) {
        if (r.insn_index >= cp.prog.insns.size())
            return err("relocation index out of range");
        const Instruction& insn = cp.prog.insns[r.insn_index];
        if (!insn.is_wide() || insn.src_reg != op::kPseudoMapRef)
            return err("relocation does not target a map reference");
        if (r.map_ordinal >= cp.map_deps.size())
            return err("relocation ordinal out of range");
    }
    return cp;
}

} // namespace brf
