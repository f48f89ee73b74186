#include "brf/isa.hpp"

#include <fmt/format.h>

namespace brf {

Instruction make_alu64_imm(std::uint8_t alu_op, int dst, std::int32_t imm) {
    return Instruction{.opcode = static_cast<std::uint8_t>(op::kClassAlu64 | alu_op),
                       .dst_reg = static_cast<std::uint8_t>(dst),
                       .imm = imm};
}

Instruction make_alu64_reg(std::uint8_t alu_op, int dst, int src) {
    return Instruction{.opcode = static_cast<std::uint8_t>(op::kClassAlu64 | alu_op | op::kSrcReg),
                       .dst_reg = static_cast<std::uint8_t>(dst),
                       .src_reg = static_cast<std::uint8_t>(src)};
}

Instruction make_mov64_imm(int dst, std::int32_t imm) { return make_alu64_imm(op::kAluMov, dst, imm); }
Instruction make_mov64_reg(int dst, int src) { return make_alu64_reg(op::kAluMov, dst, src); }

Instruction make_lddw(int dst, std::int64_t value, std::uint8_t pseudo_src) {
    return Instruction{.opcode = op::kLddw,
                       .dst_reg = static_cast<std::uint8_t>(dst),
                       .src_reg = pseudo_src,
                       .imm = static_cast<std::int32_t>(static_cast<std::uint64_t>(value) & 0xffffffffu),
                       .wide_imm = value};
}

namespace {
std::uint8_t size_bits(int width_bytes) {
    switch (width_bytes) {
    case 1: return op::kSizeB;
    case 2: return op::kSizeH;
    case 4: return op::kSizeW;
    default: return op::kSizeDw;
    }
}
} // namespace

Instruction make_ldx(int width_bytes, int dst, int src, std::int16_t off) {
    return Instruction{.opcode = static_cast<std::uint8_t>(op::kClassLdx | op::kModeMem | size_bits(width_bytes)),
                       .dst_reg = static_cast<std::uint8_t>(dst),
                       .src_reg = static_cast<std::uint8_t>(src),
                       .offset = off};
}

Instruction make_stx(int width_bytes, int dst, std::int16_t off, int src) {
    return Instruction{.opcode = static_cast<std::uint8_t>(op::kClassStx | op::kModeMem | size_bits(width_bytes)),
                       .dst_reg = static_cast<std::uint8_t>(dst),
                       .src_reg = static_cast<std::uint8_t>(src),
                       .offset = off};
}

Instruction make_st_imm(int width_bytes, int dst, std::int16_t off, std::int32_t imm) {
    return Instruction{.opcode = static_cast<std::uint8_t>(op::kClassSt | op::kModeMem | size_bits(width_bytes)),
                       .dst_reg = static_cast<std::uint8_t>(dst),
                       .offset = off,
                       .imm = imm};
}

Instruction make_jmp_imm(std::uint8_t jmp_op, int dst, std::int32_t imm, std::int16_t off) {
    return Instruction{.opcode = static_cast<std::uint8_t>(op::kClassJmp | jmp_op),
                       .dst_reg = static_cast<std::uint8_t>(dst),
                       .offset = off,
                       .imm = imm};
}

Instruction make_jmp_reg(std::uint8_t jmp_op, int dst, int src, std::int16_t off) {
    return Instruction{.opcode = static_cast<std::uint8_t>(op::kClassJmp | jmp_op | op::kSrcReg),
                       .dst_reg = static_cast<std::uint8_t>(dst),
                       .src_reg = static_cast<std::uint8_t>(src),
                       .offset = off};
}

Instruction make_ja(std::int16_t off) { return Instruction{.opcode = op::kJa, .offset = off}; }
Instruction make_call(std::int32_t helper_id) { return Instruction{.opcode = op::kCall, .imm = helper_id}; }
Instruction make_exit() { return Instruction{.opcode = op::kExit}; }

const char* to_string(ProgramTypeId pt) {
    switch (pt) {
    case ProgramTypeId::SOCKET_FILTER: return "SOCKET_FILTER";
    case ProgramTypeId::KPROBE: return "KPROBE";
    case ProgramTypeId::TRACEPOINT: return "TRACEPOINT";
    case ProgramTypeId::PERF_EVENT: return "PERF_EVENT";
    case ProgramTypeId::CGROUP_SOCK: return "CGROUP_SOCK";
    case ProgramTypeId::XDP: return "XDP";
    }
    return "?";
}

std::optional<ProgramTypeId> program_type_from_string(const std::string& s) {
    for (int i = 0; i < kNumProgramTypes; ++i) {
        auto pt = static_cast<ProgramTypeId>(i);
        if (s == to_string(pt))
            return pt;
    }
    return std::nullopt;
}

std::vector<std::uint32_t> RawProgram::slot_index() const {
    std::vector<std::uint32_t> out;
    out.reserve(insns.size());
    std::uint32_t slot = 0;
    for (const auto& insn : insns) {
        out.push_back(slot);
        slot += insn.slots();
    }
    return out;
}

std::uint32_t RawProgram::total_slots() const {
    std::uint32_t slot = 0;
    for (const auto& insn : insns)
        slot += insn.slots();
    return slot;
}

namespace {

void put_slot(std::vector<std::uint8_t>& out, std::uint8_t opcode, std::uint8_t dst,
              std::uint8_t src, std::int16_t offset, std::int32_t imm) {
    out.push_back(opcode);
    out.push_back(static_cast<std::uint8_t>((dst & 0x0f) | (src << 4)));
    auto uoff = static_cast<std::uint16_t>(offset);
    out.push_back(static_cast<std::uint8_t>(uoff & 0xff));
    out.push_back(static_cast<std::uint8_t>(uoff >> 8));
    auto uimm = static_cast<std::uint32_t>(imm);
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>((uimm >> (8 * i)) & 0xff));
}

bool valid_alu_nibble(std::uint8_t nib) { return nib <= op::kAluEnd; }

bool valid_jmp_nibble(std::uint8_t nib) { return nib <= op::kJmpJsle; }

// Structural validity of an opcode byte (what the decoder recognizes;
// a superset of what the verifier supports).
bool known_opcode(std::uint8_t opcode) {
    std::uint8_t cls = opcode & op::kClassMask;
    switch (cls) {
    case op::kClassLd:
        return opcode == op::kLddw;
    case op::kClassLdx:
        return (opcode & op::kModeMask) == op::kModeMem;
    case op::kClassSt:
        return (opcode & op::kModeMask) == op::kModeMem;
    case op::kClassStx:
        return (opcode & op::kModeMask) == op::kModeMem ||
               (opcode & op::kModeMask) == op::kModeAtomic;
    case op::kClassAlu32:
    case op::kClassAlu64:
        return valid_alu_nibble(opcode & op::kAluOpMask);
    case op::kClassJmp:
    case op::kClassJmp32:
        return valid_jmp_nibble(opcode & 0xf0);
    }
    return false;
}

} // namespace

std::variant<std::vector<std::uint8_t>, EncodeError> encode_instruction(const Instruction& insn) {
    if (insn.dst_reg > kMaxReg || insn.src_reg > kMaxReg)
        return EncodeError{fmt::format("register index out of range: dst={} src={}", insn.dst_reg, insn.src_reg)};
    if (insn.wide_imm.has_value() != insn.is_wide())
        return EncodeError{insn.is_wide() ? "ld_imm64 requires wide_imm"
                                          : "wide_imm on non-wide opcode"};
    if (!known_opcode(insn.opcode))
        return EncodeError{fmt::format("unknown opcode 0x{:02x}", insn.opcode)};
    std::vector<std::uint8_t> out;
    if (insn.is_wide()) {
        auto value = static_cast<std::uint64_t>(*insn.wide_imm);
        put_slot(out, insn.opcode, insn.dst_reg, insn.src_reg, insn.offset,
                 static_cast<std::int32_t>(value & 0xffffffffu));
        put_slot(out, 0, 0, 0, 0, static_cast<std::int32_t>(value >> 32));
    } else {
        put_slot(out, insn.opcode, insn.dst_reg, insn.src_reg, insn.offset, insn.imm);
    }
    return out;
}

std::variant<std::vector<std::uint8_t>, EncodeError> encode_program(const std::vector<Instruction>& insns) {
    std::vector<std::uint8_t> out;
    for (const auto& insn : insns) {
        auto unit = encode_instruction(insn);
        if (auto* err = std::get_if<EncodeError>(&unit))
            return *err;
        auto& bytes = std::get<std::vector<std::uint8_t>>(unit);
        out.insert(out.end(), bytes.begin(), bytes.end());
    }
    return out;
}

std::variant<std::vector<Instruction>, SyntaxError> decode_program_bytes(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() % 8 != 0)
        return SyntaxError{"truncated instruction", static_cast<std::uint32_t>(bytes.size() / 8 * 8)};
    std::vector<Instruction> out;
    for (std::size_t pos = 0; pos < bytes.size(); pos += 8) {
        Instruction insn;
        insn.opcode = bytes[pos];
        insn.dst_reg = bytes[pos + 1] & 0x0f;
        insn.src_reg = bytes[pos + 1] >> 4;
        insn.offset = static_cast<std::int16_t>(
            static_cast<std::uint16_t>(bytes[pos + 2]) | (static_cast<std::uint16_t>(bytes[pos + 3]) << 8));
        std::uint32_t uimm = 0;
        for (int i = 0; i < 4; ++i)
            uimm |= static_cast<std::uint32_t>(bytes[pos + 4 + i]) << (8 * i);
        insn.imm = static_cast<std::int32_t>(uimm);
        auto at = static_cast<std::uint32_t>(pos);

        if (!known_opcode(insn.opcode))
            return SyntaxError{fmt::format("unknown opcode 0x{:02x}", insn.opcode), at};
        if (insn.dst_reg > kMaxReg || insn.src_reg > kMaxReg) {
            // src of ld_imm64 is a pseudo tag, not a register.
            if (!(insn.opcode == op::kLddw && insn.dst_reg <= kMaxReg))
                return SyntaxError{"invalid register index", at};
        }
        if (insn.opcode == op::kLddw) {
            if (insn.offset != 0)
                return SyntaxError{"ld_imm64 with nonzero offset", at};
            if (pos + 16 > bytes.size())
                return SyntaxError{"incomplete ld_imm64", at};
            const std::uint8_t* hi = &bytes[pos + 8];
            if (hi[0] != 0 || hi[1] != 0 || hi[2] != 0 || hi[3] != 0)
                return SyntaxError{"malformed ld_imm64 second slot", at};
            std::uint32_t hi_imm = 0;
            for (int i = 0; i < 4; ++i)
                hi_imm |= static_cast<std::uint32_t>(hi[4 + i]) << (8 * i);
            insn.wide_imm = static_cast<std::int64_t>(
                (static_cast<std::uint64_t>(hi_imm) << 32) | uimm);
            pos += 8;
        }
        out.push_back(insn);
    }
    return out;
}

namespace {

const char* alu_symbol(std::uint8_t nib) {
    switch (nib) {
    case op::kAluAdd: return "+=";
    case op::kAluSub: return "-=";
    case op::kAluMul: return "*=";
    case op::kAluDiv: return "/=";
    case op::kAluOr: return "|=";
    case op::kAluAnd: return "&=";
    case op::kAluLsh: return "<<=";
    case op::kAluRsh: return ">>=";
    case op::kAluMod: return "%=";
    case op::kAluXor: return "^=";
    case op::kAluMov: return "=";
    case op::kAluArsh: return "s>>=";
    }
    return "?=";
}

const char* jmp_symbol(std::uint8_t nib) {
    switch (nib) {
    case op::kJmpJeq: return "==";
    case op::kJmpJgt: return ">";
    case op::kJmpJge: return ">=";
    case op::kJmpJset: return "&";
    case op::kJmpJne: return "!=";
    case op::kJmpJsgt: return "s>";
    case op::kJmpJsge: return "s>=";
    case op::kJmpJlt: return "<";
    case op::kJmpJle: return "<=";
    case op::kJmpJslt: return "s<";
    case op::kJmpJsle: return "s<=";
    }
    return "?";
}

const char* width_name(std::uint8_t opcode) {
    switch (opcode & op::kSizeMask) {
    case op::kSizeB: return "u8";
    case op::kSizeH: return "u16";
    case op::kSizeW: return "u32";
    default: return "u64";
    }
}

} // namespace

std::string disassemble_insn(const Instruction& insn,
                             const std::function<std::string(std::int32_t)>* helper_name) {
    const std::uint8_t cls = insn.cls();
    const char* r = cls == op::kClassAlu32 ? "w" : "r";
    switch (cls) {
    case op::kClassAlu32:
    case op::kClassAlu64: {
        std::uint8_t nib = insn.opcode & op::kAluOpMask;
        if (nib == op::kAluNeg)
            return fmt::format("{}{} = -{}{}", r, insn.dst_reg, r, insn.dst_reg);
        if (nib == op::kAluEnd)
            return fmt::format("{}{} = bswap{}({}{})", r, insn.dst_reg, insn.imm, r, insn.dst_reg);
        if (insn.opcode & op::kSrcReg)
            return fmt::format("{}{} {} {}{}", r, insn.dst_reg, alu_symbol(nib), r, insn.src_reg);
        return fmt::format("{}{} {} {}", r, insn.dst_reg, alu_symbol(nib), insn.imm);
    }
    case op::kClassJmp:
    case op::kClassJmp32: {
        std::uint8_t nib = insn.opcode & 0xf0;
        if (nib == op::kJmpExit)
            return "exit";
        if (nib == op::kJmpCall) {
            if (helper_name)
                return fmt::format("call {}", (*helper_name)(insn.imm));
            return fmt::format("call {}", insn.imm);
        }
        if (nib == op::kJmpJa)
            return fmt::format("goto {:+}", insn.offset);
        if (insn.opcode & op::kSrcReg)
            return fmt::format("if r{} {} r{} goto {:+}", insn.dst_reg, jmp_symbol(nib), insn.src_reg,
                               insn.offset);
        return fmt::format("if r{} {} {} goto {:+}", insn.dst_reg, jmp_symbol(nib), insn.imm, insn.offset);
    }
    case op::kClassLd:
        if (insn.src_reg == op::kPseudoMapRef)
            return fmt::format("r{} = map_fd {}", insn.dst_reg, insn.wide_imm.value_or(0));
        return fmt::format("r{} = 0x{:x} ll", insn.dst_reg,
                           static_cast<std::uint64_t>(insn.wide_imm.value_or(0)));
    case op::kClassLdx:
        return fmt::format("r{} = *({} *)(r{} {:+})", insn.dst_reg, width_name(insn.opcode), insn.src_reg,
                           insn.offset);
    case op::kClassSt:
        return fmt::format("*({} *)(r{} {:+}) = {}", width_name(insn.opcode), insn.dst_reg, insn.offset,
                           insn.imm);
    case op::kClassStx:
        if ((insn.opcode & op::kModeMask) == op::kModeAtomic)
            return fmt::format("atomic *({} *)(r{} {:+}) op r{}", width_name(insn.opcode), insn.dst_reg,
                               insn.offset, insn.src_reg);
        return fmt::format("*({} *)(r{} {:+}) = r{}", width_name(insn.opcode), insn.dst_reg, insn.offset,
                           insn.src_reg);
    }
    return "?";
}

std::string disassemble(const RawProgram& prog,
                        const std::function<std::string(std::int32_t)>* helper_name) {
    std::string out;
    auto slots = prog.slot_index();
    for (std::size_t i = 0; i < prog.insns.size(); ++i)
        out += fmt::format("{:4}: {}\n", slots[i], disassemble_insn(prog.insns[i], helper_name));
    return out;
}

} // namespace brf
