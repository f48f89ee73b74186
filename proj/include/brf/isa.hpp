#pragma once
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace brf {

// Instruction encoding constants. Numeric values follow the public eBPF ISA
// so that corpus bytecode is readable by standard tooling.
namespace op {

constexpr std::uint8_t kClassMask = 0x07;
constexpr std::uint8_t kClassLd = 0x00;
constexpr std::uint8_t kClassLdx = 0x01;
constexpr std::uint8_t kClassSt = 0x02;
constexpr std::uint8_t kClassStx = 0x03;
constexpr std::uint8_t kClassAlu32 = 0x04;
constexpr std::uint8_t kClassJmp = 0x05;
constexpr std::uint8_t kClassJmp32 = 0x06;
constexpr std::uint8_t kClassAlu64 = 0x07;

constexpr std::uint8_t kSrcImm = 0x00;
constexpr std::uint8_t kSrcReg = 0x08;

// Memory access width bits.
constexpr std::uint8_t kSizeMask = 0x18;
constexpr std::uint8_t kSizeW = 0x00;
constexpr std::uint8_t kSizeH = 0x08;
constexpr std::uint8_t kSizeB = 0x10;
constexpr std::uint8_t kSizeDw = 0x18;

constexpr std::uint8_t kModeMask = 0xe0;
constexpr std::uint8_t kModeImm = 0x00;
constexpr std::uint8_t kModeMem = 0x60;
constexpr std::uint8_t kModeAtomic = 0xc0;

// ALU operation bits (upper nibble).
constexpr std::uint8_t kAluOpMask = 0xf0;
constexpr std::uint8_t kAluAdd = 0x00;
constexpr std::uint8_t kAluSub = 0x10;
constexpr std::uint8_t kAluMul = 0x20;
constexpr std::uint8_t kAluDiv = 0x30;
constexpr std::uint8_t kAluOr = 0x40;
constexpr std::uint8_t kAluAnd = 0x50;
constexpr std::uint8_t kAluLsh = 0x60;
constexpr std::uint8_t kAluRsh = 0x70;
constexpr std::uint8_t kAluNeg = 0x80;
constexpr std::uint8_t kAluMod = 0x90;
constexpr std::uint8_t kAluXor = 0xa0;
constexpr std::uint8_t kAluMov = 0xb0;
constexpr std::uint8_t kAluArsh = 0xc0;
constexpr std::uint8_t kAluEnd = 0xd0;

// Jump operation bits (upper nibble).
constexpr std::uint8_t kJmpJa = 0x00;
constexpr std::uint8_t kJmpJeq = 0x10;
constexpr std::uint8_t kJmpJgt = 0x20;
constexpr std::uint8_t kJmpJge = 0x30;
constexpr std::uint8_t kJmpJset = 0x40;
constexpr std::uint8_t kJmpJne = 0x50;
constexpr std::uint8_t kJmpJsgt = 0x60;
constexpr std::uint8_t kJmpJsge = 0x70;
constexpr std::uint8_t kJmpCall = 0x80;
constexpr std::uint8_t kJmpExit = 0x90;
constexpr std::uint8_t kJmpJlt = 0xa0;
constexpr std::uint8_t kJmpJle = 0xb0;
constexpr std::uint8_t kJmpJslt = 0xc0;
constexpr std::uint8_t kJmpJsle = 0xd0;

// Full opcodes used throughout the model.
constexpr std::uint8_t kExit = kClassJmp | kJmpExit;          // 0x95
constexpr std::uint8_t kCall = kClassJmp | kJmpCall;          // 0x85
constexpr std::uint8_t kJa = kClassJmp | kJmpJa;              // 0x05
constexpr std::uint8_t kMov64Imm = kClassAlu64 | kAluMov;     // 0xb7
constexpr std::uint8_t kMov64Reg = kClassAlu64 | kAluMov | kSrcReg; // 0xbf
constexpr std::uint8_t kLddw = kClassLd | kSizeDw;            // 0x18

// src_reg value marking a wide immediate load that refers to a map and
// needs relocation.
constexpr std::uint8_t kPseudoMapRef = 1;

} // namespace op

constexpr int kMaxReg = 10; // r0-r10; r10 is the frame register
constexpr int kFrameReg = 10;

struct Instruction {
    std::uint8_t opcode = 0;
    std::uint8_t dst_reg = 0;
    std::uint8_t src_reg = 0;
    std::int16_t offset = 0;
    std::int32_t imm = 0;
    // Present only for the two-slot 64-bit immediate load; holds the full
    // 64-bit value.
    std::optional<std::int64_t> wide_imm;

    bool is_wide() const { return opcode == op::kLddw; }
    // Number of 8-byte bytecode slots occupied.
    int slots() const { return is_wide() ? 2 : 1; }
    std::uint8_t cls() const { return opcode & op::kClassMask; }

    bool operator==(const Instruction&) const = default;
};

// Convenience constructors.
Instruction make_alu64_imm(std::uint8_t alu_op, int dst, std::int32_t imm);
Instruction make_alu64_reg(std::uint8_t alu_op, int dst, int src);
Instruction make_mov64_imm(int dst, std::int32_t imm);
Instruction make_mov64_reg(int dst, int src);
Instruction make_lddw(int dst, std::int64_t value, std::uint8_t pseudo_src = 0);
Instruction make_ldx(int width_bytes, int dst, int src, std::int16_t off);
Instruction make_stx(int width_bytes, int dst, std::int16_t off, int src);
Instruction make_st_imm(int width_bytes, int dst, std::int16_t off, std::int32_t imm);
Instruction make_jmp(std::uint8_t jmp_op, int dst, std::int16_t off); // with imm 0
Instruction make_jmp_imm(std::uint8_t jmp_op, int dst, std::int32_t imm, std::int16_t off);
Instruction make_jmp_reg(std::uint8_t jmp_op, int dst, int src, std::int16_t off);
Instruction make_ja(std::int16_t off);
Instruction make_call(std::int32_t helper_id);
Instruction make_exit();

enum class ProgramTypeId : std::uint8_t {
    SOCKET_FILTER,
    KPROBE,
    TRACEPOINT,
    PERF_EVENT,
    CGROUP_SOCK,
    XDP,
};
constexpr int kNumProgramTypes = 6;
const char* to_string(ProgramTypeId pt);
std::optional<ProgramTypeId> program_type_from_string(const std::string& s);

struct Relocation {
    std::uint32_t insn_index = 0; // index into RawProgram::insns (fused)
    std::uint32_t map_ordinal = 0;

    bool operator==(const Relocation&) const = default;
};

struct RawProgram {
    ProgramTypeId prog_type = ProgramTypeId::SOCKET_FILTER;
    std::string section_name;
    std::vector<Instruction> insns;
    std::vector<Relocation> relocations;

    // Slot index (bytecode position in 8-byte units) of each instruction.
    std::vector<std::uint32_t> slot_index() const;
    std::uint32_t total_slots() const;

    bool operator==(const RawProgram&) const = default;
};

struct SyntaxError {
    std::string message;
    std::uint32_t byte_offset = 0;
};

struct EncodeError {
    std::string message;
};

// Encodes one instruction as 8 (or 16, for the wide immediate form) bytes,
// little-endian regardless of host.
std::variant<std::vector<std::uint8_t>, EncodeError> encode_instruction(const Instruction& insn);

// Encodes a full instruction stream.
std::variant<std::vector<std::uint8_t>, EncodeError> encode_program(const std::vector<Instruction>& insns);

// Total over arbitrary byte input: returns instructions with wide forms fused
// or a structured error. Never throws for malformed input.
std::variant<std::vector<Instruction>, SyntaxError> decode_program_bytes(const std::vector<std::uint8_t>& bytes);

// One line per instruction, stable format. helper_name resolves call targets
// to names (pass nullptr to print raw ids).
std::string disassemble(const RawProgram& prog,
                        const std::function<std::string(std::int32_t)>* helper_name = nullptr);
std::string disassemble_insn(const Instruction& insn,
                             const std::function<std::string(std::int32_t)>* helper_name = nullptr);

} // namespace brf
