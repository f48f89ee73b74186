#pragma once
#include "brf/ast.hpp"
#include "brf/catalog.hpp"
#include "brf/isa.hpp"

#include <map>
#include <string>
#include <variant>
#include <vector>

namespace brf {

// A compiled program plus the map specs its relocations refer to, in
// ordinal order.
struct CompiledProgram {
    RawProgram prog;
    std::vector<MapSpecRequest> map_deps;

    bool operator==(const CompiledProgram&) const = default;
};

struct LowerError {
    std::string message;
};

// Straight-line, unoptimized lowering: every variable lives in an 8-byte
// frame slot, guarded blocks become forward branches, map references
// become wide loads with relocation records.
std::variant<CompiledProgram, LowerError> compile_ast(const ProgramAst& ast, const Catalog& cat);

std::string section_name(ProgramTypeId pt, const Catalog& cat);

// src_reg tag of a wide load after relocation (kPseudoMapRef before).
namespace op {
constexpr std::uint8_t kRelocatedMapRef = 2;
}

struct RelocateError {
    std::string rule_id; // reloc_unresolved | already_relocated
    std::string message;
};

// Rewrites map-reference wide loads from ordinals to runtime map ids and
// consumes the relocation list. Returns a new image; relocating an
// already-relocated image fails.
std::variant<RawProgram, RelocateError> relocate(const RawProgram& prog,
                                                 const std::map<std::uint32_t, std::uint64_t>& handles);

// BRFP container: magic, version, program type, section name, map_deps,
// relocation table, instruction bytes; everything little-endian.
std::vector<std::uint8_t> write_brfp(const CompiledProgram& cp);
std::variant<CompiledProgram, SyntaxError> read_brfp(const std::vector<std::uint8_t>& bytes);

} // namespace brf
