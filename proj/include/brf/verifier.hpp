#pragma once
#include "brf/ast.hpp"
#include "brf/catalog.hpp"
#include "brf/interval.hpp"
#include "brf/isa.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace brf {

enum class ErrorCategory : std::uint8_t { syntax, semantic, internal, other };
const char* to_string(ErrorCategory c);

struct VerifierError {
    ErrorCategory category = ErrorCategory::semantic;
    std::string rule_id;
    int insn_index = -1;
    std::string message;
};

// Abstract state of one register. For SCALAR, range is the value interval;
// for pointer kinds it is the byte-offset interval from the region base.
struct RegState {
    VerifierValueType vtype = VerifierValueType::UNINIT;
    ValueRange range = ValueRange::constant(0);
    std::optional<std::uint32_t> map_ordinal; // CONST_PTR_TO_MAP / PTR_TO_MAP_VALUE
    std::optional<std::uint32_t> mem_size;    // extent of MAP_VALUE / MEM regions
    std::optional<std::uint32_t> ref_id;      // acquired-resource handle
    bool maybe_null = false;

    bool is_init() const { return vtype != VerifierValueType::UNINIT; }
    bool is_scalar() const { return vtype == VerifierValueType::SCALAR; }
    bool is_pointer() const { return is_init() && !is_scalar(); }
    std::optional<std::uint64_t> known_const() const {
        if (is_scalar() && range.is_const())
            return range.const_value();
        return std::nullopt;
    }

    static RegState scalar(ValueRange r) {
        RegState s;
        s.vtype = VerifierValueType::SCALAR;
        s.range = r;
        return s;
    }
    static RegState uninit() { return RegState{}; }

    bool operator==(const RegState&) const = default;
};

constexpr int kStackSize = 512;
constexpr int kStackSlots = kStackSize / 8;

// One 8-byte stack slot: either a full spilled register (keeps pointer
// provenance and constness) or bytewise-initialized miscellaneous data.
struct StackSlot {
    enum Kind : std::uint8_t { kEmpty, kSpill, kMisc };
    Kind kind = kEmpty;
    RegState spill;
    std::uint8_t init_mask = 0; // byte i of the slot initialized (kMisc)

    bool operator==(const StackSlot&) const = default;
};

// Acquired-reference bookkeeping. Nullness knowledge only ratchets up:
// once a path proves a reference non-null it never becomes provably null
// again, which is what makes release-under-a-second-null-check leak.
enum class RefNullness : std::uint8_t { unknown, proven_nonnull, proven_null };

struct VerifySummary {
    std::uint32_t max_stack_depth = 0; // bytes below the frame pointer
    std::set<HelperId> helpers_called;
    std::set<std::uint32_t> maps_touched; // ordinals
    std::uint32_t paths_explored = 0;
    std::uint32_t insns_processed = 0;
};

struct VerifyOptions {
    std::uint32_t max_processed_insns = 10000;
};

// Control-flow admission: all jump targets land on instruction starts,
// the last instruction is exit or an unconditional jump, the graph is
// acyclic, and every instruction is reachable.
std::optional<VerifierError> check_cfg(const RawProgram& prog);

// Path-sensitive abstract interpretation over all acyclic paths. Map
// references in the program are ordinals into maps. Includes check_cfg.
std::variant<VerifySummary, VerifierError> verify(const RawProgram& prog,
                                                  const std::vector<MapSpecRequest>& maps,
                                                  ProgramTypeId pt, const Catalog& cat,
                                                  const VerifyOptions& opts = {});

} // namespace brf
