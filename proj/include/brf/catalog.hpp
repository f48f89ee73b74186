#pragma once
#include "brf/isa.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace brf {

using HelperId = std::uint32_t;

enum class MapTypeId : std::uint8_t {
    ARRAY,
    PERCPU_ARRAY,
    HASH,
    LRU_HASH,
    PROG_ARRAY,
    RINGBUF,
    QUEUE,
    STACK,
    CGROUP_STORAGE,
    PERF_EVENT_ARRAY,
};
constexpr int kNumMapTypes = 10;
const char* to_string(MapTypeId mt);
std::optional<MapTypeId> map_type_from_string(const std::string& s);

enum class ArgType : std::uint8_t {
    ANYTHING,
    CONST_SIZE,
    CONST_SIZE_OR_ZERO,
    PTR_TO_MEM,
    PTR_TO_UNINIT_MEM,
    PTR_TO_MAP_KEY,
    PTR_TO_MAP_VALUE,
    PTR_TO_UNINIT_MAP_VALUE,
    CONST_MAP_PTR,
    PTR_TO_CTX,
    PTR_TO_REF,
};
const char* to_string(ArgType a);
std::optional<ArgType> arg_type_from_string(const std::string& s);

// Abstract value kinds tracked per register by the verifier. The _OR_NULL
// flavors are represented by the base kind plus a maybe-null flag; the
// catalog compatibility table is expressed over base kinds.
enum class VerifierValueType : std::uint8_t {
    SCALAR,
    PTR_TO_CTX,
    PTR_TO_STACK,
    CONST_PTR_TO_MAP,
    PTR_TO_MAP_VALUE,
    PTR_TO_MEM,
    PTR_TO_SOCK_COMMON,
    UNINIT,
};
const char* to_string(VerifierValueType v);
std::optional<VerifierValueType> value_type_from_string(const std::string& s);

enum class RetKind : std::uint8_t {
    VOID, // r0 left uninitialized
    SCALAR,
    PTR_TO_MAP_VALUE_OR_NULL,
    PTR_TO_MEM_OR_NULL,
};

enum class RefKind : std::uint8_t { RINGBUF_RESERVATION };

enum class LockContext : std::uint8_t { none, takes_bucket_lock, takes_queue_lock };

enum class AttachKind : std::uint8_t { socket, trace_event, cgroup, device };
const char* to_string(AttachKind k);
constexpr int kNumAttachKinds = 4;

struct HelperProto {
    HelperId id = 0;
    std::string name;
    std::vector<ArgType> args; // at most 5
    RetKind ret = RetKind::SCALAR;
    bool ret_nullable = false;
    std::optional<RefKind> acquires_ref;
    std::optional<RefKind> releases_ref;
    // Present iff the helper takes a CONST_MAP_PTR argument.
    std::optional<std::set<MapTypeId>> compatible_map_types;
    LockContext lock_context = LockContext::none;

    std::optional<int> map_arg_index() const;
    // Index of the CONST_SIZE / _OR_ZERO argument paired with the memory
    // pointer at index ptr_arg, if any (always ptr_arg + 1 in this model).
    bool has_map_arg() const { return map_arg_index().has_value(); }
};

struct SizeConstraint {
    // Either a fixed set of admissible sizes, or a [min,max] range with
    // alignment.
    std::vector<std::uint32_t> fixed_set;
    std::uint32_t min = 0;
    std::uint32_t max = 0;
    std::uint32_t align = 1;

    bool admits(std::uint32_t v) const;
};

struct EntriesConstraint {
    std::uint32_t min = 1;
    std::uint32_t max = 1;
    bool power_of_two = false;
    bool forced_zero = false;

    bool admits(std::uint32_t v) const;
};

struct MapTypeSpec {
    MapTypeId id = MapTypeId::ARRAY;
    SizeConstraint key_size;
    SizeConstraint value_size;
    EntriesConstraint max_entries;
    // Mutually exclusive flag groups: at most one flag of each group may be
    // set; any bit outside all groups is invalid.
    std::vector<std::vector<std::uint32_t>> flag_groups;
    LockContext lock_context = LockContext::none;

    std::uint32_t allowed_flag_mask() const;
    bool flags_valid(std::uint32_t flags) const;
};

// Map creation flag bits (subset of the kernel's BPF_F_* values).
namespace map_flags {
constexpr std::uint32_t kNoPrealloc = 0x1;
constexpr std::uint32_t kZeroSeed = 0x40;
} // namespace map_flags

struct ContextField {
    std::string name;
    std::uint32_t offset = 0;
    std::uint32_t width = 0;
    bool read_allowed = false;
    bool write_allowed = false;
    VerifierValueType yields = VerifierValueType::SCALAR;
};

struct ContextDescriptor {
    std::uint32_t byte_size = 0;
    std::vector<ContextField> fields;

    const ContextField* field_at(std::uint32_t offset, std::uint32_t width) const;
};

struct ProgramTypeSpec {
    ProgramTypeId id = ProgramTypeId::SOCKET_FILTER;
    std::string section_name;
    ContextDescriptor context;
    std::set<HelperId> available_helpers;
    std::set<MapTypeId> compatible_maps;
    std::uint32_t forbidden_map_flags = 0;
    AttachKind attach_kind = AttachKind::socket;
    bool test_runnable = true;
};

struct CatalogError {
    std::string message;
    int line = 0;
};

// The extracted domain-knowledge tables: program types, helper prototypes,
// map constraints, and the argument-type compatibility table. Immutable
// after load; shared read-only across workers.
class Catalog {
  public:
    // Parses the self-describing textual table format.
    static std::variant<Catalog, CatalogError> parse(const std::string& text);
    static const Catalog& builtin();
    static const char* builtin_text();

    const std::vector<HelperProto>& helpers() const { return helpers_; }
    const HelperProto* helper(HelperId id) const;
    const HelperProto* helper_by_name(const std::string& name) const;
    std::string helper_name(HelperId id) const;

    const ProgramTypeSpec& program_type(ProgramTypeId pt) const;
    const MapTypeSpec& map_attr_constraints(MapTypeId mt) const;

    // Flattened helper availability for a program type.
    const std::set<HelperId>& helpers_for(ProgramTypeId pt) const;

    // Which register value kinds satisfy an argument type.
    const std::set<VerifierValueType>& compatible_value_types(ArgType a) const;

    // Intersection of the helper's compatible map types and the program
    // type's compatible maps. Empty optional when the helper takes no map.
    std::optional<std::set<MapTypeId>> maps_for(ProgramTypeId pt, HelperId h) const;

    // Context fields of pt filtered by permission.
    std::vector<ContextField> context_fields(ProgramTypeId pt, bool write) const;

    int version = 0;

  private:
    std::vector<HelperProto> helpers_;
    std::map<ProgramTypeId, ProgramTypeSpec> program_types_;
    std::map<MapTypeId, MapTypeSpec> map_types_;
    std::map<ArgType, std::set<VerifierValueType>> arg_compat_;
};

} // namespace brf
