#include "brf/catalog.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <sstream>

namespace brf {

const char* to_string(MapTypeId mt) {
    switch (mt) {
    case MapTypeId::ARRAY: return "ARRAY";
    case MapTypeId::PERCPU_ARRAY: return "PERCPU_ARRAY";
    case MapTypeId::HASH: return "HASH";
    case MapTypeId::LRU_HASH: return "LRU_HASH";
    case MapTypeId::PROG_ARRAY: return "PROG_ARRAY";
    case MapTypeId::RINGBUF: return "RINGBUF";
    case MapTypeId::QUEUE: return "QUEUE";
    case MapTypeId::STACK: return "STACK";
    case MapTypeId::CGROUP_STORAGE: return "CGROUP_STORAGE";
    case MapTypeId::PERF_EVENT_ARRAY: return "PERF_EVENT_ARRAY";
    }
    return "?";
}

std::optional<MapTypeId> map_type_from_string(const std::string& s) {
    for (int i = 0; i < kNumMapTypes; ++i)
        if (s == to_string(static_cast<MapTypeId>(i)))
            return static_cast<MapTypeId>(i);
    return std::nullopt;
}

const char* to_string(ArgType a) {
    switch (a) {
    case ArgType::ANYTHING: return "ANYTHING";
    case ArgType::CONST_SIZE: return "CONST_SIZE";
    case ArgType::CONST_SIZE_OR_ZERO: return "CONST_SIZE_OR_ZERO";
    case ArgType::PTR_TO_MEM: return "PTR_TO_MEM";
    case ArgType::PTR_TO_UNINIT_MEM: return "PTR_TO_UNINIT_MEM";
    case ArgType::PTR_TO_MAP_KEY: return "PTR_TO_MAP_KEY";
    case ArgType::PTR_TO_MAP_VALUE: return "PTR_TO_MAP_VALUE";
    case ArgType::PTR_TO_UNINIT_MAP_VALUE: return "PTR_TO_UNINIT_MAP_VALUE";
    case ArgType::CONST_MAP_PTR: return "CONST_MAP_PTR";
    case ArgType::PTR_TO_CTX: return "PTR_TO_CTX";
    case ArgType::PTR_TO_REF: return "PTR_TO_REF";
    }
    return "?";
}

std::optional<ArgType> arg_type_from_string(const std::string& s) {
    for (int i = 0; i <= static_cast<int>(ArgType::PTR_TO_REF); ++i)
        if (s == to_string(static_cast<ArgType>(i)))
            return static_cast<ArgType>(i);
    return std::nullopt;
}

const char* to_string(VerifierValueType v) {
    switch (v) {
    case VerifierValueType::SCALAR: return "SCALAR";
    case VerifierValueType::PTR_TO_CTX: return "PTR_TO_CTX";
    case VerifierValueType::PTR_TO_STACK: return "PTR_TO_STACK";
    case VerifierValueType::CONST_PTR_TO_MAP: return "CONST_PTR_TO_MAP";
    case VerifierValueType::PTR_TO_MAP_VALUE: return "PTR_TO_MAP_VALUE";
    case VerifierValueType::PTR_TO_MEM: return "PTR_TO_MEM";
    case VerifierValueType::PTR_TO_SOCK_COMMON: return "PTR_TO_SOCK_COMMON";
    case VerifierValueType::UNINIT: return "UNINIT";
    }
    return "?";
}

std::optional<VerifierValueType> value_type_from_string(const std::string& s) {
    for (int i = 0; i <= static_cast<int>(VerifierValueType::UNINIT); ++i)
        if (s == to_string(static_cast<VerifierValueType>(i)))
            return static_cast<VerifierValueType>(i);
    return std::nullopt;
}

const char* to_string(AttachKind k) {
    switch (k) {
    case AttachKind::socket: return "socket";
    case AttachKind::trace_event: return "trace_event";
    case AttachKind::cgroup: return "cgroup";
    case AttachKind::device: return "device";
    }
    return "?";
}

std::optional<int> HelperProto::map_arg_index() const {
    for (std::size_t i = 0; i < args.size(); ++i)
        if (args[i] == ArgType::CONST_MAP_PTR)
            return static_cast<int>(i);
    return std::nullopt;
}

bool SizeConstraint::admits(std::uint32_t v) const {
    if (!fixed_set.empty())
        return std::find(fixed_set.begin(), fixed_set.end(), v) != fixed_set.end();
    return v >= min && v <= max && (align <= 1 || v % align == 0);
}

bool EntriesConstraint::admits(std::uint32_t v) const {
    if (forced_zero)
        return v == 0;
    if (v < min || v > max)
        return false;
    return !power_of_two || (v != 0 && (v & (v - 1)) == 0);
}

std::uint32_t MapTypeSpec::allowed_flag_mask() const {
    std::uint32_t mask = 0;
    for (const auto& group : flag_groups)
        for (auto f : group)
            mask |= f;
    return mask;
}

bool MapTypeSpec::flags_valid(std::uint32_t flags) const {
    if (flags & ~allowed_flag_mask())
        return false;
    for (const auto& group : flag_groups) {
        int selected = 0;
        for (auto f : group)
            if (flags & f)
                ++selected;
        if (selected > 1)
            return false;
    }
    return true;
}

const ContextField* ContextDescriptor::field_at(std::uint32_t offset, std::uint32_t width) const {
    for (const auto& f : fields)
        if (f.offset == offset && f.width == width)
            return &f;
    return nullptr;
}

namespace {

std::optional<std::uint32_t> flag_from_string(const std::string& s) {
    if (s == "NO_PREALLOC")
        return map_flags::kNoPrealloc;
    if (s == "ZERO_SEED")
        return map_flags::kZeroSeed;
    return std::nullopt;
}

std::vector<std::string> tokenize(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream iss(line);
    std::string tok;
    while (iss >> tok) {
        if (tok[0] == '#')
            break;
        out.push_back(tok);
    }
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

struct Parser {
    const std::string& text;
    Catalog& cat;
    std::map<std::string, std::set<std::string>> hgroups;
    CatalogError error{"", 0};
    bool failed = false;

    std::vector<HelperProto> helpers;
    std::map<ProgramTypeId, ProgramTypeSpec> prog_types;
    std::map<MapTypeId, MapTypeSpec> map_types;
    std::map<ArgType, std::set<VerifierValueType>> arg_compat;

    Parser(const std::string& t, Catalog& c) : text(t), cat(c) {}

    bool fail(int line, const std::string& msg) {
        if (!failed)
            error = CatalogError{msg, line};
        failed = true;
        return false;
    }

    bool parse_u32(const std::string& s, std::uint32_t& out, int line) {
        try {
            std::size_t pos = 0;
            unsigned long v = std::stoul(s, &pos, 0);
            if (pos != s.size() || v > 0xffffffffUL)
                return fail(line, "bad number: " + s);
            out = static_cast<std::uint32_t>(v);
            return true;
        } catch (...) {
            return fail(line, "bad number: " + s);
        }
    }

    // `fixed N` | `set N...` | `range MIN MAX ALIGN`; consumes from toks[i].
    bool parse_size(const std::vector<std::string>& toks, std::size_t& i, SizeConstraint& out, int line) {
        if (i >= toks.size())
            return fail(line, "missing size constraint");
        const std::string kind = toks[i++];
        if (kind == "fixed") {
            std::uint32_t v;
            if (!parse_u32(toks[i++], v, line))
                return false;
            out.fixed_set = {v};
            return true;
        }
        if (kind == "set") {
            while (i < toks.size() && isdigit(static_cast<unsigned char>(toks[i][0]))) {
                std::uint32_t v;
                if (!parse_u32(toks[i++], v, line))
                    return false;
                out.fixed_set.push_back(v);
            }
            return !out.fixed_set.empty() || fail(line, "empty size set");
        }
        if (kind == "range") {
            if (i + 2 >= toks.size())
                return fail(line, "range needs MIN MAX ALIGN");
            return parse_u32(toks[i++], out.min, line) && parse_u32(toks[i++], out.max, line) &&
                   parse_u32(toks[i++], out.align, line);
        }
        return fail(line, "bad size constraint kind: " + kind);
    }

    bool resolve_group(const std::string& name, std::set<std::string>& out, int line, int depth = 0) {
        if (depth > 16)
            return fail(line, "helper group recursion too deep: " + name);
        auto it = hgroups.find(name);
        if (it == hgroups.end())
            return fail(line, "unknown helper group: " + name);
        for (const auto& entry : it->second) {
            if (entry[0] == '@') {
                if (!resolve_group(entry.substr(1), out, line, depth + 1))
                    return false;
            } else {
                out.insert(entry);
            }
        }
        return true;
    }

    bool parse_helper_line(const std::vector<std::string>& t, int line) {
        if (t.size() < 3)
            return fail(line, "helper needs id and name");
        HelperProto h;
        std::uint32_t id;
        if (!parse_u32(t[1], id, line))
            return false;
        h.id = id;
        h.name = t[2];
        std::size_t i = 3;
        while (i < t.size()) {
            const std::string& key = t[i++];
            if (key == "args") {
                while (i < t.size()) {
                    auto a = arg_type_from_string(t[i]);
                    if (!a)
                        break;
                    h.args.push_back(*a);
                    ++i;
                }
                if (h.args.size() > 5)
                    return fail(line, "more than 5 arguments");
            } else if (key == "ret") {
                const std::string& r = t[i++];
                if (r == "VOID")
                    h.ret = RetKind::VOID;
                else if (r == "SCALAR")
                    h.ret = RetKind::SCALAR;
                else if (r == "PTR_TO_MAP_VALUE_OR_NULL") {
                    h.ret = RetKind::PTR_TO_MAP_VALUE_OR_NULL;
                    h.ret_nullable = true;
                } else if (r == "PTR_TO_MEM_OR_NULL") {
                    h.ret = RetKind::PTR_TO_MEM_OR_NULL;
                    h.ret_nullable = true;
                } else
                    return fail(line, "bad return kind: " + r);
            } else if (key == "acquires") {
                ++i; // single modeled resource kind
                h.acquires_ref = RefKind::RINGBUF_RESERVATION;
            } else if (key == "releases") {
                ++i;
                h.releases_ref = RefKind::RINGBUF_RESERVATION;
            } else if (key == "lock") {
                const std::string& l = t[i++];
                if (l == "bucket")
                    h.lock_context = LockContext::takes_bucket_lock;
                else if (l == "queue")
                    h.lock_context = LockContext::takes_queue_lock;
                else if (l != "none")
                    return fail(line, "bad lock context: " + l);
            } else if (key == "maps") {
                std::set<MapTypeId> maps;
                while (i < t.size()) {
                    auto m = map_type_from_string(t[i]);
                    if (!m)
                        break;
                    maps.insert(*m);
                    ++i;
                }
                h.compatible_map_types = maps;
            } else {
                return fail(line, "unknown helper key: " + key);
            }
        }
        if (h.acquires_ref && h.releases_ref)
            return fail(line, "helper both acquires and releases");
        if (h.compatible_map_types.has_value() != h.map_arg_index().has_value())
            return fail(line, "maps list must accompany a CONST_MAP_PTR argument: " + h.name);
        helpers.push_back(std::move(h));
        return true;
    }

    bool parse_map_line(const std::vector<std::string>& t, int line) {
        if (t.size() < 2)
            return fail(line, "map needs a type");
        auto mt = map_type_from_string(t[1]);
        if (!mt)
            return fail(line, "unknown map type: " + t[1]);
        MapTypeSpec m;
        m.id = *mt;
        std::size_t i = 2;
        while (i < t.size()) {
            const std::string& key = t[i++];
            if (key == "key") {
                if (!parse_size(t, i, m.key_size, line))
                    return false;
            } else if (key == "value") {
                if (!parse_size(t, i, m.value_size, line))
                    return false;
            } else if (key == "entries") {
                const std::string& kind = t[i];
                if (kind == "zero") {
                    m.max_entries.forced_zero = true;
                    ++i;
                } else {
                    if (kind == "pow2") {
                        m.max_entries.power_of_two = true;
                        ++i;
                    }
                    if (!parse_u32(t[i++], m.max_entries.min, line) ||
                        !parse_u32(t[i++], m.max_entries.max, line))
                        return false;
                }
            } else if (key == "flags") {
                if (t[i] == "-") {
                    ++i;
                } else {
                    while (i < t.size() && t[i] != "lock") {
                        std::vector<std::uint32_t> group;
                        for (const auto& name : split(t[i], '|')) {
                            auto f = flag_from_string(name);
                            if (!f)
                                return fail(line, "unknown map flag: " + name);
                            group.push_back(*f);
                        }
                        m.flag_groups.push_back(group);
                        ++i;
                    }
                }
            } else if (key == "lock") {
                const std::string& l = t[i++];
                if (l == "bucket")
                    m.lock_context = LockContext::takes_bucket_lock;
                else if (l == "queue")
                    m.lock_context = LockContext::takes_queue_lock;
                else if (l != "none")
                    return fail(line, "bad lock context: " + l);
            } else {
                return fail(line, "unknown map key: " + key);
            }
        }
        map_types[*mt] = std::move(m);
        return true;
    }

    const HelperProto* helper_by_name(const std::string& name) const {
        for (const auto& h : helpers)
            if (h.name == name)
                return &h;
        return nullptr;
    }

    bool parse(int& out_version) {
        std::istringstream stream(text);
        std::string line;
        int lineno = 0;
        ProgramTypeSpec* open_pt = nullptr;
        bool saw_header = false;
        while (std::getline(stream, line)) {
            ++lineno;
            auto t = tokenize(line);
            if (t.empty())
                continue;
            if (!saw_header) {
                if (t.size() != 2 || t[0] != "brf-catalog")
                    return fail(lineno, "expected 'brf-catalog <version>' header");
                std::uint32_t v;
                if (!parse_u32(t[1], v, lineno))
                    return false;
                out_version = static_cast<int>(v);
                saw_header = true;
                continue;
            }
            if (open_pt) {
                if (t[0] == "end") {
                    open_pt = nullptr;
                } else if (t[0] == "ctx") {
                    if (!parse_u32(t[1], open_pt->context.byte_size, lineno))
                        return false;
                } else if (t[0] == "field") {
                    if (t.size() != 6)
                        return fail(lineno, "field NAME OFF WIDTH PERM TYPE");
                    ContextField f;
                    f.name = t[1];
                    if (!parse_u32(t[2], f.offset, lineno) || !parse_u32(t[3], f.width, lineno))
                        return false;
                    f.read_allowed = t[4].find('r') != std::string::npos;
                    f.write_allowed = t[4].find('w') != std::string::npos;
                    auto vt = value_type_from_string(t[5]);
                    if (!vt)
                        return fail(lineno, "bad field value type: " + t[5]);
                    f.yields = *vt;
                    open_pt->context.fields.push_back(f);
                } else if (t[0] == "helpers") {
                    std::set<std::string> names;
                    for (std::size_t i = 1; i < t.size(); ++i) {
                        if (t[i][0] == '@') {
                            if (!resolve_group(t[i].substr(1), names, lineno))
                                return false;
                        } else {
                            names.insert(t[i]);
                        }
                    }
                    for (const auto& n : names) {
                        const HelperProto* h = helper_by_name(n);
                        if (!h)
                            return fail(lineno, "unknown helper: " + n);
                        open_pt->available_helpers.insert(h->id);
                    }
                } else if (t[0] == "maps") {
                    for (std::size_t i = 1; i < t.size(); ++i) {
                        auto m = map_type_from_string(t[i]);
                        if (!m)
                            return fail(lineno, "unknown map type: " + t[i]);
                        open_pt->compatible_maps.insert(*m);
                    }
                } else if (t[0] == "forbid_flags") {
                    if (t.size() > 1 && t[1] != "-") {
                        for (std::size_t i = 1; i < t.size(); ++i) {
                            auto f = flag_from_string(t[i]);
                            if (!f)
                                return fail(lineno, "unknown flag: " + t[i]);
                            open_pt->forbidden_map_flags |= *f;
                        }
                    }
                } else {
                    return fail(lineno, "unknown progtype key: " + t[0]);
                }
                continue;
            }
            if (t[0] == "argtype") {
                if (t.size() < 4 || t[2] != "accepts")
                    return fail(lineno, "argtype NAME accepts TYPES...");
                auto a = arg_type_from_string(t[1]);
                if (!a)
                    return fail(lineno, "unknown argtype: " + t[1]);
                std::set<VerifierValueType> types;
                for (std::size_t i = 3; i < t.size(); ++i) {
                    auto vt = value_type_from_string(t[i]);
                    if (!vt)
                        return fail(lineno, "unknown value type: " + t[i]);
                    types.insert(*vt);
                }
                arg_compat[*a] = std::move(types);
            } else if (t[0] == "helper") {
                if (!parse_helper_line(t, lineno))
                    return false;
            } else if (t[0] == "hgroup") {
                if (t.size() < 3 || t[2] != "=")
                    return fail(lineno, "hgroup NAME = entries...");
                hgroups[t[1]] = std::set<std::string>(t.begin() + 3, t.end());
            } else if (t[0] == "map") {
                if (!parse_map_line(t, lineno))
                    return false;
            } else if (t[0] == "progtype") {
                if (t.size() < 8)
                    return fail(lineno, "progtype NAME section S attach K testrun yes|no");
                auto pt = program_type_from_string(t[1]);
                if (!pt)
                    return fail(lineno, "unknown program type: " + t[1]);
                ProgramTypeSpec spec;
                spec.id = *pt;
                for (std::size_t i = 2; i + 1 < t.size(); i += 2) {
                    if (t[i] == "section")
                        spec.section_name = t[i + 1];
                    else if (t[i] == "attach") {
                        if (t[i + 1] == "socket")
                            spec.attach_kind = AttachKind::socket;
                        else if (t[i + 1] == "trace_event")
                            spec.attach_kind = AttachKind::trace_event;
                        else if (t[i + 1] == "cgroup")
                            spec.attach_kind = AttachKind::cgroup;
                        else if (t[i + 1] == "device")
                            spec.attach_kind = AttachKind::device;
                        else
                            return fail(lineno, "bad attach kind: " + t[i + 1]);
                    } else if (t[i] == "testrun")
                        spec.test_runnable = t[i + 1] == "yes";
                    else
                        return fail(lineno, "unknown progtype attr: " + t[i]);
                }
                auto [it, inserted] = prog_types.emplace(*pt, std::move(spec));
                if (!inserted)
                    return fail(lineno, "duplicate progtype");
                open_pt = &it->second;
            } else {
                return fail(lineno, "unknown directive: " + t[0]);
            }
        }
        if (!saw_header)
            return fail(0, "empty catalog");
        if (open_pt)
            return fail(lineno, "unterminated progtype block");
        return validate(lineno);
    }

    bool validate(int lineno) {
        if (prog_types.size() != static_cast<std::size_t>(kNumProgramTypes))
            return fail(lineno, "catalog must define every program type");
        for (const auto& [pt, spec] : prog_types) {
            if (spec.available_helpers.empty())
                return fail(lineno, fmt::format("{} has no helpers", to_string(pt)));
            for (auto mt : spec.compatible_maps)
                if (!map_types.count(mt))
                    return fail(lineno, "program type references undefined map type");
        }
        for (const auto& h : helpers) {
            for (auto a : h.args)
                if (!arg_compat.count(a) || arg_compat.at(a).empty())
                    return fail(lineno,
                                fmt::format("argtype {} of {} has no compatibility entry",
                                            to_string(a), h.name));
            if (h.compatible_map_types)
                for (auto mt : *h.compatible_map_types)
                    if (!map_types.count(mt))
                        return fail(lineno, "helper references undefined map type");
        }
        return true;
    }
};

} // namespace

std::variant<Catalog, CatalogError> Catalog::parse(const std::string& text) {
    Catalog cat;
    Parser p(text, cat);
    int version = 0;
    if (!p.parse(version) || p.failed)
        return p.error;
    cat.version = version;
    cat.helpers_ = std::move(p.helpers);
    cat.program_types_ = std::move(p.prog_types);
    cat.map_types_ = std::move(p.map_types);
    cat.arg_compat_ = std::move(p.arg_compat);
    return cat;
}

const Catalog& Catalog::builtin() {
    static const Catalog cat = [] {
        auto parsed = Catalog::parse(builtin_text());
        if (auto* err = std::get_if<CatalogError>(&parsed))
            throw std::runtime_error(fmt::format("builtin catalog invalid at line {}: {}", err->line,
                                                 err->message));
        return std::get<Catalog>(parsed);
    }();
    return cat;
}

const HelperProto* Catalog::helper(HelperId id) const {
    for (const auto& h : helpers_)
        if (h.id == id)
            return &h;
    return nullptr;
}

const HelperProto* Catalog::helper_by_name(const std::string& name) const {
    for (const auto& h : helpers_)
        if (h.name == name)
            return &h;
    return nullptr;
}

std::string Catalog::helper_name(HelperId id) const {
    const HelperProto* h = helper(id);
    return h ? "bpf_" + h->name : fmt::format("helper_{}", id);
}

const ProgramTypeSpec& Catalog::program_type(ProgramTypeId pt) const {
    return program_types_.at(pt);
}

const MapTypeSpec& Catalog::map_attr_constraints(MapTypeId mt) const { return map_types_.at(mt); }

const std::set<HelperId>& Catalog::helpers_for(ProgramTypeId pt) const {
    return program_types_.at(pt).available_helpers;
}

const std::set<VerifierValueType>& Catalog::compatible_value_types(ArgType a) const {
    return arg_compat_.at(a);
}

std::optional<std::set<MapTypeId>> Catalog::maps_for(ProgramTypeId pt, HelperId h) const {
    const HelperProto* proto = helper(h);
    if (!proto || !proto->compatible_map_types)
        return std::nullopt;
    const auto& pt_maps = program_types_.at(pt).compatible_maps;
    std::set<MapTypeId> out;
    for (auto mt : *proto->compatible_map_types)
        if (pt_maps.count(mt))
            out.insert(mt);
    return out;
}

std::vector<ContextField> Catalog::context_fields(ProgramTypeId pt, bool write) const {
    std::vector<ContextField> out;
    for (const auto& f : program_types_.at(pt).context.fields)
        if (write ? f.write_allowed : f.read_allowed)
            out.push_back(f);
    return out;
}

} // namespace brf
