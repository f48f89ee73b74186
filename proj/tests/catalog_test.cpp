#include "brf/catalog.hpp"

#include <doctest.h>

using namespace brf;

TEST_CASE("builtin catalog parses and covers the modeled surface") {
    const Catalog& cat = Catalog::builtin();
    CHECK(cat.version == 1);
    CHECK(cat.helpers().size() == 20);
    for (int i = 0; i < kNumProgramTypes; ++i)
        CHECK(cat.program_type(static_cast<ProgramTypeId>(i)).id ==
              static_cast<ProgramTypeId>(i));
    for (int i = 0; i < kNumMapTypes; ++i)
        CHECK(cat.map_attr_constraints(static_cast<MapTypeId>(i)).id ==
              static_cast<MapTypeId>(i));
}

TEST_CASE("helper lookup by id and name") {
    const Catalog& cat = Catalog::builtin();
    const HelperProto* h = cat.helper(1);
    REQUIRE(h != nullptr);
    CHECK(h->name == "map_lookup_elem");
    CHECK(h->ret == RetKind::PTR_TO_MAP_VALUE_OR_NULL);
    CHECK(h->ret_nullable);
    CHECK(h->map_arg_index() == 0);
    CHECK(cat.helper_by_name("tail_call")->id == 12);
    CHECK(cat.helper(9999) == nullptr);
    CHECK(cat.helper_name(12) == "bpf_tail_call");
    CHECK(cat.helper_name(9999) == "helper_9999");

    const HelperProto* reserve = cat.helper_by_name("ringbuf_reserve");
    REQUIRE(reserve != nullptr);
    CHECK(reserve->acquires_ref == RefKind::RINGBUF_RESERVATION);
    CHECK(!reserve->releases_ref);
    CHECK(cat.helper_by_name("ringbuf_submit")->releases_ref == RefKind::RINGBUF_RESERVATION);
    CHECK(cat.helper_by_name("ringbuf_discard")->releases_ref == RefKind::RINGBUF_RESERVATION);
    CHECK(cat.helper_by_name("map_update_elem")->lock_context == LockContext::takes_bucket_lock);
    CHECK(cat.helper_by_name("map_push_elem")->lock_context == LockContext::takes_queue_lock);
}

TEST_CASE("helper availability respects program type") {
    const Catalog& cat = Catalog::builtin();
    auto has = [&](ProgramTypeId pt, const char* name) {
        return cat.helpers_for(pt).count(cat.helper_by_name(name)->id) > 0;
    };
    // Tracing-only helpers are absent from the network types.
    CHECK(has(ProgramTypeId::KPROBE, "probe_read_kernel"));
    CHECK(has(ProgramTypeId::TRACEPOINT, "probe_read_kernel"));
    CHECK(has(ProgramTypeId::PERF_EVENT, "get_stackid"));
    CHECK(!has(ProgramTypeId::SOCKET_FILTER, "probe_read_kernel"));
    CHECK(!has(ProgramTypeId::XDP, "probe_read_kernel"));
    CHECK(!has(ProgramTypeId::CGROUP_SOCK, "get_stackid"));
    // skb access only makes sense on socket filters.
    CHECK(has(ProgramTypeId::SOCKET_FILTER, "skb_load_bytes"));
    CHECK(!has(ProgramTypeId::XDP, "skb_load_bytes"));
    CHECK(!has(ProgramTypeId::KPROBE, "skb_load_bytes"));
    // Group substitution pulls the shared helpers in everywhere.
    for (int i = 0; i < kNumProgramTypes; ++i) {
        auto pt = static_cast<ProgramTypeId>(i);
        CHECK(has(pt, "map_lookup_elem"));
        CHECK(has(pt, "tail_call"));
        CHECK(has(pt, "ringbuf_reserve"));
    }
}

TEST_CASE("map compatibility intersects helper and program type") {
    const Catalog& cat = Catalog::builtin();
    HelperId lookup = cat.helper_by_name("map_lookup_elem")->id;
    auto cg = cat.maps_for(ProgramTypeId::CGROUP_SOCK, lookup);
    REQUIRE(cg.has_value());
    CHECK(cg->count(MapTypeId::CGROUP_STORAGE) == 1);
    auto xdp = cat.maps_for(ProgramTypeId::XDP, lookup);
    REQUIRE(xdp.has_value());
    CHECK(xdp->count(MapTypeId::CGROUP_STORAGE) == 0);
    CHECK(xdp->count(MapTypeId::ARRAY) == 1);

    HelperId push = cat.helper_by_name("map_push_elem")->id;
    auto q = cat.maps_for(ProgramTypeId::SOCKET_FILTER, push);
    REQUIRE(q.has_value());
    CHECK(*q == std::set<MapTypeId>{MapTypeId::QUEUE, MapTypeId::STACK});

    CHECK(!cat.maps_for(ProgramTypeId::XDP, cat.helper_by_name("ktime_get_ns")->id));
}

TEST_CASE("map attribute constraints") {
    const Catalog& cat = Catalog::builtin();
    const auto& arr = cat.map_attr_constraints(MapTypeId::ARRAY);
    CHECK(arr.key_size.admits(4));
    CHECK(!arr.key_size.admits(8));
    CHECK(arr.value_size.admits(1));
    CHECK(arr.value_size.admits(256));
    CHECK(!arr.value_size.admits(0));
    CHECK(!arr.value_size.admits(257));
    CHECK(arr.max_entries.admits(1));
    CHECK(arr.max_entries.admits(1024));
    CHECK(!arr.max_entries.admits(0));
    CHECK(!arr.max_entries.admits(1025));

    const auto& rb = cat.map_attr_constraints(MapTypeId::RINGBUF);
    CHECK(rb.key_size.admits(0));
    CHECK(rb.max_entries.admits(4096));
    CHECK(rb.max_entries.admits(65536));
    CHECK(!rb.max_entries.admits(5000));
    CHECK(!rb.max_entries.admits(2048));

    const auto& cgs = cat.map_attr_constraints(MapTypeId::CGROUP_STORAGE);
    CHECK(cgs.key_size.admits(8));
    CHECK(cgs.key_size.admits(16));
    CHECK(!cgs.key_size.admits(4));
    CHECK(cgs.max_entries.admits(0));
    CHECK(!cgs.max_entries.admits(1));

    const auto& hash = cat.map_attr_constraints(MapTypeId::HASH);
    CHECK(hash.flags_valid(0));
    CHECK(hash.flags_valid(map_flags::kNoPrealloc));
    CHECK(hash.flags_valid(map_flags::kZeroSeed));
    CHECK(hash.flags_valid(map_flags::kNoPrealloc | map_flags::kZeroSeed));
    CHECK(!hash.flags_valid(0x2));
    CHECK(!cat.map_attr_constraints(MapTypeId::ARRAY).flags_valid(map_flags::kNoPrealloc));
    CHECK(hash.lock_context == LockContext::takes_bucket_lock);
    CHECK(cat.map_attr_constraints(MapTypeId::QUEUE).lock_context ==
          LockContext::takes_queue_lock);
}

TEST_CASE("program type attach and flag policy") {
    const Catalog& cat = Catalog::builtin();
    CHECK(cat.program_type(ProgramTypeId::SOCKET_FILTER).attach_kind == AttachKind::socket);
    CHECK(cat.program_type(ProgramTypeId::KPROBE).attach_kind == AttachKind::trace_event);
    CHECK(cat.program_type(ProgramTypeId::CGROUP_SOCK).attach_kind == AttachKind::cgroup);
    CHECK(cat.program_type(ProgramTypeId::XDP).attach_kind == AttachKind::device);
    CHECK(cat.program_type(ProgramTypeId::SOCKET_FILTER).section_name == "socket");
    CHECK(cat.program_type(ProgramTypeId::TRACEPOINT).section_name ==
          "tracepoint/sched/sched_switch");
    CHECK(cat.program_type(ProgramTypeId::PERF_EVENT).forbidden_map_flags ==
          map_flags::kNoPrealloc);
    CHECK(cat.program_type(ProgramTypeId::SOCKET_FILTER).forbidden_map_flags == 0);
    CHECK(!cat.program_type(ProgramTypeId::KPROBE).test_runnable);
    CHECK(!cat.program_type(ProgramTypeId::PERF_EVENT).test_runnable);
    CHECK(cat.program_type(ProgramTypeId::XDP).test_runnable);
    // CGROUP_STORAGE is only reachable from the cgroup type.
    for (int i = 0; i < kNumProgramTypes; ++i) {
        auto pt = static_cast<ProgramTypeId>(i);
        bool compat =
            cat.program_type(pt).compatible_maps.count(MapTypeId::CGROUP_STORAGE) > 0;
        CHECK(compat == (pt == ProgramTypeId::CGROUP_SOCK));
    }
}

TEST_CASE("context descriptors expose typed fields") {
    const Catalog& cat = Catalog::builtin();
    const auto& sf = cat.program_type(ProgramTypeId::SOCKET_FILTER).context;
    CHECK(sf.byte_size == 32);
    const ContextField* mark = sf.field_at(12, 4);
    REQUIRE(mark != nullptr);
    CHECK(mark->name == "mark");
    CHECK(mark->write_allowed);
    const ContextField* sk = sf.field_at(24, 8);
    REQUIRE(sk != nullptr);
    CHECK(sk->yields == VerifierValueType::PTR_TO_SOCK_COMMON);
    CHECK(!sk->write_allowed);
    CHECK(sf.field_at(12, 8) == nullptr); // width must match exactly
    CHECK(sf.field_at(13, 4) == nullptr);

    auto writable = cat.context_fields(ProgramTypeId::SOCKET_FILTER, /*write=*/true);
    CHECK(writable.size() == 2);
    auto readable = cat.context_fields(ProgramTypeId::XDP, /*write=*/false);
    CHECK(readable.size() == 3);
    CHECK(cat.context_fields(ProgramTypeId::XDP, /*write=*/true).empty());
}

TEST_CASE("argument compatibility table") {
    const Catalog& cat = Catalog::builtin();
    CHECK(cat.compatible_value_types(ArgType::CONST_MAP_PTR) ==
          std::set<VerifierValueType>{VerifierValueType::CONST_PTR_TO_MAP});
    CHECK(cat.compatible_value_types(ArgType::ANYTHING) ==
          std::set<VerifierValueType>{VerifierValueType::SCALAR});
    CHECK(cat.compatible_value_types(ArgType::PTR_TO_MEM).count(VerifierValueType::PTR_TO_STACK));
    CHECK(!cat.compatible_value_types(ArgType::PTR_TO_MAP_KEY)
               .count(VerifierValueType::SCALAR));
}

TEST_CASE("parse errors carry line numbers") {
    auto r = Catalog::parse("not-a-catalog\n");
    REQUIRE(std::holds_alternative<CatalogError>(r));
    CHECK(std::get<CatalogError>(r).line == 1);

    r = Catalog::parse("brf-catalog 1\nhgroup a = @missing\n"
                       "progtype XDP section xdp attach device testrun yes\n"
                       "helpers @a\nend\n");
    REQUIRE(std::holds_alternative<CatalogError>(r));
    CHECK(std::get<CatalogError>(r).line == 4);
    CHECK(std::get<CatalogError>(r).message.find("missing") != std::string::npos);

    // A syntactically fine catalog still fails closed when incomplete.
    r = Catalog::parse("brf-catalog 1\n");
    CHECK(std::holds_alternative<CatalogError>(r));
}

TEST_CASE("catalog text round-trips through parse") {
    auto r = Catalog::parse(Catalog::builtin_text());
    REQUIRE(std::holds_alternative<Catalog>(r));
    const Catalog& cat = std::get<Catalog>(r);
    CHECK(cat.helpers().size() == Catalog::builtin().helpers().size());
}
