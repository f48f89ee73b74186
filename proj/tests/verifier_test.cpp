#include "brf/verifier.hpp"

#include "brf/catalog.hpp"
#include "brf/isa.hpp"
#include "brf/lower.hpp"

#include <doctest.h>

using namespace brf;

namespace {

RawProgram make_prog(ProgramTypeId pt, std::vector<Instruction> insns) {
    RawProgram p;
    p.prog_type = pt;
    p.insns = std::move(insns);
    return p;
}

std::vector<MapSpecRequest> one_map(MapTypeId mt, std::uint32_t key, std::uint32_t value,
                                    std::uint32_t entries, std::uint32_t flags = 0) {
    return {MapSpecRequest{mt, key, value, entries, flags}};
}

VerifySummary expect_ok(const RawProgram& p, const std::vector<MapSpecRequest>& maps = {},
                        const VerifyOptions& opts = {}) {
    auto r = verify(p, maps, p.prog_type, Catalog::builtin(), opts);
    if (auto* err = std::get_if<VerifierError>(&r))
        FAIL("unexpected reject: " << err->rule_id << " @" << err->insn_index << ": "
                                   << err->message);
    return std::get<VerifySummary>(r);
}

VerifierError expect_reject(const RawProgram& p, const std::string& rule,
                            const std::vector<MapSpecRequest>& maps = {},
                            const VerifyOptions& opts = {}) {
    auto r = verify(p, maps, p.prog_type, Catalog::builtin(), opts);
    REQUIRE(std::holds_alternative<VerifierError>(r));
    auto err = std::get<VerifierError>(r);
    CHECK(err.rule_id == rule);
    return err;
}

Instruction jmp32_imm(std::uint8_t jmp_nib, int dst, std::int32_t imm, std::int16_t off) {
    Instruction i;
    i.opcode = op::kClassJmp32 | jmp_nib;
    i.dst_reg = static_cast<std::uint8_t>(dst);
    i.imm = imm;
    i.offset = off;
    return i;
}

Instruction mov32_imm(int dst, std::int32_t imm) {
    Instruction i;
    i.opcode = op::kClassAlu32 | op::kAluMov;
    i.dst_reg = static_cast<std::uint8_t>(dst);
    i.imm = imm;
    return i;
}

} // namespace

TEST_CASE("cfg: minimal exit program is admitted") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, {make_exit()});
    CHECK(!check_cfg(p).has_value());
}

TEST_CASE("cfg: empty program") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, {});
    auto err = check_cfg(p);
    REQUIRE(err.has_value());
    CHECK(err->rule_id == "bad_last_insn");
}

TEST_CASE("cfg: self loop") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, {make_ja(-1)});
    auto err = check_cfg(p);
    REQUIRE(err.has_value());
    CHECK(err->rule_id == "loop_detected");
}

TEST_CASE("cfg: conditional back edge") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_mov64_imm(0, 0), make_jmp_imm(op::kJmpJeq, 0, 0, -2), make_exit()});
    auto err = check_cfg(p);
    REQUIRE(err.has_value());
    CHECK(err->rule_id == "loop_detected");
}

TEST_CASE("cfg: jump past the end") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, {make_ja(5), make_exit()});
    auto err = check_cfg(p);
    REQUIRE(err.has_value());
    CHECK(err->rule_id == "jump_out_of_range");
}

TEST_CASE("cfg: jump into the middle of a wide load") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_ja(1), make_lddw(0, 1), make_exit()});
    auto err = check_cfg(p);
    REQUIRE(err.has_value());
    CHECK(err->rule_id == "jump_out_of_range");
}

TEST_CASE("cfg: falling off the end") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, {make_mov64_imm(0, 0)});
    auto err = check_cfg(p);
    REQUIRE(err.has_value());
    CHECK(err->rule_id == "bad_last_insn");
}

TEST_CASE("cfg: unreachable instruction") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, {make_ja(1), make_exit(), make_exit()});
    auto err = check_cfg(p);
    REQUIRE(err.has_value());
    CHECK(err->rule_id == "unreachable_insn");
    CHECK(err->insn_index == 1);
}

TEST_CASE("verify: return-0 program") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, {make_mov64_imm(0, 0), make_exit()});
    auto s = expect_ok(p);
    CHECK(s.paths_explored == 1);
    CHECK(s.insns_processed == 2);
    CHECK(s.max_stack_depth == 0);
}

TEST_CASE("verify: r0 unset at exit") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, {make_exit()});
    expect_reject(p, "r0_uninit");
}

TEST_CASE("verify: r0 holds a pointer at exit") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, {make_mov64_reg(0, 10), make_exit()});
    expect_reject(p, "r0_uninit");
}

TEST_CASE("verify: read of uninitialized register") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, {make_mov64_reg(0, 3), make_exit()});
    expect_reject(p, "uninit_reg_read");
}

TEST_CASE("verify: write to the frame register") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, {make_mov64_imm(10, 0), make_exit()});
    expect_reject(p, "frame_reg_write");
}

TEST_CASE("verify: arithmetic on the context pointer") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_mov64_reg(2, 1), make_alu64_imm(op::kAluAdd, 2, 4),
                        make_mov64_imm(0, 0), make_exit()});
    expect_reject(p, "ptr_arith_forbidden");
}

TEST_CASE("verify: pointer minus pointer") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_mov64_reg(2, 10), make_alu64_reg(op::kAluSub, 2, 10),
                        make_mov64_imm(0, 0), make_exit()});
    expect_reject(p, "ptr_arith_forbidden");
}

TEST_CASE("verify: context field reads and writes follow permissions") {
    // len (offset 0) is read-only, mark (offset 12) is read-write.
    auto read_len = make_prog(ProgramTypeId::SOCKET_FILTER,
                              {make_ldx(4, 0, 1, 0), make_exit()});
    expect_ok(read_len);

    auto write_mark = make_prog(ProgramTypeId::SOCKET_FILTER,
                                {make_mov64_imm(0, 0), make_stx(4, 1, 12, 0), make_exit()});
    expect_ok(write_mark);

    auto write_len = make_prog(ProgramTypeId::SOCKET_FILTER,
                               {make_mov64_imm(0, 0), make_stx(4, 1, 0, 0), make_exit()});
    expect_reject(write_len, "ctx_access_denied");

    auto misaligned = make_prog(ProgramTypeId::SOCKET_FILTER,
                                {make_ldx(4, 0, 1, 2), make_exit()});
    expect_reject(misaligned, "ctx_access_denied");

    auto past_end = make_prog(ProgramTypeId::SOCKET_FILTER,
                              {make_ldx(8, 0, 1, 32), make_exit()});
    expect_reject(past_end, "ctx_access_denied");
}

TEST_CASE("verify: spill and fill keeps the value") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_mov64_imm(0, 7), make_stx(8, 10, -8, 0), make_ldx(8, 0, 10, -8),
                        // The fill must restore constness: the branch is decided.
                        make_jmp_imm(op::kJmpJeq, 0, 7, 1), make_ldx(8, 0, 10, -520),
                        make_exit()});
    auto s = expect_ok(p);
    CHECK(s.paths_explored == 1);
    CHECK(s.max_stack_depth == 8);
}

TEST_CASE("verify: uninitialized stack read") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, {make_ldx(8, 0, 10, -8), make_exit()});
    expect_reject(p, "stack_oob");
}

TEST_CASE("verify: stack access outside the frame") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_mov64_imm(0, 0), make_stx(8, 10, -520, 0), make_exit()});
    expect_reject(p, "stack_oob");

    auto above = make_prog(ProgramTypeId::SOCKET_FILTER,
                           {make_mov64_imm(0, 0), make_stx(8, 10, 8, 0), make_exit()});
    expect_reject(above, "stack_oob");
}

TEST_CASE("verify: partial read of a spilled pointer leaks it") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_stx(8, 10, -8, 1), make_ldx(4, 0, 10, -8), make_exit()});
    expect_reject(p, "ptr_leak");
}

TEST_CASE("verify: partial store of a pointer leaks it") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_stx(4, 10, -4, 1), make_mov64_imm(0, 0), make_exit()});
    expect_reject(p, "ptr_leak");
}

namespace {
// lddw r1=map0; key at fp-8; r0 = map_lookup_elem(map, &key)
std::vector<Instruction> lookup_prefix() {
    return {
        make_lddw(1, 0, op::kPseudoMapRef),
        make_st_imm(8, 10, -8, 0),
        make_mov64_reg(2, 10),
        make_alu64_imm(op::kAluAdd, 2, -8),
        make_call(1),
    };
}
} // namespace

TEST_CASE("verify: guarded map lookup and value access") {
    auto insns = lookup_prefix();
    insns.push_back(make_jmp_imm(op::kJmpJeq, 0, 0, 1)); // if r0 == 0 skip the deref
    insns.push_back(make_ldx(4, 3, 0, 0));
    insns.push_back(make_mov64_imm(0, 0));
    insns.push_back(make_exit());
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, insns);
    auto maps = one_map(MapTypeId::HASH, 8, 16, 32);
    auto s = expect_ok(p, maps);
    CHECK(s.paths_explored == 2);
    CHECK(s.helpers_called == std::set<HelperId>{1});
    CHECK(s.maps_touched == std::set<std::uint32_t>{0});
    CHECK(s.max_stack_depth == 8);
}

TEST_CASE("verify: unchecked lookup result dereference") {
    auto insns = lookup_prefix();
    insns.push_back(make_ldx(4, 3, 0, 0));
    insns.push_back(make_mov64_imm(0, 0));
    insns.push_back(make_exit());
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, insns);
    expect_reject(p, "null_deref", one_map(MapTypeId::HASH, 8, 16, 32));
}

TEST_CASE("verify: map value access past the value size") {
    auto insns = lookup_prefix();
    insns.push_back(make_jmp_imm(op::kJmpJeq, 0, 0, 1));
    insns.push_back(make_ldx(4, 3, 0, 16)); // [16,20) of a 16-byte value
    insns.push_back(make_mov64_imm(0, 0));
    insns.push_back(make_exit());
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, insns);
    expect_reject(p, "mem_oob", one_map(MapTypeId::HASH, 8, 16, 32));
}

TEST_CASE("verify: helper not available to the program type") {
    // probe_read_kernel is tracing-only.
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, {make_call(113), make_exit()});
    expect_reject(p, "helper_unavailable");

    auto unknown = make_prog(ProgramTypeId::SOCKET_FILTER, {make_call(999), make_exit()});
    expect_reject(unknown, "helper_unavailable");
}

TEST_CASE("verify: scalar passed where a key pointer is needed") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_lddw(1, 0, op::kPseudoMapRef), make_mov64_imm(2, 0), make_call(1),
                        make_mov64_imm(0, 0), make_exit()});
    expect_reject(p, "arg_type_mismatch", one_map(MapTypeId::HASH, 8, 16, 32));
}

TEST_CASE("verify: tail call needs a program array") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_lddw(2, 0, op::kPseudoMapRef), make_mov64_imm(3, 0), make_call(12),
                        make_mov64_imm(0, 0), make_exit()});
    expect_reject(p, "map_func_incompat", one_map(MapTypeId::HASH, 8, 16, 32));
}

TEST_CASE("verify: map flags forbidden by the program type") {
    auto insns = lookup_prefix();
    insns.push_back(make_mov64_imm(0, 0));
    insns.push_back(make_exit());
    auto p = make_prog(ProgramTypeId::PERF_EVENT, insns);
    expect_reject(p, "map_func_incompat",
                  one_map(MapTypeId::HASH, 8, 16, 32, map_flags::kNoPrealloc));
}

TEST_CASE("verify: map ordinal out of range") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_lddw(1, 2, op::kPseudoMapRef), make_mov64_imm(0, 0), make_exit()});
    expect_reject(p, "bad_map_ref", one_map(MapTypeId::HASH, 8, 16, 32));
}

namespace {
// r0 = ringbuf_reserve(map0, 8, 0)
std::vector<Instruction> reserve_prefix() {
    return {
        make_lddw(1, 0, op::kPseudoMapRef),
        make_mov64_imm(2, 8),
        make_mov64_imm(3, 0),
        make_call(131),
    };
}
std::vector<MapSpecRequest> ringbuf_map() { return one_map(MapTypeId::RINGBUF, 0, 0, 4096); }
} // namespace

TEST_CASE("verify: reservation released on the non-null path") {
    auto insns = reserve_prefix();
    insns.push_back(make_jmp_imm(op::kJmpJne, 0, 0, 2));
    insns.push_back(make_mov64_imm(0, 0));
    insns.push_back(make_exit());
    insns.push_back(make_mov64_reg(1, 0));
    insns.push_back(make_mov64_imm(2, 0));
    insns.push_back(make_call(132)); // ringbuf_submit
    insns.push_back(make_mov64_imm(0, 0));
    insns.push_back(make_exit());
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, insns);
    auto s = expect_ok(p, ringbuf_map());
    CHECK(s.paths_explored == 2);
}

TEST_CASE("verify: unreleased reservation leaks") {
    auto insns = reserve_prefix();
    insns.push_back(make_mov64_imm(0, 0));
    insns.push_back(make_exit());
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, insns);
    expect_reject(p, "ref_leak", ringbuf_map());
}

TEST_CASE("verify: release guarded by a second, independent null check leaks") {
    // A reservation checked non-null once, spilled, reloaded, and re-checked:
    // the reload is conservatively maybe-null again, and on that path the
    // reference was already proven non-null, so the null arm of the second
    // check cannot be discharged and reads as a leak. This imprecision is
    // intentional; generated programs release in the same guarded block.
    auto insns = reserve_prefix();
    insns.push_back(make_stx(8, 10, -8, 0));
    insns.push_back(make_jmp_imm(op::kJmpJne, 0, 0, 2));
    insns.push_back(make_mov64_imm(0, 0));
    insns.push_back(make_exit());
    insns.push_back(make_ldx(8, 1, 10, -8));
    insns.push_back(make_jmp_imm(op::kJmpJne, 1, 0, 2));
    insns.push_back(make_mov64_imm(0, 0));
    insns.push_back(make_exit()); // reference proven non-null earlier: leak
    insns.push_back(make_mov64_imm(2, 0));
    insns.push_back(make_call(132));
    insns.push_back(make_mov64_imm(0, 0));
    insns.push_back(make_exit());
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, insns);
    expect_reject(p, "ref_leak", ringbuf_map());
}

TEST_CASE("verify: reservation size must be a nonzero constant") {
    auto zero = make_prog(ProgramTypeId::SOCKET_FILTER,
                          {make_lddw(1, 0, op::kPseudoMapRef), make_mov64_imm(2, 0),
                           make_mov64_imm(3, 0), make_call(131), make_mov64_imm(0, 0),
                           make_exit()});
    expect_reject(zero, "zero_size_forbidden", ringbuf_map());

    auto varying = make_prog(ProgramTypeId::SOCKET_FILTER,
                             {make_ldx(4, 2, 1, 0), make_lddw(1, 0, op::kPseudoMapRef),
                              make_mov64_imm(3, 0), make_call(131), make_mov64_imm(0, 0),
                              make_exit()});
    expect_reject(varying, "alloc_size_not_const", ringbuf_map());
}

TEST_CASE("verify: range-checked variable size is accepted") {
    // r4 = ctx.len; admit only 1 <= r4 <= 8, then skb_load_bytes into fp-8.
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_ldx(4, 4, 1, 0), make_jmp_imm(op::kJmpJgt, 4, 8, 5),
                        make_jmp_imm(op::kJmpJlt, 4, 1, 4), make_mov64_reg(3, 10),
                        make_alu64_imm(op::kAluAdd, 3, -8), make_mov64_imm(2, 0), make_call(26),
                        make_mov64_imm(0, 0), make_exit()});
    auto s = expect_ok(p);
    CHECK(s.max_stack_depth == 8);
}

TEST_CASE("verify: unbounded size over a small region") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_ldx(4, 4, 1, 0), make_jmp_imm(op::kJmpJlt, 4, 1, 4),
                        make_mov64_reg(3, 10), make_alu64_imm(op::kAluAdd, 3, -8),
                        make_mov64_imm(2, 0), make_call(26), make_mov64_imm(0, 0),
                        make_exit()});
    expect_reject(p, "size_exceeds_mem");
}

TEST_CASE("verify: constant branches are decided, dead arms are skipped") {
    // The fallthrough arm reads uninitialized stack but is infeasible.
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_mov64_imm(0, 1), make_jmp_imm(op::kJmpJeq, 0, 1, 1),
                        make_ldx(8, 3, 10, -8), make_exit()});
    auto s = expect_ok(p);
    CHECK(s.paths_explored == 1);
}

TEST_CASE("verify: 32-bit compare uses the low words") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {mov32_imm(0, -1), jmp32_imm(op::kJmpJeq, 0, -1, 1),
                        make_ldx(8, 3, 10, -8), make_exit()});
    auto s = expect_ok(p);
    CHECK(s.paths_explored == 1);
}

TEST_CASE("verify: pointer compared against a non-zero value") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_jmp_imm(op::kJmpJeq, 1, 4, 0), make_mov64_imm(0, 0), make_exit()});
    expect_reject(p, "bad_cmp_types");

    auto ordered = make_prog(ProgramTypeId::SOCKET_FILTER,
                             {make_jmp_imm(op::kJmpJgt, 1, 0, 0), make_mov64_imm(0, 0),
                              make_exit()});
    expect_reject(ordered, "bad_cmp_types");
}

TEST_CASE("verify: processed-instruction budget") {
    auto insns = lookup_prefix();
    insns.push_back(make_jmp_imm(op::kJmpJeq, 0, 0, 1));
    insns.push_back(make_ldx(4, 3, 0, 0));
    insns.push_back(make_mov64_imm(0, 0));
    insns.push_back(make_exit());
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER, insns);
    VerifyOptions opts;
    opts.max_processed_insns = 5;
    auto err = expect_reject(p, "complexity_exceeded", one_map(MapTypeId::HASH, 8, 16, 32), opts);
    CHECK(err.category == ErrorCategory::internal);
}

TEST_CASE("verify: atomic and byte-swap forms are rejected") {
    Instruction atomic;
    atomic.opcode = op::kClassStx | op::kSizeDw | op::kModeAtomic;
    atomic.dst_reg = 10;
    atomic.src_reg = 0;
    atomic.offset = -8;
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_mov64_imm(0, 0), atomic, make_exit()});
    expect_reject(p, "unsupported_insn");

    Instruction bswap;
    bswap.opcode = op::kClassAlu64 | op::kAluEnd;
    bswap.dst_reg = 0;
    bswap.imm = 64;
    auto q = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_mov64_imm(0, 0), bswap, make_exit()});
    expect_reject(q, "unsupported_insn");
}

TEST_CASE("verify: relocated image is refused") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_lddw(1, 0x1000, 2 /* relocated tag */), make_mov64_imm(0, 0),
                        make_exit()});
    expect_reject(p, "bad_map_ref", one_map(MapTypeId::HASH, 8, 16, 32));
}

TEST_CASE("verify: helper call clobbers the argument registers") {
    auto p = make_prog(ProgramTypeId::SOCKET_FILTER,
                       {make_call(7) /* get_prandom_u32 */, make_mov64_reg(0, 1), make_exit()});
    expect_reject(p, "uninit_reg_read");
}

TEST_CASE("verify: lowered guarded program is accepted end to end") {
    const char* text = R"(prog SOCKET_FILTER
map m0 HASH key 4 value 16 entries 64 flags 0x1
map m1 RINGBUF key 0 value 0 entries 4096 flags 0x0
bind v0 ctx.len
buf b0 8
let v1 = -7
call v2 = map_lookup_elem m0 b0
block v2!=null v0<=16 v0>=1
  call v3 = ringbuf_reserve m1 8 0
  block v3!=null
    call ringbuf_submit v3 0
  end
end
ret v1
)";
    auto parsed = parse_ast(text, Catalog::builtin());
    REQUIRE(std::holds_alternative<ProgramAst>(parsed));
    auto compiled = compile_ast(std::get<ProgramAst>(parsed), Catalog::builtin());
    REQUIRE(std::holds_alternative<CompiledProgram>(compiled));
    const auto& cp = std::get<CompiledProgram>(compiled);
    auto s = expect_ok(cp.prog, cp.map_deps);
    CHECK(s.helpers_called == std::set<HelperId>{1, 131, 132});
    CHECK(s.maps_touched == std::set<std::uint32_t>{0, 1});
}
