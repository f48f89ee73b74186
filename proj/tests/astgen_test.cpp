#include "brf/astgen.hpp"

#include "brf/lower.hpp"
#include "brf/verifier.hpp"

#include <doctest.h>

#include <set>
#include <variant>

using namespace brf;

namespace {

int count_calls(const std::vector<Stmt>& stmts) {
    int n = 0;
    for (const auto& s : stmts) {
        if (std::holds_alternative<CallStmt>(s.node))
            ++n;
        else if (const auto* blk = std::get_if<BlockStmt>(&s.node))
            n += count_calls(blk->body);
    }
    return n;
}

int count_guards(const std::vector<Stmt>& stmts) {
    int n = 0;
    for (const auto& s : stmts)
        if (const auto* blk = std::get_if<BlockStmt>(&s.node))
            n += static_cast<int>(blk->guards.size()) + count_guards(blk->body);
    return n;
}

void collect_helpers(const std::vector<Stmt>& stmts, std::set<HelperId>& out) {
    for (const auto& s : stmts) {
        if (const auto* call = std::get_if<CallStmt>(&s.node))
            out.insert(call->helper);
        else if (const auto* blk = std::get_if<BlockStmt>(&s.node))
            collect_helpers(blk->body, out);
    }
}

int count_releases_of(const std::vector<Stmt>& stmts, int var, const Catalog& cat) {
    int n = 0;
    for (const auto& s : stmts) {
        if (const auto* call = std::get_if<CallStmt>(&s.node)) {
            const HelperProto* p = cat.helper(call->helper);
            if (p && p->releases_ref && !call->args.empty() &&
                call->args[0].kind == ArgKind::kVar && call->args[0].index == var)
                ++n;
        } else if (const auto* blk = std::get_if<BlockStmt>(&s.node)) {
            n += count_releases_of(blk->body, var, cat);
        }
    }
    return n;
}

bool verifies(const ProgramAst& ast, const Catalog& cat) {
    auto compiled = compile_ast(ast, cat);
    auto* cp = std::get_if<CompiledProgram>(&compiled);
    if (!cp)
        return false;
    return std::holds_alternative<VerifySummary>(
        verify(cp->prog, cp->map_deps, ast.prog_type, cat));
}

} // namespace

TEST_CASE("generation is deterministic in (seed, catalog)") {
    const Catalog& cat = Catalog::builtin();
    for (std::uint64_t seed : {1ull, 7ull, 12345ull}) {
        GenConfig cfg;
        cfg.seed = seed;
        ProgramAst a = generate_program(cfg, cat);
        ProgramAst b = generate_program(cfg, cat);
        CHECK(a == b);
        CHECK(serialize_ast(a, cat) == serialize_ast(b, cat));
    }
}

TEST_CASE("generated programs are valid by construction") {
    const Catalog& cat = Catalog::builtin();
    int verified = 0;
    int total_calls = 0;
    const int kSample = 200;
    for (int seed = 1; seed <= kSample; ++seed) {
        GenConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(seed);
        ProgramAst ast = generate_program(cfg, cat);

        // Every helper is available under the chosen program type and every
        // map spec satisfies the catalog constraints.
        std::set<HelperId> used;
        collect_helpers(ast.stmts, used);
        const std::set<HelperId>& avail = cat.helpers_for(ast.prog_type);
        for (HelperId h : used)
            CHECK(avail.count(h) == 1);
        for (const auto& m : ast.map_deps) {
            const MapTypeSpec& cons = cat.map_attr_constraints(m.map_type);
            CHECK(cons.key_size.admits(m.key_size));
            CHECK(cons.value_size.admits(m.value_size));
            CHECK(cons.max_entries.admits(m.max_entries));
            CHECK(cons.flags_valid(m.flags));
            CHECK((m.flags & cat.program_type(ast.prog_type).forbidden_map_flags) == 0);
        }

        if (verifies(ast, cat))
            ++verified;
        total_calls += count_calls(ast.stmts);
    }
    CHECK(verified >= kSample * 95 / 100);
    CHECK(total_calls >= 5 * kSample); // mean helper-call density
}

TEST_CASE("generated corpus text round-trips") {
    const Catalog& cat = Catalog::builtin();
    for (int seed = 1; seed <= 50; ++seed) {
        GenConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(seed);
        ProgramAst ast = generate_program(cfg, cat);
        auto back = parse_ast(serialize_ast(ast, cat), cat);
        REQUIRE(std::holds_alternative<ProgramAst>(back));
        CHECK(std::get<ProgramAst>(back) == ast);
    }
}

TEST_CASE("guards are load-bearing: stripping them causes rejections") {
    const Catalog& cat = Catalog::builtin();
    int guarded = 0;
    int rejected_after_strip = 0;
    for (int seed = 1; seed <= 120; ++seed) {
        GenConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(seed);
        ProgramAst ast = generate_program(cfg, cat);
        if (count_guards(ast.stmts) == 0 || !verifies(ast, cat))
            continue;
        ++guarded;
        if (!verifies(strip_guards(ast), cat))
            ++rejected_after_strip;
    }
    REQUIRE(guarded >= 20);
    CHECK(rejected_after_strip > 0);
    // Guards exist because the verifier demands them; most should matter.
    CHECK(rejected_after_strip * 2 >= guarded);
}

TEST_CASE("fixup_references is idempotent on generated programs") {
    const Catalog& cat = Catalog::builtin();
    for (int seed = 1; seed <= 60; ++seed) {
        GenConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(seed);
        ProgramAst ast = generate_program(cfg, cat);
        ProgramAst once = ast;
        fixup_references(once, cat);
        ProgramAst twice = once;
        fixup_references(twice, cat);
        CHECK(once == twice);
    }
}

TEST_CASE("fixup inserts the missing release for a bare reserve") {
    const Catalog& cat = Catalog::builtin();
    ProgramAst ast;
    ast.prog_type = ProgramTypeId::SOCKET_FILTER;
    ast.map_deps.push_back({MapTypeId::RINGBUF, 0, 0, 4096, 0});
    ast.stmts.push_back(Stmt{CallStmt{
        131, 0, {ArgExpr::map(0), ArgExpr::lit(16), ArgExpr::lit(0)}}});
    ast.ret.value = 0;

    fixup_references(ast, cat);
    CHECK(count_releases_of(ast.stmts, 0, cat) == 1);
    CHECK(verifies(ast, cat));

    ProgramAst again = ast;
    fixup_references(again, cat);
    CHECK(again == ast);
}

TEST_CASE("fixup substitutes a producer for a stray release argument") {
    const Catalog& cat = Catalog::builtin();
    ProgramAst ast;
    ast.prog_type = ProgramTypeId::SOCKET_FILTER;
    ast.stmts.push_back(Stmt{BufStmt{0, 16}});
    // Submitting a stack buffer is never verifiable; fixup should replace
    // the argument with a fresh reservation.
    ast.stmts.push_back(Stmt{CallStmt{132, std::nullopt, {ArgExpr::buf(0), ArgExpr::lit(0)}}});
    ast.ret.value = 0;

    fixup_references(ast, cat);
    std::set<HelperId> used;
    collect_helpers(ast.stmts, used);
    CHECK(used.count(131) == 1);
    CHECK(used.count(132) == 1);
    REQUIRE(ast.map_deps.size() == 1);
    CHECK(ast.map_deps[0].map_type == MapTypeId::RINGBUF);
    CHECK(verifies(ast, cat));
}

TEST_CASE("fixup leaves a balanced acquire/release pair unchanged") {
    const Catalog& cat = Catalog::builtin();
    ProgramAst ast;
    ast.prog_type = ProgramTypeId::SOCKET_FILTER;
    ast.map_deps.push_back({MapTypeId::RINGBUF, 0, 0, 4096, 0});
    ast.stmts.push_back(Stmt{CallStmt{
        131, 0, {ArgExpr::map(0), ArgExpr::lit(16), ArgExpr::lit(0)}}});
    ast.stmts.push_back(Stmt{BlockStmt{
        {Guard{GuardKind::kNonNull, 0, 0}},
        {Stmt{CallStmt{132, std::nullopt, {ArgExpr::var(0), ArgExpr::lit(0)}}}}}});
    ast.ret.value = 0;

    ProgramAst before = ast;
    fixup_references(ast, cat);
    CHECK(ast == before);
    CHECK(verifies(ast, cat));
}

TEST_CASE("mutation changes one argument and stays deterministic") {
    const Catalog& cat = Catalog::builtin();
    int changed = 0;
    for (int seed = 1; seed <= 40; ++seed) {
        GenConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(seed);
        ProgramAst ast = generate_program(cfg, cat);
        Rng r1(static_cast<std::uint64_t>(seed) * 977);
        Rng r2(static_cast<std::uint64_t>(seed) * 977);
        ProgramAst m1 = mutate_program(ast, r1, cat);
        ProgramAst m2 = mutate_program(ast, r2, cat);
        CHECK(m1 == m2);
        if (!(m1 == ast))
            ++changed;
    }
    CHECK(changed >= 30);
}

TEST_CASE("most mutants still verify") {
    const Catalog& cat = Catalog::builtin();
    int total = 0;
    int ok = 0;
    Rng rng(99);
    for (int seed = 1; seed <= 60; ++seed) {
        GenConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(seed);
        ProgramAst ast = generate_program(cfg, cat);
        if (!verifies(ast, cat))
            continue;
        for (int k = 0; k < 3; ++k) {
            ProgramAst m = mutate_program(ast, rng, cat);
            ++total;
            if (verifies(m, cat))
                ++ok;
        }
    }
    REQUIRE(total >= 120);
    CHECK(ok * 100 >= total * 90);
}

TEST_CASE("mutation drops map specs that lose their last reference") {
    const Catalog& cat = Catalog::builtin();
    ProgramAst ast;
    ast.prog_type = ProgramTypeId::SOCKET_FILTER;
    ast.map_deps.push_back({MapTypeId::ARRAY, 4, 8, 16, 0});
    ast.stmts.push_back(Stmt{BufStmt{0, 4}});
    ast.stmts.push_back(Stmt{CallStmt{1, 0, {ArgExpr::map(0), ArgExpr::buf(0)}}});
    ast.ret.value = 0;

    // Re-pointing the only map argument at a fresh spec must garbage-collect
    // the old one: exactly one dep remains and the ordinal is rewritten.
    bool saw_swap = false;
    for (std::uint64_t s = 0; s < 64 && !saw_swap; ++s) {
        Rng rng(s);
        ProgramAst m = mutate_program(ast, rng, cat);
        REQUIRE(m.map_deps.size() == 1);
        if (!(m.map_deps[0] == ast.map_deps[0]))
            saw_swap = true;
        auto compiled = compile_ast(m, cat);
        CHECK(std::holds_alternative<CompiledProgram>(compiled));
    }
    CHECK(saw_swap);
}
