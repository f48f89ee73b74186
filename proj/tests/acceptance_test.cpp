// Acceptance gate: exercises the whole pipeline end to end and prints one
// PASS/FAIL line per criterion. Exits nonzero if any criterion fails.
#include "brf/harness.hpp"
#include "brf/interval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

using namespace brf;

namespace {

int failures = 0;

void report(int idx, const std::string& name, bool pass, const std::string& detail) {
    fmt::print("{}  {:2}. {}: {}\n", pass ? "PASS" : "FAIL", idx, name, detail);
    std::fflush(stdout);
    if (!pass)
        ++failures;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// --- 1. generation validity -------------------------------------------------

void criterion_generation_validity(const Catalog& cat) {
    auto start = std::chrono::steady_clock::now();
    const int kTotal = 10000;
    int ok = 0;
    for (int i = 0; i < kTotal; ++i) {
        GenConfig cfg;
        cfg.seed = 1000 + static_cast<std::uint64_t>(i);
        ProgramAst ast = generate_program(cfg, cat);
        auto compiled = compile_ast(ast, cat);
        auto* cp = std::get_if<CompiledProgram>(&compiled);
        if (!cp)
            continue;
        auto r = verify(cp->prog, cp->map_deps, cp->prog.prog_type, cat);
        if (std::holds_alternative<VerifySummary>(r))
            ++ok;
    }
    double secs = seconds_since(start);
    bool pass = ok >= kTotal * 95 / 100 && secs < 120.0;
    report(1, "generation validity",
           pass, fmt::format("{}/{} generated programs verify ({:.1f}%) in {:.1f}s "
                             "(need >=95% in <120s)",
                             ok, kTotal, 100.0 * ok / kTotal, secs));
}

// --- 2./3. session rates and expressiveness ---------------------------------

void criterion_session_rates(const Catalog& cat) {
    FuzzConfig cfg;
    cfg.seed = 2026;
    cfg.workers = 4;
    cfg.catalog = &cat;
    cfg.budget = Budget{600.0, std::nullopt};
    FuzzSession s = fuzz_loop(cfg);
    const Stats& st = s.stats;

    double attach = st.attaches_attempted
                        ? 100.0 * st.attaches_succeeded / st.attaches_attempted
                        : 0.0;
    double unique = st.inputs_unique ? 100.0 * st.executed_unique / st.inputs_unique : 0.0;
    bool pass2 = attach >= 85.0 && unique >= 60.0;
    report(2, "attach and execution rates", pass2,
           fmt::format("10-min 4-worker session: {} inputs ({} distinct programs), attach "
                       "{:.1f}% (need >=85%), unique-program execution {:.1f}% (need >=60%)",
                       st.inputs_total, st.inputs_unique, attach, unique));

    double n = static_cast<double>(std::max<std::uint64_t>(st.loads_succeeded, 1));
    double mean_insns = st.sum_insns / n;
    double mean_helpers = st.sum_helpers / n;
    double mean_maps = st.sum_maps / n;
    bool pass3 = mean_insns >= 15.0 && mean_helpers >= 5.0 && mean_maps >= 2.0 &&
                 st.max_insns >= 50;
    report(3, "expressiveness", pass3,
           fmt::format("accepted-program means: {:.1f} insns (>=15), {:.1f} helpers (>=5), "
                       "{:.1f} maps (>=2); max {} insns (>=50)",
                       mean_insns, mean_helpers, mean_maps, st.max_insns));
}

// --- 4. coverage guidance ----------------------------------------------------

void criterion_coverage_guidance(const Catalog& cat) {
    std::vector<double> ratios;
    std::string runs;
    for (int p = 0; p < 5; ++p) {
        FuzzConfig guided;
        guided.seed = 4000 + static_cast<std::uint64_t>(p) * 37;
        guided.workers = 1;
        guided.catalog = &cat;
        guided.budget = Budget{std::nullopt, 600};
        FuzzConfig blind = guided;
        blind.coverage_guided = false;
        FuzzSession g = fuzz_loop(guided);
        FuzzSession b = fuzz_loop(blind);
        double ratio = static_cast<double>(g.coverage.count()) /
                       static_cast<double>(std::max<std::size_t>(b.coverage.count(), 1));
        ratios.push_back(ratio);
        runs += fmt::format("{}{:.2f}", p ? " " : "", ratio);
    }
    std::sort(ratios.begin(), ratios.end());
    double median = ratios[2];
    report(4, "coverage guidance", median >= 1.2,
           fmt::format("guided/blind coverage ratios over 5 paired runs: [{}], "
                       "median {:.2f} (need >=1.20)",
                       runs, median));
}

// --- 5. seeded-bug detection -------------------------------------------------

void criterion_seeded_bugs(const Catalog& cat) {
    FuzzConfig cfg;
    cfg.seed = 5050;
    cfg.workers = 4;
    cfg.catalog = &cat;
    cfg.bugs = SeededBugSet::all();
    cfg.budget = Budget{600.0, std::nullopt};
    FuzzSession s = fuzz_loop(cfg);

    std::set<BugOracle> classes;
    for (const auto& f : s.findings)
        classes.insert(f.oracle);

    int replayed = 0;
    for (const auto& [input, expected] : s.reproducers) {
        bool both = true;
        for (int round = 0; round < 2; ++round) {
            SimKernel kernel(input.kernel_seed, 0, cfg.bugs, &cat);
            ExecOutcome out = execute_input(input, kernel, cat);
            bool found = false;
            for (const auto& f : out.findings)
                found |= f.oracle == expected.oracle && f.location == expected.location;
            both &= found;
        }
        if (both)
            ++replayed;
    }
    bool pass = classes.size() >= 4 && replayed == static_cast<int>(s.reproducers.size()) &&
                !s.reproducers.empty();
    report(5, "seeded-bug detection", pass,
           fmt::format("10-min 4-worker session with all bugs: {} findings across {} oracle "
                       "classes (need >=4); {}/{} reproducers replay deterministically",
                       s.findings.size(), classes.size(), replayed, s.reproducers.size()));
}

// --- 6. soundness ------------------------------------------------------------

void criterion_soundness(const Catalog& cat) {
    const std::uint64_t kTarget = 100000;
    std::uint64_t execs = 0, findings = 0, divergences = 0;
    Rng rng(606060);
    std::uint64_t seed = 600000;
    while (execs < kTarget) {
        GenConfig gcfg;
        gcfg.seed = ++seed;
        ProgramAst ast = generate_program(gcfg, cat);
        auto compiled = compile_ast(ast, cat);
        auto* cp = std::get_if<CompiledProgram>(&compiled);
        if (!cp)
            continue;
        SimKernel kernel(seed, 0, {}, &cat);
        std::vector<std::uint32_t> handles;
        bool maps_ok = true;
        for (const auto& spec : cp->map_deps) {
            auto r = kernel.sys_map_create(spec);
            if (!std::holds_alternative<std::uint32_t>(r)) {
                maps_ok = false;
                break;
            }
            handles.push_back(std::get<std::uint32_t>(r));
        }
        if (!maps_ok)
            continue;
        auto loaded = kernel.sys_prog_load(*cp, handles);
        auto* prog = std::get_if<std::uint32_t>(&loaded);
        if (!prog)
            continue;
        for (int e = 0; e < 20 && execs < kTarget; ++e) {
            std::vector<std::uint8_t> payload(16 + rng.below(48));
            for (auto& b : payload)
                b = static_cast<std::uint8_t>(rng.below(256));
            ExecResult r = kernel.execute_dual(*prog, payload);
            ++execs;
            findings += r.oracle_findings.size();
            for (const auto& f : r.oracle_findings)
                divergences += f.oracle == BugOracle::exec_divergence;
        }
    }
    report(6, "soundness", findings == 0 && divergences == 0,
           fmt::format("{} dual-engine executions with bugs off: {} oracle findings, "
                       "{} divergences (need 0 and 0)",
                       execs, findings, divergences));
}

// --- 7. verifier equivalence at small scale ----------------------------------

// Tiny alphabet: mov-imm, add-reg, unconditional and equality jumps, exit,
// over r0-r2. An independent checker decides safety by structural graph
// rules plus direct simulation (all values are concrete, so the feasible
// path is unique), and must agree with the model verifier on every program.
struct TinyChecker {
    enum RegKind : std::uint8_t { kUninit, kScalar, kPtr };

    static bool safe(const std::vector<Instruction>& prog) {
        int n = static_cast<int>(prog.size());
        // Structural rules: targets in range, no fallthrough past the end,
        // acyclic jump graph, every instruction reachable.
        std::vector<std::vector<int>> succ(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const Instruction& insn = prog[static_cast<std::size_t>(i)];
            bool is_exit = insn.opcode == op::kExit;
            bool is_ja = insn.opcode == op::kJa;
            bool is_cond = insn.cls() == op::kClassJmp && !is_exit && !is_ja;
            if (is_ja || is_cond) {
                int target = i + 1 + insn.offset;
                if (target < 0 || target >= n)
                    return false;
                succ[static_cast<std::size_t>(i)].push_back(target);
            }
            if (!is_exit && !is_ja) {
                if (i + 1 >= n)
                    return false; // would fall off the end
                succ[static_cast<std::size_t>(i)].push_back(i + 1);
            }
        }
        std::vector<int> state(static_cast<std::size_t>(n), 0); // 0 new 1 open 2 done
        std::vector<int> stack{0};
        std::vector<int> phase{0};
        while (!stack.empty()) {
            int v = stack.back();
            if (phase.back() == 0) {
                phase.back() = 1;
                state[static_cast<std::size_t>(v)] = 1;
            }
            bool descended = false;
            auto& edges = succ[static_cast<std::size_t>(v)];
            while (phase.back() <= static_cast<int>(edges.size())) {
                int e = phase.back() - 1;
                ++phase.back();
                if (e < 0)
                    continue;
                int t = edges[static_cast<std::size_t>(e)];
                if (state[static_cast<std::size_t>(t)] == 1)
                    return false; // cycle
                if (state[static_cast<std::size_t>(t)] == 0) {
                    stack.push_back(t);
                    phase.push_back(0);
                    descended = true;
                    break;
                }
            }
            if (!descended && phase.back() > static_cast<int>(edges.size())) {
                state[static_cast<std::size_t>(v)] = 2;
                stack.pop_back();
                phase.pop_back();
            }
        }
        for (int i = 0; i < n; ++i)
            if (state[static_cast<std::size_t>(i)] == 0)
                return false; // unreachable

        // Direct simulation. r1 is a non-null pointer, everything else
        // uninitialized; mov-imm values are concrete so the path is unique.
        RegKind kind[3] = {kUninit, kPtr, kUninit};
        std::uint64_t value[3] = {0, 0, 0};
        int pc = 0;
        for (int steps = 0; steps <= n + 1; ++steps) {
            const Instruction& insn = prog[static_cast<std::size_t>(pc)];
            if (insn.opcode == op::kExit)
                return kind[0] == kScalar;
            if (insn.opcode == op::kJa) {
                pc = pc + 1 + insn.offset;
                continue;
            }
            if (insn.cls() == op::kClassJmp) { // jeq imm
                int d = insn.dst_reg;
                if (kind[d] == kUninit)
                    return false;
                bool taken;
                if (kind[d] == kPtr) {
                    if (insn.imm != 0)
                        return false; // pointers compare only against zero
                    taken = false;    // non-null pointer never equals zero
                } else {
                    taken = value[d] == static_cast<std::uint64_t>(
                                            static_cast<std::int64_t>(insn.imm));
                }
                pc = taken ? pc + 1 + insn.offset : pc + 1;
                continue;
            }
            if (insn.opcode == op::kMov64Imm) {
                kind[insn.dst_reg] = kScalar;
                value[insn.dst_reg] =
                    static_cast<std::uint64_t>(static_cast<std::int64_t>(insn.imm));
                ++pc;
                continue;
            }
            // add64 reg
            int d = insn.dst_reg, s = insn.src_reg;
            if (kind[d] != kScalar || kind[s] != kScalar)
                return false;
            value[d] += value[s];
            ++pc;
        }
        return false; // structural acyclicity makes this unreachable
    }
};

void criterion_verifier_equivalence(const Catalog& cat) {
    std::vector<Instruction> alphabet;
    for (int d = 0; d < 3; ++d)
        for (int imm : {0, 1})
            alphabet.push_back(make_mov64_imm(d, imm));
    for (int d = 0; d < 3; ++d)
        for (int s = 0; s < 3; ++s)
            alphabet.push_back(make_alu64_reg(op::kAluAdd, d, s));
    for (int off : {-2, -1, 1})
        alphabet.push_back(make_ja(static_cast<std::int16_t>(off)));
    for (int d = 0; d < 3; ++d)
        for (int imm : {0, 1})
            for (int off : {-2, -1, 1})
                alphabet.push_back(make_jmp_imm(op::kClassJmp | op::kJmpJeq, d, imm,
                                                static_cast<std::int16_t>(off)));
    alphabet.push_back(make_exit());

    std::uint64_t total = 0, mismatches = 0;
    std::string first_mismatch;
    auto check = [&](const std::vector<Instruction>& insns) {
        RawProgram prog;
        prog.prog_type = ProgramTypeId::SOCKET_FILTER;
        prog.insns = insns;
        bool model = std::holds_alternative<VerifySummary>(
            verify(prog, {}, ProgramTypeId::SOCKET_FILTER, cat));
        bool brute = TinyChecker::safe(insns);
        ++total;
        if (model != brute) {
            ++mismatches;
            if (first_mismatch.empty())
                first_mismatch = fmt::format(" (first: model={} brute={} prog={})", model,
                                             brute, disassemble(prog));
        }
    };
    std::size_t a = alphabet.size();
    for (std::size_t i = 0; i < a; ++i)
        check({alphabet[i]});
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < a; ++j)
            check({alphabet[i], alphabet[j]});
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < a; ++j)
            for (std::size_t k = 0; k < a; ++k)
                check({alphabet[i], alphabet[j], alphabet[k]});

    report(7, "verifier equivalence at small scale", mismatches == 0,
           fmt::format("{} programs over a {}-symbol alphabet: {} decision mismatches "
                       "against the brute-force checker (need 0){}",
                       total, a, mismatches, first_mismatch));
}

// --- 8. round-trips ----------------------------------------------------------

Instruction random_instruction(Rng& rng) {
    static const std::uint8_t alu_ops[] = {op::kAluAdd, op::kAluSub, op::kAluMul, op::kAluDiv,
                                           op::kAluOr,  op::kAluAnd, op::kAluLsh, op::kAluRsh,
                                           op::kAluMod, op::kAluXor, op::kAluMov, op::kAluArsh};
    static const std::uint8_t jmp_ops[] = {op::kJmpJeq,  op::kJmpJgt,  op::kJmpJge,
                                           op::kJmpJset, op::kJmpJne,  op::kJmpJsgt,
                                           op::kJmpJsge, op::kJmpJlt,  op::kJmpJle,
                                           op::kJmpJslt, op::kJmpJsle};
    auto reg = [&] { return static_cast<int>(rng.below(11)); };
    auto imm32 = [&] { return static_cast<std::int32_t>(rng.next()); };
    auto off16 = [&] { return static_cast<std::int16_t>(rng.next()); };
    auto width = [&] { return 1 << rng.below(4); };
    switch (rng.below(10)) {
    case 0: return make_alu64_imm(alu_ops[rng.below(12)], reg(), imm32());
    case 1: return make_alu64_reg(alu_ops[rng.below(12)], reg(), reg());
    case 2: return make_mov64_imm(reg(), imm32());
    case 3: return make_lddw(reg(), static_cast<std::int64_t>(rng.next()),
                             rng.chance(0.3) ? op::kPseudoMapRef : 0);
    case 4: return make_ldx(width(), reg(), reg(), off16());
    case 5: return make_stx(width(), reg(), off16(), reg());
    case 6: return make_st_imm(width(), reg(), off16(), imm32());
    case 7: return make_jmp_imm(op::kClassJmp | jmp_ops[rng.below(11)], reg(), imm32(), off16());
    case 8: return make_jmp_reg(op::kClassJmp | jmp_ops[rng.below(11)], reg(), reg(), off16());
    default: return rng.chance(0.5) ? make_ja(off16()) : make_exit();
    }
}

void criterion_round_trips(const Catalog& cat) {
    const int kTotal = 10000;
    Rng rng(808080);
    int insn_ok = 0;
    for (int i = 0; i < kTotal; ++i) {
        Instruction insn = random_instruction(rng);
        auto bytes = encode_instruction(insn);
        if (!std::holds_alternative<std::vector<std::uint8_t>>(bytes))
            continue;
        auto back = decode_program_bytes(std::get<std::vector<std::uint8_t>>(bytes));
        auto* insns = std::get_if<std::vector<Instruction>>(&back);
        if (insns && insns->size() == 1 && (*insns)[0] == insn)
            ++insn_ok;
    }

    int ast_ok = 0, brfp_ok = 0;
    for (int i = 0; i < kTotal; ++i) {
        GenConfig cfg;
        cfg.seed = 800000 + static_cast<std::uint64_t>(i);
        ProgramAst ast = generate_program(cfg, cat);
        std::string text = serialize_ast(ast, cat);
        auto parsed = parse_ast(text, cat);
        auto* back = std::get_if<ProgramAst>(&parsed);
        if (back && serialize_ast(*back, cat) == text)
            ++ast_ok;

        auto compiled = compile_ast(ast, cat);
        if (auto* cp = std::get_if<CompiledProgram>(&compiled)) {
            auto container = read_brfp(write_brfp(*cp));
            auto* cp2 = std::get_if<CompiledProgram>(&container);
            if (cp2 && *cp2 == *cp)
                ++brfp_ok;
        }
    }
    bool pass = insn_ok == kTotal && ast_ok == kTotal && brfp_ok == kTotal;
    report(8, "round-trips", pass,
           fmt::format("identity on {}/{} instructions, {}/{} program texts, {}/{} "
                       "containers (need all)",
                       insn_ok, kTotal, ast_ok, kTotal, brfp_ok, kTotal));
}

// --- 9. range-analysis soundness ----------------------------------------------

void criterion_range_soundness() {
    const int kPrograms = 1000;
    Rng rng(909090);
    static const std::uint8_t ops[] = {op::kAluAdd, op::kAluSub, op::kAluMul, op::kAluDiv,
                                       op::kAluMod, op::kAluAnd, op::kAluOr,  op::kAluXor,
                                       op::kAluLsh, op::kAluRsh, op::kAluArsh};
    auto apply_range = [](std::uint8_t nib, const ValueRange& a, const ValueRange& b) {
        switch (nib) {
        case op::kAluAdd: return range_add(a, b);
        case op::kAluSub: return range_sub(a, b);
        case op::kAluMul: return range_mul(a, b);
        case op::kAluDiv: return range_div(a, b);
        case op::kAluMod: return range_mod(a, b);
        case op::kAluAnd: return range_and(a, b);
        case op::kAluOr: return range_or(a, b);
        case op::kAluXor: return range_xor(a, b);
        case op::kAluLsh: return range_lsh(a, b);
        case op::kAluRsh: return range_rsh(a, b);
        default: return range_arsh(a, b);
        }
    };

    int unsound = 0;
    for (int p = 0; p < kPrograms; ++p) {
        // Three registers with brute-forceable input sets: small unsigned
        // intervals, sometimes near the wraparound boundary.
        std::uint64_t lo[3];
        std::uint64_t width[3];
        for (int r = 0; r < 3; ++r) {
            lo[r] = rng.chance(0.2) ? ~0ULL - rng.below(8) : rng.below(64);
            width[r] = rng.below(4);
            if (lo[r] + width[r] < lo[r])
                width[r] = ~0ULL - lo[r]; // clamp instead of wrapping
        }
        ValueRange ranges[3];
        for (int r = 0; r < 3; ++r)
            ranges[r] = ValueRange::unsigned_range(lo[r], lo[r] + width[r]);

        // Enumerate every concrete input tuple.
        std::vector<std::array<std::uint64_t, 3>> tuples;
        for (std::uint64_t a = 0; a <= width[0]; ++a)
            for (std::uint64_t b = 0; b <= width[1]; ++b)
                for (std::uint64_t c = 0; c <= width[2]; ++c)
                    tuples.push_back({lo[0] + a, lo[1] + b, lo[2] + c});

        bool bad = false;
        for (int step = 0; step < 8 && !bad; ++step) {
            std::uint8_t nib = ops[rng.below(std::size(ops))];
            int d = static_cast<int>(rng.below(3));
            bool use_imm = rng.chance(0.4);
            int s = static_cast<int>(rng.below(3));
            std::uint64_t imm = rng.below(70);

            ValueRange rhs = use_imm ? ValueRange::constant(imm) : ranges[s];
            ranges[d] = apply_range(nib, ranges[d], rhs);
            for (auto& t : tuples) {
                std::uint64_t concrete_rhs = use_imm ? imm : t[static_cast<std::size_t>(s)];
                t[static_cast<std::size_t>(d)] =
                    concrete_alu64(nib, t[static_cast<std::size_t>(d)], concrete_rhs);
            }
            for (const auto& t : tuples)
                for (int r = 0; r < 3; ++r)
                    if (!ranges[r].contains(t[static_cast<std::size_t>(r)]))
                        bad = true;
        }
        unsound += bad;
    }
    report(9, "range-analysis soundness", unsound == 0,
           fmt::format("{} straight-line programs, every concrete value inside the tracked "
                       "interval at every step; {} violations (need 0)",
                       kPrograms, unsound));
}

// --- 10. determinism -----------------------------------------------------------

void criterion_determinism(const Catalog& cat) {
    auto run = [&] {
        FuzzConfig cfg;
        cfg.seed = 101010;
        cfg.workers = 4;
        cfg.catalog = &cat;
        cfg.bugs = SeededBugSet::all();
        cfg.budget = Budget{std::nullopt, 2000};
        FuzzSession s = fuzz_loop(cfg);
        return stats_lines(s.stats, cfg, s.findings);
    };
    std::string first = run();
    std::string second = run();
    report(10, "determinism", first == second && !first.empty(),
           fmt::format("two identical (seed, config, catalog) sessions: stats files {} "
                       "({} bytes)",
                       first == second ? "byte-identical" : "DIFFER", first.size()));
}

} // namespace

int main(int argc, char** argv) {
    const Catalog& cat = Catalog::builtin();
    auto start = std::chrono::steady_clock::now();
    // Optional arguments select individual criteria by number (for debugging).
    auto wanted = [&](int idx) {
        if (argc < 2)
            return true;
        for (int i = 1; i < argc; ++i)
            if (std::stoi(argv[i]) == idx)
                return true;
        return false;
    };
    if (wanted(1))
        criterion_generation_validity(cat);
    if (wanted(2) || wanted(3))
        criterion_session_rates(cat);
    if (wanted(4))
        criterion_coverage_guidance(cat);
    if (wanted(5))
        criterion_seeded_bugs(cat);
    if (wanted(6))
        criterion_soundness(cat);
    if (wanted(7))
        criterion_verifier_equivalence(cat);
    if (wanted(8))
        criterion_round_trips(cat);
    if (wanted(9))
        criterion_range_soundness();
    if (wanted(10))
        criterion_determinism(cat);
    fmt::print("{} criteria failed ({:.0f}s total)\n", failures, seconds_since(start));
    return failures ? 1 : 0;
}
