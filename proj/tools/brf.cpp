// brf: generate, compile, inspect, execute, and fuzz programs for the
// simulated eBPF runtime.
#include "brf/harness.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace brf;

namespace {

std::optional<std::string> read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::optional<std::vector<std::uint8_t>> read_binary_file(const std::string& path) {
    auto text = read_text_file(path);
    if (!text)
        return std::nullopt;
    return std::vector<std::uint8_t>(text->begin(), text->end());
}

bool write_file(const std::string& path, const void* data, std::size_t len) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        return false;
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    return static_cast<bool>(out);
}

int fail(const std::string& msg) {
    fmt::print(stderr, "error: {}\n", msg);
    return 1;
}

std::function<std::string(std::int32_t)> helper_namer(const Catalog& cat) {
    return [&cat](std::int32_t id) { return cat.helper_name(static_cast<HelperId>(id)); };
}

void print_exec_result(const ExecResult& r, const Catalog& cat) {
    fmt::print("return_value {}\n", r.return_value);
    fmt::print("insn_count {}\n", r.insn_count);
    fmt::print("aborted {}\n", r.aborted ? 1 : 0);
    fmt::print("coverage_units {}\n", r.coverage_delta.count());
    for (const auto& [id, digest] : r.helper_trace)
        fmt::print("helper {} {:#x}\n", cat.helper_name(id), digest);
    for (const auto& f : r.oracle_findings)
        fmt::print("finding {} at probe {} ({})\n", to_string(f.oracle), f.location, f.detail);
}

std::optional<CompiledProgram> load_container(const std::string& path, std::string& err) {
    auto bytes = read_binary_file(path);
    if (!bytes) {
        err = "cannot read " + path;
        return std::nullopt;
    }
    auto parsed = read_brfp(*bytes);
    if (auto* e = std::get_if<SyntaxError>(&parsed)) {
        err = fmt::format("{}: {} (byte {})", path, e->message, e->byte_offset);
        return std::nullopt;
    }
    return std::get<CompiledProgram>(parsed);
}

int cmd_gen(const Catalog& cat, std::uint64_t seed, const std::string& prog_type, int count,
            const std::string& out_dir) {
    std::optional<ProgramTypeId> pt;
    if (!prog_type.empty()) {
        pt = program_type_from_string(prog_type);
        if (!pt)
            return fail("unknown program type: " + prog_type);
    }
    if (!out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec)
            return fail("cannot create " + out_dir);
    }
    for (int i = 0; i < count; ++i) {
        GenConfig cfg;
        cfg.seed = seed + static_cast<std::uint64_t>(i);
        ProgramAst ast = generate_program(cfg, cat, pt);
        std::string text = serialize_ast(ast, cat);
        if (out_dir.empty()) {
            fmt::print("{}", text);
            if (count > 1)
                fmt::print("\n");
        } else {
            std::string path = fmt::format("{}/prog_{:06}.ast", out_dir, i);
            if (!write_file(path, text.data(), text.size()))
                return fail("cannot write " + path);
        }
    }
    if (!out_dir.empty())
        fmt::print("wrote {} programs to {}\n", count, out_dir);
    return 0;
}

int cmd_compile(const Catalog& cat, const std::string& in_path, const std::string& out_path) {
    auto text = read_text_file(in_path);
    if (!text)
        return fail("cannot read " + in_path);
    auto parsed = parse_ast(*text, cat);
    if (auto* e = std::get_if<AstError>(&parsed))
        return fail(fmt::format("{}:{}: {}", in_path, e->line, e->message));
    auto compiled = compile_ast(std::get<ProgramAst>(parsed), cat);
    if (auto* e = std::get_if<LowerError>(&compiled))
        return fail(e->message);
    std::vector<std::uint8_t> bytes = write_brfp(std::get<CompiledProgram>(compiled));
    if (!write_file(out_path, bytes.data(), bytes.size()))
        return fail("cannot write " + out_path);
    return 0;
}

int cmd_disasm(const Catalog& cat, const std::string& in_path) {
    std::string err;
    auto cp = load_container(in_path, err);
    if (!cp)
        return fail(err);
    fmt::print("prog_type {}\n", to_string(cp->prog.prog_type));
    fmt::print("section {}\n", cp->prog.section_name);
    for (std::size_t i = 0; i < cp->map_deps.size(); ++i) {
        const MapSpecRequest& m = cp->map_deps[i];
        fmt::print("map {} {} key={} value={} entries={} flags={:#x}\n", i,
                   to_string(m.map_type), m.key_size, m.value_size, m.max_entries, m.flags);
    }
    auto namer = helper_namer(cat);
    fmt::print("{}", disassemble(cp->prog, &namer));
    return 0;
}

int cmd_verify(const Catalog& cat, const std::vector<std::string>& paths, bool stats) {
    std::map<std::string, int> histogram;
    int rejected = 0;
    for (const auto& path : paths) {
        std::string err;
        auto cp = load_container(path, err);
        if (!cp)
            return fail(err);
        auto r = verify(cp->prog, cp->map_deps, cp->prog.prog_type, cat);
        if (auto* e = std::get_if<VerifierError>(&r)) {
            fmt::print("{} {} insn={} {}\n", path, e->rule_id, e->insn_index, e->message);
            ++histogram[e->rule_id];
            ++rejected;
        } else {
            const VerifySummary& s = std::get<VerifySummary>(r);
            fmt::print("{} ok stack={} helpers={} maps={} paths={} insns={}\n", path,
                       s.max_stack_depth, s.helpers_called.size(), s.maps_touched.size(),
                       s.paths_explored, s.insns_processed);
        }
    }
    if (stats) {
        fmt::print("total {} rejected {}\n", paths.size(), rejected);
        for (const auto& [rule, n] : histogram)
            fmt::print("rule {} {}\n", rule, n);
    }
    return rejected ? 3 : 0;
}

int cmd_run(const Catalog& cat, const std::string& in_path, const std::string& payload_path,
            const std::string& engine, const std::string& seed_bugs, std::uint64_t seed) {
    std::string err;
    auto cp = load_container(in_path, err);
    if (!cp)
        return fail(err);
    auto bugs = SeededBugSet::parse(seed_bugs);
    if (!bugs)
        return fail("bad --seed-bugs: " + seed_bugs);

    std::vector<std::uint8_t> payload;
    if (!payload_path.empty()) {
        auto bytes = read_binary_file(payload_path);
        if (!bytes)
            return fail("cannot read " + payload_path);
        payload = *bytes;
    }

    SimKernel kernel(seed, 0, *bugs, &cat);
    std::vector<std::uint32_t> handles;
    for (const auto& spec : cp->map_deps) {
        auto r = kernel.sys_map_create(spec);
        if (auto* e = std::get_if<RuntimeError>(&r))
            return fail(fmt::format("map_create: {}: {}", e->code, e->message));
        handles.push_back(std::get<std::uint32_t>(r));
    }
    auto loaded = kernel.sys_prog_load(*cp, handles);
    if (auto* e = std::get_if<VerifierError>(&loaded))
        return fail(fmt::format("load rejected: {} insn={} {}", e->rule_id, e->insn_index,
                                e->message));
    std::uint32_t prog = std::get<std::uint32_t>(loaded);

    auto run_one = [&](EngineKind kind, const char* label) {
        ExecResult r = kernel.execute(prog, payload, kind);
        fmt::print("engine {}\n", label);
        print_exec_result(r, cat);
    };
    if (engine == "interp") {
        run_one(EngineKind::interp, "interp");
    } else if (engine == "linear") {
        run_one(EngineKind::linear, "linear");
    } else if (engine == "both") {
        ExecResult r = kernel.execute_dual(prog, payload);
        fmt::print("engine both\n");
        print_exec_result(r, cat);
    } else {
        return fail("bad --engine: " + engine);
    }
    return 0;
}

int cmd_fuzz(const Catalog& cat, std::uint64_t seed, const std::string& budget_text, int workers,
             const std::string& corpus_dir, const std::string& seed_bugs,
             const std::string& stats_out) {
    FuzzConfig cfg;
    cfg.seed = seed;
    cfg.workers = workers;
    cfg.catalog = &cat;
    auto budget = parse_budget(budget_text);
    if (!budget)
        return fail("bad --budget: " + budget_text + " (want e.g. 600s or 5000i)");
    cfg.budget = *budget;
    auto bugs = SeededBugSet::parse(seed_bugs);
    if (!bugs)
        return fail("bad --seed-bugs: " + seed_bugs);
    cfg.bugs = *bugs;

    FuzzSession session = fuzz_loop(cfg);
    fmt::print("{}", report_stats(session.stats));

    if (!stats_out.empty()) {
        std::string text = stats_lines(session.stats, cfg, session.findings);
        if (!write_file(stats_out, text.data(), text.size()))
            return fail("cannot write " + stats_out);
    }

    if (!corpus_dir.empty()) {
        std::error_code ec;
        fs::create_directories(corpus_dir, ec);
        if (ec)
            return fail("cannot create " + corpus_dir);
        std::string manifest = "brf-corpus-v1\n";
        manifest += fmt::format("seed {}\nworkers {}\nbudget {}\nbugs {}\n", cfg.seed,
                                cfg.workers, budget_text, seed_bugs);
        for (const auto& entry : session.corpus.entries()) {
            std::string digest = input_digest(entry.input, cat);
            std::string ast_text = serialize_ast(entry.input.ast, cat);
            std::string input_text = serialize_input(entry.input, cat);
            auto compiled = compile_ast(entry.input.ast, cat);
            if (auto* cp = std::get_if<CompiledProgram>(&compiled)) {
                std::vector<std::uint8_t> bytes = write_brfp(*cp);
                write_file(fmt::format("{}/{}.brfp", corpus_dir, digest), bytes.data(),
                           bytes.size());
            }
            write_file(fmt::format("{}/{}.ast", corpus_dir, digest), ast_text.data(),
                       ast_text.size());
            write_file(fmt::format("{}/{}.input", corpus_dir, digest), input_text.data(),
                       input_text.size());
            manifest += fmt::format("entry {} insns={} helpers={} maps={} coverage={}\n", digest,
                                    entry.insns, entry.helpers, entry.maps,
                                    entry.signature.count());
        }
        for (const auto& [input, report] : session.reproducers) {
            std::string digest = input_digest(input, cat);
            std::string input_text = serialize_input(input, cat);
            write_file(fmt::format("{}/repro_{}.input", corpus_dir, digest), input_text.data(),
                       input_text.size());
            manifest += fmt::format("finding {} at probe {} repro repro_{}.input\n",
                                    to_string(report.oracle), report.location, digest);
        }
        std::string mpath = corpus_dir + "/manifest.txt";
        if (!write_file(mpath, manifest.data(), manifest.size()))
            return fail("cannot write " + mpath);
        fmt::print("corpus: {} entries, {} reproducers -> {}\n",
                   session.corpus.entries().size(), session.reproducers.size(), corpus_dir);
    }
    return 0;
}

int cmd_replay(const Catalog& cat, const std::string& in_path, const std::string& seed_bugs) {
    auto text = read_text_file(in_path);
    if (!text)
        return fail("cannot read " + in_path);
    auto parsed = parse_input(*text, cat);
    if (auto* e = std::get_if<AstError>(&parsed))
        return fail(fmt::format("{}:{}: {}", in_path, e->line, e->message));
    const FuzzInput& input = std::get<FuzzInput>(parsed);
    auto bugs = SeededBugSet::parse(seed_bugs);
    if (!bugs)
        return fail("bad --seed-bugs: " + seed_bugs);

    SimKernel kernel(input.kernel_seed, 0, *bugs, &cat);
    ExecOutcome out = execute_input(input, kernel, cat);
    fmt::print("compiled {}\nload_ok {}\nattach_ok {}\nexecuted {}\n", out.compiled ? 1 : 0,
               out.load_ok ? 1 : 0, out.attach_ok ? 1 : 0, out.executed ? 1 : 0);
    if (!out.reject_rule.empty())
        fmt::print("reject_rule {}\n", out.reject_rule);
    fmt::print("coverage_units {}\n", out.signature.count());
    for (const auto& f : out.findings)
        fmt::print("finding {} at probe {} ({}) digest {}\n", to_string(f.oracle), f.location,
                   f.detail, f.input_digest);
    return out.findings.empty() ? 0 : 4;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"simulated eBPF runtime fuzzer"};
    app.require_subcommand(1);

    std::string catalog_path;
    app.add_option("--catalog", catalog_path, "catalog table file (overrides the bundled one)");

    // gen
    auto* gen = app.add_subcommand("gen", "generate random programs as AST text");
    std::uint64_t gen_seed = 1;
    std::string gen_prog_type, gen_out_dir;
    int gen_count = 1;
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_option("--prog-type", gen_prog_type, "fix the program type");
    gen->add_option("--count", gen_count, "number of programs");
    gen->add_option("--out-dir", gen_out_dir, "write programs here instead of stdout");

    // compile
    auto* compile = app.add_subcommand("compile", "compile AST text to a container");
    std::string compile_in, compile_out = "out.brfp";
    compile->add_option("input", compile_in, "AST text file")->required();
    compile->add_option("-o,--output", compile_out, "container path");

    // disasm
    auto* disasm = app.add_subcommand("disasm", "list the instructions in a container");
    std::string disasm_in;
    disasm->add_option("input", disasm_in, "container file")->required();

    // verify
    auto* verify = app.add_subcommand("verify", "verify containers, print ok/rule per program");
    std::vector<std::string> verify_in;
    bool verify_stats = false;
    verify->add_option("input", verify_in, "container files")->required();
    verify->add_flag("--stats", verify_stats, "print a rejection-rule histogram");

    // run
    auto* run = app.add_subcommand("run", "load a container and execute it once");
    std::string run_in, run_payload, run_engine = "interp", run_bugs = "none";
    std::uint64_t run_seed = 1;
    run->add_option("input", run_in, "container file")->required();
    run->add_option("--payload", run_payload, "context payload file");
    run->add_option("--engine", run_engine, "interp|linear|both");
    run->add_option("--seed-bugs", run_bugs, "all|none|comma list");
    run->add_option("--seed", run_seed, "kernel seed");

    // fuzz
    auto* fuzz = app.add_subcommand("fuzz", "run a fuzzing session");
    std::uint64_t fuzz_seed = 1;
    std::string fuzz_budget = "600s", fuzz_corpus, fuzz_bugs = "none", fuzz_stats_out;
    int fuzz_workers = 4;
    fuzz->add_option("--seed", fuzz_seed, "master seed");
    fuzz->add_option("--budget", fuzz_budget, "wall clock (600s) or input count (5000i)");
    fuzz->add_option("--workers", fuzz_workers, "worker count");
    fuzz->add_option("--corpus", fuzz_corpus, "corpus output directory");
    fuzz->add_option("--seed-bugs", fuzz_bugs, "all|none|comma list");
    fuzz->add_option("--stats-out", fuzz_stats_out, "stats file (line-oriented)");

    // catalog
    auto* catalog_cmd =
        app.add_subcommand("catalog", "print the bundled catalog table (editable, reloadable "
                                       "via --catalog)");

    // replay
    auto* replay = app.add_subcommand("replay", "re-execute a stored input deterministically");
    std::string replay_in, replay_bugs = "all";
    replay->add_option("input", replay_in, "input file (from a corpus directory)")->required();
    replay->add_option("--seed-bugs", replay_bugs, "all|none|comma list");

    CLI11_PARSE(app, argc, argv);

    Catalog loaded;
    const Catalog* cat = &Catalog::builtin();
    if (!catalog_path.empty()) {
        auto text = read_text_file(catalog_path);
        if (!text)
            return fail("cannot read " + catalog_path);
        auto parsed = Catalog::parse(*text);
        if (auto* e = std::get_if<CatalogError>(&parsed))
            return fail(fmt::format("{}:{}: {}", catalog_path, e->line, e->message));
        loaded = std::get<Catalog>(parsed);
        cat = &loaded;
    }

    if (gen->parsed())
        return cmd_gen(*cat, gen_seed, gen_prog_type, gen_count, gen_out_dir);
    if (compile->parsed())
        return cmd_compile(*cat, compile_in, compile_out);
    if (disasm->parsed())
        return cmd_disasm(*cat, disasm_in);
    if (verify->parsed())
        return cmd_verify(*cat, verify_in, verify_stats);
    if (run->parsed())
        return cmd_run(*cat, run_in, run_payload, run_engine, run_bugs, run_seed);
    if (fuzz->parsed())
        return cmd_fuzz(*cat, fuzz_seed, fuzz_budget, fuzz_workers, fuzz_corpus, fuzz_bugs,
                        fuzz_stats_out);
    if (catalog_cmd->parsed()) {
        fmt::print("{}", Catalog::builtin_text());
        return 0;
    }
    if (replay->parsed())
        return cmd_replay(*cat, replay_in, replay_bugs);
    return 0;
}
