#include "brf/harness.hpp"

#include "brf/lower.hpp"

#include <fmt/format.h>

#include <chrono>
#include <functional>
#include <cmath>
#include <sstream>

namespace brf {

namespace {

const char* attach_kind_name(AttachKind k) { return to_string(k); }

std::optional<AttachKind> attach_kind_from(const std::string& s) {
    for (int i = 0; i < kNumAttachKinds; ++i)
        if (s == to_string(static_cast<AttachKind>(i)))
            return static_cast<AttachKind>(i);
    return std::nullopt;
}

std::string hex_encode(const std::vector<std::uint8_t>& bytes) {
    if (bytes.empty())
        return "-";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (std::uint8_t b : bytes)
        out += fmt::format("{:02x}", b);
    return out;
}

std::optional<std::vector<std::uint8_t>> hex_decode(const std::string& s) {
    if (s == "-")
        return std::vector<std::uint8_t>{};
    if (s.size() % 2)
        return std::nullopt;
    std::vector<std::uint8_t> out;
    out.reserve(s.size() / 2);
    for (std::size_t i = 0; i < s.size(); i += 2) {
        auto nib = [](char c) -> int {
            if (c >= '0' && c <= '9')
                return c - '0';
            if (c >= 'a' && c <= 'f')
                return c - 'a' + 10;
            return -1;
        };
        int hi = nib(s[i]), lo = nib(s[i + 1]);
        if (hi < 0 || lo < 0)
            return std::nullopt;
        out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
    }
    return out;
}

std::vector<std::uint8_t> random_bytes(Rng& rng, std::size_t n) {
    std::vector<std::uint8_t> out(n);
    for (auto& b : out)
        b = static_cast<std::uint8_t>(rng.below(256));
    return out;
}

std::vector<PrologueCall> build_prologue(const ProgramAst& ast) {
    std::vector<PrologueCall> out;
    for (std::size_t i = 0; i < ast.map_deps.size(); ++i)
        out.push_back({PrologueCall::kMapCreate, static_cast<int>(i)});
    out.push_back({PrologueCall::kLoad, 0});
    out.push_back({PrologueCall::kAttach, 0});
    return out;
}

// Program-side key buffers are zero-filled stack bytes, so zero keys from
// the userspace side collide with program accesses and flip miss paths to
// hits.
std::vector<std::uint8_t> sample_key(const MapSpecRequest& spec, Rng& rng) {
    std::vector<std::uint8_t> key(spec.key_size, 0);
    if (!key.empty() && rng.chance(0.5)) {
        std::uint64_t v = rng.below(2ull * std::max(spec.max_entries, 1u));
        for (std::size_t i = 0; i < key.size() && i < 8; ++i)
            key[i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
    return key;
}

// (ordinal, slot) pairs where the program tail-calls with a literal index
// into one of its own PROG_ARRAY deps.
std::vector<std::pair<int, std::uint64_t>> tailcall_sites(const ProgramAst& ast) {
    std::vector<std::pair<int, std::uint64_t>> out;
    std::function<void(const std::vector<Stmt>&)> walk = [&](const std::vector<Stmt>& stmts) {
        for (const auto& s : stmts) {
            if (const auto* blk = std::get_if<BlockStmt>(&s.node)) {
                walk(blk->body);
            } else if (const auto* call = std::get_if<CallStmt>(&s.node)) {
                if (static_cast<int>(call->helper) != 12 || call->args.size() < 3)
                    continue;
                const ArgExpr& map_arg = call->args[1];
                const ArgExpr& key_arg = call->args[2];
                if (map_arg.kind != ArgKind::kMap || key_arg.kind != ArgKind::kLiteral)
                    continue;
                std::size_t ord = static_cast<std::size_t>(map_arg.index);
                if (ord < ast.map_deps.size() && key_arg.literal >= 0 &&
                    static_cast<std::uint64_t>(key_arg.literal) < ast.map_deps[ord].max_entries)
                    out.push_back({map_arg.index,
                                   static_cast<std::uint64_t>(key_arg.literal)});
            }
        }
    };
    walk(ast.stmts);
    return out;
}

// allow_prog_wiring: pointing a PROG_ARRAY slot at the program itself sets
// up tail-call loops. That is a mutation strategy, not part of fresh seeds,
// so coverage from the resulting amplified executions is attributable to
// corpus retention rather than to generation luck. The wired slot is taken
// from an actual tail-call site so the transfer can land.
AuxCall sample_aux(const ProgramAst& ast, Rng& rng, bool allow_prog_wiring) {
    if (allow_prog_wiring && rng.chance(0.3)) {
        auto sites = tailcall_sites(ast);
        if (!sites.empty()) {
            auto [ord, slot] = sites[rng.below(sites.size())];
            AuxCall aux;
            aux.kind = AuxCall::kUpdate;
            aux.ordinal = ord;
            aux.value_is_prog_id = true; // point the slot at the program itself
            aux.key.assign(ast.map_deps[static_cast<std::size_t>(ord)].key_size, 0);
            for (std::size_t i = 0; i < aux.key.size() && i < 8; ++i)
                aux.key[i] = static_cast<std::uint8_t>(slot >> (8 * i));
            return aux;
        }
    }
    AuxCall aux;
    aux.ordinal = static_cast<int>(rng.below(ast.map_deps.size()));
    const MapSpecRequest& spec = ast.map_deps[static_cast<std::size_t>(aux.ordinal)];
    std::uint64_t r = rng.below(4);
    aux.kind = r < 2 ? AuxCall::kUpdate : r == 2 ? AuxCall::kLookup : AuxCall::kDelete;
    aux.key = sample_key(spec, rng);
    if (aux.kind == AuxCall::kUpdate) {
        if (spec.map_type == MapTypeId::PROG_ARRAY && allow_prog_wiring) {
            aux.value_is_prog_id = true;
            std::uint64_t slot = rng.below(std::max(spec.max_entries, 1u));
            for (std::size_t i = 0; i < aux.key.size() && i < 8; ++i)
                aux.key[i] = static_cast<std::uint8_t>(slot >> (8 * i));
        } else {
            aux.value = random_bytes(rng, spec.value_size);
        }
    }
    return aux;
}

void append_finding(std::vector<BugReport>& out, std::set<std::pair<int, std::uint32_t>>& seen,
                    const BugReport& r) {
    if (seen.insert({static_cast<int>(r.oracle), r.location}).second)
        out.push_back(r);
}

} // namespace

FuzzInput build_input(const ProgramAst& ast, std::uint64_t kernel_seed, Rng& rng,
                      const Catalog& cat) {
    FuzzInput input;
    input.kernel_seed = kernel_seed;
    input.ast = ast;
    input.fixed_prologue = build_prologue(ast);
    if (!ast.map_deps.empty()) {
        std::uint64_t n = rng.below(3);
        for (std::uint64_t i = 0; i < n; ++i)
            input.aux_calls.push_back(sample_aux(ast, rng, false));
    }
    input.trigger_calls.push_back(
        {true, AttachKind::socket, random_bytes(rng, rng.below(48) + 16)});
    AttachKind kind = cat.program_type(ast.prog_type).attach_kind;
    input.trigger_calls.push_back({false, kind, random_bytes(rng, rng.below(48) + 16)});
    if (rng.chance(0.3))
        input.trigger_calls.push_back(
            {true, AttachKind::socket, random_bytes(rng, rng.below(48) + 16)});
    return input;
}

ExecOutcome execute_input(const FuzzInput& input, SimKernel& kernel, const Catalog& cat) {
    ExecOutcome out;
    std::set<std::pair<int, std::uint32_t>> seen;
    std::string digest = input_digest(input, cat);

    auto compiled = compile_ast(input.ast, cat);
    auto* cp = std::get_if<CompiledProgram>(&compiled);
    if (!cp) {
        out.reject_rule = "lower_error";
        return out;
    }
    out.compiled = true;

    std::vector<std::uint32_t> handles;
    std::optional<std::uint32_t> prog_id;
    for (const auto& call : input.fixed_prologue) {
        switch (call.kind) {
        case PrologueCall::kMapCreate: {
            auto r = kernel.sys_map_create(cp->map_deps[static_cast<std::size_t>(call.ordinal)]);
            handles.push_back(std::holds_alternative<std::uint32_t>(r) ? std::get<std::uint32_t>(r)
                                                                       : 0);
            break;
        }
        case PrologueCall::kLoad: {
            auto r = kernel.sys_prog_load(*cp, handles);
            if (auto* id = std::get_if<std::uint32_t>(&r)) {
                prog_id = *id;
                out.load_ok = true;
            } else {
                out.reject_rule = std::get<VerifierError>(r).rule_id;
            }
            break;
        }
        case PrologueCall::kAttach: {
            if (!prog_id)
                break;
            AttachKind kind = cat.program_type(input.ast.prog_type).attach_kind;
            std::optional<std::uint32_t> target;
            if (kind == AttachKind::cgroup || kind == AttachKind::device)
                target = kernel.create_target_resource(kind);
            out.attach_ok = !kernel.sys_prog_attach(*prog_id, kind, target).has_value();
            break;
        }
        }
    }
    if (out.load_ok && prog_id) {
        const LoadedProgram* p = kernel.program(*prog_id);
        out.insns = static_cast<std::uint32_t>(p->image.insns.size());
        out.helpers = static_cast<std::uint32_t>(p->summary.helpers_called.size());
        out.maps = static_cast<std::uint32_t>(p->summary.maps_touched.size());
    }

    // Auxiliary map syscalls run before the triggers so their effects are
    // visible to the program.
    for (const auto& aux : input.aux_calls) {
        if (static_cast<std::size_t>(aux.ordinal) >= handles.size())
            continue;
        std::uint32_t id = handles[static_cast<std::size_t>(aux.ordinal)];
        switch (aux.kind) {
        case AuxCall::kUpdate: {
            std::vector<std::uint8_t> value = aux.value;
            if (aux.value_is_prog_id) {
                std::uint32_t pid = prog_id.value_or(0);
                value.assign(4, 0);
                for (int i = 0; i < 4; ++i)
                    value[static_cast<std::size_t>(i)] =
                        static_cast<std::uint8_t>(pid >> (8 * i));
            }
            kernel.user_map_update(id, aux.key, value);
            break;
        }
        case AuxCall::kLookup:
            kernel.user_map_lookup(id, aux.key);
            break;
        case AuxCall::kDelete:
            kernel.user_map_delete(id, aux.key);
            break;
        }
    }

    for (const auto& trig : input.trigger_calls) {
        if (trig.is_test_run) {
            if (!prog_id)
                continue;
            auto r = kernel.sys_test_run(*prog_id, trig.payload);
            if (auto* res = std::get_if<ExecResult>(&r)) {
                out.executed = true;
                for (const auto& f : res->oracle_findings) {
                    BugReport report = f;
                    report.input_digest = digest;
                    append_finding(out.findings, seen, report);
                }
            }
        } else {
            for (const auto& res : kernel.trigger_event(trig.kind, trig.payload)) {
                out.executed = true;
                for (const auto& f : res.oracle_findings) {
                    BugReport report = f;
                    report.input_digest = digest;
                    append_finding(out.findings, seen, report);
                }
            }
        }
    }

    out.signature = kernel.coverage();
    return out;
}

// ---------------------------------------------------------------------------
// corpus / scheduler
// ---------------------------------------------------------------------------

bool Corpus::insert_if_novel(CorpusEntry entry) {
    if (!total_.would_grow(entry.signature))
        return false;
    if (digest_) {
        std::string d = digest_(entry.input);
        if (!digests_.insert(d).second)
            return false;
    }
    total_.merge(entry.signature);
    entries_.push_back(std::move(entry));
    return true;
}

void Corpus::merge(const Corpus& o) {
    for (const auto& e : o.entries_)
        insert_if_novel(e);
}

Action schedule_next(const Corpus& corpus, const SchedulerConfig& cfg, Rng& rng) {
    if (corpus.entries().empty())
        return {ActionKind::generate_new, 0};
    double total = cfg.p_generate + cfg.p_mutate_prog + cfg.p_mutate_aux;
    double r = static_cast<double>(rng.below(1u << 24)) / static_cast<double>(1u << 24) * total;
    Action a;
    if (r < cfg.p_generate) {
        a.kind = ActionKind::generate_new;
    } else {
        a.kind = r < cfg.p_generate + cfg.p_mutate_prog ? ActionKind::mutate_program
                                                        : ActionKind::mutate_aux;
        // Bias toward recent entries: fresh novelty is where chains of
        // state-building mutations pay off.
        std::size_t n = corpus.entries().size();
        if (rng.chance(0.5)) {
            std::size_t window = std::min<std::size_t>(n, 8);
            a.entry = n - 1 - rng.below(window);
        } else {
            a.entry = rng.below(n);
        }
    }
    return a;
}

std::optional<Budget> parse_budget(const std::string& text) {
    if (text.size() < 2)
        return std::nullopt;
    char suffix = text.back();
    std::uint64_t n = 0;
    for (std::size_t i = 0; i + 1 < text.size(); ++i) {
        if (text[i] < '0' || text[i] > '9')
            return std::nullopt;
        n = n * 10 + static_cast<std::uint64_t>(text[i] - '0');
    }
    Budget b;
    if (suffix == 's')
        b.seconds = static_cast<double>(n);
    else if (suffix == 'i')
        b.inputs = n;
    else
        return std::nullopt;
    return b;
}

// ---------------------------------------------------------------------------
// fuzz loop
// ---------------------------------------------------------------------------

namespace {

FuzzInput mutate_aux_calls(const FuzzInput& base, Rng& rng) {
    FuzzInput input = base;
    input.kernel_seed = rng.next();
    bool has_maps = !input.ast.map_deps.empty();
    if (has_maps && (input.aux_calls.empty() || rng.chance(0.6))) {
        std::uint64_t n = rng.below(3) + 1;
        for (std::uint64_t i = 0; i < n; ++i)
            input.aux_calls.push_back(sample_aux(input.ast, rng, true));
    } else if (!input.aux_calls.empty() && rng.chance(0.4)) {
        input.aux_calls.erase(input.aux_calls.begin() +
                              static_cast<long>(rng.below(input.aux_calls.size())));
    } else if (!input.aux_calls.empty()) {
        AuxCall& aux = input.aux_calls[rng.below(input.aux_calls.size())];
        const MapSpecRequest& spec = input.ast.map_deps[static_cast<std::size_t>(aux.ordinal)];
        aux.key = sample_key(spec, rng);
        if (aux.kind == AuxCall::kUpdate && !aux.value_is_prog_id)
            aux.value = random_bytes(rng, spec.value_size);
    }
    if (rng.chance(0.3) && !input.trigger_calls.empty()) {
        TriggerCall& t = input.trigger_calls[rng.below(input.trigger_calls.size())];
        t.payload = random_bytes(rng, rng.below(48) + 16);
    }
    // Stack another trigger so retained inputs can accumulate repeated
    // executions; fresh inputs never start with more than three.
    if (input.trigger_calls.size() < 12 && rng.chance(0.35)) {
        TriggerCall t = input.trigger_calls.empty()
                            ? TriggerCall{true, AttachKind::socket, {}}
                            : input.trigger_calls[rng.below(input.trigger_calls.size())];
        t.payload = random_bytes(rng, rng.below(48) + 16);
        input.trigger_calls.push_back(t);
    }
    return input;
}

} // namespace

FuzzSession fuzz_loop(const FuzzConfig& cfg) {
    const Catalog& cat = cfg.catalog ? *cfg.catalog : Catalog::builtin();
    FuzzSession session;
    session.corpus.set_digest_fn(
        [&cat](const FuzzInput& in) { return input_digest(in, cat); });

    Rng master(cfg.seed);
    std::vector<Rng> worker_rng;
    for (int w = 0; w < cfg.workers; ++w)
        worker_rng.push_back(master.fork(static_cast<std::uint64_t>(w) + 1));

    std::set<std::uint64_t> seen_asts; // hashed program texts
    std::set<std::uint64_t> executed_asts;
    std::set<std::pair<int, std::uint32_t>> finding_keys;
    auto start = std::chrono::steady_clock::now();

    bool done = false;
    while (!done) {
        std::vector<Corpus> batch_finds(static_cast<std::size_t>(cfg.workers));
        for (int w = 0; w < cfg.workers && !done; ++w) {
            Rng& rng = worker_rng[static_cast<std::size_t>(w)];
            Corpus& found = batch_finds[static_cast<std::size_t>(w)];
            found.set_digest_fn([&cat](const FuzzInput& in) { return input_digest(in, cat); });
            // Worker-local view: the shared corpus plus this batch's finds.
            Corpus local = session.corpus;
            for (int b = 0; b < cfg.sched.batch && !done; ++b) {
                Action action = schedule_next(local, cfg.sched, rng);
                FuzzInput input;
                switch (action.kind) {
                case ActionKind::generate_new: {
                    GenConfig gen = cfg.gen;
                    gen.seed = rng.next();
                    input = build_input(generate_program(gen, cat), rng.next(), rng, cat);
                    ++session.stats.generated;
                    break;
                }
                case ActionKind::mutate_program: {
                    // Keep the parent's syscall context (aux calls, trigger
                    // stack) so program mutations extend a lineage instead
                    // of resetting it; drop aux calls whose map went away.
                    const CorpusEntry& e = local.entries()[action.entry];
                    input = e.input;
                    input.ast = mutate_program(e.input.ast, rng, cat);
                    input.fixed_prologue = build_prologue(input.ast);
                    input.kernel_seed = rng.next();
                    std::erase_if(input.aux_calls, [&](const AuxCall& a) {
                        return static_cast<std::size_t>(a.ordinal) >= input.ast.map_deps.size();
                    });
                    ++session.stats.mutated_prog;
                    break;
                }
                case ActionKind::mutate_aux: {
                    input = mutate_aux_calls(local.entries()[action.entry].input, rng);
                    ++session.stats.mutated_aux;
                    break;
                }
                }

                SimKernel kernel(input.kernel_seed, static_cast<std::uint32_t>(w), cfg.bugs,
                                 &cat);
                ExecOutcome outcome = execute_input(input, kernel, cat);

                Stats& st = session.stats;
                ++st.inputs_total;
                std::string text = serialize_ast(input.ast, cat);
                std::uint64_t ast_hash = fnv1a64(
                    reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
                if (seen_asts.insert(ast_hash).second)
                    ++st.inputs_unique;
                if (outcome.compiled) {
                    ++st.loads_attempted;
                    if (outcome.load_ok) {
                        ++st.loads_succeeded;
                        ++st.attaches_attempted;
                        if (outcome.attach_ok)
                            ++st.attaches_succeeded;
                        st.sum_insns += outcome.insns;
                        st.max_insns = std::max<std::uint64_t>(st.max_insns, outcome.insns);
                        st.sum_helpers += outcome.helpers;
                        st.max_helpers = std::max<std::uint64_t>(st.max_helpers, outcome.helpers);
                        st.sum_maps += outcome.maps;
                        st.max_maps = std::max<std::uint64_t>(st.max_maps, outcome.maps);
                    } else {
                        ++st.rule_histogram[outcome.reject_rule];
                    }
                } else {
                    ++st.rule_histogram[outcome.reject_rule];
                }
                if (outcome.executed && executed_asts.insert(ast_hash).second)
                    ++st.executed_unique;
                st.findings_total += outcome.findings.size();
                for (const auto& f : outcome.findings)
                    if (finding_keys.insert({static_cast<int>(f.oracle), f.location}).second) {
                        session.findings.push_back(f);
                        session.reproducers.push_back({input, f});
                    }
                session.coverage.merge(outcome.signature);

                if (cfg.coverage_guided && outcome.load_ok && outcome.executed) {
                    CorpusEntry entry{input, outcome.signature, outcome.insns, outcome.helpers,
                                      outcome.maps};
                    if (local.insert_if_novel(entry))
                        found.insert_if_novel(entry);
                }

                if (cfg.budget.inputs && session.stats.inputs_total >= *cfg.budget.inputs)
                    done = true;
                if (cfg.budget.seconds) {
                    double elapsed = std::chrono::duration<double>(
                                         std::chrono::steady_clock::now() - start)
                                         .count();
                    if (elapsed >= *cfg.budget.seconds)
                        done = true;
                }
            }
        }
        // Single-writer checkpoint: merge every worker's batch finds in
        // worker order, then record the coverage curve point.
        for (const auto& found : batch_finds)
            session.corpus.merge(found);
        session.stats.coverage_curve.push_back(
            {session.stats.inputs_total, session.coverage.count()});
    }

    session.stats.corpus_size = session.corpus.entries().size();
    session.stats.probes_covered = session.coverage.count();
    return session;
}

// ---------------------------------------------------------------------------
// minimize
// ---------------------------------------------------------------------------

namespace {

// Number of statements at every nesting level, for index-addressed removal.
int count_stmts(const std::vector<Stmt>& stmts) {
    int n = 0;
    for (const auto& s : stmts) {
        ++n;
        if (const auto* blk = std::get_if<BlockStmt>(&s.node))
            n += count_stmts(blk->body);
    }
    return n;
}

bool remove_stmt_at(std::vector<Stmt>& stmts, int& idx) {
    for (std::size_t i = 0; i < stmts.size(); ++i) {
        if (idx == 0) {
            stmts.erase(stmts.begin() + static_cast<long>(i));
            return true;
        }
        --idx;
        if (auto* blk = std::get_if<BlockStmt>(&stmts[i].node))
            if (remove_stmt_at(blk->body, idx))
                return true;
    }
    return false;
}

} // namespace

FuzzInput minimize_input(const FuzzInput& input,
                         const std::function<bool(const FuzzInput&)>& predicate,
                         const Catalog& cat) {
    if (!predicate(input))
        return input;
    FuzzInput best = input;
    bool changed = true;
    for (int round = 0; round < 8 && changed; ++round) {
        changed = false;
        for (std::size_t i = 0; i < best.aux_calls.size();) {
            FuzzInput trial = best;
            trial.aux_calls.erase(trial.aux_calls.begin() + static_cast<long>(i));
            if (predicate(trial)) {
                best = std::move(trial);
                changed = true;
            } else {
                ++i;
            }
        }
        for (std::size_t i = 0; i < best.trigger_calls.size();) {
            FuzzInput trial = best;
            trial.trigger_calls.erase(trial.trigger_calls.begin() + static_cast<long>(i));
            if (predicate(trial)) {
                best = std::move(trial);
                changed = true;
            } else {
                ++i;
            }
        }
        for (int i = 0; i < count_stmts(best.ast.stmts);) {
            FuzzInput trial = best;
            int idx = i;
            remove_stmt_at(trial.ast.stmts, idx);
            fixup_references(trial.ast, cat);
            gc_map_deps(trial.ast);
            trial.fixed_prologue = build_prologue(trial.ast);
            // Aux ordinals are not remapped across the dep recomputation;
            // drop any call whose map no longer exists and let the
            // predicate decide whether the rest still reproduce.
            std::erase_if(trial.aux_calls, [&](const AuxCall& a) {
                return static_cast<std::size_t>(a.ordinal) >= trial.ast.map_deps.size();
            });
            // fixup_references can grow the program back (e.g. re-inserting a
            // dropped release); accept only trials that actually shrink.
            int before = count_stmts(best.ast.stmts) + static_cast<int>(best.aux_calls.size());
            int after = count_stmts(trial.ast.stmts) + static_cast<int>(trial.aux_calls.size());
            if (after < before && predicate(trial)) {
                best = std::move(trial);
                changed = true;
            } else {
                ++i;
            }
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// serialization / reporting
// ---------------------------------------------------------------------------

std::string serialize_input(const FuzzInput& input, const Catalog& cat) {
    std::string out = "input v1\n";
    out += fmt::format("kernel_seed {}\n", input.kernel_seed);
    for (const auto& aux : input.aux_calls) {
        switch (aux.kind) {
        case AuxCall::kUpdate:
            out += fmt::format("aux update {} {} {}\n", aux.ordinal, hex_encode(aux.key),
                               aux.value_is_prog_id ? "@prog" : hex_encode(aux.value));
            break;
        case AuxCall::kLookup:
            out += fmt::format("aux lookup {} {}\n", aux.ordinal, hex_encode(aux.key));
            break;
        case AuxCall::kDelete:
            out += fmt::format("aux delete {} {}\n", aux.ordinal, hex_encode(aux.key));
            break;
        }
    }
    for (const auto& t : input.trigger_calls) {
        if (t.is_test_run)
            out += fmt::format("trigger test_run {}\n", hex_encode(t.payload));
        else
            out += fmt::format("trigger event {} {}\n", attach_kind_name(t.kind),
                               hex_encode(t.payload));
    }
    out += "ast\n";
    out += serialize_ast(input.ast, cat);
    return out;
}

std::variant<FuzzInput, AstError> parse_input(const std::string& text, const Catalog& cat) {
    std::istringstream in(text);
    std::string line;
    FuzzInput input;
    int lineno = 0;
    auto fail = [&](const std::string& msg) { return AstError{msg, lineno}; };
    if (!std::getline(in, line) || line != "input v1")
        return fail("expected 'input v1' header");
    lineno = 1;
    bool in_ast = false;
    std::string ast_text;
    while (std::getline(in, line)) {
        ++lineno;
        if (in_ast) {
            ast_text += line;
            ast_text += '\n';
            continue;
        }
        if (line.empty())
            continue;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "kernel_seed") {
            ls >> input.kernel_seed;
        } else if (word == "aux") {
            std::string op, key_hex;
            int ordinal = 0;
            ls >> op >> ordinal >> key_hex;
            auto key = hex_decode(key_hex);
            if (!key)
                return fail("bad hex key");
            AuxCall aux;
            aux.ordinal = ordinal;
            aux.key = *key;
            if (op == "update") {
                aux.kind = AuxCall::kUpdate;
                std::string val_hex;
                ls >> val_hex;
                if (val_hex == "@prog") {
                    aux.value_is_prog_id = true;
                } else {
                    auto value = hex_decode(val_hex);
                    if (!value)
                        return fail("bad hex value");
                    aux.value = *value;
                }
            } else if (op == "lookup") {
                aux.kind = AuxCall::kLookup;
            } else if (op == "delete") {
                aux.kind = AuxCall::kDelete;
            } else {
                return fail("unknown aux op");
            }
            input.aux_calls.push_back(aux);
        } else if (word == "trigger") {
            std::string op;
            ls >> op;
            TriggerCall t;
            if (op == "test_run") {
                t.is_test_run = true;
            } else if (op == "event") {
                t.is_test_run = false;
                std::string kind;
                ls >> kind;
                auto k = attach_kind_from(kind);
                if (!k)
                    return fail("unknown attach kind");
                t.kind = *k;
            } else {
                return fail("unknown trigger kind");
            }
            std::string payload_hex;
            ls >> payload_hex;
            auto payload = hex_decode(payload_hex);
            if (!payload)
                return fail("bad hex payload");
            t.payload = *payload;
            input.trigger_calls.push_back(t);
        } else if (word == "ast") {
            in_ast = true;
        } else {
            return fail("unknown directive: " + word);
        }
    }
    auto ast = parse_ast(ast_text, cat);
    if (auto* err = std::get_if<AstError>(&ast))
        return *err;
    input.ast = std::get<ProgramAst>(ast);
    input.fixed_prologue = build_prologue(input.ast);
    return input;
}

std::string input_digest(const FuzzInput& input, const Catalog& cat) {
    std::string text = serialize_input(input, cat);
    std::uint64_t h = fnv1a64(reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
    return fmt::format("{:016x}", h);
}

namespace {

std::string rate_line(const char* label, std::uint64_t ok, std::uint64_t total) {
    if (total == 0)
        return fmt::format("{:<18} 0.0% +/- 0.0%  (0/0)\n", label);
    double p = static_cast<double>(ok) / static_cast<double>(total);
    double se = std::sqrt(p * (1.0 - p) / static_cast<double>(total));
    return fmt::format("{:<18} {:.1f}% +/- {:.1f}%  ({}/{})\n", label, p * 100.0, se * 100.0, ok,
                       total);
}

} // namespace

std::string report_stats(const Stats& stats) {
    std::string out;
    out += fmt::format("inputs             {}\n", stats.inputs_total);
    out += fmt::format("actions            generate {} / mutate-prog {} / mutate-aux {}\n",
                       stats.generated, stats.mutated_prog, stats.mutated_aux);
    out += rate_line("loads", stats.loads_succeeded, stats.loads_attempted);
    out += rate_line("attaches", stats.attaches_succeeded, stats.attaches_attempted);
    out += rate_line("executed-unique", stats.executed_unique, stats.inputs_unique);
    if (stats.loads_succeeded) {
        double n = static_cast<double>(stats.loads_succeeded);
        out += fmt::format("expressiveness     insns avg {:.1f} max {}; helpers avg {:.1f} max "
                           "{}; maps avg {:.1f} max {}\n",
                           static_cast<double>(stats.sum_insns) / n, stats.max_insns,
                           static_cast<double>(stats.sum_helpers) / n, stats.max_helpers,
                           static_cast<double>(stats.sum_maps) / n, stats.max_maps);
    }
    out += fmt::format("coverage           {} units over {} probes\n", stats.probes_covered,
                       probes::kNumProbes);
    out += fmt::format("corpus             {}\n", stats.corpus_size);
    out += fmt::format("findings           {}\n", stats.findings_total);
    if (!stats.rule_histogram.empty()) {
        out += "rejections:\n";
        for (const auto& [rule, count] : stats.rule_histogram)
            out += fmt::format("  {:<24} {}\n", rule, count);
    }
    return out;
}

std::string stats_lines(const Stats& stats, const FuzzConfig& cfg,
                        const std::vector<BugReport>& findings) {
    std::string out = "schema brf-stats-v1\n";
    out += fmt::format("seed {}\n", cfg.seed);
    out += fmt::format("workers {}\n", cfg.workers);
    out += fmt::format("inputs {}\n", stats.inputs_total);
    out += fmt::format("generated {}\n", stats.generated);
    out += fmt::format("mutated_prog {}\n", stats.mutated_prog);
    out += fmt::format("mutated_aux {}\n", stats.mutated_aux);
    out += fmt::format("loads {} {}\n", stats.loads_succeeded, stats.loads_attempted);
    out += fmt::format("attaches {} {}\n", stats.attaches_succeeded, stats.attaches_attempted);
    out += fmt::format("inputs_unique {}\n", stats.inputs_unique);
    out += fmt::format("executed_unique {}\n", stats.executed_unique);
    out += fmt::format("corpus {}\n", stats.corpus_size);
    out += fmt::format("coverage {}\n", stats.probes_covered);
    out += fmt::format("findings {}\n", stats.findings_total);
    out += fmt::format("insns {} {}\n", stats.sum_insns, stats.max_insns);
    out += fmt::format("helpers {} {}\n", stats.sum_helpers, stats.max_helpers);
    out += fmt::format("maps {} {}\n", stats.sum_maps, stats.max_maps);
    for (const auto& [rule, count] : stats.rule_histogram)
        out += fmt::format("rule {} {}\n", rule, count);
    for (const auto& [inputs, probes] : stats.coverage_curve)
        out += fmt::format("curve {} {}\n", inputs, probes);
    for (const auto& f : findings)
        out += fmt::format("finding {} {} {}\n", to_string(f.oracle), f.location,
                           f.input_digest);
    return out;
}

} // namespace brf
