#include "brf/astgen.hpp"

#include "brf/lower.hpp"
#include "brf/verifier.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <set>

namespace brf {

namespace {

constexpr int kFrameBudget = 472; // leave headroom below the 512-byte frame

int aligned8(std::uint32_t size) { return static_cast<int>((size + 7) & ~7u); }

template <typename T>
const T& pick(const std::set<T>& s, Rng& rng) {
    auto it = s.begin();
    std::advance(it, static_cast<long>(rng.below(s.size())));
    return *it;
}

std::int64_t pick_literal(Rng& rng) {
    switch (rng.below(4)) {
    case 0: return 0;
    case 1: return static_cast<std::int64_t>(rng.below(16));
    case 2: return static_cast<std::int64_t>(rng.below(4096));
    default: return static_cast<std::int64_t>(rng.next());
    }
}

std::uint32_t sample_size(const SizeConstraint& c, std::uint32_t soft_cap, Rng& rng) {
    if (!c.fixed_set.empty())
        return c.fixed_set[rng.below(c.fixed_set.size())];
    std::uint32_t hi = std::clamp(soft_cap, c.min, c.max);
    std::uint32_t v = static_cast<std::uint32_t>(rng.range(c.min, hi));
    if (c.align > 1)
        v = std::max(c.min, v - v % c.align);
    return v;
}

std::uint32_t sample_entries(const EntriesConstraint& c, Rng& rng) {
    if (c.forced_zero)
        return 0;
    if (c.power_of_two) {
        std::vector<std::uint32_t> powers;
        for (std::uint32_t p = 1; p != 0 && p <= c.max; p <<= 1)
            if (p >= c.min)
                powers.push_back(p);
        return powers[rng.below(powers.size())];
    }
    return static_cast<std::uint32_t>(rng.range(c.min, std::clamp(64u, c.min, c.max)));
}

MapSpecRequest gen_map_spec(MapTypeId mt, const Catalog& cat, std::uint32_t forbidden_flags,
                            Rng& rng) {
    const MapTypeSpec& cons = cat.map_attr_constraints(mt);
    MapSpecRequest spec;
    spec.map_type = mt;
    spec.key_size = sample_size(cons.key_size, 16, rng);
    spec.value_size = sample_size(cons.value_size, 64, rng);
    spec.max_entries = sample_entries(cons.max_entries, rng);
    for (const auto& group : cons.flag_groups) {
        if (!rng.chance(0.25))
            continue;
        std::vector<std::uint32_t> allowed;
        for (std::uint32_t f : group)
            if (!(f & forbidden_flags))
                allowed.push_back(f);
        if (!allowed.empty())
            spec.flags |= allowed[rng.below(allowed.size())];
    }
    return spec;
}

// Scalar-returning helpers usable to produce argument values without
// needing guards of their own.
const HelperId kScalarProducers[] = {5, 7, 8, 14, 27};

struct Gen {
    const Catalog& cat;
    const GenConfig& cfg;
    Rng& rng;
    ProgramTypeId pt;
    ProgramAst ast;
    int next_var = 0;
    int next_buf = 0;
    int frame_used = 0;
    // Each guard lowers to a conditional branch and the verifier explores
    // both arms of every non-constant branch, so cap guards program-wide.
    int branch_budget = 6;
    std::map<std::string, int> ctx_vars;
    std::vector<int> scalar_vars; // safe to read anywhere

    Gen(const Catalog& c, const GenConfig& cf, Rng& r, ProgramTypeId p)
        : cat(c), cfg(cf), rng(r), pt(p) {
        ast.prog_type = p;
    }

    bool frame_ok(int extra) const { return frame_used + extra <= kFrameBudget; }

    std::optional<int> fresh_var() {
        if (!frame_ok(8))
            return std::nullopt;
        frame_used += 8;
        return next_var++;
    }

    std::optional<int> make_buf(std::uint32_t size, std::vector<Stmt>& sink) {
        size = std::max(size, 1u);
        if (!frame_ok(aligned8(size)))
            return std::nullopt;
        frame_used += aligned8(size);
        int b = next_buf++;
        sink.push_back(Stmt{BufStmt{b, size}});
        return b;
    }

    // 0 = direct, 1 = context, 2 = helper recursion.
    int pick_strategy() {
        double total = cfg.w_direct + cfg.w_ctx + cfg.w_helper;
        double r = static_cast<double>(rng.below(1u << 20)) / static_cast<double>(1u << 20) * total;
        if (r < cfg.w_direct)
            return 0;
        return r < cfg.w_direct + cfg.w_ctx ? 1 : 2;
    }

    std::optional<std::uint32_t> reuse_map(const std::set<MapTypeId>& types) {
        std::vector<std::uint32_t> cands;
        for (std::size_t i = 0; i < ast.map_deps.size(); ++i)
            if (types.count(ast.map_deps[i].map_type))
                cands.push_back(static_cast<std::uint32_t>(i));
        if (cands.empty())
            return std::nullopt;
        return cands[rng.below(cands.size())];
    }

    std::uint32_t get_map(const std::set<MapTypeId>& types) {
        if (auto r = reuse_map(types); r && rng.chance(0.6))
            return *r;
        MapTypeId mt = pick(types, rng);
        ast.map_deps.push_back(
            gen_map_spec(mt, cat, cat.program_type(pt).forbidden_map_flags, rng));
        return static_cast<std::uint32_t>(ast.map_deps.size() - 1);
    }

    std::optional<int> ctx_scalar_var() {
        std::vector<const ContextField*> fields;
        for (const auto& f : cat.program_type(pt).context.fields)
            if (f.read_allowed && f.yields == VerifierValueType::SCALAR)
                fields.push_back(&f);
        if (fields.empty())
            return std::nullopt;
        const ContextField* f = fields[rng.below(fields.size())];
        auto it = ctx_vars.find(f->name);
        if (it != ctx_vars.end())
            return it->second;
        auto v = fresh_var();
        if (!v)
            return std::nullopt;
        ast.ctx_bindings.push_back(CtxBinding{*v, f->name});
        ctx_vars[f->name] = *v;
        scalar_vars.push_back(*v);
        return v;
    }

    std::optional<int> gen_scalar_call(int depth, std::vector<Stmt>& sink) {
        if (depth <= 0)
            return std::nullopt;
        const std::set<HelperId>& avail = cat.helpers_for(pt);
        std::vector<HelperId> cands;
        for (HelperId h : kScalarProducers)
            if (avail.count(h))
                cands.push_back(h);
        if (cands.empty())
            return std::nullopt;
        HelperId h = cands[rng.below(cands.size())];
        auto v = fresh_var();
        if (!v)
            return std::nullopt;
        CallStmt call{h, *v, {}};
        if (h == 27) // get_stackid(ctx, flags)
            call.args = {ArgExpr::ctx(), ArgExpr::lit(static_cast<std::int64_t>(rng.below(8)))};
        sink.push_back(Stmt{call});
        scalar_vars.push_back(*v);
        return v;
    }

    ArgExpr gen_anything(int depth, std::vector<Stmt>& pre) {
        switch (pick_strategy()) {
        case 1:
            if (auto v = ctx_scalar_var())
                return ArgExpr::var(*v);
            break;
        case 2:
            if (auto v = gen_scalar_call(depth, pre))
                return ArgExpr::var(*v);
            break;
        default:
            break;
        }
        return ArgExpr::lit(pick_literal(rng));
    }

    // Size argument bounded by a region of `region` bytes: either a literal
    // in range or a runtime value clamped by guards.
    ArgExpr gen_size(std::uint32_t region, int depth, std::vector<Stmt>& pre,
                     std::vector<Guard>& guards, int& pins) {
        int strat = pick_strategy();
        if (strat != 0 && pins < 3 && branch_budget >= 2) {
            std::optional<int> v =
                strat == 1 ? ctx_scalar_var() : gen_scalar_call(depth, pre);
            if (v) {
                guards.push_back(Guard{GuardKind::kUGe, *v, 1});
                guards.push_back(Guard{GuardKind::kULe, *v, region});
                ++pins;
                branch_budget -= 2;
                return ArgExpr::var(*v);
            }
        }
        return ArgExpr::lit(static_cast<std::int64_t>(rng.range(1, region)));
    }

    void gen_call_group(HelperId h, int depth, std::vector<Stmt>& sink) {
        const HelperProto* proto = cat.helper(h);
        if (!proto)
            return;
        std::vector<Stmt> pre;
        std::vector<Guard> guards;
        int pins = 0;
        CallStmt call{h, std::nullopt, {}};
        std::optional<std::uint32_t> cur_map;
        std::uint32_t pending_region = 0;
        bool pending = false;
        bool bailed = false;

        for (std::size_t i = 0; i < proto->args.size() && !bailed; ++i) {
            switch (proto->args[i]) {
            case ArgType::CONST_MAP_PTR: {
                auto types = cat.maps_for(pt, h);
                if (!types || types->empty()) {
                    bailed = true;
                    break;
                }
                cur_map = get_map(*types);
                call.args.push_back(ArgExpr::map(static_cast<int>(*cur_map)));
                break;
            }
            case ArgType::PTR_TO_MAP_KEY: {
                if (!cur_map) {
                    bailed = true;
                    break;
                }
                auto b = make_buf(ast.map_deps[*cur_map].key_size, pre);
                if (!b) {
                    bailed = true;
                    break;
                }
                call.args.push_back(ArgExpr::buf(*b));
                break;
            }
            case ArgType::PTR_TO_MAP_VALUE:
            case ArgType::PTR_TO_UNINIT_MAP_VALUE: {
                if (!cur_map) {
                    bailed = true;
                    break;
                }
                auto b = make_buf(ast.map_deps[*cur_map].value_size, pre);
                if (!b) {
                    bailed = true;
                    break;
                }
                call.args.push_back(ArgExpr::buf(*b));
                break;
            }
            case ArgType::PTR_TO_CTX:
                call.args.push_back(ArgExpr::ctx());
                break;
            case ArgType::PTR_TO_MEM:
            case ArgType::PTR_TO_UNINIT_MEM: {
                // Helper strategy: feed a (null-checked) map value in.
                if (depth > 0 && pins < 3 && branch_budget >= 1 && rng.chance(cfg.w_helper)) {
                    auto types = cat.maps_for(pt, 1);
                    if (types && !types->empty()) {
                        std::uint32_t ord = get_map(*types);
                        auto kb = make_buf(ast.map_deps[ord].key_size, pre);
                        auto v = kb ? fresh_var() : std::nullopt;
                        if (v) {
                            pre.push_back(Stmt{CallStmt{
                                1, *v,
                                {ArgExpr::map(static_cast<int>(ord)), ArgExpr::buf(*kb)}}});
                            guards.push_back(Guard{GuardKind::kNonNull, *v, 0});
                            ++pins;
                            --branch_budget;
                            pending_region = ast.map_deps[ord].value_size;
                            pending = true;
                            call.args.push_back(ArgExpr::var(*v));
                            break;
                        }
                    }
                }
                std::uint32_t size = static_cast<std::uint32_t>(rng.range(8, 64));
                auto b = make_buf(size, pre);
                if (!b) {
                    bailed = true;
                    break;
                }
                pending_region = size;
                pending = true;
                call.args.push_back(ArgExpr::buf(*b));
                break;
            }
            case ArgType::CONST_SIZE:
            case ArgType::CONST_SIZE_OR_ZERO:
                if (pending) {
                    call.args.push_back(gen_size(pending_region, depth, pre, guards, pins));
                    pending = false;
                } else {
                    // Allocation size (e.g. a ring buffer reservation): must
                    // be a verifier-time constant.
                    call.args.push_back(ArgExpr::lit(static_cast<std::int64_t>(rng.range(1, 128))));
                }
                break;
            case ArgType::PTR_TO_REF: {
                auto types = cat.maps_for(pt, 131);
                auto v = (types && !types->empty() && pins < 3 && branch_budget >= 1)
                             ? fresh_var()
                             : std::nullopt;
                if (!v) {
                    bailed = true;
                    break;
                }
                std::uint32_t ord = get_map(*types);
                pre.push_back(Stmt{CallStmt{
                    131, *v,
                    {ArgExpr::map(static_cast<int>(ord)),
                     ArgExpr::lit(static_cast<std::int64_t>(rng.range(1, 128))),
                     ArgExpr::lit(0)}}});
                guards.push_back(Guard{GuardKind::kNonNull, *v, 0});
                ++pins;
                --branch_budget;
                call.args.push_back(ArgExpr::var(*v));
                break;
            }
            case ArgType::ANYTHING:
                if (h == 12 && i == 2 && cur_map) {
                    // Tail-call keys deliberately overshoot the table so
                    // out-of-range keys occur at runtime.
                    std::uint64_t hi = 2ull * std::max(ast.map_deps[*cur_map].max_entries, 1u);
                    call.args.push_back(ArgExpr::lit(static_cast<std::int64_t>(rng.below(hi))));
                } else {
                    call.args.push_back(gen_anything(depth, pre));
                }
                break;
            }
        }

        // Keep whatever producer calls were already generated; they are
        // valid on their own even when the group dead-ends.
        for (auto& s : pre)
            sink.push_back(std::move(s));
        if (bailed)
            return;

        if (proto->ret != RetKind::VOID) {
            if (auto v = fresh_var()) {
                call.result_var = v;
                if (proto->ret == RetKind::SCALAR)
                    scalar_vars.push_back(*v);
            }
        }
        if (guards.empty())
            sink.push_back(Stmt{call});
        else
            sink.push_back(Stmt{BlockStmt{std::move(guards), {Stmt{call}}}});
    }

    ProgramAst run() {
        const std::set<HelperId>& avail = cat.helpers_for(pt);
        std::vector<HelperId> helpers(avail.begin(), avail.end());
        int ncalls = static_cast<int>(
            rng.range(cfg.min_calls, std::max(cfg.min_calls, cfg.max_calls)));
        for (int i = 0; i < ncalls; ++i)
            gen_call_group(helpers[rng.below(helpers.size())], cfg.max_depth, ast.stmts);
        if (!scalar_vars.empty() && rng.chance(0.5)) {
            ast.ret.is_var = true;
            ast.ret.var = scalar_vars[rng.below(scalar_vars.size())];
        } else {
            ast.ret.value = static_cast<std::int64_t>(rng.below(256));
        }
        return std::move(ast);
    }
};

// ---------------------------------------------------------------------------
// shared AST walking utilities
// ---------------------------------------------------------------------------

void walk_calls(std::vector<Stmt>& stmts,
                const std::function<void(std::vector<Stmt>&, std::size_t, CallStmt&)>& fn) {
    for (std::size_t i = 0; i < stmts.size(); ++i) {
        if (auto* call = std::get_if<CallStmt>(&stmts[i].node))
            fn(stmts, i, *call);
        else if (auto* blk = std::get_if<BlockStmt>(&stmts[i].node))
            walk_calls(blk->body, fn);
    }
}

struct IdScan {
    int max_var = -1;
    int max_buf = -1;
    std::map<int, std::uint32_t> buf_sizes;
    int frame = 0;

    void scan(const std::vector<Stmt>& stmts) {
        for (const auto& s : stmts) {
            if (const auto* let = std::get_if<LetStmt>(&s.node))
                note_var(let->var);
            else if (const auto* buf = std::get_if<BufStmt>(&s.node)) {
                if (!buf_sizes.count(buf->buf))
                    frame += aligned8(buf->size);
                max_buf = std::max(max_buf, buf->buf);
                buf_sizes[buf->buf] = buf->size;
            } else if (const auto* call = std::get_if<CallStmt>(&s.node)) {
                if (call->result_var)
                    note_var(*call->result_var);
                for (const auto& a : call->args)
                    if (a.kind == ArgKind::kVar)
                        note_var(a.index, /*counts=*/false);
            } else if (const auto* blk = std::get_if<BlockStmt>(&s.node)) {
                scan(blk->body);
            }
        }
    }

    void note_var(int v, bool counts = true) {
        if (counts && v > max_var)
            frame += 8 * (v - max_var); // conservative: ids are dense
        max_var = std::max(max_var, v);
        (void)counts;
    }
};

IdScan scan_ast(const ProgramAst& ast) {
    IdScan s;
    for (const auto& b : ast.ctx_bindings)
        s.note_var(b.var);
    s.scan(const_cast<std::vector<Stmt>&>(ast.stmts));
    return s;
}

const HelperProto* find_acquirer(const Catalog& cat, RefKind kind) {
    for (const auto& h : cat.helpers())
        if (h.acquires_ref == kind)
            return &h;
    return nullptr;
}

const HelperProto* find_releaser(const Catalog& cat, RefKind kind) {
    for (const auto& h : cat.helpers())
        if (h.releases_ref == kind)
            return &h;
    return nullptr;
}

bool release_for_var_in(const std::vector<Stmt>& stmts, int var, const Catalog& cat) {
    for (const auto& s : stmts) {
        if (const auto* call = std::get_if<CallStmt>(&s.node)) {
            const HelperProto* p = cat.helper(call->helper);
            if (p && p->releases_ref && !call->args.empty() &&
                call->args[0].kind == ArgKind::kVar && call->args[0].index == var)
                return true;
        } else if (const auto* blk = std::get_if<BlockStmt>(&s.node)) {
            if (release_for_var_in(blk->body, var, cat))
                return true;
        }
    }
    return false;
}

} // namespace

void gc_map_deps(ProgramAst& ast) {
    std::set<int> used;
    walk_calls(ast.stmts, [&](std::vector<Stmt>&, std::size_t, CallStmt& call) {
        for (const auto& a : call.args)
            if (a.kind == ArgKind::kMap)
                used.insert(a.index);
    });
    if (used.size() == ast.map_deps.size())
        return;
    std::map<int, int> remap;
    std::vector<MapSpecRequest> kept;
    for (int ord : used) {
        remap[ord] = static_cast<int>(kept.size());
        kept.push_back(ast.map_deps[static_cast<std::size_t>(ord)]);
    }
    ast.map_deps = std::move(kept);
    walk_calls(ast.stmts, [&](std::vector<Stmt>&, std::size_t, CallStmt& call) {
        for (auto& a : call.args)
            if (a.kind == ArgKind::kMap)
                a.index = remap.at(a.index);
    });
}

// ---------------------------------------------------------------------------
// fixup_references
// ---------------------------------------------------------------------------

void fixup_references(ProgramAst& ast, const Catalog& cat) {
    IdScan ids = scan_ast(ast);
    int next_var = ids.max_var + 1;

    // Every acquiring call needs a result variable so the release can name it.
    std::map<int, RefKind> acquired; // var -> kind
    walk_calls(ast.stmts, [&](std::vector<Stmt>&, std::size_t, CallStmt& call) {
        const HelperProto* p = cat.helper(call.helper);
        if (!p || !p->acquires_ref)
            return;
        if (!call.result_var)
            call.result_var = next_var++;
        acquired[*call.result_var] = *p->acquires_ref;
    });

    // Releases whose argument is not an acquired reference get a fresh
    // producer inserted just before them and the argument substituted.
    std::function<void(std::vector<Stmt>&)> fix_strays = [&](std::vector<Stmt>& stmts) {
        for (std::size_t i = 0; i < stmts.size(); ++i) {
            if (auto* blk = std::get_if<BlockStmt>(&stmts[i].node)) {
                fix_strays(blk->body);
                continue;
            }
            auto* call = std::get_if<CallStmt>(&stmts[i].node);
            if (!call)
                continue;
            const HelperProto* p = cat.helper(call->helper);
            if (!p || !p->releases_ref || call->args.empty())
                continue;
            const ArgExpr& arg = call->args[0];
            if (arg.kind == ArgKind::kVar && acquired.count(arg.index))
                continue;
            const HelperProto* producer = find_acquirer(cat, *p->releases_ref);
            if (!producer)
                continue;
            // Build the producer's arguments: first compatible map, a small
            // constant size, zero flags.
            std::uint32_t ord = 0;
            bool found = false;
            if (producer->compatible_map_types) {
                for (std::size_t m = 0; m < ast.map_deps.size() && !found; ++m)
                    if (producer->compatible_map_types->count(ast.map_deps[m].map_type)) {
                        ord = static_cast<std::uint32_t>(m);
                        found = true;
                    }
                if (!found) {
                    MapTypeId mt = *producer->compatible_map_types->begin();
                    const MapTypeSpec& cons = cat.map_attr_constraints(mt);
                    MapSpecRequest spec;
                    spec.map_type = mt;
                    spec.key_size = cons.key_size.fixed_set.empty() ? cons.key_size.min
                                                                    : cons.key_size.fixed_set[0];
                    spec.value_size = cons.value_size.fixed_set.empty()
                                          ? cons.value_size.min
                                          : cons.value_size.fixed_set[0];
                    spec.max_entries = cons.max_entries.forced_zero ? 0 : cons.max_entries.min;
                    if (cons.max_entries.power_of_two)
                        spec.max_entries = cons.max_entries.min;
                    ord = static_cast<std::uint32_t>(ast.map_deps.size());
                    ast.map_deps.push_back(spec);
                }
            }
            int v = next_var++;
            acquired[v] = *p->releases_ref;
            CallStmt produce{producer->id, v, {}};
            for (ArgType at : producer->args) {
                if (at == ArgType::CONST_MAP_PTR)
                    produce.args.push_back(ArgExpr::map(static_cast<int>(ord)));
                else if (at == ArgType::CONST_SIZE || at == ArgType::CONST_SIZE_OR_ZERO)
                    produce.args.push_back(ArgExpr::lit(16));
                else
                    produce.args.push_back(ArgExpr::lit(0));
            }
            CallStmt release = *call;
            release.args[0] = ArgExpr::var(v);
            BlockStmt guarded{{Guard{GuardKind::kNonNull, v, 0}}, {Stmt{release}}};
            stmts[i] = Stmt{produce};
            stmts.insert(stmts.begin() + static_cast<long>(i) + 1, Stmt{guarded});
            ++i;
        }
    };
    fix_strays(ast.stmts);

    // Acquires without a matching release: append the release at the end of
    // the first null-check block for the variable (i.e. after its last use),
    // or insert such a block right after the acquire.
    std::function<void(std::vector<Stmt>&)> balance = [&](std::vector<Stmt>& stmts) {
        for (std::size_t i = 0; i < stmts.size(); ++i) {
            if (auto* blk = std::get_if<BlockStmt>(&stmts[i].node)) {
                balance(blk->body);
                continue;
            }
            auto* call = std::get_if<CallStmt>(&stmts[i].node);
            if (!call)
                continue;
            const HelperProto* p = cat.helper(call->helper);
            if (!p || !p->acquires_ref || !call->result_var)
                continue;
            int v = *call->result_var;
            if (release_for_var_in(ast.stmts, v, cat))
                continue;
            const HelperProto* releaser = find_releaser(cat, *p->acquires_ref);
            if (!releaser)
                continue;
            CallStmt release{releaser->id, std::nullopt, {ArgExpr::var(v)}};
            for (std::size_t a = 1; a < releaser->args.size(); ++a)
                release.args.push_back(ArgExpr::lit(0));
            BlockStmt* scope = nullptr;
            for (std::size_t j = i + 1; j < stmts.size() && !scope; ++j) {
                if (auto* b = std::get_if<BlockStmt>(&stmts[j].node))
                    for (const auto& g : b->guards)
                        if (g.kind == GuardKind::kNonNull && g.var == v)
                            scope = b;
            }
            if (scope) {
                scope->body.push_back(Stmt{release});
            } else {
                BlockStmt guarded{{Guard{GuardKind::kNonNull, v, 0}}, {Stmt{release}}};
                stmts.insert(stmts.begin() + static_cast<long>(i) + 1, Stmt{guarded});
                ++i;
            }
        }
    };
    balance(ast.stmts);
}

ProgramAst strip_guards(const ProgramAst& ast) {
    ProgramAst out = ast;
    std::function<void(std::vector<Stmt>&)> strip = [&](std::vector<Stmt>& stmts) {
        for (auto& s : stmts)
            if (auto* blk = std::get_if<BlockStmt>(&s.node)) {
                blk->guards.clear();
                strip(blk->body);
            }
    };
    strip(out.stmts);
    return out;
}

// ---------------------------------------------------------------------------
// generate / mutate
// ---------------------------------------------------------------------------

ProgramAst generate_program(const GenConfig& cfg, const Catalog& cat,
                            std::optional<ProgramTypeId> pt) {
    Rng rng(cfg.seed);
    ProgramAst last;
    for (int attempt = 0; attempt < 5; ++attempt) {
        ProgramTypeId chosen =
            pt ? *pt : static_cast<ProgramTypeId>(rng.below(kNumProgramTypes));
        Gen gen(cat, cfg, rng, chosen);
        ProgramAst ast = gen.run();
        fixup_references(ast, cat);
        gc_map_deps(ast);
        last = ast;
        auto compiled = compile_ast(ast, cat);
        if (auto* cp = std::get_if<CompiledProgram>(&compiled))
            if (std::holds_alternative<VerifySummary>(
                    verify(cp->prog, cp->map_deps, ast.prog_type, cat)))
                return last;
    }
    return last;
}

ProgramAst mutate_program(const ProgramAst& in, Rng& rng, const Catalog& cat) {
    ProgramAst ast = in;
    IdScan ids = scan_ast(ast);
    int next_buf = ids.max_buf + 1;
    int frame = ids.frame;

    struct Site {
        std::vector<Stmt>* list;
        std::size_t idx;
        std::size_t arg;
    };
    std::vector<Site> sites;
    walk_calls(ast.stmts, [&](std::vector<Stmt>& list, std::size_t idx, CallStmt& call) {
        const HelperProto* p = cat.helper(call.helper);
        if (!p)
            return;
        for (std::size_t a = 0; a < call.args.size() && a < p->args.size(); ++a) {
            ArgType at = p->args[a];
            if (at == ArgType::PTR_TO_CTX || at == ArgType::PTR_TO_REF)
                continue; // structural arguments stay put
            sites.push_back(Site{&list, idx, a});
        }
    });
    if (sites.empty())
        return ast;

    auto buf_size = [&](int b) -> std::uint32_t {
        auto it = ids.buf_sizes.find(b);
        return it == ids.buf_sizes.end() ? 8u : it->second;
    };
    // Region extent behind a pointer argument, for sizing its size argument.
    auto region_of = [&](const CallStmt& call, std::size_t a) -> std::uint32_t {
        const ArgExpr& arg = call.args[a];
        if (arg.kind == ArgKind::kBuf)
            return buf_size(arg.index);
        if (arg.kind == ArgKind::kVar) {
            std::uint32_t size = 8;
            walk_calls(ast.stmts, [&](std::vector<Stmt>&, std::size_t, CallStmt& c) {
                if (c.result_var && *c.result_var == arg.index)
                    for (const auto& ca : c.args)
                        if (ca.kind == ArgKind::kMap &&
                            static_cast<std::size_t>(ca.index) < ast.map_deps.size())
                            size = ast.map_deps[static_cast<std::size_t>(ca.index)].value_size;
            });
            return size;
        }
        return 8;
    };
    // Upper bound a size argument can reach (literal value or guard bound).
    auto size_bound = [&](const std::vector<Stmt>& list, std::size_t idx,
                          const ArgExpr& arg) -> std::uint32_t {
        if (arg.kind == ArgKind::kLiteral)
            return static_cast<std::uint32_t>(std::max<std::int64_t>(arg.literal, 1));
        if (arg.kind == ArgKind::kVar) {
            if (const auto* blk = std::get_if<BlockStmt>(&list[idx].node)) {
                (void)blk;
            }
            // Guards live on the enclosing block; scan the whole tree.
            std::uint32_t bound = 8;
            std::function<void(const std::vector<Stmt>&)> scan = [&](const std::vector<Stmt>& ss) {
                for (const auto& s : ss)
                    if (const auto* b = std::get_if<BlockStmt>(&s.node)) {
                        for (const auto& g : b->guards)
                            if (g.kind == GuardKind::kULe && g.var == arg.index)
                                bound = std::max<std::uint32_t>(
                                    bound, static_cast<std::uint32_t>(g.bound));
                        scan(b->body);
                    }
            };
            scan(ast.stmts);
            return bound;
        }
        return 8;
    };

    for (std::size_t attempt = 0; attempt < 8; ++attempt) {
        Site site = sites[rng.below(sites.size())];
        auto* call = std::get_if<CallStmt>(&(*site.list)[site.idx].node);
        if (!call)
            continue;
        const HelperProto* p = cat.helper(call->helper);
        ArgType at = p->args[site.arg];
        bool mutated = false;
        switch (at) {
        case ArgType::ANYTHING: {
            if (call->helper == 12 && site.arg == 2) {
                std::uint32_t entries = 1;
                for (const auto& a : call->args)
                    if (a.kind == ArgKind::kMap &&
                        static_cast<std::size_t>(a.index) < ast.map_deps.size())
                        entries = std::max(
                            ast.map_deps[static_cast<std::size_t>(a.index)].max_entries, 1u);
                call->args[site.arg] = ArgExpr::lit(static_cast<std::int64_t>(
                    rng.below(2ull * entries)));
            } else {
                call->args[site.arg] = ArgExpr::lit(pick_literal(rng));
            }
            mutated = true;
            break;
        }
        case ArgType::CONST_SIZE:
        case ArgType::CONST_SIZE_OR_ZERO: {
            bool paired = site.arg > 0 && (p->args[site.arg - 1] == ArgType::PTR_TO_MEM ||
                                           p->args[site.arg - 1] == ArgType::PTR_TO_UNINIT_MEM);
            std::uint32_t hi = paired ? std::max(region_of(*call, site.arg - 1), 1u) : 128;
            call->args[site.arg] =
                ArgExpr::lit(static_cast<std::int64_t>(rng.range(1, hi)));
            mutated = true;
            break;
        }
        case ArgType::CONST_MAP_PTR: {
            const ArgExpr& old = call->args[site.arg];
            if (old.kind != ArgKind::kMap)
                break;
            MapSpecRequest spec = ast.map_deps[static_cast<std::size_t>(old.index)];
            spec.max_entries =
                sample_entries(cat.map_attr_constraints(spec.map_type).max_entries, rng);
            ast.map_deps.push_back(spec);
            call->args[site.arg] =
                ArgExpr::map(static_cast<int>(ast.map_deps.size() - 1));
            mutated = true;
            break;
        }
        case ArgType::PTR_TO_MEM:
        case ArgType::PTR_TO_UNINIT_MEM: {
            std::uint32_t need = 8;
            if (site.arg + 1 < call->args.size() &&
                (p->args[site.arg + 1] == ArgType::CONST_SIZE ||
                 p->args[site.arg + 1] == ArgType::CONST_SIZE_OR_ZERO))
                need = size_bound(*site.list, site.idx, call->args[site.arg + 1]);
            std::uint32_t size = need + static_cast<std::uint32_t>(rng.below(17));
            if (frame + aligned8(size) > kFrameBudget)
                break;
            frame += aligned8(size);
            int b = next_buf++;
            site.list->insert(site.list->begin() + static_cast<long>(site.idx),
                              Stmt{BufStmt{b, size}});
            call = std::get_if<CallStmt>(&(*site.list)[site.idx + 1].node);
            call->args[site.arg] = ArgExpr::buf(b);
            mutated = true;
            break;
        }
        case ArgType::PTR_TO_MAP_KEY:
        case ArgType::PTR_TO_MAP_VALUE:
        case ArgType::PTR_TO_UNINIT_MAP_VALUE: {
            std::uint32_t size = 8;
            for (const auto& a : call->args)
                if (a.kind == ArgKind::kMap &&
                    static_cast<std::size_t>(a.index) < ast.map_deps.size()) {
                    const MapSpecRequest& m = ast.map_deps[static_cast<std::size_t>(a.index)];
                    size = at == ArgType::PTR_TO_MAP_KEY ? m.key_size : m.value_size;
                }
            size = std::max(size, 1u);
            if (frame + aligned8(size) > kFrameBudget)
                break;
            frame += aligned8(size);
            int b = next_buf++;
            site.list->insert(site.list->begin() + static_cast<long>(site.idx),
                              Stmt{BufStmt{b, size}});
            call = std::get_if<CallStmt>(&(*site.list)[site.idx + 1].node);
            call->args[site.arg] = ArgExpr::buf(b);
            mutated = true;
            break;
        }
        default:
            break;
        }
        if (mutated)
            break;
    }

    fixup_references(ast, cat);
    gc_map_deps(ast);
    return ast;
}

} // namespace brf
