#pragma once
#include "brf/ast.hpp"
#include "brf/catalog.hpp"
#include "brf/rng.hpp"

#include <optional>

namespace brf {

struct GenConfig {
    std::uint64_t seed = 1;
    // Recursion depth for producing an argument via another helper call.
    int max_depth = 3;
    // Number of top-level helper-call groups per program.
    int min_calls = 4;
    int max_calls = 10;
    // Strategy weights for argument generation: direct value, context
    // field access, helper-call result.
    double w_direct = 0.4;
    double w_ctx = 0.3;
    double w_helper = 0.3;
};

// Deterministic for fixed (cfg.seed, catalog). Picks a random program type
// unless one is given; every emitted helper is available under that type
// and every map spec satisfies the catalog constraints.
ProgramAst generate_program(const GenConfig& cfg, const Catalog& cat,
                            std::optional<ProgramTypeId> pt = std::nullopt);

// Regenerates exactly one helper-call argument subtree, re-runs reference
// fix-up, and drops map specs that are no longer referenced.
ProgramAst mutate_program(const ProgramAst& ast, Rng& rng, const Catalog& cat);

// Inserts a matching release after the last use of every acquired
// reference (inside its null-check scope) and a producing call for any
// release whose argument is not an acquired reference. Idempotent.
void fixup_references(ProgramAst& ast, const Catalog& cat);

// Removes every guard predicate, keeping block bodies. For measuring that
// guards are load-bearing.
ProgramAst strip_guards(const ProgramAst& ast);

// Drops map specs with no remaining reference and remaps the ordinals in
// every map argument.
void gc_map_deps(ProgramAst& ast);

} // namespace brf
