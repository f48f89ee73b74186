#pragma once
#include "brf/catalog.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace brf {

// Source-level program form: typed declarations plus guarded helper-call
// blocks. Lowering assigns every vN an 8-byte stack slot and every bN a
// stack buffer; mN names an entry of map_deps.
struct MapSpecRequest {
    MapTypeId map_type = MapTypeId::ARRAY;
    std::uint32_t key_size = 0;
    std::uint32_t value_size = 0;
    std::uint32_t max_entries = 0;
    std::uint32_t flags = 0;

    bool operator==(const MapSpecRequest&) const = default;
};

// Context fields are bound to variables once, at program start.
struct CtxBinding {
    int var = 0;
    std::string field;

    bool operator==(const CtxBinding&) const = default;
};

enum class ArgKind : std::uint8_t { kLiteral, kVar, kBuf, kMap, kCtx };

struct ArgExpr {
    ArgKind kind = ArgKind::kLiteral;
    int index = 0;          // var / buf / map ordinal
    std::int64_t literal = 0;

    static ArgExpr lit(std::int64_t v) { return {ArgKind::kLiteral, 0, v}; }
    static ArgExpr var(int i) { return {ArgKind::kVar, i, 0}; }
    static ArgExpr buf(int i) { return {ArgKind::kBuf, i, 0}; }
    static ArgExpr map(int i) { return {ArgKind::kMap, i, 0}; }
    static ArgExpr ctx() { return {ArgKind::kCtx, 0, 0}; }

    bool operator==(const ArgExpr&) const = default;
};

struct LetStmt {
    int var = 0;
    std::int64_t value = 0;

    bool operator==(const LetStmt&) const = default;
};

struct BufStmt {
    int buf = 0;
    std::uint32_t size = 0;

    bool operator==(const BufStmt&) const = default;
};

struct CallStmt {
    HelperId helper = 0;
    std::optional<int> result_var;
    std::vector<ArgExpr> args;

    bool operator==(const CallStmt&) const = default;
};

// The three guard kinds wrapped around unsafe helper arguments: null
// check, size upper bound, and zero-size exclusion.
enum class GuardKind : std::uint8_t { kNonNull, kULe, kUGe };

struct Guard {
    GuardKind kind = GuardKind::kNonNull;
    int var = 0;
    std::uint64_t bound = 0; // unused for kNonNull

    bool operator==(const Guard&) const = default;
};

struct Stmt;

// Body executes only when every guard holds; otherwise control skips to
// the end of the block.
struct BlockStmt {
    std::vector<Guard> guards;
    std::vector<Stmt> body;

    bool operator==(const BlockStmt&) const;
};

struct Stmt {
    std::variant<LetStmt, BufStmt, CallStmt, BlockStmt> node;

    bool operator==(const Stmt&) const = default;
};

struct RetExpr {
    bool is_var = false;
    int var = 0;
    std::int64_t value = 0;

    bool operator==(const RetExpr&) const = default;
};

struct ProgramAst {
    ProgramTypeId prog_type = ProgramTypeId::SOCKET_FILTER;
    std::vector<MapSpecRequest> map_deps;
    std::vector<CtxBinding> ctx_bindings;
    std::vector<Stmt> stmts;
    RetExpr ret;

    bool operator==(const ProgramAst&) const = default;
};

struct AstError {
    std::string message;
    int line = 0;
};

// Line-oriented corpus text form; parse(serialize(ast)) == ast. Helper
// calls are spelled by name, so both directions need the catalog.
std::string serialize_ast(const ProgramAst& ast, const Catalog& cat);
std::variant<ProgramAst, AstError> parse_ast(const std::string& text, const Catalog& cat);

} // namespace brf
