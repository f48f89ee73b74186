#include "brf/ast.hpp"

#include <fmt/format.h>

#include <cctype>
#include <set>
#include <sstream>

namespace brf {

bool BlockStmt::operator==(const BlockStmt& o) const {
    return guards == o.guards && body == o.body;
}

namespace {

std::string arg_text(const ArgExpr& a) {
    switch (a.kind) {
    case ArgKind::kLiteral: return fmt::format("{}", a.literal);
    case ArgKind::kVar: return fmt::format("v{}", a.index);
    case ArgKind::kBuf: return fmt::format("b{}", a.index);
    case ArgKind::kMap: return fmt::format("m{}", a.index);
    case ArgKind::kCtx: return "ctx";
    }
    return "?";
}

std::string guard_text(const Guard& g) {
    switch (g.kind) {
    case GuardKind::kNonNull: return fmt::format("v{}!=null", g.var);
    case GuardKind::kULe: return fmt::format("v{}<={}", g.var, g.bound);
    case GuardKind::kUGe: return fmt::format("v{}>={}", g.var, g.bound);
    }
    return "?";
}

void write_stmt(std::string& out, const Stmt& stmt, const Catalog& cat, int indent) {
    std::string pad(static_cast<std::size_t>(indent) * 2, ' ');
    if (const auto* let = std::get_if<LetStmt>(&stmt.node)) {
        out += fmt::format("{}let v{} = {}\n", pad, let->var, let->value);
    } else if (const auto* buf = std::get_if<BufStmt>(&stmt.node)) {
        out += fmt::format("{}buf b{} {}\n", pad, buf->buf, buf->size);
    } else if (const auto* call = std::get_if<CallStmt>(&stmt.node)) {
        const HelperProto* proto = cat.helper(call->helper);
        std::string name = proto ? proto->name : fmt::format("helper_{}", call->helper);
        out += pad + "call ";
        if (call->result_var)
            out += fmt::format("v{} = ", *call->result_var);
        out += name;
        for (const auto& a : call->args)
            out += " " + arg_text(a);
        out += "\n";
    } else if (const auto* blk = std::get_if<BlockStmt>(&stmt.node)) {
        out += pad + "block";
        for (const auto& g : blk->guards)
            out += " " + guard_text(g);
        out += "\n";
        for (const auto& inner : blk->body)
            write_stmt(out, inner, cat, indent + 1);
        out += pad + "end\n";
    }
}

struct AstParser {
    const Catalog& cat;
    AstError error{"", 0};
    bool failed = false;

    std::set<int> vars, bufs;
    std::set<std::string> bound_fields;
    int num_maps = 0;

    explicit AstParser(const Catalog& c) : cat(c) {}

    bool fail(int line, const std::string& msg) {
        if (!failed)
            error = AstError{msg, line};
        failed = true;
        return false;
    }

    static std::vector<std::string> tokenize(const std::string& line) {
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

    bool parse_i64(const std::string& s, std::int64_t& out, int line) {
        try {
            std::size_t pos = 0;
            out = std::stoll(s, &pos, 0);
            if (pos != s.size())
                return fail(line, "bad number: " + s);
            return true;
        } catch (...) {
            return fail(line, "bad number: " + s);
        }
    }

    bool parse_u32(const std::string& s, std::uint32_t& out, int line) {
        std::int64_t v;
        if (!parse_i64(s, v, line))
            return false;
        if (v < 0 || v > 0xffffffffLL)
            return fail(line, "number out of range: " + s);
        out = static_cast<std::uint32_t>(v);
        return true;
    }

    // Named index like v3 / b0 / m1.
    bool parse_named(const std::string& s, char prefix, int& out, int line) {
        if (s.size() < 2 || s[0] != prefix || !isdigit(static_cast<unsigned char>(s[1])))
            return fail(line, fmt::format("expected {}N, got: {}", prefix, s));
        std::int64_t v;
        if (!parse_i64(s.substr(1), v, line))
            return false;
        out = static_cast<int>(v);
        return true;
    }

    bool define_var(int v, int line) {
        if (!vars.insert(v).second)
            return fail(line, fmt::format("v{} defined twice", v));
        return true;
    }

    bool check_var(int v, int line) {
        if (!vars.count(v))
            return fail(line, fmt::format("v{} used before definition", v));
        return true;
    }

    bool parse_arg(const std::string& s, ArgExpr& out, int line) {
        if (s == "ctx") {
            out = ArgExpr::ctx();
            return true;
        }
        int idx;
        if (s[0] == 'v') {
            if (!parse_named(s, 'v', idx, line) || !check_var(idx, line))
                return false;
            out = ArgExpr::var(idx);
            return true;
        }
        if (s[0] == 'b') {
            if (!parse_named(s, 'b', idx, line))
                return false;
            if (!bufs.count(idx))
                return fail(line, fmt::format("b{} used before definition", idx));
            out = ArgExpr::buf(idx);
            return true;
        }
        if (s[0] == 'm') {
            if (!parse_named(s, 'm', idx, line))
                return false;
            if (idx < 0 || idx >= num_maps)
                return fail(line, fmt::format("m{} not declared", idx));
            out = ArgExpr::map(idx);
            return true;
        }
        std::int64_t v;
        if (!parse_i64(s, v, line))
            return false;
        out = ArgExpr::lit(v);
        return true;
    }

    bool parse_guard(const std::string& s, Guard& out, int line) {
        auto take = [&](const char* op, GuardKind kind) -> bool {
            auto pos = s.find(op);
            if (pos == std::string::npos)
                return false;
            out.kind = kind;
            int v;
            if (!parse_named(s.substr(0, pos), 'v', v, line) || !check_var(v, line))
                return false;
            out.var = v;
            std::string rhs = s.substr(pos + 2);
            if (kind == GuardKind::kNonNull)
                return rhs == "null" || fail(line, "null comparison must be against null");
            std::int64_t b;
            if (!parse_i64(rhs, b, line))
                return false;
            out.bound = static_cast<std::uint64_t>(b);
            return true;
        };
        if (s.find("!=") != std::string::npos)
            return take("!=", GuardKind::kNonNull);
        if (s.find("<=") != std::string::npos)
            return take("<=", GuardKind::kULe);
        if (s.find(">=") != std::string::npos)
            return take(">=", GuardKind::kUGe);
        return fail(line, "bad guard: " + s);
    }

    bool parse_call(const std::vector<std::string>& t, CallStmt& out, int line) {
        std::size_t i = 1;
        if (i + 1 < t.size() && t[i + 1] == "=") {
            int v;
            if (!parse_named(t[i], 'v', v, line))
                return false;
            out.result_var = v;
            i += 2;
        }
        if (i >= t.size())
            return fail(line, "call needs a helper name");
        const HelperProto* proto = cat.helper_by_name(t[i]);
        if (!proto)
            return fail(line, "unknown helper: " + t[i]);
        out.helper = proto->id;
        ++i;
        for (; i < t.size(); ++i) {
            ArgExpr a;
            if (!parse_arg(t[i], a, line))
                return false;
            out.args.push_back(a);
        }
        if (out.args.size() != proto->args.size())
            return fail(line, fmt::format("{} takes {} arguments, got {}", proto->name,
                                          proto->args.size(), out.args.size()));
        // Result vars are definitions; register after args so a call can't
        // consume its own result.
        if (out.result_var && !define_var(*out.result_var, line))
            return false;
        return true;
    }
};

} // namespace

std::string serialize_ast(const ProgramAst& ast, const Catalog& cat) {
    std::string out = fmt::format("prog {}\n", to_string(ast.prog_type));
    for (std::size_t i = 0; i < ast.map_deps.size(); ++i) {
        const auto& m = ast.map_deps[i];
        out += fmt::format("map m{} {} key {} value {} entries {} flags {:#x}\n", i,
                           to_string(m.map_type), m.key_size, m.value_size, m.max_entries,
                           m.flags);
    }
    for (const auto& b : ast.ctx_bindings)
        out += fmt::format("bind v{} ctx.{}\n", b.var, b.field);
    for (const auto& s : ast.stmts)
        write_stmt(out, s, cat, 0);
    if (ast.ret.is_var)
        out += fmt::format("ret v{}\n", ast.ret.var);
    else
        out += fmt::format("ret {}\n", ast.ret.value);
    return out;
}

std::variant<ProgramAst, AstError> parse_ast(const std::string& text, const Catalog& cat) {
    AstParser p(cat);
    ProgramAst ast;
    std::istringstream stream(text);
    std::string line;
    int lineno = 0;
    bool saw_prog = false;
    bool saw_ret = false;
    // Innermost-last stack of open blocks; stmts go to the top target.
    std::vector<BlockStmt*> open_blocks;
    auto target = [&]() -> std::vector<Stmt>& {
        return open_blocks.empty() ? ast.stmts : open_blocks.back()->body;
    };
    while (std::getline(stream, line)) {
        ++lineno;
        auto t = AstParser::tokenize(line);
        if (t.empty())
            continue;
        if (!saw_prog) {
            if (t.size() != 2 || t[0] != "prog")
                return AstError{"expected 'prog <type>' header", lineno};
            auto pt = program_type_from_string(t[1]);
            if (!pt)
                return AstError{"unknown program type: " + t[1], lineno};
            ast.prog_type = *pt;
            saw_prog = true;
            continue;
        }
        if (saw_ret)
            return AstError{"statements after ret", lineno};
        if (t[0] == "map") {
            if (t.size() != 11 || t[3] != "key" || t[5] != "value" || t[7] != "entries" ||
                t[9] != "flags")
                return AstError{"map mN TYPE key K value V entries E flags F", lineno};
            int ord;
            if (!p.parse_named(t[1], 'm', ord, lineno))
                return p.error;
            if (ord != p.num_maps)
                return AstError{fmt::format("map ordinals must be dense, expected m{}", p.num_maps),
                                lineno};
            auto mt = map_type_from_string(t[2]);
            if (!mt)
                return AstError{"unknown map type: " + t[2], lineno};
            MapSpecRequest m;
            m.map_type = *mt;
            if (!p.parse_u32(t[4], m.key_size, lineno) || !p.parse_u32(t[6], m.value_size, lineno) ||
                !p.parse_u32(t[8], m.max_entries, lineno) || !p.parse_u32(t[10], m.flags, lineno))
                return p.error;
            ast.map_deps.push_back(m);
            ++p.num_maps;
        } else if (t[0] == "bind") {
            if (t.size() != 3 || t[2].rfind("ctx.", 0) != 0)
                return AstError{"bind vN ctx.FIELD", lineno};
            if (!ast.stmts.empty() || !open_blocks.empty())
                return AstError{"ctx bindings must precede statements", lineno};
            CtxBinding b;
            if (!p.parse_named(t[1], 'v', b.var, lineno) || !p.define_var(b.var, lineno))
                return p.error;
            b.field = t[2].substr(4);
            if (!p.bound_fields.insert(b.field).second)
                return AstError{"context field bound twice: " + b.field, lineno};
            ast.ctx_bindings.push_back(b);
        } else if (t[0] == "let") {
            if (t.size() != 4 || t[2] != "=")
                return AstError{"let vN = VALUE", lineno};
            LetStmt s;
            if (!p.parse_named(t[1], 'v', s.var, lineno) || !p.define_var(s.var, lineno) ||
                !p.parse_i64(t[3], s.value, lineno))
                return p.error;
            target().push_back(Stmt{s});
        } else if (t[0] == "buf") {
            if (t.size() != 3)
                return AstError{"buf bN SIZE", lineno};
            BufStmt s;
            if (!p.parse_named(t[1], 'b', s.buf, lineno) || !p.parse_u32(t[2], s.size, lineno))
                return p.error;
            if (s.size == 0 || s.size > 512)
                return AstError{"buffer size must be in [1,512]", lineno};
            if (!p.bufs.insert(s.buf).second)
                return AstError{fmt::format("b{} defined twice", s.buf), lineno};
            target().push_back(Stmt{s});
        } else if (t[0] == "call") {
            CallStmt s;
            if (!p.parse_call(t, s, lineno))
                return p.error;
            target().push_back(Stmt{s});
        } else if (t[0] == "block") {
            BlockStmt s;
            for (std::size_t i = 1; i < t.size(); ++i) {
                Guard g;
                if (!p.parse_guard(t[i], g, lineno))
                    return p.error;
                s.guards.push_back(g);
            }
            target().push_back(Stmt{std::move(s)});
            open_blocks.push_back(std::get_if<BlockStmt>(&target().back().node));
        } else if (t[0] == "end") {
            if (open_blocks.empty())
                return AstError{"end without open block", lineno};
            open_blocks.pop_back();
        } else if (t[0] == "ret") {
            if (t.size() != 2)
                return AstError{"ret VALUE|vN", lineno};
            if (!open_blocks.empty())
                return AstError{"ret inside block", lineno};
            if (t[1][0] == 'v' && t[1].size() > 1 &&
                isdigit(static_cast<unsigned char>(t[1][1]))) {
                ast.ret.is_var = true;
                if (!p.parse_named(t[1], 'v', ast.ret.var, lineno) ||
                    !p.check_var(ast.ret.var, lineno))
                    return p.error;
            } else if (!p.parse_i64(t[1], ast.ret.value, lineno)) {
                return p.error;
            }
            saw_ret = true;
        } else {
            return AstError{"unknown statement: " + t[0], lineno};
        }
    }
    if (!saw_prog)
        return AstError{"empty program text", lineno};
    if (!open_blocks.empty())
        return AstError{"unterminated block", lineno};
    if (!saw_ret)
        return AstError{"missing ret", lineno};
    return ast;
}

} // namespace brf
