#pragma once

// Line-oriented parser for .apc ODE programs.
//
//   system NAME
//   param NAME = const-expr
//   var NAME order N
//   eq NAME'' = expr
//   init NAME' = const-expr
//   table NAME = (x1, y1) (x2, y2) ...
//   time T_END
//   output NAME[, NAME'...]
//   bound NAME' = const-expr
//
// `#` starts a comment. Expressions use + - * with the usual precedence, unary
// minus, parentheses and lut(TABLE, expr). sin/cos/exp are only allowed in
// constant expressions.

#include "apc/dsl/ast.hpp"
#include "apc/format.hpp"

#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace apc::dsl {

enum class Tok { Ident, Number, Prime, Equals, Comma, LParen, RParen, Plus, Minus, Star, Slash, Newline, End, Invalid };

struct Token {
    Tok kind = Tok::End;
    std::string_view text;
    SourceLoc loc;
    double number = 0.0;
};

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    Token next() {
        skip_blanks();
        Token t;
        t.loc = {line_, col_};
        if (pos_ >= src_.size()) {
            t.kind = Tok::End;
            return t;
        }
        const char c = src_[pos_];
        const std::size_t start = pos_;
        if (c == '\n') {
            advance();
            t.kind = Tok::Newline;
        } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            while (pos_ < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
                advance();
            t.kind = Tok::Ident;
        } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                   (c == '.' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
            lex_number(t);
        } else {
            advance();
            switch (c) {
            case '\'': t.kind = Tok::Prime; break;
            case '=': t.kind = Tok::Equals; break;
            case ',': t.kind = Tok::Comma; break;
            case '(': t.kind = Tok::LParen; break;
            case ')': t.kind = Tok::RParen; break;
            case '+': t.kind = Tok::Plus; break;
            case '-': t.kind = Tok::Minus; break;
            case '*': t.kind = Tok::Star; break;
            case '/': t.kind = Tok::Slash; break;
            default: t.kind = Tok::Invalid; break;
            }
        }
        if (t.kind != Tok::Number) t.text = src_.substr(start, pos_ - start);
        return t;
    }

private:
    void advance() {
        if (src_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }

    void skip_blanks() {
        while (pos_ < src_.size()) {
            char c = src_[pos_];
            if (c == ' ' || c == '\t' || c == '\r') {
                advance();
            } else if (c == '#') {
                while (pos_ < src_.size() && src_[pos_] != '\n') advance();
            } else {
                break;
            }
        }
    }

    void lex_number(Token& t) {
        const std::size_t start = pos_;
        auto digits = [&] {
            while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
        };
        digits();
        if (pos_ < src_.size() && src_[pos_] == '.') {
            advance();
            digits();
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t save = pos_;
            int save_col = col_;
            advance();
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) advance();
            if (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                digits();
            } else {
                pos_ = save;
                col_ = save_col;
            }
        }
        t.text = src_.substr(start, pos_ - start);
        auto v = parse_number(t.text);
        t.kind = v ? Tok::Number : Tok::Invalid;
        t.number = v.value_or(0.0);
    }

    std::string_view src_;
    std::size_t pos_ = 0;
    int line_ = 1;
    int col_ = 1;
};

struct ParseResult {
    std::optional<Program> program;
    std::vector<Diagnostic> diagnostics;
    [[nodiscard]] bool ok() const { return program.has_value(); }
};

namespace detail {

enum class ExprContext { Constant, Runtime };

class Parser {
public:
    explicit Parser(std::string_view src) : lexer_(src) { bump(); }

    ParseResult run() {
        Program prog;
        bool have_system = false;
        while (tok_.kind != Tok::End) {
            if (tok_.kind == Tok::Newline) {
                bump();
                continue;
            }
            const SourceLoc loc = tok_.loc;
            try {
                Statement st = statement();
                st.loc = loc;
                const bool is_system = std::holds_alternative<SystemStmt>(st.node);
                if (have_system && is_system) fail(loc, "duplicate system header");
                if (!have_system) {
                    have_system = true; // report a missing header once
                    if (!is_system) fail(loc, "missing system header");
                }
                if (tok_.kind != Tok::Newline && tok_.kind != Tok::End) fail(tok_.loc, "unexpected '" + spelling() + "' after statement");
                prog.statements.push_back(std::move(st));
            } catch (const Failure&) {
                while (tok_.kind != Tok::Newline && tok_.kind != Tok::End) bump();
            }
        }
        if (!have_system && diags_.empty()) diags_.push_back({{1, 1}, "missing system header"});
        ParseResult r;
        r.diagnostics = std::move(diags_);
        if (r.diagnostics.empty()) r.program = std::move(prog);
        return r;
    }

private:
    struct Failure {};

    [[noreturn]] void fail(SourceLoc loc, std::string msg) {
        diags_.push_back({loc, std::move(msg)});
        throw Failure{};
    }

    void bump() { tok_ = lexer_.next(); }

    std::string spelling() const {
        switch (tok_.kind) {
        case Tok::Newline: return "end of line";
        case Tok::End: return "end of input";
        default: return std::string(tok_.text);
        }
    }

    void expect(Tok kind, std::string_view what) {
        if (tok_.kind != kind) unexpected(what);
        bump();
    }

    [[noreturn]] void unexpected(std::string_view expected_what) {
        if (tok_.kind == Tok::Slash) fail(tok_.loc, "division not supported");
        if (tok_.kind == Tok::Invalid) fail(tok_.loc, "unexpected character '" + std::string(tok_.text) + "'");
        fail(tok_.loc, "expected " + std::string(expected_what) + ", found '" + spelling() + "'");
    }

    std::string ident(std::string_view what) {
        if (tok_.kind != Tok::Ident) unexpected(what);
        std::string s(tok_.text);
        bump();
        return s;
    }

    int primes() {
        int n = 0;
        while (tok_.kind == Tok::Prime) {
            ++n;
            bump();
        }
        return n;
    }

    Statement statement() {
        if (tok_.kind != Tok::Ident) unexpected("a statement keyword");
        const std::string kw(tok_.text);
        const SourceLoc kw_loc = tok_.loc;
        bump();
        if (kw == "system") return {SystemStmt{ident("system name")}, kw_loc};
        if (kw == "param") {
            auto name = ident("parameter name");
            expect(Tok::Equals, "'='");
            return {ParamStmt{std::move(name), expr(ExprContext::Constant)}, kw_loc};
        }
        if (kw == "var") {
            auto name = ident("variable name");
            if (tok_.kind != Tok::Ident || tok_.text != "order") unexpected("'order'");
            bump();
            if (tok_.kind != Tok::Number) unexpected("derivative order");
            double v = tok_.number;
            if (v != static_cast<int>(v) || v < 0 || v > 64) fail(tok_.loc, "order must be a non-negative integer");
            bump();
            return {VarStmt{std::move(name), static_cast<int>(v)}, kw_loc};
        }
        if (kw == "eq") {
            auto name = ident("variable name");
            int d = primes();
            expect(Tok::Equals, "'='");
            return {EqStmt{std::move(name), d, expr(ExprContext::Runtime)}, kw_loc};
        }
        if (kw == "init" || kw == "bound") {
            auto name = ident("variable name");
            int d = primes();
            expect(Tok::Equals, "'='");
            auto value = expr(ExprContext::Constant);
            if (kw == "init") return {InitStmt{std::move(name), d, std::move(value)}, kw_loc};
            return {BoundStmt{std::move(name), d, std::move(value)}, kw_loc};
        }
        if (kw == "table") {
            auto name = ident("table name");
            expect(Tok::Equals, "'='");
            TableStmt t{std::move(name), {}};
            do {
                expect(Tok::LParen, "'('");
                double x = signed_number();
                expect(Tok::Comma, "','");
                double y = signed_number();
                expect(Tok::RParen, "')'");
                t.points.push_back({x, y});
            } while (tok_.kind == Tok::LParen);
            return {std::move(t), kw_loc};
        }
        if (kw == "time") return {TimeStmt{expr(ExprContext::Constant)}, kw_loc};
        if (kw == "output") {
            OutputStmt out;
            do {
                if (!out.signals.empty()) bump();
                auto name = ident("signal name");
                out.signals.push_back({std::move(name), primes()});
            } while (tok_.kind == Tok::Comma);
            return {std::move(out), kw_loc};
        }
        fail(kw_loc, "unknown statement '" + kw + "'");
    }

    double signed_number() {
        bool neg = false;
        if (tok_.kind == Tok::Minus) {
            neg = true;
            bump();
        }
        if (tok_.kind != Tok::Number) unexpected("a number");
        double v = tok_.number;
        bump();
        return neg ? -v : v;
    }

    ExprPtr expr(ExprContext ctx) {
        auto lhs = term(ctx);
        while (tok_.kind == Tok::Plus || tok_.kind == Tok::Minus) {
            auto op = tok_.kind == Tok::Plus ? BinaryOp::Add : BinaryOp::Sub;
            auto loc = tok_.loc;
            bump();
            lhs = make_binary(op, std::move(lhs), term(ctx), loc);
        }
        return lhs;
    }

    ExprPtr term(ExprContext ctx) {
        auto lhs = unary(ctx);
        for (;;) {
            if (tok_.kind == Tok::Slash) fail(tok_.loc, "division not supported");
            if (tok_.kind != Tok::Star) break;
            auto loc = tok_.loc;
            bump();
            lhs = make_binary(BinaryOp::Mul, std::move(lhs), unary(ctx), loc);
        }
        return lhs;
    }

    ExprPtr unary(ExprContext ctx) {
        if (tok_.kind == Tok::Minus) {
            auto loc = tok_.loc;
            bump();
            return make_negate(unary(ctx), loc);
        }
        return primary(ctx);
    }

    ExprPtr primary(ExprContext ctx) {
        const auto loc = tok_.loc;
        if (tok_.kind == Tok::Number) {
            double v = tok_.number;
            bump();
            return make_number(v, loc);
        }
        if (tok_.kind == Tok::LParen) {
            bump();
            auto e = expr(ctx);
            expect(Tok::RParen, "')'");
            return e;
        }
        if (tok_.kind == Tok::Ident) {
            std::string name(tok_.text);
            bump();
            if (tok_.kind == Tok::LParen) return call(std::move(name), loc, ctx);
            int d = primes();
            return make_name(std::move(name), d, loc);
        }
        unexpected("an expression");
    }

    ExprPtr call(std::string fn, SourceLoc loc, ExprContext ctx) {
        const bool constant_fn = fn == "sin" || fn == "cos" || fn == "exp";
        if (ctx == ExprContext::Runtime && constant_fn)
            fail(loc, "function '" + fn + "' is not available at runtime; use a lut table");
        if (ctx == ExprContext::Constant && fn == "lut") fail(loc, "lut is not allowed in a constant expression");
        if (!constant_fn && fn != "lut") fail(loc, "unknown function '" + fn + "'");
        bump(); // '('
        std::vector<ExprPtr> args;
        if (tok_.kind != Tok::RParen) {
            args.push_back(expr(ctx));
            while (tok_.kind == Tok::Comma) {
                bump();
                args.push_back(expr(ctx));
            }
        }
        expect(Tok::RParen, "')'");
        const std::size_t want = fn == "lut" ? 2 : 1;
        if (args.size() != want)
            fail(loc, "'" + fn + "' takes " + std::to_string(want) + " argument" + (want == 1 ? "" : "s"));
        if (fn == "lut") {
            const auto* table = std::get_if<Name>(&args[0]->node);
            if (!table || table->derivative != 0) fail(args[0]->loc, "first argument of lut must be a table name");
        }
        return make_call(std::move(fn), std::move(args), loc);
    }

    Lexer lexer_;
    Token tok_;
    std::vector<Diagnostic> diags_;
};

} // namespace detail

inline ParseResult parse(std::string_view source) { return detail::Parser(source).run(); }

} // namespace apc::dsl
