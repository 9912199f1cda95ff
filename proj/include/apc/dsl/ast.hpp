#pragma once

#include "apc/machine.hpp"

#include <memory>
#include <string>
#include <variant>
#include <vector>

namespace apc::dsl {

struct SourceLoc {
    int line = 1;
    int column = 1;
};

struct Diagnostic {
    SourceLoc loc;
    std::string message;

    [[nodiscard]] std::string format(std::string_view file) const {
        return std::string(file) + ":" + std::to_string(loc.line) + ":" + std::to_string(loc.column) + ": " + message;
    }
};

// ---------------------------------------------------------------------------
// Expressions. Trees are immutable and shared.

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Number {
    double value = 0.0;
};
/// A parameter, table, variable or derivative reference; `derivative` counts apostrophes.
struct Name {
    std::string name;
    int derivative = 0;
};
struct Negate {
    ExprPtr operand;
};
enum class BinaryOp { Add, Sub, Mul };
struct Binary {
    BinaryOp op;
    ExprPtr lhs;
    ExprPtr rhs;
};
struct Call {
    std::string function;
    std::vector<ExprPtr> args;
};

struct Expr {
    std::variant<Number, Name, Negate, Binary, Call> node;
    SourceLoc loc;
};

inline ExprPtr make_number(double v, SourceLoc loc = {}) { return std::make_shared<const Expr>(Expr{Number{v}, loc}); }
inline ExprPtr make_name(std::string n, int derivative = 0, SourceLoc loc = {}) {
    return std::make_shared<const Expr>(Expr{Name{std::move(n), derivative}, loc});
}
inline ExprPtr make_negate(ExprPtr e, SourceLoc loc = {}) { return std::make_shared<const Expr>(Expr{Negate{std::move(e)}, loc}); }
inline ExprPtr make_binary(BinaryOp op, ExprPtr l, ExprPtr r, SourceLoc loc = {}) {
    return std::make_shared<const Expr>(Expr{Binary{op, std::move(l), std::move(r)}, loc});
}
inline ExprPtr make_call(std::string f, std::vector<ExprPtr> args, SourceLoc loc = {}) {
    return std::make_shared<const Expr>(Expr{Call{std::move(f), std::move(args)}, loc});
}
inline ExprPtr make_mul(ExprPtr l, ExprPtr r) { return make_binary(BinaryOp::Mul, std::move(l), std::move(r)); }

/// Structural equality, ignoring source locations.
inline bool same_expr(const Expr& a, const Expr& b);

inline bool same_expr(const ExprPtr& a, const ExprPtr& b) {
    if (!a || !b) return a == b;
    return same_expr(*a, *b);
}

inline bool same_expr(const Expr& a, const Expr& b) {
    if (a.node.index() != b.node.index()) return false;
    return std::visit(
        [&](const auto& x) -> bool {
            using T = std::decay_t<decltype(x)>;
            const auto& y = std::get<T>(b.node);
            if constexpr (std::is_same_v<T, Number>) return x.value == y.value;
            else if constexpr (std::is_same_v<T, Name>) return x.name == y.name && x.derivative == y.derivative;
            else if constexpr (std::is_same_v<T, Negate>) return same_expr(x.operand, y.operand);
            else if constexpr (std::is_same_v<T, Binary>)
                return x.op == y.op && same_expr(x.lhs, y.lhs) && same_expr(x.rhs, y.rhs);
            else {
                if (x.function != y.function || x.args.size() != y.args.size()) return false;
                for (std::size_t i = 0; i < x.args.size(); ++i)
                    if (!same_expr(x.args[i], y.args[i])) return false;
                return true;
            }
        },
        a.node);
}

// ---------------------------------------------------------------------------
// Statements

struct SystemStmt {
    std::string name;
};
struct ParamStmt {
    std::string name;
    ExprPtr value;
};
struct VarStmt {
    std::string name;
    int order = 0;
};
struct EqStmt {
    std::string name;
    int derivative = 0;
    ExprPtr rhs;
};
struct InitStmt {
    std::string name;
    int derivative = 0;
    ExprPtr value;
};
struct TableStmt {
    std::string name;
    std::vector<Breakpoint> points;
};
struct TimeStmt {
    ExprPtr value;
};
struct OutputStmt {
    std::vector<Name> signals;
};
/// Amplitude annotation for the autoscaler: `bound y' = 5`.
struct BoundStmt {
    std::string name;
    int derivative = 0;
    ExprPtr value;
};

struct Statement {
    std::variant<SystemStmt, ParamStmt, VarStmt, EqStmt, InitStmt, TableStmt, TimeStmt, OutputStmt, BoundStmt> node;
    SourceLoc loc;
};

struct Program {
    std::vector<Statement> statements;
};

inline bool same_structure(const Statement& a, const Statement& b) {
    if (a.node.index() != b.node.index()) return false;
    return std::visit(
        [&](const auto& x) -> bool {
            using T = std::decay_t<decltype(x)>;
            const auto& y = std::get<T>(b.node);
            if constexpr (std::is_same_v<T, SystemStmt>) return x.name == y.name;
            else if constexpr (std::is_same_v<T, ParamStmt>) return x.name == y.name && same_expr(x.value, y.value);
            else if constexpr (std::is_same_v<T, VarStmt>) return x.name == y.name && x.order == y.order;
            else if constexpr (std::is_same_v<T, EqStmt>)
                return x.name == y.name && x.derivative == y.derivative && same_expr(x.rhs, y.rhs);
            else if constexpr (std::is_same_v<T, InitStmt> || std::is_same_v<T, BoundStmt>)
                return x.name == y.name && x.derivative == y.derivative && same_expr(x.value, y.value);
            else if constexpr (std::is_same_v<T, TableStmt>) return x.name == y.name && x.points == y.points;
            else if constexpr (std::is_same_v<T, TimeStmt>) return same_expr(x.value, y.value);
            else {
                if (x.signals.size() != y.signals.size()) return false;
                for (std::size_t i = 0; i < x.signals.size(); ++i)
                    if (x.signals[i].name != y.signals[i].name || x.signals[i].derivative != y.signals[i].derivative)
                        return false;
                return true;
            }
        },
        a.node);
}

inline bool same_structure(const Program& a, const Program& b) {
    if (a.statements.size() != b.statements.size()) return false;
    for (std::size_t i = 0; i < a.statements.size(); ++i)
        if (!same_structure(a.statements[i], b.statements[i])) return false;
    return true;
}

/// "y" with two apostrophes -> "y''".
inline std::string signal_name(std::string_view var, int derivative) {
    return std::string(var) + std::string(static_cast<std::size_t>(derivative), '\'');
}

} // namespace apc::dsl
