#pragma once

// Canonical source text for a parsed program. Re-parsing the output yields a
// structurally identical AST.

#include "apc/dsl/ast.hpp"
#include "apc/format.hpp"

#include <string>

namespace apc::dsl {

namespace detail {

inline int precedence(const Expr& e) {
    if (const auto* b = std::get_if<Binary>(&e.node)) return b->op == BinaryOp::Mul ? 2 : 1;
    if (std::holds_alternative<Negate>(e.node)) return 3;
    return 4;
}

inline void print_expr(const Expr& e, std::string& out);

inline void print_child(const Expr& e, bool parens, std::string& out) {
    if (parens) out += '(';
    print_expr(e, out);
    if (parens) out += ')';
}

inline void print_expr(const Expr& e, std::string& out) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Number>) {
                out += format_number(n.value);
            } else if constexpr (std::is_same_v<T, Name>) {
                out += signal_name(n.name, n.derivative);
            } else if constexpr (std::is_same_v<T, Negate>) {
                out += '-';
                print_child(*n.operand, precedence(*n.operand) < 3, out);
            } else if constexpr (std::is_same_v<T, Binary>) {
                const int p = precedence(e);
                print_child(*n.lhs, precedence(*n.lhs) < p, out);
                out += n.op == BinaryOp::Add ? " + " : n.op == BinaryOp::Sub ? " - " : " * ";
                // left-associative grammar: an equal-precedence right child needs parentheses
                print_child(*n.rhs, precedence(*n.rhs) <= p, out);
            } else {
                out += n.function;
                out += '(';
                for (std::size_t i = 0; i < n.args.size(); ++i) {
                    if (i) out += ", ";
                    print_expr(*n.args[i], out);
                }
                out += ')';
            }
        },
        e.node);
}

} // namespace detail

inline std::string to_source(const Expr& e) {
    std::string s;
    detail::print_expr(e, s);
    return s;
}

inline std::string to_source(const Statement& st) {
    return std::visit(
        [](const auto& n) -> std::string {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, SystemStmt>) return "system " + n.name;
            else if constexpr (std::is_same_v<T, ParamStmt>) return "param " + n.name + " = " + to_source(*n.value);
            else if constexpr (std::is_same_v<T, VarStmt>) return "var " + n.name + " order " + std::to_string(n.order);
            else if constexpr (std::is_same_v<T, EqStmt>) return "eq " + signal_name(n.name, n.derivative) + " = " + to_source(*n.rhs);
            else if constexpr (std::is_same_v<T, InitStmt>) return "init " + signal_name(n.name, n.derivative) + " = " + to_source(*n.value);
            else if constexpr (std::is_same_v<T, BoundStmt>) return "bound " + signal_name(n.name, n.derivative) + " = " + to_source(*n.value);
            else if constexpr (std::is_same_v<T, TimeStmt>) return "time " + to_source(*n.value);
            else if constexpr (std::is_same_v<T, TableStmt>) {
                std::string s = "table " + n.name + " =";
                for (const auto& p : n.points) s += " (" + format_number(p.x) + ", " + format_number(p.y) + ")";
                return s;
            } else {
                std::string s = "output ";
                for (std::size_t i = 0; i < n.signals.size(); ++i) {
                    if (i) s += ", ";
                    s += signal_name(n.signals[i].name, n.signals[i].derivative);
                }
                return s;
            }
        },
        st.node);
}

inline std::string to_source(const Program& p) {
    std::string s;
    for (const auto& st : p.statements) s += to_source(st) + "\n";
    return s;
}

} // namespace apc::dsl
