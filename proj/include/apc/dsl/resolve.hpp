#pragma once

// Name binding and semantic checks: AST -> OdeSystem.

#include "apc/dsl/ast.hpp"
#include "apc/dsl/system.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace apc::dsl {

struct ResolveResult {
    std::optional<OdeSystem> system;
    std::vector<Diagnostic> diagnostics;
    [[nodiscard]] bool ok() const { return system.has_value(); }
};

namespace detail {

class Resolver {
public:
    ResolveResult run(const Program& prog) {
        collect(prog);
        if (!diags_.empty()) return finish();

        resolve_params();
        resolve_tables();
        resolve_equations();
        resolve_inits();
        resolve_time();
        resolve_outputs();
        resolve_bounds();
        return finish();
    }

private:
    struct VarDecl {
        VarStmt stmt;
        SourceLoc loc;
    };

    void error(SourceLoc loc, std::string msg) { diags_.push_back({loc, std::move(msg)}); }

    ResolveResult finish() {
        ResolveResult r;
        r.diagnostics = std::move(diags_);
        if (r.diagnostics.empty()) r.system = std::move(sys_);
        return r;
    }

    void declare(const std::string& name, SourceLoc loc) {
        if (!declared_.insert(name).second) error(loc, "duplicate declaration of '" + name + "'");
    }

    void collect(const Program& prog) {
        for (const auto& st : prog.statements) {
            std::visit(
                [&](const auto& n) {
                    using T = std::decay_t<decltype(n)>;
                    if constexpr (std::is_same_v<T, SystemStmt>) sys_.name = n.name;
                    else if constexpr (std::is_same_v<T, ParamStmt>) {
                        declare(n.name, st.loc);
                        params_.push_back({n, st.loc});
                    } else if constexpr (std::is_same_v<T, VarStmt>) {
                        declare(n.name, st.loc);
                        vars_.push_back({n, st.loc});
                    } else if constexpr (std::is_same_v<T, TableStmt>) {
                        declare(n.name, st.loc);
                        tables_.push_back({n, st.loc});
                    } else if constexpr (std::is_same_v<T, EqStmt>) eqs_.push_back({n, st.loc});
                    else if constexpr (std::is_same_v<T, InitStmt>) inits_.push_back({n, st.loc});
                    else if constexpr (std::is_same_v<T, TimeStmt>) times_.push_back({n, st.loc});
                    else if constexpr (std::is_same_v<T, OutputStmt>) outputs_.push_back({n, st.loc});
                    else if constexpr (std::is_same_v<T, BoundStmt>) bounds_.push_back({n, st.loc});
                },
                st.node);
        }
    }

    std::optional<int> var_order(const std::string& name) const {
        for (const auto& v : vars_)
            if (v.stmt.name == name) return v.stmt.order;
        return std::nullopt;
    }
    bool is_table(const std::string& name) const {
        for (const auto& t : tables_)
            if (t.first.name == name) return true;
        return false;
    }

    /// Folds a constant expression; reports and returns nullopt on failure.
    std::optional<double> fold(const Expr& e, std::string_view what) {
        return std::visit(
            [&](const auto& n) -> std::optional<double> {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Number>) return n.value;
                else if constexpr (std::is_same_v<T, Name>) {
                    if (auto it = param_values_.find(n.name); it != param_values_.end() && n.derivative == 0)
                        return it->second;
                    if (var_order(n.name)) {
                        error(e.loc, std::string(what) + " must be constant, but references variable '" +
                                         signal_name(n.name, n.derivative) + "'");
                    } else {
                        error(e.loc, "unbound name '" + signal_name(n.name, n.derivative) + "'");
                    }
                    return std::nullopt;
                } else if constexpr (std::is_same_v<T, Negate>) {
                    auto v = fold(*n.operand, what);
                    return v ? std::optional(-*v) : std::nullopt;
                } else if constexpr (std::is_same_v<T, Binary>) {
                    auto a = fold(*n.lhs, what);
                    auto b = fold(*n.rhs, what);
                    if (!a || !b) return std::nullopt;
                    switch (n.op) {
                    case BinaryOp::Add: return *a + *b;
                    case BinaryOp::Sub: return *a - *b;
                    case BinaryOp::Mul: return *a * *b;
                    }
                    return std::nullopt;
                } else {
                    auto a = fold(*n.args.at(0), what);
                    if (!a) return std::nullopt;
                    double v = n.function == "sin" ? std::sin(*a) : n.function == "cos" ? std::cos(*a) : std::exp(*a);
                    if (!std::isfinite(v)) {
                        error(e.loc, "constant expression is not finite");
                        return std::nullopt;
                    }
                    return v;
                }
            },
            e.node);
    }

    void check_rhs(const Expr& e, const std::string& owner) {
        std::visit(
            [&](const auto& n) {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Name>) {
                    if (auto order = var_order(n.name)) {
                        if (n.derivative >= std::max(*order, 1) || (*order == 0 && n.derivative > 0))
                            error(e.loc, "derivative order too high: '" + signal_name(n.name, n.derivative) +
                                             "' (variable '" + n.name + "' has order " + std::to_string(*order) + ")");
                    } else if (param_values_.count(n.name)) {
                        if (n.derivative) error(e.loc, "parameter '" + n.name + "' has no derivative");
                    } else if (is_table(n.name)) {
                        error(e.loc, "table '" + n.name + "' used as a value (use lut)");
                    } else {
                        error(e.loc, "unbound name '" + signal_name(n.name, n.derivative) + "'");
                    }
                } else if constexpr (std::is_same_v<T, Negate>) {
                    check_rhs(*n.operand, owner);
                } else if constexpr (std::is_same_v<T, Binary>) {
                    check_rhs(*n.lhs, owner);
                    check_rhs(*n.rhs, owner);
                } else if constexpr (std::is_same_v<T, Call>) {
                    const auto& table = std::get<Name>(n.args.at(0)->node);
                    if (!is_table(table.name)) error(n.args[0]->loc, "unknown table '" + table.name + "'");
                    check_rhs(*n.args.at(1), owner);
                }
            },
            e.node);
    }

    void resolve_params() {
        for (const auto& [p, loc] : params_) {
            if (auto v = fold(*p.value, "parameter value")) {
                param_values_[p.name] = *v;
                sys_.params.emplace_back(p.name, *v);
            }
        }
    }

    void resolve_tables() {
        for (const auto& [t, loc] : tables_) {
            if (t.points.size() < 2) error(loc, "table '" + t.name + "' needs at least two breakpoints");
            for (std::size_t i = 1; i < t.points.size(); ++i) {
                if (!(t.points[i].x > t.points[i - 1].x)) {
                    error(loc, "table '" + t.name + "': x values must be strictly increasing");
                    break;
                }
            }
            sys_.tables[t.name] = Table{t.name, t.points};
        }
    }

    void resolve_equations() {
        std::map<std::string, const EqStmt*> by_var;
        for (const auto& [eq, loc] : eqs_) {
            auto order = var_order(eq.name);
            if (!order) {
                error(loc, "equation for undeclared variable '" + eq.name + "'");
                continue;
            }
            if (eq.derivative != *order) {
                error(loc, "equation order mismatch: '" + eq.name + "' is declared with order " + std::to_string(*order) +
                               " but the equation defines '" + signal_name(eq.name, eq.derivative) + "'");
                continue;
            }
            if (!by_var.emplace(eq.name, &eq).second) {
                error(loc, "duplicate equation for '" + eq.name + "'");
                continue;
            }
            check_rhs(*eq.rhs, eq.name);
        }
        for (const auto& [v, loc] : vars_) {
            auto it = by_var.find(v.name);
            if (it == by_var.end()) {
                error(loc, "missing equation for '" + v.name + "'");
                continue;
            }
            Variable var;
            var.name = v.name;
            var.order = v.order;
            var.rhs = it->second->rhs;
            var.inits.assign(static_cast<std::size_t>(v.order), std::nan(""));
            var.stage_gains.assign(static_cast<std::size_t>(std::max(v.order - 1, 0)), 1.0);
            sys_.vars.push_back(std::move(var));
        }
    }

    void resolve_inits() {
        std::set<Signal> seen;
        for (const auto& [in, loc] : inits_) {
            auto* var = sys_.find_var(in.name);
            if (!var) {
                if (var_order(in.name)) continue; // already reported (missing equation)
                error(loc, "initial condition for undeclared variable '" + in.name + "'");
                continue;
            }
            if (in.derivative >= var->order) {
                error(loc, var->order == 0 ? "algebraic variable '" + in.name + "' takes no initial condition"
                                           : "initial condition order too high: '" + signal_name(in.name, in.derivative) + "'");
                continue;
            }
            if (!seen.insert({in.name, in.derivative}).second) {
                error(loc, "duplicate initial condition for '" + signal_name(in.name, in.derivative) + "'");
                continue;
            }
            if (auto v = fold(*in.value, "initial condition")) var->inits[static_cast<std::size_t>(in.derivative)] = *v;
        }
        for (const auto& [v, loc] : vars_) {
            const auto* var = sys_.find_var(v.name);
            if (!var) continue;
            for (int k = 0; k < var->order; ++k) {
                if (!seen.count(Signal{var->name, k}))
                    error(loc, "missing initial condition for '" + signal_name(var->name, k) + "'");
            }
        }
    }

    void resolve_time() {
        if (times_.empty()) {
            error({1, 1}, "missing time horizon ('time T_END')");
            return;
        }
        if (times_.size() > 1) error(times_[1].second, "duplicate time statement");
        if (auto v = fold(*times_[0].first.value, "time horizon")) {
            if (!(*v > 0.0)) error(times_[0].second, "time horizon must be positive");
            sys_.horizon = *v;
        }
    }

    bool valid_signal(const Name& s) const {
        auto order = var_order(s.name);
        if (!order) return false;
        return *order == 0 ? s.derivative == 0 : s.derivative < *order;
    }

    void resolve_outputs() {
        std::set<Signal> seen;
        for (const auto& [out, loc] : outputs_) {
            for (const auto& s : out.signals) {
                if (!valid_signal(s)) {
                    error(loc, "output '" + signal_name(s.name, s.derivative) + "' is not a variable or a derivative below its order");
                    continue;
                }
                if (seen.insert({s.name, s.derivative}).second) sys_.outputs.push_back({s.name, s.derivative});
            }
        }
    }

    void resolve_bounds() {
        for (const auto& [b, loc] : bounds_) {
            Name s{b.name, b.derivative};
            if (!valid_signal(s)) {
                error(loc, "bound on unknown signal '" + signal_name(b.name, b.derivative) + "'");
                continue;
            }
            if (auto v = fold(*b.value, "bound")) {
                if (!(*v > 0.0) || !std::isfinite(*v)) error(loc, "bound must be positive and finite");
                else sys_.bounds[{b.name, b.derivative}] = *v;
            }
        }
    }

    OdeSystem sys_;
    std::set<std::string> declared_;
    std::map<std::string, double> param_values_;
    std::vector<std::pair<ParamStmt, SourceLoc>> params_;
    std::vector<VarDecl> vars_;
    std::vector<std::pair<TableStmt, SourceLoc>> tables_;
    std::vector<std::pair<EqStmt, SourceLoc>> eqs_;
    std::vector<std::pair<InitStmt, SourceLoc>> inits_;
    std::vector<std::pair<TimeStmt, SourceLoc>> times_;
    std::vector<std::pair<OutputStmt, SourceLoc>> outputs_;
    std::vector<std::pair<BoundStmt, SourceLoc>> bounds_;
    std::vector<Diagnostic> diags_;
};

} // namespace detail

inline ResolveResult resolve(const Program& program) { return detail::Resolver{}.run(program); }

} // namespace apc::dsl
