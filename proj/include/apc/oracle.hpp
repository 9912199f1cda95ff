#pragma once

// Reference solutions of an OdeSystem in problem units, computed with an
// adaptive Dormand-Prince 5(4) integrator (rtol 1e-9, atol 1e-12) and dense
// output sampled on a uniform grid.

#include "apc/dsl/system.hpp"
#include "apc/errors.hpp"
#include "apc/machine.hpp"

#include <boost/numeric/odeint.hpp>

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace apc {

struct OracleConfig {
    double rtol = 1e-9;
    double atol = 1e-12;
    std::size_t samples = 4000; ///< number of uniform intervals over the horizon
    double blowup = 1e12;       ///< magnitude treated as divergence
};

struct OracleSolution {
    std::vector<double> t;
    std::map<Signal, std::vector<double>> values; ///< every signal of the system

    [[nodiscard]] const std::vector<double>& operator[](const Signal& s) const { return values.at(s); }
};

/// Evaluates derivatives and algebraic variables of a system from a state
/// vector holding orders 0..n-1 of every dynamic variable.
class RhsEvaluator {
public:
    explicit RhsEvaluator(const OdeSystem& sys) : sys_(sys) {
        for (const auto& [k, v] : sys.params) params_[k] = v;
        std::size_t slot = 0;
        for (const auto& v : sys.vars) {
            if (v.order == 0) continue;
            offsets_[v.name] = slot;
            slot += static_cast<std::size_t>(v.order);
        }
        dim_ = slot;
    }

    [[nodiscard]] std::size_t dimension() const noexcept { return dim_; }

    [[nodiscard]] std::vector<double> initial_state() const {
        std::vector<double> x(dim_);
        for (const auto& v : sys_.vars)
            for (int k = 0; k < v.order; ++k) x[offsets_.at(v.name) + static_cast<std::size_t>(k)] = v.inits[static_cast<std::size_t>(k)];
        return x;
    }

    void derivative(const std::vector<double>& x, std::vector<double>& dx) {
        begin(x);
        for (const auto& v : sys_.vars) {
            if (v.order == 0) continue;
            const std::size_t o = offsets_.at(v.name);
            for (int k = 0; k + 1 < v.order; ++k)
                dx[o + static_cast<std::size_t>(k)] = v.stage_gains[static_cast<std::size_t>(k)] * x[o + static_cast<std::size_t>(k) + 1];
            dx[o + static_cast<std::size_t>(v.order) - 1] = eval(*v.rhs);
        }
    }

    /// Value of any signal (including algebraic variables) at state x.
    double value(const std::vector<double>& x, const Signal& s) {
        begin(x);
        return signal(s.var, s.order);
    }

private:
    void begin(const std::vector<double>& x) {
        x_ = &x;
        algebraic_.clear();
    }

    double signal(const std::string& var, int d) {
        if (auto it = offsets_.find(var); it != offsets_.end()) return (*x_)[it->second + static_cast<std::size_t>(d)];
        if (auto it = algebraic_.find(var); it != algebraic_.end()) return it->second;
        if (active_.count(var)) throw CompileError("algebraic loop through order-0 variable '" + var + "'");
        active_.insert(var);
        double v = eval(*sys_.find_var(var)->rhs);
        active_.erase(var);
        algebraic_[var] = v;
        return v;
    }

    double eval(const dsl::Expr& e) {
        using namespace dsl;
        return std::visit(
            [&](const auto& n) -> double {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Number>) return n.value;
                else if constexpr (std::is_same_v<T, Name>) {
                    if (auto it = params_.find(n.name); it != params_.end()) return it->second;
                    return signal(n.name, n.derivative);
                } else if constexpr (std::is_same_v<T, Negate>) return -eval(*n.operand);
                else if constexpr (std::is_same_v<T, Binary>) {
                    double a = eval(*n.lhs);
                    double b = eval(*n.rhs);
                    switch (n.op) {
                    case BinaryOp::Add: return a + b;
                    case BinaryOp::Sub: return a - b;
                    case BinaryOp::Mul: return a * b;
                    }
                    return 0.0;
                } else {
                    const auto& table = std::get<Name>(n.args.at(0)->node).name;
                    return interpolate(sys_.tables.at(table).points, eval(*n.args.at(1)));
                }
            },
            e.node);
    }

    const OdeSystem& sys_;
    std::map<std::string, double> params_;
    std::map<std::string, std::size_t> offsets_;
    std::size_t dim_ = 0;
    const std::vector<double>* x_ = nullptr;
    std::map<std::string, double> algebraic_;
    std::set<std::string> active_;
};

/// Solves the system over [0, horizon]. Divergence raises ScalingError.
inline OracleSolution oracle_solve(const OdeSystem& sys, const OracleConfig& cfg = {}) {
    namespace odeint = boost::numeric::odeint;
    using State = std::vector<double>;

    RhsEvaluator rhs(sys);
    const auto signals = sys.signals();
    OracleSolution out;
    for (const auto& s : signals) out.values[s];

    auto record = [&](const State& x, double t) {
        out.t.push_back(t);
        for (const auto& s : signals) {
            double v = rhs.value(x, s);
            if (!std::isfinite(v) || std::abs(v) > cfg.blowup)
                throw ScalingError("unbounded system: '" + s.name() + "' diverges near t = " + std::to_string(t) +
                                   "; annotate bounds with 'bound NAME = VALUE'");
            out.values[s].push_back(v);
        }
    };

    State x = rhs.initial_state();
    const std::size_t n = std::max<std::size_t>(cfg.samples, 1);
    const double dt = sys.horizon / static_cast<double>(n);
    if (x.empty()) {
        for (std::size_t i = 0; i <= n; ++i) record(x, static_cast<double>(i) * dt);
        return out;
    }
    auto system = [&](const State& s, State& ds, double) { rhs.derivative(s, ds); };
    auto stepper = odeint::make_dense_output(cfg.atol, cfg.rtol, odeint::runge_kutta_dopri5<State>());
    try {
        odeint::integrate_n_steps(stepper, system, x, 0.0, dt, n, record);
    } catch (const odeint::step_adjustment_error&) {
        throw ScalingError("unbounded system: the reference integration could not make progress; annotate bounds");
    } catch (const odeint::no_progress_error&) {
        throw ScalingError("unbounded system: the reference integration could not make progress; annotate bounds");
    }
    return out;
}

} // namespace apc
