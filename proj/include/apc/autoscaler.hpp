#pragma once

// Amplitude and time scaling. Machine signal = problem signal / m, and
// problem time t = lambda * machine time tau.

#include "apc/compiler.hpp"
#include "apc/dsl/system.hpp"
#include "apc/oracle.hpp"
#include "apc/scale_map.hpp"
#include "apc/trace.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <variant>

namespace apc {

enum class BoundMethod { User, Oracle };

inline std::string_view to_string(BoundMethod m) { return m == BoundMethod::User ? "user" : "oracle"; }

struct BoundsEstimate {
    std::map<Signal, double> bounds;
    std::map<Signal, BoundMethod> method;
    std::map<Signal, double> peaks; ///< oracle maxima before the margin
};

inline constexpr double bound_margin = 0.25;
/// Headroom kept when the margin would push a signal under half scale.
inline constexpr double utilization_headroom = 0.02;

/// User annotations where present, otherwise the oracle's maximum over the
/// horizon inflated by the safety margin. Negligible signals get bound 1.
inline BoundsEstimate estimate_bounds(const OdeSystem& sys, const OracleConfig& cfg = {}) {
    BoundsEstimate est;
    bool need_oracle = false;
    for (const auto& s : sys.signals()) {
        if (auto it = sys.bounds.find(s); it != sys.bounds.end()) {
            est.bounds[s] = it->second;
            est.method[s] = BoundMethod::User;
        } else {
            need_oracle = true;
        }
    }
    if (!need_oracle) return est;
    auto sol = oracle_solve(sys, cfg);
    for (const auto& s : sys.signals()) {
        if (est.bounds.count(s)) continue;
        double peak = 0.0;
        for (double v : sol[s]) peak = std::max(peak, std::abs(v));
        est.bounds[s] = peak < 1e-9 ? 1.0 : peak * (1.0 + bound_margin);
        est.method[s] = BoundMethod::Oracle;
        est.peaks[s] = peak < 1e-9 ? 0.0 : peak;
    }
    return est;
}

struct ScaledSystem {
    OdeSystem system;
    ScaleMap scale;
};

namespace detail {

inline dsl::ExprPtr times(double c, dsl::ExprPtr e) {
    if (c == 1.0) return e;
    return dsl::make_mul(dsl::make_number(c), std::move(e));
}

/// Replaces every variable reference by (m * reference).
inline dsl::ExprPtr substitute(const dsl::ExprPtr& e, const OdeSystem& sys, const ScaleMap& scale) {
    using namespace dsl;
    return std::visit(
        [&](const auto& n) -> ExprPtr {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, Number>) return e;
            else if constexpr (std::is_same_v<T, Name>) {
                if (!sys.find_var(n.name)) return e;
                return times(scale.amplitude(signal_name(n.name, n.derivative)), e);
            } else if constexpr (std::is_same_v<T, Negate>) return make_negate(substitute(n.operand, sys, scale), e->loc);
            else if constexpr (std::is_same_v<T, Binary>)
                return make_binary(n.op, substitute(n.lhs, sys, scale), substitute(n.rhs, sys, scale), e->loc);
            else return make_call(n.function, {n.args.at(0), substitute(n.args.at(1), sys, scale)}, e->loc);
        },
        e->node);
}

} // namespace detail

/// Scale factors on the 1, 2, 2.5, 5 x 10^k grid, normally the bound rounded
/// up. If that leaves an oracle-bounded signal under half scale, the grid value
/// just above its peak is used instead. Algebraic variables are never scaled
/// up, since that would need gains above 1.
inline ScaledSystem amplitude_scale(const OdeSystem& sys, const BoundsEstimate& bounds) {
    ScaledSystem out{sys, {}};
    for (const auto& s : sys.signals()) {
        auto it = bounds.bounds.find(s);
        if (it == bounds.bounds.end()) throw PreconditionError("no bound for signal '" + s.name() + "'");
        if (!(it->second > 0.0) || !std::isfinite(it->second))
            throw PreconditionError("bound for '" + s.name() + "' must be positive and finite");
        double m = round_up_to_grid(it->second);
        if (auto p = bounds.peaks.find(s); p != bounds.peaks.end() && p->second > 0.0 && p->second / m < 0.5) {
            const double tight = round_up_to_grid(p->second * (1.0 + utilization_headroom));
            if (tight < m) m = tight;
        }
        if (sys.find_var(s.var)->order == 0) m = std::max(m, 1.0);
        out.scale.signals[s.name()] = {m};
    }
    for (auto& v : out.system.vars) {
        auto rhs = detail::substitute(v.rhs, sys, out.scale);
        if (v.order == 0) {
            v.rhs = detail::times(1.0 / out.scale.amplitude(v.name), rhs);
            continue;
        }
        auto m = [&](int k) { return out.scale.amplitude(dsl::signal_name(v.name, k)); };
        v.rhs = detail::times(1.0 / m(v.order - 1), rhs);
        for (int k = 0; k < v.order; ++k) v.inits[static_cast<std::size_t>(k)] /= m(k);
        for (int k = 0; k + 1 < v.order; ++k) v.stage_gains[static_cast<std::size_t>(k)] *= m(k + 1) / m(k);
    }
    out.system.bounds.clear();
    for (const auto& [s, b] : sys.bounds) out.system.bounds[s] = b / out.scale.amplitude(s.name());
    return out;
}

struct LambdaTarget {
    double lambda = 1.0;
};
/// Desired machine run time in seconds for the whole horizon.
struct WallClockTarget {
    double seconds = 1.0;
};
using TimeTarget = std::variant<LambdaTarget, WallClockTarget>;

/// Multiplies every rate by lambda (machine time tau = t / lambda) and checks
/// with a trial compile at the given k0 that each coefficient alpha = rate *
/// lambda / k0 still fits a potentiometer.
inline ScaledSystem time_scale(const ScaledSystem& in, TimeTarget target, double k0 = 1.0,
                               bool optimize_inverters = true) {
    double lambda = std::visit(
        [&](const auto& t) -> double {
            using T = std::decay_t<decltype(t)>;
            if constexpr (std::is_same_v<T, LambdaTarget>) return t.lambda;
            else return in.system.horizon / t.seconds;
        },
        target);
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ScalingError("time scale factor lambda must be positive");
    if (!(k0 > 0.0) || !std::isfinite(k0)) throw ScalingError("k0 must be positive");

    ScaledSystem out = in;
    out.scale.lambda = in.scale.lambda * lambda;
    out.scale.k0 = k0;
    out.system.horizon = in.system.horizon / lambda;
    for (auto& v : out.system.vars) {
        if (v.order == 0) continue;
        v.rhs = detail::times(lambda, v.rhs);
        for (auto& g : v.stage_gains) g *= lambda;
    }
    try {
        (void)compile(out.system, {k0, optimize_inverters}, out.scale);
    } catch (const UnscaledCoefficient& e) {
        const double suggested = round_down_to_grid(out.scale.lambda / e.magnitude());
        throw ScalingError(std::string(e.what()) + "; with k0 = " + format_number(k0) +
                           " try lambda <= " + format_number(suggested));
    }
    return out;
}

/// Bounds, amplitude scaling and time scaling in one go.
inline ScaledSystem autoscale(const OdeSystem& sys, TimeTarget target = LambdaTarget{1.0}, double k0 = 1.0,
                              bool optimize_inverters = true, const OracleConfig& cfg = {}) {
    return time_scale(amplitude_scale(sys, estimate_bounds(sys, cfg)), target, k0, optimize_inverters);
}

/// No amplitude scaling; only the time transformation.
inline ScaledSystem identity_scale(const OdeSystem& sys) { return ScaledSystem{sys, {}}; }

/// Machine-unit trace -> problem units, using the compiler's signal map.
inline Trace descale_trace(const Trace& tr, const SignalMap& signals, double lambda) {
    Trace out = tr;
    out.time_label = "t";
    for (auto& t : out.times) t *= lambda;
    for (auto& e : out.overloads) e.time *= lambda;
    for (std::size_t i = 0; i < out.names.size(); ++i) {
        auto it = signals.find(out.names[i]);
        if (it == signals.end()) throw PreconditionError("descale: unknown signal '" + out.names[i] + "'");
        const double f = it->second.parity * it->second.amplitude_scale;
        for (auto& v : out.series[i]) v *= f;
    }
    return out;
}

inline Trace descale_trace(const Trace& tr, const Sidecar& map) { return descale_trace(tr, map.signals, map.lambda); }

/// Amplitude factors only, for traces whose nets are named after their signals.
inline Trace descale_trace(const Trace& tr, const ScaleMap& scale) {
    SignalMap signals;
    for (const auto& name : tr.names) {
        auto it = scale.signals.find(name);
        if (it == scale.signals.end()) throw PreconditionError("descale: unknown signal '" + name + "'");
        signals[name] = {name, 1, it->second.amplitude};
    }
    return descale_trace(tr, signals, scale.lambda);
}

} // namespace apc
