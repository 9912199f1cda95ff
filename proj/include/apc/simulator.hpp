#pragma once

// Fixed-step execution of a netlist under the IC / OP / HALT mode machine.
//
// Integrators obey d(state)/dtau = -k0 * sum(inputs). Each step is one
// classical Runge-Kutta step; the algebraic part is re-evaluated at every
// stage. After a step every net is quantized to the resolution grid and
// clamped to [-1, 1], with clamps logged on their rising edge.

#include "apc/errors.hpp"
#include "apc/machine.hpp"
#include "apc/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace apc {

enum class Mode { IC, OP, HALT };

inline std::string_view to_string(Mode m) {
    switch (m) {
    case Mode::IC: return "IC";
    case Mode::OP: return "OP";
    case Mode::HALT: return "HALT";
    }
    return "?";
}

/// The accepted transition table.
inline bool transition_allowed(Mode from, Mode to) {
    if (from == to) return true;
    return (from == Mode::IC && to == Mode::OP) || (from == Mode::OP && to == Mode::HALT) ||
           (from == Mode::HALT && to == Mode::OP) || (from == Mode::HALT && to == Mode::IC);
}

struct SimConfig {
    double dt = 0.0;          ///< machine-time step; 0 selects default_dt()
    double resolution = 0.0;  ///< value grid; 0 is ideal
    int adc_bits = 12;
    bool strict_overload = false;
    std::size_t sample_every = 1;
};

/// min(1e-4, 1 / (100 * max k0 * max integrator fan-in))
inline double default_dt(const Netlist& nl) {
    double k0_max = 0.0;
    std::size_t fan = 1;
    for (const auto& e : nl.elements) {
        if (const auto* p = std::get_if<IntegratorParams>(&e.params)) {
            k0_max = std::max(k0_max, p->k0);
            fan = std::max(fan, e.inputs.size());
        }
    }
    if (k0_max == 0.0) return 1e-4;
    return std::min(1e-4, 1.0 / (100.0 * k0_max * static_cast<double>(fan)));
}

/// 16-bit digital potentiometer grid.
inline double quantize_pot(double alpha) { return std::round(alpha * 65535.0) / 65535.0; }

struct AdcReading {
    double value = 0.0;
    std::int64_t code = 0;
    std::optional<std::string> warning;
};

/// Midtread quantizer over [-1, 1] with 2^bits codes.
inline AdcReading adc_quantize(double v, int bits) {
    const double q = std::ldexp(1.0, 1 - bits);
    const auto lo = -(std::int64_t{1} << (bits - 1));
    const auto hi = (std::int64_t{1} << (bits - 1)) - 1;
    auto code = static_cast<std::int64_t>(std::llround(v / q));
    code = std::clamp(code, lo, hi);
    return {static_cast<double>(code) * q, code, std::nullopt};
}

class MachineInstance {
public:
    MachineInstance(Netlist nl, SimConfig cfg) : nl_(std::move(nl)), cfg_(cfg) {
        if (cfg_.dt == 0.0) cfg_.dt = default_dt(nl_);
        if (!(cfg_.dt > 0.0) || !std::isfinite(cfg_.dt)) throw PreconditionError("dt must be positive");
        if (!(cfg_.resolution >= 0.0 && cfg_.resolution < 1.0)) throw PreconditionError("resolution must lie in [0, 1)");
        if (cfg_.adc_bits < 1 || cfg_.adc_bits > 32) throw PreconditionError("adc_bits must lie in 1..32");
        if (cfg_.sample_every < 1) throw PreconditionError("sample_every must be at least 1");
        if (auto issues = validate(nl_); !issues.empty())
            throw StructuralError("invalid netlist: " + issues[0].rule + " at '" + issues[0].element + "': " + issues[0].message);
        if (auto loops = algebraic_loops(nl_); !loops.empty()) {
            std::string cycle;
            for (const auto& id : loops[0]) cycle += id + " -> ";
            throw StructuralError("algebraic loop: " + cycle + loops[0][0]);
        }
        index();
        reload_ic();
        refresh(false);
    }

    [[nodiscard]] Mode mode() const noexcept { return mode_; }
    [[nodiscard]] double time() const noexcept { return tau_; }
    [[nodiscard]] const SimConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const Netlist& netlist() const noexcept { return nl_; }
    [[nodiscard]] const std::vector<OverloadEvent>& overloads() const noexcept { return log_; }

    void set_mode(Mode to) {
        if (!transition_allowed(mode_, to))
            throw ModeError("illegal mode transition " + std::string(to_string(mode_)) + " -> " + std::string(to_string(to)));
        if (mode_ == Mode::HALT && to == Mode::IC) {
            reload_ic();
            tau_ = 0.0;
            std::fill(over_.begin(), over_.end(), false);
            refresh(false);
        }
        mode_ = to;
    }

    /// One Runge-Kutta step of size h (default: the configured dt).
    void step() { step(cfg_.dt); }
    void step(double h) {
        if (mode_ != Mode::OP) throw ModeError("step requires OP mode (current mode " + std::string(to_string(mode_)) + ")");
        if (!(h > 0.0)) throw PreconditionError("step size must be positive");
        advance(h);
        tau_ += h;
        settle();
    }

    /// Runs to tau_end and leaves the instance in HALT.
    Trace run(double tau_end) {
        if (mode_ == Mode::HALT) throw ModeError("run requires IC or OP mode");
        if (mode_ == Mode::IC) set_mode(Mode::OP);
        const double tau0 = tau_;
        const double span = tau_end - tau0;
        const std::size_t n =
            span > 0.0 ? static_cast<std::size_t>(std::ceil(span / cfg_.dt * (1.0 - 1e-12))) : std::size_t{0};

        Trace tr;
        tr.names = nl_.outputs;
        tr.series.resize(tr.names.size());
        std::vector<std::size_t> cols;
        for (const auto& name : tr.names) cols.push_back(element_for_name(name));
        auto sample = [&] {
            tr.times.push_back(tau_);
            for (std::size_t c = 0; c < cols.size(); ++c) tr.series[c].push_back(values_[cols[c]]);
        };
        const std::size_t log_start = log_.size();
        sample();
        for (std::size_t i = 0; i < n; ++i) {
            const double next = i + 1 == n ? tau_end : tau0 + static_cast<double>(i + 1) * cfg_.dt;
            try {
                advance(next - tau_);
                tau_ = next;
                settle();
            } catch (...) {
                mode_ = Mode::HALT;
                throw;
            }
            if ((i + 1) % cfg_.sample_every == 0 || i + 1 == n) sample();
        }
        tr.overloads.assign(log_.begin() + static_cast<std::ptrdiff_t>(log_start), log_.end());
        mode_ = Mode::HALT;
        return tr;
    }

    /// Digital potentiometer update; takes effect immediately in any mode.
    double set_coefficient(const std::string& id, double alpha) {
        auto& el = element_for_id(id);
        if (el.kind != ElementKind::Coefficient) throw PreconditionError("element '" + id + "' is not a coefficient");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw PreconditionError("coefficient value must lie in [0, 1]");
        el.alpha = quantize_pot(alpha);
        std::get<CoefficientParams>(nl_.find_element(id)->params).alpha = el.alpha;
        refresh(false);
        return el.alpha;
    }
    [[nodiscard]] double coefficient(const std::string& id) const { return element_for_id(id).alpha; }

    /// Overrides an integrator's initial condition; applied now if in IC.
    void set_initial_condition(const std::string& id, double ic) {
        auto& el = element_for_id(id);
        if (el.kind != ElementKind::Integrator) throw PreconditionError("element '" + id + "' is not an integrator");
        if (!(std::abs(ic) <= 1.0)) throw PreconditionError("initial condition must lie in [-1, 1]");
        el.ic = ic;
        std::get<IntegratorParams>(nl_.find_element(id)->params).ic = ic;
        if (mode_ == Mode::IC) {
            reload_ic();
            refresh(false);
        }
    }

    /// Current (quantized, clamped) value of a net, looked up by name or id.
    [[nodiscard]] double value(const std::string& net) const { return values_[element_for_net(net)]; }

    /// Integrator state (continuous, clamped).
    [[nodiscard]] double state(const std::string& integrator_id) const {
        const auto& el = element_for_id(integrator_id);
        if (el.kind != ElementKind::Integrator) throw PreconditionError("element '" + integrator_id + "' is not an integrator");
        return states_[el.state];
    }

    [[nodiscard]] AdcReading read_adc(const std::string& net) const {
        auto r = adc_quantize(value(net), cfg_.adc_bits);
        if (mode_ == Mode::OP) r.warning = "read in OP mode: the value is still changing (HALT recommended)";
        return r;
    }

private:
    struct El {
        ElementKind kind;
        std::vector<std::size_t> in;
        double alpha = 1.0;
        double k0 = 1.0;
        double ic = 0.0;
        double constant = 1.0;
        std::vector<Breakpoint> table;
        std::size_t state = 0;
    };

    void index() {
        std::unordered_map<std::string, std::size_t> by_id;
        for (std::size_t i = 0; i < nl_.elements.size(); ++i) by_id[nl_.elements[i].id] = i;
        for (const auto& n : nl_.nets) {
            net_driver_[n.id] = by_id.at(n.driver);
            if (!n.name.empty()) name_driver_[n.name] = by_id.at(n.driver);
        }
        els_.resize(nl_.elements.size());
        for (std::size_t i = 0; i < nl_.elements.size(); ++i) {
            const auto& e = nl_.elements[i];
            auto& el = els_[i];
            el.kind = e.kind();
            for (const auto& in : e.inputs) el.in.push_back(net_driver_.at(in));
            std::visit(
                [&](const auto& p) {
                    using T = std::decay_t<decltype(p)>;
                    if constexpr (std::is_same_v<T, IntegratorParams>) {
                        el.k0 = p.k0;
                        el.ic = p.ic;
                        el.state = integrators_.size();
                        integrators_.push_back(i);
                    } else if constexpr (std::is_same_v<T, CoefficientParams>) el.alpha = p.alpha;
                    else if constexpr (std::is_same_v<T, ReferenceParams>) el.constant = p.constant;
                    else if constexpr (std::is_same_v<T, FunctionGeneratorParams>) el.table = p.table;
                },
                e.params);
            id_index_[e.id] = i;
        }
        for (const auto& id : evaluation_order(nl_)) order_.push_back(id_index_.at(id));
        states_.assign(integrators_.size(), 0.0);
        values_.assign(els_.size(), 0.0);
        over_.assign(els_.size(), false);
        scratch_.assign(els_.size(), 0.0);
    }

    El& element_for_id(const std::string& id) {
        auto it = id_index_.find(id);
        if (it == id_index_.end()) throw PreconditionError("unknown element '" + id + "'");
        return els_[it->second];
    }
    [[nodiscard]] const El& element_for_id(const std::string& id) const {
        auto it = id_index_.find(id);
        if (it == id_index_.end()) throw PreconditionError("unknown element '" + id + "'");
        return els_[it->second];
    }
    [[nodiscard]] std::size_t element_for_name(const std::string& name) const {
        auto it = name_driver_.find(name);
        if (it == name_driver_.end()) throw PreconditionError("unknown net '" + name + "'");
        return it->second;
    }
    [[nodiscard]] std::size_t element_for_net(const std::string& net) const {
        if (auto it = name_driver_.find(net); it != name_driver_.end()) return it->second;
        if (auto it = net_driver_.find(net); it != net_driver_.end()) return it->second;
        throw PreconditionError("unknown net '" + net + "'");
    }

    void reload_ic() {
        for (std::size_t k = 0; k < integrators_.size(); ++k) states_[k] = els_[integrators_[k]].ic;
    }

    [[nodiscard]] double compute(const El& el, const std::vector<double>& v, std::size_t i) const {
        double r = 0.0;
        switch (el.kind) {
        case ElementKind::Summer:
            for (auto j : el.in) r -= v[j];
            break;
        case ElementKind::Multiplier: r = v[el.in[0]] * v[el.in[1]]; break;
        case ElementKind::Coefficient: r = el.alpha * v[el.in[0]]; break;
        case ElementKind::FunctionGenerator: r = interpolate(el.table, v[el.in[0]]); break;
        case ElementKind::Reference: r = el.constant; break;
        case ElementKind::Integrator: r = v[i]; break;
        }
        if (!std::isfinite(r)) throw StructuralError("non-finite value at element '" + nl_.elements[i].id + "'");
        return r;
    }

    /// Fresh evaluation for an internal stage: outputs clamp silently.
    void evaluate_stage(const std::vector<double>& x, std::vector<double>& v) const {
        for (std::size_t k = 0; k < integrators_.size(); ++k) v[integrators_[k]] = std::clamp(x[k], -1.0, 1.0);
        for (auto i : order_) v[i] = std::clamp(compute(els_[i], v, i), -1.0, 1.0);
    }

    void derivative(const std::vector<double>& v, std::vector<double>& dx) const {
        for (std::size_t k = 0; k < integrators_.size(); ++k) {
            const auto& el = els_[integrators_[k]];
            double s = 0.0;
            for (auto j : el.in) s += v[j];
            dx[k] = -el.k0 * s;
        }
    }

    void advance(double h) {
        const std::size_t n = states_.size();
        if (n == 0) return;
        std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
        derivative(values_, k1);
        for (std::size_t k = 0; k < n; ++k) tmp[k] = states_[k] + 0.5 * h * k1[k];
        evaluate_stage(tmp, scratch_);
        derivative(scratch_, k2);
        for (std::size_t k = 0; k < n; ++k) tmp[k] = states_[k] + 0.5 * h * k2[k];
        evaluate_stage(tmp, scratch_);
        derivative(scratch_, k3);
        for (std::size_t k = 0; k < n; ++k) tmp[k] = states_[k] + h * k3[k];
        evaluate_stage(tmp, scratch_);
        derivative(scratch_, k4);
        for (std::size_t k = 0; k < n; ++k) {
            const double x = states_[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
            if (!std::isfinite(x)) throw StructuralError("non-finite integrator state at '" + nl_.elements[integrators_[k]].id + "'");
            pending_raw_state_.resize(n);
            pending_raw_state_[k] = x;
            states_[k] = std::clamp(x, -1.0, 1.0);
        }
    }

    double quantize(double v) const {
        if (cfg_.resolution <= 0.0) return v;
        return cfg_.resolution * std::round(v / cfg_.resolution);
    }

    /// Post-step net update: quantize, clamp and log.
    void settle() { refresh(true, true); }

    void refresh(bool log, bool after_step = false) {
        for (std::size_t k = 0; k < integrators_.size(); ++k) {
            const std::size_t i = integrators_[k];
            const double raw = after_step && k < pending_raw_state_.size() ? pending_raw_state_[k] : states_[k];
            store(i, raw, log);
        }
        for (auto i : order_) store(i, compute(els_[i], values_, i), log);
        pending_raw_state_.clear();
    }

    void store(std::size_t i, double raw, bool log) {
        const bool over = std::abs(raw) > 1.0;
        values_[i] = std::clamp(quantize(raw), -1.0, 1.0);
        if (log && over && !over_[i]) {
            const auto& id = nl_.elements[i].id;
            log_.push_back({tau_, id, std::abs(raw)});
            if (cfg_.strict_overload) {
                over_[i] = true;
                throw OverloadError(id, tau_, std::abs(raw));
            }
        }
        if (log) over_[i] = over;
    }

    Netlist nl_;
    SimConfig cfg_;
    Mode mode_ = Mode::IC;
    double tau_ = 0.0;
    std::vector<El> els_;
    std::vector<std::size_t> integrators_;
    std::vector<std::size_t> order_;
    std::vector<double> states_;
    std::vector<double> values_;
    std::vector<double> scratch_;
    std::vector<double> pending_raw_state_;
    std::vector<bool> over_;
    std::vector<OverloadEvent> log_;
    std::unordered_map<std::string, std::size_t> id_index_;
    std::unordered_map<std::string, std::size_t> net_driver_;
    std::unordered_map<std::string, std::size_t> name_driver_;
};

/// Builds an instance in IC mode with integrator outputs at their initial values.
inline MachineInstance new_instance(Netlist nl, SimConfig cfg = {}) { return MachineInstance(std::move(nl), cfg); }

} // namespace apc
