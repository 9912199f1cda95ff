#pragma once

// Kelvin feedback lowering: a resolved (and usually scaled) OdeSystem becomes a
// machine-model netlist.
//
// Every net carries a sign parity: net value = parity * mathematical value.
// Summers and integrators invert, so parities alternate down an integrator
// chain and are repaired with single-input summers where they disagree.

#include "apc/dsl/printer.hpp"
#include "apc/dsl/system.hpp"
#include "apc/errors.hpp"
#include "apc/format.hpp"
#include "apc/machine.hpp"
#include "apc/scale_map.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace apc {

struct CompileOptions {
    double k0 = 1.0;
    bool optimize_inverters = true;
};

struct CompileReport {
    std::map<ElementKind, int> counts;
    int inverters = 0; ///< single-input summers, included in the summer count

    [[nodiscard]] int count(ElementKind k) const {
        auto it = counts.find(k);
        return it == counts.end() ? 0 : it->second;
    }
    [[nodiscard]] std::string format() const {
        std::string s;
        s += "integrators: " + std::to_string(count(ElementKind::Integrator)) + "\n";
        s += "summers: " + std::to_string(count(ElementKind::Summer)) + "\n";
        s += "inverters: " + std::to_string(inverters) + "\n";
        s += "multipliers: " + std::to_string(count(ElementKind::Multiplier)) + "\n";
        s += "coefficients: " + std::to_string(count(ElementKind::Coefficient)) + "\n";
        s += "function_generators: " + std::to_string(count(ElementKind::FunctionGenerator)) + "\n";
        s += "references: " + std::to_string(count(ElementKind::Reference)) + "\n";
        return s;
    }
};

inline CompileReport make_report(const Netlist& nl) {
    CompileReport r;
    for (const auto& e : nl.elements) {
        ++r.counts[e.kind()];
        if (e.kind() == ElementKind::Summer && e.inputs.size() == 1) ++r.inverters;
    }
    return r;
}

struct CompileResult {
    Netlist netlist;
    SignalMap signals;
    ScaleMap scale;
    CompileReport report;
};

// ---------------------------------------------------------------------------
// Netlist construction with deterministic ids

class NetlistBuilder {
public:
    explicit NetlistBuilder(bool optimize_inverters = true) : optimize_(optimize_inverters) {}

    [[nodiscard]] bool optimize() const noexcept { return optimize_; }
    [[nodiscard]] const Netlist& netlist() const noexcept { return nl_; }
    Netlist take() { return std::move(nl_); }

    static std::string net_of(const std::string& element_id) { return "n_" + element_id; }

    std::string add_element(std::string id, ElementParams params, std::vector<std::string> inputs = {}) {
        if (index_.count(id)) throw CompileError("internal: duplicate element id '" + id + "'");
        std::string net = net_of(id);
        index_[id] = nl_.elements.size();
        nl_.nets.push_back({net, id, {}});
        nl_.elements.push_back({std::move(id), std::move(params), std::move(inputs)});
        return net;
    }

    std::string add(const std::string& prefix, ElementParams params, std::vector<std::string> inputs = {}) {
        return add_element(prefix + "_" + std::to_string(++counters_[prefix]), std::move(params), std::move(inputs));
    }

    Element& element(const std::string& id) { return nl_.elements.at(index_.at(id)); }
    [[nodiscard]] bool has_element(const std::string& id) const { return index_.count(id) != 0; }

    static std::string driver_of(const std::string& net) { return net.substr(2); }

    void connect(const std::string& element_id, const std::string& net) { element(element_id).inputs.push_back(net); }

    std::string reference(int sign) {
        const std::string id = sign > 0 ? "ref_pos" : "ref_neg";
        if (!has_element(id)) add_element(id, ReferenceParams{sign > 0 ? 1.0 : -1.0});
        return net_of(id);
    }

    std::string summer(std::vector<std::string> inputs) { return add("sum", SummerParams{}, std::move(inputs)); }

    /// Single-input summer. With optimization on, repeated requests share one
    /// inverter and inverting an inverter's output returns its input.
    std::string inverter(const std::string& net) {
        if (optimize_) {
            if (auto it = inverter_input_.find(net); it != inverter_input_.end()) return it->second;
            if (auto it = inverted_.find(net); it != inverted_.end()) return it->second;
        }
        auto out = add("inv", SummerParams{}, {net});
        inverter_input_[out] = net;
        inverted_[net] = out;
        return out;
    }

    std::string coefficient(const std::string& net, double alpha, std::string param = {}) {
        std::vector<std::string> in;
        if (!net.empty()) in.push_back(net);
        return add("coef", CoefficientParams{alpha, std::move(param)}, std::move(in));
    }

    std::string multiplier(const std::string& a, const std::string& b) { return add("mul", MultiplierParams{}, {a, b}); }

    std::string function_generator(const std::string& net, std::vector<Breakpoint> table) {
        return add("fg", FunctionGeneratorParams{std::move(table)}, {net});
    }

    void name_net(const std::string& net, const std::string& name) {
        for (auto& n : nl_.nets)
            if (n.id == net) n.name = name;
    }
    [[nodiscard]] bool net_named(const std::string& net) const {
        for (const auto& n : nl_.nets)
            if (n.id == net) return !n.name.empty();
        return false;
    }
    void add_output(const std::string& name) { nl_.outputs.push_back(name); }

private:
    Netlist nl_;
    bool optimize_;
    std::map<std::string, int> counters_;
    std::unordered_map<std::string, std::size_t> index_;
    std::map<std::string, std::string> inverter_input_; ///< inverter output net -> its input net
    std::map<std::string, std::string> inverted_;       ///< net -> inverter output net
};

// ---------------------------------------------------------------------------
// Gains and signals during synthesis

/// Symbolic form of a constant gain: literal * prod(param^exponent). Used to
/// tag potentiometers with the parameter they realize so sweeps can find them.
struct GainTag {
    bool valid = true;
    double literal = 1.0;
    std::map<std::string, int> exps;

    static GainTag number(double v) { return {true, v, {}}; }
    static GainTag param(const std::string& p) { return {true, 1.0, {{p, 1}}}; }
    static GainTag opaque() { return {false, 0.0, {}}; }

    [[nodiscard]] GainTag times(const GainTag& o) const {
        if (!valid || !o.valid) return opaque();
        GainTag r{true, literal * o.literal, exps};
        for (const auto& [p, e] : o.exps) r.exps[p] += e;
        return r;
    }
    [[nodiscard]] GainTag scaled(double c) const {
        if (!valid) return opaque();
        return {true, literal * c, exps};
    }
    /// The parameter name when the gain is exactly ±p.
    [[nodiscard]] std::optional<std::string> single_param() const {
        if (!valid || std::abs(literal) != 1.0 || exps.size() != 1 || exps.begin()->second != 1) return std::nullopt;
        return exps.begin()->first;
    }
};

/// A net with a pending constant gain: value = gain * parity * net value.
struct Sig {
    std::string net;
    int parity = 1;
    double gain = 1.0;
    GainTag tag;
};

/// A linear combination of pending signals plus a literal offset.
struct Lin {
    std::vector<Sig> terms;
    double offset = 0.0;

    static Lin of(Sig s) { return Lin{{std::move(s)}, 0.0}; }
    static Lin constant(double c) { return Lin{{}, c}; }
};

inline Lin scale_lin(Lin l, double c, const GainTag& tag) {
    for (auto& t : l.terms) {
        t.gain *= c;
        t.tag = t.tag.times(tag);
    }
    l.offset *= c;
    return l;
}

/// Rounds up to the 1, 2, 2.5, 5 x 10^k grid.
inline double round_up_to_grid(double v) {
    if (!(v > 0.0) || !std::isfinite(v)) return 1.0;
    const double mant[] = {1.0, 2.0, 2.5, 5.0, 10.0};
    double decade = std::pow(10.0, std::floor(std::log10(v)));
    for (double m : mant) {
        double c = m * decade;
        if (c >= v * (1.0 - 1e-12)) return c;
    }
    return 10.0 * decade;
}

/// Rounds down to the same grid.
inline double round_down_to_grid(double v) {
    if (!(v > 0.0) || !std::isfinite(v)) return 1.0;
    const double mant[] = {10.0, 5.0, 2.5, 2.0, 1.0};
    double decade = std::pow(10.0, std::floor(std::log10(v)));
    for (double m : mant) {
        double c = m * decade;
        if (c <= v * (1.0 + 1e-12)) return c;
    }
    return decade / 2.0;
}

namespace detail {

inline bool unit_magnitude(double g) { return std::abs(std::abs(g) - 1.0) <= 1e-12; }

inline int sign_of(double v) { return v < 0 ? -1 : 1; }

[[noreturn]] inline void unscaled(double magnitude, const std::string& where) {
    throw UnscaledCoefficient("unscaled coefficient: |" + format_number(magnitude) + "| > 1 " + where +
                                  "; amplitude/time scaling is required (--scale auto, or a smaller --lambda / larger --k0)",
                              magnitude);
}

} // namespace detail

/// An integrator chain for one variable. integrators[j] outputs derivative
/// order n-1-j; signals[k] locates derivative order k.
struct Chain {
    std::string var;
    int order = 0;
    std::vector<std::string> integrators;
    std::vector<SignalRef> signals;
    std::string feedback_element; ///< element whose input receives the highest derivative
};

/// Builds n integrators in series. The first integrator's input is left open
/// for the highest derivative; stage gains (default 1) become coefficients of
/// gain/k0 between stages.
inline Chain build_integrator_chain(NetlistBuilder& b, const std::string& var, int order, std::span<const double> inits,
                                    double k0, std::span<const double> stage_gains = {}) {
    if (order < 1) throw CompileError("internal: integrator chain needs order >= 1");
    if (inits.size() != static_cast<std::size_t>(order)) throw CompileError("internal: init count mismatch for '" + var + "'");
    for (int k = 0; k < order; ++k) {
        const double v = inits[static_cast<std::size_t>(k)];
        if (!(std::abs(v) <= 1.0))
            throw ScalingError("initial condition " + dsl::signal_name(var, k) + "(0) = " + format_number(v) +
                               " is outside the machine interval [-1, 1]; amplitude scaling is required");
    }
    Chain c;
    c.var = var;
    c.order = order;
    c.signals.resize(static_cast<std::size_t>(order));
    std::string prev_net;
    for (int j = 1; j <= order; ++j) {
        const int k = order - j; // derivative order carried by this integrator's output
        const int parity = (j % 2 == 0) ? 1 : -1;
        const std::string id = "int_" + var + "_" + std::to_string(k);
        const std::string net = b.add_element(id, IntegratorParams{parity * inits[static_cast<std::size_t>(k)] + 0.0, k0});
        if (j == 1) {
            c.feedback_element = id;
        } else {
            const double g = stage_gains.empty() ? 1.0 : stage_gains[static_cast<std::size_t>(k)];
            const double alpha = g / k0;
            if (detail::unit_magnitude(alpha)) b.connect(id, prev_net);
            else if (alpha > 1.0) detail::unscaled(alpha, "between " + dsl::signal_name(var, k + 1) + " and " + dsl::signal_name(var, k));
            else b.connect(id, b.coefficient(prev_net, alpha));
        }
        c.integrators.push_back(id);
        c.signals[static_cast<std::size_t>(k)] = {net, parity, 1.0};
        prev_net = net;
    }
    return c;
}

namespace detail {

/// Materializes a pending gain: no element for |gain| = 1 unless the gain is
/// a tagged parameter, otherwise one coefficient. Returns (net, parity).
inline std::pair<std::string, int> materialize(NetlistBuilder& b, const Sig& s) {
    auto param = s.tag.single_param();
    const int sgn = sign_of(s.gain);
    if (unit_magnitude(s.gain) && !param) return {s.net, s.parity * sgn};
    if (std::abs(s.gain) > 1.0 && !unit_magnitude(s.gain)) unscaled(std::abs(s.gain), "on net '" + s.net + "'");
    const double alpha = unit_magnitude(s.gain) ? 1.0 : std::abs(s.gain);
    return {b.coefficient(s.net, alpha, param.value_or("")), s.parity * sgn};
}

/// Sums already-materialized terms into one net. The larger parity group
/// feeds the summer directly; the minority is inverted first.
inline std::pair<std::string, int> sum_terms(NetlistBuilder& b, const std::vector<std::pair<std::string, int>>& terms) {
    if (terms.size() == 1) return terms[0];
    std::vector<std::string> pos, neg;
    for (const auto& [net, p] : terms) (p > 0 ? pos : neg).push_back(net);
    const int main = pos.size() >= neg.size() ? 1 : -1;
    auto& major = main > 0 ? pos : neg;
    auto& minor = main > 0 ? neg : pos;
    std::vector<std::string> inputs = major;
    if (minor.size() == 1) inputs.push_back(b.inverter(minor[0]));
    else if (minor.size() > 1) inputs.push_back(b.summer(minor));
    return {b.summer(inputs), -main};
}

inline std::vector<std::pair<std::string, int>> materialize_all(NetlistBuilder& b, const Lin& l) {
    std::vector<std::pair<std::string, int>> out;
    for (const auto& t : l.terms) {
        if (t.gain == 0.0 && !t.tag.single_param()) continue;
        out.push_back(materialize(b, t));
    }
    if (l.offset != 0.0) out.push_back(materialize(b, Sig{b.reference(sign_of(l.offset)), 1, std::abs(l.offset), {}}));
    return out;
}

inline std::string zero_source(NetlistBuilder& b) { return b.coefficient(b.reference(1), 0.0); }

} // namespace detail

/// Feeds the right-hand side (already divided by k0) into the chain's first
/// integrator. Integrators sum their inputs, so +1 terms connect directly and
/// the -1 terms share one inverter or summer.
inline void close_feedback(NetlistBuilder& b, const Chain& chain, const Lin& rhs_over_k0) {
    auto terms = detail::materialize_all(b, rhs_over_k0);
    std::vector<std::string> neg;
    for (const auto& [net, p] : terms) {
        if (p > 0) b.connect(chain.feedback_element, net);
        else neg.push_back(net);
    }
    if (neg.size() == 1) b.connect(chain.feedback_element, b.inverter(neg[0]));
    else if (neg.size() > 1) b.connect(chain.feedback_element, b.summer(neg));
    if (b.element(chain.feedback_element).inputs.empty()) b.connect(chain.feedback_element, detail::zero_source(b));
}

// ---------------------------------------------------------------------------
// The compiler proper

class KelvinCompiler {
public:
    KelvinCompiler(const OdeSystem& sys, CompileOptions opt, ScaleMap scale = {}, SignalMap external = {})
        : sys_(sys), opt_(opt), scale_(std::move(scale)), external_(std::move(external)), b_(opt.optimize_inverters) {
        if (!(opt_.k0 > 0.0) || !std::isfinite(opt_.k0)) throw CompileError("k0 must be positive");
        for (const auto& [k, v] : sys_.params) params_[k] = v;
    }

    NetlistBuilder& builder() { return b_; }

    CompileResult run() {
        for (const auto& v : sys_.vars)
            if (v.order >= 1) build_chain(v);
        for (const auto& v : sys_.vars)
            if (v.order == 0) order0(v.name);
        for (const auto& v : sys_.vars)
            if (v.order >= 1) feedback(v);

        SignalMap signals;
        for (const auto& s : sys_.signals()) signals[s.name()] = signal_ref(s);

        std::vector<Signal> outs = sys_.outputs;
        if (outs.empty())
            for (const auto& v : sys_.vars) outs.push_back({v.name, 0});
        for (const auto& s : outs) signals[s.name()] = output_tap(s);

        CompileResult r;
        r.netlist = b_.take();
        auto issues = validate(r.netlist);
        if (!issues.empty())
            throw CompileError("internal: compiled netlist is invalid (" + issues[0].rule + " at '" + issues[0].element +
                               "': " + issues[0].message + ")");
        if (auto loops = algebraic_loops(r.netlist); !loops.empty()) {
            std::string cycle;
            for (const auto& id : loops[0]) cycle += id + " -> ";
            throw CompileError("algebraic loop in compiled netlist: " + cycle + loops[0][0]);
        }
        r.signals = std::move(signals);
        r.scale = scale_;
        r.scale.k0 = opt_.k0;
        r.report = make_report(r.netlist);
        return r;
    }

    /// Lowers an expression tree to a linear combination of pending signals.
    Lin lower(const dsl::Expr& e) {
        using namespace dsl;
        return std::visit(
            [&](const auto& n) -> Lin {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Number>) return Lin::constant(n.value);
                else if constexpr (std::is_same_v<T, Name>) {
                    if (params_.count(n.name)) return Lin::of(param_source(n.name));
                    return Lin::of(signal(n.name, n.derivative));
                } else if constexpr (std::is_same_v<T, Negate>) {
                    return scale_lin(lower(*n.operand), -1.0, GainTag::number(-1.0));
                } else if constexpr (std::is_same_v<T, Binary>) {
                    if (n.op == BinaryOp::Mul) return lower_product(e);
                    Lin a = lower(*n.lhs);
                    Lin c = lower(*n.rhs);
                    if (n.op == BinaryOp::Sub) c = scale_lin(std::move(c), -1.0, GainTag::number(-1.0));
                    a.terms.insert(a.terms.end(), c.terms.begin(), c.terms.end());
                    a.offset += c.offset;
                    return a;
                } else {
                    return lower_lut(n);
                }
            },
            e.node);
    }

    /// Reduces a combination to one pending signal, inserting summers as needed.
    Sig to_sig(const Lin& l) {
        std::size_t live = 0;
        for (const auto& t : l.terms)
            if (t.gain != 0.0 || t.tag.single_param()) ++live;
        if (live == 1 && l.offset == 0.0) {
            for (const auto& t : l.terms)
                if (t.gain != 0.0 || t.tag.single_param()) return t;
        }
        auto terms = detail::materialize_all(b_, l);
        if (terms.empty()) return Sig{detail::zero_source(b_), 1, 1.0, {}};
        auto [net, parity] = detail::sum_terms(b_, terms);
        return Sig{net, parity, 1.0, {}};
    }

    /// synthesize_expression: one net plus its parity.
    std::pair<std::string, int> synthesize(const dsl::Expr& e) {
        Sig s = to_sig(lower(e));
        return detail::materialize(b_, s);
    }

private:
    struct Balanced {
        double c = 0;       ///< right-hand side coefficient of the own order-0 signal
        GainTag tag;
    };

    // --- constants -------------------------------------------------------

    bool has_vars(const dsl::Expr& e) const {
        using namespace dsl;
        return std::visit(
            [&](const auto& n) -> bool {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Number>) return false;
                else if constexpr (std::is_same_v<T, Name>) return !params_.count(n.name);
                else if constexpr (std::is_same_v<T, Negate>) return has_vars(*n.operand);
                else if constexpr (std::is_same_v<T, Binary>) return has_vars(*n.lhs) || has_vars(*n.rhs);
                else return has_vars(*n.args.at(1));
            },
            e.node);
    }

    bool has_params(const dsl::Expr& e) const {
        using namespace dsl;
        return std::visit(
            [&](const auto& n) -> bool {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Number>) return false;
                else if constexpr (std::is_same_v<T, Name>) return params_.count(n.name) != 0;
                else if constexpr (std::is_same_v<T, Negate>) return has_params(*n.operand);
                else if constexpr (std::is_same_v<T, Binary>) return has_params(*n.lhs) || has_params(*n.rhs);
                else return has_params(*n.args.at(1));
            },
            e.node);
    }

    /// Folds a variable-free expression to its value and symbolic gain.
    std::pair<double, GainTag> fold(const dsl::Expr& e) const {
        using namespace dsl;
        return std::visit(
            [&](const auto& n) -> std::pair<double, GainTag> {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, Number>) return {n.value, GainTag::number(n.value)};
                else if constexpr (std::is_same_v<T, Name>) return {params_.at(n.name), GainTag::param(n.name)};
                else if constexpr (std::is_same_v<T, Negate>) {
                    auto [v, t] = fold(*n.operand);
                    return {-v, t.scaled(-1.0)};
                } else if constexpr (std::is_same_v<T, Binary>) {
                    auto [a, ta] = fold(*n.lhs);
                    auto [c, tc] = fold(*n.rhs);
                    if (n.op == BinaryOp::Mul) return {a * c, ta.times(tc)};
                    return {n.op == BinaryOp::Add ? a + c : a - c, GainTag::opaque()};
                } else {
                    auto [x, tx] = fold(*n.args.at(1));
                    const auto& table = std::get<Name>(n.args.at(0)->node).name;
                    return {interpolate(sys_.tables.at(table).points, x), GainTag::opaque()};
                }
            },
            e.node);
    }

    static void flatten_product(const dsl::Expr& e, std::vector<const dsl::Expr*>& factors, double& sign) {
        if (const auto* neg = std::get_if<dsl::Negate>(&e.node)) {
            sign = -sign;
            flatten_product(*neg->operand, factors, sign);
        } else if (const auto* bin = std::get_if<dsl::Binary>(&e.node); bin && bin->op == dsl::BinaryOp::Mul) {
            flatten_product(*bin->lhs, factors, sign);
            flatten_product(*bin->rhs, factors, sign);
        } else {
            factors.push_back(&e);
        }
    }

    // --- products, lookups, sources ----------------------------------------

    Lin lower_product(const dsl::Expr& e) {
        std::vector<const dsl::Expr*> factors;
        double sign = 1.0;
        flatten_product(e, factors, sign);

        const bool any_vars = std::any_of(factors.begin(), factors.end(), [&](const auto* f) { return has_vars(*f); });
        double k = sign;
        GainTag ktag = GainTag::number(sign);
        std::vector<const dsl::Expr*> varying;
        for (const auto* f : factors) {
            // params fold into the gain next to a time-varying factor; alone they are sources
            if (!has_vars(*f) && (any_vars || !has_params(*f))) {
                auto [v, t] = fold(*f);
                k *= v;
                ktag = ktag.times(t);
            } else {
                varying.push_back(f);
            }
        }
        if (varying.empty()) return Lin::constant(k);
        // a single varying factor stays linear so the constant reaches each addend
        if (varying.size() == 1) return scale_lin(lower(*varying[0]), k, ktag);
        std::vector<Sig> sigs;
        for (const auto* f : varying) sigs.push_back(to_sig(lower(*f)));

        double gain = k;
        GainTag tag = ktag;
        auto operand = [&](const Sig& s) {
            gain *= s.gain;
            tag = tag.times(s.tag);
            if (!b_.optimize() && s.parity < 0) return std::pair<std::string, int>{b_.inverter(s.net), 1};
            return std::pair<std::string, int>{s.net, s.parity};
        };
        auto acc = operand(sigs[0]);
        for (std::size_t i = 1; i < sigs.size(); ++i) {
            auto next = operand(sigs[i]);
            acc = {b_.multiplier(acc.first, next.first), acc.second * next.second};
        }
        return Lin::of(Sig{acc.first, acc.second, gain, tag});
    }

    /// lut(table, arg): the argument's pending gain and parity are folded into
    /// the breakpoints, and an out-of-range table is scaled down with the
    /// factor returned as output gain.
    Lin lower_lut(const dsl::Call& call) {
        const auto& tname = std::get<dsl::Name>(call.args.at(0)->node).name;
        const auto& points = sys_.tables.at(tname).points;
        Lin arg = lower(*call.args.at(1));
        bool constant = std::all_of(arg.terms.begin(), arg.terms.end(), [](const Sig& s) { return s.gain == 0.0; });
        if (constant) return Lin::constant(interpolate(points, arg.offset));

        Sig s = to_sig(arg);
        const double h = s.gain * s.parity; // arg = h * net value
        std::vector<Breakpoint> in_net;
        for (const auto& p : points) in_net.push_back({p.x / h, p.y});
        std::sort(in_net.begin(), in_net.end(), [](const Breakpoint& a, const Breakpoint& c) { return a.x < c.x; });
        std::vector<Breakpoint> table;
        table.push_back({-1.0, interpolate(in_net, -1.0)});
        for (const auto& p : in_net)
            if (p.x > -1.0 && p.x < 1.0) table.push_back(p);
        table.push_back({1.0, interpolate(in_net, 1.0)});

        double ymax = 0.0;
        for (const auto& p : table) ymax = std::max(ymax, std::abs(p.y));
        double out_gain = 1.0;
        if (ymax > 1.0) {
            out_gain = round_up_to_grid(ymax);
            for (auto& p : table) p.y /= out_gain;
        }
        auto net = b_.function_generator(s.net, std::move(table));
        return Lin::of(Sig{net, 1, out_gain, GainTag::number(out_gain)});
    }

    /// A parameter used as a signal: reference -> coefficient |value|, tagged.
    Sig param_source(const std::string& name) {
        if (auto it = param_sources_.find(name); it != param_sources_.end()) return it->second;
        const double v = params_.at(name);
        if (std::abs(v) > 1.0) detail::unscaled(std::abs(v), "for parameter '" + name + "' used as a signal");
        const std::string id = "p_" + name;
        const std::string net = b_.add_element(id, CoefficientParams{std::abs(v), name}, {b_.reference(1)});
        Sig s{net, detail::sign_of(v), 1.0, {}};
        param_sources_[name] = s;
        return s;
    }

    // --- signals --------------------------------------------------------------

    Sig signal(const std::string& var, int d) {
        if (auto it = chains_.find(var); it != chains_.end()) {
            const auto& ref = it->second.signals.at(static_cast<std::size_t>(d));
            return Sig{ref.net, ref.parity, ref.amplitude_scale, GainTag::number(ref.amplitude_scale)};
        }
        if (const auto* v = sys_.find_var(var); v && v->order == 0) return order0(var);
        if (auto it = external_.find(dsl::signal_name(var, d)); it != external_.end())
            return Sig{it->second.net, it->second.parity, 1.0, {}};
        throw CompileError("internal: unmapped signal '" + dsl::signal_name(var, d) + "'");
    }

    Sig order0(const std::string& name) {
        if (auto it = order0_.find(name); it != order0_.end()) return it->second;
        if (auto pos = std::find(visiting_.begin(), visiting_.end(), name); pos != visiting_.end()) {
            std::string cycle;
            for (auto it = pos; it != visiting_.end(); ++it) cycle += *it + " -> ";
            throw CompileError("algebraic loop between order-0 variables: " + cycle + name);
        }
        visiting_.push_back(name);
        const auto* v = sys_.find_var(name);
        auto [net, parity] = detail::materialize(b_, to_sig(lower(*v->rhs)));
        visiting_.pop_back();
        Sig s{net, parity, 1.0, {}};
        order0_[name] = s;
        return s;
    }

    SignalRef signal_ref(const Signal& s) {
        const double m = scale_.amplitude(s.name());
        if (auto it = chains_.find(s.var); it != chains_.end()) {
            auto ref = it->second.signals.at(static_cast<std::size_t>(s.order));
            ref.amplitude_scale *= m;
            return ref;
        }
        Sig sig = order0(s.var);
        return {sig.net, sig.parity, m};
    }

    SignalRef output_tap(const Signal& s) {
        SignalRef ref = signal_ref(s);
        if (ref.parity < 0 && s.order == 0) {
            ref.net = b_.inverter(ref.net);
            ref.parity = 1;
        }
        if (b_.net_named(ref.net)) ref.net = b_.coefficient(ref.net, 1.0);
        b_.name_net(ref.net, s.name());
        b_.add_output(s.name());
        return ref;
    }

    // --- chains and feedback ---------------------------------------------------

    /// Second-order right-hand side of the form c * (own order-0 signal) with constant c.
    std::optional<Balanced> balanced_form(const Variable& v) const {
        if (v.order != 2) return std::nullopt;
        std::vector<const dsl::Expr*> factors;
        double sign = 1.0;
        flatten_product(*v.rhs, factors, sign);
        int own = 0;
        double c = sign;
        GainTag tag = GainTag::number(sign);
        for (const auto* f : factors) {
            if (const auto* n = std::get_if<dsl::Name>(&f->node); n && n->name == v.name && n->derivative == 0) {
                ++own;
            } else if (!has_vars(*f)) {
                auto [val, t] = fold(*f);
                c *= val;
                tag = tag.times(t);
            } else {
                return std::nullopt;
            }
        }
        if (own != 1 || c == 0.0) return std::nullopt;
        return Balanced{c, tag};
    }

    /// Equal gains a = (|c| * prod g)^(1/n) at every stage, as in the classic
    /// harmonic oscillator circuit. Returns false if the rescaled initial
    /// conditions would leave the machine interval.
    bool build_balanced(const Variable& v, const Balanced& bal) {
        const int n = v.order;
        double G = std::abs(bal.c);
        for (double g : v.stage_gains) G *= g;
        const double a = std::pow(G, 1.0 / n);
        std::vector<double> r(static_cast<std::size_t>(n), 1.0);
        for (int k = 0; k + 1 < n; ++k) r[static_cast<std::size_t>(k + 1)] = r[static_cast<std::size_t>(k)] * v.stage_gains[static_cast<std::size_t>(k)] / a;
        auto parity = [&](int k) { return ((n - k) % 2 == 0) ? 1 : -1; };
        for (int k = 0; k < n; ++k) {
            double ic = parity(k) * r[static_cast<std::size_t>(k)] * v.inits[static_cast<std::size_t>(k)];
            if (!(std::abs(ic) <= 1.0)) return false;
        }

        const double alpha = a / opt_.k0;
        if (alpha > 1.0 && !detail::unit_magnitude(alpha)) detail::unscaled(alpha, "in the integrator chain of '" + v.name + "'");
        std::string param;
        bool unit_stages = std::all_of(v.stage_gains.begin(), v.stage_gains.end(), [](double g) { return g == 1.0; });
        if (unit_stages && opt_.k0 == 1.0 && bal.tag.valid && std::abs(bal.tag.literal) == 1.0 && bal.tag.exps.size() == 1 &&
            bal.tag.exps.begin()->second == n)
            param = bal.tag.exps.begin()->first;
        const bool need_coef = !param.empty() || !detail::unit_magnitude(alpha);

        Chain c;
        c.var = v.name;
        c.order = n;
        c.signals.resize(static_cast<std::size_t>(n));
        std::string prev;
        for (int j = 1; j <= n; ++j) {
            const int k = n - j;
            std::string coef_id;
            std::string coef_net;
            if (need_coef) {
                coef_net = b_.coefficient(prev, detail::unit_magnitude(alpha) ? 1.0 : alpha, param);
                coef_id = NetlistBuilder::driver_of(coef_net);
            }
            const std::string id = "int_" + v.name + "_" + std::to_string(k);
            const double ic = parity(k) * r[static_cast<std::size_t>(k)] * v.inits[static_cast<std::size_t>(k)] + 0.0;
            std::vector<std::string> in;
            if (need_coef) in.push_back(coef_net);
            else if (j > 1) in.push_back(prev);
            const std::string net = b_.add_element(id, IntegratorParams{ic, opt_.k0}, std::move(in));
            if (j == 1) c.feedback_element = need_coef ? coef_id : id;
            c.integrators.push_back(id);
            c.signals[static_cast<std::size_t>(k)] = {net, parity(k), 1.0 / r[static_cast<std::size_t>(k)]};
            prev = net;
        }
        chains_[v.name] = c;
        balanced_[v.name] = bal;
        return true;
    }

    void build_chain(const Variable& v) {
        if (auto bal = balanced_form(v); bal && build_balanced(v, *bal)) return;
        chains_[v.name] = build_integrator_chain(b_, v.name, v.order, v.inits, opt_.k0, v.stage_gains);
    }

    void feedback(const Variable& v) {
        const auto& chain = chains_.at(v.name);
        if (auto it = balanced_.find(v.name); it != balanced_.end()) {
            const double c = it->second.c;
            const int s = detail::sign_of(c) * (v.order % 2 == 0 ? 1 : -1);
            const std::string& y0 = chain.signals[0].net;
            b_.connect(chain.feedback_element, s > 0 ? y0 : b_.inverter(y0));
            return;
        }
        Lin rhs = scale_lin(lower(*v.rhs), 1.0 / opt_.k0, GainTag::number(1.0 / opt_.k0));
        close_feedback(b_, chain, rhs);
    }

    const OdeSystem& sys_;
    CompileOptions opt_;
    ScaleMap scale_;
    SignalMap external_;
    NetlistBuilder b_;
    std::map<std::string, double> params_;
    std::map<std::string, Chain> chains_;
    std::map<std::string, Balanced> balanced_;
    std::map<std::string, Sig> order0_;
    std::map<std::string, Sig> param_sources_;
    std::vector<std::string> visiting_;
};

/// Lowers a resolved system. `scale` only supplies amplitude metadata for the
/// signal map; the system itself must already be scaled.
inline CompileResult compile(const OdeSystem& system, const CompileOptions& options = {}, const ScaleMap& scale = {}) {
    return KelvinCompiler(system, options, scale).run();
}

/// Synthesizes one expression against externally mapped signals and returns
/// the resulting fragment; inputs from `mapped` nets are left dangling.
struct Synthesized {
    Netlist fragment;
    std::string net;
    int parity = 1;
};

inline Synthesized synthesize_expression(const dsl::Expr& expr, const SignalMap& mapped,
                                         const std::vector<std::pair<std::string, double>>& params = {},
                                         const CompileOptions& options = {}) {
    OdeSystem sys;
    sys.params = params;
    KelvinCompiler kc(sys, options, {}, mapped);
    auto [net, parity] = kc.synthesize(expr);
    return {kc.builder().take(), net, parity};
}

} // namespace apc
