#pragma once

// Computing-element semantics, the netlist graph and its structural checks.

#include "apc/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

namespace apc {

enum class ElementKind { Summer, Integrator, Multiplier, Coefficient, FunctionGenerator, Reference };

inline constexpr std::string_view to_string(ElementKind kind) noexcept {
    switch (kind) {
    case ElementKind::Summer: return "summer";
    case ElementKind::Integrator: return "integrator";
    case ElementKind::Multiplier: return "multiplier";
    case ElementKind::Coefficient: return "coefficient";
    case ElementKind::FunctionGenerator: return "function_generator";
    case ElementKind::Reference: return "reference";
    }
    return "?";
}

inline std::optional<ElementKind> parse_kind(std::string_view s) noexcept {
    for (auto k : {ElementKind::Summer, ElementKind::Integrator, ElementKind::Multiplier,
                   ElementKind::Coefficient, ElementKind::FunctionGenerator, ElementKind::Reference}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

struct Breakpoint {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Breakpoint&) const = default;
};

struct SummerParams {
    bool operator==(const SummerParams&) const = default;
};
struct IntegratorParams {
    double ic = 0.0;
    double k0 = 1.0;
    bool operator==(const IntegratorParams&) const = default;
};
struct MultiplierParams {
    bool operator==(const MultiplierParams&) const = default;
};
struct CoefficientParams {
    double alpha = 1.0;
    std::string param; ///< source parameter name, empty when the gain is anonymous
    bool operator==(const CoefficientParams&) const = default;
};
struct FunctionGeneratorParams {
    std::vector<Breakpoint> table;
    bool operator==(const FunctionGeneratorParams&) const = default;
};
struct ReferenceParams {
    double constant = 1.0;
    bool operator==(const ReferenceParams&) const = default;
};

/// Alternatives are in ElementKind order, so index() doubles as the kind.
using ElementParams = std::variant<SummerParams, IntegratorParams, MultiplierParams, CoefficientParams,
                                   FunctionGeneratorParams, ReferenceParams>;

struct Element {
    std::string id;
    ElementParams params;
    std::vector<std::string> inputs; ///< net ids, ordered

    [[nodiscard]] ElementKind kind() const noexcept { return static_cast<ElementKind>(params.index()); }
    bool operator==(const Element&) const = default;
};

struct Net {
    std::string id;
    std::string driver; ///< id of the element whose output this net carries
    std::string name;   ///< optional external name; outputs refer to it
    bool operator==(const Net&) const = default;
};

struct Netlist {
    std::vector<Element> elements;
    std::vector<Net> nets;
    std::vector<std::string> outputs; ///< net names

    bool operator==(const Netlist&) const = default;

    [[nodiscard]] const Element* find_element(std::string_view id) const {
        auto it = std::find_if(elements.begin(), elements.end(), [&](const Element& e) { return e.id == id; });
        return it == elements.end() ? nullptr : &*it;
    }
    [[nodiscard]] Element* find_element(std::string_view id) {
        return const_cast<Element*>(std::as_const(*this).find_element(id));
    }
    [[nodiscard]] const Net* find_net(std::string_view id) const {
        auto it = std::find_if(nets.begin(), nets.end(), [&](const Net& n) { return n.id == id; });
        return it == nets.end() ? nullptr : &*it;
    }
    [[nodiscard]] const Net* find_net_by_name(std::string_view name) const {
        if (name.empty()) return nullptr;
        auto it = std::find_if(nets.begin(), nets.end(), [&](const Net& n) { return n.name == name; });
        return it == nets.end() ? nullptr : &*it;
    }
    [[nodiscard]] const Net* net_driven_by(std::string_view element_id) const {
        auto it = std::find_if(nets.begin(), nets.end(), [&](const Net& n) { return n.driver == element_id; });
        return it == nets.end() ? nullptr : &*it;
    }
};

// ---------------------------------------------------------------------------
// Values and element semantics

/// A value in machine units. `overloaded` records that clamping happened.
struct MachineValue {
    double value = 0.0;
    bool overloaded = false;
};

inline MachineValue clamp(double v) {
    if (std::isnan(v)) throw StructuralError("clamp: NaN machine value");
    if (v > 1.0) return {1.0, true};
    if (v < -1.0) return {-1.0, true};
    return {v, false};
}

struct Arity {
    std::size_t min;
    std::size_t max;
};

inline constexpr Arity arity(ElementKind kind) noexcept {
    constexpr auto unbounded = static_cast<std::size_t>(-1);
    switch (kind) {
    case ElementKind::Summer:
    case ElementKind::Integrator: return {1, unbounded};
    case ElementKind::Multiplier: return {2, 2};
    case ElementKind::Coefficient:
    case ElementKind::FunctionGenerator: return {1, 1};
    case ElementKind::Reference: return {0, 0};
    }
    return {0, 0};
}

/// Piecewise-linear lookup, held constant beyond the first and last breakpoints.
inline double interpolate(std::span<const Breakpoint> table, double x) {
    if (table.empty()) throw StructuralError("function generator with empty table");
    if (x <= table.front().x) return table.front().y;
    if (x >= table.back().x) return table.back().y;
    auto hi = std::upper_bound(table.begin(), table.end(), x,
                               [](double v, const Breakpoint& b) { return v < b.x; });
    auto lo = hi - 1;
    double t = (x - lo->x) / (hi->x - lo->x);
    return lo->y + t * (hi->y - lo->y);
}

/// Output of a single element given its input values. Integrators report
/// their state; their time evolution lives in the simulator.
inline double element_output(const ElementParams& params, std::span<const double> inputs,
                             std::optional<double> state = std::nullopt) {
    const auto kind = static_cast<ElementKind>(params.index());
    const auto [lo, hi] = arity(kind);
    if (inputs.size() < lo || inputs.size() > hi) {
        throw StructuralError(std::string(to_string(kind)) + ": expected " + std::to_string(lo) +
                              (hi == lo ? "" : "+") + " inputs, got " + std::to_string(inputs.size()));
    }
    for (double v : inputs) {
        if (!std::isfinite(v)) throw StructuralError(std::string(to_string(kind)) + ": non-finite input");
    }

    double out = 0.0;
    switch (kind) {
    case ElementKind::Summer: {
        double sum = 0.0;
        for (double v : inputs) sum += v;
        out = -sum;
        break;
    }
    case ElementKind::Integrator: {
        const auto& p = std::get<IntegratorParams>(params);
        out = state.value_or(p.ic);
        break;
    }
    case ElementKind::Multiplier: out = inputs[0] * inputs[1]; break;
    case ElementKind::Coefficient: out = std::get<CoefficientParams>(params).alpha * inputs[0]; break;
    case ElementKind::FunctionGenerator:
        out = interpolate(std::get<FunctionGeneratorParams>(params).table, inputs[0]);
        break;
    case ElementKind::Reference: out = std::get<ReferenceParams>(params).constant; break;
    }
    if (!std::isfinite(out)) throw StructuralError(std::string(to_string(kind)) + ": non-finite output");
    return out;
}

inline double element_output(const Element& e, std::span<const double> inputs,
                             std::optional<double> state = std::nullopt) {
    return element_output(e.params, inputs, state);
}

// ---------------------------------------------------------------------------
// Structural validation

struct ValidationIssue {
    std::string element; ///< offending element id (driver id for net-level issues)
    std::string rule;
    std::string message;
};

namespace detail {

inline std::optional<std::string> check_params(const Element& e) {
    auto in_unit = [](double v) { return std::isfinite(v) && v >= -1.0 && v <= 1.0; };
    switch (e.kind()) {
    case ElementKind::Integrator: {
        const auto& p = std::get<IntegratorParams>(e.params);
        if (!in_unit(p.ic)) return "integrator ic " + std::to_string(p.ic) + " outside [-1,1]";
        if (!(std::isfinite(p.k0) && p.k0 > 0.0)) return "integrator k0 must be positive";
        break;
    }
    case ElementKind::Coefficient: {
        double a = std::get<CoefficientParams>(e.params).alpha;
        if (!(std::isfinite(a) && a >= 0.0 && a <= 1.0)) return "coefficient alpha " + std::to_string(a) + " outside [0,1]";
        break;
    }
    case ElementKind::Reference: {
        double c = std::get<ReferenceParams>(e.params).constant;
        if (c != 1.0 && c != -1.0) return "reference constant must be +1 or -1";
        break;
    }
    case ElementKind::FunctionGenerator: {
        const auto& t = std::get<FunctionGeneratorParams>(e.params).table;
        if (t.size() < 2) return "function table needs at least two breakpoints";
        for (std::size_t i = 0; i < t.size(); ++i) {
            if (!in_unit(t[i].x) || !in_unit(t[i].y)) return "function table entry outside [-1,1]";
            if (i > 0 && !(t[i].x > t[i - 1].x)) return "function table x values must be strictly increasing";
        }
        break;
    }
    default: break;
    }
    return std::nullopt;
}

} // namespace detail

/// Empty result iff the single-driver, arity and parameter-range rules hold.
inline std::vector<ValidationIssue> validate(const Netlist& nl) {
    std::vector<ValidationIssue> out;
    std::unordered_map<std::string, const Element*> by_id;
    for (const auto& e : nl.elements) {
        if (!by_id.emplace(e.id, &e).second)
            out.push_back({e.id, "duplicate-element-id", "element id '" + e.id + "' used more than once"});
    }

    std::unordered_map<std::string, const Net*> nets;
    std::unordered_map<std::string, int> driven_count;
    std::set<std::string> names;
    for (const auto& n : nl.nets) {
        if (!nets.emplace(n.id, &n).second)
            out.push_back({n.driver, "single-driver", "net '" + n.id + "' has more than one driver"});
        if (!by_id.count(n.driver))
            out.push_back({n.driver, "unknown-driver", "net '" + n.id + "' is driven by unknown element '" + n.driver + "'"});
        else if (++driven_count[n.driver] == 2)
            out.push_back({n.driver, "multiple-outputs", "element '" + n.driver + "' drives more than one net"});
        if (!n.name.empty() && !names.insert(n.name).second)
            out.push_back({n.driver, "duplicate-net-name", "net name '" + n.name + "' used more than once"});
    }

    for (const auto& e : nl.elements) {
        const auto [lo, hi] = arity(e.kind());
        if (e.inputs.size() < lo || e.inputs.size() > hi) {
            out.push_back({e.id, "arity", std::string(to_string(e.kind())) + " '" + e.id + "' has " +
                                              std::to_string(e.inputs.size()) + " inputs"});
        }
        for (const auto& in : e.inputs) {
            if (!nets.count(in))
                out.push_back({e.id, "dangling-input", "input '" + in + "' of '" + e.id + "' is not a driven net"});
        }
        if (auto msg = detail::check_params(e)) out.push_back({e.id, "param-range", *msg});
    }

    for (const auto& name : nl.outputs) {
        if (!names.count(name)) out.push_back({"", "unknown-output", "output '" + name + "' names no net"});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Graph queries

namespace detail {

/// Successor lists over element indices: u -> v when v reads the net u drives.
/// Elements for which `keep` is false are left out entirely.
inline std::vector<std::vector<std::size_t>> element_graph(const Netlist& nl,
                                                           const std::function<bool(const Element&)>& keep) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < nl.elements.size(); ++i) index.emplace(nl.elements[i].id, i);
    std::unordered_map<std::string, std::size_t> driver_of_net;
    for (const auto& n : nl.nets) {
        if (auto it = index.find(n.driver); it != index.end()) driver_of_net.emplace(n.id, it->second);
    }
    std::vector<std::vector<std::size_t>> succ(nl.elements.size());
    for (std::size_t v = 0; v < nl.elements.size(); ++v) {
        if (!keep(nl.elements[v])) continue;
        for (const auto& in : nl.elements[v].inputs) {
            auto it = driver_of_net.find(in);
            if (it == driver_of_net.end() || !keep(nl.elements[it->second])) continue;
            auto& s = succ[it->second];
            if (std::find(s.begin(), s.end(), v) == s.end()) s.push_back(v);
        }
    }
    for (auto& s : succ) std::sort(s.begin(), s.end());
    return succ;
}

inline bool not_integrator(const Element& e) { return e.kind() != ElementKind::Integrator; }

} // namespace detail

/// Every elementary cycle that avoids integrators (Johnson's algorithm).
/// Each cycle starts at its lowest-indexed element.
inline std::vector<std::vector<std::string>> algebraic_loops(const Netlist& nl) {
    const auto succ = detail::element_graph(nl, detail::not_integrator);
    const std::size_t n = succ.size();
    std::vector<std::vector<std::string>> cycles;

    for (std::size_t s = 0; s < n; ++s) {
        // Strongly connected component of s within the subgraph of vertices >= s.
        std::vector<char> fwd(n, 0), bwd(n, 0);
        std::vector<std::size_t> work{s};
        fwd[s] = 1;
        while (!work.empty()) {
            auto u = work.back();
            work.pop_back();
            for (auto v : succ[u])
                if (v >= s && !fwd[v]) fwd[v] = 1, work.push_back(v);
        }
        std::vector<std::vector<std::size_t>> pred(n);
        for (std::size_t u = s; u < n; ++u)
            for (auto v : succ[u])
                if (v >= s) pred[v].push_back(u);
        work = {s};
        bwd[s] = 1;
        while (!work.empty()) {
            auto u = work.back();
            work.pop_back();
            for (auto v : pred[u])
                if (!bwd[v]) bwd[v] = 1, work.push_back(v);
        }
        auto in_scc = [&](std::size_t v) { return v >= s && fwd[v] && bwd[v]; };

        std::vector<char> blocked(n, 0);
        std::vector<std::set<std::size_t>> blocked_by(n);
        std::vector<std::size_t> stack;

        std::function<void(std::size_t)> unblock = [&](std::size_t u) {
            blocked[u] = 0;
            auto waiting = std::move(blocked_by[u]);
            blocked_by[u].clear();
            for (auto w : waiting)
                if (blocked[w]) unblock(w);
        };
        std::function<bool(std::size_t)> circuit = [&](std::size_t v) -> bool {
            bool found = false;
            stack.push_back(v);
            blocked[v] = 1;
            for (auto w : succ[v]) {
                if (!in_scc(w)) continue;
                if (w == s) {
                    std::vector<std::string> ids;
                    for (auto i : stack) ids.push_back(nl.elements[i].id);
                    cycles.push_back(std::move(ids));
                    found = true;
                } else if (!blocked[w] && circuit(w)) {
                    found = true;
                }
            }
            if (found) {
                unblock(v);
            } else {
                for (auto w : succ[v])
                    if (in_scc(w)) blocked_by[w].insert(v);
            }
            stack.pop_back();
            return found;
        };
        if (detail::not_integrator(nl.elements[s])) circuit(s);
    }
    return cycles;
}

/// Topological order of every non-integrator element, integrators and references
/// acting as sources. Ties are broken by position in the netlist.
inline std::vector<std::string> evaluation_order(const Netlist& nl) {
    const auto succ = detail::element_graph(nl, detail::not_integrator);
    const std::size_t n = succ.size();
    std::vector<std::size_t> indegree(n, 0);
    for (std::size_t u = 0; u < n; ++u)
        for (auto v : succ[u]) ++indegree[v];

    std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
    std::size_t expected = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!detail::not_integrator(nl.elements[i])) continue;
        ++expected;
        if (indegree[i] == 0) ready.push(i);
    }
    std::vector<std::string> order;
    order.reserve(expected);
    while (!ready.empty()) {
        auto u = ready.top();
        ready.pop();
        order.push_back(nl.elements[u].id);
        for (auto v : succ[u])
            if (--indegree[v] == 0) ready.push(v);
    }
    if (order.size() != expected)
        throw PreconditionError("evaluation_order: netlist contains an algebraic loop");
    return order;
}

} // namespace apc
