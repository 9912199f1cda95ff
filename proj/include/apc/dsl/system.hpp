#pragma once

// The resolved, explicit ODE system handed to the scaler and the compiler.

#include "apc/dsl/ast.hpp"

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace apc {

/// A variable or one of its derivatives, e.g. {"y", 1} for y'.
struct Signal {
    std::string var;
    int order = 0;

    auto operator<=>(const Signal&) const = default;
    [[nodiscard]] std::string name() const { return dsl::signal_name(var, order); }
};

inline std::optional<Signal> parse_signal(std::string_view s) {
    std::size_t primes = 0;
    while (primes < s.size() && s[s.size() - 1 - primes] == '\'') ++primes;
    if (primes == s.size()) return std::nullopt;
    return Signal{std::string(s.substr(0, s.size() - primes)), static_cast<int>(primes)};
}

struct Variable {
    std::string name;
    int order = 0;
    /// Right-hand side for the highest derivative (or the value itself when order is 0).
    dsl::ExprPtr rhs;
    /// Initial values of derivative orders 0..order-1.
    std::vector<double> inits;
    /// d(signal k)/dt = stage_gains[k] * signal k+1, for k < order-1. All 1 before scaling.
    std::vector<double> stage_gains;
};

struct Table {
    std::string name;
    std::vector<Breakpoint> points;
};

struct OdeSystem {
    std::string name;
    std::vector<std::pair<std::string, double>> params;
    std::vector<Variable> vars;
    std::map<std::string, Table> tables;
    double horizon = 0.0;
    std::vector<Signal> outputs;
    std::map<Signal, double> bounds; ///< user `bound` annotations

    [[nodiscard]] const Variable* find_var(std::string_view n) const {
        for (const auto& v : vars)
            if (v.name == n) return &v;
        return nullptr;
    }
    [[nodiscard]] Variable* find_var(std::string_view n) {
        for (auto& v : vars)
            if (v.name == n) return &v;
        return nullptr;
    }
    [[nodiscard]] std::optional<double> param(std::string_view n) const {
        for (const auto& [k, v] : params)
            if (k == n) return v;
        return std::nullopt;
    }
    /// Every integrated signal (orders 0..n-1) plus every algebraic variable.
    [[nodiscard]] std::vector<Signal> signals() const {
        std::vector<Signal> out;
        for (const auto& v : vars) {
            if (v.order == 0) out.push_back({v.name, 0});
            for (int k = 0; k < v.order; ++k) out.push_back({v.name, k});
        }
        return out;
    }
};

} // namespace apc
