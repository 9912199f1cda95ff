#pragma once

// Sampled simulation output and its CSV forms.

#include "apc/errors.hpp"
#include "apc/format.hpp"

#include <algorithm>
#include <ostream>
#include <string>
#include <vector>

namespace apc {

struct OverloadEvent {
    double time = 0.0;
    std::string element;
    double magnitude = 0.0;
    bool operator==(const OverloadEvent&) const = default;
};

struct Trace {
    std::string time_label = "tau"; ///< "tau" for machine units, "t" after descaling
    std::vector<double> times;
    std::vector<std::string> names;
    std::vector<std::vector<double>> series; ///< series[i] belongs to names[i]
    std::vector<OverloadEvent> overloads;

    bool operator==(const Trace&) const = default;

    [[nodiscard]] std::size_t size() const noexcept { return times.size(); }

    [[nodiscard]] const std::vector<double>& operator[](const std::string& name) const {
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw PreconditionError("trace has no signal '" + name + "'");
        return series[static_cast<std::size_t>(it - names.begin())];
    }
    [[nodiscard]] bool has(const std::string& name) const {
        return std::find(names.begin(), names.end(), name) != names.end();
    }
};

inline void write_trace_csv(std::ostream& out, const Trace& tr) {
    out << tr.time_label;
    for (const auto& n : tr.names) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
        out << format_number(tr.times[i]);
        for (const auto& s : tr.series) out << ',' << format_number(s[i]);
        out << '\n';
    }
}

inline void write_overloads_csv(std::ostream& out, const std::vector<OverloadEvent>& events) {
    out << "time,element,magnitude\n";
    for (const auto& e : events) out << format_number(e.time) << ',' << e.element << ',' << format_number(e.magnitude) << '\n';
}

} // namespace apc
