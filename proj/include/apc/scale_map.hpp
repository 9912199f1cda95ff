#pragma once

// Amplitude and time scale factors, plus the compiler's sidecar mapping file.

#include "apc/errors.hpp"

#include <json.hpp>

#include <map>
#include <string>
#include <string_view>

namespace apc {

/// problem value = amplitude * machine value
struct SignalScale {
    double amplitude = 1.0;
    bool operator==(const SignalScale&) const = default;
};

/// Problem time t relates to machine time tau by t = lambda * tau.
struct ScaleMap {
    std::map<std::string, SignalScale> signals; ///< keyed by signal name, e.g. "y'"
    double lambda = 1.0;
    double k0 = 1.0;

    [[nodiscard]] double amplitude(const std::string& signal) const {
        auto it = signals.find(signal);
        return it == signals.end() ? 1.0 : it->second.amplitude;
    }
    bool operator==(const ScaleMap&) const = default;
};

/// Where a source signal lives in a compiled netlist.
/// problem value = parity * net value * amplitude_scale
struct SignalRef {
    std::string net;
    int parity = 1;
    double amplitude_scale = 1.0;
    bool operator==(const SignalRef&) const = default;
};

using SignalMap = std::map<std::string, SignalRef>;

struct Sidecar {
    SignalMap signals;
    double lambda = 1.0;
    double k0 = 1.0;
};

inline std::string sidecar_json(const SignalMap& signals, const ScaleMap& scale) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [name, ref] : signals) {
        j[name] = {{"net", ref.net},
                   {"parity", ref.parity},
                   {"amplitude_scale", ref.amplitude_scale},
                   {"lambda", scale.lambda},
                   {"k0", scale.k0}};
    }
    return j.dump(2) + "\n";
}

inline Sidecar parse_sidecar(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("mapping file: ") + e.what());
    }
    if (!j.is_object()) throw FormatError("mapping file: expected a JSON object");
    Sidecar out;
    bool first = true;
    for (const auto& [name, entry] : j.items()) {
        try {
            SignalRef ref{entry.at("net").get<std::string>(), entry.at("parity").get<int>(),
                          entry.at("amplitude_scale").get<double>()};
            if (ref.parity != 1 && ref.parity != -1) throw FormatError("mapping file: parity must be +1 or -1");
            double lambda = entry.value("lambda", 1.0);
            double k0 = entry.value("k0", 1.0);
            if (first) {
                out.lambda = lambda;
                out.k0 = k0;
                first = false;
            } else if (lambda != out.lambda || k0 != out.k0) {
                throw FormatError("mapping file: inconsistent lambda/k0 across entries");
            }
            out.signals[name] = ref;
        } catch (const nlohmann::json::exception&) {
            throw FormatError("mapping file: malformed entry for '" + name + "'");
        }
    }
    return out;
}

} // namespace apc
