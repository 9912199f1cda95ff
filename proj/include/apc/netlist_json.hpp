#pragma once

// Netlist <-> JSON. Field names are fixed; unknown keys are rejected.

#include "apc/errors.hpp"
#include "apc/machine.hpp"

#include <json.hpp>

#include <initializer_list>
#include <string>

namespace apc {

namespace detail {

inline void expect_keys(const nlohmann::json& obj, std::string_view what,
                        std::initializer_list<std::string_view> required,
                        std::initializer_list<std::string_view> optional = {}) {
    if (!obj.is_object()) throw FormatError(std::string(what) + ": expected a JSON object");
    for (auto key : required) {
        if (!obj.contains(std::string(key)))
            throw FormatError(std::string(what) + ": missing key '" + std::string(key) + "'");
    }
    for (const auto& [key, _] : obj.items()) {
        bool known = std::find(required.begin(), required.end(), key) != required.end() ||
                     std::find(optional.begin(), optional.end(), key) != optional.end();
        if (!known) throw FormatError(std::string(what) + ": unknown key '" + key + "'");
    }
}

template <typename T>
T get_as(const nlohmann::json& obj, const char* key, std::string_view what) {
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw FormatError(std::string(what) + ": bad value for '" + key + "'");
    }
}

inline nlohmann::ordered_json params_to_json(const ElementParams& params) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, IntegratorParams>) {
                j["ic"] = p.ic;
                j["k0"] = p.k0;
            } else if constexpr (std::is_same_v<T, CoefficientParams>) {
                j["alpha"] = p.alpha;
                if (!p.param.empty()) j["param"] = p.param;
            } else if constexpr (std::is_same_v<T, FunctionGeneratorParams>) {
                auto table = nlohmann::ordered_json::array();
                for (const auto& b : p.table) table.push_back({b.x, b.y});
                j["table"] = table;
            } else if constexpr (std::is_same_v<T, ReferenceParams>) {
                j["constant"] = p.constant;
            }
        },
        params);
    return j;
}

inline ElementParams params_from_json(ElementKind kind, const nlohmann::json& j, const std::string& id) {
    const std::string what = "params of '" + id + "'";
    switch (kind) {
    case ElementKind::Summer: expect_keys(j, what, {}); return SummerParams{};
    case ElementKind::Multiplier: expect_keys(j, what, {}); return MultiplierParams{};
    case ElementKind::Integrator:
        expect_keys(j, what, {"ic", "k0"});
        return IntegratorParams{get_as<double>(j, "ic", what), get_as<double>(j, "k0", what)};
    case ElementKind::Coefficient: {
        expect_keys(j, what, {"alpha"}, {"param"});
        CoefficientParams p{get_as<double>(j, "alpha", what), {}};
        if (j.contains("param")) p.param = get_as<std::string>(j, "param", what);
        return p;
    }
    case ElementKind::FunctionGenerator: {
        expect_keys(j, what, {"table"});
        FunctionGeneratorParams p;
        const auto& t = j.at("table");
        if (!t.is_array()) throw FormatError(what + ": table must be an array");
        for (const auto& row : t) {
            if (!row.is_array() || row.size() != 2 || !row[0].is_number() || !row[1].is_number())
                throw FormatError(what + ": table rows must be [x, y] pairs");
            p.table.push_back({row[0].get<double>(), row[1].get<double>()});
        }
        return p;
    }
    case ElementKind::Reference:
        expect_keys(j, what, {"constant"});
        return ReferenceParams{get_as<double>(j, "constant", what)};
    }
    throw FormatError(what + ": unknown kind");
}

} // namespace detail

inline nlohmann::ordered_json to_json(const Netlist& nl) {
    nlohmann::ordered_json j;
    auto elements = nlohmann::ordered_json::array();
    for (const auto& e : nl.elements) {
        nlohmann::ordered_json ej;
        ej["id"] = e.id;
        ej["kind"] = std::string(to_string(e.kind()));
        ej["params"] = detail::params_to_json(e.params);
        ej["inputs"] = e.inputs;
        elements.push_back(std::move(ej));
    }
    auto nets = nlohmann::ordered_json::array();
    for (const auto& n : nl.nets) nets.push_back({{"id", n.id}, {"driver", n.driver}, {"name", n.name}});
    j["elements"] = std::move(elements);
    j["nets"] = std::move(nets);
    j["outputs"] = nl.outputs;
    return j;
}

inline std::string serialize(const Netlist& nl) { return to_json(nl).dump(2) + "\n"; }

inline Netlist netlist_from_json(const nlohmann::json& j) {
    using detail::expect_keys;
    using detail::get_as;
    expect_keys(j, "netlist", {"elements", "nets", "outputs"});
    Netlist nl;
    if (!j.at("elements").is_array() || !j.at("nets").is_array() || !j.at("outputs").is_array())
        throw FormatError("netlist: elements, nets and outputs must be arrays");
    for (const auto& ej : j.at("elements")) {
        expect_keys(ej, "element", {"id", "kind", "params", "inputs"});
        Element e;
        e.id = get_as<std::string>(ej, "id", "element");
        auto kind_name = get_as<std::string>(ej, "kind", "element '" + e.id + "'");
        auto kind = parse_kind(kind_name);
        if (!kind) throw FormatError("element '" + e.id + "': unknown kind '" + kind_name + "'");
        e.params = detail::params_from_json(*kind, ej.at("params"), e.id);
        e.inputs = get_as<std::vector<std::string>>(ej, "inputs", "element '" + e.id + "'");
        nl.elements.push_back(std::move(e));
    }
    for (const auto& nj : j.at("nets")) {
        expect_keys(nj, "net", {"id", "driver", "name"});
        nl.nets.push_back({get_as<std::string>(nj, "id", "net"), get_as<std::string>(nj, "driver", "net"),
                           get_as<std::string>(nj, "name", "net")});
    }
    nl.outputs = get_as<std::vector<std::string>>(j, "outputs", "netlist");
    return nl;
}

inline Netlist deserialize(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("netlist: invalid JSON: ") + e.what());
    }
    return netlist_from_json(j);
}

} // namespace apc
