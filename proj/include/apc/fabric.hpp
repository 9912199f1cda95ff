#pragma once

// Placement of a netlist onto a fixed inventory behind a full crossbar.

#include "apc/errors.hpp"
#include "apc/format.hpp"
#include "apc/machine.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <vector>

namespace apc {

/// Slot classes. Single-input summers may sit in an Inverter or a Summer slot.
enum class SlotKind { Integrator, Summer, Inverter, Multiplier, Coefficient, FunctionGenerator, Reference };

inline constexpr std::array<SlotKind, 7> all_slot_kinds = {SlotKind::Integrator, SlotKind::Summer,
                                                          SlotKind::Inverter,   SlotKind::Multiplier,
                                                          SlotKind::Coefficient, SlotKind::FunctionGenerator,
                                                          SlotKind::Reference};

inline std::string_view display_name(SlotKind k) {
    switch (k) {
    case SlotKind::Integrator: return "Integrator";
    case SlotKind::Summer: return "Summer";
    case SlotKind::Inverter: return "Inverter";
    case SlotKind::Multiplier: return "Multiplier";
    case SlotKind::Coefficient: return "Coefficient";
    case SlotKind::FunctionGenerator: return "FunctionGenerator";
    case SlotKind::Reference: return "Reference";
    }
    return "?";
}

/// Inventory key used in spec files.
inline std::string_view spec_key(SlotKind k) {
    switch (k) {
    case SlotKind::Integrator: return "integrator";
    case SlotKind::Summer: return "summer";
    case SlotKind::Inverter: return "inverter";
    case SlotKind::Multiplier: return "multiplier";
    case SlotKind::Coefficient: return "coefficient";
    case SlotKind::FunctionGenerator: return "function_generator";
    case SlotKind::Reference: return "reference";
    }
    return "?";
}

inline std::string_view slot_prefix(SlotKind k) {
    switch (k) {
    case SlotKind::Integrator: return "INT";
    case SlotKind::Summer: return "SUM";
    case SlotKind::Inverter: return "INV";
    case SlotKind::Multiplier: return "MUL";
    case SlotKind::Coefficient: return "POT";
    case SlotKind::FunctionGenerator: return "FG";
    case SlotKind::Reference: return "REF";
    }
    return "?";
}

struct MachineSpec {
    std::string name;
    std::map<SlotKind, int> inventory;
    bool full_crossbar = true;

    [[nodiscard]] int supply(SlotKind k) const {
        auto it = inventory.find(k);
        return it == inventory.end() ? 0 : it->second;
    }
};

/// THE ANALOG THING. Its two reference outputs are the +1 and -1 machine units.
inline MachineSpec builtin_that() {
    return {"that",
            {{SlotKind::Integrator, 5},
             {SlotKind::Summer, 4},
             {SlotKind::Inverter, 4},
             {SlotKind::Multiplier, 2},
             {SlotKind::Coefficient, 8},
             {SlotKind::FunctionGenerator, 0},
             {SlotKind::Reference, 2}},
            true};
}

/// {name, inventory: {kind: count}, crossbar: "full"}
inline MachineSpec parse_machine_spec(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("machine spec: ") + e.what());
    }
    if (!j.is_object()) throw FormatError("machine spec: expected a JSON object");
    for (const auto& [key, _] : j.items())
        if (key != "name" && key != "inventory" && key != "crossbar")
            throw FormatError("machine spec: unknown key '" + key + "'");
    if (!j.contains("name") || !j["name"].is_string()) throw FormatError("machine spec: 'name' must be a string");
    if (!j.contains("inventory") || !j["inventory"].is_object())
        throw FormatError("machine spec: 'inventory' must be an object");
    MachineSpec spec;
    spec.name = j["name"].get<std::string>();
    if (j.contains("crossbar")) {
        if (!j["crossbar"].is_string() || j["crossbar"].get<std::string>() != "full")
            throw FormatError("machine spec: only crossbar \"full\" is supported");
    }
    for (const auto& [key, value] : j["inventory"].items()) {
        auto kind = std::find_if(all_slot_kinds.begin(), all_slot_kinds.end(),
                                 [&](SlotKind k) { return key == spec_key(k) || key == display_name(k); });
        if (kind == all_slot_kinds.end()) throw FormatError("machine spec: unknown element kind '" + key + "'");
        if (!value.is_number_integer() || value.get<long long>() < 0 || value.get<long long>() > 1'000'000)
            throw FormatError("machine spec: count for '" + key + "' must be a non-negative integer");
        spec.inventory[*kind] = value.get<int>();
    }
    return spec;
}

struct Patch {
    std::string source;      ///< slot driving the connection
    std::string destination; ///< slot receiving it
    std::size_t input = 0;   ///< destination input index
    bool operator==(const Patch&) const = default;
};

struct PatchAssignment {
    std::string machine;
    std::vector<std::pair<std::string, std::string>> slots; ///< element id -> slot, in netlist order
    std::vector<Patch> patches;                             ///< sorted by destination slot, then input
    std::vector<std::pair<std::string, double>> pots;       ///< POT slot -> alpha
    std::vector<std::pair<std::string, double>> ics;        ///< INT slot -> initial condition

    [[nodiscard]] const std::string& slot_of(const std::string& element) const {
        for (const auto& [id, slot] : slots)
            if (id == element) return slot;
        throw PreconditionError("element '" + element + "' is not assigned");
    }
};

inline SlotKind demand_kind(const Element& e) {
    switch (e.kind()) {
    case ElementKind::Summer: return e.inputs.size() == 1 ? SlotKind::Inverter : SlotKind::Summer;
    case ElementKind::Integrator: return SlotKind::Integrator;
    case ElementKind::Multiplier: return SlotKind::Multiplier;
    case ElementKind::Coefficient: return SlotKind::Coefficient;
    case ElementKind::FunctionGenerator: return SlotKind::FunctionGenerator;
    case ElementKind::Reference: return SlotKind::Reference;
    }
    return SlotKind::Summer;
}

/// Demand minus supply per kind, with inverters overflowing into summer slots.
inline std::map<std::string, int> deficits(const Netlist& nl, const MachineSpec& spec) {
    std::map<SlotKind, int> demand;
    for (const auto& e : nl.elements) ++demand[demand_kind(e)];
    std::map<std::string, int> out;
    for (auto k : all_slot_kinds) {
        if (k == SlotKind::Summer || k == SlotKind::Inverter) continue;
        const int d = demand[k] - spec.supply(k);
        if (d > 0) out[std::string(display_name(k))] = d;
    }
    const int overflow = std::max(0, demand[SlotKind::Inverter] - spec.supply(SlotKind::Inverter));
    const int d = demand[SlotKind::Summer] + overflow - spec.supply(SlotKind::Summer);
    if (d > 0) out[std::string(display_name(SlotKind::Summer))] = d;
    return out;
}

namespace detail {

inline std::pair<int, int> slot_rank(const std::string& slot) {
    for (std::size_t i = 0; i < all_slot_kinds.size(); ++i) {
        const auto prefix = slot_prefix(all_slot_kinds[i]);
        if (slot.compare(0, prefix.size(), prefix) == 0 && slot.size() > prefix.size() &&
            std::isdigit(static_cast<unsigned char>(slot[prefix.size()])))
            return {static_cast<int>(i), std::stoi(slot.substr(prefix.size()))};
    }
    return {static_cast<int>(all_slot_kinds.size()), 0};
}

} // namespace detail

/// Assigns every element a slot or throws ResourceError with the deficits.
inline PatchAssignment map(const Netlist& nl, const MachineSpec& spec) {
    if (auto issues = validate(nl); !issues.empty())
        throw StructuralError("cannot map an invalid netlist: " + issues[0].rule + " at '" + issues[0].element + "'");
    if (!spec.full_crossbar) throw PreconditionError("only full-crossbar machines are supported");
    if (auto d = deficits(nl, spec); !d.empty()) {
        std::string what = "machine '" + spec.name + "' is too small:";
        for (const auto& [kind, n] : d) what += " " + kind + " short by " + std::to_string(n) + ";";
        what.pop_back();
        throw ResourceError(what, d);
    }

    PatchAssignment a;
    a.machine = spec.name;
    std::map<SlotKind, int> used;
    std::map<std::string, std::string> slot_of;
    auto take = [&](SlotKind k) { return std::string(slot_prefix(k)) + std::to_string(used[k]++); };
    for (const auto& e : nl.elements) {
        SlotKind k = demand_kind(e);
        if (k == SlotKind::Inverter && used[k] >= spec.supply(k)) k = SlotKind::Summer;
        const auto slot = take(k);
        slot_of[e.id] = slot;
        a.slots.emplace_back(e.id, slot);
        if (const auto* p = std::get_if<CoefficientParams>(&e.params)) a.pots.emplace_back(slot, p->alpha);
        if (const auto* p = std::get_if<IntegratorParams>(&e.params)) a.ics.emplace_back(slot, p->ic);
    }
    for (const auto& e : nl.elements) {
        for (std::size_t i = 0; i < e.inputs.size(); ++i)
            a.patches.push_back({slot_of.at(nl.find_net(e.inputs[i])->driver), slot_of.at(e.id), i});
    }
    auto by_slot = [](const std::string& x, const std::string& y) { return detail::slot_rank(x) < detail::slot_rank(y); };
    std::sort(a.patches.begin(), a.patches.end(), [&](const Patch& x, const Patch& y) {
        if (x.destination != y.destination) return by_slot(x.destination, y.destination);
        return x.input < y.input;
    });
    auto by_first = [&](const auto& x, const auto& y) { return by_slot(x.first, y.first); };
    std::sort(a.pots.begin(), a.pots.end(), by_first);
    std::sort(a.ics.begin(), a.ics.end(), by_first);
    return a;
}

/// One line per connection, then potentiometer settings and initial conditions.
inline std::string patch_instructions(const PatchAssignment& a) {
    std::string out;
    for (const auto& p : a.patches)
        out += "connect " + p.source + ".out -> " + p.destination + ".in" + std::to_string(p.input) + "\n";
    for (const auto& [slot, alpha] : a.pots) out += "set " + slot + " = " + format_number(alpha) + "\n";
    for (const auto& [slot, ic] : a.ics) out += "set " + slot + ".ic = " + format_number(ic) + "\n";
    return out;
}

/// The netlist with element and net ids replaced by slot names. Element order,
/// net names and outputs are unchanged.
inline Netlist rename(const Netlist& nl, const PatchAssignment& a) {
    std::map<std::string, std::string> slot;
    for (const auto& [id, s] : a.slots) slot[id] = s;
    std::map<std::string, std::string> net_id;
    for (const auto& n : nl.nets) net_id[n.id] = slot.at(n.driver);
    Netlist out = nl;
    for (auto& e : out.elements) {
        e.id = slot.at(e.id);
        for (auto& in : e.inputs) in = net_id.at(in);
    }
    for (auto& n : out.nets) {
        n.driver = slot.at(n.driver);
        n.id = net_id.at(n.id);
    }
    return out;
}

} // namespace apc
