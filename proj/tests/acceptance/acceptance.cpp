// Runs each acceptance criterion and prints one PASS/FAIL line per criterion.

#include "apc/autoscaler.hpp"
#include "apc/compiler.hpp"
#include "apc/dsl/parser.hpp"
#include "apc/dsl/resolve.hpp"
#include "apc/fabric.hpp"
#include "apc/oracle.hpp"
#include "apc/simulator.hpp"
#include "support/netlists.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

using namespace apc;
namespace fs = std::filesystem;

namespace {

constexpr double pi = std::numbers::pi;

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(3) << v;
    return s.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

OdeSystem load(const std::string& name) {
    auto parsed = dsl::parse(slurp(fs::path(APC_PROGRAMS_DIR) / name));
    if (!parsed.ok()) throw std::runtime_error(name + ": parse failed");
    auto resolved = dsl::resolve(*parsed.program);
    if (!resolved.ok()) throw std::runtime_error(name + ": resolve failed");
    return *resolved.system;
}

int apc_exit(const std::string& args) {
    const std::string cmd = std::string("\"") + APC_BINARY + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Verdict integrator_law() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (double k0 : {1.0, 1e3}) {
        SimConfig cfg;
        cfg.dt = 1e-4 / k0;
        auto tr = new_instance(test::integrator_law_netlist(k0), cfg).run(1.0 / k0);
        worst = std::max(worst, std::abs(tr["out"].back() + 1.0));
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-6 && secs < 1.0, "max |out + 1| = " + fmt(worst) + " in " + fmt(secs) + " s"};
}

Verdict worked_example() {
    const auto t0 = std::chrono::steady_clock::now();
    auto sys = load("sine.apc");
    auto scaled = autoscale(sys);
    auto result = compile(scaled.system, {}, scaled.scale);
    auto deviation = [&](double resolution) {
        SimConfig cfg;
        cfg.dt = 1e-4;
        cfg.resolution = resolution;
        auto tr = descale_trace(new_instance(result.netlist, cfg).run(scaled.system.horizon), result.signals, result.scale.lambda);
        double worst = 0.0;
        for (std::size_t i = 0; i < tr.size(); ++i)
            worst = std::max(worst, std::abs(tr["y"][i] - std::sin(tr.times[i] + pi / 6)));
        return worst;
    };
    const double ideal = deviation(0.0);
    const double coarse = deviation(1e-4);
    const double secs = seconds_since(t0);
    return {ideal <= 1e-4 && coarse <= 5e-3 && secs < 5.0,
            "ideal " + fmt(ideal) + ", resolution 1e-4 " + fmt(coarse) + " in " + fmt(secs) + " s"};
}

Verdict dataflow() {
    auto sys = load("product.apc");
    auto scaled = autoscale(sys);
    auto result = compile(scaled.system, {}, scaled.scale);
    SimConfig cfg;
    cfg.dt = 1e-3;
    auto tr = descale_trace(new_instance(result.netlist, cfg).run(scaled.system.horizon), result.signals, result.scale.lambda);
    const double x = tr["x"].back();
    const int mul = result.report.count(ElementKind::Multiplier);
    const int sum = result.report.count(ElementKind::Summer);
    return {std::abs(x - 0.25) <= 1e-4 && mul == 1 && sum <= 2,
            "x = " + fmt(x) + ", multipliers " + std::to_string(mul) + ", summers " + std::to_string(sum)};
}

Verdict energy() {
    SimConfig cfg;
    cfg.dt = 1e-4;
    cfg.sample_every = 10;
    auto tr = new_instance(test::oscillator_netlist(), cfg).run(20 * pi);
    const auto& y = tr["y"];
    const auto& v = tr["ydot"];
    const double e0 = y[0] * y[0] + v[0] * v[0];
    double drift = 0.0;
    for (std::size_t i = 0; i < tr.size(); ++i) drift = std::max(drift, std::abs(y[i] * y[i] + v[i] * v[i] - e0));
    return {drift <= 1e-3, "max drift of y^2 + ydot^2 over 10 periods = " + fmt(drift)};
}

Verdict scaling_round_trip() {
    auto sys = load("big.apc");
    OracleConfig ocfg;
    ocfg.samples = 4000;
    auto oracle = oracle_solve(sys, ocfg);

    auto scaled = autoscale(sys);
    auto result = compile(scaled.system, {}, scaled.scale);
    const double lambda = scaled.scale.lambda;
    SimConfig cfg;
    // machine samples land on the oracle grid
    cfg.sample_every = 10;
    cfg.dt = scaled.system.horizon / (static_cast<double>(ocfg.samples) * 10.0);
    auto machine = new_instance(result.netlist, cfg).run(scaled.system.horizon);

    double peak = 0.0;
    for (const auto& s : machine.series)
        for (double x : s) peak = std::max(peak, std::abs(x));
    auto problem = descale_trace(machine, result.signals, result.scale.lambda);

    double worst = 0.0, scale = 0.0;
    bool aligned = problem.size() == oracle.t.size();
    for (const auto& sig : sys.signals()) {
        const auto name = sig.name();
        if (!problem.has(name)) continue;
        const auto& ref = oracle[sig];
        for (double x : ref) scale = std::max(scale, std::abs(x));
        for (std::size_t i = 0; aligned && i < ref.size(); ++i) {
            aligned = aligned && std::abs(problem.times[i] - oracle.t[i]) <= 1e-9 * lambda * (1 + oracle.t[i]);
            worst = std::max(worst, std::abs(problem[name][i] - ref[i]));
        }
    }
    const double relative = worst / scale;

    const auto dir = fs::temp_directory_path() / ("apc_accept_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const auto nl = (dir / "unstable.json").string();
    int compiled = apc_exit("compile \"" + std::string(APC_PROGRAMS_DIR) + "/unstable.apc\" --scale none -o \"" + nl + "\"");
    int strict = apc_exit("run \"" + nl + "\" --tend 3 --strict-overload --trace \"" + (dir / "u.csv").string() + "\"");
    fs::remove_all(dir);

    const bool pass = machine.overloads.empty() && peak >= 0.5 && aligned && relative <= 1e-3 && compiled == 0 &&
                      strict == 5;
    return {pass, "overloads " + std::to_string(machine.overloads.size()) + ", peak " + fmt(peak) +
                      ", relative error vs oracle " + fmt(relative) + ", strict unscaled exit " +
                      std::to_string(strict)};
}

Verdict time_scale_equivalence() {
    SimConfig slow, fast;
    slow.dt = 1e-4;
    fast.dt = 1e-7;
    auto a = new_instance(test::oscillator_netlist(pi / 6, 1.0, 1.0), slow).run(2 * pi);
    auto b = new_instance(test::oscillator_netlist(pi / 6, 1.0, 1e3), fast).run(2 * pi * 1e-3);
    if (a.size() != b.size()) return {false, "sample counts differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size())};
    double worst = 0.0;
    for (std::size_t c = 0; c < a.series.size(); ++c)
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.series[c][i] - b.series[c][i]));
    return {worst <= 1e-6, std::to_string(a.size()) + " samples, max difference " + fmt(worst)};
}

Verdict fabric_mapping() {
    auto sine = compile(autoscale(load("sine.apc")).system);
    bool fits = true;
    PatchAssignment placed;
    try {
        placed = map(sine.netlist, builtin_that());
    } catch (const Error&) {
        fits = false;
    }

    std::map<std::string, int> deficit;
    auto six = compile(autoscale(load("six.apc")).system);
    try {
        map(six.netlist, builtin_that());
    } catch (const ResourceError& e) {
        deficit = e.deficits();
    }

    bool identical = false;
    if (fits) {
        SimConfig cfg;
        cfg.dt = 1e-4;
        auto x = new_instance(sine.netlist, cfg).run(2 * pi);
        auto y = new_instance(rename(sine.netlist, placed), cfg).run(2 * pi);
        identical = x.times == y.times && x.series == y.series;
    }
    const bool pass = fits && deficit == std::map<std::string, int>{{"Integrator", 1}} && identical;
    std::string d;
    for (const auto& [k, n] : deficit) d += k + ": " + std::to_string(n);
    return {pass, std::string("sine ") + (fits ? "fits" : "does not fit") + ", six integrators deficit {" + d +
                      "}, renamed trace " + (identical ? "identical" : "differs")};
}

Verdict mode_machine() {
    const std::set<std::pair<Mode, Mode>> table = {
        {Mode::IC, Mode::IC},   {Mode::OP, Mode::OP},   {Mode::HALT, Mode::HALT}, {Mode::IC, Mode::OP},
        {Mode::OP, Mode::HALT}, {Mode::HALT, Mode::OP}, {Mode::HALT, Mode::IC}};
    const std::array<Mode, 3> modes = {Mode::IC, Mode::OP, Mode::HALT};
    std::mt19937 rng(2024);
    std::uniform_int_distribution<int> pick(0, 2);
    int checked = 0, wrong = 0;
    SimConfig cfg;
    cfg.dt = 1e-3;
    for (int seq = 0; seq < 200; ++seq) {
        auto m = new_instance(test::oscillator_netlist(), cfg);
        for (int k = 0; k < 20; ++k) {
            const Mode from = m.mode(), to = modes[static_cast<std::size_t>(pick(rng))];
            bool accepted = true;
            try {
                m.set_mode(to);
            } catch (const ModeError&) {
                accepted = false;
            }
            ++checked;
            if (accepted != table.contains({from, to}) || m.mode() != (accepted ? to : from)) ++wrong;
            if (m.mode() == Mode::OP) m.step();
        }
    }

    // OP -> HALT -> OP continuity: no jump bigger than one step's motion (|y'| <= 1)
    auto m = new_instance(test::oscillator_netlist(), cfg);
    auto first = m.run(1.0);
    const double frozen = m.value("y");
    m.set_mode(Mode::HALT);
    const bool held = m.value("y") == frozen;
    m.set_mode(Mode::OP);
    auto second = m.run(2.0);
    double jump = std::abs(second["y"].front() - first["y"].back());
    for (std::size_t i = 1; i < second.size(); ++i) jump = std::max(jump, std::abs(second["y"][i] - second["y"][i - 1]));
    const bool continuous = held && jump <= cfg.dt * (1 + 1e-9);
    return {wrong == 0 && continuous, std::to_string(checked) + " transitions, " + std::to_string(wrong) +
                                          " disagreements, largest resume jump " + fmt(jump)};
}

Verdict determinism() {
    const auto dir = fs::temp_directory_path() / ("apc_accept_det_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    const auto nl = (dir / "sine.json").string();
    const int compiled = apc_exit("compile \"" + std::string(APC_PROGRAMS_DIR) + "/sine.apc\" -o \"" + nl + "\"");
    const int r1 = apc_exit("run \"" + nl + "\" --tend 6.283185307179586 --trace \"" + (dir / "a.csv").string() + "\"");
    const int r2 = apc_exit("run \"" + nl + "\" --tend 6.283185307179586 --trace \"" + (dir / "b.csv").string() + "\"");
    const auto a = slurp(dir / "a.csv"), b = slurp(dir / "b.csv");
    const auto oa = slurp(dir / "a.overloads.csv"), ob = slurp(dir / "b.overloads.csv");
    fs::remove_all(dir);
    const bool pass = compiled == 0 && r1 == 0 && r2 == 0 && !a.empty() && a == b && oa == ob;
    return {pass, std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "different")};
}

} // namespace

int main() {
    const std::vector<std::function<Verdict()>> criteria = {integrator_law, worked_example,        dataflow,
                                                            energy,         scaling_round_trip,    time_scale_equivalence,
                                                            fabric_mapping, mode_machine,          determinism};
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i]();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        if (!v.pass) ++failures;
        std::cout << "criterion " << i + 1 << ": " << (v.pass ? "PASS" : "FAIL") << " - " << v.detail << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
