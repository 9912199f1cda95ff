#pragma once

// The `apc` command line: check, compile, run, sweep and map.
//
// Exit codes: 0 ok, 1 usage, 2 parse (or unreadable netlist), 3 compile or
// resolve, 4 scaling or resources, 5 overload in strict mode.

#include "apc/autoscaler.hpp"
#include "apc/compiler.hpp"
#include "apc/dsl/parser.hpp"
#include "apc/dsl/resolve.hpp"
#include "apc/fabric.hpp"
#include "apc/netlist_json.hpp"
#include "apc/scale_map.hpp"
#include "apc/simulator.hpp"
#include "apc/trace.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

namespace apc {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 1;
inline constexpr int parse = 2;
inline constexpr int compile = 3;
inline constexpr int scaling = 4;
inline constexpr int overload = 5;
} // namespace exit_code

namespace cli {

namespace fs = std::filesystem;

/// Raised for problems that map to the usage exit code.
struct UsageError : Error {
    using Error::Error;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read '" + path + "'");
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write '" + path + "'");
    out << text;
    if (!out) throw UsageError("cannot write '" + path + "'");
}

/// foo.json -> foo<suffix>; other names get the suffix appended.
inline std::string replace_suffix(const std::string& path, std::string_view old_suffix, std::string_view new_suffix) {
    if (path.size() >= old_suffix.size() && path.compare(path.size() - old_suffix.size(), old_suffix.size(), old_suffix) == 0)
        return path.substr(0, path.size() - old_suffix.size()) + std::string(new_suffix);
    return path + std::string(new_suffix);
}

inline std::string sidecar_path(const std::string& netlist_path) { return replace_suffix(netlist_path, ".json", ".map.json"); }

inline Netlist load_netlist(const std::string& path) {
    auto nl = deserialize(read_file(path));
    if (auto issues = validate(nl); !issues.empty())
        throw FormatError("invalid netlist: " + issues[0].rule + " at '" + issues[0].element + "': " + issues[0].message);
    return nl;
}

/// Coefficient ids addressed by NAME: the element itself or every pot tagged NAME.
inline std::vector<std::string> coefficients_named(const Netlist& nl, const std::string& name) {
    std::vector<std::string> ids;
    for (const auto& e : nl.elements) {
        const auto* p = std::get_if<CoefficientParams>(&e.params);
        if (p && (e.id == name || p->param == name)) ids.push_back(e.id);
    }
    return ids;
}

inline std::pair<std::string, double> parse_assignment(const std::string& text) {
    auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("expected NAME=VALUE, got '" + text + "'");
    auto v = parse_number(text.substr(eq + 1));
    if (!v) throw UsageError("bad value in '" + text + "'");
    return {text.substr(0, eq), *v};
}

struct Range {
    std::string name;
    std::vector<double> values;
};

/// NAME=a:b:s -> a, a+s, ... up to b (inclusive, with rounding slack).
inline Range parse_range(const std::string& text) {
    auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("expected NAME=START:STOP:STEP, got '" + text + "'");
    Range r{text.substr(0, eq), {}};
    std::vector<double> parts;
    std::stringstream ss(text.substr(eq + 1));
    std::string item;
    while (std::getline(ss, item, ':')) {
        auto v = parse_number(item);
        if (!v) throw UsageError("bad number '" + item + "' in '" + text + "'");
        parts.push_back(*v);
    }
    if (parts.size() != 3) throw UsageError("expected NAME=START:STOP:STEP, got '" + text + "'");
    const double a = parts[0], b = parts[1], s = parts[2];
    if (!(s > 0.0) || b < a) throw UsageError("empty sweep range '" + text + "'");
    const double n = std::floor((b - a) / s + 1e-9);
    if (n > 1e6) throw UsageError("sweep range too long");
    for (int i = 0; i <= static_cast<int>(n); ++i) r.values.push_back(a + i * s);
    return r;
}

inline std::size_t step_count(double tend, double dt) {
    return tend > 0.0 ? static_cast<std::size_t>(std::ceil(tend / dt * (1.0 - 1e-12))) : 0;
}

struct Diagnostics {
    std::ostream& err;
    const std::string& path;
    void operator()(const std::vector<dsl::Diagnostic>& ds) const {
        for (const auto& d : ds) err << d.format(path) << "\n";
    }
};

/// Source text -> resolved system, or the exit code to stop with.
inline std::variant<OdeSystem, int> load_system(const std::string& path, std::ostream& err) {
    const auto text = read_file(path);
    auto parsed = dsl::parse(text);
    if (!parsed.ok()) {
        Diagnostics{err, path}(parsed.diagnostics);
        return exit_code::parse;
    }
    auto resolved = dsl::resolve(*parsed.program);
    if (!resolved.ok()) {
        Diagnostics{err, path}(resolved.diagnostics);
        return exit_code::compile;
    }
    return *resolved.system;
}

// --- subcommands -------------------------------------------------------------

struct CheckArgs {
    std::string source;
};

inline int cmd_check(const CheckArgs& a, std::ostream& out, std::ostream& err) {
    auto sys = load_system(a.source, err);
    if (auto* code = std::get_if<int>(&sys)) return *code;
    const auto& s = std::get<OdeSystem>(sys);
    out << "ok: " << s.name << " (" << s.vars.size() << " variables, " << s.signals().size() << " signals)\n";
    return exit_code::ok;
}

struct CompileArgs {
    std::string source;
    std::string scale = "auto";
    double k0 = 1.0;
    double lambda = 1.0;
    bool no_optimize = false;
    std::string output;
};

inline int cmd_compile(const CompileArgs& a, std::ostream& out, std::ostream& err) {
    auto loaded = load_system(a.source, err);
    if (auto* code = std::get_if<int>(&loaded)) return *code;
    const auto& sys = std::get<OdeSystem>(loaded);
    const bool optimize = !a.no_optimize;

    ScaledSystem scaled = a.scale == "auto" ? autoscale(sys, LambdaTarget{a.lambda}, a.k0, optimize)
                                            : time_scale(identity_scale(sys), LambdaTarget{a.lambda}, a.k0, optimize);
    auto result = compile(scaled.system, {a.k0, optimize}, scaled.scale);

    const std::string path = a.output.empty() ? replace_suffix(a.source, ".apc", ".json") : a.output;
    write_file(path, serialize(result.netlist));
    write_file(sidecar_path(path), sidecar_json(result.signals, result.scale));
    out << result.report.format();
    out << "horizon: " << format_number(scaled.system.horizon) << "\n";
    out << "netlist: " << path << "\n";
    out << "map: " << sidecar_path(path) << "\n";
    return exit_code::ok;
}

struct RunArgs {
    std::string netlist;
    double tend = 0.0;
    double dt = 0.0;
    double resolution = 0.0;
    int adc_bits = 12;
    std::string trace;
    bool problem_units = false;
    std::string map;
    bool strict = false;
    std::vector<std::string> sets;
};

inline void apply_sets(MachineInstance& m, const std::vector<std::pair<std::string, double>>& sets) {
    for (const auto& [name, value] : sets) {
        auto ids = coefficients_named(m.netlist(), name);
        if (ids.empty()) throw UsageError("no coefficient named or tagged '" + name + "'");
        if (!(value >= 0.0 && value <= 1.0)) throw UsageError("coefficient value for '" + name + "' must lie in [0, 1]");
        for (const auto& id : ids) m.set_coefficient(id, value);
    }
}

inline int cmd_run(const RunArgs& a, std::ostream& out, std::ostream&) {
    auto nl = load_netlist(a.netlist);
    std::vector<std::pair<std::string, double>> sets;
    for (const auto& s : a.sets) sets.push_back(parse_assignment(s));
    if (!(a.tend >= 0.0)) throw UsageError("--tend must be non-negative");

    SimConfig cfg;
    cfg.dt = a.dt;
    cfg.resolution = a.resolution;
    cfg.adc_bits = a.adc_bits;
    cfg.strict_overload = a.strict;
    const double dt = a.dt > 0.0 ? a.dt : default_dt(nl);
    cfg.sample_every = std::max<std::size_t>(1, step_count(a.tend, dt) / 1000);

    std::optional<Sidecar> sidecar;
    if (a.problem_units) sidecar = parse_sidecar(read_file(a.map.empty() ? sidecar_path(a.netlist) : a.map));

    MachineInstance m(nl, cfg);
    apply_sets(m, sets);
    Trace tr = m.run(a.tend);

    if (sidecar) tr = descale_trace(tr, *sidecar);
    const std::string trace_path = a.trace.empty() ? replace_suffix(a.netlist, ".json", ".trace.csv") : a.trace;
    std::ostringstream csv, over;
    write_trace_csv(csv, tr);
    write_overloads_csv(over, tr.overloads);
    write_file(trace_path, csv.str());
    write_file(replace_suffix(trace_path, ".csv", ".overloads.csv"), over.str());

    out << "samples: " << tr.size() << "\n";
    out << "overloads: " << tr.overloads.size() << "\n";
    for (const auto& name : nl.outputs) {
        auto r = m.read_adc(name);
        out << "adc " << name << " = " << format_number(r.value) << " (code " << r.code << ")\n";
    }
    if (a.resolution > 0.0) {
        SimConfig ideal = cfg;
        ideal.resolution = 0.0;
        ideal.strict_overload = false;
        MachineInstance ref(nl, ideal);
        apply_sets(ref, sets);
        Trace itr = ref.run(a.tend);
        if (sidecar) itr = descale_trace(itr, *sidecar);
        double dev = 0.0;
        for (std::size_t c = 0; c < tr.series.size(); ++c)
            for (std::size_t i = 0; i < tr.size(); ++i) dev = std::max(dev, std::abs(tr.series[c][i] - itr.series[c][i]));
        out << "max deviation from ideal: " << format_number(dev) << "\n";
    }
    out << "trace: " << trace_path << "\n";
    return exit_code::ok;
}

struct SweepArgs {
    std::string netlist;
    std::string param;
    double tend = 0.0;
    double dt = 0.0;
    double resolution = 0.0;
    std::string out_dir = ".";
    int workers = 0;
};

inline int sweep_workers(int requested) {
    if (const char* env = std::getenv("APC_WORKERS")) {
        auto v = parse_number(env);
        if (!v || *v < 1 || *v != std::floor(*v)) throw UsageError("APC_WORKERS must be a positive integer");
        return static_cast<int>(*v);
    }
    if (requested > 0) return requested;
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

inline int cmd_sweep(const SweepArgs& a, std::ostream& out, std::ostream&) {
    auto nl = load_netlist(a.netlist);
    const auto range = parse_range(a.param);
    if (coefficients_named(nl, range.name).empty())
        throw UsageError("sweep parameter '" + range.name + "' does not name a coefficient");
    for (double v : range.values)
        if (!(v >= 0.0 && v <= 1.0)) throw UsageError("sweep values must lie in [0, 1]");
    if (!(a.tend >= 0.0)) throw UsageError("--tend must be non-negative");
    const int workers = sweep_workers(a.workers);

    SimConfig cfg;
    cfg.dt = a.dt;
    cfg.resolution = a.resolution;
    const double dt = a.dt > 0.0 ? a.dt : default_dt(nl);
    cfg.sample_every = std::max<std::size_t>(1, step_count(a.tend, dt) / 1000);

    std::vector<Trace> traces(range.values.size());
    std::vector<std::string> errors(range.values.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i; (i = next++) < range.values.size();) {
            try {
                MachineInstance m(nl, cfg);
                apply_sets(m, {{range.name, range.values[i]}});
                traces[i] = m.run(a.tend);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers), range.values.size());
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (!e.empty()) throw Error(e);

    fs::create_directories(a.out_dir);
    std::ostringstream summary;
    summary << range.name;
    for (const auto& o : nl.outputs) summary << ',' << o;
    summary << ",overloads\n";
    for (std::size_t i = 0; i < traces.size(); ++i) {
        std::ostringstream name, csv;
        name << "run_" << std::setw(3) << std::setfill('0') << i << ".csv";
        write_trace_csv(csv, traces[i]);
        write_file((fs::path(a.out_dir) / name.str()).string(), csv.str());
        summary << format_number(range.values[i]);
        for (const auto& s : traces[i].series) summary << ',' << format_number(s.back());
        summary << ',' << traces[i].overloads.size() << '\n';
    }
    write_file((fs::path(a.out_dir) / "summary.csv").string(), summary.str());
    out << "runs: " << traces.size() << "\n";
    out << "summary: " << (fs::path(a.out_dir) / "summary.csv").string() << "\n";
    return exit_code::ok;
}

struct MapArgs {
    std::string netlist;
    std::string machine = "that";
    std::string output;
};

inline int cmd_map(const MapArgs& a, std::ostream& out, std::ostream& err) {
    auto nl = load_netlist(a.netlist);
    MachineSpec spec;
    if (a.machine == "that") {
        spec = builtin_that();
    } else {
        try {
            spec = parse_machine_spec(read_file(a.machine));
        } catch (const FormatError& e) {
            err << "error: " << e.what() << "\n";
            return exit_code::usage;
        }
    }
    try {
        auto text = patch_instructions(map(nl, spec));
        if (a.output.empty()) out << text;
        else {
            write_file(a.output, text);
            out << "patch: " << a.output << "\n";
        }
    } catch (const ResourceError& e) {
        err << "error: " << e.what() << "\n";
        for (const auto& [kind, n] : e.deficits()) err << "deficit " << kind << ": " << n << "\n";
        return exit_code::scaling;
    }
    return exit_code::ok;
}

} // namespace cli

/// Runs one command line (without the program name).
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"apc: analog computer compiler and simulator", "apc"};
    app.require_subcommand(1);

    cli::CheckArgs check;
    auto* c_check = app.add_subcommand("check", "parse and resolve a program");
    c_check->add_option("source", check.source, "program file")->required();

    cli::CompileArgs comp;
    auto* c_compile = app.add_subcommand("compile", "compile a program to a netlist and signal map");
    c_compile->add_option("source", comp.source, "program file")->required();
    c_compile->add_option("--scale", comp.scale, "amplitude scaling")->check(CLI::IsMember({"auto", "none"}));
    c_compile->add_option("--k0", comp.k0, "integrator rate")->check(CLI::PositiveNumber);
    c_compile->add_option("--lambda", comp.lambda, "time scale factor (problem time per machine time)")
        ->check(CLI::PositiveNumber);
    c_compile->add_flag("--no-optimize", comp.no_optimize, "keep every inverter");
    c_compile->add_option("-o,--output", comp.output, "netlist path (default: source with .json)");

    cli::RunArgs run;
    auto* c_run = app.add_subcommand("run", "simulate a netlist");
    c_run->add_option("netlist", run.netlist, "netlist JSON")->required();
    c_run->add_option("--tend", run.tend, "machine time to run to")->required();
    c_run->add_option("--dt", run.dt, "step size (default from k0)")->check(CLI::PositiveNumber);
    c_run->add_option("--resolution", run.resolution, "value grid, 0 for ideal")->check(CLI::Range(0.0, 1.0));
    c_run->add_option("--adc-bits", run.adc_bits, "ADC resolution")->check(CLI::Range(1, 32));
    c_run->add_option("--trace", run.trace, "trace CSV path");
    c_run->add_flag("--problem-units", run.problem_units, "descale the trace with the signal map");
    c_run->add_option("--map", run.map, "signal map (default: netlist with .map.json)");
    c_run->add_flag("--strict-overload", run.strict, "abort on the first overload");
    c_run->add_option("--set", run.sets, "coefficient update NAME=VALUE")->take_all();

    cli::SweepArgs sweep;
    auto* c_sweep = app.add_subcommand("sweep", "run once per parameter value");
    c_sweep->add_option("netlist", sweep.netlist, "netlist JSON")->required();
    c_sweep->add_option("--param", sweep.param, "NAME=START:STOP:STEP")->required();
    c_sweep->add_option("--tend", sweep.tend, "machine time to run to")->required();
    c_sweep->add_option("--dt", sweep.dt, "step size")->check(CLI::PositiveNumber);
    c_sweep->add_option("--resolution", sweep.resolution, "value grid")->check(CLI::Range(0.0, 1.0));
    c_sweep->add_option("--out-dir", sweep.out_dir, "directory for run files and summary.csv");
    c_sweep->add_option("--workers", sweep.workers, "concurrent runs (APC_WORKERS overrides)")->check(CLI::PositiveNumber);

    cli::MapArgs mapa;
    auto* c_map = app.add_subcommand("map", "place a netlist on a machine");
    c_map->add_option("netlist", mapa.netlist, "netlist JSON")->required();
    c_map->add_option("--machine", mapa.machine, "'that' or a machine spec JSON file");
    c_map->add_option("-o,--output", mapa.output, "patch file (default: standard output)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_code::ok;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        if (app.get_subcommands().empty()) err << app.help();
        return exit_code::usage;
    }

    try {
        if (c_check->parsed()) return cli::cmd_check(check, out, err);
        if (c_compile->parsed()) return cli::cmd_compile(comp, out, err);
        if (c_run->parsed()) return cli::cmd_run(run, out, err);
        if (c_sweep->parsed()) return cli::cmd_sweep(sweep, out, err);
        if (c_map->parsed()) return cli::cmd_map(mapa, out, err);
    } catch (const cli::UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return exit_code::usage;
    } catch (const OverloadError& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::overload;
    } catch (const ScalingError& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::scaling;
    } catch (const CompileError& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::compile;
    } catch (const FormatError& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::parse;
    } catch (const StructuralError& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::parse;
    } catch (const PreconditionError& e) {
        err << "usage error: " << e.what() << "\n";
        return exit_code::usage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::usage;
    }
    return exit_code::usage;
}

} // namespace apc
