#include <catch2/catch_amalgamated.hpp>

#include "apc/compiler.hpp"
#include "apc/dsl/parser.hpp"
#include "apc/dsl/resolve.hpp"
#include "apc/netlist_json.hpp"
#include "apc/oracle.hpp"
#include "apc/simulator.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

using namespace apc;
using Catch::Approx;

namespace {

OdeSystem system_of(const std::string& src) {
    auto p = dsl::parse(src);
    REQUIRE(p.ok());
    auto r = dsl::resolve(*p.program);
    if (!r.ok()) FAIL(r.diagnostics.front().message);
    return *r.system;
}

const std::string sine_src = "system sine\nparam omega = 1\nparam phi = 0.5235987755982988\nvar y order 2\n"
                             "eq y'' = -omega*omega*y\ninit y = sin(phi)\ninit y' = omega*cos(phi)\n"
                             "time 6.283185307179586\noutput y, y'\n";

const std::string product_src =
    "system product\nparam a = 0.5\nparam b = 0.25\nparam c = 0.25\nvar x order 0\neq x = a*(b+c)\ntime 1\noutput x\n";

int kind_count(const Netlist& nl, ElementKind k) {
    int n = 0;
    for (const auto& e : nl.elements) n += e.kind() == k;
    return n;
}

/// Problem-unit value of a mapped signal after running to tau_end.
double mapped_value(const MachineInstance& m, const SignalRef& ref) {
    return m.value(ref.net) * ref.parity * ref.amplitude_scale;
}

double final_oracle(const OdeSystem& sys, const Signal& s) {
    auto sol = oracle_solve(sys);
    return sol[s].back();
}

} // namespace

TEST_CASE("integrator chains alternate sign and store signed initial conditions", "[compiler][chain]") {
    SECTION("second order") {
        NetlistBuilder b;
        const double inits[] = {0.5, 0.866};
        auto c = build_integrator_chain(b, "y", 2, inits, 1.0);
        auto nl = b.take();
        REQUIRE(nl.elements.size() == 2);
        CHECK(c.feedback_element == "int_y_1");
        CHECK(std::get<IntegratorParams>(nl.find_element("int_y_1")->params).ic == -0.866);
        CHECK(std::get<IntegratorParams>(nl.find_element("int_y_0")->params).ic == 0.5);
        CHECK(nl.find_element("int_y_0")->inputs == std::vector<std::string>{"n_int_y_1"});
        CHECK(nl.find_element("int_y_1")->inputs.empty());
        CHECK(c.signals[1].parity == -1);
        CHECK(c.signals[0].parity == 1);
    }
    SECTION("first order") {
        NetlistBuilder b;
        const double inits[] = {0.0};
        auto c = build_integrator_chain(b, "y", 1, inits, 1.0);
        auto nl = b.take();
        REQUIRE(nl.elements.size() == 1);
        CHECK(std::get<IntegratorParams>(nl.elements[0].params).ic == 0.0);
        CHECK_FALSE(std::signbit(std::get<IntegratorParams>(nl.elements[0].params).ic));
        CHECK(c.signals[0].parity == -1);
    }
    SECTION("third order parities follow the integrator count") {
        NetlistBuilder b;
        const double inits[] = {0.0, 0.0, 0.0};
        auto c = build_integrator_chain(b, "y", 3, inits, 1.0);
        REQUIRE(c.integrators.size() == 3);
        for (int j = 1; j <= 3; ++j) {
            const int order = 3 - j;
            CHECK(c.signals[static_cast<std::size_t>(order)].parity == (j % 2 == 0 ? 1 : -1));
        }
    }
    SECTION("initial condition outside the machine interval") {
        NetlistBuilder b;
        const double inits[] = {1.5, 0.0};
        CHECK_THROWS_AS(build_integrator_chain(b, "y", 2, inits, 1.0), ScalingError);
    }
    SECTION("stage gains become coefficients of gain over k0") {
        NetlistBuilder b;
        const double inits[] = {0.0, 0.0};
        const double gains[] = {0.5};
        build_integrator_chain(b, "y", 2, inits, 1.0, gains);
        auto nl = b.take();
        REQUIRE(kind_count(nl, ElementKind::Coefficient) == 1);
        CHECK(std::get<CoefficientParams>(nl.find_element("coef_1")->params).alpha == 0.5);

        NetlistBuilder b2;
        const double big[] = {2.0};
        CHECK_THROWS_AS(build_integrator_chain(b2, "y", 2, inits, 1.0, big), UnscaledCoefficient);
        NetlistBuilder b3;
        CHECK_NOTHROW(build_integrator_chain(b3, "y", 2, inits, 4.0, big));
    }
}

TEST_CASE("expressions synthesize to nets with recorded parity", "[compiler][synthesize]") {
    using namespace dsl;
    const std::vector<std::pair<std::string, double>> params = {{"a", 0.5}, {"b", 0.25}, {"c", 0.25}};

    SECTION("sum of two parameters") {
        auto e = make_binary(BinaryOp::Add, make_name("b"), make_name("c"));
        auto s = synthesize_expression(*e, {}, params);
        CHECK(kind_count(s.fragment, ElementKind::Summer) == 1);
        CHECK(s.parity == -1);
        auto m = new_instance(s.fragment);
        CHECK(m.value(s.net) * s.parity == Approx(0.5).margin(1e-15));
    }
    SECTION("product of a parameter and a sum") {
        auto e = make_mul(make_name("a"), make_binary(BinaryOp::Add, make_name("b"), make_name("c")));
        for (bool opt : {true, false}) {
            auto s = synthesize_expression(*e, {}, params, {1.0, opt});
            CHECK(kind_count(s.fragment, ElementKind::Multiplier) == 1);
            auto m = new_instance(s.fragment);
            CHECK(m.value(s.net) * s.parity == Approx(0.5 * (0.25 + 0.25)).margin(1e-15));
            if (!opt) {
                // both multiplier inputs carry parity +1
                const auto* mul = s.fragment.find_element(NetlistBuilder::driver_of(s.net));
                REQUIRE(mul != nullptr);
                for (const auto& in : mul->inputs) CHECK(m.value(in) >= 0.0);
            }
        }
    }
    SECTION("constant times a mapped signal") {
        SignalMap mapped{{"y", {"n_y", 1, 1.0}}};
        auto s = synthesize_expression(*make_mul(make_number(0.25), make_name("y")), mapped);
        REQUIRE(s.fragment.elements.size() == 1);
        const auto& e = s.fragment.elements[0];
        CHECK(e.kind() == ElementKind::Coefficient);
        CHECK(std::get<CoefficientParams>(e.params).alpha == 0.25);
        CHECK(e.inputs == std::vector<std::string>{"n_y"});
        CHECK(s.parity == 1);

        auto neg = synthesize_expression(*make_mul(make_number(-0.25), make_name("y")), mapped);
        CHECK(neg.parity == -1);
        CHECK(kind_count(neg.fragment, ElementKind::Summer) == 0);
    }
    SECTION("literal addends come from a reference through a coefficient") {
        SignalMap mapped{{"y", {"n_y", 1, 1.0}}};
        auto s = synthesize_expression(*make_binary(BinaryOp::Add, make_number(0.5), make_name("y")), mapped);
        CHECK(kind_count(s.fragment, ElementKind::Reference) == 1);
        CHECK(kind_count(s.fragment, ElementKind::Coefficient) == 1);
        CHECK(kind_count(s.fragment, ElementKind::Summer) == 1);
    }
    SECTION("gain above one is rejected") {
        SignalMap mapped{{"y", {"n_y", 1, 1.0}}};
        try {
            synthesize_expression(*make_mul(make_number(2.0), make_name("y")), mapped);
            FAIL("expected an unscaled coefficient error");
        } catch (const UnscaledCoefficient& e) {
            CHECK(std::string(e.what()).find("unscaled coefficient") != std::string::npos);
            CHECK(e.magnitude() == 2.0);
        }
    }
    SECTION("unmapped leaf") {
        CHECK_THROWS_AS(synthesize_expression(*make_name("q"), {}), CompileError);
    }
}

TEST_CASE("feedback closes the chain through the fewest elements", "[compiler][feedback]") {
    SECTION("unit oscillator: two integrators and one inverter") {
        auto r = compile(system_of("system s\nvar y order 2\neq y'' = -y\ninit y = 0\ninit y' = 1\ntime 1\n"));
        CHECK(r.netlist.elements.size() == 3);
        CHECK(r.report.count(ElementKind::Integrator) == 2);
        CHECK(r.report.count(ElementKind::Summer) == 1);
        CHECK(r.report.inverters == 1);
    }
    SECTION("oscillator with a rate parameter gets one coefficient per stage") {
        const double omega = 0.5, phi = std::numbers::pi / 6;
        auto sys = system_of("system s\nparam omega = 0.5\nparam phi = 0.5235987755982988\nvar y order 2\n"
                             "eq y'' = -omega*omega*y\ninit y = sin(phi)\ninit y' = omega*cos(phi)\ntime 1\n");
        auto r = compile(sys);
        CHECK(r.netlist.elements.size() == 5);
        int pots = 0;
        for (const auto& e : r.netlist.elements) {
            if (const auto* p = std::get_if<CoefficientParams>(&e.params)) {
                ++pots;
                CHECK(p->alpha == Approx(omega).margin(1e-15));
                CHECK(p->param == "omega");
            }
        }
        CHECK(pots == 2);
        // the derivative net is normalized so both integrators start inside [-1, 1]
        CHECK(std::get<IntegratorParams>(r.netlist.find_element("int_y_1")->params).ic == Approx(-std::cos(phi)));
        CHECK(std::get<IntegratorParams>(r.netlist.find_element("int_y_0")->params).ic == Approx(std::sin(phi)));

        auto m = new_instance(r.netlist, {1e-3});
        m.run(std::numbers::pi);
        CHECK(mapped_value(m, r.signals.at("y")) == Approx(std::sin(omega * std::numbers::pi + phi)).margin(1e-9));
        CHECK(mapped_value(m, r.signals.at("y'")) ==
              Approx(omega * std::cos(omega * std::numbers::pi + phi)).margin(1e-9));
    }
    SECTION("algebraic programs have no integrators") {
        auto r = compile(system_of(product_src));
        CHECK(r.report.count(ElementKind::Integrator) == 0);
        CHECK(algebraic_loops(r.netlist).empty());
    }
}

TEST_CASE("sine program compiles to the two-integrator loop", "[compiler][compile]") {
    auto r = compile(system_of(sine_src));
    CHECK(r.report.count(ElementKind::Integrator) == 2);
    CHECK(r.report.count(ElementKind::Summer) == 1);
    CHECK(r.report.inverters == 1);
    CHECK(r.netlist.outputs == std::vector<std::string>{"y", "y'"});
    CHECK(r.netlist.find_net_by_name("y") != nullptr);
    CHECK(r.netlist.find_net_by_name("y'") != nullptr);
    CHECK(validate(r.netlist).empty());
    CHECK(r.signals.size() == 2);

    auto m = new_instance(r.netlist, {1e-3});
    auto tr = m.run(2 * std::numbers::pi);
    double worst = 0.0;
    for (std::size_t i = 0; i < tr.size(); ++i)
        worst = std::max(worst, std::abs(tr["y"][i] * r.signals.at("y").parity - std::sin(tr.times[i] + std::numbers::pi / 6)));
    CHECK(worst < 1e-9);

    const auto text = r.report.format();
    CHECK(text.find("integrators: 2\n") != std::string::npos);
    CHECK(text.find("summers: 1\n") != std::string::npos);
}

TEST_CASE("product program settles at a(b+c)", "[compiler][compile]") {
    auto r = compile(system_of(product_src));
    CHECK(r.report.count(ElementKind::Multiplier) == 1);
    CHECK(r.report.count(ElementKind::Summer) <= 2);
    auto m = new_instance(r.netlist);
    auto tr = m.run(0.01);
    CHECK(tr["x"].back() * r.signals.at("x").parity == Approx(0.5 * (0.25 + 0.25)).margin(1e-15));
    CHECK(r.signals.at("x").parity == 1);
}

TEST_CASE("compile errors", "[compiler][errors]") {
    SECTION("unscaled oscillator rate") {
        auto sys = system_of("system s\nvar y order 2\neq y'' = -4*y\ninit y = 0.1\ninit y' = 0\ntime 1\n");
        CHECK_THROWS_AS(compile(sys), UnscaledCoefficient);
        CHECK_NOTHROW(compile(sys, {2.0}));
    }
    SECTION("unscaled feedback gain") {
        auto sys = system_of("system s\nvar y order 1\neq y' = -2*y\ninit y = 0.1\ntime 1\n");
        CHECK_THROWS_WITH(compile(sys), Catch::Matchers::ContainsSubstring("unscaled coefficient"));
    }
    SECTION("initial value outside the machine interval") {
        auto sys = system_of("system s\nvar y order 2\neq y'' = -y\ninit y = 5\ninit y' = 0\ntime 1\n");
        CHECK_THROWS_AS(compile(sys), ScalingError);
    }
    SECTION("k0 must be positive") {
        CHECK_THROWS_AS(compile(system_of(sine_src), {0.0}), CompileError);
    }
    SECTION("algebraic cycle between order-0 variables is named") {
        OdeSystem sys;
        sys.horizon = 1.0;
        sys.vars.push_back({"x", 0, dsl::make_mul(dsl::make_number(0.5), dsl::make_name("z")), {}, {}});
        sys.vars.push_back({"z", 0, dsl::make_mul(dsl::make_number(0.5), dsl::make_name("x")), {}, {}});
        CHECK_THROWS_WITH(compile(sys), Catch::Matchers::ContainsSubstring("x -> z -> x"));
    }
}

TEST_CASE("lookup tables lower to function generators", "[compiler][lut]") {
    auto sys = system_of("system s\ntable f = (-1, -0.5) (0, 0) (1, 0.5)\nvar y order 1\neq y' = -lut(f, 0.5*y) - 0.25*y\n"
                         "init y = 0.8\ntime 2\n");
    auto r = compile(sys);
    CHECK(r.report.count(ElementKind::FunctionGenerator) == 1);
    auto m = new_instance(r.netlist, {1e-3});
    m.run(sys.horizon);
    // lut(f, 0.5 y) = 0.25 y on [-2, 2], so y' = -0.5 y
    CHECK(mapped_value(m, r.signals.at("y")) == Approx(0.8 * std::exp(-1.0)).margin(1e-9));

    auto big = system_of("system s\ntable g = (-1, -3) (1, 3)\nvar y order 1\neq y' = -lut(g, y)\ninit y = 0.5\ntime 1\n");
    CHECK_THROWS_AS(compile(big), UnscaledCoefficient);
}

TEST_CASE("compile is deterministic", "[compiler][determinism]") {
    for (const auto* src : {&sine_src, &product_src}) {
        auto a = compile(system_of(*src));
        auto b = compile(system_of(*src));
        CHECK(a.netlist == b.netlist);
        CHECK(to_json(a.netlist) == to_json(b.netlist));
        CHECK(sidecar_json(a.signals, a.scale) == sidecar_json(b.signals, b.scale));
    }
}

TEST_CASE("sidecar round-trips the signal map", "[compiler][sidecar]") {
    auto r = compile(system_of(sine_src));
    auto sc = parse_sidecar(sidecar_json(r.signals, r.scale));
    CHECK(sc.lambda == 1.0);
    CHECK(sc.k0 == 1.0);
    REQUIRE(sc.signals.size() == r.signals.size());
    for (const auto& [name, ref] : r.signals) {
        CHECK(sc.signals.at(name).net == ref.net);
        CHECK(sc.signals.at(name).parity == ref.parity);
        CHECK(sc.signals.at(name).amplitude_scale == ref.amplitude_scale);
    }
    CHECK_THROWS_AS(parse_sidecar("{\"y\": 1}"), FormatError);
}

namespace {

std::string coef(std::mt19937& rng, double lim) {
    std::uniform_real_distribution<double> u(-lim, lim);
    double v = std::round(u(rng) * 1000.0) / 1000.0;
    return v < 0 ? "(0 - " + format_number(-v) + ")" : format_number(v);
}

/// A random constant-coefficient linear ODE of order n plus its term count.
std::pair<std::string, int> random_linear(std::mt19937& rng, int n) {
    std::uniform_int_distribution<int> pick(0, 3);
    std::string rhs;
    int terms = 0;
    auto add = [&](const std::string& t) {
        rhs += rhs.empty() ? t : " + " + t;
        ++terms;
    };
    for (int k = 0; k < n; ++k) {
        switch (pick(rng)) {
        case 0: break;
        case 1: add(dsl::signal_name("y", k)); break;
        case 2: add("-" + dsl::signal_name("y", k)); break;
        default: add(coef(rng, 1.0) + "*" + dsl::signal_name("y", k)); break;
        }
    }
    if (pick(rng) == 0) add(coef(rng, 1.0));
    if (rhs.empty()) rhs = "0";
    std::string src = "system r\nvar y order " + std::to_string(n) + "\neq " + dsl::signal_name("y", n) + " = " + rhs + "\n";
    for (int k = 0; k < n; ++k) src += "init " + dsl::signal_name("y", k) + " = 0.1\n";
    src += "time 1\noutput y\n";
    return {src, terms};
}

} // namespace

TEST_CASE("linear ODEs respect the element-count bound", "[compiler][property]") {
    std::mt19937 rng(41);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 1 + trial % 5;
        auto [src, terms] = random_linear(rng, n);
        INFO(src);
        auto r = compile(system_of(src));
        CHECK(r.report.count(ElementKind::Integrator) == n);
        CHECK(r.report.count(ElementKind::Summer) + r.report.count(ElementKind::Coefficient) <= terms + 2);
    }
}

namespace {

/// Two coupled variables with small gains and one product term.
std::string random_coupled(std::mt19937& rng) {
    std::uniform_int_distribution<int> ord(1, 2), word(0, 2), coin(0, 1);
    std::uniform_real_distribution<double> init(-0.5, 0.5);
    const int nu = ord(rng), nw = word(rng);
    std::vector<std::string> usig, wsig;
    for (int k = 0; k < nu; ++k) usig.push_back(dsl::signal_name("u", k));
    for (int k = 0; k < nw; ++k) wsig.push_back(dsl::signal_name("w", k));
    if (nw == 0) wsig.push_back("w");

    auto linear = [&](const std::vector<std::string>& sigs, double lim) {
        std::string s;
        for (const auto& sig : sigs) {
            if (coin(rng)) continue;
            s += (s.empty() ? "" : " + ") + coef(rng, lim) + "*" + sig;
        }
        return s;
    };

    std::string src = "system c\nparam k = " + coef(rng, 0.4) + "\nvar u order " + std::to_string(nu) + "\nvar w order " +
                      std::to_string(nw) + "\n";
    std::vector<std::string> all = usig;
    all.insert(all.end(), wsig.begin(), wsig.end());
    std::string urhs = linear(all, 0.4);
    urhs += (urhs.empty() ? "" : " + ") + std::string("k*") + usig[0] + "*" + wsig[0];
    src += "eq " + dsl::signal_name("u", nu) + " = " + urhs + "\n";
    std::string wrhs = nw == 0 ? linear(usig, 0.4) : linear(all, 0.4);
    if (coin(rng)) wrhs += (wrhs.empty() ? "" : " - ") + std::string("k");
    if (wrhs.empty()) wrhs = "0.25*" + usig[0];
    src += "eq " + (nw == 0 ? std::string("w") : dsl::signal_name("w", nw)) + " = " + wrhs + "\n";
    for (const auto& s : usig) src += "init " + s + " = " + format_number(std::round(init(rng) * 100) / 100) + "\n";
    if (nw > 0)
        for (const auto& s : wsig) src += "init " + s + " = " + format_number(std::round(init(rng) * 100) / 100) + "\n";
    src += "time 1\n";
    return src;
}

} // namespace

TEST_CASE("every mapped net tracks the reference solution through its parity", "[compiler][property]") {
    std::mt19937 rng(7);
    int checked = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const auto src = random_coupled(rng);
        INFO(src);
        auto sys = system_of(src);
        auto ref = oracle_solve(sys);
        for (bool opt : {true, false}) {
            auto r = compile(sys, {1.0, opt});
            CHECK(algebraic_loops(r.netlist).empty());
            auto m = new_instance(r.netlist, {1e-3});
            auto tr = m.run(sys.horizon);
            if (!tr.overloads.empty()) continue;
            for (const auto& s : sys.signals()) {
                INFO(s.name() << " optimize=" << opt);
                CHECK(mapped_value(m, r.signals.at(s.name())) == Approx(ref[s].back()).margin(1e-7));
            }
            ++checked;
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("inverter optimization never changes the trace", "[compiler][property]") {
    std::mt19937 rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        const auto src = random_coupled(rng);
        INFO(src);
        auto sys = system_of(src);
        auto a = compile(sys, {1.0, true});
        auto b = compile(sys, {1.0, false});
        CHECK(a.netlist.elements.size() <= b.netlist.elements.size());
        auto ma = new_instance(a.netlist, {1e-3});
        auto mb = new_instance(b.netlist, {1e-3});
        ma.run(sys.horizon);
        mb.run(sys.horizon);
        for (const auto& s : sys.signals())
            CHECK(mapped_value(ma, a.signals.at(s.name())) == Approx(mapped_value(mb, b.signals.at(s.name()))).margin(1e-9));
    }
}

TEST_CASE("oracle helper agrees with a closed form", "[compiler][oracle]") {
    auto sys = system_of("system s\nvar y order 1\neq y' = -y\ninit y = 1\ntime 1\n");
    CHECK(final_oracle(sys, {"y", 0}) == Approx(std::exp(-1.0)).margin(1e-9));
}
