#include <catch2/catch_amalgamated.hpp>

#include "apc/dsl/parser.hpp"
#include "apc/dsl/printer.hpp"
#include "apc/dsl/resolve.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace apc;
using namespace apc::dsl;
using Catch::Approx;

namespace {

const char* sine_program = R"(system sine
param omega = 1
param phi = 0.5235987755982988
var y order 2
eq y'' = -omega*omega*y
init y = sin(phi)
init y' = omega*cos(phi)   # phase-shifted start
time 6.283185307179586
output y, y'
)";

bool mentions(const std::vector<Diagnostic>& diags, std::string_view text) {
    for (const auto& d : diags)
        if (d.message.find(text) != std::string::npos) return true;
    return false;
}

ResolveResult parse_and_resolve(std::string_view src) {
    auto p = parse(src);
    REQUIRE(p.ok());
    return resolve(*p.program);
}

struct RandomProgram {
    std::mt19937 rng;
    std::vector<std::string> names{"y", "z", "omega", "k"};

    int pick(int n) { return static_cast<int>(rng() % static_cast<unsigned>(n)); }

    ExprPtr expr(int depth, bool runtime) {
        int choice = depth <= 0 ? pick(2) : pick(runtime ? 6 : 5);
        switch (choice) {
        case 0: return make_number(std::ldexp(static_cast<double>(pick(2000)), -pick(8)));
        case 1: return make_name(names[static_cast<std::size_t>(pick(4))], runtime ? pick(3) : 0);
        case 2: return make_negate(expr(depth - 1, runtime));
        case 3:
        case 4: {
            static constexpr BinaryOp ops[] = {BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul};
            return make_binary(ops[pick(3)], expr(depth - 1, runtime), expr(depth - 1, runtime));
        }
        default: return make_call("lut", {make_name("tab"), expr(depth - 1, runtime)});
        }
    }

    Program program() {
        Program p;
        auto add = [&](auto node) { p.statements.push_back({std::move(node), {}}); };
        add(SystemStmt{"random"});
        const int n = 1 + pick(8);
        for (int i = 0; i < n; ++i) {
            const std::string name = names[static_cast<std::size_t>(pick(4))];
            switch (pick(8)) {
            case 0: add(ParamStmt{name, expr(3, false)}); break;
            case 1: add(VarStmt{name, pick(5)}); break;
            case 2: add(EqStmt{name, pick(4), expr(4, true)}); break;
            case 3: add(InitStmt{name, pick(3), expr(2, false)}); break;
            case 4: add(TableStmt{"tab", {{-1.0, 0.5}, {0.0, -0.25}, {1.0, 1.0}}}); break;
            case 5: add(TimeStmt{expr(1, false)}); break;
            case 6: add(OutputStmt{{Name{name, pick(3)}, Name{"z", 0}}}); break;
            default: add(BoundStmt{name, pick(2), make_number(2.5)}); break;
            }
        }
        return p;
    }
};

} // namespace

TEST_CASE("parse the oscillator equation", "[dsl][parse]") {
    auto r = parse("system osc\nvar y order 2\neq y'' = -omega*omega*y\n");
    REQUIRE(r.ok());
    const auto& eq = std::get<EqStmt>(r.program->statements[2].node);
    CHECK(eq.name == "y");
    CHECK(eq.derivative == 2);
    CHECK(to_source(*eq.rhs) == "-omega * omega * y");
}

TEST_CASE("parse diagnostics", "[dsl][parse]") {
    SECTION("empty input") {
        auto r = parse("");
        REQUIRE_FALSE(r.ok());
        CHECK(mentions(r.diagnostics, "missing system header"));
        CHECK(r.diagnostics.size() == 1);
    }
    SECTION("division") {
        auto r = parse("system s\neq y'' = y / 2\n");
        REQUIRE_FALSE(r.ok());
        CHECK(mentions(r.diagnostics, "division not supported"));
        CHECK(r.diagnostics[0].loc.line == 2);
        CHECK(r.diagnostics[0].loc.column == 12);
    }
    SECTION("runtime transcendental") {
        auto r = parse("system s\neq y' = sin(y)\n");
        REQUIRE_FALSE(r.ok());
        CHECK(mentions(r.diagnostics, "use a lut table"));
    }
    SECTION("lut in constant context") {
        auto r = parse("system s\ninit y = lut(t, 0)\n");
        CHECK(mentions(r.diagnostics, "lut is not allowed"));
    }
    SECTION("unknown statement and bad character recover per line") {
        auto r = parse("system s\nfoo bar\nparam a = 1 $\nparam b = 2\n");
        REQUIRE_FALSE(r.ok());
        CHECK(r.diagnostics.size() == 2);
        CHECK(mentions(r.diagnostics, "unknown statement"));
    }
    SECTION("duplicate header") {
        auto r = parse("system a\nsystem b\n");
        CHECK(mentions(r.diagnostics, "duplicate system header"));
    }
}

TEST_CASE("diagnostics stay inside the text", "[dsl][parse][property]") {
    const std::string text = sine_program;
    std::mt19937 rng(3);
    const std::string junk = "/$()*,'=+-#\n 0.5e";
    for (int trial = 0; trial < 300; ++trial) {
        std::string src = text;
        for (int k = 0; k < 3; ++k) src[rng() % src.size()] = junk[rng() % junk.size()];
        auto r = parse(src);
        int lines = 1 + static_cast<int>(std::count(src.begin(), src.end(), '\n'));
        for (const auto& d : r.diagnostics) {
            CHECK(d.loc.line >= 1);
            CHECK(d.loc.line <= lines);
            CHECK(d.loc.column >= 1);
        }
        if (r.ok()) (void)resolve(*r.program);
    }
}

TEST_CASE("pretty-print then parse is a fixpoint", "[dsl][property]") {
    RandomProgram gen{std::mt19937(17)};
    for (int i = 0; i < 500; ++i) {
        auto prog = gen.program();
        auto text = to_source(prog);
        auto r = parse(text);
        INFO(text);
        REQUIRE(r.ok());
        CHECK(same_structure(prog, *r.program));
        CHECK(to_source(*r.program) == text);
    }
    auto sine = parse(sine_program);
    REQUIRE(sine.ok());
    auto again = parse(to_source(*sine.program));
    REQUIRE(again.ok());
    CHECK(same_structure(*sine.program, *again.program));
}

TEST_CASE("resolve folds constant initial conditions", "[dsl][resolve]") {
    auto r = parse_and_resolve(sine_program);
    REQUIRE(r.ok());
    const auto& sys = *r.system;
    CHECK(sys.name == "sine");
    REQUIRE(sys.vars.size() == 1);
    const auto& y = sys.vars[0];
    CHECK(y.order == 2);
    CHECK(y.inits[0] == Approx(0.5).margin(1e-15));
    CHECK(y.inits[1] == Approx(std::sqrt(3.0) / 2).margin(1e-15));
    CHECK(sys.horizon == Approx(2 * std::numbers::pi));
    REQUIRE(sys.outputs.size() == 2);
    CHECK(sys.outputs[1] == Signal{"y", 1});
    CHECK(*sys.param("omega") == 1.0);
}

TEST_CASE("resolve diagnostics", "[dsl][resolve]") {
    SECTION("missing initial condition") {
        auto r = parse_and_resolve("system s\nvar y order 2\neq y'' = -y\ninit y = 0.5\ntime 1\n");
        REQUIRE_FALSE(r.ok());
        CHECK(mentions(r.diagnostics, "missing initial condition for 'y''"));
    }
    SECTION("highest derivative on the right") {
        auto r = parse_and_resolve("system s\nvar y order 2\neq y'' = -y''\ninit y = 0\ninit y' = 0\ntime 1\n");
        REQUIRE_FALSE(r.ok());
        CHECK(mentions(r.diagnostics, "derivative order too high"));
    }
    SECTION("highest derivative of another variable") {
        auto r = parse_and_resolve(
            "system s\nvar y order 1\nvar z order 1\neq y' = z'\neq z' = y\ninit y = 0\ninit z = 0\ntime 1\n");
        CHECK(mentions(r.diagnostics, "derivative order too high"));
    }
    SECTION("unbound name") {
        auto r = parse_and_resolve("system s\nvar y order 1\neq y' = q*y\ninit y = 0\ntime 1\n");
        CHECK(mentions(r.diagnostics, "unbound name 'q'"));
    }
    SECTION("non-constant init") {
        auto r = parse_and_resolve("system s\nvar y order 1\nvar z order 1\neq y' = z\neq z' = y\ninit y = z\ninit z = 0\ntime 1\n");
        CHECK(mentions(r.diagnostics, "must be constant"));
    }
    SECTION("order mismatch") {
        auto r = parse_and_resolve("system s\nvar y order 2\neq y' = y\ninit y = 0\ninit y' = 0\ntime 1\n");
        CHECK(mentions(r.diagnostics, "equation order mismatch"));
    }
    SECTION("horizon") {
        CHECK(mentions(parse_and_resolve("system s\nvar y order 1\neq y' = y\ninit y = 0\n").diagnostics,
                       "missing time horizon"));
        CHECK(mentions(parse_and_resolve("system s\nvar y order 1\neq y' = y\ninit y = 0\ntime -1\n").diagnostics,
                       "time horizon must be positive"));
    }
    SECTION("tables") {
        auto r = parse_and_resolve("system s\ntable f = (0, 0) (0, 1)\nvar y order 1\neq y' = lut(f, y)\ninit y = 0\ntime 1\n");
        CHECK(mentions(r.diagnostics, "strictly increasing"));
        auto r2 = parse_and_resolve("system s\nvar y order 1\neq y' = lut(g, y)\ninit y = 0\ntime 1\n");
        CHECK(mentions(r2.diagnostics, "unknown table"));
    }
}

TEST_CASE("algebraic programs resolve without initial conditions", "[dsl][resolve]") {
    auto r = parse_and_resolve(
        "system product\nparam a = 0.5\nparam b = 0.25\nparam c = 0.25\nvar x order 0\neq x = a*(b+c)\ntime 1\noutput x\n");
    REQUIRE(r.ok());
    CHECK(r.system->vars[0].order == 0);
    CHECK(r.system->vars[0].inits.empty());
    CHECK(r.system->signals() == std::vector<Signal>{{"x", 0}});
}

TEST_CASE("resolve never accepts the highest derivative on a right-hand side", "[dsl][resolve][property]") {
    std::mt19937 rng(29);
    for (int trial = 0; trial < 200; ++trial) {
        const int order = 1 + static_cast<int>(rng() % 4);
        const int used = static_cast<int>(rng() % static_cast<unsigned>(order + 1));
        std::string src = "system s\nvar y order " + std::to_string(order) + "\neq y" + std::string(static_cast<std::size_t>(order), '\'') +
                          " = 0.5*y" + std::string(static_cast<std::size_t>(used), '\'') + "\n";
        for (int k = 0; k < order; ++k) src += "init y" + std::string(static_cast<std::size_t>(k), '\'') + " = 0\n";
        src += "time 1\n";
        auto r = parse_and_resolve(src);
        CHECK(r.ok() == (used < order));
    }
}
