#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dense_oracle.hpp"
#include "qqm/quantile_model.hpp"
#include "qqm/random.hpp"

using namespace qqm;

namespace {

SdeParams fig_params() { return SdeParams{1.0, 0.0, 0.7, 4.0, -0.2}; }

GeneratorSpec small_spec(Layout layout) {
    GeneratorSpec s;
    s.n_qubits = 3;
    s.depth = 2;
    s.layout = layout;
    s.z_map = {FeatureMapKind::ChebyshevTower, Pauli::Y, Variable::Z};
    s.t_map = FeatureMapSpec{FeatureMapKind::Product, Pauli::X, Variable::T};
    return s;
}

} // namespace

TEST_CASE("identity ansatz on the main-text layout") {
    GeneratorSpec s;
    s.n_qubits = 6;
    s.depth = 2;
    s.layout = Layout::MainText;
    s.z_map = {FeatureMapKind::Product, Pauli::X, Variable::Z};
    s.t_map = FeatureMapSpec{FeatureMapKind::Product, Pauli::Y, Variable::T};
    Generator g(s);
    CHECK(g.evaluate(Eigen::VectorXd::Zero(g.parameter_count()), 0.0, 0.0).value == doctest::Approx(6.0).epsilon(1e-15));
    CHECK(g.output_bound() == 6.0);
}

TEST_CASE("six-qubit sandwich matches the dense oracle") {
    GeneratorSpec s;
    s.n_qubits = 6;
    s.depth = 2;
    s.t_map = FeatureMapSpec{FeatureMapKind::Product, Pauli::Y, Variable::T};
    Rng rng(4);
    for (int i = 0; i < 12; ++i) s.init_angles.push_back(rng.uniform(-3, 3));
    Generator g(s);
    const Eigen::VectorXd th = g.uniform_theta(8);
    for (int k = 0; k < 3; ++k) {
        const double z = rng.uniform(-1, 1), t = rng.uniform(0, 0.5);
        const double ref = oracle::expectation(g.program(), g.costs(), th, {z, t});
        CHECK(std::abs(g.evaluate(th, z, t).value - ref) <= 1e-12);
        CHECK(std::abs(g.evaluate(th, z, t).value) <= g.output_bound());
    }
}

TEST_CASE("floating boundary is exact at the boundary time") {
    const auto p = fig_params();
    BoundaryMode b;
    b.kind = BoundaryKind::Floating;
    b.u0 = InitialProfile::analytic(p, 0.0);
    Generator g(small_spec(Layout::Sandwich), b);
    Rng rng(12);
    for (int trial = 0; trial < 5; ++trial) {
        const Eigen::VectorXd th = g.uniform_theta(rng.next_u64());
        for (int i = 0; i <= 200; ++i) {
            const double z = -0.99 + 1.98 * i / 200.0;
            CHECK(std::abs(g.evaluate(th, z, 0.0).value - analytic_qf(p, z, 0.0)) <= 1e-12);
        }
        const auto out = g.evaluate_with_derivatives(th, 0.3, 0.0, {true, true, true});
        const auto q = analytic_qf_jet(p, 0.3, 0.0);
        CHECK(std::abs(*out.dz - q.dz) <= 1e-12);
        CHECK(std::abs(*out.dzz - q.dzz) <= 1e-11);
    }
    CHECK_THROWS_AS(Generator(small_spec(Layout::Sandwich), BoundaryMode{BoundaryKind::Floating}), ConfigError);
}

TEST_CASE("derivatives against finite differences, both paths") {
    Rng rng(31);
    BoundaryMode floating;
    floating.kind = BoundaryKind::Floating;
    floating.u0 = InitialProfile::from_function([](double z) {
        return ProfileValue{std::sin(z) + z * z, std::cos(z) + 2 * z, -std::sin(z) + 2};
    });
    for (auto layout : {Layout::MainText, Layout::Sandwich}) {
        for (const auto& b : {BoundaryMode{}, floating}) {
            auto s = small_spec(layout);
            s.z_map.kind = FeatureMapKind::Product;
            Generator g(s, b);
            const Eigen::VectorXd th = g.uniform_theta(rng.next_u64());
            const double z = rng.uniform(-0.6, 0.6), t = rng.uniform(0.05, 0.5);
            const auto out = g.evaluate_with_derivatives(th, z, t, {true, true, true});
            const double h = 1e-4;
            auto f = [&](double zz, double tt) { return g.evaluate(th, zz, tt).value; };
            CHECK(std::abs(*out.dz - (f(z + h, t) - f(z - h, t)) / (2 * h)) <= 1e-6);
            CHECK(std::abs(*out.dt - (f(z, t + h) - f(z, t - h)) / (2 * h)) <= 1e-6);
            const double d2 = (g.evaluate_with_derivatives(th, z + h, t, {true, false, false}).dz.value() -
                               g.evaluate_with_derivatives(th, z - h, t, {true, false, false}).dz.value()) / (2 * h);
            CHECK(std::abs(*out.dzz - d2) <= 1e-6);

            const Jet j = g.jet(th, z, t);
            CHECK(std::abs(j.value - out.value) <= 1e-12);
            CHECK(std::abs(j.dz - *out.dz) <= 1e-10);
            CHECK(std::abs(j.dzz - *out.dzz) <= 1e-9);
            CHECK(std::abs(j.dt - *out.dt) <= 1e-10);
        }
    }
    auto s = small_spec(Layout::Sandwich);
    s.t_map.reset();
    Generator g(s);
    CHECK_THROWS_AS(g.evaluate_with_derivatives(g.uniform_theta(1), 0.1, 0.0, {false, false, true}), ConfigError);
}

TEST_CASE("sampling") {
    auto s = small_spec(Layout::Sandwich);
    CostOperator constant;
    constant.global_weight = 2.5;
    s.costs = {constant};
    Generator flat(s);
    for (double v : flat.sample(flat.uniform_theta(1), 0.2, 50, 3)) CHECK(v == 0.0);

    Generator g(small_spec(Layout::Sandwich));
    const Eigen::VectorXd th = g.uniform_theta(2);
    CHECK(g.sample(th, 0.1, 100, 9) == g.sample(th, 0.1, 100, 9));
    CHECK(g.sample(th, 0.1, 100, 9) == g.sample(th, 0.1, 100, 9, 3));

    // the analytic quantile plugged in through the floating wrapper at t_b
    const auto p = fig_params();
    BoundaryMode b;
    b.kind = BoundaryKind::Floating;
    b.u0 = InitialProfile::analytic(p, 0.0);
    auto one = small_spec(Layout::MainText);
    one.n_qubits = 1;
    one.depth = 1;
    Generator ga(one, b);
    const auto xs = ga.sample(ga.uniform_theta(5), 0.0, 100000, 77);
    CHECK(ks_statistic(xs, [&](double x) { return analytic_cdf(p, x, 0.0); }) <= 0.01);
}

TEST_CASE("model JSON round trip is bit exact") {
    auto s = small_spec(Layout::Sandwich);
    s.init_angles = {0.1, 1.0 / 3.0, -2.0, 1e-17, 0.5, std::nextafter(1.0, 2.0)};
    CostOperator c = CostOperator::total_z(3, 0.7071067811865476);
    c.terms[1].weight = -1.0 / 7.0;
    s.costs = {c};
    BoundaryMode b;
    b.kind = BoundaryKind::Floating;
    b.u0 = InitialProfile::analytic(fig_params(), 0.0);
    b.pin_points = {-0.5, 0.5};
    Generator g(s, b);
    FittedModel m(g, g.uniform_theta(42), {7, 100, 1.25e-7, "propagate"});

    const auto path = std::filesystem::temp_directory_path() / "qqm_model_roundtrip.json";
    save_model(m, path.string());
    const FittedModel back = load_model(path.string());
    std::filesystem::remove(path);
    CHECK(back.theta() == m.theta());
    CHECK(back.generator().spec().init_angles == s.init_angles);
    CHECK(back.generator().costs()[0].terms[1].weight == c.terms[1].weight);
    CHECK(back.info().final_loss == 1.25e-7);
    CHECK(back.value(0.3, 0.2) == m.value(0.3, 0.2));
    CHECK(model_to_json(back).dump() == model_to_json(m).dump());

    // nested model as initial profile
    BoundaryMode nb;
    nb.kind = BoundaryKind::Floating;
    nb.u0 = InitialProfile::from_model(std::make_shared<const FittedModel>(m), 0.0);
    FittedModel outer(Generator(small_spec(Layout::MainText), nb), Generator(small_spec(Layout::MainText)).uniform_theta(1));
    const FittedModel outer_back = model_from_json(model_to_json(outer));
    CHECK(outer_back.value(-0.2, 0.4) == outer.value(-0.2, 0.4));

    nlohmann::json bad = model_to_json(m);
    bad["generator"]["colour"] = 1;
    CHECK_THROWS_AS(model_from_json(bad), ConfigError);
}
