#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

#include "qqm/qqm_train.hpp"
#include "qqm/random.hpp"

using namespace qqm;

namespace {

SdeParams fig_params() { return SdeParams{1.0, 0.0, 0.7, 4.0, -0.2}; }

GeneratorSpec toy_spec() {
    GeneratorSpec s;
    s.n_qubits = 2;
    s.depth = 2;
    s.layout = Layout::MainText;
    s.z_map = {FeatureMapKind::Tower, Pauli::Y, Variable::Z};
    s.t_map = FeatureMapSpec{FeatureMapKind::Product, Pauli::X, Variable::T};
    return s;
}

TrainingGrid toy_grid() { return {{-0.6, -0.1, 0.3, 0.7}, {0.0, 0.2, 0.45}}; }

Eigen::VectorXd fd_gradient(const TrainProblem& p, Eigen::VectorXd th, double h) {
    EvalOptions o;
    o.gradient = false;
    Eigen::VectorXd g(th.size());
    for (Eigen::Index i = 0; i < th.size(); ++i) {
        const double x = th(i);
        double f[4];
        const double steps[4] = {-2 * h, -h, h, 2 * h};
        for (int k = 0; k < 4; ++k) {
            th(i) = x + steps[k];
            f[k] = evaluate_loss(p, th, o).total;
        }
        th(i) = x;
        g(i) = (f[0] - 8 * f[1] + 8 * f[2] - f[3]) / (12 * h);
    }
    return g;
}

} // namespace

TEST_CASE("chebyshev nodes") {
    const auto z = chebyshev_nodes(43);
    REQUIRE(z.size() == 43);
    CHECK(z[21] == 0.0);
    for (std::size_t i = 1; i < z.size(); ++i) {
        CHECK(z[i] > z[i - 1]);
    }
    for (int n = 1; n <= 43; ++n) {
        const double ref = std::cos((2 * n - 1) * std::numbers::pi / 86.0);
        CHECK(std::abs(z[43 - n] - ref) <= 1e-15);
    }
    CHECK(chebyshev_nodes(1) == std::vector<double>{0.0});
    CHECK_THROWS_AS(chebyshev_nodes(0), ConfigError);
}

TEST_CASE("linspace endpoints are exact") {
    const auto v = linspace(-0.95, 0.95, 21);
    CHECK(v.front() == -0.95);
    CHECK(v.back() == 0.95);
    CHECK(std::abs(v[10]) <= 1e-16);
}

TEST_CASE("quantile targets from samples") {
    // Samples 0..9 sit at probabilities 0.05, 0.15, ..., 0.95.
    std::vector<double> s;
    for (int i = 9; i >= 0; --i) s.push_back(i);
    const auto d = prepare_quantile_targets(s, 5, 0.25);
    CHECK(d.t == 0.25);
    REQUIRE(d.z.size() == 5);
    for (std::size_t k = 0; k < 5; ++k) {
        const double p = 0.5 * (d.z[k] + 1.0);
        const double expect = std::clamp(10.0 * p - 0.5, 0.0, 9.0);
        CHECK(d.q[k] == doctest::Approx(expect).epsilon(1e-14));
    }
    CHECK(d.q[2] == doctest::Approx(4.5));
    CHECK_THROWS_AS(prepare_quantile_targets(std::vector<double>{}, 5), ConfigError);
}

TEST_CASE("analytic OU quantile has zero residual") {
    const auto p = fig_params();
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        const double z = rng.uniform(-0.95, 0.95), t = rng.uniform(0.0, 0.5);
        const auto q = analytic_qf_jet(p, z, t);
        const Residual r = ou_residual(Jet{q.value, q.dz, q.dzz, q.dt}, p, 1e-3);
        CHECK(std::abs(r.r) <= 1e-9 * (1.0 + std::abs(q.dt)));
    }
}

TEST_CASE("residual partials match finite differences") {
    const auto p = fig_params();
    const Jet f{0.7, -1.3, 2.1, 0.4};
    const Residual r = ou_residual(f, p, 1e-3);
    const double h = 1e-6;
    auto at = [&](Jet j) { return ou_residual(j, p, 1e-3).r; };
    CHECK(r.d_f == doctest::Approx((at({f.value + h, f.dz, f.dzz, f.dt}) - at({f.value - h, f.dz, f.dzz, f.dt})) / (2 * h)).epsilon(1e-7));
    CHECK(r.d_fz == doctest::Approx((at({f.value, f.dz + h, f.dzz, f.dt}) - at({f.value, f.dz - h, f.dzz, f.dt})) / (2 * h)).epsilon(1e-7));
    CHECK(r.d_fzz == doctest::Approx((at({f.value, f.dz, f.dzz + h, f.dt}) - at({f.value, f.dz, f.dzz - h, f.dt})) / (2 * h)).epsilon(1e-7));
    CHECK(r.d_ft == 1.0);
    // Below the slope floor the denominator is frozen.
    const Residual flat = ou_residual(Jet{0.0, 1e-5, 1.0, 0.0}, p, 1e-3);
    CHECK(flat.d_fz == 0.0);
    CHECK(flat.r == doctest::Approx(-0.245 / 1e-6));
}

TEST_CASE("model residual by parameter shift equals the jet residual") {
    Generator g(toy_spec());
    const auto th = g.uniform_theta(3);
    const auto p = fig_params();
    const Jet j = g.jet(th, 0.3, 0.2);
    CHECK(ou_residual(g, th, 0.3, 0.2, p, 1e-3) == doctest::Approx(ou_residual(j, p, 1e-3).r).epsilon(1e-10));
}

TEST_CASE("two-qubit loss gradient matches finite differences") {
    const auto p = fig_params();
    for (const auto kind : {BoundaryKind::Pinned, BoundaryKind::Floating}) {
        CAPTURE(to_string(kind));
        BoundaryMode b;
        b.kind = kind;
        b.u0 = InitialProfile::analytic(p, 0.0);
        b.time = 0.0;
        if (kind == BoundaryKind::Pinned) {
            b.pin_points = {-0.5, 0.0, 0.5};
            b.pin_weight = 0.7;
        }
        Generator g(toy_spec(), b);
        TrainProblem pr;
        pr.generator = &g;
        pr.grid = toy_grid();
        pr.params = p;
        pr.loss.data_weight = 0.3;
        pr.loss.sde_weight = 1e-3;
        pr.data = DataTargets{{-0.4, 0.1, 0.6}, {1.0, 1.5, 2.0}, 0.3};
        const auto th = g.uniform_theta(21);
        const Eigen::VectorXd fd = fd_gradient(pr, th, 1e-4);
        for (const auto m : {GradientMethod::Tangent, GradientMethod::ParameterShift}) {
            EvalOptions o;
            o.method = m;
            const LossValue l = evaluate_loss(pr, th, o);
            CHECK((l.grad - fd).cwiseAbs().maxCoeff() <= 1e-5 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
        }
    }
}

TEST_CASE("loss terms are reported separately") {
    const auto p = fig_params();
    BoundaryMode b;
    b.u0 = InitialProfile::analytic(p, 0.0);
    b.pin_points = {0.0};
    b.pin_weight = 2.0;
    Generator g(toy_spec(), b);
    const auto th = g.uniform_theta(5);
    TrainProblem pr;
    pr.generator = &g;
    pr.grid = toy_grid();
    pr.params = p;
    pr.loss.sde_weight = 0.5;
    pr.data = DataTargets{{-0.4, 0.6}, {1.0, 2.0}, 0.0};
    EvalOptions o;
    o.gradient = false;
    const LossValue l = evaluate_loss(pr, th, o);
    const double g0 = g.evaluate(th, 0.0, 0.0).value - analytic_qf(p, 0.0, 0.0);
    CHECK(l.pin == doctest::Approx(g0 * g0).epsilon(1e-14));
    CHECK(l.data == doctest::Approx(data_loss(g, th, *pr.data)).epsilon(1e-15));
    CHECK(0.5 * l.sde == doctest::Approx(sde_loss(g, th, *pr.grid, p, pr.loss)).epsilon(1e-15));
    CHECK(l.total == doctest::Approx(l.data + 0.5 * l.sde + 2.0 * l.pin).epsilon(1e-15));

    LossConfig off = pr.loss;
    off.sde_weight = 0.0;
    CHECK(sde_loss(g, th, *pr.grid, p, off) == 0.0);
}

TEST_CASE("strict reduction is independent of the thread count") {
    const auto p = fig_params();
    BoundaryMode b;
    b.kind = BoundaryKind::Floating;
    b.u0 = InitialProfile::analytic(p, 0.0);
    Generator g(toy_spec(), b);
    TrainProblem pr;
    pr.generator = &g;
    pr.grid = TrainingGrid{linspace(-0.9, 0.9, 7), linspace(0.0, 0.5, 5)};
    pr.params = p;
    const auto th = g.uniform_theta(9);
    EvalOptions one;
    EvalOptions many;
    many.threads = 3;
    const LossValue a = evaluate_loss(pr, th, one);
    const LossValue c = evaluate_loss(pr, th, many);
    CHECK(a.total == c.total);
    CHECK(a.grad == c.grad);
}

TEST_CASE("non-finite residual aborts with the grid point") {
    BoundaryMode b;
    b.kind = BoundaryKind::Floating;
    b.u0 = InitialProfile::from_function([](double z) {
        return ProfileValue{z > 0.2 ? std::numeric_limits<double>::quiet_NaN() : z, 1.0, 0.0};
    });
    Generator g(toy_spec(), b);
    TrainProblem pr;
    pr.generator = &g;
    pr.grid = toy_grid();
    pr.params = fig_params();
    try {
        evaluate_loss(pr, g.uniform_theta(1));
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("z=0.29999999999999999") != std::string::npos);
    }
    TrainSettings ts;
    ts.epochs = 3;
    CHECK_THROWS_AS(train(pr, g.uniform_theta(1), ts), NumericError);
}

TEST_CASE("adam first step moves every parameter by the learning rate") {
    Adam a(AdamSettings{0.01, 0.9, 0.999, 1e-8}, 3);
    Eigen::VectorXd th = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd g(3);
    g << 2.0, -0.5, 1e-3;
    a.step(th, g);
    CHECK(th(0) == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(th(1) == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(th(2) == doctest::Approx(-0.01).epsilon(1e-4));
    CHECK(a.steps() == 1);
    CHECK_THROWS_AS(Adam(AdamSettings{0.0}, 3), ConfigError);
}

TEST_CASE("training records one history row per epoch and reduces the loss") {
    GeneratorSpec s = toy_spec();
    s.t_map.reset();
    Generator g(s);
    TrainProblem pr;
    pr.generator = &g;
    std::vector<double> zs = chebyshev_nodes(9), qs;
    for (double z : zs) qs.push_back(0.8 * z);
    pr.data = DataTargets{zs, qs, 0.0};
    TrainSettings ts;
    ts.epochs = 150;
    ts.adam.learning_rate = 0.05;
    const auto dir = std::filesystem::temp_directory_path() / "qqm_train_ckpt";
    std::filesystem::create_directories(dir);
    ts.checkpoint_every = 50;
    ts.checkpoint_path = (dir / "ckpt.json").string();
    const auto r = train(pr, g.uniform_theta(2), ts);
    CHECK(r.history.size() == 150);
    CHECK(r.history.front().epoch == 0);
    CHECK(r.best_loss < 0.1 * r.history.front().total);
    CHECK(data_loss(g, r.theta, *pr.data) == doctest::Approx(r.best_loss).epsilon(1e-12));
    std::ifstream in(ts.checkpoint_path);
    const auto j = nlohmann::json::parse(in);
    CHECK(j.at("epoch").get<int>() == 150);
    CHECK(j.at("theta").size() == static_cast<std::size_t>(g.parameter_count()));
    std::filesystem::remove_all(dir);

    TrainSettings stop = ts;
    stop.checkpoint_every = 0;
    stop.on_epoch = [](const HistoryRow& row) { return row.epoch < 9; };
    CHECK(train(pr, g.uniform_theta(2), stop).history.size() == 10);
}

TEST_CASE("tower encoding fits the OU quantile better than product") {
    // Same qubits, depth, seeds and epochs; only the feature map differs.
    const auto p = fig_params();
    std::vector<double> zs = chebyshev_nodes(21), qs;
    for (double z : zs) qs.push_back(analytic_qf(p, z, 0.0));
    double loss[2] = {0.0, 0.0};
    int k = 0;
    for (const auto kind : {FeatureMapKind::Product, FeatureMapKind::Tower}) {
        GeneratorSpec s;
        s.n_qubits = 4;
        s.depth = 3;
        s.layout = Layout::Sandwich;
        s.z_map = {kind, Pauli::Y, Variable::Z};
        s.costs = {CostOperator::total_z(4)};
        s.costs[0].global_weight = 2.0;
        Generator g(s);
        TrainProblem pr;
        pr.generator = &g;
        pr.data = DataTargets{zs, qs, 0.0};
        TrainSettings ts;
        ts.epochs = 300;
        ts.adam.learning_rate = 0.05;
        for (std::uint64_t seed : {1, 2}) {
            loss[k] = std::max(loss[k], train(pr, g.initial_theta(seed), ts).best_loss);
        }
        ++k;
    }
    MESSAGE("worst product " << loss[0] << ", worst tower " << loss[1]);
    CHECK(loss[1] < 0.5 * loss[0]);
}

TEST_CASE("training and loss preconditions") {
    Generator g(toy_spec());
    TrainProblem pr;
    pr.generator = &g;
    pr.data = DataTargets{{0.0}, {1.0}, 0.0};
    TrainSettings ts;
    ts.epochs = 0;
    CHECK_THROWS_AS(train(pr, g.uniform_theta(1), ts), ConfigError);
    pr.loss.data_weight = 0.0;
    pr.loss.sde_weight = 0.0;
    CHECK_THROWS_AS(evaluate_loss(pr, g.uniform_theta(1)), ConfigError);
    CHECK_THROWS_AS((DataTargets{{-0.5, 0.5}, {2.0, 1.0}, 0.0}.validate()), ConfigError);
    CHECK_THROWS_AS(prepare_quantile_targets(std::vector<double>{1.0, 2.0}, 3), ConfigError);
}

TEST_CASE("data loss of a zero generator is the mean squared target") {
    GeneratorSpec s = toy_spec();
    s.costs = {CostOperator::total_z(2, 0.0)};
    Generator g(s);
    DataTargets d;
    d.z = chebyshev_nodes(11);
    double ref = 0.0;
    for (double z : d.z) {
        d.q.push_back(0.5 * special::inverf(z));
        ref += d.q.back() * d.q.back();
    }
    ref /= 11.0;
    CHECK(data_loss(g, g.uniform_theta(4), d) == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("residual term isolation and single-point grid") {
    SdeParams p = fig_params();
    p.sigma = 0.0;
    p.mu = 0.3;
    const Residual r = ou_residual(Jet{1.1, 0.4, 7.0, 0.0}, p, 1e-3);
    CHECK(r.r == doctest::Approx(-p.nu * (p.mu - 1.1)).epsilon(1e-15));

    Generator g(toy_spec());
    const auto th = g.uniform_theta(6);
    const auto q = fig_params();
    const double one = ou_residual(g, th, 0.2, 0.1, q, 1e-3);
    CHECK(sde_loss(g, th, TrainingGrid{{0.2}, {0.1}}, q, LossConfig{}) == doctest::Approx(one * one).epsilon(1e-10));
}

TEST_CASE("targets from analytic OU samples match the quantile function") {
    const auto p = fig_params();
    Rng rng(17);
    std::vector<double> s(100000);
    for (auto& v : s) v = analytic_qf(p, rng.latent(), 0.0);
    const auto d = prepare_quantile_targets(s, 43, 0.0);
    for (std::size_t n = 1; n + 1 < d.z.size(); ++n) {
        CHECK(std::abs(d.q[n] - analytic_qf(p, d.z[n], 0.0)) <= 0.02);
    }
    // The outermost nodes sit at p = 3.3e-4 from the ends, where the sample
    // quantile's standard error sqrt(p (1 - p) / N) / pdf is about 0.013.
    for (std::size_t n : {std::size_t{0}, d.z.size() - 1}) {
        const double q = analytic_qf(p, d.z[n], 0.0);
        const double pr = 0.5 * (d.z[n] + 1.0);
        const double se = std::sqrt(pr * (1.0 - pr) / 1e5) / analytic_pdf(p, q, 0.0);
        CHECK(std::abs(d.q[n] - q) <= 4.0 * se);
    }
}

TEST_CASE("reduction order changes the loss by rounding only") {
    const auto p = fig_params();
    BoundaryMode b;
    b.kind = BoundaryKind::Floating;
    b.u0 = InitialProfile::analytic(p, 0.0);
    Generator g(toy_spec(), b);
    TrainProblem pr;
    pr.generator = &g;
    pr.grid = TrainingGrid{linspace(-0.9, 0.9, 9), linspace(0.0, 0.5, 6)};
    pr.params = p;
    const auto th = g.uniform_theta(12);
    EvalOptions strict;
    EvalOptions loose;
    loose.strict_deterministic = false;
    loose.threads = 4;
    const LossValue a = evaluate_loss(pr, th, strict);
    const LossValue c = evaluate_loss(pr, th, loose);
    CHECK(std::abs(a.total - c.total) <= 1e-12 * std::max(1.0, a.total));
    CHECK((a.grad - c.grad).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, a.grad.cwiseAbs().maxCoeff()));
}

TEST_CASE("best-so-far loss never increases") {
    GeneratorSpec s = toy_spec();
    s.t_map.reset();
    Generator g(s);
    TrainProblem pr;
    pr.generator = &g;
    std::vector<double> zs = chebyshev_nodes(9), qs;
    for (double z : zs) qs.push_back(std::tanh(2 * z));
    pr.data = DataTargets{zs, qs, 0.0};
    TrainSettings ts;
    ts.epochs = 400;
    ts.adam.learning_rate = 0.1;
    const auto r = train(pr, g.uniform_theta(8), ts);
    double best = r.history.front().total;
    for (const auto& row : r.history) {
        const double next = std::min(best, row.total);
        CHECK(next <= best);
        best = next;
    }
    CHECK(r.best_loss <= best);
    const auto again = train(pr, g.uniform_theta(8), ts);
    CHECK(again.theta == r.theta);
    CHECK(again.history.back().total == r.history.back().total);
}
