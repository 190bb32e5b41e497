#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "qqm/qgan.hpp"
#include "qqm/random.hpp"

using namespace qqm;

namespace {

QganConfig small_config() {
    QganConfig c = QganConfig::defaults();
    c.generator.n_qubits = 2;
    c.generator.depth = 2;
    c.discriminator.n_qubits = 2;
    c.discriminator.depth = 2;
    c.batch_real = 8;
    c.batch_fake = 8;
    c.ks_samples = 200;
    c.epochs = 30;
    return c;
}

std::vector<double> normal_data(std::size_t n, std::uint64_t seed) {
    Rng r(seed);
    std::vector<double> d(n);
    for (auto& v : d) v = 0.2 * r.normal();
    return d;
}

// Single-dip generator G_A(z) = Q(2|z| - 1) with closed-form derivatives away from z = 0.
struct Dip {
    std::vector<double> z, g, dg, d2g;
};

Dip single_dip(int n) {
    // Mirror the grid exactly so G(z) and G(-z) tie bitwise; rounding in a plain
    // linspace would break the ties at random and zigzag inv[h].
    Dip d;
    d.z = linspace(-0.995, 0.995, n);
    for (int i = 0; i < n / 2; ++i) d.z[n - 1 - i] = -d.z[i];
    for (double z : d.z) {
        const double w = 2.0 * std::abs(z) - 1.0;
        const double s = z < 0.0 ? -2.0 : 2.0;
        const auto q = normal_quantile(0.0, 0.2, w);
        d.g.push_back(q.value);
        d.dg.push_back(q.dz * s);
        d.d2g.push_back(q.dzz * 4.0);
    }
    return d;
}

} // namespace

TEST_CASE("GAN losses at the Nash point") {
    const std::vector<double> half(5, 0.5);
    const GanLosses l = gan_losses(half, half);
    CHECK(l.d == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(l.g == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(l.g_train == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    CHECK(l.clamped == 0);
}

TEST_CASE("GAN losses by hand and with a perfect discriminator") {
    const std::vector<double> r{0.8}, f{0.3};
    const GanLosses l = gan_losses(r, f);
    CHECK(l.d == doctest::Approx(-0.5 * (std::log(0.8) + std::log(0.7))).epsilon(1e-15));
    CHECK(l.g == doctest::Approx(-std::log(0.7)).epsilon(1e-15));
    CHECK(l.g_train == doctest::Approx(-std::log(0.3)).epsilon(1e-15));

    const std::vector<double> one{1.0, 1.0}, zero{0.0, 0.0};
    const GanLosses p = gan_losses(one, zero);
    CHECK(p.d >= 0.0);
    CHECK(p.d < 1e-11);
    CHECK(p.g_train == doctest::Approx(-std::log(kDiscriminatorClamp)).epsilon(1e-12));
    CHECK(p.clamped == 4);
    CHECK_THROWS_AS(gan_losses(std::vector<double>{}, f), ConfigError);
}

TEST_CASE("qGAN gradients match finite differences") {
    const auto cfg = small_config();
    const auto data = normal_data(100, 3);
    const Qgan gan(cfg, data);
    const auto tg = gan.generator().uniform_theta(5);
    const auto td = gan.discriminator().uniform_theta(6);
    const std::vector<double> xr{-0.3, 0.05, 0.2}, z{-0.7, -0.1, 0.4, 0.9};

    auto loss_d = [&](const Eigen::VectorXd& t) {
        std::vector<double> dr, df;
        for (double x : xr) dr.push_back(gan.discriminate(t, x));
        for (double v : z) df.push_back(gan.discriminate(t, gan.generate(tg, v)));
        return gan_losses(dr, df).d;
    };
    auto loss_g = [&](const Eigen::VectorXd& t, bool sat) {
        std::vector<double> df;
        for (double v : z) df.push_back(gan.discriminate(td, gan.generate(t, v)));
        const GanLosses l = gan_losses(std::vector<double>{0.5}, df);
        return sat ? -l.g : l.g_train;
    };
    auto fd = [](auto f, Eigen::VectorXd t) {
        Eigen::VectorXd g(t.size());
        const double h = 1e-5;
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            const double x = t(i);
            t(i) = x + h;
            const double a = f(t);
            t(i) = x - h;
            const double b = f(t);
            t(i) = x;
            g(i) = (a - b) / (2 * h);
        }
        return g;
    };
    const GanGradient gd = discriminator_gradient(gan, tg, td, xr, z);
    CHECK(gd.losses.d == doctest::Approx(loss_d(td)).epsilon(1e-14));
    CHECK((gd.grad - fd(loss_d, td)).cwiseAbs().maxCoeff() <= 1e-8);
    for (bool sat : {false, true}) {
        const GanGradient gg = generator_gradient(gan, tg, td, z, sat);
        CHECK(gg.losses.g_train == doctest::Approx(loss_g(tg, sat)).epsilon(1e-14));
        CHECK((gg.grad - fd([&](const Eigen::VectorXd& t) { return loss_g(t, sat); }, tg)).cwiseAbs().maxCoeff() <= 1e-8);
    }
}

TEST_CASE("discriminator input scaling covers data and generator range") {
    auto cfg = small_config();
    const std::vector<double> data{-3.0, 0.5, 2.0};
    const Qgan gan(cfg, data);
    CHECK(gan.scale().lo == -3.0);
    CHECK(gan.scale().hi == 2.0);
    CHECK(gan.scale()(-3.0) == doctest::Approx(-0.99));
    CHECK(gan.scale()(2.0) == doctest::Approx(0.99));
    const Qgan narrow(cfg, std::vector<double>{0.1, 0.2});
    CHECK(narrow.scale().lo == -1.0);
    CHECK(narrow.scale().hi == 1.0);
    CHECK_THROWS_AS(Qgan(cfg, std::vector<double>{}), ConfigError);
}

TEST_CASE("qGAN training is deterministic and keeps the best KS snapshot") {
    const auto cfg = small_config();
    const auto data = normal_data(500, 4);
    const QganResult a = train_qgan(cfg, data);
    const QganResult b = train_qgan(cfg, data);
    REQUIRE(a.history.size() == 30);
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].loss_d == b.history[i].loss_d);
        CHECK(a.history[i].loss_g == b.history[i].loss_g);
    }
    CHECK(a.theta_g == b.theta_g);
    if (a.snapshot) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& r : a.history) {
            if (!std::isnan(r.ks)) {
                CHECK(r.gap < cfg.epsilon);
                best = std::min(best, r.ks);
            }
        }
        CHECK(a.best_ks == best);
        CHECK(a.history[a.best_epoch].ks == best);
    }
}

TEST_CASE("epsilon zero never snapshots") {
    auto cfg = small_config();
    cfg.epsilon = 0.0;
    cfg.epochs = 5;
    const auto r = train_qgan(cfg, normal_data(100, 1));
    CHECK_FALSE(r.snapshot);
    CHECK(r.best_epoch == -1);
    CHECK(r.theta_g == r.last_theta_g);
    REQUIRE_FALSE(r.warnings.empty());
    for (const auto& row : r.history) CHECK(std::isnan(row.ks));
}

TEST_CASE("reordering") {
    const auto z = linspace(-0.9, 0.9, 19);
    std::vector<double> inc;
    for (double v : z) inc.push_back(v * v * v);
    const auto id = reorder_generator(z, inc);
    for (std::size_t i = 0; i < z.size(); ++i) {
        CHECK(id.map.h[i] == i);
        CHECK(id.map.inv[i] == i);
        CHECK(id.q[i] == inc[i]);
    }

    // A shuffled quantile comes back exactly, and h / inv[h] are inverse permutations.
    std::vector<double> q;
    for (double v : z) q.push_back(normal_quantile(0.0, 0.2, v).value);
    std::vector<double> shuffled = q;
    Rng rng(2);
    for (std::size_t i = shuffled.size() - 1; i > 0; --i) std::swap(shuffled[i], shuffled[rng.index(i + 1)]);
    const auto r = reorder_generator(z, shuffled);
    CHECK(r.q == q);
    for (std::size_t j = 0; j < z.size(); ++j) {
        CHECK(r.map.inv[r.map.h[j]] == j);
        CHECK(shuffled[r.map.h[j]] == r.q[j]);
    }
    CHECK_THROWS_AS(reorder_generator(std::vector<double>{0.0}, std::vector<double>{1.0}), ConfigError);
}

TEST_CASE("quantile ODE residual") {
    for (double z = -0.99; z <= 0.99; z += 0.01) {
        const auto q = normal_quantile(0.0, 0.2, z);
        CHECK(std::abs(quantile_ode_residual(q.value, q.dz, q.dzz, 0.0, 0.2)) <= 1e-8);
    }
    CHECK(quantile_ode_residual(0.3, 0.0, 0.0, 0.3, 0.2) == 0.0);
    const double slope = 1.7, x = 0.4;
    CHECK(quantile_ode_residual(slope * x, slope, 0.0, 0.0, 0.2) == doctest::Approx(-slope * x * slope * slope / 0.04));
}

TEST_CASE("central differences are exact on parabolas") {
    const std::vector<double> x{-1.0, -0.7, -0.1, 0.0, 0.35, 0.9};
    std::vector<double> y;
    for (double v : x) y.push_back(2 * v * v - 3 * v + 1);
    const auto d = central_differences(x, y);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(d.d1[i] == doctest::Approx(4 * x[i] - 3).epsilon(1e-12));
        CHECK(d.d2[i] == doctest::Approx(4.0).epsilon(1e-12));
    }
}

TEST_CASE("single-dip generator: exact recovery and one flagged neighbourhood") {
    const Dip d = single_dip(200);
    const auto r = reorder_generator(d.z, d.g);
    // The sorted values are the dip's own values, i.e. Q on the doubled grid 2|z| - 1.
    std::vector<double> sorted = d.g;
    std::sort(sorted.begin(), sorted.end());
    CHECK(r.q == sorted);
    const double dz = d.z[1] - d.z[0];
    double max_slope = 0.0;
    for (double z : d.z) max_slope = std::max(max_slope, normal_quantile(0.0, 0.2, z).dz);
    for (std::size_t j = 0; j < d.z.size(); ++j) {
        CHECK(std::abs(r.q[j] - normal_quantile(0.0, 0.2, d.z[j]).value) <= 2.0 * dz * max_slope);
    }

    const auto a = reordered_ode_analysis(d.z, d.g, d.dg, d.d2g, r.map, 0.0, 0.2);
    CHECK(a.n_flagged == 2);
    CHECK(a.flagged[99]);
    CHECK(a.flagged[100]);
    CHECK(a.max_abs_diff <= 1e-3);

    // Grid reversal: relabel z -> -z; the flag set maps onto itself.
    std::vector<double> zr, gr;
    for (std::size_t i = d.z.size(); i-- > 0;) {
        zr.push_back(-d.z[i]);
        gr.push_back(d.g[i]);
    }
    const auto rr = reorder_generator(zr, gr);
    const auto ar = reordered_ode_analysis(zr, gr, rr.map, 0.0, 0.2);
    for (std::size_t i = 0; i < d.z.size(); ++i) {
        CHECK(ar.flagged[d.z.size() - 1 - i] == a.flagged[i]);
    }
    CHECK_THROWS_AS(reordered_ode_analysis(std::span(d.z).first(10), std::span(d.g).first(10), r.map, 0.0, 0.2),
                    ConfigError);
}

TEST_CASE("monotone generator: the reordered analysis reduces to the plain ODE") {
    const auto z = linspace(-0.95, 0.95, 41);
    std::vector<double> g, dg, d2g;
    for (double v : z) {
        const auto q = normal_quantile(0.1, 0.3, v);
        g.push_back(q.value);
        dg.push_back(q.dz);
        d2g.push_back(q.dzz);
    }
    const auto r = reorder_generator(z, g);
    const auto a = reordered_ode_analysis(z, g, dg, d2g, r.map, 0.1, 0.3);
    CHECK(a.n_flagged == 0);
    for (std::size_t i = 0; i < z.size(); ++i) {
        CHECK(std::abs(a.rhs[i]) <= 1e-9);
        CHECK(a.lhs[i] == quantile_ode_residual(g[i], dg[i], d2g[i], 0.1, 0.3));
    }
}

TEST_CASE("reordered curve samples like the generator") {
    // A random oscillating generator, tabulated finely and reordered.
    GeneratorSpec s;
    s.n_qubits = 3;
    s.depth = 2;
    s.layout = Layout::MainText;
    s.z_map = {FeatureMapKind::ChebyshevTower, Pauli::Y, Variable::Z};
    s.costs = {CostOperator::single_z(0)};
    Generator g(s);
    const auto th = g.uniform_theta(13);
    const auto grid = linspace(-1.0, 1.0, 4001);
    std::vector<double> vals;
    for (double z : grid) vals.push_back(g.circuit_value(th, z, 0.0));
    const auto r = reorder_generator(grid, vals);
    Rng rng(5);
    std::vector<double> a, b;
    for (int i = 0; i < 100000; ++i) {
        const double z = rng.latent();
        a.push_back(g.circuit_value(th, z, 0.0));
        const double pos = (z + 1.0) / 2.0 * 4000.0;
        const auto k = std::min<std::size_t>(static_cast<std::size_t>(pos), 3999);
        b.push_back(r.q[k] + (pos - k) * (r.q[k + 1] - r.q[k]));
    }
    CHECK(ks_statistic(a, b) <= 0.02);

    const auto an = reordered_ode_analysis(grid, vals, r.map, 0.0, 0.2);
    CHECK(an.n_flagged >= 1);
}
