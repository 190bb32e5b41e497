#include "qqm/qgan.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "qqm/errors.hpp"
#include "qqm/parallel.hpp"
#include "qqm/random.hpp"

namespace qqm {

namespace {

GeneratorSpec circuit_spec() {
    GeneratorSpec s;
    s.n_qubits = 6;
    s.depth = 6;
    s.layout = Layout::MainText;
    s.z_map = {FeatureMapKind::ChebyshevTower, Pauli::Y, Variable::Z};
    s.costs = {CostOperator::single_z(0)};
    return s;
}

void check_fixed_time(const GeneratorSpec& s, const char* what) {
    s.validate();
    if (s.t_map) {
        throw ConfigError(std::string(what) + " must not have a time feature map");
    }
}

} // namespace

QganConfig QganConfig::defaults() {
    QganConfig c;
    c.generator = circuit_spec();
    c.discriminator = circuit_spec();
    c.discriminator.costs = {CostOperator::single_z(0, 0.5)};
    return c;
}

void QganConfig::validate() const {
    check_fixed_time(generator, "qGAN generator");
    check_fixed_time(discriminator, "qGAN discriminator");
    if (discriminator.effective_costs().size() != 1 || discriminator.effective_costs()[0].norm_bound() > 0.5) {
        throw ConfigError("discriminator readout must be one cost with norm <= 1/2 so that D stays in [0, 1]");
    }
    if (epochs < 1) {
        throw ConfigError("qGAN epochs must be >= 1");
    }
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
        throw ConfigError("qGAN epsilon must be finite and >= 0");
    }
    if (batch_real < 1 || batch_fake < 1 || ks_samples < 1) {
        throw ConfigError("qGAN batch sizes must be >= 1");
    }
    Adam(adam_generator, 1);
    Adam(adam_discriminator, 1);
}

GanLosses gan_losses(std::span<const double> d_real, std::span<const double> d_fake) {
    if (d_real.empty() || d_fake.empty()) {
        throw ConfigError("GAN losses need non-empty batches");
    }
    GanLosses l;
    auto clamp = [&](double d) {
        if (!(d >= kDiscriminatorClamp && d <= 1.0 - kDiscriminatorClamp)) {
            ++l.clamped;
            return std::clamp(std::isnan(d) ? 0.5 : d, kDiscriminatorClamp, 1.0 - kDiscriminatorClamp);
        }
        return d;
    };
    double real = 0.0;
    for (double d : d_real) {
        real += std::log(clamp(d));
    }
    real /= static_cast<double>(d_real.size());
    double fake_neg = 0.0;
    double fake_pos = 0.0;
    for (double d : d_fake) {
        const double c = clamp(d);
        fake_neg += std::log(1.0 - c);
        fake_pos += std::log(c);
    }
    fake_neg /= static_cast<double>(d_fake.size());
    fake_pos /= static_cast<double>(d_fake.size());
    l.d = -0.5 * (real + fake_neg);
    l.g = -fake_neg;
    l.g_train = -fake_pos;
    return l;
}

// ---------------------------------------------------------------------------

Qgan::Qgan(const QganConfig& cfg, std::span<const double> data)
    : gen_((cfg.validate(), cfg.generator)), disc_(cfg.discriminator) {
    if (data.empty()) {
        throw ConfigError("qGAN training data is empty");
    }
    const double bound = gen_.output_bound();
    double lo = -bound;
    double hi = bound;
    for (double x : data) {
        if (!std::isfinite(x)) {
            throw ConfigError("qGAN training data must be finite");
        }
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    if (!(hi > lo)) {
        throw ConfigError("qGAN input range is empty");
    }
    scale_ = InputScale{lo, hi};
}

double Qgan::discriminate(const Eigen::VectorXd& theta_d, double x) const {
    return 0.5 + disc_.circuit_value(theta_d, scale_(x), 0.0);
}

namespace {

double draw_latent(Rng& rng) {
    double z = rng.latent();
    while (!(std::abs(z) < 1.0 - kDomainMargin)) {
        z = rng.latent();
    }
    return z;
}

bool in_range(double d) { return d >= kDiscriminatorClamp && d <= 1.0 - kDiscriminatorClamp; }

Eigen::VectorXd sum_buffers(const std::vector<Eigen::VectorXd>& b, Eigen::Index n) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    for (const auto& v : b) {
        g += v;
    }
    return g;
}

} // namespace

GanGradient discriminator_gradient(const Qgan& gan, const Eigen::VectorXd& theta_g, const Eigen::VectorXd& theta_d,
                                   std::span<const double> xr, std::span<const double> z, int threads) {
    const Generator& G = gan.generator();
    const Generator& D = gan.discriminator();
    const InputScale& sc = gan.scale();
    const std::size_t nr = xr.size();
    const std::size_t nf = z.size();
    std::vector<double> xf(nf);
    parallel_for(nf, threads, [&](std::size_t j) { xf[j] = G.circuit_value(theta_g, z[j], 0.0); });
    std::vector<double> dr(nr), df(nf);
    std::vector<Eigen::VectorXd> buf(nr + nf, Eigen::VectorXd::Zero(theta_d.size()));
    parallel_for(nr + nf, threads, [&](std::size_t k) {
        const bool real = k < nr;
        TangentTape tape;
        const double x = real ? xr[k] : xf[k - nr];
        const double d = 0.5 + D.circuit_jet(theta_d, sc(x), 0.0, &tape).value;
        double w = 0.0;
        if (in_range(d)) {
            w = real ? -0.5 / (static_cast<double>(nr) * d) : 0.5 / (static_cast<double>(nf) * (1.0 - d));
        }
        (real ? dr[k] : df[k - nr]) = d;
        D.circuit_backward(theta_d, tape, Jet{w, 0, 0, 0}, buf[k]);
    });
    return {gan_losses(dr, df), sum_buffers(buf, theta_d.size())};
}

GanGradient generator_gradient(const Qgan& gan, const Eigen::VectorXd& theta_g, const Eigen::VectorXd& theta_d,
                               std::span<const double> z, bool saturating, int threads) {
    const Generator& G = gan.generator();
    const Generator& D = gan.discriminator();
    const InputScale& sc = gan.scale();
    const std::size_t nf = z.size();
    std::vector<double> df(nf);
    std::vector<Eigen::VectorXd> buf(nf, Eigen::VectorXd::Zero(theta_g.size()));
    parallel_for(nf, threads, [&](std::size_t j) {
        TangentTape gt;
        const double x = G.circuit_jet(theta_g, z[j], 0.0, &gt).value;
        const Jet dj = D.circuit_jet(theta_d, sc(x), 0.0);
        const double d = 0.5 + dj.value;
        const double dd_dx = dj.dz * sc.slope();
        double w = 0.0;
        if (in_range(d)) {
            w = saturating ? -dd_dx / (static_cast<double>(nf) * (1.0 - d)) : -dd_dx / (static_cast<double>(nf) * d);
        }
        df[j] = d;
        G.circuit_backward(theta_g, gt, Jet{w, 0, 0, 0}, buf[j]);
    });
    const double half = 0.5;
    GanGradient out{gan_losses(std::span(&half, 1), df), sum_buffers(buf, theta_g.size())};
    out.losses.d = std::numeric_limits<double>::quiet_NaN();
    if (saturating) {
        out.losses.g_train = -out.losses.g;
    }
    return out;
}

QganResult train_qgan(const QganConfig& cfg, std::span<const double> data) {
    const Qgan gan(cfg, data);
    const Generator& G = gan.generator();
    const Generator& D = gan.discriminator();

    QganResult res;
    res.scale = gan.scale();
    Eigen::VectorXd tg = G.uniform_theta(derive_seed(cfg.seed, 3));
    Eigen::VectorXd td = D.uniform_theta(derive_seed(cfg.seed, 4));
    Adam opt_g(cfg.adam_generator, tg.size());
    Adam opt_d(cfg.adam_discriminator, td.size());
    const Rng batch_root(derive_seed(cfg.seed, 1));
    const Rng ks_root(derive_seed(cfg.seed, 2));

    std::size_t total_clamped = 0;
    std::size_t total_evals = 0;
    for (int e = 0; e < cfg.epochs; ++e) {
        Rng rng = batch_root.split(static_cast<std::uint64_t>(e));
        std::vector<double> xr(static_cast<std::size_t>(cfg.batch_real));
        for (auto& x : xr) {
            x = data[rng.index(data.size())];
        }
        std::vector<double> z(static_cast<std::size_t>(cfg.batch_fake));
        for (auto& v : z) {
            v = draw_latent(rng);
        }

        const GanGradient gd = discriminator_gradient(gan, tg, td, xr, z, cfg.threads);
        if (!std::isfinite(gd.losses.d) || !gd.grad.allFinite()) {
            throw NumericError("qGAN discriminator loss is not finite at epoch " + std::to_string(e));
        }
        opt_d.step(td, gd.grad);

        const GanGradient gg = generator_gradient(gan, tg, td, z, cfg.saturating, cfg.threads);
        if (!std::isfinite(gg.losses.g) || !std::isfinite(gg.losses.g_train) || !gg.grad.allFinite()) {
            throw NumericError("qGAN generator loss is not finite at epoch " + std::to_string(e));
        }

        QganRow row;
        row.epoch = e;
        row.loss_d = gd.losses.d;
        row.loss_g = gg.losses.g;
        row.loss_g_train = gg.losses.g_train;
        row.gap = std::abs(row.loss_d - row.loss_g);
        row.clamped = gd.losses.clamped + gg.losses.clamped;
        total_clamped += row.clamped;
        total_evals += xr.size() + 2 * z.size();

        // The snapshot holds the parameters both losses were evaluated with.
        if (row.gap < cfg.epsilon) {
            Rng krng = ks_root.split(static_cast<std::uint64_t>(e));
            std::vector<double> zs(static_cast<std::size_t>(cfg.ks_samples));
            for (auto& v : zs) {
                v = krng.latent();
            }
            std::vector<double> s(zs.size());
            parallel_for(zs.size(), cfg.threads, [&](std::size_t i) { s[i] = G.circuit_value(tg, zs[i], 0.0); });
            row.ks = ks_statistic(s, data);
            if (!res.snapshot || row.ks < res.best_ks) {
                res.snapshot = true;
                res.best_ks = row.ks;
                res.best_epoch = e;
                res.best_loss_d = row.loss_d;
                res.best_loss_g = row.loss_g;
                res.theta_g = tg;
                res.theta_d = td;
            }
        }
        res.history.push_back(row);
        opt_g.step(tg, gg.grad);
    }

    res.last_theta_g = tg;
    res.last_theta_d = td;
    if (!res.snapshot) {
        res.theta_g = tg;
        res.theta_d = td;
        res.warnings.push_back("no epoch satisfied |L_D - L_G| < epsilon; returning the final parameters");
    }
    if (total_evals > 0 && static_cast<double>(total_clamped) > 0.01 * static_cast<double>(total_evals)) {
        res.warnings.push_back("discriminator output was clamped in " + std::to_string(total_clamped) + " of " +
                               std::to_string(total_evals) + " evaluations");
    }
    return res;
}

// ---------------------------------------------------------------------------

Reordered reorder_generator(std::span<const double> z, std::span<const double> g) {
    if (z.size() < 2 || z.size() != g.size()) {
        throw ConfigError("reordering needs at least two grid points with one value each");
    }
    for (std::size_t i = 1; i < z.size(); ++i) {
        if (!(z[i] > z[i - 1])) {
            throw ConfigError("reordering grid must be strictly increasing");
        }
    }
    Reordered r;
    r.map.grid.assign(z.begin(), z.end());
    r.map.h.resize(z.size());
    std::iota(r.map.h.begin(), r.map.h.end(), std::size_t{0});
    std::stable_sort(r.map.h.begin(), r.map.h.end(), [&](std::size_t a, std::size_t b) { return g[a] < g[b]; });
    r.map.inv.resize(z.size());
    r.q.resize(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) {
        r.map.inv[r.map.h[j]] = j;
        r.q[j] = g[r.map.h[j]];
    }
    return r;
}

double quantile_ode_residual(double q, double dq, double d2q, double mu, double sigma) {
    return d2q - (q - mu) / (sigma * sigma) * dq * dq;
}

QuantileJet normal_quantile(double mu, double sigma, double z) {
    const double y = special::inverf(z);
    const double y1 = 0.5 * std::sqrt(std::numbers::pi) * std::exp(y * y);
    const double s = sigma * std::numbers::sqrt2;
    return {mu + s * y, s * y1, 2.0 * s * y * y1 * y1, 0.0};
}

Derivatives central_differences(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n < 3 || y.size() != n) {
        throw ConfigError("central differences need at least three points");
    }
    Derivatives d;
    d.d1.resize(n);
    d.d2.resize(n);
    // Derivatives of the parabola through (x0, y0), (x1, y1), (x2, y2) at x_at.
    auto parabola = [](double x0, double x1, double x2, double y0, double y1, double y2, double at, double& d1,
                       double& d2) {
        const double a = y0 / ((x0 - x1) * (x0 - x2));
        const double b = y1 / ((x1 - x0) * (x1 - x2));
        const double c = y2 / ((x2 - x0) * (x2 - x1));
        d2 = 2.0 * (a + b + c);
        d1 = a * ((at - x1) + (at - x2)) + b * ((at - x0) + (at - x2)) + c * ((at - x0) + (at - x1));
    };
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = std::clamp<std::size_t>(i, 1, n - 2);
        parabola(x[c - 1], x[c], x[c + 1], y[c - 1], y[c], y[c + 1], x[i], d.d1[i], d.d2[i]);
    }
    return d;
}

OdeAnalysis reordered_ode_analysis(std::span<const double> z, std::span<const double> g,
                                   std::span<const double> dg, std::span<const double> d2g, const ReorderMap& map,
                                   double mu, double sigma, double flag_factor) {
    const std::size_t n = z.size();
    if (n < 11) {
        throw ConfigError("reordering analysis needs at least 11 grid points");
    }
    if (g.size() != n || dg.size() != n || d2g.size() != n || map.grid.size() != n || map.inv.size() != n) {
        throw ConfigError("reordering analysis inputs must share one grid");
    }
    if (!(sigma > 0.0)) {
        throw ConfigError("sigma must be > 0");
    }
    OdeAnalysis a;
    a.z.assign(z.begin(), z.end());
    a.inv.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        a.inv[i] = map.inv_value(i);
    }
    const Derivatives di = central_differences(z, a.inv);
    a.inv_d1 = di.d1;
    a.inv_d2 = di.d2;

    std::vector<double> quot(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        quot[i] = (a.inv[i + 1] - a.inv[i]) / (z[i + 1] - z[i]);
    }
    std::vector<double> mags(quot.size());
    std::transform(quot.begin(), quot.end(), mags.begin(), [](double q) { return std::abs(q); });
    std::nth_element(mags.begin(), mags.begin() + mags.size() / 2, mags.end());
    double median = mags[mags.size() / 2];
    if (mags.size() % 2 == 0) {
        median = 0.5 * (median + *std::max_element(mags.begin(), mags.begin() + mags.size() / 2));
    }
    a.threshold = flag_factor * median;

    a.lhs.resize(n);
    a.rhs.resize(n);
    a.flagged.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && i + 1 < n && std::abs(quot[i] - quot[i - 1]) > a.threshold) {
            a.flagged[i] = true;
        }
        if (a.inv_d1[i] == 0.0) {
            a.flagged[i] = true;
        }
        a.lhs[i] = quantile_ode_residual(g[i], dg[i], d2g[i], mu, sigma);
        a.rhs[i] = a.inv_d1[i] == 0.0 ? std::numeric_limits<double>::quiet_NaN() : a.inv_d2[i] / a.inv_d1[i] * dg[i];
        if (a.flagged[i]) {
            ++a.n_flagged;
        } else {
            a.max_abs_diff = std::max(a.max_abs_diff, std::abs(a.lhs[i] - a.rhs[i]));
        }
    }
    return a;
}

OdeAnalysis reordered_ode_analysis(std::span<const double> z, std::span<const double> g, const ReorderMap& map,
                                   double mu, double sigma, double flag_factor) {
    const Derivatives d = central_differences(z, g);
    return reordered_ode_analysis(z, g, d.d1, d.d2, map, mu, sigma, flag_factor);
}

} // namespace qqm
