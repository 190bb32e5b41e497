#include "qqm/sde_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "qqm/errors.hpp"
#include "qqm/parallel.hpp"
#include "qqm/random.hpp"

namespace qqm {

namespace special {

namespace {

constexpr double kTwoOverSqrtPi = 2.0 / 1.7724538509055160273;

// 2/sqrt(pi) e^{-x^2} sum_n 2^n x^{2n+1} / (2n+1)!!; the terms share one sign, so no cancellation.
double erf_series(double x) {
    const double x2 = x * x;
    double term = x;
    double sum = x;
    for (int n = 1; n < 200; ++n) {
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if (std::abs(term) < 1e-17 * std::abs(sum)) {
            break;
        }
    }
    return kTwoOverSqrtPi * std::exp(-x2) * sum;
}

// erfc(x) = e^{-x^2}/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))), x > 0 (modified Lentz)
double erfc_fraction(double x) {
    constexpr double tiny = 1e-300;
    double f = x;
    double c = x;
    double d = 0.0;
    for (int k = 1; k < 5000; ++k) {
        const double a = 0.5 * k;
        d = x + a * d;
        d = d == 0.0 ? tiny : 1.0 / d;
        c = x + a / c;
        if (c == 0.0) {
            c = tiny;
        }
        const double delta = c * d;
        f *= delta;
        if (std::abs(delta - 1.0) < 1e-16) {
            break;
        }
    }
    return std::exp(-x * x) / (std::sqrt(std::numbers::pi) * f);
}

} // namespace

double erf(double x) {
    if (std::isnan(x)) {
        return x;
    }
    if (std::abs(x) < 3.0) {
        return erf_series(x);
    }
    const double c = erfc_fraction(std::abs(x));
    return x > 0 ? 1.0 - c : c - 1.0;
}

double erfc(double x) {
    if (std::isnan(x)) {
        return x;
    }
    if (x < 2.0) {
        return 1.0 - erf(x);
    }
    return erfc_fraction(x);
}

double inverf(double z) {
    if (!(std::abs(z) < 1.0)) {
        throw DomainError("inverf needs |z| < 1, got " + std::to_string(z));
    }
    if (z == 0.0) {
        return 0.0;
    }
    const double a = std::abs(z);

    // single-precision rational seed (Giles)
    double w = -std::log((1.0 - a) * (1.0 + a));
    double p;
    if (w < 5.0) {
        w -= 2.5;
        p = 2.81022636e-08;
        p = 3.43273939e-07 + p * w;
        p = -3.5233877e-06 + p * w;
        p = -4.39150654e-06 + p * w;
        p = 0.00021858087 + p * w;
        p = -0.00125372503 + p * w;
        p = -0.00417768164 + p * w;
        p = 0.246640727 + p * w;
        p = 1.50140941 + p * w;
    } else {
        w = std::sqrt(w) - 3.0;
        p = -0.000200214257;
        p = 0.000100950558 + p * w;
        p = 0.00134934322 + p * w;
        p = -0.00367342844 + p * w;
        p = 0.00573950773 + p * w;
        p = -0.0076224613 + p * w;
        p = 0.00943887047 + p * w;
        p = 1.00167406 + p * w;
        p = 2.83297682 + p * w;
    }
    double y = p * a;

    // Newton on erf near the centre, on erfc in the tail where 1 - a keeps its digits
    const bool tail = a > 0.9;
    const double target = tail ? 1.0 - a : a;
    for (int it = 0; it < 50; ++it) {
        const double slope = kTwoOverSqrtPi * std::exp(-y * y);
        const double r = tail ? target - erfc(y) : erf(y) - target;
        const double step = r / slope;
        y -= step;
        if (std::abs(step) <= 1e-16 * std::abs(y)) {
            break;
        }
    }
    return z < 0 ? -y : y;
}

} // namespace special

void SdeParams::validate() const {
    if (!(std::isfinite(nu) && std::isfinite(mu) && std::isfinite(sigma) && std::isfinite(x0) &&
          std::isfinite(t0))) {
        throw ConfigError("SDE parameters must be finite");
    }
    if (!(nu > 0.0)) {
        throw ConfigError("nu must be > 0");
    }
    if (sigma < 0.0) {
        throw ConfigError("sigma must be >= 0");
    }
}

double ou_mean(const SdeParams& p, double t) { return p.mu + (p.x0 - p.mu) * std::exp(-p.nu * (t - p.t0)); }

double ou_variance(const SdeParams& p, double t) {
    return p.sigma * p.sigma / (2.0 * p.nu) * -std::expm1(-2.0 * p.nu * (t - p.t0));
}

double ou_stationary_variance(const SdeParams& p) { return p.sigma * p.sigma / (2.0 * p.nu); }

namespace {

void require_after_start(const SdeParams& p, double t) {
    if (!(t > p.t0)) {
        throw DomainError("t must be later than t0 (the initial distribution is a delta)");
    }
}

} // namespace

double analytic_pdf(const SdeParams& p, double x, double t) {
    require_after_start(p, t);
    const double var = ou_variance(p, t);
    if (!(var > 0.0)) {
        throw DomainError("density undefined for zero variance");
    }
    const double d = x - ou_mean(p, t);
    return std::exp(-d * d / (2.0 * var)) / std::sqrt(2.0 * std::numbers::pi * var);
}

double analytic_cdf(const SdeParams& p, double x, double t) {
    require_after_start(p, t);
    const double var = ou_variance(p, t);
    const double d = x - ou_mean(p, t);
    if (var == 0.0) {
        return d < 0 ? 0.0 : 1.0;
    }
    return 0.5 * special::erfc(-d / std::sqrt(2.0 * var));
}

double analytic_qf(const SdeParams& p, double z, double t) {
    require_after_start(p, t);
    return ou_mean(p, t) + std::sqrt(2.0 * ou_variance(p, t)) * special::inverf(z);
}

QuantileJet analytic_qf_jet(const SdeParams& p, double z, double t) {
    require_after_start(p, t);
    const double y = special::inverf(z);
    const double s = std::sqrt(2.0 * ou_variance(p, t));
    const double decay = std::exp(-p.nu * (t - p.t0));
    const double dy = 0.5 * std::sqrt(std::numbers::pi) * std::exp(y * y);
    const double ds = s > 0.0 ? p.sigma * p.sigma * decay * decay / s : 0.0;
    QuantileJet j;
    j.value = ou_mean(p, t) + s * y;
    j.dz = s * dy;
    j.dzz = s * 2.0 * y * dy * dy;
    j.dt = -p.nu * (p.x0 - p.mu) * decay + ds * y;
    return j;
}

std::string to_string(Provenance p) {
    switch (p) {
    case Provenance::EulerMaruyama: return "euler_maruyama";
    case Provenance::Qqm: return "qqm";
    case Provenance::Qgan: return "qgan";
    case Provenance::Analytic: return "analytic";
    case Provenance::Data: return "data";
    }
    return "?";
}

double euler_maruyama_step(const SdeParams& p, double x, double dt, double xi) {
    return x + p.nu * (p.mu - x) * dt + p.sigma * std::sqrt(dt) * xi;
}

std::vector<SampleSet> euler_maruyama(const SdeParams& p, double dt, std::span<const double> slice_times,
                                      std::size_t n_paths, std::uint64_t seed, int threads) {
    p.validate();
    if (!(dt > 0.0)) {
        throw ConfigError("dt must be > 0");
    }
    if (n_paths == 0) {
        throw ConfigError("n_paths must be >= 1");
    }
    std::vector<long long> steps;
    for (double t : slice_times) {
        if (t < p.t0) {
            throw ConfigError("slice time before t0");
        }
        steps.push_back(std::llround((t - p.t0) / dt));
    }
    const long long total = steps.empty() ? 0 : *std::max_element(steps.begin(), steps.end());

    std::vector<SampleSet> out(slice_times.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k].values.assign(n_paths, 0.0);
        out[k].t = slice_times[k];
        out[k].provenance = Provenance::EulerMaruyama;
        out[k].seed = seed;
    }
    parallel_for(n_paths, threads, [&](std::size_t path) {
        Rng rng(derive_seed(seed, path));
        double x = p.x0;
        for (std::size_t k = 0; k < steps.size(); ++k) {
            if (steps[k] == 0) {
                out[k].values[path] = x;
            }
        }
        for (long long s = 1; s <= total; ++s) {
            x = euler_maruyama_step(p, x, dt, rng.normal());
            for (std::size_t k = 0; k < steps.size(); ++k) {
                if (steps[k] == s) {
                    out[k].values[path] = x;
                }
            }
        }
    });
    return out;
}

Histogram histogram(std::span<const double> values, double lo, double hi, std::size_t n_bins) {
    if (n_bins < 1) {
        throw ConfigError("histogram needs at least one bin");
    }
    if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) {
        throw ConfigError("degenerate histogram range");
    }
    Histogram h;
    h.lo = lo;
    h.hi = hi;
    h.n_samples = values.size();
    std::vector<std::size_t> counts(n_bins, 0);
    const double scale = static_cast<double>(n_bins) / (hi - lo);
    for (double v : values) {
        if (!(v >= lo && v <= hi)) {
            continue;
        }
        auto k = static_cast<std::size_t>((v - lo) * scale);
        counts[std::min(k, n_bins - 1)]++;
    }
    h.normalized.resize(n_bins);
    for (std::size_t k = 0; k < n_bins; ++k) {
        h.normalized[k] = values.empty() ? 0.0 : static_cast<double>(counts[k]) / static_cast<double>(values.size());
    }
    return h;
}

std::pair<double, double> default_histogram_range(const SdeParams& p) {
    return {p.mu - 5.0 * std::sqrt(ou_stationary_variance(p)), p.x0 + 1.0};
}

std::vector<double> analytic_bin_mass(const SdeParams& p, double t, double lo, double hi, std::size_t n_bins) {
    std::vector<double> mass(n_bins);
    const double w = (hi - lo) / static_cast<double>(n_bins);
    double prev = analytic_cdf(p, lo, t);
    for (std::size_t k = 0; k < n_bins; ++k) {
        const double next = analytic_cdf(p, lo + w * static_cast<double>(k + 1), t);
        mass[k] = next - prev;
        prev = next;
    }
    return mass;
}

double ks_statistic(std::span<const double> samples, const std::function<double(double)>& cdf) {
    if (samples.empty()) {
        throw ConfigError("KS statistic needs samples");
    }
    std::vector<double> s(samples.begin(), samples.end());
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    double d = 0.0;
    std::size_t i = 0;
    while (i < s.size()) {
        std::size_t j = i;
        while (j < s.size() && s[j] == s[i]) {
            ++j;
        }
        const double f = cdf(s[i]);
        d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(j) / n - f});
        i = j;
    }
    return std::clamp(d, 0.0, 1.0);
}

double ks_statistic(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) {
        throw ConfigError("KS statistic needs two non-empty samples");
    }
    std::vector<double> x(a.begin(), a.end());
    std::vector<double> y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double na = static_cast<double>(x.size());
    const double nb = static_cast<double>(y.size());
    std::size_t i = 0;
    std::size_t j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size()) {
        const double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == v) {
            ++i;
        }
        while (j < y.size() && y[j] == v) {
            ++j;
        }
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

Moments sample_moments(std::span<const double> values) {
    Moments m;
    if (values.empty()) {
        return m;
    }
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    m.mean = sum / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) {
        ss += (v - m.mean) * (v - m.mean);
    }
    m.variance = values.size() > 1 ? ss / static_cast<double>(values.size() - 1) : 0.0;
    return m;
}

} // namespace qqm
