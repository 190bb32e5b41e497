#pragma once

// Classical ground truth for the Ornstein-Uhlenbeck process
//   dX = nu (mu - X) dt + sigma dW,   X(t0) = x0,
// plus the special functions, sampling and distribution statistics the comparisons
// need.
//
// Latent convention: z ~ uniform(-1, 1) corresponds to probability p = (z + 1) / 2,
// and the quantile function takes z directly: Q(z, t) = m(t) + s(t) inverf(z) with
// s = sqrt(2 Var).

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace qqm {

namespace special {

/// Power series with positive terms for |x| < 3, continued fraction beyond.
double erf(double x);
double erfc(double x);
/// Inverse of erf on (-1, 1): rational seed, then Newton steps against erf/erfc.
double inverf(double z);

} // namespace special

struct SdeParams {
    double nu = 1.0;
    double mu = 0.0;
    double sigma = 0.7;
    double x0 = 4.0;
    double t0 = -0.2;

    /// nu > 0, sigma >= 0, all finite.
    void validate() const;
};

double ou_mean(const SdeParams& p, double t);
double ou_variance(const SdeParams& p, double t);
/// sigma^2 / (2 nu)
double ou_stationary_variance(const SdeParams& p);

/// Gaussian transition density from the delta at (x0, t0). Requires t > t0, sigma > 0.
double analytic_pdf(const SdeParams& p, double x, double t);
double analytic_cdf(const SdeParams& p, double x, double t);

struct QuantileJet {
    double value = 0.0;
    double dz = 0.0;
    double dzz = 0.0;
    double dt = 0.0;
};

/// Q(z, t). Requires |z| < 1 and t > t0.
double analytic_qf(const SdeParams& p, double z, double t);
/// Q with closed-form z, zz and t derivatives.
QuantileJet analytic_qf_jet(const SdeParams& p, double z, double t);

enum class Provenance { EulerMaruyama, Qqm, Qgan, Analytic, Data };
std::string to_string(Provenance p);

struct SampleSet {
    std::vector<double> values;
    double t = 0.0;
    Provenance provenance = Provenance::Analytic;
    std::uint64_t seed = 0;
};

/// X + nu (mu - X) dt + sigma sqrt(dt) xi
double euler_maruyama_step(const SdeParams& p, double x, double dt, double xi);

/// Paths start at (x0, t0); slice k holds every path after round((t_k - t0) / dt) steps.
/// Path i draws its normals from stream i of `seed`, so results do not depend on
/// `threads`.
std::vector<SampleSet> euler_maruyama(const SdeParams& p, double dt, std::span<const double> slice_times,
                                      std::size_t n_paths, std::uint64_t seed, int threads = 1);

struct Histogram {
    double lo = 0.0;
    double hi = 1.0;
    std::vector<double> normalized; ///< counts / N_s
    std::size_t n_samples = 0;

    std::size_t bins() const { return normalized.size(); }
    double width() const { return (hi - lo) / static_cast<double>(normalized.size()); }
    double edge(std::size_t i) const { return lo + width() * static_cast<double>(i); }
};

/// Uniform bins over [lo, hi]; the last bin includes hi; values outside are dropped.
Histogram histogram(std::span<const double> values, double lo, double hi, std::size_t n_bins);

/// [mu - 5 sqrt(sigma^2 / 2nu), x0 + 1]
std::pair<double, double> default_histogram_range(const SdeParams& p);

/// Bin probabilities of the analytic density, integrated through the CDF.
std::vector<double> analytic_bin_mass(const SdeParams& p, double t, double lo, double hi, std::size_t n_bins);

/// One-sample statistic against a CDF.
double ks_statistic(std::span<const double> samples, const std::function<double(double)>& cdf);
/// Two-sample statistic.
double ks_statistic(std::span<const double> a, std::span<const double> b);

struct Moments {
    double mean = 0.0;
    double variance = 0.0; ///< unbiased
};
Moments sample_moments(std::span<const double> values);

} // namespace qqm
