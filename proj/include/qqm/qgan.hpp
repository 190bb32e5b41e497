#pragma once

// Continuous quantum GAN and the reordering analysis of its generator.
//
// Generator G(z): fixed-time circuit, readout <Z_0>. Discriminator D(x): the same
// kind of circuit on the rescaled sample value, D = (<Z_0> + 1) / 2. Losses, per
// minibatch mean:
//   L_D = -1/2 (E log D(x) + E log(1 - D(G(z))))   discriminator objective
//   L_G = -E log(1 - D(G(z)))                         reported generator term
//   L_G,ns = -E log D(G(z))                           default training objective
// Both reported terms equal ln 2 at the Nash point D = 1/2.
//
// Reordering: sorting G over a z grid gives h (ordered position -> z) and inv[h];
// Q_GAN(z~) = G(h(z~)). A normal quantile obeys Q'' - (Q - mu)/sigma^2 Q'^2 = 0, so
// the unordered generator obeys
//   G'' - (G - mu)/sigma^2 G'^2 = (inv[h]'' / inv[h]') G'.

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qqm/qqm_train.hpp"
#include "qqm/quantile_model.hpp"

namespace qqm {

inline constexpr double kDiscriminatorClamp = 1e-12;

/// Affine map from [lo, hi] onto [-0.99, 0.99], the discriminator's input domain.
struct InputScale {
    double lo = -1.0;
    double hi = 1.0;

    double slope() const { return 1.98 / (hi - lo); }
    double operator()(double x) const { return -0.99 + slope() * (x - lo); }
};

struct QganConfig {
    GeneratorSpec generator;
    GeneratorSpec discriminator;
    int epochs = 2000;
    double epsilon = 0.1;
    int batch_real = 64;
    int batch_fake = 64;
    int ks_samples = 2000;
    AdamSettings adam_generator;
    AdamSettings adam_discriminator;
    bool saturating = false; ///< train G on -L_G instead of L_G,ns
    std::uint64_t seed = 0;
    int threads = 1;

    /// Six qubits, Chebyshev tower, depth-6 HEA, <Z_0> readouts.
    static QganConfig defaults();
    void validate() const;
};

struct GanLosses {
    double d = 0.0;        ///< L_D
    double g = 0.0;        ///< L_G, reported
    double g_train = 0.0;  ///< L_G,ns (or L_G when saturating)
    std::size_t clamped = 0;
};

/// Losses from discriminator outputs on a real and a fake batch. Outputs are clamped
/// to [1e-12, 1 - 1e-12] and clamps are counted.
GanLosses gan_losses(std::span<const double> d_real, std::span<const double> d_fake);

struct QganRow {
    int epoch = 0;
    double loss_d = 0.0;
    double loss_g = 0.0;
    double loss_g_train = 0.0;
    double gap = 0.0;
    double ks = std::numeric_limits<double>::quiet_NaN(); ///< only where the gap condition fired
    std::size_t clamped = 0;
};

struct QganResult {
    Eigen::VectorXd theta_g;  ///< best snapshot, or the final parameters if none fired
    Eigen::VectorXd theta_d;
    Eigen::VectorXd last_theta_g;
    Eigen::VectorXd last_theta_d;
    bool snapshot = false;
    int best_epoch = -1;
    double best_ks = std::numeric_limits<double>::quiet_NaN();
    double best_loss_d = std::numeric_limits<double>::quiet_NaN();
    double best_loss_g = std::numeric_limits<double>::quiet_NaN();
    InputScale scale;
    std::vector<QganRow> history;
    std::vector<std::string> warnings;
};

/// The pair of circuits and the input scaling for one training set.
class Qgan {
public:
    Qgan(const QganConfig& cfg, std::span<const double> data);

    const Generator& generator() const { return gen_; }
    const Generator& discriminator() const { return disc_; }
    const InputScale& scale() const { return scale_; }

    double generate(const Eigen::VectorXd& theta_g, double z) const { return gen_.circuit_value(theta_g, z, 0.0); }
    /// Unclamped discriminator output.
    double discriminate(const Eigen::VectorXd& theta_d, double x) const;

private:
    Generator gen_;
    Generator disc_;
    InputScale scale_;
};

struct GanGradient {
    GanLosses losses;
    Eigen::VectorXd grad;
};

/// L_D and its theta_D-gradient on real samples `xr` and fakes G(z), generator frozen.
GanGradient discriminator_gradient(const Qgan& gan, const Eigen::VectorXd& theta_g, const Eigen::VectorXd& theta_d,
                                   std::span<const double> xr, std::span<const double> z, int threads = 1);
/// Generator objective (L_G,ns, or -L_G when saturating) and its theta_G-gradient.
/// Only the fake batch enters, so losses.d is NaN.
GanGradient generator_gradient(const Qgan& gan, const Eigen::VectorXd& theta_g, const Eigen::VectorXd& theta_d,
                               std::span<const double> z, bool saturating, int threads = 1);

/// Alternating Adam updates, one discriminator and one generator step per epoch.
/// Whenever |L_D - L_G| < epsilon a fresh generator batch is compared with the
/// data by two-sample KS; the snapshot with the smallest KS is returned.
QganResult train_qgan(const QganConfig& cfg, std::span<const double> data);

// ---------------------------------------------------------------------------
// Reordering analysis

struct ReorderMap {
    std::vector<double> grid;
    std::vector<std::size_t> h;   ///< ordered position j -> grid index of z
    std::vector<std::size_t> inv; ///< grid index i -> ordered position

    double h_value(std::size_t j) const { return grid[h[j]]; }
    double inv_value(std::size_t i) const { return grid[inv[i]]; }
};

struct Reordered {
    ReorderMap map;
    std::vector<double> q; ///< Q_GAN on the same grid, non-decreasing
};

/// Stable ascending sort of generator values on `z` (ties keep grid order).
Reordered reorder_generator(std::span<const double> z, std::span<const double> g);

/// Q'' - (Q - mu)/sigma^2 Q'^2
double quantile_ode_residual(double q, double dq, double d2q, double mu, double sigma);

/// Normal quantile mu + sigma sqrt(2) inverf(z) with closed-form z-derivatives (dt = 0).
QuantileJet normal_quantile(double mu, double sigma, double z);

struct Derivatives {
    std::vector<double> d1;
    std::vector<double> d2;
};

/// Three-point differences on a (possibly non-uniform) grid, one-sided at the ends.
Derivatives central_differences(std::span<const double> x, std::span<const double> y);

struct OdeAnalysis {
    std::vector<double> z;
    std::vector<double> lhs;
    std::vector<double> rhs;
    std::vector<double> inv;    ///< inv[h](z)
    std::vector<double> inv_d1;
    std::vector<double> inv_d2;
    std::vector<bool> flagged;  ///< non-differentiable inv[h]
    double threshold = 0.0;
    std::size_t n_flagged = 0;
    double max_abs_diff = 0.0;  ///< max |lhs - rhs| over unflagged points
};

/// A point is flagged when its one-sided difference quotients of inv[h] differ by
/// more than flag_factor * median |quotient|, or when inv[h]' vanishes there.
OdeAnalysis reordered_ode_analysis(std::span<const double> z, std::span<const double> g,
                                   std::span<const double> dg, std::span<const double> d2g, const ReorderMap& map,
                                   double mu, double sigma, double flag_factor = 0.25);
/// Same, with G' and G'' from central differences of the tabulated curve.
OdeAnalysis reordered_ode_analysis(std::span<const double> z, std::span<const double> g, const ReorderMap& map,
                                   double mu, double sigma, double flag_factor = 0.25);

} // namespace qqm
