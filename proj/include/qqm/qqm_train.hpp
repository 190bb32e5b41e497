#pragma once

// Loss assembly and Adam training for quantile models.
//
//   L = w_data * mean_n (f(z_n, t_d) - q_n)^2
//     + w_sde  * mean_{z,t} r(z, t)^2
//     + w_pin  * mean_p (f(z_p, t_b) - u0(z_p))^2       (pinned boundary only)
//
// with the quantilized OU residual
//   r = f_t - [nu (mu - f) + (sigma^2 / 2) f_zz / max(|f_z|, eps)^2].
//
// Gradients are exact. The default backend pushes tangents forward and adjoints
// backward through each circuit; the parameter-shift backend builds the same
// gradient from shifted circuits and is kept as a reference.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qqm/quantile_model.hpp"
#include "qqm/sde_oracle.hpp"

namespace qqm {

std::vector<double> linspace(double a, double b, int n);

/// cos((2n - 1) pi / 2N), n = 1..N, returned ascending. The middle node of an odd N is exactly 0.
std::vector<double> chebyshev_nodes(int n);

struct TrainingGrid {
    std::vector<double> z;
    std::vector<double> t;

    std::size_t size() const { return z.size() * t.size(); }
    /// Sorted, unique, |z| < 1.
    void validate() const;
};

struct DataTargets {
    std::vector<double> z;
    std::vector<double> q;
    double t = 0.0; ///< time the data describes

    void validate() const;
};

/// Empirical quantiles of `samples` at the Chebyshev nodes. Sample i of N (sorted)
/// sits at probability (i + 1/2) / N; targets interpolate linearly between samples
/// and clamp beyond the outermost ones.
DataTargets prepare_quantile_targets(std::span<const double> samples, int n_points, double t = 0.0);

struct LossConfig {
    double data_weight = 1.0;
    double sde_weight = 1.0;
    double eps_slope = 1e-3;

    void validate() const;
};

/// r and its partial derivatives with respect to f, f_z, f_zz, f_t.
struct Residual {
    double r = 0.0;
    double d_f = 0.0;
    double d_fz = 0.0;
    double d_fzz = 0.0;
    double d_ft = 1.0;
};

Residual ou_residual(const Jet& f, const SdeParams& p, double eps_slope);
/// Residual of the model at (z, t), derivatives by parameter shift.
double ou_residual(const Generator& g, const Eigen::VectorXd& theta, double z, double t, const SdeParams& p,
                   double eps_slope);

/// mean_n (f(z_n, t_d) - q_n)^2
double data_loss(const Generator& g, const Eigen::VectorXd& theta, const DataTargets& targets);

/// sde_weight * mean over the grid of r^2
double sde_loss(const Generator& g, const Eigen::VectorXd& theta, const TrainingGrid& grid, const SdeParams& p,
                const LossConfig& cfg);

enum class GradientMethod { Tangent, ParameterShift };

struct TrainProblem {
    const Generator* generator = nullptr;
    std::optional<DataTargets> data;
    std::optional<TrainingGrid> grid;
    SdeParams params;
    LossConfig loss;
};

struct LossValue {
    double total = 0.0;
    double data = 0.0; ///< unweighted
    double sde = 0.0;  ///< unweighted mean r^2
    double pin = 0.0;  ///< unweighted
    Eigen::VectorXd grad;
};

struct EvalOptions {
    bool gradient = true;
    GradientMethod method = GradientMethod::Tangent;
    int threads = 1;
    /// Per-point gradient buffers summed in point order: bit-identical for any thread
    /// count. Otherwise one buffer per worker (deterministic for a fixed count).
    bool strict_deterministic = true;
};

/// Throws NumericError naming the grid point when a residual or loss term is not finite.
LossValue evaluate_loss(const TrainProblem& problem, const Eigen::VectorXd& theta, const EvalOptions& opt = {});

struct AdamSettings {
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
public:
    Adam(AdamSettings s, Eigen::Index n);

    void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);

    const AdamSettings& settings() const { return s_; }
    long long steps() const { return t_; }
    const Eigen::VectorXd& first_moment() const { return m_; }
    const Eigen::VectorXd& second_moment() const { return v_; }

private:
    AdamSettings s_;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
    long long t_ = 0;
};

struct HistoryRow {
    int epoch = 0;
    double total = 0.0;
    double data = 0.0;
    double sde = 0.0;
    double pin = 0.0;
};

struct TrainSettings {
    int epochs = 1000;
    AdamSettings adam;
    EvalOptions eval;
    /// Write a checkpoint every K epochs (0 disables).
    int checkpoint_every = 0;
    std::string checkpoint_path;
    /// Called after every epoch; return false to stop early.
    std::function<bool(const HistoryRow&)> on_epoch;
};

struct TrainResult {
    Eigen::VectorXd theta;      ///< parameters with the lowest recorded loss
    Eigen::VectorXd last_theta; ///< after the final update
    double best_loss = 0.0;
    int best_epoch = 0;
    std::vector<HistoryRow> history; ///< loss at the start of each epoch
};

TrainResult train(const TrainProblem& problem, Eigen::VectorXd theta0, const TrainSettings& settings);

} // namespace qqm
