#pragma once

// The trainable generator G_theta(z, t) = sum_l alpha_l <C_l> and the boundary wrappers
// that turn it into a quantile model f(z, t).
//
// Layouts:
//   MainText  U_theta U_z(z) U_t(t) |0>
//   Sandwich  init layers, U_a U_a^dag, U_t(t), U_z(z), U_b U_b^dag
// Boundary handling:
//   Pinned    f = G; the initial profile enters the loss at pin points
//   Floating  f(z, t) = u0(z) - G(z, t_b) + G(z, t), exact at t = t_b by construction

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qqm/circuits.hpp"
#include "qqm/sde_oracle.hpp"
#include "qqm/statevector.hpp"
#include "qqm/tangent.hpp"

namespace qqm {

enum class Layout { MainText, Sandwich };
enum class BoundaryKind { Pinned, Floating };

std::string to_string(Layout l);
std::string to_string(BoundaryKind b);

struct GeneratorSpec {
    int n_qubits = 6;
    FeatureMapSpec z_map{FeatureMapKind::Tower, Pauli::Y, Variable::Z};
    std::optional<FeatureMapSpec> t_map;
    int depth = 6;
    Layout layout = Layout::Sandwich;
    std::vector<CostOperator> costs; ///< empty means total Z with alpha = 1
    std::vector<double> init_angles; ///< sandwich only; empty means all zero

    AnsatzSpec ansatz() const { return {n_qubits, depth}; }
    std::vector<CostOperator> effective_costs() const;
    void validate() const;
};

/// u0 with its first two z-derivatives.
struct ProfileValue {
    double v = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
};

class FittedModel;

/// Initial profile u0(z) for the boundary: the analytic OU quantile at a time, a
/// fitted fixed-time model, or an arbitrary callable (not serializable).
struct InitialProfile {
    enum class Source { None, AnalyticOu, Model, Custom };

    Source source = Source::None;
    SdeParams params;
    double time = 0.0;
    std::shared_ptr<const FittedModel> model;
    std::function<ProfileValue(double)> custom;

    static InitialProfile analytic(const SdeParams& p, double t);
    static InitialProfile from_model(std::shared_ptr<const FittedModel> m, double t = 0.0);
    static InitialProfile from_function(std::function<ProfileValue(double)> f);

    bool available() const { return source != Source::None; }
    double value(double z) const;
    /// Throws DomainError at |z| >= 1 - 1e-9.
    ProfileValue jet(double z) const;
};

struct BoundaryMode {
    BoundaryKind kind = BoundaryKind::Pinned;
    InitialProfile u0;
    std::vector<double> pin_points;
    double pin_weight = 1.0;
    double time = 0.0; ///< t_b, where the initial profile is imposed

    void validate() const;
};

/// Value with the derivatives that were asked for.
struct ModelOutput {
    double value = 0.0;
    std::optional<double> dz;
    std::optional<double> dzz;
    std::optional<double> dt;
};

struct Want {
    bool dz = false;
    bool dzz = false;
    bool dt = false;
};

class Generator {
public:
    explicit Generator(GeneratorSpec spec, BoundaryMode boundary = {});

    const GeneratorSpec& spec() const { return spec_; }
    const BoundaryMode& boundary() const { return boundary_; }
    const CircuitProgram& program() const { return *program_; }
    const std::vector<CostOperator>& costs() const { return costs_; }
    int parameter_count() const { return program_->parameter_count(); }
    bool has_time() const { return spec_.t_map.has_value(); }

    /// Sandwich: paired identity blocks. MainText: i.i.d. uniform(-pi, pi).
    Eigen::VectorXd initial_theta(std::uint64_t seed) const;
    Eigen::VectorXd uniform_theta(std::uint64_t seed) const;

    /// Bare circuit G(z, t), no boundary wrapper.
    double circuit_value(const Eigen::VectorXd& theta, double z, double t) const;
    Jet circuit_jet(const Eigen::VectorXd& theta, double z, double t, TangentTape* tape = nullptr) const;
    void circuit_backward(const Eigen::VectorXd& theta, const TangentTape& tape, const Jet& w,
                          Eigen::Ref<Eigen::VectorXd> grad) const;

    /// f(z, t) with the boundary applied.
    ModelOutput evaluate(const Eigen::VectorXd& theta, double z, double t) const;
    /// Derivatives through parameter shift (the reference path).
    ModelOutput evaluate_with_derivatives(const Eigen::VectorXd& theta, double z, double t, Want want) const;
    /// All derivatives through the tangent engine.
    Jet jet(const Eigen::VectorXd& theta, double z, double t) const;

    /// f at n latent draws z ~ uniform(-1, 1) from `seed`.
    std::vector<double> sample(const Eigen::VectorXd& theta, double t, std::size_t n, std::uint64_t seed,
                               int threads = 1) const;

    /// sum_l |alpha_l| ||C_l||, a bound on |G|.
    double output_bound() const;

private:
    void check_time(bool need_dt) const;
    Inputs inputs(double z, double t) const { return {z, has_time() ? t : 0.0}; }

    GeneratorSpec spec_;
    BoundaryMode boundary_;
    std::shared_ptr<const CircuitProgram> program_;
    std::vector<CostOperator> costs_;
};

struct ModelInfo {
    std::uint64_t seed = 0;
    int epochs = 0;
    double final_loss = 0.0;
    std::string kind;
};

/// A generator with its trained parameters.
class FittedModel {
public:
    using Info = ModelInfo;

    FittedModel(Generator generator, Eigen::VectorXd theta, Info info = {});

    const Generator& generator() const { return generator_; }
    const Eigen::VectorXd& theta() const { return theta_; }
    const Info& info() const { return info_; }

    double value(double z, double t = 0.0) const { return generator_.evaluate(theta_, z, t).value; }
    Jet jet(double z, double t = 0.0) const { return generator_.jet(theta_, z, t); }

private:
    Generator generator_;
    Eigen::VectorXd theta_;
    Info info_;
};

// JSON model format. Doubles are written in shortest round-trip form, so a load
// reproduces every bit.
nlohmann::ordered_json spec_to_json(const GeneratorSpec& s);
GeneratorSpec spec_from_json(const nlohmann::json& j);
nlohmann::ordered_json model_to_json(const FittedModel& m);
FittedModel model_from_json(const nlohmann::json& j);
void save_model(const FittedModel& m, const std::string& path);
FittedModel load_model(const std::string& path);

} // namespace qqm
