#pragma once

// Gate programs with symbolic angle slots: feature maps, the hardware-efficient
// ansatz, and the identity-initialized sandwich layout.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qqm/statevector.hpp"

namespace qqm {

enum class Variable { Z = 0, T = 1 };

enum class FeatureMapKind { Product, Tower, ChebyshevTower };

std::string to_string(Variable v);
std::string to_string(FeatureMapKind k);
FeatureMapKind feature_map_kind_from_string(const std::string& s);

/// Encoded variables are kept this far from +-1 when derivatives are taken.
inline constexpr double kDomainMargin = 1e-9;

struct FeatureMapSpec {
    FeatureMapKind kind = FeatureMapKind::Product;
    Pauli axis = Pauli::Y;
    Variable variable = Variable::Z;
};

/// phi_j(x) with its first and second x-derivatives.
struct Encoding {
    double angle = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
};

/// j is the 1-based position of the qubit inside the map.
/// PRODUCT: asin(x); TOWER: j asin(x); CHEBYSHEV_TOWER: 2j acos(x). Requires |x| <= 1.
double encoding_angle(FeatureMapKind kind, int j, double x);

/// Throws DomainError unless |x| < 1 - kDomainMargin.
Encoding encode(FeatureMapKind kind, int j, double x);

struct AnsatzSpec {
    int n_qubits = 1;
    int depth = 1;

    int parameter_count() const { return 3 * n_qubits * depth; }
};

/// Where a slot's angle comes from.
struct Binding {
    enum class Source { Constant, Variable, Parameter };

    Source source = Source::Constant;
    double value = 0.0; ///< Constant: the angle. Parameter: multiplier on theta.
    Variable variable = Variable::Z;
    FeatureMapKind encoding = FeatureMapKind::Product;
    int encoding_index = 1;
    int parameter = -1;

    static Binding constant(double angle) { return {Source::Constant, angle}; }
    static Binding of_variable(Variable v, FeatureMapKind k, int j) {
        Binding b;
        b.source = Source::Variable;
        b.variable = v;
        b.encoding = k;
        b.encoding_index = j;
        return b;
    }
    static Binding of_parameter(int index, double scale = 1.0) {
        Binding b;
        b.source = Source::Parameter;
        b.parameter = index;
        b.value = scale;
        return b;
    }
};

struct Slot {
    GateKind kind = GateKind::RZ;
    int target = 0;
    int control = -1;
    Binding binding;
};

struct Inputs {
    double z = 0.0;
    double t = 0.0;

    double operator[](Variable v) const { return v == Variable::Z ? z : t; }
    double& operator[](Variable v) { return v == Variable::Z ? z : t; }
};

/// Adds quarter_turns * pi/2 to the angle of one slot.
struct SlotShift {
    std::size_t slot = 0;
    int quarter_turns = 0;
};

class CircuitProgram {
public:
    CircuitProgram() = default;
    explicit CircuitProgram(int n_qubits);

    int n_qubits() const { return n_qubits_; }
    int parameter_count() const { return parameter_count_; }
    const std::vector<Slot>& slots() const { return slots_; }
    std::size_t size() const { return slots_.size(); }

    void add(const Slot& slot);
    void add_rotation(Pauli axis, int qubit, const Binding& b);
    void add_cnot(int control, int target);

    /// Appends `other`, shifting its parameter indices by `parameter_offset`.
    void append(const CircuitProgram& other, int parameter_offset = 0);

    /// Slots bound to v, in program order.
    std::vector<std::size_t> variable_slots(Variable v) const;
    bool binds(Variable v) const;

    double angle(std::size_t slot, const Eigen::VectorXd& theta, const Inputs& in) const;
    Gate gate(std::size_t slot, const Eigen::VectorXd& theta, const Inputs& in) const;

    /// Throws ConfigError when theta has the wrong length.
    void check_theta(const Eigen::VectorXd& theta) const;

    QuantumState run(const Eigen::VectorXd& theta, const Inputs& in,
                     std::span<const SlotShift> shifts = {}) const;

    /// Applies the program to an existing state.
    void apply(QuantumState& state, const Eigen::VectorXd& theta, const Inputs& in,
               std::span<const SlotShift> shifts = {}) const;

private:
    int n_qubits_ = 0;
    int parameter_count_ = 0;
    std::vector<Slot> slots_;
};

CircuitProgram build_feature_map(const FeatureMapSpec& spec, int n_qubits);

/// depth x (RZ RY RZ on every qubit, then CNOT(0,1) ... CNOT(N-2,N-1)).
CircuitProgram build_hea(const AnsatzSpec& spec);

/// Gate-reversed HEA with negated angles over fresh parameter slots; with the same
/// theta it undoes build_hea(spec).
CircuitProgram build_hea_adjoint(const AnsatzSpec& spec);

/// Two single-qubit layers: RY(a_q) then RZ(b_q); angles = [a_0..a_{N-1}, b_0..b_{N-1}].
CircuitProgram build_init_layers(int n_qubits, std::span<const double> init_angles);

struct SandwichProgram {
    CircuitProgram program;
    Eigen::VectorXd theta0;
};

/// init layers -> U_a(th1) U_a^dag(th2) -> feature maps -> U_b(th3) U_b^dag(th4).
/// theta0 pairs th1 = th2 and th3 = th4 (random angles drawn from `seed`).
SandwichProgram build_initialized_sandwich(const AnsatzSpec& spec,
                                           const std::vector<FeatureMapSpec>& maps,
                                           std::span<const double> init_angles,
                                           std::uint64_t seed = 0);
SandwichProgram build_initialized_sandwich(const AnsatzSpec& spec, const FeatureMapSpec& fm,
                                           std::span<const double> init_angles,
                                           std::uint64_t seed = 0);

/// Result of fitting target values onto {cos phi_j(x), sin phi_j(x)}.
struct InitFit {
    FeatureMapSpec map;
    std::vector<double> init_angles;   ///< 2N entries for build_init_layers
    std::vector<double> alphas;        ///< per-qubit Z readout weights
    Eigen::VectorXd coefficients;      ///< [A_1, B_1, ..., A_N, B_N]
    double residual_rms = 0.0;
    double condition_number = 0.0;
    int rank = 0;
    bool rank_deficient = false;

    /// sum_j A_j cos phi_j(x) + B_j sin phi_j(x)
    double value(double x) const;

    /// Readout sum_j alpha_j Z_j matching the fit.
    CostOperator cost() const;
};

InitFit classical_init_fit(std::span<const std::pair<double, double>> target_points,
                           const FeatureMapSpec& fm, int n_qubits);

} // namespace qqm
