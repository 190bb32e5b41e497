#include "qqm/circuits.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "qqm/random.hpp"

namespace qqm {

std::string to_string(Variable v) { return v == Variable::Z ? "z" : "t"; }

std::string to_string(FeatureMapKind k) {
    switch (k) {
    case FeatureMapKind::Product: return "product";
    case FeatureMapKind::Tower: return "tower";
    case FeatureMapKind::ChebyshevTower: return "chebyshev_tower";
    }
    return "?";
}

FeatureMapKind feature_map_kind_from_string(const std::string& s) {
    if (s == "product") return FeatureMapKind::Product;
    if (s == "tower") return FeatureMapKind::Tower;
    if (s == "chebyshev_tower") return FeatureMapKind::ChebyshevTower;
    throw ConfigError("unknown feature map kind '" + s +
                      "' (expected product, tower or chebyshev_tower)");
}

double encoding_angle(FeatureMapKind kind, int j, double x) {
    if (!(std::abs(x) <= 1.0)) {
        throw DomainError("encoded variable " + std::to_string(x) + " outside [-1, 1]");
    }
    switch (kind) {
    case FeatureMapKind::Product: return std::asin(x);
    case FeatureMapKind::Tower: return j * std::asin(x);
    case FeatureMapKind::ChebyshevTower: return 2.0 * j * std::acos(x);
    }
    return 0.0;
}

Encoding encode(FeatureMapKind kind, int j, double x) {
    if (!(std::abs(x) < 1.0 - kDomainMargin)) {
        throw DomainError("derivative requested at " + std::to_string(x) +
                          ", outside the open encoding domain");
    }
    const double w = 1.0 - x * x;
    const double inv_sqrt = 1.0 / std::sqrt(w);
    const double d1 = inv_sqrt;
    const double d2 = x * inv_sqrt / w;
    switch (kind) {
    case FeatureMapKind::Product: return {std::asin(x), d1, d2};
    case FeatureMapKind::Tower: return {j * std::asin(x), j * d1, j * d2};
    case FeatureMapKind::ChebyshevTower: return {2.0 * j * std::acos(x), -2.0 * j * d1, -2.0 * j * d2};
    }
    return {};
}

// ---------------------------------------------------------------------------

CircuitProgram::CircuitProgram(int n_qubits) : n_qubits_(n_qubits) {
    if (n_qubits < 1 || n_qubits > kMaxQubits) {
        throw ConfigError("n_qubits out of range: " + std::to_string(n_qubits));
    }
}

void CircuitProgram::add(const Slot& slot) {
    Gate probe{slot.kind, slot.target, std::nullopt, 0.0};
    if (slot.kind == GateKind::CNOT) {
        probe.control = slot.control;
    }
    probe.validate(n_qubits_);
    if (slot.binding.source == Binding::Source::Parameter) {
        if (slot.binding.parameter < 0) {
            throw ConfigError("negative parameter index");
        }
        parameter_count_ = std::max(parameter_count_, slot.binding.parameter + 1);
    }
    slots_.push_back(slot);
}

void CircuitProgram::add_rotation(Pauli axis, int qubit, const Binding& b) {
    add(Slot{rotation_gate(axis), qubit, -1, b});
}

void CircuitProgram::add_cnot(int control, int target) {
    add(Slot{GateKind::CNOT, target, control, Binding::constant(0.0)});
}

void CircuitProgram::append(const CircuitProgram& other, int parameter_offset) {
    if (other.n_qubits_ != n_qubits_) {
        throw ConfigError("cannot append programs of different widths");
    }
    for (Slot s : other.slots_) {
        if (s.binding.source == Binding::Source::Parameter) {
            s.binding.parameter += parameter_offset;
        }
        add(s);
    }
}

std::vector<std::size_t> CircuitProgram::variable_slots(Variable v) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        const auto& b = slots_[i].binding;
        if (b.source == Binding::Source::Variable && b.variable == v) {
            out.push_back(i);
        }
    }
    return out;
}

bool CircuitProgram::binds(Variable v) const { return !variable_slots(v).empty(); }

double CircuitProgram::angle(std::size_t slot, const Eigen::VectorXd& theta, const Inputs& in) const {
    const Binding& b = slots_[slot].binding;
    switch (b.source) {
    case Binding::Source::Constant: return b.value;
    case Binding::Source::Variable: return encoding_angle(b.encoding, b.encoding_index, in[b.variable]);
    case Binding::Source::Parameter: return b.value * theta(b.parameter);
    }
    return 0.0;
}

Gate CircuitProgram::gate(std::size_t slot, const Eigen::VectorXd& theta, const Inputs& in) const {
    const Slot& s = slots_[slot];
    if (s.kind == GateKind::CNOT) {
        return Gate::cnot(s.control, s.target);
    }
    return Gate{s.kind, s.target, std::nullopt, angle(slot, theta, in)};
}

void CircuitProgram::check_theta(const Eigen::VectorXd& theta) const {
    if (theta.size() != parameter_count_) {
        throw ConfigError("theta has " + std::to_string(theta.size()) + " entries, program expects " +
                          std::to_string(parameter_count_));
    }
}

void CircuitProgram::apply(QuantumState& state, const Eigen::VectorXd& theta, const Inputs& in,
                           std::span<const SlotShift> shifts) const {
    check_theta(theta);
    if (state.n_qubits() != n_qubits_) {
        throw ConfigError("state width does not match program");
    }
    auto& amps = state.amplitudes();
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        const Slot& s = slots_[i];
        if (s.kind == GateKind::CNOT) {
            kernels::apply_cnot(amps, s.control, s.target);
            continue;
        }
        double a = angle(i, theta, in);
        for (const auto& sh : shifts) {
            if (sh.slot == i) {
                a += sh.quarter_turns * (std::numbers::pi / 2);
            }
        }
        kernels::apply_rotation(amps, rotation_axis(s.kind), s.target, a);
    }
}

QuantumState CircuitProgram::run(const Eigen::VectorXd& theta, const Inputs& in,
                                 std::span<const SlotShift> shifts) const {
    QuantumState s = zero_state(n_qubits_);
    apply(s, theta, in, shifts);
    return s;
}

// ---------------------------------------------------------------------------

CircuitProgram build_feature_map(const FeatureMapSpec& spec, int n_qubits) {
    CircuitProgram p(n_qubits);
    for (int q = 0; q < n_qubits; ++q) {
        p.add_rotation(spec.axis, q, Binding::of_variable(spec.variable, spec.kind, q + 1));
    }
    return p;
}

CircuitProgram build_hea(const AnsatzSpec& spec) {
    if (spec.depth < 1) {
        throw ConfigError("ansatz depth must be >= 1");
    }
    CircuitProgram p(spec.n_qubits);
    int k = 0;
    for (int layer = 0; layer < spec.depth; ++layer) {
        for (int q = 0; q < spec.n_qubits; ++q) {
            p.add_rotation(Pauli::Z, q, Binding::of_parameter(k++));
            p.add_rotation(Pauli::Y, q, Binding::of_parameter(k++));
            p.add_rotation(Pauli::Z, q, Binding::of_parameter(k++));
        }
        for (int q = 0; q + 1 < spec.n_qubits; ++q) {
            p.add_cnot(q, q + 1);
        }
    }
    return p;
}

CircuitProgram build_hea_adjoint(const AnsatzSpec& spec) {
    const CircuitProgram forward = build_hea(spec);
    CircuitProgram p(spec.n_qubits);
    const auto& slots = forward.slots();
    for (auto it = slots.rbegin(); it != slots.rend(); ++it) {
        Slot s = *it;
        if (s.binding.source == Binding::Source::Parameter) {
            s.binding.value = -s.binding.value;
        }
        p.add(s);
    }
    return p;
}

CircuitProgram build_init_layers(int n_qubits, std::span<const double> init_angles) {
    if (static_cast<int>(init_angles.size()) != 2 * n_qubits) {
        throw ConfigError("init_angles must have 2 * n_qubits = " + std::to_string(2 * n_qubits) +
                          " entries, got " + std::to_string(init_angles.size()));
    }
    CircuitProgram p(n_qubits);
    for (int q = 0; q < n_qubits; ++q) {
        p.add_rotation(Pauli::Y, q, Binding::constant(init_angles[q]));
    }
    for (int q = 0; q < n_qubits; ++q) {
        p.add_rotation(Pauli::Z, q, Binding::constant(init_angles[n_qubits + q]));
    }
    return p;
}

SandwichProgram build_initialized_sandwich(const AnsatzSpec& spec,
                                           const std::vector<FeatureMapSpec>& maps,
                                           std::span<const double> init_angles, std::uint64_t seed) {
    const int n = spec.n_qubits;
    const int block = spec.parameter_count();
    CircuitProgram p = build_init_layers(n, init_angles);
    p.append(build_hea(spec), 0);
    p.append(build_hea_adjoint(spec), block);
    for (const auto& fm : maps) {
        p.append(build_feature_map(fm, n));
    }
    p.append(build_hea(spec), 2 * block);
    p.append(build_hea_adjoint(spec), 3 * block);

    Rng rng(seed);
    Eigen::VectorXd theta0(4 * block);
    for (int i = 0; i < block; ++i) {
        theta0(i) = rng.uniform(-std::numbers::pi, std::numbers::pi);
        theta0(block + i) = theta0(i);
    }
    for (int i = 0; i < block; ++i) {
        theta0(2 * block + i) = rng.uniform(-std::numbers::pi, std::numbers::pi);
        theta0(3 * block + i) = theta0(2 * block + i);
    }
    return {std::move(p), std::move(theta0)};
}

SandwichProgram build_initialized_sandwich(const AnsatzSpec& spec, const FeatureMapSpec& fm,
                                           std::span<const double> init_angles, std::uint64_t seed) {
    return build_initialized_sandwich(spec, std::vector<FeatureMapSpec>{fm}, init_angles, seed);
}

// ---------------------------------------------------------------------------

double InitFit::value(double x) const {
    double v = 0.0;
    const int n = static_cast<int>(coefficients.size() / 2);
    for (int j = 1; j <= n; ++j) {
        const double phi = encoding_angle(map.kind, j, x);
        v += coefficients(2 * (j - 1)) * std::cos(phi) + coefficients(2 * (j - 1) + 1) * std::sin(phi);
    }
    return v;
}

CostOperator InitFit::cost() const {
    CostOperator c;
    for (std::size_t q = 0; q < alphas.size(); ++q) {
        c.terms.push_back({static_cast<int>(q), Pauli::Z, alphas[q]});
    }
    return c;
}

InitFit classical_init_fit(std::span<const std::pair<double, double>> target_points,
                           const FeatureMapSpec& fm, int n_qubits) {
    if (fm.axis == Pauli::Z) {
        throw ConfigError("classical initialization needs an X or Y feature map: a Z-axis map "
                          "commutes with the Z readout of the initialization stage");
    }
    const auto m = static_cast<Eigen::Index>(target_points.size());
    if (m < 2 * n_qubits) {
        throw ConfigError("classical_init_fit needs at least 2 * n_qubits target points");
    }
    Eigen::MatrixXd basis(m, 2 * n_qubits);
    Eigen::VectorXd y(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double x = target_points[i].first;
        y(i) = target_points[i].second;
        for (int j = 1; j <= n_qubits; ++j) {
            const double phi = encoding_angle(fm.kind, j, x);
            basis(i, 2 * (j - 1)) = std::cos(phi);
            basis(i, 2 * (j - 1) + 1) = std::sin(phi);
        }
    }

    InitFit fit;
    fit.map = fm;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(basis);
    fit.coefficients = cod.solve(y);
    fit.rank = static_cast<int>(cod.rank());
    fit.rank_deficient = fit.rank < 2 * n_qubits;
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(basis).singularValues();
    fit.condition_number = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1)
                                                 : std::numeric_limits<double>::infinity();
    fit.residual_rms = std::sqrt((basis * fit.coefficients - y).squaredNorm() / static_cast<double>(m));

    // One common readout weight large enough for every qubit's (A_j, B_j).
    double alpha = 0.0;
    for (int j = 0; j < n_qubits; ++j) {
        alpha = std::max(alpha, std::hypot(fit.coefficients(2 * j), fit.coefficients(2 * j + 1)));
    }
    if (alpha == 0.0) {
        alpha = 1.0;
    }
    fit.alphas.assign(n_qubits, alpha);

    // <Z_q> after RY(a) RZ(b) and R_P(phi):
    //   P = X: cos a cos phi + sin a sin b sin phi
    //   P = Y: cos a cos phi - sin a cos b sin phi
    fit.init_angles.assign(2 * n_qubits, 0.0);
    for (int q = 0; q < n_qubits; ++q) {
        const double c1 = std::clamp(fit.coefficients(2 * q) / alpha, -1.0, 1.0);
        const double c2 = fit.coefficients(2 * q + 1) / alpha;
        const double a = std::acos(c1);
        const double s = std::sin(a);
        double b = 0.0;
        if (s > 1e-15) {
            b = fm.axis == Pauli::X ? std::asin(std::clamp(c2 / s, -1.0, 1.0))
                                    : std::acos(std::clamp(-c2 / s, -1.0, 1.0));
        }
        fit.init_angles[q] = a;
        fit.init_angles[n_qubits + q] = b;
    }
    return fit;
}

} // namespace qqm
