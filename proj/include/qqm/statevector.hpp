#pragma once

// Dense statevector simulation for small qubit registers.
//
// Bit convention: qubit 0 is the least-significant bit of the amplitude index,
// so amplitude k of an n-qubit state holds the coefficient of |b_{n-1} ... b_1 b_0>
// with k = sum_q b_q 2^q.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "qqm/errors.hpp"

namespace qqm {

enum class Pauli { X, Y, Z };

enum class GateKind { RX, RY, RZ, CNOT };

inline constexpr int kMaxQubits = 24;

std::string to_string(Pauli p);
Pauli pauli_from_string(const std::string& s);
std::string to_string(GateKind k);

inline Pauli rotation_axis(GateKind k) {
    switch (k) {
    case GateKind::RX: return Pauli::X;
    case GateKind::RY: return Pauli::Y;
    case GateKind::RZ: return Pauli::Z;
    default: throw ConfigError("CNOT has no rotation axis");
    }
}

inline GateKind rotation_gate(Pauli axis) {
    switch (axis) {
    case Pauli::X: return GateKind::RX;
    case Pauli::Y: return GateKind::RY;
    default: return GateKind::RZ;
    }
}

/// A single gate with a concrete angle. Rotations are exp(-i angle P / 2).
struct Gate {
    GateKind kind = GateKind::RZ;
    int target = 0;
    std::optional<int> control;
    double angle = 0.0;

    static Gate rx(int q, double a) { return {GateKind::RX, q, std::nullopt, a}; }
    static Gate ry(int q, double a) { return {GateKind::RY, q, std::nullopt, a}; }
    static Gate rz(int q, double a) { return {GateKind::RZ, q, std::nullopt, a}; }
    static Gate cnot(int c, int t) { return {GateKind::CNOT, t, c, 0.0}; }

    void validate(int n_qubits) const;
};

template <typename Scalar>
using AmplitudeVector = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;

template <typename Scalar>
using AmplitudeBlock = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;

// ---------------------------------------------------------------------------
// Kernels. They act on every column of a dense block, so a bundle of vectors
// (a state together with its tangents, or a batch of bras) shares one sweep.

namespace kernels {

template <typename Derived>
void apply_rotation(Eigen::MatrixBase<Derived>& psi, Pauli axis, int qubit,
                    typename Derived::Scalar::value_type angle) {
    using C = typename Derived::Scalar;
    using R = typename C::value_type;
    const R c = std::cos(angle / 2);
    const R s = std::sin(angle / 2);
    const Eigen::Index stride = Eigen::Index{1} << qubit;
    const Eigen::Index dim = psi.rows();
    const Eigen::Index cols = psi.cols();
    for (Eigen::Index col = 0; col < cols; ++col) {
        for (Eigen::Index base = 0; base < dim; base += 2 * stride) {
            for (Eigen::Index i0 = base; i0 < base + stride; ++i0) {
                const Eigen::Index i1 = i0 + stride;
                const C a0 = psi(i0, col);
                const C a1 = psi(i1, col);
                switch (axis) {
                case Pauli::X:
                    psi(i0, col) = c * a0 + C(0, -s) * a1;
                    psi(i1, col) = C(0, -s) * a0 + c * a1;
                    break;
                case Pauli::Y:
                    psi(i0, col) = c * a0 - s * a1;
                    psi(i1, col) = s * a0 + c * a1;
                    break;
                case Pauli::Z:
                    psi(i0, col) = C(c, -s) * a0;
                    psi(i1, col) = C(c, s) * a1;
                    break;
                }
            }
        }
    }
}

/// psi <- P_qubit psi
template <typename Derived>
void apply_pauli(Eigen::MatrixBase<Derived>& psi, Pauli p, int qubit) {
    using C = typename Derived::Scalar;
    const Eigen::Index stride = Eigen::Index{1} << qubit;
    const Eigen::Index dim = psi.rows();
    const Eigen::Index cols = psi.cols();
    for (Eigen::Index col = 0; col < cols; ++col) {
        for (Eigen::Index base = 0; base < dim; base += 2 * stride) {
            for (Eigen::Index i0 = base; i0 < base + stride; ++i0) {
                const Eigen::Index i1 = i0 + stride;
                const C a0 = psi(i0, col);
                const C a1 = psi(i1, col);
                switch (p) {
                case Pauli::X:
                    psi(i0, col) = a1;
                    psi(i1, col) = a0;
                    break;
                case Pauli::Y:
                    psi(i0, col) = C(0, -1) * a1;
                    psi(i1, col) = C(0, 1) * a0;
                    break;
                case Pauli::Z:
                    psi(i1, col) = -a1;
                    break;
                }
            }
        }
    }
}

template <typename Derived>
void apply_cnot(Eigen::MatrixBase<Derived>& psi, int control, int target) {
    const Eigen::Index cmask = Eigen::Index{1} << control;
    const Eigen::Index tmask = Eigen::Index{1} << target;
    const Eigen::Index dim = psi.rows();
    for (Eigen::Index i = 0; i < dim; ++i) {
        if ((i & cmask) && !(i & tmask)) {
            psi.row(i).swap(psi.row(i | tmask));
        }
    }
}

template <typename Derived>
void apply_gate(Eigen::MatrixBase<Derived>& psi, const Gate& g) {
    if (g.kind == GateKind::CNOT) {
        apply_cnot(psi, *g.control, g.target);
    } else {
        apply_rotation(psi, rotation_axis(g.kind), g.target, g.angle);
    }
}

} // namespace kernels

// ---------------------------------------------------------------------------

/// Weighted sum of single-qubit Pauli terms, scaled by a global weight alpha.
struct PauliTerm {
    int qubit = 0;
    Pauli pauli = Pauli::Z;
    double weight = 1.0;
};

struct CostOperator {
    std::vector<PauliTerm> terms;
    double global_weight = 1.0;

    /// sum_j Z_j on n qubits
    static CostOperator total_z(int n_qubits, double alpha = 1.0);
    static CostOperator single_z(int qubit, double alpha = 1.0);

    /// Operator-norm bound |alpha| * sum |w|.
    double norm_bound() const;
    void validate(int n_qubits) const;
};

/// out <- (sum_l C_l) psi, column by column.
template <typename Scalar>
void apply_costs(const std::vector<CostOperator>& costs, const AmplitudeBlock<Scalar>& psi,
                 AmplitudeBlock<Scalar>& out) {
    out.setZero(psi.rows(), psi.cols());
    AmplitudeBlock<Scalar> scratch;
    for (const auto& cost : costs) {
        for (const auto& term : cost.terms) {
            const Scalar w = static_cast<Scalar>(term.weight * cost.global_weight);
            if (term.pauli == Pauli::Z) {
                // diagonal fast path
                const Eigen::Index mask = Eigen::Index{1} << term.qubit;
                for (Eigen::Index i = 0; i < psi.rows(); ++i) {
                    const Scalar sign = (i & mask) ? -w : w;
                    out.row(i) += sign * psi.row(i);
                }
            } else {
                scratch = psi;
                kernels::apply_pauli(scratch, term.pauli, term.qubit);
                out += w * scratch;
            }
        }
    }
}

/// Normalized n-qubit register with 2^n complex amplitudes.
template <typename Scalar>
class BasicState {
public:
    using Vector = AmplitudeVector<Scalar>;

    BasicState() = default;

    static BasicState zero(int n_qubits) {
        if (n_qubits < 1 || n_qubits > kMaxQubits) {
            throw ConfigError("n_qubits must lie in [1, " + std::to_string(kMaxQubits) +
                              "], got " + std::to_string(n_qubits));
        }
        BasicState s;
        s.n_qubits_ = n_qubits;
        s.amplitudes_ = Vector::Zero(Eigen::Index{1} << n_qubits);
        s.amplitudes_(0) = 1;
        return s;
    }

    /// Takes ownership of the amplitudes; the length must be a power of two.
    static BasicState from_amplitudes(Vector amplitudes) {
        const Eigen::Index dim = amplitudes.size();
        int n = 0;
        while ((Eigen::Index{1} << n) < dim) {
            ++n;
        }
        if (dim < 2 || (Eigen::Index{1} << n) != dim || n > kMaxQubits) {
            throw ConfigError("amplitude vector length must be 2^n with 1 <= n <= 24");
        }
        BasicState s;
        s.n_qubits_ = n;
        s.amplitudes_ = std::move(amplitudes);
        return s;
    }

    int n_qubits() const { return n_qubits_; }
    const Vector& amplitudes() const { return amplitudes_; }
    Vector& amplitudes() { return amplitudes_; }
    Scalar norm_squared() const { return amplitudes_.squaredNorm(); }

    BasicState& apply(const Gate& g) {
        g.validate(n_qubits_);
        kernels::apply_gate(amplitudes_, g);
        return *this;
    }

private:
    int n_qubits_ = 0;
    Vector amplitudes_;
};

using QuantumState = BasicState<double>;

inline QuantumState zero_state(int n_qubits) { return QuantumState::zero(n_qubits); }

/// Functional form; mutates and returns the moved-in state.
inline QuantumState apply_gate(QuantumState state, const Gate& gate) {
    state.apply(gate);
    return state;
}

/// <psi| C |psi> before discarding the imaginary part.
template <typename Scalar>
std::complex<Scalar> expectation_complex(const BasicState<Scalar>& state,
                                         const std::vector<CostOperator>& costs) {
    for (const auto& c : costs) {
        c.validate(state.n_qubits());
    }
    AmplitudeBlock<Scalar> psi = state.amplitudes();
    AmplitudeBlock<Scalar> cpsi;
    apply_costs<Scalar>(costs, psi, cpsi);
    return psi.col(0).dot(cpsi.col(0));
}

template <typename Scalar>
Scalar expectation(const BasicState<Scalar>& state, const std::vector<CostOperator>& costs) {
    return expectation_complex(state, costs).real();
}

template <typename Scalar>
Scalar expectation(const BasicState<Scalar>& state, const CostOperator& cost) {
    return expectation(state, std::vector<CostOperator>{cost});
}

} // namespace qqm
