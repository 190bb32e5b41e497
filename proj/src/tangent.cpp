#include "qqm/tangent.hpp"

namespace qqm {

namespace {

using Block = AmplitudeBlock<double>;
using C = std::complex<double>;

// (f * P_q) applied to one column; f is -i/2 for R' and +i/2 for its adjoint
AmplitudeVector<double> pauli_times(const Block& x, Eigen::Index col, Pauli p, int q, C f) {
    AmplitudeVector<double> v = x.col(col);
    kernels::apply_pauli(v, p, q);
    return f * v;
}

double re_dot(const Eigen::Ref<const AmplitudeVector<double>>& a,
              const Eigen::Ref<const AmplitudeVector<double>>& b) {
    return a.dot(b).real();
}

} // namespace

TangentEngine::TangentEngine(const CircuitProgram& program, std::vector<CostOperator> costs)
    : program_(&program), costs_(std::move(costs)) {
    if (costs_.empty()) {
        throw ConfigError("at least one cost operator is required");
    }
    for (const auto& c : costs_) {
        c.validate(program.n_qubits());
    }
}

Jet TangentEngine::forward(const Eigen::VectorXd& theta, const Inputs& in, TangentTape* tape) const {
    const CircuitProgram& p = *program_;
    p.check_theta(theta);
    const Eigen::Index dim = Eigen::Index{1} << p.n_qubits();
    Block x = Block::Zero(dim, 4);
    x(0, 0) = 1.0;
    const C minus_half_i(0.0, -0.5);

    for (std::size_t i = 0; i < p.size(); ++i) {
        const Slot& s = p.slots()[i];
        if (s.kind == GateKind::CNOT) {
            kernels::apply_cnot(x, s.control, s.target);
            continue;
        }
        const Pauli axis = rotation_axis(s.kind);
        const Binding& b = s.binding;
        if (b.source != Binding::Source::Variable) {
            kernels::apply_rotation(x, axis, s.target, p.angle(i, theta, in));
            continue;
        }
        const Encoding e = encode(b.encoding, b.encoding_index, in[b.variable]);
        kernels::apply_rotation(x, axis, s.target, e.angle);
        const AmplitudeVector<double> u0 = pauli_times(x, 0, axis, s.target, minus_half_i);
        if (b.variable == Variable::Z) {
            const AmplitudeVector<double> u1 = pauli_times(x, 1, axis, s.target, minus_half_i);
            x.col(2) += 2.0 * e.d1 * u1 + e.d2 * u0 - 0.25 * e.d1 * e.d1 * x.col(0);
            x.col(1) += e.d1 * u0;
        } else {
            x.col(3) += e.d1 * u0;
        }
    }

    Block cx;
    apply_costs<double>(costs_, x, cx);
    Jet jet;
    jet.value = re_dot(x.col(0), cx.col(0));
    jet.dz = 2.0 * re_dot(x.col(1), cx.col(0));
    jet.dzz = 2.0 * re_dot(x.col(2), cx.col(0)) + 2.0 * re_dot(x.col(1), cx.col(1));
    jet.dt = 2.0 * re_dot(x.col(3), cx.col(0));
    if (tape) {
        tape->in = in;
        tape->bundle = std::move(x);
        tape->cost = std::move(cx);
        tape->jet = jet;
    }
    return jet;
}

void TangentEngine::backward(const Eigen::VectorXd& theta, const TangentTape& tape, const Jet& w,
                             Eigen::Ref<Eigen::VectorXd> grad) const {
    const CircuitProgram& p = *program_;
    p.check_theta(theta);
    if (grad.size() != theta.size()) {
        throw ConfigError("gradient buffer has the wrong length");
    }
    const Inputs& in = tape.in;
    Block x = tape.bundle;
    const Block& cx = tape.cost;

    // adjoints in the convention dL = Re sum_k <lam_k | d x_k>
    Block lam = Block::Zero(x.rows(), 4);
    lam.col(0) = 2.0 * w.value * cx.col(0) + 2.0 * w.dz * cx.col(1) + 2.0 * w.dzz * cx.col(2) +
                 2.0 * w.dt * cx.col(3);
    lam.col(1) = 2.0 * w.dz * cx.col(0) + 4.0 * w.dzz * cx.col(1);
    lam.col(2) = 2.0 * w.dzz * cx.col(0);
    lam.col(3) = 2.0 * w.dt * cx.col(0);

    const C minus_half_i(0.0, -0.5);
    const C plus_half_i(0.0, 0.5);
    for (std::size_t i = p.size(); i-- > 0;) {
        const Slot& s = p.slots()[i];
        if (s.kind == GateKind::CNOT) {
            kernels::apply_cnot(x, s.control, s.target);
            kernels::apply_cnot(lam, s.control, s.target);
            continue;
        }
        const Pauli axis = rotation_axis(s.kind);
        const Binding& b = s.binding;
        if (b.source != Binding::Source::Variable) {
            if (b.source == Binding::Source::Parameter) {
                double g = 0.0;
                for (Eigen::Index k = 0; k < 4; ++k) {
                    g += re_dot(lam.col(k), pauli_times(x, k, axis, s.target, minus_half_i));
                }
                grad(b.parameter) += b.value * g;
            }
            const double a = p.angle(i, theta, in);
            kernels::apply_rotation(x, axis, s.target, -a);
            kernels::apply_rotation(lam, axis, s.target, -a);
            continue;
        }

        const Encoding e = encode(b.encoding, b.encoding_index, in[b.variable]);
        // uncompute the bundle: in = M^-1 out
        kernels::apply_rotation(x, axis, s.target, -e.angle);
        const AmplitudeVector<double> u0 = pauli_times(x, 0, axis, s.target, minus_half_i);
        if (b.variable == Variable::Z) {
            x.col(1) -= e.d1 * u0;
            const AmplitudeVector<double> u1 = pauli_times(x, 1, axis, s.target, minus_half_i);
            x.col(2) -= 2.0 * e.d1 * u1 + e.d2 * u0 - 0.25 * e.d1 * e.d1 * x.col(0);
        } else {
            x.col(3) -= e.d1 * u0;
        }

        // lam_in = M^dag lam_out, with R'^dag = R^dag (iP/2) and R''^dag = -R^dag / 4
        kernels::apply_rotation(lam, axis, s.target, -e.angle);
        if (b.variable == Variable::Z) {
            const AmplitudeVector<double> w1 = pauli_times(lam, 1, axis, s.target, plus_half_i);
            const AmplitudeVector<double> w2 = pauli_times(lam, 2, axis, s.target, plus_half_i);
            lam.col(0) += e.d1 * w1 + e.d2 * w2 - 0.25 * e.d1 * e.d1 * lam.col(2);
            lam.col(1) += 2.0 * e.d1 * w2;
        } else {
            lam.col(0) += e.d1 * pauli_times(lam, 3, axis, s.target, plus_half_i);
        }
    }
}

} // namespace qqm
