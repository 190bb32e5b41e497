#pragma once

// Exact variable derivatives and theta-gradients by forward tangents plus one adjoint
// sweep.
//
// The forward pass carries a bundle of four columns through the program:
//   psi, d psi/dz, d2 psi/dz2, d psi/dt.
// A z-encoded rotation R(phi(z)) has R' = (-iP/2) R and R'' = -R/4 in phi, so
//   out1 = R in1 + phi' R' in0
//   out2 = R in2 + 2 phi' R' in1 + (phi'' R' + phi'^2 R'') in0
// and likewise for t in column 3. All other gates act on every column alike.
// The jet readouts are quadratic forms in the bundle; backward() seeds their adjoints
// and sweeps the program in reverse, uncomputing the bundle as it goes, so memory
// does not grow with circuit length. The results agree with parameter shift to
// rounding error.

#include <Eigen/Dense>

#include <vector>

#include "qqm/circuits.hpp"
#include "qqm/statevector.hpp"

namespace qqm {

/// G and its variable derivatives at one input point.
struct Jet {
    double value = 0.0;
    double dz = 0.0;
    double dzz = 0.0;
    double dt = 0.0;
};

/// Bundle state after a forward pass, reused by backward().
struct TangentTape {
    Inputs in;
    AmplitudeBlock<double> bundle; ///< 2^n x 4
    AmplitudeBlock<double> cost;   ///< C applied to each bundle column
    Jet jet;
};

class TangentEngine {
public:
    TangentEngine(const CircuitProgram& program, std::vector<CostOperator> costs);

    const CircuitProgram& program() const { return *program_; }

    Jet forward(const Eigen::VectorXd& theta, const Inputs& in, TangentTape* tape = nullptr) const;

    /// grad += d/dtheta (w.value * G + w.dz * G_z + w.dzz * G_zz + w.dt * G_t).
    void backward(const Eigen::VectorXd& theta, const TangentTape& tape, const Jet& w,
                  Eigen::Ref<Eigen::VectorXd> grad) const;

private:
    const CircuitProgram* program_;
    std::vector<CostOperator> costs_;
};

} // namespace qqm
