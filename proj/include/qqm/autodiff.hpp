#pragma once

// Parameter-shift differentiation of circuit expectations.
//
// Derivatives with respect to an encoded variable use the slots the variable is
// bound to: every rotation is shifted by +-pi/2 and the results are combined with
// the analytic encoding derivatives phi_j', phi_j''. Derivatives with respect to
// theta shift the parameter slots. All expectations go through one counted entry
// point, ShiftEvaluator::expectation.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include "qqm/circuits.hpp"
#include "qqm/statevector.hpp"

namespace qqm {

/// Slot shifts in canonical form: sorted by slot, net quarter-turns per slot, zeros
/// dropped. Shifts of +pi and -pi stay distinct.
std::vector<SlotShift> canonical_shifts(std::vector<SlotShift> shifts);

class ShiftEvaluator {
public:
    ShiftEvaluator(const CircuitProgram& program, std::vector<CostOperator> costs,
                   bool caching = true);

    const CircuitProgram& program() const { return *program_; }
    const std::vector<CostOperator>& costs() const { return costs_; }

    /// sum_l alpha_l <C_l> on the program with `shifts` applied.
    double expectation(const Eigen::VectorXd& theta, const Inputs& in,
                       std::vector<SlotShift> shifts = {});

    /// Circuit simulations actually performed.
    std::uint64_t evaluations() const { return evaluations_; }
    std::uint64_t cache_hits() const { return hits_; }
    void reset_counters() { evaluations_ = hits_ = 0; }
    void clear_cache() { cache_.clear(); }
    bool caching() const { return caching_; }

private:
    struct Key {
        std::vector<double> theta;
        double z;
        double t;
        std::vector<std::pair<std::size_t, int>> shifts;
        bool operator<(const Key& o) const;
    };

    const CircuitProgram* program_;
    std::vector<CostOperator> costs_;
    bool caching_;
    std::map<Key, double> cache_;
    std::uint64_t evaluations_ = 0;
    std::uint64_t hits_ = 0;
};

/// 1/2 sum_j phi_j'(x) (<G_j^+> - <G_j^->). 2N evaluations on a cold cache.
double d_dvariable(ShiftEvaluator& ev, const Eigen::VectorXd& theta, const Inputs& in, Variable v,
                   const std::vector<SlotShift>& base_shifts = {});

/// 1/2 sum_j phi_j'' (<G_j^+> - <G_j^->)
///   + 1/4 sum_jk phi_j' phi_k' (<G_jk^++> - <G_jk^+-> - <G_jk^-+> + <G_jk^-->).
/// Naively 2N + 4N^2 evaluations; 2N^2 more once the value and first derivative are cached.
double d2_dvariable2(ShiftEvaluator& ev, const Eigen::VectorXd& theta, const Inputs& in, Variable v,
                     const std::vector<SlotShift>& base_shifts = {});

/// d<G>/d theta_k for every k via +-pi/2 shifts of each parameter slot.
/// `base_shifts` lets the caller differentiate an already shifted circuit.
Eigen::VectorXd grad_theta(ShiftEvaluator& ev, const Eigen::VectorXd& theta, const Inputs& in,
                           const std::vector<SlotShift>& base_shifts = {});

/// theta-gradients of the first and second variable derivatives, built from
/// grad_theta of every shifted circuit in the d/dx and d2/dx2 formulas.
Eigen::VectorXd grad_theta_of_d_dvariable(ShiftEvaluator& ev, const Eigen::VectorXd& theta,
                                          const Inputs& in, Variable v);
Eigen::VectorXd grad_theta_of_d2_dvariable2(ShiftEvaluator& ev, const Eigen::VectorXd& theta,
                                            const Inputs& in, Variable v);

} // namespace qqm
