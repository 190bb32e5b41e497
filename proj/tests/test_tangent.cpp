#include <doctest.h>

#include "qqm/autodiff.hpp"
#include "qqm/tangent.hpp"
#include "random_programs.hpp"

using namespace qqm;
using testing_util::random_costs;
using testing_util::random_program;
using testing_util::random_theta;

TEST_CASE("tangent jets agree with parameter shift") {
    Rng rng(99);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 1 + static_cast<int>(rng.index(4));
        const auto p = random_program(rng, n, 8 + static_cast<int>(rng.index(20)), true, true);
        const auto cost = random_costs(rng, n);
        const Eigen::VectorXd th = random_theta(rng, p.parameter_count());
        const Inputs in{rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};

        ShiftEvaluator ev(p, cost);
        TangentEngine te(p, cost);
        const Jet j = te.forward(th, in);
        CHECK(std::abs(j.value - ev.expectation(th, in)) <= 1e-12);
        if (p.binds(Variable::Z)) {
            CHECK(std::abs(j.dz - d_dvariable(ev, th, in, Variable::Z)) <= 1e-10);
            CHECK(std::abs(j.dzz - d2_dvariable2(ev, th, in, Variable::Z)) <= 1e-9);
        }
        if (p.binds(Variable::T)) {
            CHECK(std::abs(j.dt - d_dvariable(ev, th, in, Variable::T)) <= 1e-10);
        }
    }
}

TEST_CASE("adjoint sweep matches parameter-shift gradients") {
    Rng rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 1 + static_cast<int>(rng.index(4));
        const auto p = random_program(rng, n, 8 + static_cast<int>(rng.index(16)), true, true);
        const auto cost = random_costs(rng, n);
        const Eigen::VectorXd th = random_theta(rng, p.parameter_count());
        const Inputs in{rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};

        ShiftEvaluator ev(p, cost);
        TangentEngine te(p, cost);
        TangentTape tape;
        te.forward(th, in, &tape);
        Jet w{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        if (!p.binds(Variable::Z)) w.dz = w.dzz = 0.0;
        if (!p.binds(Variable::T)) w.dt = 0.0;

        Eigen::VectorXd g = Eigen::VectorXd::Zero(th.size());
        te.backward(th, tape, w, g);

        Eigen::VectorXd ref = w.value * grad_theta(ev, th, in);
        if (p.binds(Variable::Z)) {
            ref += w.dz * grad_theta_of_d_dvariable(ev, th, in, Variable::Z);
            ref += w.dzz * grad_theta_of_d2_dvariable2(ev, th, in, Variable::Z);
        }
        if (p.binds(Variable::T)) {
            ref += w.dt * grad_theta_of_d_dvariable(ev, th, in, Variable::T);
        }
        CHECK((g - ref).cwiseAbs().maxCoeff() <= 1e-9);
    }
}
