#include <doctest.h>

#include <numbers>

#include "dense_oracle.hpp"
#include "qqm/random.hpp"
#include "qqm/statevector.hpp"

using namespace qqm;
using std::numbers::pi;

TEST_CASE("zero_state") {
    const auto s1 = zero_state(1);
    CHECK(s1.amplitudes().size() == 2);
    CHECK(s1.amplitudes()(0) == std::complex<double>(1, 0));
    CHECK(s1.amplitudes()(1) == std::complex<double>(0, 0));
    CHECK(zero_state(2).norm_squared() == 1.0);
    CHECK(zero_state(6).amplitudes().size() == 64);
    CHECK_THROWS_AS(zero_state(0), ConfigError);
    CHECK_THROWS_AS(zero_state(25), ConfigError);
}

TEST_CASE("single gates") {
    auto s = apply_gate(zero_state(1), Gate::rx(0, pi));
    CHECK(std::abs(s.amplitudes()(0)) < 1e-15);
    CHECK(std::abs(s.amplitudes()(1) - std::complex<double>(0, -1)) < 1e-15);

    // |10> in qubit order (q1 q0) = index 1: qubit 0 set
    auto t = zero_state(2);
    t.apply(Gate::rx(0, pi)).apply(Gate::cnot(0, 1));
    CHECK(std::abs(std::abs(t.amplitudes()(3)) - 1.0) < 1e-15);

    CHECK_THROWS_AS(zero_state(2).apply(Gate::rx(2, 0.1)), ConfigError);
    CHECK_THROWS_AS(zero_state(2).apply(Gate::cnot(1, 1)), ConfigError);
}

TEST_CASE("expectation of total Z") {
    const auto cz = CostOperator::total_z(6);
    CHECK(expectation(zero_state(6), cz) == doctest::Approx(6.0));
    auto s = zero_state(6);
    for (int q = 0; q < 6; ++q) s.apply(Gate::rx(q, pi));
    CHECK(std::abs(expectation(s, cz) + 6.0) < 1e-12);
}

TEST_CASE("random circuits match the dense oracle and keep their norm") {
    Rng rng(7);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 1 + static_cast<int>(rng.index(4));
        const int len = 1 + static_cast<int>(rng.index(30));
        auto s = zero_state(n);
        oracle::Vec ref = oracle::Vec::Zero(Eigen::Index{1} << n);
        ref(0) = 1;
        for (int g = 0; g < len; ++g) {
            Gate gate;
            const int q = static_cast<int>(rng.index(n));
            const auto k = rng.index(4);
            if (k == 3 && n > 1) {
                int c = static_cast<int>(rng.index(n - 1));
                if (c >= q) ++c;
                gate = Gate::cnot(c, q);
            } else {
                gate = Gate{k == 0 ? GateKind::RX : k == 1 ? GateKind::RY : GateKind::RZ, q,
                            std::nullopt, rng.uniform(-4, 4)};
            }
            s.apply(gate);
            ref = oracle::gate(gate, n) * ref;
            CHECK(std::abs(s.norm_squared() - 1.0) <= 1e-12);
        }
        CHECK((s.amplitudes() - ref).cwiseAbs().maxCoeff() <= 1e-12);

        CostOperator c;
        c.global_weight = rng.uniform(-2, 2);
        for (int q = 0; q < n; ++q) {
            c.terms.push_back({q, static_cast<Pauli>(rng.index(3)), rng.uniform(-1, 1)});
        }
        const auto e = expectation_complex(s, std::vector<CostOperator>{c});
        CHECK(std::abs(e.imag()) <= 1e-12);
        const double dense = ref.dot(oracle::cost({c}, n) * ref).real();
        CHECK(std::abs(e.real() - dense) <= 1e-12);
        CHECK(std::abs(e.real()) <= c.norm_bound() + 1e-12);
    }
}
