#include "qqm/statevector.hpp"

#include <cmath>

namespace qqm {

std::string to_string(Pauli p) {
    switch (p) {
    case Pauli::X: return "X";
    case Pauli::Y: return "Y";
    case Pauli::Z: return "Z";
    }
    return "?";
}

Pauli pauli_from_string(const std::string& s) {
    if (s == "X" || s == "x") return Pauli::X;
    if (s == "Y" || s == "y") return Pauli::Y;
    if (s == "Z" || s == "z") return Pauli::Z;
    throw ConfigError("unknown Pauli axis '" + s + "' (expected X, Y or Z)");
}

std::string to_string(GateKind k) {
    switch (k) {
    case GateKind::RX: return "RX";
    case GateKind::RY: return "RY";
    case GateKind::RZ: return "RZ";
    case GateKind::CNOT: return "CNOT";
    }
    return "?";
}

void Gate::validate(int n_qubits) const {
    if (target < 0 || target >= n_qubits) {
        throw ConfigError("gate target " + std::to_string(target) + " out of range for " +
                          std::to_string(n_qubits) + " qubits");
    }
    if (kind == GateKind::CNOT) {
        if (!control) {
            throw ConfigError("CNOT requires a control qubit");
        }
        if (*control < 0 || *control >= n_qubits || *control == target) {
            throw ConfigError("invalid CNOT control " + std::to_string(*control));
        }
    } else if (control) {
        throw ConfigError(to_string(kind) + " does not take a control qubit");
    }
}

CostOperator CostOperator::total_z(int n_qubits, double alpha) {
    CostOperator c;
    c.global_weight = alpha;
    for (int q = 0; q < n_qubits; ++q) {
        c.terms.push_back({q, Pauli::Z, 1.0});
    }
    return c;
}

CostOperator CostOperator::single_z(int qubit, double alpha) {
    CostOperator c;
    c.global_weight = alpha;
    c.terms.push_back({qubit, Pauli::Z, 1.0});
    return c;
}

double CostOperator::norm_bound() const {
    double s = 0.0;
    for (const auto& t : terms) {
        s += std::abs(t.weight);
    }
    return std::abs(global_weight) * s;
}

void CostOperator::validate(int n_qubits) const {
    if (!std::isfinite(global_weight)) {
        throw ConfigError("cost operator weight must be finite");
    }
    for (const auto& t : terms) {
        if (t.qubit < 0 || t.qubit >= n_qubits) {
            throw ConfigError("cost term qubit " + std::to_string(t.qubit) + " out of range");
        }
        if (!std::isfinite(t.weight)) {
            throw ConfigError("cost term weight must be finite");
        }
    }
}

} // namespace qqm
