#include "qqm/autodiff.hpp"

#include <algorithm>
#include <tuple>

namespace qqm {

std::vector<SlotShift> canonical_shifts(std::vector<SlotShift> shifts) {
    std::sort(shifts.begin(), shifts.end(),
              [](const SlotShift& a, const SlotShift& b) { return a.slot < b.slot; });
    std::vector<SlotShift> out;
    for (const auto& s : shifts) {
        if (!out.empty() && out.back().slot == s.slot) {
            out.back().quarter_turns += s.quarter_turns;
        } else {
            out.push_back(s);
        }
    }
    std::erase_if(out, [](const SlotShift& s) { return s.quarter_turns == 0; });
    return out;
}

bool ShiftEvaluator::Key::operator<(const Key& o) const {
    return std::tie(z, t, shifts, theta) < std::tie(o.z, o.t, o.shifts, o.theta);
}

ShiftEvaluator::ShiftEvaluator(const CircuitProgram& program, std::vector<CostOperator> costs,
                               bool caching)
    : program_(&program), costs_(std::move(costs)), caching_(caching) {
    if (costs_.empty()) {
        throw ConfigError("at least one cost operator is required");
    }
    for (const auto& c : costs_) {
        c.validate(program.n_qubits());
    }
}

double ShiftEvaluator::expectation(const Eigen::VectorXd& theta, const Inputs& in,
                                   std::vector<SlotShift> shifts) {
    shifts = canonical_shifts(std::move(shifts));
    Key key;
    if (caching_) {
        key.theta.assign(theta.data(), theta.data() + theta.size());
        key.z = in.z;
        key.t = in.t;
        for (const auto& s : shifts) {
            key.shifts.emplace_back(s.slot, s.quarter_turns);
        }
        if (auto it = cache_.find(key); it != cache_.end()) {
            ++hits_;
            return it->second;
        }
    }
    const QuantumState state = program_->run(theta, in, shifts);
    const double value = qqm::expectation(state, costs_);
    ++evaluations_;
    if (caching_) {
        cache_.emplace(std::move(key), value);
    }
    return value;
}

namespace {

std::vector<SlotShift> with(const std::vector<SlotShift>& base, std::initializer_list<SlotShift> extra) {
    std::vector<SlotShift> out = base;
    out.insert(out.end(), extra.begin(), extra.end());
    return out;
}

struct BoundSlot {
    std::size_t slot;
    Encoding enc;
};

std::vector<BoundSlot> bound_slots(const CircuitProgram& p, const Inputs& in, Variable v) {
    const auto slots = p.variable_slots(v);
    if (slots.empty()) {
        throw ConfigError("program does not encode variable " + to_string(v));
    }
    std::vector<BoundSlot> out;
    out.reserve(slots.size());
    for (auto s : slots) {
        const Binding& b = p.slots()[s].binding;
        out.push_back({s, encode(b.encoding, b.encoding_index, in[v])});
    }
    return out;
}

} // namespace

double d_dvariable(ShiftEvaluator& ev, const Eigen::VectorXd& theta, const Inputs& in, Variable v,
                   const std::vector<SlotShift>& base_shifts) {
    double acc = 0.0;
    for (const auto& [slot, enc] : bound_slots(ev.program(), in, v)) {
        const double plus = ev.expectation(theta, in, with(base_shifts, {{slot, 1}}));
        const double minus = ev.expectation(theta, in, with(base_shifts, {{slot, -1}}));
        acc += enc.d1 * (plus - minus);
    }
    return 0.5 * acc;
}

double d2_dvariable2(ShiftEvaluator& ev, const Eigen::VectorXd& theta, const Inputs& in, Variable v,
                     const std::vector<SlotShift>& base_shifts) {
    const auto bound = bound_slots(ev.program(), in, v);
    double first = 0.0;
    for (const auto& [slot, enc] : bound) {
        const double plus = ev.expectation(theta, in, with(base_shifts, {{slot, 1}}));
        const double minus = ev.expectation(theta, in, with(base_shifts, {{slot, -1}}));
        first += enc.d2 * (plus - minus);
    }
    double second = 0.0;
    for (const auto& [sj, ej] : bound) {
        for (const auto& [sk, ek] : bound) {
            const double pp = ev.expectation(theta, in, with(base_shifts, {{sj, 1}, {sk, 1}}));
            const double pm = ev.expectation(theta, in, with(base_shifts, {{sj, 1}, {sk, -1}}));
            const double mp = ev.expectation(theta, in, with(base_shifts, {{sj, -1}, {sk, 1}}));
            const double mm = ev.expectation(theta, in, with(base_shifts, {{sj, -1}, {sk, -1}}));
            second += ej.d1 * ek.d1 * (pp - pm - mp + mm);
        }
    }
    return 0.5 * first + 0.25 * second;
}

Eigen::VectorXd grad_theta(ShiftEvaluator& ev, const Eigen::VectorXd& theta, const Inputs& in,
                           const std::vector<SlotShift>& base_shifts) {
    const CircuitProgram& p = ev.program();
    p.check_theta(theta);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Binding& b = p.slots()[i].binding;
        if (b.source != Binding::Source::Parameter) {
            continue;
        }
        const double plus = ev.expectation(theta, in, with(base_shifts, {{i, 1}}));
        const double minus = ev.expectation(theta, in, with(base_shifts, {{i, -1}}));
        g(b.parameter) += b.value * 0.5 * (plus - minus);
    }
    return g;
}

Eigen::VectorXd grad_theta_of_d_dvariable(ShiftEvaluator& ev, const Eigen::VectorXd& theta,
                                          const Inputs& in, Variable v) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
    for (const auto& [slot, enc] : bound_slots(ev.program(), in, v)) {
        g += enc.d1 * (grad_theta(ev, theta, in, {{slot, 1}}) - grad_theta(ev, theta, in, {{slot, -1}}));
    }
    return 0.5 * g;
}

Eigen::VectorXd grad_theta_of_d2_dvariable2(ShiftEvaluator& ev, const Eigen::VectorXd& theta,
                                            const Inputs& in, Variable v) {
    const auto bound = bound_slots(ev.program(), in, v);
    Eigen::VectorXd first = Eigen::VectorXd::Zero(theta.size());
    Eigen::VectorXd second = Eigen::VectorXd::Zero(theta.size());
    for (const auto& [slot, enc] : bound) {
        first += enc.d2 * (grad_theta(ev, theta, in, {{slot, 1}}) - grad_theta(ev, theta, in, {{slot, -1}}));
    }
    for (const auto& [sj, ej] : bound) {
        for (const auto& [sk, ek] : bound) {
            second += ej.d1 * ek.d1 *
                      (grad_theta(ev, theta, in, {{sj, 1}, {sk, 1}}) - grad_theta(ev, theta, in, {{sj, 1}, {sk, -1}}) -
                       grad_theta(ev, theta, in, {{sj, -1}, {sk, 1}}) + grad_theta(ev, theta, in, {{sj, -1}, {sk, -1}}));
        }
    }
    return 0.5 * first + 0.25 * second;
}

} // namespace qqm
