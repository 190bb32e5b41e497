#include "qqm/qqm_train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "qqm/autodiff.hpp"
#include "qqm/errors.hpp"
#include "qqm/parallel.hpp"

namespace qqm {

std::vector<double> linspace(double a, double b, int n) {
    if (n < 1) {
        throw ConfigError("linspace needs at least one point");
    }
    std::vector<double> v(n);
    if (n == 1) {
        v[0] = a;
        return v;
    }
    for (int i = 0; i < n; ++i) {
        v[i] = a + (b - a) * i / (n - 1);
    }
    v[n - 1] = b;
    return v;
}

std::vector<double> chebyshev_nodes(int n) {
    if (n < 1) {
        throw ConfigError("chebyshev_nodes needs n >= 1");
    }
    // cos(x) written as sin(pi/2 - x) keeps the middle node at exactly 0
    std::vector<double> z(n);
    for (int k = 1; k <= n; ++k) {
        z[k - 1] = std::sin((n - 2 * k + 1) * std::numbers::pi / (2.0 * n));
    }
    std::sort(z.begin(), z.end());
    return z;
}

namespace {

void check_axis(const std::vector<double>& v, const char* name, bool open_unit) {
    if (v.empty()) {
        throw ConfigError(std::string("training grid ") + name + " is empty");
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw ConfigError(std::string("training grid ") + name + " has a non-finite entry");
        }
        if (open_unit && !(std::abs(v[i]) < 1.0 - kDomainMargin)) {
            throw ConfigError(std::string("training grid ") + name + " must lie strictly inside (-1, 1)");
        }
        if (i > 0 && !(v[i] > v[i - 1])) {
            throw ConfigError(std::string("training grid ") + name + " must be strictly increasing");
        }
    }
}

} // namespace

void TrainingGrid::validate() const {
    check_axis(z, "z", true);
    check_axis(t, "t", false);
}

void DataTargets::validate() const {
    if (z.empty() || z.size() != q.size()) {
        throw ConfigError("data targets need matching, non-empty z and q");
    }
    check_axis(z, "data z", true);
    for (double v : q) {
        if (!std::isfinite(v)) {
            throw ConfigError("data targets must be finite");
        }
    }
    for (std::size_t i = 1; i < q.size(); ++i) {
        if (q[i] < q[i - 1]) {
            throw ConfigError("data targets must be non-decreasing in z");
        }
    }
    if (!std::isfinite(t)) {
        throw ConfigError("data target time must be finite");
    }
}

DataTargets prepare_quantile_targets(std::span<const double> samples, int n_points, double t) {
    if (samples.empty() || samples.size() < static_cast<std::size_t>(std::max(n_points, 1))) {
        throw ConfigError("quantile targets need at least n_points samples");
    }
    std::vector<double> s(samples.begin(), samples.end());
    for (double v : s) {
        if (!std::isfinite(v)) {
            throw ConfigError("samples must be finite");
        }
    }
    std::sort(s.begin(), s.end());
    const double n = static_cast<double>(s.size());
    DataTargets d;
    d.t = t;
    d.z = chebyshev_nodes(n_points);
    d.q.reserve(d.z.size());
    for (double z : d.z) {
        const double pos = 0.5 * (z + 1.0) * n - 0.5;
        if (pos <= 0.0) {
            d.q.push_back(s.front());
        } else if (pos >= n - 1.0) {
            d.q.push_back(s.back());
        } else {
            const auto i = static_cast<std::size_t>(pos);
            const double w = pos - static_cast<double>(i);
            d.q.push_back(s[i] + w * (s[i + 1] - s[i]));
        }
    }
    return d;
}

void LossConfig::validate() const {
    if (!std::isfinite(data_weight) || data_weight < 0.0 || !std::isfinite(sde_weight) || sde_weight < 0.0) {
        throw ConfigError("loss weights must be finite and >= 0");
    }
    if (data_weight == 0.0 && sde_weight == 0.0) {
        throw ConfigError("data_weight and sde_weight cannot both be zero");
    }
    if (!(eps_slope > 0.0) || !std::isfinite(eps_slope)) {
        throw ConfigError("eps_slope must be finite and > 0");
    }
}

Residual ou_residual(const Jet& f, const SdeParams& p, double eps_slope) {
    const double half_s2 = 0.5 * p.sigma * p.sigma;
    const double a = std::abs(f.dz);
    const bool clamped = !(a > eps_slope);
    const double d = clamped ? eps_slope : a;
    const double inv_d2 = 1.0 / (d * d);
    Residual r;
    r.r = f.dt - (p.nu * (p.mu - f.value) + half_s2 * f.dzz * inv_d2);
    r.d_f = p.nu;
    r.d_fzz = -half_s2 * inv_d2;
    r.d_fz = clamped ? 0.0 : 2.0 * half_s2 * f.dzz * inv_d2 / d * (f.dz < 0.0 ? -1.0 : 1.0);
    r.d_ft = 1.0;
    return r;
}

double ou_residual(const Generator& g, const Eigen::VectorXd& theta, double z, double t, const SdeParams& p,
                   double eps_slope) {
    const ModelOutput o = g.evaluate_with_derivatives(theta, z, t, Want{true, true, g.has_time()});
    Jet f{o.value, *o.dz, *o.dzz, o.dt.value_or(0.0)};
    return ou_residual(f, p, eps_slope).r;
}

// ---------------------------------------------------------------------------
// Gradient backends. Both expose the bare circuit jet at a point plus the
// theta-gradient of a weighted combination of its entries.

namespace {

struct PointState {
    Inputs in;
    TangentTape tape;
    std::unique_ptr<ShiftEvaluator> shift;
};

class Backend {
public:
    Backend(const Generator& g, GradientMethod m) : g_(g), method_(m) {}

    Jet forward(const Eigen::VectorXd& theta, double z, double t, PointState& s) const {
        s.in = Inputs{z, g_.has_time() ? t : 0.0};
        Jet j;
        if (method_ == GradientMethod::Tangent) {
            j = g_.circuit_jet(theta, z, t, &s.tape);
        } else {
            s.shift = std::make_unique<ShiftEvaluator>(g_.program(), g_.costs());
            j.value = s.shift->expectation(theta, s.in);
            j.dz = d_dvariable(*s.shift, theta, s.in, Variable::Z);
            j.dzz = d2_dvariable2(*s.shift, theta, s.in, Variable::Z);
            if (g_.has_time()) {
                j.dt = d_dvariable(*s.shift, theta, s.in, Variable::T);
            }
        }
        if (!g_.has_time()) {
            j.dt = 0.0;
        }
        return j;
    }

    void backward(const Eigen::VectorXd& theta, PointState& s, const Jet& w, Eigen::Ref<Eigen::VectorXd> grad) const {
        Jet ww = w;
        if (!g_.has_time()) {
            ww.dt = 0.0;
        }
        if (method_ == GradientMethod::Tangent) {
            g_.circuit_backward(theta, s.tape, ww, grad);
            return;
        }
        auto& ev = *s.shift;
        if (ww.value != 0.0) {
            grad += ww.value * grad_theta(ev, theta, s.in);
        }
        if (ww.dz != 0.0) {
            grad += ww.dz * grad_theta_of_d_dvariable(ev, theta, s.in, Variable::Z);
        }
        if (ww.dzz != 0.0) {
            grad += ww.dzz * grad_theta_of_d2_dvariable2(ev, theta, s.in, Variable::Z);
        }
        if (ww.dt != 0.0) {
            grad += ww.dt * grad_theta_of_d_dvariable(ev, theta, s.in, Variable::T);
        }
    }

private:
    const Generator& g_;
    GradientMethod method_;
};

std::string where(double z, double t) {
    std::ostringstream os;
    os.precision(17);
    os << "(z=" << z << ", t=" << t << ")";
    return os.str();
}

enum class Term { Data, Pin, Sde };

struct Item {
    Term term;
    std::size_t index;
};

} // namespace

LossValue evaluate_loss(const TrainProblem& problem, const Eigen::VectorXd& theta, const EvalOptions& opt) {
    if (problem.generator == nullptr) {
        throw ConfigError("training problem has no generator");
    }
    const Generator& g = *problem.generator;
    g.program().check_theta(theta);
    problem.loss.validate();
    const auto& bnd = g.boundary();
    const bool floating = bnd.kind == BoundaryKind::Floating;
    const LossConfig& cfg = problem.loss;

    const bool use_data = problem.data.has_value() && cfg.data_weight > 0.0;
    const bool use_sde = problem.grid.has_value() && cfg.sde_weight > 0.0;
    const bool use_pin = !floating && !bnd.pin_points.empty() && bnd.pin_weight > 0.0;
    if (use_data) {
        problem.data->validate();
    }
    if (use_sde) {
        problem.grid->validate();
        problem.params.validate();
        if (!g.has_time()) {
            throw ConfigError("the SDE loss needs a generator with a time feature map");
        }
    }

    std::vector<Item> items;
    if (use_data) {
        for (std::size_t i = 0; i < problem.data->z.size(); ++i) {
            items.push_back({Term::Data, i});
        }
    }
    if (use_pin) {
        for (std::size_t i = 0; i < bnd.pin_points.size(); ++i) {
            items.push_back({Term::Pin, i});
        }
    }
    if (use_sde) {
        for (std::size_t i = 0; i < problem.grid->z.size(); ++i) {
            items.push_back({Term::Sde, i});
        }
    }

    const Eigen::Index np = theta.size();
    const std::size_t n_items = items.size();
    const std::size_t n_buffers = !opt.gradient ? 0
                                  : opt.strict_deterministic
                                      ? n_items
                                      : std::min<std::size_t>(n_items, std::max(1, opt.threads));
    std::vector<Eigen::VectorXd> buffers(n_buffers, Eigen::VectorXd::Zero(np));
    std::vector<double> partial(n_items, 0.0);

    const Backend backend(g, opt.method);
    const double n_data = use_data ? static_cast<double>(problem.data->z.size()) : 1.0;
    const double n_pin = use_pin ? static_cast<double>(bnd.pin_points.size()) : 1.0;
    const double n_grid = use_sde ? static_cast<double>(problem.grid->size()) : 1.0;

    auto run_item = [&](std::size_t k, Eigen::VectorXd* grad) {
        const Item& it = items[k];
        PointState s;
        PointState s0;
        if (it.term == Term::Data || it.term == Term::Pin) {
            const bool data = it.term == Term::Data;
            const double z = data ? problem.data->z[it.index] : bnd.pin_points[it.index];
            const double t = data ? problem.data->t : bnd.time;
            const double target = data ? problem.data->q[it.index] : bnd.u0.value(z);
            const Jet gj = backend.forward(theta, z, t, s);
            double f = gj.value;
            Jet g0;
            if (data && floating) {
                g0 = backend.forward(theta, z, bnd.time, s0);
                f = bnd.u0.value(z) - g0.value + gj.value;
            }
            const double e = f - target;
            if (!std::isfinite(e)) {
                throw NumericError(std::string("non-finite ") + (data ? "data" : "pin") + " loss term at " +
                                   where(z, t));
            }
            partial[k] = e * e;
            if (grad) {
                const double w = (data ? cfg.data_weight / n_data : bnd.pin_weight / n_pin) * 2.0 * e;
                backend.backward(theta, s, Jet{w, 0, 0, 0}, *grad);
                if (data && floating) {
                    backend.backward(theta, s0, Jet{-w, 0, 0, 0}, *grad);
                }
            }
            return;
        }
        // One z column of the residual grid; the boundary jet at t_b is shared by every t.
        const double z = problem.grid->z[it.index];
        Jet g0;
        ProfileValue u;
        if (floating) {
            g0 = backend.forward(theta, z, bnd.time, s0);
            u = bnd.u0.jet(z);
        }
        Jet w0;
        double sum = 0.0;
        for (double t : problem.grid->t) {
            const Jet gt = backend.forward(theta, z, t, s);
            Jet f = gt;
            if (floating) {
                f.value = u.v - g0.value + gt.value;
                f.dz = u.d1 - g0.dz + gt.dz;
                f.dzz = u.d2 - g0.dzz + gt.dzz;
            }
            const Residual r = ou_residual(f, problem.params, cfg.eps_slope);
            if (!std::isfinite(r.r)) {
                throw NumericError("non-finite SDE residual at " + where(z, t));
            }
            sum += r.r * r.r;
            if (grad) {
                const double c = cfg.sde_weight * 2.0 * r.r / n_grid;
                const Jet w{c * r.d_f, c * r.d_fz, c * r.d_fzz, c * r.d_ft};
                backend.backward(theta, s, w, *grad);
                if (floating) {
                    w0.value -= w.value;
                    w0.dz -= w.dz;
                    w0.dzz -= w.dzz;
                }
            }
        }
        partial[k] = sum;
        if (grad && floating) {
            backend.backward(theta, s0, w0, *grad);
        }
    };

    if (!opt.gradient) {
        parallel_for(n_items, opt.threads, [&](std::size_t k) { run_item(k, nullptr); });
    } else {
        parallel_for(n_buffers, opt.threads, [&](std::size_t b) {
            const std::size_t lo = n_items * b / n_buffers;
            const std::size_t hi = n_items * (b + 1) / n_buffers;
            for (std::size_t k = lo; k < hi; ++k) {
                run_item(k, &buffers[b]);
            }
        });
    }

    LossValue out;
    for (std::size_t k = 0; k < n_items; ++k) {
        switch (items[k].term) {
        case Term::Data: out.data += partial[k]; break;
        case Term::Pin: out.pin += partial[k]; break;
        case Term::Sde: out.sde += partial[k]; break;
        }
    }
    out.data /= n_data;
    out.pin /= n_pin;
    out.sde /= n_grid;
    out.total = (use_data ? cfg.data_weight * out.data : 0.0) + (use_sde ? cfg.sde_weight * out.sde : 0.0) +
                (use_pin ? bnd.pin_weight * out.pin : 0.0);
    if (!std::isfinite(out.total)) {
        throw NumericError("non-finite total loss");
    }
    if (opt.gradient) {
        out.grad = Eigen::VectorXd::Zero(np);
        for (const auto& b : buffers) {
            out.grad += b;
        }
        if (!out.grad.allFinite()) {
            throw NumericError("non-finite loss gradient");
        }
    }
    return out;
}

double data_loss(const Generator& g, const Eigen::VectorXd& theta, const DataTargets& targets) {
    TrainProblem p;
    p.generator = &g;
    p.data = targets;
    EvalOptions o;
    o.gradient = false;
    // Data only: keep the pin term out of the result.
    return evaluate_loss(p, theta, o).data;
}

double sde_loss(const Generator& g, const Eigen::VectorXd& theta, const TrainingGrid& grid, const SdeParams& p,
                const LossConfig& cfg) {
    if (cfg.sde_weight == 0.0) {
        return 0.0;
    }
    cfg.validate();
    TrainProblem pr;
    pr.generator = &g;
    pr.grid = grid;
    pr.params = p;
    pr.loss = cfg;
    EvalOptions o;
    o.gradient = false;
    return cfg.sde_weight * evaluate_loss(pr, theta, o).sde;
}

// ---------------------------------------------------------------------------

Adam::Adam(AdamSettings s, Eigen::Index n) : s_(s), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {
    if (!(s.learning_rate > 0.0) || !(s.beta1 >= 0.0 && s.beta1 < 1.0) || !(s.beta2 >= 0.0 && s.beta2 < 1.0) ||
        !(s.epsilon > 0.0)) {
        throw ConfigError("invalid Adam settings");
    }
}

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
    if (grad.size() != m_.size() || theta.size() != m_.size()) {
        throw ConfigError("Adam: parameter count mismatch");
    }
    ++t_;
    m_ = s_.beta1 * m_ + (1.0 - s_.beta1) * grad;
    v_ = s_.beta2 * v_ + (1.0 - s_.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        theta(i) -= s_.learning_rate * (m_(i) / c1) / (std::sqrt(v_(i) / c2) + s_.epsilon);
    }
}

namespace {

void write_checkpoint(const std::string& path, int epoch, const Eigen::VectorXd& theta, const Adam& adam) {
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    nlohmann::ordered_json j;
    j["epoch"] = epoch;
    j["adam_steps"] = adam.steps();
    j["theta"] = vec(theta);
    j["adam_m"] = vec(adam.first_moment());
    j["adam_v"] = vec(adam.second_moment());
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) {
            throw ConfigError("cannot write checkpoint " + path);
        }
        out << j.dump() << '\n';
    }
    std::rename(tmp.c_str(), path.c_str());
}

} // namespace

TrainResult train(const TrainProblem& problem, Eigen::VectorXd theta0, const TrainSettings& settings) {
    if (settings.epochs < 1) {
        throw ConfigError("epochs must be >= 1");
    }
    if (settings.checkpoint_every > 0 && settings.checkpoint_path.empty()) {
        throw ConfigError("checkpoint_every needs a checkpoint path");
    }
    Adam adam(settings.adam, theta0.size());
    EvalOptions eval = settings.eval;
    eval.gradient = true;

    TrainResult res;
    res.history.reserve(settings.epochs);
    Eigen::VectorXd theta = std::move(theta0);
    res.best_loss = std::numeric_limits<double>::infinity();
    for (int e = 0; e < settings.epochs; ++e) {
        LossValue l;
        try {
            l = evaluate_loss(problem, theta, eval);
        } catch (const NumericError& err) {
            throw NumericError("epoch " + std::to_string(e) + ": " + err.what());
        }
        const HistoryRow row{e, l.total, l.data, l.sde, l.pin};
        res.history.push_back(row);
        if (l.total < res.best_loss) {
            res.best_loss = l.total;
            res.best_epoch = e;
            res.theta = theta;
        }
        adam.step(theta, l.grad);
        if (settings.checkpoint_every > 0 && (e + 1) % settings.checkpoint_every == 0) {
            write_checkpoint(settings.checkpoint_path, e + 1, theta, adam);
        }
        if (settings.on_epoch && !settings.on_epoch(row)) {
            break;
        }
    }
    EvalOptions final_eval = eval;
    final_eval.gradient = false;
    const double last = evaluate_loss(problem, theta, final_eval).total;
    if (last < res.best_loss || res.history.empty()) {
        res.best_loss = last;
        res.best_epoch = static_cast<int>(res.history.size());
        res.theta = theta;
    }
    res.last_theta = std::move(theta);
    return res;
}

} // namespace qqm
