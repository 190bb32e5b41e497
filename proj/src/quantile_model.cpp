#include "qqm/quantile_model.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "qqm/autodiff.hpp"
#include "qqm/parallel.hpp"
#include "qqm/random.hpp"

namespace qqm {

std::string to_string(Layout l) { return l == Layout::MainText ? "main_text" : "sandwich"; }
std::string to_string(BoundaryKind b) { return b == BoundaryKind::Pinned ? "pinned" : "floating"; }

std::vector<CostOperator> GeneratorSpec::effective_costs() const {
    if (costs.empty()) {
        return {CostOperator::total_z(n_qubits)};
    }
    return costs;
}

void GeneratorSpec::validate() const {
    if (n_qubits < 1 || n_qubits > kMaxQubits) {
        throw ConfigError("n_qubits must lie in [1, 24]");
    }
    if (depth < 1) {
        throw ConfigError("ansatz depth must be >= 1");
    }
    if (z_map.variable != Variable::Z) {
        throw ConfigError("z_map must encode the latent variable z");
    }
    if (t_map && t_map->variable != Variable::T) {
        throw ConfigError("t_map must encode the time variable t");
    }
    for (const auto& c : effective_costs()) {
        c.validate(n_qubits);
        for (const auto& term : c.terms) {
            if (!std::isfinite(term.weight)) {
                throw ConfigError("cost term weights must be finite");
            }
        }
    }
    if (!init_angles.empty()) {
        if (layout != Layout::Sandwich) {
            throw ConfigError("init_angles only apply to the sandwich layout");
        }
        if (static_cast<int>(init_angles.size()) != 2 * n_qubits) {
            throw ConfigError("init_angles must have 2 * n_qubits entries");
        }
    }
}

// ---------------------------------------------------------------------------

InitialProfile InitialProfile::analytic(const SdeParams& p, double t) {
    p.validate();
    if (!(t > p.t0)) {
        throw ConfigError("analytic initial profile needs t > t0");
    }
    InitialProfile u;
    u.source = Source::AnalyticOu;
    u.params = p;
    u.time = t;
    return u;
}

InitialProfile InitialProfile::from_model(std::shared_ptr<const FittedModel> m, double t) {
    if (!m) {
        throw ConfigError("initial profile model is null");
    }
    InitialProfile u;
    u.source = Source::Model;
    u.model = std::move(m);
    u.time = t;
    return u;
}

InitialProfile InitialProfile::from_function(std::function<ProfileValue(double)> f) {
    InitialProfile u;
    u.source = Source::Custom;
    u.custom = std::move(f);
    return u;
}

double InitialProfile::value(double z) const {
    switch (source) {
    case Source::AnalyticOu: return analytic_qf(params, z, time);
    case Source::Model: return model->value(z, time);
    case Source::Custom: return custom(z).v;
    case Source::None: break;
    }
    throw ConfigError("no initial profile configured");
}

ProfileValue InitialProfile::jet(double z) const {
    if (!(std::abs(z) < 1.0 - kDomainMargin)) {
        throw DomainError("initial profile derivatives requested at the domain edge");
    }
    switch (source) {
    case Source::AnalyticOu: {
        const auto q = analytic_qf_jet(params, z, time);
        return {q.value, q.dz, q.dzz};
    }
    case Source::Model: {
        const Jet j = model->jet(z, time);
        return {j.value, j.dz, j.dzz};
    }
    case Source::Custom: return custom(z);
    case Source::None: break;
    }
    throw ConfigError("no initial profile configured");
}

void BoundaryMode::validate() const {
    if (kind == BoundaryKind::Floating && !u0.available()) {
        throw ConfigError("floating boundary needs an initial profile u0");
    }
    if (!pin_points.empty() && !u0.available()) {
        throw ConfigError("pin points need an initial profile u0");
    }
    if (!std::isfinite(pin_weight) || pin_weight < 0.0) {
        throw ConfigError("pin_weight must be finite and >= 0");
    }
    for (double z : pin_points) {
        if (!(std::abs(z) <= 1.0)) {
            throw ConfigError("pin points must lie in [-1, 1]");
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

CircuitProgram build_program(const GeneratorSpec& s) {
    std::vector<FeatureMapSpec> maps;
    if (s.t_map) {
        maps.push_back(*s.t_map);
    }
    maps.push_back(s.z_map);
    if (s.layout == Layout::Sandwich) {
        const std::vector<double> zeros(2 * s.n_qubits, 0.0);
        const auto& init = s.init_angles.empty() ? zeros : s.init_angles;
        return build_initialized_sandwich(s.ansatz(), maps, init, 0).program;
    }
    CircuitProgram p(s.n_qubits);
    for (const auto& m : maps) {
        p.append(build_feature_map(m, s.n_qubits));
    }
    p.append(build_hea(s.ansatz()));
    return p;
}

} // namespace

Generator::Generator(GeneratorSpec spec, BoundaryMode boundary)
    : spec_(std::move(spec)), boundary_(std::move(boundary)) {
    spec_.validate();
    boundary_.validate();
    program_ = std::make_shared<const CircuitProgram>(build_program(spec_));
    costs_ = spec_.effective_costs();
}

Eigen::VectorXd Generator::initial_theta(std::uint64_t seed) const {
    if (spec_.layout == Layout::Sandwich) {
        const std::vector<double> zeros(2 * spec_.n_qubits, 0.0);
        return build_initialized_sandwich(spec_.ansatz(), spec_.z_map, zeros, seed).theta0;
    }
    return uniform_theta(seed);
}

Eigen::VectorXd Generator::uniform_theta(std::uint64_t seed) const {
    Rng rng(seed);
    Eigen::VectorXd th(parameter_count());
    for (Eigen::Index i = 0; i < th.size(); ++i) {
        th(i) = rng.uniform(-std::numbers::pi, std::numbers::pi);
    }
    return th;
}

void Generator::check_time(bool need_dt) const {
    if (need_dt && !has_time()) {
        throw ConfigError("d/dt requested from a generator without a time feature map");
    }
}

double Generator::circuit_value(const Eigen::VectorXd& theta, double z, double t) const {
    return expectation(program_->run(theta, inputs(z, t)), costs_);
}

Jet Generator::circuit_jet(const Eigen::VectorXd& theta, double z, double t, TangentTape* tape) const {
    return TangentEngine(*program_, costs_).forward(theta, inputs(z, t), tape);
}

void Generator::circuit_backward(const Eigen::VectorXd& theta, const TangentTape& tape, const Jet& w,
                                 Eigen::Ref<Eigen::VectorXd> grad) const {
    TangentEngine(*program_, costs_).backward(theta, tape, w, grad);
}

ModelOutput Generator::evaluate(const Eigen::VectorXd& theta, double z, double t) const {
    ModelOutput out;
    if (boundary_.kind == BoundaryKind::Floating) {
        out.value = boundary_.u0.value(z) - circuit_value(theta, z, boundary_.time) + circuit_value(theta, z, t);
    } else {
        out.value = circuit_value(theta, z, t);
    }
    return out;
}

ModelOutput Generator::evaluate_with_derivatives(const Eigen::VectorXd& theta, double z, double t,
                                                 Want want) const {
    check_time(want.dt);
    ShiftEvaluator ev(*program_, costs_);
    const Inputs in = inputs(z, t);
    ModelOutput out;
    out.value = ev.expectation(theta, in);
    if (want.dz) {
        out.dz = d_dvariable(ev, theta, in, Variable::Z);
    }
    if (want.dzz) {
        out.dzz = d2_dvariable2(ev, theta, in, Variable::Z);
    }
    if (want.dt) {
        out.dt = d_dvariable(ev, theta, in, Variable::T);
    }
    if (boundary_.kind == BoundaryKind::Floating) {
        const Inputs in0 = inputs(z, boundary_.time);
        const bool need_jet = want.dz || want.dzz;
        const ProfileValue u = need_jet ? boundary_.u0.jet(z) : ProfileValue{boundary_.u0.value(z), 0, 0};
        out.value = u.v - ev.expectation(theta, in0) + out.value;
        if (want.dz) {
            out.dz = u.d1 - d_dvariable(ev, theta, in0, Variable::Z) + *out.dz;
        }
        if (want.dzz) {
            out.dzz = u.d2 - d2_dvariable2(ev, theta, in0, Variable::Z) + *out.dzz;
        }
    }
    return out;
}

Jet Generator::jet(const Eigen::VectorXd& theta, double z, double t) const {
    Jet j = circuit_jet(theta, z, t);
    if (!has_time()) {
        j.dt = 0.0;
    }
    if (boundary_.kind == BoundaryKind::Floating) {
        const Jet g0 = circuit_jet(theta, z, boundary_.time);
        const ProfileValue u = boundary_.u0.jet(z);
        j.value = u.v - g0.value + j.value;
        j.dz = u.d1 - g0.dz + j.dz;
        j.dzz = u.d2 - g0.dzz + j.dzz;
    }
    return j;
}

std::vector<double> Generator::sample(const Eigen::VectorXd& theta, double t, std::size_t n,
                                      std::uint64_t seed, int threads) const {
    Rng rng(seed);
    std::vector<double> z(n);
    for (auto& v : z) {
        v = rng.latent();
    }
    std::vector<double> out(n);
    parallel_for(n, threads, [&](std::size_t i) { out[i] = evaluate(theta, z[i], t).value; });
    return out;
}

double Generator::output_bound() const {
    double b = 0.0;
    for (const auto& c : costs_) {
        b += c.norm_bound();
    }
    return b;
}

FittedModel::FittedModel(Generator generator, Eigen::VectorXd theta, Info info)
    : generator_(std::move(generator)), theta_(std::move(theta)), info_(std::move(info)) {
    generator_.program().check_theta(theta_);
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using ojson = nlohmann::ordered_json;
using json = nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) {
        throw ConfigError(where + " must be an object");
    }
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
        if (!ok.count(k)) {
            throw ConfigError("unknown key '" + k + "' in " + where);
        }
    }
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) {
        throw ConfigError("missing key '" + std::string(key) + "' in " + where);
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("key '" + std::string(key) + "' in " + where + " has the wrong type");
    }
}

ojson map_to_json(const FeatureMapSpec& m) {
    return ojson{{"kind", to_string(m.kind)}, {"axis", to_string(m.axis)}};
}

FeatureMapSpec map_from_json(const json& j, Variable v, const std::string& where) {
    reject_unknown(j, {"kind", "axis"}, where);
    FeatureMapSpec m;
    m.kind = feature_map_kind_from_string(get<std::string>(j, "kind", where));
    m.axis = pauli_from_string(get<std::string>(j, "axis", where));
    m.variable = v;
    return m;
}

ojson cost_to_json(const CostOperator& c) {
    ojson terms = ojson::array();
    for (const auto& t : c.terms) {
        terms.push_back(ojson{{"qubit", t.qubit}, {"pauli", to_string(t.pauli)}, {"weight", t.weight}});
    }
    return ojson{{"alpha", c.global_weight}, {"terms", terms}};
}

CostOperator cost_from_json(const json& j, const std::string& where) {
    reject_unknown(j, {"alpha", "terms"}, where);
    CostOperator c;
    c.global_weight = get<double>(j, "alpha", where);
    const json terms = get<json>(j, "terms", where);
    if (!terms.is_array()) {
        throw ConfigError(where + ".terms must be an array");
    }
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const std::string w = where + ".terms[" + std::to_string(i) + "]";
        reject_unknown(terms[i], {"qubit", "pauli", "weight"}, w);
        c.terms.push_back({get<int>(terms[i], "qubit", w), pauli_from_string(get<std::string>(terms[i], "pauli", w)),
                           get<double>(terms[i], "weight", w)});
    }
    return c;
}

ojson params_to_json(const SdeParams& p) {
    return ojson{{"nu", p.nu}, {"mu", p.mu}, {"sigma", p.sigma}, {"x0", p.x0}, {"t0", p.t0}};
}

SdeParams params_from_json(const json& j, const std::string& where) {
    reject_unknown(j, {"nu", "mu", "sigma", "x0", "t0"}, where);
    SdeParams p;
    p.nu = get<double>(j, "nu", where);
    p.mu = j.contains("mu") ? get<double>(j, "mu", where) : 0.0;
    p.sigma = get<double>(j, "sigma", where);
    p.x0 = get<double>(j, "x0", where);
    p.t0 = get<double>(j, "t0", where);
    p.validate();
    return p;
}

ojson boundary_to_json(const BoundaryMode& b) {
    ojson j{{"kind", to_string(b.kind)}, {"time", b.time}, {"pin_weight", b.pin_weight},
            {"pin_points", b.pin_points}};
    const auto& u = b.u0;
    switch (u.source) {
    case InitialProfile::Source::None: j["u0"] = nullptr; break;
    case InitialProfile::Source::AnalyticOu:
        j["u0"] = ojson{{"source", "analytic_ou"}, {"time", u.time}, {"params", params_to_json(u.params)}};
        break;
    case InitialProfile::Source::Model:
        j["u0"] = ojson{{"source", "model"}, {"time", u.time}, {"model", model_to_json(*u.model)}};
        break;
    case InitialProfile::Source::Custom:
        throw ConfigError("a boundary with a custom initial profile cannot be serialized");
    }
    return j;
}

BoundaryMode boundary_from_json(const json& j) {
    const std::string where = "boundary";
    reject_unknown(j, {"kind", "time", "pin_weight", "pin_points", "u0"}, where);
    BoundaryMode b;
    const auto kind = get<std::string>(j, "kind", where);
    if (kind == "pinned") {
        b.kind = BoundaryKind::Pinned;
    } else if (kind == "floating") {
        b.kind = BoundaryKind::Floating;
    } else {
        throw ConfigError("boundary.kind must be pinned or floating");
    }
    b.time = get<double>(j, "time", where);
    b.pin_weight = get<double>(j, "pin_weight", where);
    b.pin_points = get<std::vector<double>>(j, "pin_points", where);
    const json u = j.contains("u0") ? j.at("u0") : json();
    if (!u.is_null()) {
        reject_unknown(u, {"source", "time", "params", "model"}, "boundary.u0");
        const auto src = get<std::string>(u, "source", "boundary.u0");
        const double t = get<double>(u, "time", "boundary.u0");
        if (src == "analytic_ou") {
            b.u0 = InitialProfile::analytic(params_from_json(get<json>(u, "params", "boundary.u0"), "boundary.u0.params"), t);
        } else if (src == "model") {
            b.u0 = InitialProfile::from_model(
                std::make_shared<const FittedModel>(model_from_json(get<json>(u, "model", "boundary.u0"))), t);
        } else {
            throw ConfigError("boundary.u0.source must be analytic_ou or model");
        }
    }
    return b;
}

} // namespace

ojson spec_to_json(const GeneratorSpec& s) {
    ojson j;
    j["n_qubits"] = s.n_qubits;
    j["z_map"] = map_to_json(s.z_map);
    j["t_map"] = s.t_map ? map_to_json(*s.t_map) : ojson(nullptr);
    j["depth"] = s.depth;
    j["layout"] = to_string(s.layout);
    ojson costs = ojson::array();
    for (const auto& c : s.costs) {
        costs.push_back(cost_to_json(c));
    }
    j["costs"] = costs;
    j["init_angles"] = s.init_angles;
    return j;
}

GeneratorSpec spec_from_json(const json& j) {
    const std::string where = "generator";
    reject_unknown(j, {"n_qubits", "z_map", "t_map", "depth", "layout", "costs", "init_angles"}, where);
    GeneratorSpec s;
    s.n_qubits = get<int>(j, "n_qubits", where);
    s.z_map = map_from_json(get<json>(j, "z_map", where), Variable::Z, "generator.z_map");
    if (j.contains("t_map") && !j.at("t_map").is_null()) {
        s.t_map = map_from_json(j.at("t_map"), Variable::T, "generator.t_map");
    }
    s.depth = get<int>(j, "depth", where);
    if (j.contains("layout")) {
        const auto l = get<std::string>(j, "layout", where);
        if (l == "main_text") {
            s.layout = Layout::MainText;
        } else if (l == "sandwich") {
            s.layout = Layout::Sandwich;
        } else {
            throw ConfigError("generator.layout must be main_text or sandwich");
        }
    }
    if (j.contains("costs")) {
        const json costs = j.at("costs");
        if (!costs.is_array()) {
            throw ConfigError("generator.costs must be an array");
        }
        for (std::size_t i = 0; i < costs.size(); ++i) {
            s.costs.push_back(cost_from_json(costs[i], "generator.costs[" + std::to_string(i) + "]"));
        }
    }
    if (j.contains("init_angles")) {
        s.init_angles = get<std::vector<double>>(j, "init_angles", where);
    }
    s.validate();
    return s;
}

ojson model_to_json(const FittedModel& m) {
    ojson j;
    j["format"] = "qqm-model";
    j["version"] = 1;
    j["generator"] = spec_to_json(m.generator().spec());
    j["boundary"] = boundary_to_json(m.generator().boundary());
    j["theta"] = std::vector<double>(m.theta().data(), m.theta().data() + m.theta().size());
    j["info"] = ojson{{"kind", m.info().kind},
                      {"seed", m.info().seed},
                      {"epochs", m.info().epochs},
                      {"final_loss", m.info().final_loss}};
    return j;
}

FittedModel model_from_json(const json& j) {
    reject_unknown(j, {"format", "version", "generator", "boundary", "theta", "info"}, "model");
    if (get<std::string>(j, "format", "model") != "qqm-model" || get<int>(j, "version", "model") != 1) {
        throw ConfigError("not a version-1 qqm model document");
    }
    GeneratorSpec spec = spec_from_json(get<json>(j, "generator", "model"));
    BoundaryMode boundary = boundary_from_json(get<json>(j, "boundary", "model"));
    const auto th = get<std::vector<double>>(j, "theta", "model");
    FittedModel::Info info;
    const json ij = get<json>(j, "info", "model");
    reject_unknown(ij, {"kind", "seed", "epochs", "final_loss"}, "model.info");
    info.kind = get<std::string>(ij, "kind", "model.info");
    info.seed = get<std::uint64_t>(ij, "seed", "model.info");
    info.epochs = get<int>(ij, "epochs", "model.info");
    info.final_loss = get<double>(ij, "final_loss", "model.info");
    return FittedModel(Generator(std::move(spec), std::move(boundary)),
                       Eigen::Map<const Eigen::VectorXd>(th.data(), static_cast<Eigen::Index>(th.size())), info);
}

void save_model(const FittedModel& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write model file " + path);
    }
    out << model_to_json(m).dump(2) << '\n';
}

FittedModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read model file " + path);
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("model file " + path + " is not valid JSON: " + e.what());
    }
    return model_from_json(j);
}

} // namespace qqm
