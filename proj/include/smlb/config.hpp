#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "smlb/common.hpp"
#include "smlb/linear_model.hpp"
#include "smlb/samplers.hpp"
#include "smlb/schedule.hpp"
#include "smlb/targets.hpp"

namespace smlb {

using json = nlohmann::json;

namespace cfg_detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed)
            if (it.key() == a) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

inline double get_num(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_number())
        throw ConfigError(where + ": missing numeric field '" + std::string(key) + "'");
    return j[key].get<double>();
}

inline Vec get_vec(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_array())
        throw ConfigError(where + ": missing array field '" + std::string(key) + "'");
    const auto& a = j[key];
    Vec v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!a[i].is_number()) throw ConfigError(where + ": '" + key + "' must be numeric");
        v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    }
    return v;
}

inline Mat get_mat(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_array() || j[key].empty())
        throw ConfigError(where + ": missing matrix field '" + std::string(key) + "'");
    const auto& a = j[key];
    const std::size_t rows = a.size();
    if (!a[0].is_array()) throw ConfigError(where + ": '" + key + "' must be a 2-d array");
    const std::size_t cols = a[0].size();
    Mat m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (!a[i].is_array() || a[i].size() != cols)
            throw ConfigError(where + ": ragged matrix '" + std::string(key) + "'");
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = a[i][c].get<double>();
    }
    return m;
}

} // namespace cfg_detail

// ---------------------------------------------------------------------------
// Spec fragments: target / model / schedule
// ---------------------------------------------------------------------------

struct TargetSpec {
    bool is_mixture = false;
    Vec mu0;                // gaussian
    std::vector<Vec> means; // mixture
    Vec weights;            // mixture
    bool from_rho = false;  // sigma0 built from variances + correlation
    Mat sigma0;
    Vec variances;
    double rho = 0.0;

    Mat covariance(std::optional<double> rho_override = std::nullopt) const {
        if (rho_override && !from_rho)
            throw ConfigError("target: a rho sweep needs the variances+rho covariance form");
        if (!from_rho) return sigma0;
        return make_equicorrelated_sigma0(variances, rho_override.value_or(rho));
    }

    Target build(std::optional<double> rho_override = std::nullopt) const {
        Mat cov = covariance(rho_override);
        if (is_mixture) return MixtureTarget::make(weights, means, std::move(cov));
        return GaussianTarget::make(mu0, std::move(cov));
    }

    static TargetSpec parse(const json& j) {
        cfg_detail::check_keys(
            j, {"type", "mu0", "means", "weights", "sigma0", "variances", "rho"}, "target");
        if (!j.contains("type")) throw ConfigError("target: missing 'type'");
        TargetSpec t;
        const std::string type = j["type"].get<std::string>();
        if (type == "gaussian") {
            t.is_mixture = false;
            t.mu0 = cfg_detail::get_vec(j, "mu0", "target");
        } else if (type == "mixture") {
            t.is_mixture = true;
            t.weights = cfg_detail::get_vec(j, "weights", "target");
            const Mat mm = cfg_detail::get_mat(j, "means", "target");
            for (Eigen::Index i = 0; i < mm.rows(); ++i) t.means.push_back(mm.row(i));
        } else {
            throw ConfigError("target: type must be 'gaussian' or 'mixture'");
        }
        if (j.contains("sigma0")) {
            t.sigma0 = cfg_detail::get_mat(j, "sigma0", "target");
        } else if (j.contains("variances") && j.contains("rho")) {
            t.from_rho = true;
            t.variances = cfg_detail::get_vec(j, "variances", "target");
            t.rho = cfg_detail::get_num(j, "rho", "target");
        } else {
            throw ConfigError("target: give either 'sigma0' or 'variances'+'rho'");
        }
        return t;
    }
};

struct ModelSpec {
    bool identity_prefix = false;
    int p = 0;
    Mat H;
    double sigma_y2 = 0.0;
    Vec y;

    LinearObservation build(int d, std::optional<double> sigma_y2_override = std::nullopt,
                            const Vec* y_override = nullptr) const {
        const double sy2 = sigma_y2_override.value_or(sigma_y2);
        const Vec& yy = y_override ? *y_override : y;
        try {
            if (identity_prefix) return LinearObservation::identity_prefix(d, p, sy2, yy);
            if (H.cols() != d) throw ConfigError("model: H column count must match target dim");
            return LinearObservation::make(H, sy2, yy);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("model: ") + e.what());
        }
    }

    static ModelSpec parse(const json& j) {
        cfg_detail::check_keys(j, {"identity_prefix", "H", "sigma_y2", "y"}, "model");
        ModelSpec m;
        if (j.contains("identity_prefix")) {
            m.identity_prefix = true;
            m.p = j["identity_prefix"].get<int>();
        } else if (j.contains("H")) {
            m.H = cfg_detail::get_mat(j, "H", "model");
        } else {
            throw ConfigError("model: give either 'identity_prefix' or an explicit 'H'");
        }
        m.sigma_y2 = cfg_detail::get_num(j, "sigma_y2", "model");
        if (m.sigma_y2 < 0.0) throw ConfigError("model: sigma_y2 must be >= 0");
        m.y = cfg_detail::get_vec(j, "y", "model");
        return m;
    }
};

struct ScheduleSpec {
    ScheduleKind kind = ScheduleKind::ExpThenConst;
    int T = 2000;
    double c = 3.0;
    double delta = 1e-4;

    NoiseSchedule build(std::optional<int> T_override = std::nullopt) const {
        const int TT = T_override.value_or(T);
        try {
            if (kind == ScheduleKind::Constant) return make_constant(TT, c);
            return make_exp_then_const(TT, c, delta);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("schedule: ") + e.what());
        }
    }

    static ScheduleSpec parse(const json& j) {
        cfg_detail::check_keys(j, {"kind", "T", "c", "delta"}, "schedule");
        ScheduleSpec s;
        const std::string kind = j.value("kind", std::string("exp_then_const"));
        if (kind == "constant")
            s.kind = ScheduleKind::Constant;
        else if (kind == "exp_then_const")
            s.kind = ScheduleKind::ExpThenConst;
        else
            throw ConfigError("schedule: kind must be 'constant' or 'exp_then_const'");
        s.T = static_cast<int>(cfg_detail::get_num(j, "T", "schedule"));
        s.c = cfg_detail::get_num(j, "c", "schedule");
        if (s.kind == ScheduleKind::ExpThenConst)
            s.delta = cfg_detail::get_num(j, "delta", "schedule");
        else if (j.contains("delta"))
            throw ConfigError("schedule: 'delta' applies only to exp_then_const");
        return s;
    }
};

inline SamplerKind parse_sampler_kind(const std::string& s) {
    if (s == "oracle") return SamplerKind::Oracle;
    if (s == "ccdf") return SamplerKind::CCDF;
    if (s == "ddnm") return SamplerKind::DDNM;
    if (s == "ddnmplus") return SamplerKind::DDNMplus;
    if (s == "boddnm") return SamplerKind::BODDNM;
    throw ConfigError("sampler: unknown kind '" + s + "'");
}

struct SampleCounts {
    int chains = 150000;
    int mc = 20000;
    int knn_k = 5;
    int bootstrap = 20;

    static SampleCounts parse(const json& j) {
        cfg_detail::check_keys(j, {"chains", "mc", "knn_k", "bootstrap"}, "samples");
        SampleCounts c;
        if (j.contains("chains")) c.chains = j["chains"].get<int>();
        if (j.contains("mc")) c.mc = j["mc"].get<int>();
        if (j.contains("knn_k")) c.knn_k = j["knn_k"].get<int>();
        if (j.contains("bootstrap")) c.bootstrap = j["bootstrap"].get<int>();
        if (c.chains < 1 || c.mc < 2 || c.knn_k < 1 || c.bootstrap < 0)
            throw ConfigError("samples: counts out of range");
        return c;
    }
};

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    std::string experiment;
    std::uint64_t seed = 1;
    std::string outdir = "out";
    int workers = 0; // 0 = auto
    bool svg = true;
    std::optional<TargetSpec> target;
    std::optional<ModelSpec> model;
    std::optional<ScheduleSpec> schedule;
    std::vector<SamplerKind> samplers;
    double perturb_eps = 0.0;
    int stop_t = 1;
    std::string sweep_parameter;
    std::vector<double> sweep_values;
    SampleCounts counts;
    std::string canonical_json;

    SamplerSpec sampler_spec(SamplerKind k) const { return SamplerSpec{k, perturb_eps, stop_t}; }
};

namespace cfg_detail {

inline const char* default_sweep_parameter(const std::string& exp) {
    if (exp == "fig1_gaussian" || exp == "fig1_mixture") return "sigma_y2";
    if (exp == "fig2_y_sweep") return "y_scale";
    if (exp == "fig2_rho_sweep") return "rho";
    if (exp == "kl_vs_T") return "T";
    if (exp == "schedule_check") return "p";
    return ""; // bias_report has no sweep
}

inline std::vector<double> default_sweep_values(const std::string& exp) {
    if (exp == "fig1_gaussian" || exp == "fig1_mixture") return {0.05, 0.1, 0.25, 0.5, 1.0};
    if (exp == "fig2_y_sweep") return {0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0};
    if (exp == "fig2_rho_sweep") return {0.1, 0.3, 0.5, 0.7, 0.9, 0.95};
    if (exp == "kl_vs_T") return {500, 2000, 8000};
    if (exp == "schedule_check") return {1, 2, 3};
    return {};
}

} // namespace cfg_detail

inline ExperimentConfig parse_config(const json& j) {
    cfg_detail::check_keys(j,
                           {"experiment", "seed", "out", "workers", "svg", "target", "model",
                            "schedule", "samplers", "perturb_eps", "stop_t", "sweep", "samples"},
                           "config");
    ExperimentConfig c;
    if (!j.contains("experiment")) throw ConfigError("config: missing 'experiment'");
    c.experiment = j["experiment"].get<std::string>();
    static const char* known[] = {"fig1_gaussian", "fig1_mixture", "fig2_y_sweep",
                                  "fig2_rho_sweep", "kl_vs_T", "schedule_check", "bias_report"};
    bool ok = false;
    for (const char* k : known) ok = ok || c.experiment == k;
    if (!ok) throw ConfigError("config: unknown experiment '" + c.experiment + "'");

    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("out")) c.outdir = j["out"].get<std::string>();
    if (j.contains("workers")) c.workers = j["workers"].get<int>();
    if (j.contains("svg")) c.svg = j["svg"].get<bool>();
    if (j.contains("target")) c.target = TargetSpec::parse(j["target"]);
    if (j.contains("model")) c.model = ModelSpec::parse(j["model"]);
    if (j.contains("schedule")) c.schedule = ScheduleSpec::parse(j["schedule"]);
    if (j.contains("samplers")) {
        for (const auto& s : j["samplers"]) c.samplers.push_back(parse_sampler_kind(s.get<std::string>()));
        if (c.samplers.empty()) throw ConfigError("config: 'samplers' must not be empty");
    }
    if (j.contains("perturb_eps")) c.perturb_eps = j["perturb_eps"].get<double>();
    if (c.perturb_eps < 0.0) throw ConfigError("config: perturb_eps must be >= 0");
    if (j.contains("stop_t")) c.stop_t = j["stop_t"].get<int>();
    if (c.stop_t != 0 && c.stop_t != 1) throw ConfigError("config: stop_t must be 0 or 1");
    if (j.contains("samples")) c.counts = SampleCounts::parse(j["samples"]);

    const std::string want_param = cfg_detail::default_sweep_parameter(c.experiment);
    if (j.contains("sweep")) {
        const auto& sw = j["sweep"];
        cfg_detail::check_keys(sw, {"parameter", "values"}, "sweep");
        c.sweep_parameter = sw.value("parameter", want_param);
        if (c.sweep_parameter != want_param)
            throw ConfigError("sweep: experiment '" + c.experiment + "' sweeps '" + want_param +
                              "', not '" + c.sweep_parameter + "'");
        c.sweep_values.clear();
        if (!sw.contains("values") || sw["values"].empty())
            throw ConfigError("sweep: 'values' must be a non-empty array");
        for (const auto& v : sw["values"]) c.sweep_values.push_back(v.get<double>());
    } else {
        c.sweep_parameter = want_param;
        c.sweep_values = cfg_detail::default_sweep_values(c.experiment);
    }

    // per-experiment requirements
    const bool needs_target = c.experiment != "schedule_check";
    if (needs_target && (!c.target || !c.model))
        throw ConfigError("config: experiment '" + c.experiment + "' needs 'target' and 'model'");
    if (!c.schedule) throw ConfigError("config: missing 'schedule'");
    if (c.samplers.empty()) {
        if (c.experiment == "fig1_gaussian" || c.experiment == "fig1_mixture")
            c.samplers = {SamplerKind::BODDNM, SamplerKind::DDNM, SamplerKind::DDNMplus};
        else
            c.samplers = {SamplerKind::BODDNM};
    }
    if (c.experiment == "fig2_rho_sweep" && needs_target && !c.target->from_rho)
        throw ConfigError("config: fig2_rho_sweep needs the variances+rho target form");

    c.canonical_json = j.dump();
    return c;
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return parse_config(j);
}

} // namespace smlb
