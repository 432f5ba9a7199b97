#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "smlb/analysis.hpp"
#include "smlb/config.hpp"
#include "smlb/svg.hpp"
#include "smlb/table.hpp"

namespace smlb {

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t idx = 0) {
    std::uint64_t s = base ^ (tag * 0x9e3779b97f4a7c15ULL) ^ (idx * 0xc2b2ae3d27d4eb4fULL);
    return splitmix64(s);
}

namespace exp_detail {

inline std::string fmt_hash(std::uint64_t h) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline void add_provenance(ResultTable& t, const ExperimentConfig& cfg) {
    char buf[64];
    t.footer.push_back("config_hash=" + fmt_hash(fnv1a64(cfg.canonical_json)));
    std::snprintf(buf, sizeof(buf), "seed=%llu", static_cast<unsigned long long>(cfg.seed));
    t.footer.push_back(buf);
    t.footer.push_back(std::string("version=") + kVersion);
}

inline void require_gaussian(const ExperimentConfig& cfg, const char* what) {
    if (cfg.target->is_mixture)
        throw ConfigError(std::string(what) + ": needs a gaussian target");
}

inline void require_mixture(const ExperimentConfig& cfg, const char* what) {
    if (!cfg.target->is_mixture)
        throw ConfigError(std::string(what) + ": needs a mixture target");
}

// Exact KL for one sampler (Gaussian path).
inline double exact_kl(const ExperimentConfig& cfg, SamplerKind kind, const Target& target,
                       const LinearObservation& model, const NoiseSchedule& sched) {
    return kl_target_vs_sampler(cfg.sampler_spec(kind), target, model, sched,
                                KLMethod::ExactGaussian)
        .value;
}

inline ResultTable fig1_gaussian(const ExperimentConfig& cfg) {
    require_gaussian(cfg, "fig1_gaussian");
    if (cfg.perturb_eps != 0.0)
        throw ConfigError("fig1_gaussian: exact KL path needs the exact score source");
    const Target target = cfg.target->build();
    const NoiseSchedule sched = cfg.schedule->build();
    ResultTable t;
    t.columns.push_back("sigma_y2");
    for (SamplerKind k : cfg.samplers) t.columns.push_back(std::string("kl_") + sampler_name(k));
    for (double sy2 : cfg.sweep_values) {
        const LinearObservation model = cfg.model->build(target_dim(target), sy2);
        std::vector<double> row{sy2};
        for (SamplerKind k : cfg.samplers)
            row.push_back(exact_kl(cfg, k, target, model, sched));
        t.add_row(std::move(row));
    }
    return t;
}

inline ResultTable fig1_mixture(const ExperimentConfig& cfg) {
    require_mixture(cfg, "fig1_mixture");
    const Target target = cfg.target->build();
    const NoiseSchedule sched = cfg.schedule->build();
    const KnnOptions opts{cfg.counts.knn_k, cfg.counts.chains, cfg.counts.bootstrap};
    ResultTable t;
    t.columns.push_back("sigma_y2");
    for (SamplerKind k : cfg.samplers) t.columns.push_back(std::string("kl_") + sampler_name(k));
    for (SamplerKind k : cfg.samplers)
        t.columns.push_back(std::string("stderr_") + sampler_name(k));
    for (std::size_t i = 0; i < cfg.sweep_values.size(); ++i) {
        const double sy2 = cfg.sweep_values[i];
        const LinearObservation model = cfg.model->build(target_dim(target), sy2);
        std::vector<double> kls, errs;
        for (std::size_t s = 0; s < cfg.samplers.size(); ++s) {
            const KLEstimate e = kl_target_vs_sampler(
                cfg.sampler_spec(cfg.samplers[s]), target, model, sched, KLMethod::KnnTwoSample,
                opts, derive_seed(cfg.seed, 0xF16'0001ULL + s, i), cfg.workers);
            kls.push_back(e.value);
            errs.push_back(e.stderr_);
        }
        std::vector<double> row{sy2};
        row.insert(row.end(), kls.begin(), kls.end());
        row.insert(row.end(), errs.begin(), errs.end());
        t.add_row(std::move(row));
    }
    return t;
}

inline ResultTable fig2_y_sweep(const ExperimentConfig& cfg) {
    require_gaussian(cfg, "fig2_y_sweep");
    const Target target = cfg.target->build();
    const NoiseSchedule sched = cfg.schedule->build();
    const SamplerKind kind = cfg.samplers.front();
    ResultTable t;
    t.columns = {"y_scale", "w_bias", "kl_limit"};
    for (std::size_t i = 0; i < cfg.sweep_values.size(); ++i) {
        const double s = cfg.sweep_values[i];
        const int d = target_dim(target);
        const LinearObservation probe = cfg.model->build(d);
        const Vec y = Vec::Constant(probe.p(), s);
        const LinearObservation model = cfg.model->build(d, std::nullopt, &y);
        const SamplerSpec spec = cfg.sampler_spec(kind);
        double wb;
        if (!cfg.target->is_mixture && kind == SamplerKind::BODDNM && model.orthonormal_rows) {
            wb = w_bias(spec, target, model, sched, DeltaMethod::ExactGaussian).w_bias;
        } else {
            wb = w_bias(spec, target, model, sched, DeltaMethod::MonteCarlo, cfg.counts.mc,
                        derive_seed(cfg.seed, 0xF2A0ULL, i), /*stride=*/0)
                     .w_bias;
        }
        t.add_row({s, wb, exact_kl(cfg, kind, target, model, sched)});
    }
    return t;
}

inline ResultTable fig2_rho_sweep(const ExperimentConfig& cfg) {
    require_gaussian(cfg, "fig2_rho_sweep");
    const NoiseSchedule sched = cfg.schedule->build();
    const SamplerKind kind = cfg.samplers.front();
    ResultTable t;
    t.columns = {"rho", "kl_limit"};
    for (double rho : cfg.sweep_values) {
        const Target target = cfg.target->build(rho);
        const LinearObservation model = cfg.model->build(target_dim(target));
        t.add_row({rho, exact_kl(cfg, kind, target, model, sched)});
    }
    return t;
}

inline ResultTable kl_vs_T(const ExperimentConfig& cfg) {
    const Target target = cfg.target->build();
    const SamplerKind kind = cfg.samplers.front();
    const LinearObservation model = cfg.model->build(target_dim(target));
    const KnnOptions opts{cfg.counts.knn_k, cfg.counts.chains, cfg.counts.bootstrap};
    ResultTable t;
    t.columns = {"T", "kl", "stderr"};
    for (std::size_t i = 0; i < cfg.sweep_values.size(); ++i) {
        const int T = static_cast<int>(cfg.sweep_values[i]);
        const NoiseSchedule sched = cfg.schedule->build(T);
        KLEstimate e;
        if (!cfg.target->is_mixture && cfg.perturb_eps == 0.0) {
            e = kl_target_vs_sampler(cfg.sampler_spec(kind), target, model, sched,
                                     KLMethod::ExactGaussian);
        } else {
            e = kl_target_vs_sampler(cfg.sampler_spec(kind), target, model, sched,
                                     KLMethod::KnnTwoSample, opts,
                                     derive_seed(cfg.seed, 0x1713ULL, i), cfg.workers);
        }
        t.add_row({static_cast<double>(T), e.value, e.stderr_});
    }
    return t;
}

inline ResultTable schedule_check(const ExperimentConfig& cfg) {
    const NoiseSchedule sched = cfg.schedule->build();
    const double lnT = std::log(static_cast<double>(sched.T()));
    const double ratio = sched.c() * lnT / sched.T();
    ResultTable t;
    t.columns = {"p", "sum", "lemma_value", "abs_err"};
    for (double p : cfg.sweep_values) {
        const double sum = sched.coefficient_sum(p);
        const double lemma = sched.kind() == ScheduleKind::Constant
                                 ? (1.0 / p) * (1.0 - 2.0 * p * ratio)
                                 : 1.0 / p - (1.0 + (p + 1.0) / (2.0 * p)) * ratio;
        t.add_row({p, sum, lemma, std::abs(sum - lemma)});
    }
    char buf[128];
    const auto& dg = sched.diagnostics();
    std::snprintf(buf, sizeof(buf), "diag_max_beta_T_over_logT=%.17g", dg.max_beta_ratio);
    t.footer.push_back(buf);
    std::snprintf(buf, sizeof(buf), "diag_alpha_bar_T_times_T=%.17g", dg.alpha_bar_T_times_T);
    t.footer.push_back(buf);
    if (sched.kind() == ScheduleKind::ExpThenConst) {
        std::snprintf(buf, sizeof(buf), "diag_crossover_t=%d", dg.crossover);
        t.footer.push_back(buf);
    }
    return t;
}

inline ResultTable bias_report(const ExperimentConfig& cfg) {
    const Target target = cfg.target->build();
    const NoiseSchedule sched = cfg.schedule->build();
    const LinearObservation model = cfg.model->build(target_dim(target));
    const SamplerKind kind = cfg.samplers.front();
    const SamplerSpec spec = cfg.sampler_spec(kind);
    const bool exact = !cfg.target->is_mixture && kind == SamplerKind::BODDNM &&
                       model.orthonormal_rows;
    const DeltaMethod method = exact ? DeltaMethod::ExactGaussian : DeltaMethod::MonteCarlo;
    const int stride = sched.T() <= 400 ? 1 : 0; // 0 = auto subsampling
    const MismatchReport rep = w_bias(spec, target, model, sched, method, cfg.counts.mc,
                                      derive_seed(cfg.seed, 0xB1A5ULL), stride);
    ResultTable t;
    t.columns = {"t", "weight", "e_delta_sq", "stderr"};
    for (const auto& s : rep.steps)
        t.add_row({static_cast<double>(s.t), s.weight, s.value, s.stderr_});
    char buf[96];
    std::snprintf(buf, sizeof(buf), "w_bias=%.17g", rep.w_bias);
    t.footer.push_back(buf);
    std::snprintf(buf, sizeof(buf), "w_bias_stderr=%.17g", rep.w_bias_stderr);
    t.footer.push_back(buf);
    t.footer.push_back(std::string("method=") + (exact ? "exact" : "mc"));
    return t;
}

struct SvgPlan {
    std::string x;
    std::vector<std::string> ys;
    SvgOptions opt;
};

inline SvgPlan svg_plan(const ExperimentConfig& cfg, const ResultTable& t) {
    SvgPlan p;
    if (cfg.experiment == "fig1_gaussian" || cfg.experiment == "fig1_mixture") {
        p.x = "sigma_y2";
        for (const auto& c : t.columns)
            if (c.rfind("kl_", 0) == 0) p.ys.push_back(c);
        // raw k-NN estimates may dip below zero, so only the exact path gets a log axis
        p.opt.log_y = cfg.experiment == "fig1_gaussian";
    } else if (cfg.experiment == "fig2_y_sweep") {
        p.x = "y_scale";
        p.ys = {"kl_limit", "w_bias"};
    } else if (cfg.experiment == "fig2_rho_sweep") {
        p.x = "rho";
        p.ys = {"kl_limit"};
    } else if (cfg.experiment == "kl_vs_T") {
        p.x = "T";
        p.ys = {"kl"};
        p.opt.log_y = true;
    } else if (cfg.experiment == "schedule_check") {
        p.x = "p";
        p.ys = {"sum", "lemma_value"};
    } else {
        p.x = "t";
        p.ys = {"e_delta_sq"};
    }
    return p;
}

} // namespace exp_detail

struct ExperimentResult {
    ResultTable table;
    std::vector<std::string> files;
};

/// Dispatches an experiment, writes <outdir>/<experiment>.csv (and .svg when
/// enabled), and removes partial outputs if anything throws.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    ExperimentResult res;
    try {
        if (cfg.experiment == "fig1_gaussian")
            res.table = exp_detail::fig1_gaussian(cfg);
        else if (cfg.experiment == "fig1_mixture")
            res.table = exp_detail::fig1_mixture(cfg);
        else if (cfg.experiment == "fig2_y_sweep")
            res.table = exp_detail::fig2_y_sweep(cfg);
        else if (cfg.experiment == "fig2_rho_sweep")
            res.table = exp_detail::fig2_rho_sweep(cfg);
        else if (cfg.experiment == "kl_vs_T")
            res.table = exp_detail::kl_vs_T(cfg);
        else if (cfg.experiment == "schedule_check")
            res.table = exp_detail::schedule_check(cfg);
        else
            res.table = exp_detail::bias_report(cfg);
        exp_detail::add_provenance(res.table, cfg);

        fs::create_directories(cfg.outdir);
        const fs::path csv = fs::path(cfg.outdir) / (cfg.experiment + ".csv");
        {
            std::ofstream os(csv);
            if (!os) throw ConfigError("cannot write " + csv.string());
            res.table.write_csv(os);
        }
        res.files.push_back(csv.string());
        if (cfg.svg) {
            const exp_detail::SvgPlan plan = exp_detail::svg_plan(cfg, res.table);
            const fs::path svg = fs::path(cfg.outdir) / (cfg.experiment + ".svg");
            std::ofstream os(svg);
            if (!os) throw ConfigError("cannot write " + svg.string());
            render_svg(res.table, plan.x, plan.ys, os, plan.opt);
            res.files.push_back(svg.string());
        }
        return res;
    } catch (...) {
        for (const auto& f : res.files) {
            std::error_code ec;
            fs::remove(f, ec);
        }
        throw;
    }
}

} // namespace smlb
