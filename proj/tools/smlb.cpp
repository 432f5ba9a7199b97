#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "smlb/experiments.hpp"
#include "smlb/selftest.hpp"

namespace {

int env_workers() {
    const char* w = std::getenv("SMLB_WORKERS");
    if (w == nullptr) return 0;
    try {
        return std::max(0, std::stoi(w));
    } catch (...) {
        return 0;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"smlb: score-mismatch diffusion sampling laboratory"};
    app.require_subcommand(1);

    // run
    std::string config_path, out_override;
    std::uint64_t seed_override = 0;
    bool seed_set = false, no_svg = false;
    int workers = -1;
    auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
    run->add_option("config", config_path, "path to config.json")->required();
    run->add_option("--seed", seed_override, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });
    run->add_option("--out", out_override, "override the output directory");
    run->add_option("--workers", workers, "worker threads (default: SMLB_WORKERS or all cores)");
    run->add_flag("--no-svg", no_svg, "skip SVG rendering");

    // check-schedules
    int cs_T = 100000;
    double cs_c = 2.0, cs_delta = 0.01;
    std::string cs_kind = "constant", cs_csv;
    auto* cs = app.add_subcommand("check-schedules",
                                  "report schedule diagnostics and coefficient sums");
    cs->add_option("--kind", cs_kind, "constant | exp_then_const");
    cs->add_option("--T", cs_T, "step count");
    cs->add_option("--c", cs_c, "schedule constant c");
    cs->add_option("--delta", cs_delta, "warm-up delta (exp_then_const)");
    cs->add_option("--csv", cs_csv, "also dump the per-step schedule table to this path");

    auto* st = app.add_subcommand("self-test", "run the analytic invariant suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            smlb::ExperimentConfig cfg = smlb::load_config_file(config_path);
            if (seed_set) cfg.seed = seed_override;
            if (!out_override.empty()) cfg.outdir = out_override;
            if (workers >= 0)
                cfg.workers = workers;
            else if (cfg.workers == 0)
                cfg.workers = env_workers();
            if (no_svg) cfg.svg = false;
            const smlb::ExperimentResult res = smlb::run_experiment(cfg);
            for (const auto& f : res.files) std::cout << "wrote " << f << "\n";
            return 0;
        }
        if (cs->parsed()) {
            smlb::NoiseSchedule sched = cs_kind == "constant"
                                            ? smlb::make_constant(cs_T, cs_c)
                                            : smlb::make_exp_then_const(cs_T, cs_c, cs_delta);
            const auto& dg = sched.diagnostics();
            std::cout << "kind=" << cs_kind << " T=" << cs_T << " c=" << cs_c;
            if (cs_kind != "constant") std::cout << " delta=" << cs_delta;
            std::cout << "\nmax (1-alpha_t) T/ln(T) = " << dg.max_beta_ratio
                      << "\nalpha_bar_T * T        = " << dg.alpha_bar_T_times_T << "\n";
            if (cs_kind != "constant") std::cout << "plateau crossover t*   = " << dg.crossover << "\n";
            const double lnT = std::log(static_cast<double>(cs_T));
            for (double p : {1.0, 2.0, 3.0}) {
                const double sum = sched.coefficient_sum(p);
                const double lemma =
                    sched.kind() == smlb::ScheduleKind::Constant
                        ? (1.0 / p) * (1.0 - 2.0 * p * cs_c * lnT / cs_T)
                        : 1.0 / p - (1.0 + (p + 1.0) / (2.0 * p)) * cs_c * lnT / cs_T;
                std::cout << "p=" << p << "  sum=" << sum << "  lemma_value=" << lemma
                          << "  abs_err=" << std::abs(sum - lemma) << "\n";
            }
            if (!cs_csv.empty()) {
                std::ofstream os(cs_csv);
                if (!os) throw smlb::ConfigError("cannot write " + cs_csv);
                sched.write_csv(os);
                std::cout << "wrote " << cs_csv << "\n";
            }
            return 0;
        }
        if (st->parsed()) {
            return smlb::run_self_test(std::cout) ? 0 : 1;
        }
    } catch (const smlb::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const smlb::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
