// qhd: simulate, analyze and budget homodyne satellite-link measurements.

#include "qhd/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

template <class T>
std::optional<T> opt_if(const CLI::Option* o, const T& v) {
    return o->count() ? std::optional<T>(v) : std::nullopt;
}

} // namespace

int main(int argc, char** argv) {
    using namespace qhd::pipe;

    CLI::App app{"Homodyne trace simulation, analysis and link budgets"};
    app.set_version_flag("--version", std::string(tool_version));
    app.require_subcommand(1);

    SimulateArgs sim_args;
    std::string sim_config, sim_out = "qhd";
    std::uint64_t sim_seed = 0;
    auto* sim = app.add_subcommand("simulate", "write signal, vacuum and dark traces plus a truth sidecar");
    auto* sim_config_opt = sim->add_option("--config", sim_config, "simulation key/value file")->check(CLI::ExistingFile);
    sim->add_option("--out", sim_out, "output prefix (default: qhd)");
    auto* sim_seed_opt = sim->add_option("--seed", sim_seed, "override rng_seed");
    sim->add_flag("--json", sim_args.json, "print a JSON summary");

    AnalyzeArgs an_args;
    std::string an_signal, an_vacuum, an_dark, an_config, an_out;
    int an_bins = 50;
    double an_sat = 2.0, an_kappa = 2.0;
    auto* an = app.add_subcommand("analyze", "recover clock, fit bins and report excess noise");
    an->add_option("signal", an_signal, "signal trace")->required();
    an->add_option("vacuum", an_vacuum, "vacuum trace")->required();
    an->add_option("dark", an_dark, "dark trace")->required();
    auto* an_config_opt = an->add_option("--config", an_config, "analysis key/value file")->check(CLI::ExistingFile);
    auto* an_out_opt = an->add_option("--out", an_out, "write the JSON report here");
    auto* an_bins_opt = an->add_option("--bins", an_bins, "amplitude bins per half-period (default 50)")
                            ->check(CLI::PositiveNumber);
    auto* an_sat_opt = an->add_option("--saturation-alpha", an_sat, "usable-bin amplitude limit (default 2)");
    auto* an_kappa_opt = an->add_option("--kappa", an_kappa, "quadrature convention factor (default 2)");
    an->add_flag("--json", an_args.json, "print the JSON report");

    std::string lb_path;
    bool lb_json = false;
    auto* lb = app.add_subcommand("linkbudget", "itemized loss budget, projections and bound chain");
    lb->add_option("--config,scenario", lb_path, "scenario key/value file")->required();
    lb->add_flag("--json", lb_json, "print JSON");

    std::string lc_path;
    bool lc_json = false;
    auto* lc = app.add_subcommand("lincheck", "detector linearity from an LO power sweep");
    lc->add_option("--config,sweep", lc_path, "sweep CSV (lo_power_mw, noise_variance, dark_variance)")->required();
    lc->add_flag("--json", lc_json, "print JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_usage;
    }

    return run_command(
        [&] {
            if (*sim) {
                if (sim_config_opt->count()) sim_args.config = sim_config;
                sim_args.out_prefix = sim_out;
                if (sim_seed_opt->count()) sim_args.seed = sim_seed;
                cmd_simulate(sim_args, std::cout);
            } else if (*an) {
                an_args.signal = an_signal;
                an_args.vacuum = an_vacuum;
                an_args.dark = an_dark;
                if (an_config_opt->count()) an_args.config = an_config;
                if (an_out_opt->count()) an_args.out = an_out;
                an_args.bins = opt_if(an_bins_opt, an_bins);
                an_args.saturation_alpha = opt_if(an_sat_opt, an_sat);
                an_args.kappa = opt_if(an_kappa_opt, an_kappa);
                cmd_analyze(an_args, std::cout);
            } else if (*lb) {
                cmd_linkbudget(lb_path, std::cout, lb_json);
            } else if (*lc) {
                cmd_lincheck(lc_path, std::cout, lc_json);
            }
        },
        std::cerr);
}
