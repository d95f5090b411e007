#include "terata/cli.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "terata/ate.hpp"
#include "terata/cohort.hpp"
#include "terata/errors.hpp"
#include "terata/num.hpp"
#include "terata/pe.hpp"
#include "terata/propensity.hpp"
#include "terata/report.hpp"
#include "terata/sensitivity.hpp"
#include "terata/simulate.hpp"

namespace terata {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitNoConvergence = 2;
constexpr int kExitUsage = 64;

struct CommonOpts {
    std::string input;
    std::string out = ".";
    std::uint64_t seed = 1;
    int bootstrap = 0;
    int jobs = 0;
    double tol = 1e-5;
    int max_iter = 500;
    bool force = false;
    bool verbose = false;
    std::string covariates;  // comma list, empty keeps all
};

void add_common(CLI::App* sub, CommonOpts& o, bool fitting) {
    sub->add_option("--input", o.input, "cohort CSV")->required();
    sub->add_option("--out", o.out, "output directory (default $TERATA_OUT or .)")
        ->envname("TERATA_OUT");
    sub->add_flag("--force", o.force, "overwrite existing artifacts");
    if (fitting) {
        sub->add_option("--seed", o.seed, "master seed for resampling");
        sub->add_option("--bootstrap", o.bootstrap, "bootstrap replicates, 0 disables")
            ->check(CLI::NonNegativeNumber);
        sub->add_option("--jobs", o.jobs, "worker threads, 0 = hardware parallelism")
            ->check(CLI::NonNegativeNumber);
        sub->add_option("--tol", o.tol, "ES convergence tolerance");
        sub->add_option("--max-iter", o.max_iter, "ES iteration cap");
        sub->add_flag("--verbose", o.verbose, "one progress line per ES iteration");
        sub->add_option("--covariates", o.covariates,
                        "comma list restricting the propensity model");
    }
}

std::vector<std::string> split_list(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text.size(); ++i) {
        if (i == text.size() || text[i] == sep) {
            out.push_back(text.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

Cohort select_covariates(const Cohort& in, const std::string& spec) {
    if (spec.empty()) return in;
    std::vector<std::size_t> keep;
    for (const std::string& name : split_list(spec, ',')) {
        if (name.empty()) throw ValidationError("covariate list has an empty entry");
        std::size_t j = 0;
        for (; j < in.schema.size(); ++j)
            if (in.schema.names[j] == name) break;
        if (j == in.schema.size()) throw ValidationError("unknown covariate: " + name);
        for (std::size_t k : keep)
            if (k == j) throw ValidationError("duplicate covariate: " + name);
        keep.push_back(j);
    }
    Cohort out;
    for (std::size_t j : keep) {
        out.schema.names.push_back(in.schema.names[j]);
        out.schema.types.push_back(in.schema.types[j]);
        out.schema.levels.push_back(in.schema.levels[j]);
    }
    out.records = in.records;
    for (auto& rec : out.records) {
        std::vector<double> v;
        v.reserve(keep.size());
        for (std::size_t j : keep) v.push_back(rec.covariates[j]);
        rec.covariates = std::move(v);
    }
    return out;
}

// CLI offset names follow the report notation; the model uses the long form.
const char* translate_offset_name(const std::string& name) {
    if (name == "a0NS") return "alpha0_ns";
    if (name == "aDNS") return "alphaD_ns";
    if (name == "a0NN") return "alpha0_nn";
    if (name == "aDNN") return "alphaD_nn";
    return nullptr;
}

void set_fixed_offset(OffsetSpec& spec, const std::string& name, double value) {
    if (name == "a0NS")
        spec.alpha0_ns = value;
    else if (name == "aDNS")
        spec.alphaD_ns = value;
    else if (name == "a0NN")
        spec.alpha0_nn = value;
    else if (name == "aDNN")
        spec.alphaD_nn = value;
    else if (name == "gNS")
        spec.gamma_ns = value;
    else if (name == "gNN")
        spec.gamma_nn = value;
    else
        throw ValidationError("unknown offset " + name +
                              " (expected a0NS, aDNS, a0NN, aDNN, gNS, gNN)");
}

// "name=value" items pin a coordinate; "name=lo:hi:step" items become grid
// axes when axes is non-null.
void parse_offset_items(const std::string& text, OffsetSpec& base,
                        std::vector<GridAxis>* axes) {
    for (const std::string& item : split_list(text, ',')) {
        std::size_t eq = item.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ValidationError("offset item needs name=value: " + item);
        std::string name = item.substr(0, eq);
        std::string rhs = item.substr(eq + 1);
        if (axes && rhs.find(':') != std::string::npos) {
            const char* internal = translate_offset_name(name);
            if (!internal)
                throw ValidationError("offset " + name + " cannot be swept");
            axes->push_back(parse_axis(std::string(internal) + "=" + rhs));
        } else {
            double value = 0.0;
            if (!parse_double(rhs, value))
                throw ValidationError("offset " + name + " is not a number: " + rhs);
            set_fixed_offset(base, name, value);
        }
    }
}

std::string join_out(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ValidationError("cannot create output directory " + dir);
}

void guard_paths(const std::vector<std::string>& paths, bool force) {
    if (force) return;
    for (const auto& p : paths)
        if (std::filesystem::exists(p))
            throw ValidationError("refusing to overwrite " + p + " (pass --force)");
}

std::string dump_json(const ordered_json& j) { return j.dump(2) + "\n"; }

ordered_json common_config(const CommonOpts& o, bool fitting) {
    ordered_json c;
    c["input"] = o.input;
    if (fitting) {
        c["seed"] = o.seed;
        c["bootstrap"] = o.bootstrap;
        c["tol"] = o.tol;
        c["max_iter"] = o.max_iter;
        c["covariates"] = o.covariates.empty() ? ordered_json(nullptr)
                                               : ordered_json(o.covariates);
    }
    return c;
}

int run_summarize(const CommonOpts& o) {
    Cohort cohort = load_cohort_file(o.input);
    CohortSummary s = summarize(cohort);
    ensure_out_dir(o.out);
    ordered_json manifest = run_manifest("summarize", common_config(o, false),
                                         {"summarize_counts.json"});
    write_artifact(join_out(o.out, "summarize_counts.json"), dump_json(summary_report(s)),
                   o.force);
    write_artifact(join_out(o.out, "summarize_manifest.json"), dump_json(manifest), o.force);
    return kExitOk;
}

int run_balance(const CommonOpts& o) {
    Cohort cohort = select_covariates(load_cohort_file(o.input), o.covariates);
    PropensityFit pf = fit_propensity(cohort);
    WeightVector wv = stabilized_weights(cohort, pf);
    BalanceReport table = balance_table(cohort, wv, pf);
    ensure_out_dir(o.out);
    ordered_json manifest = run_manifest("balance", common_config(o, false),
                                         {"balance_table.csv", "balance_fit.json"});
    write_artifact(join_out(o.out, "balance_table.csv"), table.to_csv(), o.force);
    write_artifact(join_out(o.out, "balance_fit.json"), dump_json(balance_report(pf, table)),
                   o.force);
    write_artifact(join_out(o.out, "balance_manifest.json"), dump_json(manifest), o.force);
    return pf.converged ? kExitOk : kExitNoConvergence;
}

void check_bootstrap_b(int b) {
    if (b > 0 && b < 50)
        throw ValidationError("--bootstrap needs at least 50 replicates (0 disables)");
}

int run_fit_ate(const CommonOpts& o, const std::optional<double>& beta_y_fixed) {
    check_bootstrap_b(o.bootstrap);
    Cohort cohort = select_covariates(load_cohort_file(o.input), o.covariates);
    PropensityFit pf = fit_propensity(cohort);
    WeightVector wv = stabilized_weights(cohort, pf);
    EsOptions es;
    es.tol = o.tol;
    es.max_iter = o.max_iter;
    es.verbose = o.verbose;
    es.beta_y_fixed = beta_y_fixed;
    AteFit fit = fit_ate(cohort, wv, es);

    AteBootstrap boot;
    bool have_boot = false;
    if (o.bootstrap > 0 && fit.converged) {
        BootstrapOptions bo;
        bo.B = o.bootstrap;
        bo.seed = o.seed;
        bo.jobs = o.jobs;
        bo.es = es;
        try {
            boot = bootstrap_ate(cohort, fit, bo);
            have_boot = true;
        } catch (const FitError& e) {
            fit.warnings.push_back(std::string("bootstrap failed: ") + e.what());
        }
    }

    ensure_out_dir(o.out);
    ordered_json config = common_config(o, true);
    config["beta_y_fixed"] =
        beta_y_fixed ? ordered_json(*beta_y_fixed) : ordered_json(nullptr);
    ordered_json manifest =
        run_manifest("fit-ate", config, {"ate_fit.json", "ate_posteriors.csv"});
    write_artifact(join_out(o.out, "ate_fit.json"),
                   dump_json(ate_report(fit, have_boot ? &boot : nullptr)), o.force);
    write_artifact(join_out(o.out, "ate_posteriors.csv"), ate_posterior_csv(cohort, fit),
                   o.force);
    write_artifact(join_out(o.out, "ate_manifest.json"), dump_json(manifest), o.force);

    bool clean = fit.converged && (o.bootstrap == 0 || have_boot);
    return clean ? kExitOk : kExitNoConvergence;
}

int run_fit_pe(const CommonOpts& o, const std::string& offsets_text) {
    check_bootstrap_b(o.bootstrap);
    Cohort cohort = select_covariates(load_cohort_file(o.input), o.covariates);
    PropensityFit pf = fit_propensity(cohort);
    WeightVector wv = stabilized_weights(cohort, pf);
    OffsetSpec offsets;
    if (!offsets_text.empty()) parse_offset_items(offsets_text, offsets, nullptr);
    EsOptions es;
    es.tol = o.tol;
    es.max_iter = o.max_iter;
    es.verbose = o.verbose;
    PeFit fit = fit_pe(cohort, wv, offsets, es);

    PeBootstrap boot;
    bool have_boot = false;
    if (o.bootstrap > 0 && fit.converged) {
        BootstrapOptions bo;
        bo.B = o.bootstrap;
        bo.seed = o.seed;
        bo.jobs = o.jobs;
        bo.es = es;
        try {
            boot = bootstrap_pe(cohort, fit, offsets, bo);
            have_boot = true;
        } catch (const FitError& e) {
            fit.warnings.push_back(std::string("bootstrap failed: ") + e.what());
        }
    }

    ensure_out_dir(o.out);
    ordered_json config = common_config(o, true);
    config["offsets"] = offsets_text.empty() ? ordered_json(nullptr)
                                             : ordered_json(offsets_text);
    ordered_json manifest =
        run_manifest("fit-pe", config, {"pe_fit.json", "pe_membership.csv"});
    write_artifact(join_out(o.out, "pe_fit.json"),
                   dump_json(pe_report(fit, have_boot ? &boot : nullptr)), o.force);
    write_artifact(join_out(o.out, "pe_membership.csv"), pe_membership_csv(cohort, fit),
                   o.force);
    write_artifact(join_out(o.out, "pe_manifest.json"), dump_json(manifest), o.force);

    bool clean = fit.converged && (o.bootstrap == 0 || have_boot);
    return clean ? kExitOk : kExitNoConvergence;
}

int grid_exit_code(const SensitivityGrid& grid) {
    for (const auto& cell : grid.cells)
        if (!cell.converged) return kExitNoConvergence;
    return kExitOk;
}

int run_sensitivity_ate(const CommonOpts& o, const std::string& sweep_text) {
    Cohort cohort = select_covariates(load_cohort_file(o.input), o.covariates);
    PropensityFit pf = fit_propensity(cohort);
    WeightVector wv = stabilized_weights(cohort, pf);
    SweepOptions opts;
    if (!sweep_text.empty()) {
        opts.axis = parse_axis(sweep_text);
        if (opts.axis.name != "beta_y")
            throw ValidationError("sensitivity-ate sweeps beta_y only");
    }
    opts.es.tol = o.tol;
    opts.es.max_iter = o.max_iter;
    opts.boot_B = o.bootstrap;
    opts.seed = o.seed;
    opts.jobs = o.jobs;
    SensitivityGrid grid = ate_beta_y_sweep(cohort, wv, opts);

    ensure_out_dir(o.out);
    std::string stem = join_out(o.out, "sensitivity_ate_grid");
    guard_paths({stem + ".csv", stem + "_posteriors.csv", stem + "_manifest.json",
                 join_out(o.out, "sensitivity_ate_manifest.json")},
                o.force);
    std::vector<std::string> written = export_grid(grid, stem);
    std::vector<std::string> names;
    for (const auto& p : written) names.push_back(std::filesystem::path(p).filename().string());
    ordered_json config = common_config(o, true);
    config["sweep"] = ordered_json{{"axis", opts.axis.name},
                                   {"lo", opts.axis.lo},
                                   {"hi", opts.axis.hi},
                                   {"step", opts.axis.step}};
    write_artifact(join_out(o.out, "sensitivity_ate_manifest.json"),
                   dump_json(run_manifest("sensitivity-ate", config, names)), o.force);
    return grid_exit_code(grid);
}

int run_sensitivity_pe(const CommonOpts& o, const std::string& offsets_text) {
    Cohort cohort = select_covariates(load_cohort_file(o.input), o.covariates);
    PropensityFit pf = fit_propensity(cohort);
    WeightVector wv = stabilized_weights(cohort, pf);
    OffsetSpec base;
    PeGridOptions opts;
    if (!offsets_text.empty()) {
        opts.axes.clear();
        parse_offset_items(offsets_text, base, &opts.axes);
        if (opts.axes.empty())
            throw ValidationError("sensitivity-pe needs at least one swept offset axis");
    }
    opts.es.tol = o.tol;
    opts.es.max_iter = o.max_iter;
    opts.boot_B = o.bootstrap;
    opts.seed = o.seed;
    opts.jobs = o.jobs;
    SensitivityGrid grid = pe_offset_grid(cohort, wv, base, opts);

    ensure_out_dir(o.out);
    std::string stem = join_out(o.out, "sensitivity_pe_grid");
    guard_paths({stem + ".csv", stem + "_posteriors.csv", stem + "_manifest.json",
                 join_out(o.out, "sensitivity_pe_manifest.json")},
                o.force);
    std::vector<std::string> written = export_grid(grid, stem);
    std::vector<std::string> names;
    for (const auto& p : written) names.push_back(std::filesystem::path(p).filename().string());
    ordered_json config = common_config(o, true);
    config["offsets"] = offsets_text.empty() ? ordered_json(nullptr)
                                             : ordered_json(offsets_text);
    write_artifact(join_out(o.out, "sensitivity_pe_manifest.json"),
                   dump_json(run_manifest("sensitivity-pe", config, names)), o.force);
    return grid_exit_code(grid);
}

int run_simulate(const CommonOpts& o, const std::string& params_path, bool pe_mode,
                 std::size_t n, std::size_t truth_draws) {
    DgpParams params;
    if (!params_path.empty()) {
        std::ifstream in(params_path, std::ios::binary);
        if (!in) throw ValidationError("cannot read params file " + params_path);
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        params = dgp_from_json(text);
    } else {
        params = pe_mode ? pe_defaults() : table5_defaults();
    }
    Cohort cohort = simulate_cohort(params, n, o.seed);
    OracleTruth truth = oracle_truth(params, o.seed, truth_draws);

    ordered_json truth_json;
    truth_json["alpha_d"] = truth.alpha_d;
    truth_json["or_y"] = truth.or_y;
    truth_json["log_or_m"] = truth.log_or_m;
    truth_json["log_or_m_se"] = truth.log_or_m_se;
    truth_json["strata"] = ordered_json{
        {"ss", truth.strata[0]}, {"ns", truth.strata[1]}, {"nn", truth.strata[2]}};

    ensure_out_dir(o.out);
    ordered_json config;
    config["params"] = ordered_json::parse(dgp_to_json(params));
    config["n"] = n;
    config["seed"] = o.seed;
    config["truth_draws"] = truth_draws;
    ordered_json manifest = run_manifest("simulate", config,
                                         {"simulate_cohort.csv", "simulate_truth.json"});
    write_artifact(join_out(o.out, "simulate_cohort.csv"), serialize_cohort(cohort), o.force);
    write_artifact(join_out(o.out, "simulate_truth.json"), dump_json(truth_json), o.force);
    write_artifact(join_out(o.out, "simulate_manifest.json"), dump_json(manifest), o.force);
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& argv) {
    CLI::App app{"terata: causal effects of prenatal exposure on defects under "
                 "terathanasia-driven missingness"};
    app.require_subcommand(1);

    CommonOpts so;
    CLI::App* sub_sum = app.add_subcommand("summarize", "outcome-by-arm count tables");
    add_common(sub_sum, so, false);

    CommonOpts bo;
    CLI::App* sub_bal = app.add_subcommand("balance", "propensity fit and covariate balance");
    add_common(sub_bal, bo, false);
    sub_bal->add_option("--covariates", bo.covariates,
                        "comma list restricting the propensity model");

    CommonOpts ao;
    double ate_beta_y = 0.0;
    CLI::App* sub_ate = app.add_subcommand("fit-ate", "treatment-effect model fit");
    add_common(sub_ate, ao, true);
    CLI::Option* opt_by = sub_ate->add_option("--beta-y", ate_beta_y,
                                              "freeze the defect log hazard ratio");

    CommonOpts po;
    std::string pe_offsets;
    CLI::App* sub_pe = app.add_subcommand("fit-pe", "principal-stratum model fit");
    add_common(sub_pe, po, true);
    sub_pe->add_option("--offsets", pe_offsets,
                       "fixed offsets, e.g. \"a0NS=-1,aDNS=0,a0NN=-1,aDNN=0\"");

    CommonOpts sao;
    std::string sweep_text;
    CLI::App* sub_sate = app.add_subcommand("sensitivity-ate", "beta_y sweep");
    add_common(sub_sate, sao, true);
    sub_sate->add_option("--sweep", sweep_text, "axis \"beta_y=lo:hi:step\" (default 0:5:0.5)");

    CommonOpts spo;
    std::string spe_offsets;
    CLI::App* sub_spe = app.add_subcommand("sensitivity-pe", "offset grid sweep");
    add_common(sub_spe, spo, true);
    sub_spe->add_option("--offsets", spe_offsets,
                        "axes and pins, e.g. \"a0NS=-2:0:0.5,a0NN=-2:0:0.5,aDNN=-2:2:0.5\"");

    CommonOpts mo;
    std::string params_path;
    bool pe_mode = false;
    std::size_t sim_n = 0;
    std::size_t truth_draws = 10000000;
    CLI::App* sub_sim = app.add_subcommand("simulate", "draw a synthetic cohort");
    sub_sim->add_option("--params", params_path, "generator params JSON (default built-ins)");
    sub_sim->add_flag("--pe", pe_mode, "strata-mode defaults when --params is absent");
    sub_sim->add_option("--n", sim_n, "cohort size")->required();
    sub_sim->add_option("--seed", mo.seed, "generator seed");
    sub_sim->add_option("--truth-draws", truth_draws, "Monte-Carlo draws for the oracle");
    sub_sim->add_option("--out", mo.out, "output directory (default $TERATA_OUT or .)")
        ->envname("TERATA_OUT");
    sub_sim->add_flag("--force", mo.force, "overwrite existing artifacts");

    try {
        std::vector<std::string> rev(argv.rbegin(), argv.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        for (CLI::App* sub : app.get_subcommands()) {
            std::cout << sub->help();
            return kExitOk;
        }
        std::cout << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    try {
        if (sub_sum->parsed()) return run_summarize(so);
        if (sub_bal->parsed()) return run_balance(bo);
        if (sub_ate->parsed())
            return run_fit_ate(ao, opt_by->count() ? std::optional<double>(ate_beta_y)
                                                   : std::nullopt);
        if (sub_pe->parsed()) return run_fit_pe(po, pe_offsets);
        if (sub_sate->parsed()) return run_sensitivity_ate(sao, sweep_text);
        if (sub_spe->parsed()) return run_sensitivity_pe(spo, spe_offsets);
        if (sub_sim->parsed()) return run_simulate(mo, params_path, pe_mode, sim_n, truth_draws);
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const FitError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNoConvergence;
    }
    return kExitUsage;
}

}  // namespace terata
