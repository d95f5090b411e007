#include "terata/report.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "terata/errors.hpp"
#include "terata/num.hpp"

namespace terata {

namespace {

ordered_json finite_or_null(double v) {
    if (!std::isfinite(v)) return nullptr;
    return v;
}

ordered_json counts_block(const int (&c)[3]) {
    ordered_json j;
    j["defect_yes"] = c[0];
    j["defect_no"] = c[1];
    j["defect_missing"] = c[2];
    return j;
}

ordered_json arm_block(const OutcomeCounts& c) {
    ordered_json j;
    j["live_birth"] = counts_block(c.live_birth);
    j["sab"] = counts_block(c.sab);
    j["stillbirth"] = counts_block(c.stillbirth);
    j["tab"] = counts_block(c.tab);
    j["ltfu"] = counts_block(c.ltfu);
    j["total"] = c.total();
    return j;
}

double pe_param_value(const PeTheta& theta, const std::string& name) {
    if (name == "gamma_NS") return theta.gamma_ns;
    if (name == "gamma_NN") return theta.gamma_nn;
    if (name == "alpha0_SS") return theta.alpha0[0];
    if (name == "alpha0_NS") return theta.alpha0[1];
    if (name == "alpha0_NN") return theta.alpha0[2];
    if (name == "alphaD_SS") return theta.alphaD[0];
    if (name == "alphaD_NS") return theta.alphaD[1];
    if (name == "alphaD_NN") return theta.alphaD[2];
    if (name == "beta0_NS") return theta.beta0_ns;
    if (name == "betaD_NN") return theta.betaD_nn;
    if (name == "beta_y") return theta.beta_y;
    throw ValidationError("pe report: unknown parameter " + name);
}

const ParamSummary* find_summary(const std::vector<ParamSummary>& params,
                                 const std::string& name) {
    for (const auto& p : params)
        if (p.name == name) return &p;
    return nullptr;
}

}  // namespace

ordered_json param_row(const std::string& name, double estimate, const ParamSummary* summary) {
    ordered_json j;
    j["name"] = name;
    j["estimate"] = estimate;
    j["exp_estimate"] = std::exp(estimate);
    if (summary) {
        j["se"] = finite_or_null(summary->se);
        j["exp_ci_lo"] = finite_or_null(std::exp(summary->ci_lo));
        j["exp_ci_hi"] = finite_or_null(std::exp(summary->ci_hi));
        j["p"] = finite_or_null(summary->p);
    } else {
        j["se"] = nullptr;
        j["exp_ci_lo"] = nullptr;
        j["exp_ci_hi"] = nullptr;
        j["p"] = nullptr;
    }
    return j;
}

ordered_json summary_report(const CohortSummary& summary) {
    ordered_json j;
    j["exposed"] = arm_block(summary.exposed);
    j["unexposed"] = arm_block(summary.unexposed);
    ordered_json groups;
    for (const auto& [label, g] : summary.groups) {
        ordered_json row;
        row["size"] = g.size;
        row["defect_yes"] = g.defect_yes;
        row["defect_no"] = g.defect_no;
        row["defect_missing"] = g.defect_missing;
        groups[label] = row;
    }
    j["groups"] = groups;
    return j;
}

ordered_json balance_report(const PropensityFit& fit, const BalanceReport& balance) {
    ordered_json j;
    ordered_json coef;
    for (std::size_t k = 0; k < fit.column_names.size(); ++k)
        coef[fit.column_names[k]] = fit.coefficients[k];
    j["propensity"] = ordered_json{{"coefficients", coef},
                                   {"iterations", fit.iterations},
                                   {"converged", fit.converged},
                                   {"clipped_scores", fit.clipped}};
    ordered_json rows = ordered_json::array();
    for (const auto& r : balance.rows)
        rows.push_back(ordered_json{{"covariate", r.covariate},
                                    {"smd_unweighted", finite_or_null(r.smd_unweighted)},
                                    {"smd_weighted", finite_or_null(r.smd_weighted)}});
    j["balance"] = rows;
    return j;
}

ordered_json ate_report(const AteFit& fit, const AteBootstrap* boot) {
    ordered_json j;
    j["model"] = "ate";
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    j["loglik"] = fit.loglik_trace.empty() ? ordered_json(nullptr)
                                           : ordered_json(fit.loglik_trace.back());
    j["ascent_ok"] = fit.ascent_ok;

    const char* names[4] = {"alpha0", "alpha_d", "beta_d", "beta_y"};
    const double values[4] = {fit.theta.alpha0, fit.theta.alpha_d, fit.theta.beta_d,
                              fit.theta.beta_y};
    ordered_json params = ordered_json::array();
    for (int k = 0; k < 4; ++k) {
        const ParamSummary* s = boot ? find_summary(boot->params, names[k]) : nullptr;
        params.push_back(param_row(names[k], values[k], s));
    }
    j["parameters"] = params;

    if (boot)
        j["bootstrap"] = ordered_json{{"requested", boot->requested}, {"dropped", boot->dropped}};
    else
        j["bootstrap"] = nullptr;
    j["warnings"] = fit.warnings;
    return j;
}

ordered_json pe_report(const PeFit& fit, const PeBootstrap* boot) {
    ordered_json j;
    j["model"] = "pe";
    j["converged"] = fit.converged;
    j["iterations"] = fit.iterations;
    j["loglik"] = fit.loglik_trace.empty() ? ordered_json(nullptr)
                                           : ordered_json(fit.loglik_trace.back());
    j["ascent_ok"] = fit.ascent_ok;

    ordered_json params = ordered_json::array();
    for (const auto& name : fit.free_names) {
        const ParamSummary* s = boot ? find_summary(boot->params, name) : nullptr;
        params.push_back(param_row(name, pe_param_value(fit.theta, name), s));
    }
    j["parameters"] = params;

    j["strata"] = ordered_json{
        {"ss", fit.strata[0]}, {"ns", fit.strata[1]}, {"nn", fit.strata[2]}};
    ordered_json orm;
    orm["estimate"] = fit.log_or_est;
    orm["exp_estimate"] = std::exp(fit.log_or_est);
    if (boot) {
        orm["se"] = finite_or_null(boot->log_or.se);
        orm["p"] = finite_or_null(boot->log_or_p);
    } else {
        orm["se"] = nullptr;
        orm["p"] = nullptr;
    }
    j["log_or_m"] = orm;

    if (boot)
        j["bootstrap"] = ordered_json{{"requested", boot->requested}, {"dropped", boot->dropped}};
    else
        j["bootstrap"] = nullptr;
    j["warnings"] = fit.warnings;
    return j;
}

std::string ate_posterior_csv(const Cohort& cohort, const AteFit& fit) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < cohort.size(); ++i) index[cohort.records[i].id] = i;

    std::string out = "subject_id,end_ga,posterior,exposed\n";
    for (std::size_t k = 0; k < fit.posterior_ids.size(); ++k) {
        auto it = index.find(fit.posterior_ids[k]);
        if (it == index.end())
            throw ValidationError("posterior table: unknown subject " + fit.posterior_ids[k]);
        const SubjectRecord& rec = cohort.records[it->second];
        out += rec.id;
        out += ',';
        out += format_double(rec.end_ga);
        out += ',';
        out += format_double(fit.posterior_missing[k]);
        out += ',';
        out += std::to_string(rec.exposed);
        out += '\n';
    }
    return out;
}

std::string pe_membership_csv(const Cohort& cohort, const PeFit& fit) {
    if (fit.subject_ids.size() != cohort.size())
        throw ValidationError("membership table: fit does not match the cohort");

    std::string out = "subject_id,end_ga,exposed,group,m_ss,m_ns,m_nn,p_defect\n";
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const SubjectRecord& rec = cohort.records[i];
        out += rec.id;
        out += ',';
        out += format_double(rec.end_ga);
        out += ',';
        out += std::to_string(rec.exposed);
        out += ',';
        out += fit.group_labels[i];
        for (double m : fit.membership[i]) {
            out += ',';
            out += format_double(m);
        }
        out += ',';
        out += format_double(fit.defect_posterior[i]);
        out += '\n';
    }
    return out;
}

ordered_json run_manifest(const std::string& subcommand, const ordered_json& config,
                          const std::vector<std::string>& artifacts) {
    ordered_json j;
    j["tool"] = "terata";
    j["version"] = kToolVersion;
    j["format"] = kReportFormatVersion;
    j["subcommand"] = subcommand;
    j["config"] = config;
    j["artifacts"] = artifacts;
    return j;
}

void write_artifact(const std::string& path, const std::string& content, bool force) {
    if (!force && std::filesystem::exists(path))
        throw ValidationError("refusing to overwrite " + path + " (pass --force)");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open " + path + " for writing");
    out << content;
    if (!out) throw ValidationError("write failed for " + path);
}

}  // namespace terata
