#include "terata/sensitivity.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "terata/csv.hpp"
#include "terata/errors.hpp"
#include "terata/num.hpp"
#include "terata/parallel.hpp"
#include "terata/rng.hpp"

namespace terata {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// bootstrap seed streams 0 and 1 belong to bootstrap_ate and bootstrap_pe
constexpr std::uint64_t kSweepStream = 2;
constexpr std::uint64_t kGridStream = 3;

const ParamSummary* find_param(const std::vector<ParamSummary>& params,
                               const std::string& name) {
    for (const auto& p : params)
        if (p.name == name) return &p;
    return nullptr;
}

std::string csv_safe(std::string s) {
    for (char& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    return s;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open output file: " + path);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.flush();
    if (!out) throw ValidationError("write failed: " + path);
}

}  // namespace

std::vector<double> GridAxis::values() const {
    if (!(step > 0.0)) throw ValidationError("axis " + name + ": step must be positive");
    if (hi < lo) throw ValidationError("axis " + name + ": hi is below lo");
    std::size_t n = static_cast<std::size_t>(std::floor((hi - lo) / step + 0.5)) + 1;
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = lo + step * static_cast<double>(i);
    // rounding keeps a commensurate endpoint despite representation drift;
    // anything genuinely past hi is dropped again here
    double tol = 1e-9 * (1.0 + std::fabs(hi));
    while (v.size() > 1 && v.back() > hi + tol) v.pop_back();
    return v;
}

std::size_t GridAxis::count() const { return values().size(); }

GridAxis parse_axis(const std::string& text) {
    auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ValidationError("axis spec needs the form name=lo:hi:step: " + text);
    GridAxis axis;
    axis.name = text.substr(0, eq);
    std::string rest = text.substr(eq + 1);
    auto c1 = rest.find(':');
    auto c2 = c1 == std::string::npos ? std::string::npos : rest.find(':', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
        throw ValidationError("axis spec needs the form name=lo:hi:step: " + text);
    if (!parse_double(rest.substr(0, c1), axis.lo) ||
        !parse_double(rest.substr(c1 + 1, c2 - c1 - 1), axis.hi) ||
        !parse_double(rest.substr(c2 + 1), axis.step))
        throw ValidationError("axis spec has an unreadable number: " + text);
    axis.count();  // validates step and ordering
    return axis;
}

SensitivityGrid ate_beta_y_sweep(const Cohort& cohort, const WeightVector& weights,
                                 const SweepOptions& opts) {
    SensitivityGrid grid;
    grid.axes = {opts.axis};
    grid.metric_names = {"alpha0",     "alpha_d",    "alpha_d_se", "alpha_d_lo",
                         "alpha_d_hi", "alpha_d_p",  "beta_d",     "beta_d_se",
                         "beta_d_lo",  "beta_d_hi",  "beta_d_p",   "loglik"};
    grid.table_names = {"posterior_missing"};
    for (const auto& rec : cohort.records)
        if (rec.event() && !rec.defect_observed()) grid.table_ids.push_back(rec.id);

    std::vector<double> vals = opts.axis.values();
    grid.cells.resize(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) {
        SensitivityCell& cell = grid.cells[i];
        cell.coords = {vals[i]};
        cell.metrics.assign(grid.metric_names.size(), kNan);
        cell.tables.assign(1, std::vector<double>(grid.table_ids.size(), kNan));

        EsOptions es = opts.es;
        es.beta_y_fixed = vals[i];
        AteFit fit;
        try {
            fit = fit_ate(cohort, weights, es);
        } catch (const FitError& e) {
            cell.error = e.what();
            continue;
        }
        cell.converged = fit.converged;
        cell.iterations = fit.iterations;
        if (!fit.converged) cell.error = "no convergence";
        cell.metrics[0] = fit.theta.alpha0;
        cell.metrics[1] = fit.theta.alpha_d;
        cell.metrics[6] = fit.theta.beta_d;
        cell.metrics[11] = fit.loglik_trace.empty() ? kNan : fit.loglik_trace.back();

        std::size_t t = 0;
        for (std::size_t j = 0; j < fit.posterior_ids.size() && t < grid.table_ids.size();
             ++j)
            if (fit.posterior_ids[j] == grid.table_ids[t])
                cell.tables[0][t++] = fit.posterior_missing[j];

        if (opts.boot_B > 0 && fit.converged) {
            BootstrapOptions bo;
            bo.B = opts.boot_B;
            bo.seed = derive_seed(opts.seed, kSweepStream, i);
            bo.jobs = opts.jobs;
            bo.es = es;
            try {
                AteBootstrap boot = bootstrap_ate(cohort, fit, bo);
                if (const ParamSummary* p = find_param(boot.params, "alpha_d")) {
                    cell.metrics[2] = p->se;
                    cell.metrics[3] = p->ci_lo;
                    cell.metrics[4] = p->ci_hi;
                    cell.metrics[5] = p->p;
                }
                if (const ParamSummary* p = find_param(boot.params, "beta_d")) {
                    cell.metrics[7] = p->se;
                    cell.metrics[8] = p->ci_lo;
                    cell.metrics[9] = p->ci_hi;
                    cell.metrics[10] = p->p;
                }
            } catch (const FitError& e) {
                cell.error = e.what();
            }
        }
    }
    return grid;
}

std::vector<GridAxis> default_pe_axes() {
    return {{"alpha0_ns", -2.0, 0.0, 0.5},
            {"alpha0_nn", -2.0, 0.0, 0.5},
            {"alphaD_nn", -2.0, 2.0, 0.5}};
}

namespace {

void apply_axis(OffsetSpec& off, const std::string& name, double v) {
    if (name == "alpha0_ns")
        off.alpha0_ns = v;
    else if (name == "alphaD_ns")
        off.alphaD_ns = v;
    else if (name == "alpha0_nn")
        off.alpha0_nn = v;
    else if (name == "alphaD_nn")
        off.alphaD_nn = v;
    else
        throw ValidationError("unknown offset axis: " + name);
}

}  // namespace

SensitivityGrid pe_offset_grid(const Cohort& cohort, const WeightVector& weights,
                               const OffsetSpec& base, const PeGridOptions& opts) {
    if (opts.axes.empty()) throw ValidationError("offset grid needs at least one axis");
    SensitivityGrid grid;
    grid.axes = opts.axes;
    grid.metric_names = {"alpha0_ss", "alphaD_ss", "alphaD_ss_se", "alphaD_ss_lo",
                         "alphaD_ss_hi", "alphaD_ss_p", "gamma_ns", "gamma_nn",
                         "p_ss", "p_ns", "p_nn", "log_or", "log_or_se", "log_or_p",
                         "beta0_ns", "betaD_nn", "beta_y", "loglik"};
    grid.table_names = {"m_ss", "m_ns", "m_nn", "p_defect"};
    for (const auto& rec : cohort.records) grid.table_ids.push_back(rec.id);

    std::vector<std::vector<double>> vals;
    std::size_t n_cells = 1;
    for (const auto& axis : opts.axes) {
        vals.push_back(axis.values());
        n_cells *= vals.back().size();
    }
    grid.cells.resize(n_cells);

    // OffsetSpec axes validate eagerly so a bad name fails before any fitting
    {
        OffsetSpec probe = base;
        for (std::size_t a = 0; a < opts.axes.size(); ++a)
            apply_axis(probe, opts.axes[a].name, vals[a][0]);
    }

    std::size_t chain_len = vals.back().size();
    std::size_t n_chains = n_cells / chain_len;
    unsigned jobs = opts.jobs > 0 ? static_cast<unsigned>(opts.jobs) : 0;

    parallel_for(n_chains, jobs, [&](std::size_t chain) {
        PeTheta warm;
        bool have_warm = false;
        for (std::size_t j = 0; j < chain_len; ++j) {
            std::size_t idx = chain * chain_len + j;
            SensitivityCell& cell = grid.cells[idx];

            cell.coords.resize(opts.axes.size());
            std::size_t rem = idx;
            for (std::size_t a = opts.axes.size(); a-- > 0;) {
                cell.coords[a] = vals[a][rem % vals[a].size()];
                rem /= vals[a].size();
            }
            cell.metrics.assign(grid.metric_names.size(), kNan);
            cell.tables.assign(grid.table_names.size(),
                               std::vector<double>(grid.table_ids.size(), kNan));

            OffsetSpec off = base;
            for (std::size_t a = 0; a < opts.axes.size(); ++a)
                apply_axis(off, opts.axes[a].name, cell.coords[a]);

            PeFit fit;
            try {
                fit = fit_pe(cohort, weights, off, opts.es, have_warm ? &warm : nullptr);
            } catch (const FitError& e) {
                cell.error = e.what();
                continue;
            }
            cell.converged = fit.converged;
            cell.iterations = fit.iterations;
            if (!fit.converged) cell.error = "no convergence";
            if (fit.converged) {
                warm = fit.theta;
                have_warm = true;
            }
            cell.metrics[0] = fit.theta.alpha0[0];
            cell.metrics[1] = fit.theta.alphaD[0];
            cell.metrics[6] = fit.theta.gamma_ns;
            cell.metrics[7] = fit.theta.gamma_nn;
            cell.metrics[8] = fit.strata[0];
            cell.metrics[9] = fit.strata[1];
            cell.metrics[10] = fit.strata[2];
            cell.metrics[11] = fit.log_or_est;
            cell.metrics[14] = fit.theta.beta0_ns;
            cell.metrics[15] = fit.theta.betaD_nn;
            cell.metrics[16] = fit.theta.beta_y;
            cell.metrics[17] = fit.loglik_trace.empty() ? kNan : fit.loglik_trace.back();
            for (std::size_t s = 0; s < fit.membership.size(); ++s) {
                cell.tables[0][s] = fit.membership[s][0];
                cell.tables[1][s] = fit.membership[s][1];
                cell.tables[2][s] = fit.membership[s][2];
                cell.tables[3][s] = fit.defect_posterior[s];
            }

            if (opts.boot_B > 0 && fit.converged) {
                BootstrapOptions bo;
                bo.B = opts.boot_B;
                bo.seed = derive_seed(opts.seed, kGridStream, idx);
                bo.jobs = 1;  // chains already occupy the workers
                bo.es = opts.es;
                try {
                    PeBootstrap boot = bootstrap_pe(cohort, fit, off, bo);
                    if (const ParamSummary* p = find_param(boot.params, "alphaD_SS")) {
                        cell.metrics[2] = p->se;
                        cell.metrics[3] = p->ci_lo;
                        cell.metrics[4] = p->ci_hi;
                        cell.metrics[5] = p->p;
                    }
                    cell.metrics[12] = boot.log_or.se;
                    cell.metrics[13] = boot.log_or_p;
                } catch (const FitError& e) {
                    cell.error = e.what();
                }
            }
        }
    });
    return grid;
}

std::vector<std::string> export_grid(const SensitivityGrid& grid, const std::string& stem) {
    CsvTable cells;
    for (const auto& axis : grid.axes) cells.header.push_back(axis.name);
    cells.header.insert(cells.header.end(), {"converged", "iterations", "error"});
    for (const auto& m : grid.metric_names) cells.header.push_back(m);
    for (const auto& cell : grid.cells) {
        std::vector<std::string> row;
        row.reserve(cells.header.size());
        for (double c : cell.coords) row.push_back(format_double(c));
        row.push_back(cell.converged ? "1" : "0");
        row.push_back(std::to_string(cell.iterations));
        row.push_back(csv_safe(cell.error));
        for (double m : cell.metrics) row.push_back(format_double(m));
        cells.rows.push_back(std::move(row));
    }
    std::string cells_path = stem + ".csv";
    write_text_file(cells_path, write_csv(cells));
    std::vector<std::string> written{cells_path};

    if (!grid.table_names.empty()) {
        CsvTable post;
        for (const auto& axis : grid.axes) post.header.push_back(axis.name);
        post.header.push_back("subject_id");
        for (const auto& t : grid.table_names) post.header.push_back(t);
        for (const auto& cell : grid.cells) {
            for (std::size_t s = 0; s < grid.table_ids.size(); ++s) {
                std::vector<std::string> row;
                row.reserve(post.header.size());
                for (double c : cell.coords) row.push_back(format_double(c));
                row.push_back(grid.table_ids[s]);
                for (const auto& table : cell.tables) row.push_back(format_double(table[s]));
                post.rows.push_back(std::move(row));
            }
        }
        std::string post_path = stem + "_posteriors.csv";
        write_text_file(post_path, write_csv(post));
        written.push_back(post_path);
    }

    nlohmann::ordered_json manifest;
    manifest["axes"] = nlohmann::ordered_json::array();
    for (const auto& axis : grid.axes)
        manifest["axes"].push_back({{"name", axis.name},
                                    {"lo", axis.lo},
                                    {"hi", axis.hi},
                                    {"step", axis.step},
                                    {"count", axis.count()}});
    std::size_t converged = 0;
    for (const auto& cell : grid.cells) converged += cell.converged ? 1 : 0;
    manifest["cell_count"] = grid.cells.size();
    manifest["converged_cells"] = converged;
    manifest["metric_names"] = grid.metric_names;
    manifest["table_names"] = grid.table_names;
    manifest["subject_count"] = grid.table_ids.size();
    nlohmann::ordered_json files;
    files["cells"] = cells_path;
    if (written.size() > 1) files["posteriors"] = written[1];
    manifest["files"] = files;
    std::string manifest_path = stem + "_manifest.json";
    write_text_file(manifest_path, manifest.dump(2) + "\n");
    written.push_back(manifest_path);
    return written;
}

}  // namespace terata
