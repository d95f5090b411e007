#include "terata/propensity.hpp"

#include <cmath>

#include "terata/csv.hpp"
#include "terata/num.hpp"

namespace terata {

PropensityFit fit_propensity(const Cohort& cohort) {
    DesignMatrix dm = build_design(cohort);
    const auto n = static_cast<Eigen::Index>(cohort.size());
    const auto p = static_cast<Eigen::Index>(dm.cols());
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) X(i, j) = dm.rows[i][j];
        y[i] = cohort.records[i].exposed;
    }

    LogisticFit lf = fit_logistic_irls(X, y, LogisticOptions{}, dm.column_names);

    PropensityFit fit;
    fit.column_names = dm.column_names;
    fit.coefficients.assign(lf.coef.data(), lf.coef.data() + lf.coef.size());
    fit.iterations = lf.iterations;
    fit.converged = lf.converged;
    fit.fitted_scores.resize(cohort.size());
    Eigen::VectorXd lp = X * lf.coef;
    for (Eigen::Index i = 0; i < n; ++i) {
        double s = expit(lp[i]);
        if (s < kScoreClip || s > 1.0 - kScoreClip) {
            s = std::min(std::max(s, kScoreClip), 1.0 - kScoreClip);
            fit.clipped++;
        }
        fit.fitted_scores[i] = s;
    }
    return fit;
}

WeightVector stabilized_weights(const Cohort& cohort, const PropensityFit& fit) {
    if (fit.fitted_scores.size() != cohort.size())
        throw ValidationError("stabilized_weights: score/record count mismatch");
    int exposed = 0;
    for (const auto& r : cohort.records) exposed += r.exposed;

    WeightVector wv;
    wv.p_exposed = cohort.size() ? static_cast<double>(exposed) / cohort.size() : 0.0;
    wv.w.resize(cohort.size());
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        double s = fit.fitted_scores[i];
        if (!(s > 0.0 && s < 1.0))
            throw ValidationError("stabilized_weights: score outside (0,1) for " +
                                  cohort.records[i].id);
        wv.w[i] = cohort.records[i].exposed ? wv.p_exposed / s
                                            : (1.0 - wv.p_exposed) / (1.0 - s);
    }
    return wv;
}

namespace {

struct ArmMoments {
    double sw = 0.0, sx = 0.0, sxx = 0.0;

    void add(double w, double x) {
        sw += w;
        sx += w * x;
        sxx += w * x * x;
    }
    double mean() const { return sx / sw; }
    double var() const {
        double m = mean();
        return sxx / sw - m * m;
    }
};

double smd(const ArmMoments& a1, const ArmMoments& a0) {
    double pooled = 0.5 * (a1.var() + a0.var());
    if (pooled <= 0.0) return std::nan("");
    return (a1.mean() - a0.mean()) / std::sqrt(pooled);
}

}  // namespace

BalanceReport balance_table(const Cohort& cohort, const WeightVector& weights,
                            const PropensityFit& fit) {
    DesignMatrix dm = build_design(cohort);
    BalanceReport report;
    report.clipped = fit.clipped;
    // column 0 is the intercept
    for (std::size_t j = 1; j < dm.cols(); ++j) {
        ArmMoments u1, u0, w1, w0;
        for (std::size_t i = 0; i < cohort.size(); ++i) {
            double x = dm.rows[i][j];
            if (cohort.records[i].exposed) {
                u1.add(1.0, x);
                w1.add(weights.w[i], x);
            } else {
                u0.add(1.0, x);
                w0.add(weights.w[i], x);
            }
        }
        report.rows.push_back({dm.column_names[j], smd(u1, u0), smd(w1, w0)});
    }
    return report;
}

std::string BalanceReport::to_csv() const {
    CsvTable table;
    table.header = {"covariate", "smd_unweighted", "smd_weighted", "clipped_count"};
    for (const auto& row : rows)
        table.rows.push_back({row.covariate, format_double(row.smd_unweighted),
                              format_double(row.smd_weighted), std::to_string(clipped)});
    return write_csv(table);
}

}  // namespace terata
