#pragma once

#include <string>
#include <vector>

#include "terata/cohort.hpp"
#include "terata/logistic.hpp"

namespace terata {

// Numerical floor enforcing positivity: fitted scores live in
// [kScoreClip, 1 - kScoreClip].
inline constexpr double kScoreClip = 1e-3;

struct PropensityFit {
    std::vector<double> coefficients;
    std::vector<std::string> column_names;
    std::vector<double> fitted_scores;  // clipped
    int clipped = 0;
    int iterations = 0;
    bool converged = false;
};

// Logistic propensity model on the one-hot cohort design (intercept first).
PropensityFit fit_propensity(const Cohort& cohort);

struct WeightVector {
    std::vector<double> w;
    double p_exposed = 0.0;  // empirical arm fraction used as the numerator
};

// Stabilized inverse-probability weights P(D=d) / P(D=d | V).
WeightVector stabilized_weights(const Cohort& cohort, const PropensityFit& fit);

struct BalanceRow {
    std::string covariate;
    double smd_unweighted = 0.0;  // NaN when the pooled variance is zero
    double smd_weighted = 0.0;
};

struct BalanceReport {
    std::vector<BalanceRow> rows;
    int clipped = 0;

    std::string to_csv() const;
};

BalanceReport balance_table(const Cohort& cohort, const WeightVector& weights,
                            const PropensityFit& fit);

}  // namespace terata
