#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "terata/cohort.hpp"
#include "terata/hazard.hpp"
#include "terata/propensity.hpp"

namespace terata {

// theta for the treatment-effect model: structural logistic
// P(Y=1|D) = expit(alpha0 + alpha_d D) and discrete-baseline PH hazard with
// linear predictor beta_d D + beta_y Y.
struct AteTheta {
    double alpha0 = 0.0;
    double alpha_d = 0.0;
    double beta_d = 0.0;
    double beta_y = 0.0;
    HazardGrid grid;

    double pi(int d) const;
    double linpred(int d, int y) const;
};

struct EsOptions {
    double tol = 1e-5;   // L2 change of the full parameter vector, masses included
    int max_iter = 500;
    std::optional<double> beta_y_fixed;  // sensitivity sweep freezes beta_y
    bool verbose = false;
};

// Expected-data weights, one E-step. Subjects keep their index order.
// The event/ghost decomposition is stored implicitly: w_f(i,k,y) assembles
//   w_i r_i(y) [Delta_i 1(X_i=t_k)] + ghost_scale_y[i] f(t_k | D_i, y) 1(t_k < Q_i)
// from per-class mass vectors, so the full n-by-K table never materializes.
struct EStepWeights {
    std::vector<double> w_pi1, w_pi0;  // w_i r_i(y); sums to w_i
    std::vector<double> w_s1, w_s0;    // censored survival weight w_i (1-Delta) r_i(y)
    std::vector<double> posterior1;    // r_i(1) = P(Y_i=1 | observed)
    std::vector<double> ghost_scale1, ghost_scale0;  // w_i r_i(y) / (1 - F_i(y))
    std::vector<int> event_k;  // grid index of an event, -1 otherwise
    std::vector<int> q_cut;    // grid points strictly before Q_i
    std::vector<int> x_cut;    // grid points at or before X_i (at-risk count)
    std::vector<int> d;        // exposure copy, for the accessor
    std::array<std::array<std::vector<double>, 2>, 2> f_class;  // f(t_k | d, y)

    double w_f(std::size_t i, std::size_t k, int y) const;
};

EStepWeights e_step(const Cohort& cohort, const WeightVector& weights, const AteTheta& theta);

// P(Y=1 | observed data) for a missing-defect subject under theta.
// Event subjects weigh the two defect states by the event mass at X, censored
// subjects by survival past X; both divide by the enrollment normalizer.
double posterior_missing_defect(const SubjectRecord& record, const AteTheta& theta);

// Weighted observed-data log-likelihood that the ES iteration ascends.
double observed_loglik(const Cohort& cohort, const WeightVector& weights,
                       const AteTheta& theta);

struct AteFit {
    AteTheta theta;
    int iterations = 0;
    std::vector<double> loglik_trace;  // value at init, then after each S-step
    bool converged = false;
    bool ascent_ok = true;  // trace nondecreasing within 1e-8
    // P(Y=1|observed) per missing-defect subject, in cohort order
    std::vector<std::string> posterior_ids;
    std::vector<double> posterior_missing;
    std::vector<std::string> warnings;
};

AteFit fit_ate(const Cohort& cohort, const WeightVector& weights, const EsOptions& opts = {});

struct BootstrapOptions {
    int B = 500;
    std::uint64_t seed = 1;
    int jobs = 0;  // 0 = hardware concurrency
    double drop_limit = 0.2;
    EsOptions es;
};

struct ParamSummary {
    std::string name;
    double estimate = 0.0;  // full-data point estimate
    double se = 0.0;        // bootstrap SD
    double ci_lo = 0.0, ci_hi = 0.0;  // percentile 95% CI
    double p = 1.0;         // Wald on the log scale with bootstrap SD
};

struct AteBootstrap {
    std::vector<ParamSummary> params;  // alpha0, alpha_d, beta_d, beta_y
    std::vector<std::array<double, 4>> draws;  // converged replicates only
    int requested = 0;
    int dropped = 0;
};

// Resamples subjects with replacement; the propensity model is refit inside
// every replicate so weight uncertainty propagates. Deterministic for a given
// seed at any worker count. Throws FitError when too many replicates fail.
AteBootstrap bootstrap_ate(const Cohort& cohort, const AteFit& full_fit,
                           const BootstrapOptions& opts);

// Interpolated percentile (order statistics, linear between ranks).
double percentile(std::vector<double> draws, double prob);

}  // namespace terata
