#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "terata/cohort.hpp"
#include "terata/rng.hpp"

namespace terata {

// Continuous-time piecewise-constant hazard on [cuts.front(), cuts.back()).
// A subject surviving the whole support never fails.
struct PiecewiseHazard {
    std::vector<double> cuts;   // ascending interval boundaries
    std::vector<double> rates;  // one per interval, nonnegative

    double cum(double t) const;
    // inversion sampler; loghr shifts the rate multiplicatively
    double draw(Rng& rng, double loghr) const;
};

// Strata-model generative block. Susceptible pregnancies (NN either arm, NS
// unexposed) fail from `hazard`, which should be strong enough that failure
// before the delivery horizon is near certain; cured pregnancies never fail.
struct PeDgp {
    double gamma_ns = 0.0, gamma_nn = 0.0;
    std::array<double, 3> alpha0{0.0, 0.0, 0.0};
    std::array<double, 3> alphaD{0.0, 0.0, 0.0};
    double beta0_ns = 0.0, betaD_nn = 0.0, beta_y = 0.0;
    PiecewiseHazard hazard;
};

// Data-generating process: covariates confound exposure only, the structural
// defect and failure models are marginal, enrollment truncates from the left
// by rejection, and delivery / loss to follow-up / elective termination
// censor from the right.
struct DgpParams {
    // covariates: asthma Bernoulli, height Normal, referral categorical
    double p_asthma = 0.156;
    double height_mean = 165.6, height_sd = 7.0;
    std::array<double, 3> p_referral{0.184, 0.508, 0.308};

    // exposure logit: prop0 + asthma prop_asthma + (height - height_mean)
    // prop_height + 1(referral=II) prop_ref2 + 1(referral=III) prop_ref3
    double prop0 = 0.0;
    double prop_asthma = 0.0, prop_height = 0.0, prop_ref2 = 0.0, prop_ref3 = 0.0;

    // structural P(Y(d)=1) = expit(alpha0 + alpha_d d); failure log hazard
    // ratio beta_d d + beta_y y on the baseline below
    double alpha0 = 0.0, alpha_d = 0.0;
    double beta_d = 0.0, beta_y = 0.0;
    PiecewiseHazard hazard;

    // enrollment Q ~ q_lo + (q_hi - q_lo) Beta(q_beta_a, q_beta_b)
    double q_lo = 2.0, q_hi = 16.0;
    double q_beta_a = 2.0, q_beta_b = 4.0;

    // delivery N(deliv_mean, deliv_sd) floored at deliv_min; LTFU constant
    // hazard from enrollment; elective termination with probability p_tab at
    // a uniform time in (Q, tab_by)
    double deliv_mean = 39.4, deliv_sd = 1.3, deliv_min = 20.0;
    double ltfu_rate = 0.0;
    double p_tab = 0.0, tab_by = 20.0;

    // defect missing at failure (MNAR through event status only)
    double miss_sab = 0.95;

    std::optional<PeDgp> pe;  // engaged: strata block replaces the ATE failure model

    void validate() const;
};

// Constants tuned once against the study-shaped fixture margins (arm sizes,
// outcomes by arm) and the published point estimates; documented, not fitted.
DgpParams table5_defaults();
// table5_defaults with the strata block engaged and a failure process strong
// enough that susceptible pregnancies essentially never reach delivery.
DgpParams pe_defaults();

DgpParams dgp_from_json(const std::string& text);
std::string dgp_to_json(const DgpParams& params);

// n accepted subjects; rejection realizes left truncation. Throws when the
// acceptance rate degenerates below 1%.
Cohort simulate_cohort(const DgpParams& params, std::size_t n, std::uint64_t seed);

struct OracleTruth {
    double alpha_d = 0.0;  // exact by construction (SS stratum in PE mode)
    double or_y = 1.0;
    double log_or_m = 0.0;     // causal log odds ratio of exposure on failure
    double log_or_m_se = 0.0;  // Monte-Carlo SE, zero when closed form
    std::array<double, 3> strata{1.0, 0.0, 0.0};
};

// Closed form in PE mode. ATE mode integrates P(T(d) < delivery) by
// Monte Carlo with `draws` samples per arm.
OracleTruth oracle_truth(const DgpParams& params, std::uint64_t seed = 1,
                         std::size_t draws = 10000000);

}  // namespace terata
