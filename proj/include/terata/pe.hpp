#pragma once

#include <Eigen/Dense>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "terata/ate.hpp"
#include "terata/cohort.hpp"
#include "terata/hazard.hpp"
#include "terata/propensity.hpp"

namespace terata {

// Principal strata with respect to pregnancy survival under each exposure:
// SS survives either way, NS survives only when exposed, NN survives neither.
// Monotonicity removes the fourth stratum.
enum class Stratum { ss = 0, ns = 1, nn = 2 };

const char* stratum_label(Stratum g);

// gamma_ss is identically 0 (SS is the reference stratum). alpha pairs give
// per-stratum defect models P(Y(d)=1 | G=g) = expit(alpha0[g] + alphaD[g] d),
// indexed by static_cast<int>(Stratum). The hazard linear predictor is
// beta0_ns (1-d) 1(g=NS) + betaD_nn d 1(g=NN) + beta_y y over one shared grid.
struct PeTheta {
    double gamma_ns = 0.0, gamma_nn = 0.0;
    std::array<double, 3> alpha0{0.0, 0.0, 0.0};
    std::array<double, 3> alphaD{0.0, 0.0, 0.0};
    double beta0_ns = 0.0, betaD_nn = 0.0, beta_y = 0.0;
    HazardGrid grid;
};

// Sensitivity offsets: a fixed alpha coordinate is held at the given value
// and skipped by the S-step. The SS pair is always free. The gamma pins are
// an extension used to collapse the model onto a single stratum.
struct OffsetSpec {
    std::optional<double> alpha0_ns, alphaD_ns, alpha0_nn, alphaD_nn;
    std::optional<double> gamma_ns, gamma_nn;
};

std::array<double, 3> strata_probs(double gamma_ns, double gamma_nn);

double pe_outcome_prob(Stratum g, int d, const PeTheta& theta);

// Cured combinations have no failure process at all.
bool pe_cured(Stratum g, int d);

// P(T > t | Y=y, G=g, D=d) for susceptible combinations; cured input is a
// contract violation.
double pe_survival(double t, int d, int y, Stratum g, const PeTheta& theta);

std::vector<Stratum> consistent_strata(const ObservedGroup& group);

// Posterior over (stratum, defect), zero outside the consistent support.
struct LatentPosterior {
    std::array<std::array<double, 2>, 3> p{};  // [stratum][y]

    double stratum_mass(Stratum g) const {
        return p[static_cast<int>(g)][0] + p[static_cast<int>(g)][1];
    }
    double defect_mass() const { return p[0][1] + p[1][1] + p[2][1]; }
};

LatentPosterior latent_posterior(const SubjectRecord& record, const PeTheta& theta);

// Weighted observed-data log-likelihood: per subject the consistent-combo
// mixture divided by the subject-level enrollment normalizer.
double pe_observed_loglik(const Cohort& cohort, const WeightVector& weights,
                          const PeTheta& theta);

struct LogOrM {
    double estimate = 0.0;
    double se = 0.0;
    Eigen::Vector2d gradient{0.0, 0.0};  // d(estimate)/d(gamma_ns, gamma_nn)
};

// Causal log odds ratio of exposure on pregnancy loss under monotonicity:
// log OR_M = gamma_nn - log(e^gamma_ns + e^gamma_nn) - log(1 + e^gamma_ns).
// cov is the covariance of (gamma_ns, gamma_nn); SE by the delta method.
LogOrM log_or_m(double gamma_ns, double gamma_nn, const Eigen::Matrix2d& cov);

struct PeFit {
    PeTheta theta;
    int iterations = 0;
    std::vector<double> loglik_trace;
    bool converged = false;
    bool ascent_ok = true;
    std::array<double, 3> strata{};  // fitted P(SS), P(NS), P(NN)
    double log_or_est = 0.0;
    std::vector<std::string> free_names;  // S-step coordinates actually estimated
    // per-subject posterior summaries, cohort order
    std::vector<std::string> subject_ids;
    std::vector<std::string> group_labels;
    std::vector<std::array<double, 3>> membership;
    std::vector<double> defect_posterior;  // observed value when not missing
    std::vector<std::string> warnings;
};

PeFit fit_pe(const Cohort& cohort, const WeightVector& weights, const OffsetSpec& offsets,
             const EsOptions& opts = {}, const PeTheta* start = nullptr);

struct PeBootstrap {
    std::vector<ParamSummary> params;        // free parameters, fit order
    std::vector<std::vector<double>> draws;  // converged replicates only
    Eigen::Matrix2d gamma_cov;               // bootstrap cov of (gamma_ns, gamma_nn)
    LogOrM log_or;                           // delta-method SE from gamma_cov
    double log_or_p = 1.0;
    int requested = 0;
    int dropped = 0;
};

PeBootstrap bootstrap_pe(const Cohort& cohort, const PeFit& full_fit,
                         const OffsetSpec& offsets, const BootstrapOptions& opts);

}  // namespace terata
