#pragma once

#include <Eigen/Dense>
#include <vector>

#include "terata/errors.hpp"

namespace terata {

// One covariate class of the weighted discrete-hazard likelihood. Subjects
// sharing a covariate vector are aggregated: per grid point k the class
// carries total event weight and the total weight of censored members still
// at risk (end time >= t_k). Expected-data weights from an E-step land here
// unchanged, so a class may mix many subjects' fractional contributions.
struct CoxClass {
    Eigen::VectorXd x;
    double offset = 0.0;
    std::vector<double> event_w;          // length K
    std::vector<double> censored_atrisk;  // length K

    double total_events() const;
};

struct CoxOptions {
    double tol = 1e-9;
    int max_iter = 200;
};

struct CoxMstep {
    Eigen::VectorXd beta;
    std::vector<double> lambda;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Weighted complete-data log-likelihood
//   sum_c sum_k event_w[c][k] (log lambda_k + eta_c) - sum_j lambda_j sum_c e^{eta_c} R_{c,j}
// where R_{c,j} aggregates event weight at t_k, k >= j, plus censored weight
// at risk at t_j.
double cox_objective(const std::vector<CoxClass>& classes, const std::vector<double>& lambda,
                     const Eigen::VectorXd& beta);

// Maximizes cox_objective by alternating closed-form Breslow mass updates
// with damped Newton steps in beta. Covariate components with no variation
// across weighted classes are left at their initial value. Throws FitError
// when there are no events or the iteration cap is hit.
CoxMstep weighted_cox_mstep(const std::vector<CoxClass>& classes, std::size_t K,
                            const Eigen::VectorXd& beta0, const CoxOptions& opts = {});

}  // namespace terata
