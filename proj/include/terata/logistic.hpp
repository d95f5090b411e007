#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "terata/errors.hpp"

namespace terata {

struct LogisticOptions {
    int max_iter = 100;
    double tol = 1e-10;  // relative coefficient change
    // Any coefficient walking past this bound is treated as separation; on the
    // logit scale 30 is an odds ratio beyond 1e13.
    double separation_bound = 30.0;
};

struct LogisticFit {
    Eigen::VectorXd coef;
    Eigen::MatrixXd info;  // X' W X at the optimum, W = w p (1-p)
    int iterations = 0;
    double loglik = 0.0;
    bool converged = false;
};

// Weighted Bernoulli log-likelihood maximized by Newton steps (IRLS).
// `y` may be fractional in [0, 1]: EM S-steps hand in expected outcomes.
// `offset` is added to the linear predictor and not estimated.
// Throws FitError naming a column on separation or rank deficiency.
LogisticFit fit_logistic_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& w, const Eigen::VectorXd& offset,
                              const LogisticOptions& opts = {},
                              const std::vector<std::string>& column_names = {});

LogisticFit fit_logistic_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const LogisticOptions& opts = {},
                              const std::vector<std::string>& column_names = {});

// log P(Y=1) and log P(Y=0) under a logit model, stable for large |lp|.
double log_expit(double lp);

double logistic_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& w, const Eigen::VectorXd& offset,
                       const Eigen::VectorXd& coef);

}  // namespace terata
