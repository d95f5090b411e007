#include "terata/logistic.hpp"

#include <cmath>

#include "terata/num.hpp"

namespace terata {

double log_expit(double lp) {
    if (lp > 0.0) return -std::log1p(std::exp(-lp));
    return lp - std::log1p(std::exp(lp));
}

double logistic_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const Eigen::VectorXd& w, const Eigen::VectorXd& offset,
                       const Eigen::VectorXd& coef) {
    Eigen::VectorXd lp = X * coef + offset;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (w[i] == 0.0) continue;
        // y log p + (1-y) log(1-p), written via log_expit for stability
        ll += w[i] * (y[i] * log_expit(lp[i]) + (1.0 - y[i]) * log_expit(-lp[i]));
    }
    return ll;
}

namespace {

std::string column_label(const std::vector<std::string>& names, Eigen::Index j) {
    if (j < static_cast<Eigen::Index>(names.size())) return names[j];
    return "column " + std::to_string(j);
}

}  // namespace

LogisticFit fit_logistic_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& w, const Eigen::VectorXd& offset,
                              const LogisticOptions& opts,
                              const std::vector<std::string>& column_names) {
    const Eigen::Index n = X.rows(), p = X.cols();
    if (y.size() != n || w.size() != n || offset.size() != n)
        throw ValidationError("logistic fit: input length mismatch");

    LogisticFit fit;
    fit.coef = Eigen::VectorXd::Zero(p);
    fit.loglik = logistic_loglik(X, y, w, offset, fit.coef);

    double last_change = 1.0;
    for (int it = 1; it <= opts.max_iter; ++it) {
        Eigen::VectorXd lp = X * fit.coef + offset;
        Eigen::VectorXd prob = lp.unaryExpr([](double v) { return expit(v); });
        Eigen::VectorXd wgt = (w.array() * prob.array() * (1.0 - prob.array())).matrix();

        Eigen::MatrixXd info = X.transpose() * wgt.asDiagonal() * X;
        Eigen::VectorXd score = X.transpose() * (w.array() * (y - prob).array()).matrix();

        if (last_change < opts.tol && score.norm() < 1e-8) {
            fit.converged = true;
            break;
        }

        Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
        if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
            ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
            // Either the design lost rank or probabilities collapsed to 0/1
            // everywhere; both read as a non-identified column.
            Eigen::Index j;
            info.diagonal().minCoeff(&j);
            throw FitError("logistic fit: design is rank deficient or separated at " +
                           column_label(column_names, j));
        }
        Eigen::VectorXd step = ldlt.solve(score);

        // slack absorbs rounding noise in the loglik sum near the optimum
        const double slack = 1e-10 * (1.0 + std::fabs(fit.loglik));
        double scale = 1.0;
        Eigen::VectorXd trial;
        double trial_ll = 0.0;
        for (int half = 0; half < 40; ++half) {
            trial = fit.coef + scale * step;
            trial_ll = logistic_loglik(X, y, w, offset, trial);
            if (trial_ll >= fit.loglik - slack) break;
            scale *= 0.5;
        }

        double denom = std::max(1.0, fit.coef.norm());
        last_change = (trial - fit.coef).norm() / denom;
        fit.coef = trial;
        fit.loglik = trial_ll;
        fit.iterations = it;

        double worst = fit.coef.cwiseAbs().maxCoeff();
        if (worst > opts.separation_bound) {
            Eigen::Index j;
            fit.coef.cwiseAbs().maxCoeff(&j);
            throw FitError("logistic fit: separation detected for " +
                           column_label(column_names, j));
        }
    }

    // cache the information matrix at the optimum
    Eigen::VectorXd lp = X * fit.coef + offset;
    Eigen::VectorXd prob = lp.unaryExpr([](double v) { return expit(v); });
    Eigen::VectorXd wgt = (w.array() * prob.array() * (1.0 - prob.array())).matrix();
    fit.info = X.transpose() * wgt.asDiagonal() * X;

    if (!fit.converged)
        throw FitError("logistic fit: no convergence in " + std::to_string(opts.max_iter) +
                       " iterations");
    return fit;
}

LogisticFit fit_logistic_irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const LogisticOptions& opts,
                              const std::vector<std::string>& column_names) {
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(X.rows());
    Eigen::VectorXd zeros = Eigen::VectorXd::Zero(X.rows());
    return fit_logistic_irls(X, y, ones, zeros, opts, column_names);
}

}  // namespace terata
