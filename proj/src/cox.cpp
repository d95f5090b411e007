#include "terata/cox.hpp"

#include <cmath>

#include "terata/num.hpp"

namespace terata {

double CoxClass::total_events() const {
    double s = 0.0;
    for (double w : event_w) s += w;
    return s;
}

namespace {

// R_{c,j}: weight exposed to mass lambda_j in class c.
std::vector<double> class_risk(const CoxClass& c, std::size_t K) {
    std::vector<double> r(K, 0.0);
    double suffix = 0.0;
    for (std::size_t j = K; j-- > 0;) {
        suffix += c.event_w[j];
        r[j] = suffix + c.censored_atrisk[j];
    }
    return r;
}

void check_classes(const std::vector<CoxClass>& classes, std::size_t K) {
    for (const auto& c : classes) {
        if (c.event_w.size() != K || c.censored_atrisk.size() != K)
            throw ValidationError("cox class: weight vectors do not match the grid");
        for (std::size_t k = 0; k < K; ++k)
            if (!(c.event_w[k] >= 0.0) || !(c.censored_atrisk[k] >= 0.0) ||
                !std::isfinite(c.event_w[k]) || !std::isfinite(c.censored_atrisk[k]))
                throw ValidationError("cox class: negative or non-finite weight");
    }
}

}  // namespace

double cox_objective(const std::vector<CoxClass>& classes, const std::vector<double>& lambda,
                     const Eigen::VectorXd& beta) {
    const std::size_t K = lambda.size();
    double ll = 0.0;
    for (const auto& c : classes) {
        double eta = c.x.dot(beta) + c.offset;
        double e = std::exp(eta);
        auto risk = class_risk(c, K);
        for (std::size_t k = 0; k < K; ++k) {
            if (c.event_w[k] > 0.0) ll += c.event_w[k] * (std::log(lambda[k]) + eta);
            ll -= lambda[k] * e * risk[k];
        }
    }
    return ll;
}

CoxMstep weighted_cox_mstep(const std::vector<CoxClass>& classes, std::size_t K,
                            const Eigen::VectorXd& beta0, const CoxOptions& opts) {
    check_classes(classes, K);
    const Eigen::Index p = beta0.size();
    const std::size_t C = classes.size();

    std::vector<double> total_event(K, 0.0);
    double any_event = 0.0;
    for (const auto& c : classes)
        for (std::size_t k = 0; k < K; ++k) {
            total_event[k] += c.event_w[k];
            any_event += c.event_w[k];
        }
    if (!(any_event > 0.0)) throw FitError("cox fit: no event weight anywhere on the grid");

    std::vector<std::vector<double>> risk(C);
    std::vector<double> class_weight(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        risk[c] = class_risk(classes[c], K);
        for (std::size_t k = 0; k < K; ++k)
            class_weight[c] += classes[c].event_w[k] + classes[c].censored_atrisk[k];
    }

    // covariate components constant across weighted classes are unidentified
    std::vector<bool> active(p, false);
    for (Eigen::Index j = 0; j < p; ++j) {
        double lo = 0, hi = 0;
        bool first = true;
        for (std::size_t c = 0; c < C; ++c) {
            if (class_weight[c] <= 0.0) continue;
            double v = classes[c].x[j];
            if (first) lo = hi = v, first = false;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        active[j] = hi - lo > 1e-12;
    }
    std::vector<Eigen::Index> act;
    for (Eigen::Index j = 0; j < p; ++j)
        if (active[j]) act.push_back(j);
    const Eigen::Index pa = static_cast<Eigen::Index>(act.size());

    CoxMstep fit;
    fit.beta = beta0;
    fit.lambda.assign(K, 0.0);

    auto breslow = [&](const Eigen::VectorXd& beta, std::vector<double>& lambda) {
        std::vector<double> denom(K, 0.0);
        for (std::size_t c = 0; c < C; ++c) {
            double e = std::exp(classes[c].x.dot(beta) + classes[c].offset);
            for (std::size_t k = 0; k < K; ++k) denom[k] += e * risk[c][k];
        }
        for (std::size_t k = 0; k < K; ++k)
            lambda[k] = total_event[k] > 0.0 ? total_event[k] / denom[k] : 0.0;
    };

    breslow(fit.beta, fit.lambda);
    fit.objective = cox_objective(classes, fit.lambda, fit.beta);

    for (int it = 1; it <= opts.max_iter; ++it) {
        fit.iterations = it;

        // profile score and Hessian: with lambda profiled out by Breslow the
        // objective is the partial likelihood, so use risk-weighted covariate
        // moments at each event time
        Eigen::VectorXd score = Eigen::VectorXd::Zero(pa);
        Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(pa, pa);
        {
            std::vector<double> e(C);
            for (std::size_t c = 0; c < C; ++c) {
                e[c] = std::exp(classes[c].x.dot(fit.beta) + classes[c].offset);
                double ev = classes[c].total_events();
                for (Eigen::Index a = 0; a < pa; ++a)
                    score[a] += classes[c].x[act[a]] * ev;
            }
            Eigen::VectorXd m1(pa);
            Eigen::MatrixXd m2(pa, pa);
            for (std::size_t k = 0; k < K; ++k) {
                if (!(total_event[k] > 0.0)) continue;
                double m0 = 0.0;
                m1.setZero();
                m2.setZero();
                for (std::size_t c = 0; c < C; ++c) {
                    double wk = e[c] * risk[c][k];
                    if (wk == 0.0) continue;
                    m0 += wk;
                    for (Eigen::Index a = 0; a < pa; ++a) {
                        double xa = classes[c].x[act[a]];
                        m1[a] += wk * xa;
                        for (Eigen::Index b = 0; b <= a; ++b)
                            m2(a, b) += wk * xa * classes[c].x[act[b]];
                    }
                }
                for (Eigen::Index a = 0; a < pa; ++a) {
                    score[a] -= total_event[k] * m1[a] / m0;
                    for (Eigen::Index b = 0; b <= a; ++b)
                        hess(a, b) -=
                            total_event[k] * (m2(a, b) / m0 - m1[a] * m1[b] / (m0 * m0));
                }
            }
        }
        for (Eigen::Index a = 0; a < pa; ++a)
            for (Eigen::Index b = a + 1; b < pa; ++b) hess(a, b) = hess(b, a);

        bool beta_done = pa == 0 || score.norm() < 1e-8;
        double step_norm = 0.0;
        if (!beta_done) {
            Eigen::LDLT<Eigen::MatrixXd> ldlt(-hess);
            if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
                throw FitError("cox fit: singular Hessian");
            Eigen::VectorXd step = ldlt.solve(score);

            const double slack = 1e-10 * (1.0 + std::fabs(fit.objective));
            double scale = 1.0;
            Eigen::VectorXd trial = fit.beta;
            std::vector<double> trial_lambda(K);
            double trial_obj = fit.objective;
            for (int half = 0; half < 40; ++half) {
                trial = fit.beta;
                for (Eigen::Index a = 0; a < pa; ++a) trial[act[a]] += scale * step[a];
                breslow(trial, trial_lambda);
                trial_obj = cox_objective(classes, trial_lambda, trial);
                if (trial_obj >= fit.objective - slack) break;
                scale *= 0.5;
            }
            step_norm = scale * step.norm();
            fit.beta = trial;
            fit.lambda = trial_lambda;
            fit.objective = trial_obj;
        } else {
            breslow(fit.beta, fit.lambda);
            fit.objective = cox_objective(classes, fit.lambda, fit.beta);
        }

        if (beta_done && step_norm < opts.tol) {
            fit.converged = true;
            break;
        }
        if (step_norm < opts.tol && pa > 0) {
            // tiny step but score not yet flat: keep polishing
            continue;
        }
    }

    if (!fit.converged) {
        std::string iterate = "beta=(";
        for (Eigen::Index j = 0; j < p; ++j)
            iterate += (j ? "," : "") + format_double(fit.beta[j]);
        throw FitError("cox fit: no convergence in " + std::to_string(opts.max_iter) +
                       " iterations, last " + iterate + ")");
    }
    return fit;
}

}  // namespace terata
