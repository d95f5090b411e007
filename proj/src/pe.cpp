#include "terata/pe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

#include "terata/cox.hpp"
#include "terata/errors.hpp"
#include "terata/logistic.hpp"
#include "terata/num.hpp"
#include "terata/parallel.hpp"
#include "terata/rng.hpp"

namespace terata {

const char* stratum_label(Stratum g) {
    switch (g) {
        case Stratum::ss: return "SS";
        case Stratum::ns: return "NS";
        case Stratum::nn: return "NN";
    }
    return "?";
}

std::array<double, 3> strata_probs(double gamma_ns, double gamma_nn) {
    double m = std::max({0.0, gamma_ns, gamma_nn});
    double e0 = std::exp(-m), e1 = std::exp(gamma_ns - m), e2 = std::exp(gamma_nn - m);
    double z = e0 + e1 + e2;
    return {e0 / z, e1 / z, e2 / z};
}

double pe_outcome_prob(Stratum g, int d, const PeTheta& theta) {
    int i = static_cast<int>(g);
    return expit(theta.alpha0[i] + theta.alphaD[i] * d);
}

bool pe_cured(Stratum g, int d) {
    return g == Stratum::ss || (g == Stratum::ns && d == 1);
}

namespace {

// survival classes: (NS, d=0), (NN, d=0), (NN, d=1), each split by y
constexpr int kClasses = 6;

int surv_class(Stratum g, int d, int y) {
    if (pe_cured(g, d)) return -1;
    int comb = g == Stratum::ns ? 0 : (d == 0 ? 1 : 2);
    return 2 * comb + y;
}

double class_linpred(int cls, const PeTheta& theta) {
    int comb = cls / 2, y = cls % 2;
    return (comb == 0 ? theta.beta0_ns : 0.0) + (comb == 2 ? theta.betaD_nn : 0.0) +
           theta.beta_y * y;
}

const Stratum kStrata[3] = {Stratum::ss, Stratum::ns, Stratum::nn};

struct PeTables {
    std::vector<double> cumhaz;             // baseline, inclusive of t_k
    std::array<std::vector<double>, kClasses> f;
    std::array<std::vector<double>, kClasses> pf;  // strict-prefix sums, length K+1

    static PeTables build(const PeTheta& theta) {
        PeTables t;
        const std::size_t K = theta.grid.size();
        t.cumhaz.resize(K);
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            acc += theta.grid.lambda[k];
            t.cumhaz[k] = acc;
        }
        for (int c = 0; c < kClasses; ++c) {
            double e = std::exp(class_linpred(c, theta));
            t.f[c].resize(K);
            t.pf[c].resize(K + 1);
            t.pf[c][0] = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                t.f[c][k] = theta.grid.lambda[k] * e * std::exp(-t.cumhaz[k] * e);
                t.pf[c][k + 1] = t.pf[c][k] + t.f[c][k];
            }
        }
        return t;
    }

    double log_event(int cls, int k, const PeTheta& theta) const {
        double lam = theta.grid.lambda[k];
        if (lam <= 0.0) return -std::numeric_limits<double>::infinity();
        double lp = class_linpred(cls, theta);
        return std::log(lam) + lp - cumhaz[k] * std::exp(lp);
    }

    double log_surv(int cls, int x_cut, const PeTheta& theta) const {
        double ch = x_cut > 0 ? cumhaz[x_cut - 1] : 0.0;
        return -ch * std::exp(class_linpred(cls, theta));
    }
};

struct SubjectView {
    int d = 0;
    int y = -1;
    bool event = false;
    int event_k = -1;
    int q_cut = 0;
    int x_cut = 0;
    double w = 1.0;
    std::vector<Stratum> strata;  // consistent with the observed group
};

SubjectView make_view(const SubjectRecord& r, const std::vector<double>& times, double w) {
    SubjectView s;
    s.d = r.exposed;
    s.y = r.defect;
    s.event = r.event();
    s.w = w;
    s.q_cut = static_cast<int>(std::lower_bound(times.begin(), times.end(), r.enroll_ga) -
                               times.begin());
    s.x_cut = static_cast<int>(std::upper_bound(times.begin(), times.end(), r.end_ga) -
                               times.begin());
    if (s.event) {
        auto it = std::lower_bound(times.begin(), times.end(), r.end_ga);
        if (it == times.end() || *it != r.end_ga)
            throw ValidationError("event time " + format_double(r.end_ga) +
                                  " is not on the hazard grid");
        s.event_k = static_cast<int>(it - times.begin());
    }
    s.strata = consistent_strata(classify_observed_group(r));
    return s;
}

// prior mass P(G=g) pi_g(d)^y (1-pi_g(d))^(1-y) for every latent combination
struct PriorTable {
    double p[3][2];

    PriorTable(const SubjectView& s, const PeTheta& theta,
               const std::array<double, 3>& pg) {
        for (int g = 0; g < 3; ++g) {
            double pi = pe_outcome_prob(kStrata[g], s.d, theta);
            p[g][0] = pg[g] * (1.0 - pi);
            p[g][1] = pg[g] * pi;
        }
    }
};

// subject-level enrollment normalizer over all latent combinations
double enroll_norm(const SubjectView& s, const PriorTable& prior, const PeTables& t) {
    double n = 0.0;
    for (int g = 0; g < 3; ++g)
        for (int y = 0; y < 2; ++y) {
            int cls = surv_class(kStrata[g], s.d, y);
            double tilde = cls < 0 ? 1.0 : 1.0 - t.pf[cls][s.q_cut];
            n += prior.p[g][y] * tilde;
        }
    return n;
}

LatentPosterior subject_posterior(const SubjectView& s, const PeTheta& theta,
                                  const PeTables& t, const std::array<double, 3>& pg) {
    PriorTable prior(s, theta, pg);
    LatentPosterior post;
    double total = 0.0;
    for (Stratum g : s.strata)
        for (int y = 0; y < 2; ++y) {
            if (s.y >= 0 && y != s.y) continue;
            int cls = surv_class(g, s.d, y);
            double num = prior.p[static_cast<int>(g)][y];
            if (s.event) {
                num *= cls >= 0 ? t.f[cls][s.event_k] : 0.0;
            } else if (cls >= 0) {
                num *= std::exp(t.log_surv(cls, s.x_cut, theta));
            }
            post.p[static_cast<int>(g)][y] = num;
            total += num;
        }
    if (!(total > 0.0)) throw FitError("latent posterior degenerate for a subject");
    for (int g = 0; g < 3; ++g)
        for (int y = 0; y < 2; ++y) post.p[g][y] /= total;
    return post;
}

// which alpha coordinates the S-step updates, and the frozen values
struct AlphaPlan {
    bool free0[3] = {true, true, true};
    bool freeD[3] = {true, true, true};
};

AlphaPlan alpha_plan(const OffsetSpec& offsets) {
    AlphaPlan p;
    p.free0[1] = !offsets.alpha0_ns.has_value();
    p.freeD[1] = !offsets.alphaD_ns.has_value();
    p.free0[2] = !offsets.alpha0_nn.has_value();
    p.freeD[2] = !offsets.alphaD_nn.has_value();
    return p;
}

void apply_offsets(PeTheta& theta, const OffsetSpec& offsets) {
    if (offsets.alpha0_ns) theta.alpha0[1] = *offsets.alpha0_ns;
    if (offsets.alphaD_ns) theta.alphaD[1] = *offsets.alphaD_ns;
    if (offsets.alpha0_nn) theta.alpha0[2] = *offsets.alpha0_nn;
    if (offsets.alphaD_nn) theta.alphaD[2] = *offsets.alphaD_nn;
    if (offsets.gamma_ns) theta.gamma_ns = *offsets.gamma_ns;
    if (offsets.gamma_nn) theta.gamma_nn = *offsets.gamma_nn;
}

// E-step accumulators, already aggregated for the S-step
struct Accum {
    double m[3] = {0, 0, 0};          // membership mass, subjects plus ghosts
    double cell[3][2][2] = {};        // stratum, d, y outcome mass
    std::array<std::vector<double>, kClasses> event_w, ghost_b, cens_b;
    double total_w = 0.0;

    explicit Accum(std::size_t K) {
        for (int c = 0; c < kClasses; ++c) {
            event_w[c].assign(K, 0.0);
            ghost_b[c].assign(K + 1, 0.0);
            cens_b[c].assign(K + 1, 0.0);
        }
    }
};

Accum pe_e_step(const std::vector<SubjectView>& views, const PeTheta& theta,
                const PeTables& t, std::vector<LatentPosterior>* posts) {
    Accum acc(theta.grid.size());
    std::array<double, 3> pg = strata_probs(theta.gamma_ns, theta.gamma_nn);
    if (posts) posts->clear();
    for (const SubjectView& s : views) {
        PriorTable prior(s, theta, pg);
        double n_i = enroll_norm(s, prior, t);
        LatentPosterior post = subject_posterior(s, theta, t, pg);
        if (posts) posts->push_back(post);
        acc.total_w += s.w;

        for (int g = 0; g < 3; ++g)
            for (int y = 0; y < 2; ++y) {
                double r = post.p[g][y];
                if (r > 0.0) {
                    acc.m[g] += s.w * r;
                    acc.cell[g][s.d][y] += s.w * r;
                    int cls = surv_class(kStrata[g], s.d, y);
                    if (cls >= 0) {
                        if (s.event)
                            acc.event_w[cls][s.event_k] += s.w * r;
                        else
                            acc.cens_b[cls][s.x_cut] += s.w * r;
                    }
                }
                // ghost copies: failed enrollments carry their own latent
                // draw, so every susceptible combination contributes
                int cls = surv_class(kStrata[g], s.d, y);
                if (cls >= 0 && s.q_cut > 0) {
                    double coef = s.w * prior.p[g][y] / n_i;
                    acc.ghost_b[cls][s.q_cut] += coef;
                    double gm = coef * t.pf[cls][s.q_cut];
                    acc.m[g] += gm;
                    acc.cell[g][s.d][y] += gm;
                }
            }
    }
    return acc;
}

struct SStepPlan {
    AlphaPlan alpha;
    bool gamma_ns_free = true, gamma_nn_free = true;
    std::optional<double> beta_y_fixed;
};

PeTheta pe_s_step(const Accum& acc, const PeTheta& cur, const SStepPlan& plan,
                  std::vector<std::string>* warnings) {
    PeTheta next = cur;
    double M = acc.m[0] + acc.m[1] + acc.m[2];

    if (plan.gamma_ns_free && plan.gamma_nn_free) {
        if (!(acc.m[0] > 0.0)) throw FitError("SS stratum received no posterior mass");
        for (int g = 1; g < 3; ++g) {
            double& gamma = g == 1 ? next.gamma_ns : next.gamma_nn;
            if (acc.m[g] > 0.0) {
                gamma = std::log(acc.m[g] / acc.m[0]);
            } else if (gamma != -30.0) {
                gamma = -30.0;
                if (warnings)
                    warnings->push_back(std::string(stratum_label(kStrata[g])) +
                                        " stratum received no posterior mass");
            }
        }
    } else if (plan.gamma_ns_free || plan.gamma_nn_free) {
        // one coordinate pinned: the free share must match its posterior mass
        int g = plan.gamma_ns_free ? 1 : 2;
        double pinned = plan.gamma_ns_free ? cur.gamma_nn : cur.gamma_ns;
        double share = acc.m[g] / M;
        if (!(share < 1.0)) throw FitError("strata update degenerate");
        double val = std::log(share * (1.0 + std::exp(pinned)) / (1.0 - share));
        (plan.gamma_ns_free ? next.gamma_ns : next.gamma_nn) = val;
    }

    for (int g = 0; g < 3; ++g) {
        bool f0 = plan.alpha.free0[g], fD = plan.alpha.freeD[g];
        if (!f0 && !fD) continue;
        double tot0 = acc.cell[g][0][0] + acc.cell[g][0][1];
        double tot1 = acc.cell[g][1][0] + acc.cell[g][1][1];
        if (tot0 + tot1 < 1e-8 * acc.total_w) {
            if (warnings)
                warnings->push_back(std::string("alpha update skipped for ") +
                                    stratum_label(kStrata[g]) + ": no stratum mass");
            continue;
        }
        int ncols = (f0 ? 1 : 0) + (fD ? 1 : 0);
        Eigen::MatrixXd X(2, ncols);
        Eigen::VectorXd yv(2), wv(2), off(2);
        std::vector<std::string> names;
        for (int d = 0; d < 2; ++d) {
            int c = 0;
            if (f0) X(d, c++) = 1.0;
            if (fD) X(d, c++) = d;
            double tot = d ? tot1 : tot0;
            wv[d] = tot;
            yv[d] = tot > 0.0 ? acc.cell[g][d][1] / tot : 0.0;
            off[d] = (f0 ? 0.0 : cur.alpha0[g]) + (fD ? 0.0 : cur.alphaD[g] * d);
        }
        if (f0) names.push_back(std::string("alpha0_") + stratum_label(kStrata[g]));
        if (fD) names.push_back(std::string("alphaD_") + stratum_label(kStrata[g]));
        LogisticFit lf;
        try {
            lf = fit_logistic_irls(X, yv, wv, off, LogisticOptions{}, names);
        } catch (const FitError& e) {
            throw FitError(std::string("alpha fit failed for stratum ") +
                           stratum_label(kStrata[g]) + ": " + e.what());
        }
        int c = 0;
        if (f0) next.alpha0[g] = lf.coef[c++];
        if (fD) next.alphaD[g] = lf.coef[c++];
    }

    const std::size_t K = cur.grid.size();
    if (K > 0) {
        std::vector<CoxClass> classes(kClasses);
        for (int cls = 0; cls < kClasses; ++cls) {
            CoxClass& c = classes[cls];
            int comb = cls / 2, y = cls % 2;
            int p = plan.beta_y_fixed ? 2 : 3;
            c.x.resize(p);
            c.x[0] = comb == 0 ? 1.0 : 0.0;
            c.x[1] = comb == 2 ? 1.0 : 0.0;
            if (plan.beta_y_fixed)
                c.offset = *plan.beta_y_fixed * y;
            else
                c.x[2] = y;
            c.event_w = acc.event_w[cls];
            c.censored_atrisk.assign(K, 0.0);
            // ghost event masses carry f at the E-step theta
            double ghost_suffix = 0.0, cens_suffix = 0.0;
            double e = std::exp(class_linpred(cls, cur));
            double ch = 0.0;
            std::vector<double> fvec(K);
            for (std::size_t k = 0; k < K; ++k) {
                ch += cur.grid.lambda[k];
                fvec[k] = cur.grid.lambda[k] * e * std::exp(-ch * e);
            }
            for (std::size_t k = K; k-- > 0;) {
                ghost_suffix += acc.ghost_b[cls][k + 1];
                cens_suffix += acc.cens_b[cls][k + 1];
                c.event_w[k] += ghost_suffix * fvec[k];
                c.censored_atrisk[k] = cens_suffix;
            }
        }
        Eigen::VectorXd beta0(plan.beta_y_fixed ? 2 : 3);
        beta0[0] = cur.beta0_ns;
        beta0[1] = cur.betaD_nn;
        if (!plan.beta_y_fixed) beta0[2] = cur.beta_y;
        CoxMstep cm = weighted_cox_mstep(classes, K, beta0);
        next.beta0_ns = cm.beta[0];
        next.betaD_nn = cm.beta[1];
        if (!plan.beta_y_fixed) next.beta_y = cm.beta[2];
        next.grid.lambda = cm.lambda;
    }
    return next;
}

double pe_l2_change(const PeTheta& a, const PeTheta& b) {
    double s = 0.0;
    auto add = [&s](double u, double v) { s += (u - v) * (u - v); };
    add(a.gamma_ns, b.gamma_ns);
    add(a.gamma_nn, b.gamma_nn);
    for (int g = 0; g < 3; ++g) {
        add(a.alpha0[g], b.alpha0[g]);
        add(a.alphaD[g], b.alphaD[g]);
    }
    add(a.beta0_ns, b.beta0_ns);
    add(a.betaD_nn, b.betaD_nn);
    add(a.beta_y, b.beta_y);
    for (std::size_t k = 0; k < a.grid.lambda.size(); ++k)
        add(a.grid.lambda[k], b.grid.lambda[k]);
    return std::sqrt(s);
}

std::vector<std::string> pe_free_names(const SStepPlan& plan, bool has_grid) {
    std::vector<std::string> names;
    if (plan.gamma_ns_free) names.push_back("gamma_NS");
    if (plan.gamma_nn_free) names.push_back("gamma_NN");
    for (int g = 0; g < 3; ++g) {
        if (plan.alpha.free0[g])
            names.push_back(std::string("alpha0_") + stratum_label(kStrata[g]));
        if (plan.alpha.freeD[g])
            names.push_back(std::string("alphaD_") + stratum_label(kStrata[g]));
    }
    if (has_grid) {
        names.push_back("beta0_NS");
        names.push_back("betaD_NN");
        if (!plan.beta_y_fixed) names.push_back("beta_y");
    }
    return names;
}

double pe_param_value(const PeTheta& theta, const std::string& name) {
    if (name == "gamma_NS") return theta.gamma_ns;
    if (name == "gamma_NN") return theta.gamma_nn;
    if (name == "beta0_NS") return theta.beta0_ns;
    if (name == "betaD_NN") return theta.betaD_nn;
    if (name == "beta_y") return theta.beta_y;
    for (int g = 0; g < 3; ++g) {
        if (name == std::string("alpha0_") + stratum_label(kStrata[g]))
            return theta.alpha0[g];
        if (name == std::string("alphaD_") + stratum_label(kStrata[g]))
            return theta.alphaD[g];
    }
    throw ValidationError("unknown parameter " + name);
}

}  // namespace

std::vector<Stratum> consistent_strata(const ObservedGroup& group) {
    if (group.m_obs < 0) return {Stratum::ss, Stratum::ns, Stratum::nn};
    if (group.m_obs == 0)
        return group.exposed ? std::vector<Stratum>{Stratum::ss, Stratum::ns}
                             : std::vector<Stratum>{Stratum::ss};
    return group.exposed ? std::vector<Stratum>{Stratum::nn}
                         : std::vector<Stratum>{Stratum::ns, Stratum::nn};
}

double pe_survival(double t, int d, int y, Stratum g, const PeTheta& theta) {
    int cls = surv_class(g, d, y);
    if (cls < 0)
        throw ValidationError(std::string("pe_survival: cured combination ") +
                              stratum_label(g) + " with d=" + std::to_string(d));
    double lp = class_linpred(cls, theta);
    return std::exp(-cum_hazard(theta.grid, t) * std::exp(lp));
}

LatentPosterior latent_posterior(const SubjectRecord& record, const PeTheta& theta) {
    PeTables t = PeTables::build(theta);
    SubjectView s = make_view(record, theta.grid.times, 1.0);
    return subject_posterior(s, theta, t, strata_probs(theta.gamma_ns, theta.gamma_nn));
}

double pe_observed_loglik(const Cohort& cohort, const WeightVector& weights,
                          const PeTheta& theta) {
    if (weights.w.size() != cohort.size())
        throw ValidationError("pe_observed_loglik: weight/record count mismatch");
    PeTables t = PeTables::build(theta);
    std::array<double, 3> pg = strata_probs(theta.gamma_ns, theta.gamma_nn);
    double ll = 0.0;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        SubjectView s = make_view(cohort.records[i], theta.grid.times, weights.w[i]);
        PriorTable prior(s, theta, pg);
        double num = 0.0;
        for (Stratum g : s.strata)
            for (int y = 0; y < 2; ++y) {
                if (s.y >= 0 && y != s.y) continue;
                int cls = surv_class(g, s.d, y);
                double term = prior.p[static_cast<int>(g)][y];
                if (s.event)
                    term *= cls >= 0 ? t.f[cls][s.event_k] : 0.0;
                else if (cls >= 0)
                    term *= std::exp(t.log_surv(cls, s.x_cut, theta));
                num += term;
            }
        ll += s.w * (std::log(num) - std::log(enroll_norm(s, prior, t)));
    }
    return ll;
}

LogOrM log_or_m(double gamma_ns, double gamma_nn, const Eigen::Matrix2d& cov) {
    LogOrM out;
    double ens = std::exp(gamma_ns), enn = std::exp(gamma_nn);
    out.estimate = gamma_nn - std::log(ens + enn) - std::log1p(ens);
    out.gradient[0] = -ens / (ens + enn) - ens / (1.0 + ens);
    out.gradient[1] = 1.0 - enn / (ens + enn);
    double var = out.gradient.dot(cov * out.gradient);
    out.se = var > 0.0 ? std::sqrt(var) : 0.0;
    return out;
}

PeFit fit_pe(const Cohort& cohort, const WeightVector& weights, const OffsetSpec& offsets,
             const EsOptions& opts, const PeTheta* start) {
    if (weights.w.size() != cohort.size())
        throw ValidationError("fit_pe: weight/record count mismatch");
    PeFit fit;
    std::vector<double> times = event_times(cohort);
    const std::size_t K = times.size();

    SStepPlan plan;
    plan.alpha = alpha_plan(offsets);
    plan.gamma_ns_free = !offsets.gamma_ns.has_value();
    plan.gamma_nn_free = !offsets.gamma_nn.has_value();
    plan.beta_y_fixed = opts.beta_y_fixed;

    std::vector<SubjectView> views;
    views.reserve(cohort.size());
    for (std::size_t i = 0; i < cohort.size(); ++i)
        views.push_back(make_view(cohort.records[i], times, weights.w[i]));

    if (start) {
        if (start->grid.times != times)
            throw ValidationError("fit_pe: start grid does not match the event times");
        fit.theta = *start;
    } else {
        // data-informed start: uniform split over consistent strata for gamma,
        // offsets in place, flat hazard from an unstratified Breslow pass
        fit.theta.grid.times = times;
        double m0[3] = {0, 0, 0};
        for (const SubjectView& s : views)
            for (Stratum g : s.strata)
                m0[static_cast<int>(g)] += s.w / static_cast<double>(s.strata.size());
        if (!(m0[0] > 0.0)) throw FitError("fit_pe: SS stratum empty at initialization");
        fit.theta.gamma_ns = m0[1] > 0.0 ? std::log(m0[1] / m0[0]) : -30.0;
        fit.theta.gamma_nn = m0[2] > 0.0 ? std::log(m0[2] / m0[0]) : -30.0;
        fit.theta.grid.lambda.assign(K, 0.0);
        for (std::size_t k = 0; k < K; ++k) {
            double events = 0.0, risk = 0.0;
            for (const SubjectView& s : views) {
                if (s.event && s.event_k == static_cast<int>(k)) events += s.w;
                if (s.x_cut > static_cast<int>(k)) risk += s.w;
            }
            fit.theta.grid.lambda[k] = events / risk;
        }
    }
    apply_offsets(fit.theta, offsets);
    if (opts.beta_y_fixed) fit.theta.beta_y = *opts.beta_y_fixed;
    fit.free_names = pe_free_names(plan, K > 0);

    fit.loglik_trace.push_back(pe_observed_loglik(cohort, weights, fit.theta));
    for (int it = 1; it <= opts.max_iter; ++it) {
        PeTables tables = PeTables::build(fit.theta);
        Accum acc = pe_e_step(views, fit.theta, tables, nullptr);
        PeTheta nxt;
        try {
            nxt = pe_s_step(acc, fit.theta, plan, &fit.warnings);
        } catch (const FitError& e) {
            throw FitError("fit_pe: S-step failed at iteration " + std::to_string(it) +
                           ": " + std::string(e.what()));
        }
        double change = pe_l2_change(nxt, fit.theta);
        fit.theta = nxt;
        fit.iterations = it;
        double ll = pe_observed_loglik(cohort, weights, fit.theta);
        if (ll < fit.loglik_trace.back() - 1e-8) fit.ascent_ok = false;
        fit.loglik_trace.push_back(ll);
        if (opts.verbose)
            std::fprintf(stderr, "pe iter %d change %.3e loglik %.10f\n", it, change, ll);
        if (change < opts.tol) {
            fit.converged = true;
            break;
        }
    }

    fit.strata = strata_probs(fit.theta.gamma_ns, fit.theta.gamma_nn);
    fit.log_or_est = log_or_m(fit.theta.gamma_ns, fit.theta.gamma_nn,
                              Eigen::Matrix2d::Zero()).estimate;

    PeTables tables = PeTables::build(fit.theta);
    std::vector<LatentPosterior> posts;
    pe_e_step(views, fit.theta, tables, &posts);
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        fit.subject_ids.push_back(cohort.records[i].id);
        fit.group_labels.push_back(classify_observed_group(cohort.records[i]).label());
        fit.membership.push_back({posts[i].stratum_mass(Stratum::ss),
                                  posts[i].stratum_mass(Stratum::ns),
                                  posts[i].stratum_mass(Stratum::nn)});
        fit.defect_posterior.push_back(cohort.records[i].defect_observed()
                                           ? static_cast<double>(cohort.records[i].defect)
                                           : posts[i].defect_mass());
    }
    return fit;
}

PeBootstrap bootstrap_pe(const Cohort& cohort, const PeFit& full_fit,
                         const OffsetSpec& offsets, const BootstrapOptions& opts) {
    if (opts.B < 50) throw ValidationError("bootstrap: B must be at least 50");
    const std::size_t n = cohort.size();
    const std::vector<std::string> names = full_fit.free_names;

    unsigned jobs = opts.jobs > 0 ? static_cast<unsigned>(opts.jobs)
                                  : std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::optional<std::vector<double>>> slots(opts.B);
    parallel_for(static_cast<std::size_t>(opts.B), jobs, [&](std::size_t b) {
        Rng rng(derive_seed(opts.seed, 1, b));
        Cohort re;
        re.schema = cohort.schema;
        re.records.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            re.records.push_back(cohort.records[bounded_index(rng, n)]);
        try {
            PropensityFit pf = fit_propensity(re);
            WeightVector wv = stabilized_weights(re, pf);
            PeFit f = fit_pe(re, wv, offsets, opts.es);
            if (f.converged) {
                std::vector<double> row;
                row.reserve(names.size());
                for (const auto& nm : names) row.push_back(pe_param_value(f.theta, nm));
                slots[b] = std::move(row);
            }
        } catch (const FitError&) {
            // dropped replicate, counted below
        }
    });

    PeBootstrap boot;
    boot.requested = opts.B;
    for (auto& s : slots)
        if (s) boot.draws.push_back(std::move(*s));
    boot.dropped = opts.B - static_cast<int>(boot.draws.size());
    if (boot.dropped > opts.drop_limit * opts.B)
        throw FitError("bootstrap: " + std::to_string(boot.dropped) + " of " +
                       std::to_string(opts.B) + " replicates failed");

    auto column = [&](const std::string& nm) {
        std::size_t j = std::find(names.begin(), names.end(), nm) - names.begin();
        std::vector<double> v;
        if (j >= names.size()) return v;
        v.reserve(boot.draws.size());
        for (const auto& row : boot.draws) v.push_back(row[j]);
        return v;
    };
    auto sd_of = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        return std::sqrt(ss / static_cast<double>(v.size() - 1));
    };

    for (std::size_t j = 0; j < names.size(); ++j) {
        std::vector<double> v;
        v.reserve(boot.draws.size());
        for (const auto& row : boot.draws) v.push_back(row[j]);
        ParamSummary ps;
        ps.name = names[j];
        ps.estimate = pe_param_value(full_fit.theta, names[j]);
        ps.se = sd_of(v);
        ps.ci_lo = percentile(v, 0.025);
        ps.ci_hi = percentile(v, 0.975);
        ps.p = wald_p(ps.estimate, ps.se);
        boot.params.push_back(ps);
    }

    // gamma covariance for the delta method; pinned gammas have zero spread
    std::vector<double> gns = column("gamma_NS"), gnn = column("gamma_NN");
    boot.gamma_cov = Eigen::Matrix2d::Zero();
    if (!gns.empty() && !gnn.empty()) {
        double mns = 0.0, mnn = 0.0;
        for (std::size_t b = 0; b < gns.size(); ++b) {
            mns += gns[b];
            mnn += gnn[b];
        }
        mns /= static_cast<double>(gns.size());
        mnn /= static_cast<double>(gnn.size());
        double c00 = 0.0, c01 = 0.0, c11 = 0.0;
        for (std::size_t b = 0; b < gns.size(); ++b) {
            c00 += (gns[b] - mns) * (gns[b] - mns);
            c01 += (gns[b] - mns) * (gnn[b] - mnn);
            c11 += (gnn[b] - mnn) * (gnn[b] - mnn);
        }
        double denom = static_cast<double>(gns.size() - 1);
        boot.gamma_cov << c00 / denom, c01 / denom, c01 / denom, c11 / denom;
    } else if (!gns.empty()) {
        boot.gamma_cov(0, 0) = sd_of(gns) * sd_of(gns);
    } else if (!gnn.empty()) {
        boot.gamma_cov(1, 1) = sd_of(gnn) * sd_of(gnn);
    }
    boot.log_or = log_or_m(full_fit.theta.gamma_ns, full_fit.theta.gamma_nn, boot.gamma_cov);
    boot.log_or_p = wald_p(boot.log_or.estimate, boot.log_or.se);
    return boot;
}

}  // namespace terata
