#include "terata/ate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

#include "terata/cox.hpp"
#include "terata/logistic.hpp"
#include "terata/num.hpp"
#include "terata/parallel.hpp"
#include "terata/rng.hpp"

namespace terata {

double AteTheta::pi(int d) const { return expit(alpha0 + alpha_d * d); }

double AteTheta::linpred(int d, int y) const { return beta_d * d + beta_y * y; }

namespace {

struct SubjectView {
    int d = 0;
    int y = -1;       // observed defect or -1
    bool event = false;
    int event_k = -1;  // grid index of the event time
    int q_cut = 0;     // grid points strictly before Q
    int x_cut = 0;     // grid points at or before X
    double w = 1.0;
};

// Per (d, y) class: event masses f(t_k), their strict-prefix sums (so
// F(Q-) = prefix[q_cut]), and inclusive cumulative hazard.
struct ClassTables {
    std::array<std::array<std::vector<double>, 2>, 2> f, f_prefix;
    std::vector<double> cumhaz;  // baseline, inclusive of t_k

    static ClassTables build(const AteTheta& theta) {
        ClassTables t;
        const auto& g = theta.grid;
        const std::size_t K = g.size();
        t.cumhaz.resize(K);
        double acc = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            acc += g.lambda[k];
            t.cumhaz[k] = acc;
        }
        for (int d = 0; d < 2; ++d)
            for (int y = 0; y < 2; ++y) {
                double e = std::exp(theta.linpred(d, y));
                auto& f = t.f[d][y];
                auto& pf = t.f_prefix[d][y];
                f.resize(K);
                pf.resize(K + 1);
                pf[0] = 0.0;
                for (std::size_t k = 0; k < K; ++k) {
                    f[k] = g.lambda[k] * e * std::exp(-t.cumhaz[k] * e);
                    pf[k + 1] = pf[k] + f[k];
                }
            }
        return t;
    }

    // log of the per-defect-state observed likelihood factor
    //   [f(X|y)]^Delta [S(X|y)]^(1-Delta) / (1 - F(Q-|y))
    double log_surv_factor(const AteTheta& theta, const SubjectView& s, int y) const {
        double e = std::exp(theta.linpred(s.d, y));
        double ll;
        if (s.event) {
            double lam = theta.grid.lambda[s.event_k];
            if (lam <= 0.0) return -std::numeric_limits<double>::infinity();
            ll = std::log(lam) + theta.linpred(s.d, y) - cumhaz[s.event_k] * e;
        } else {
            double ch = s.x_cut > 0 ? cumhaz[s.x_cut - 1] : 0.0;
            ll = -ch * e;
        }
        return ll - std::log1p(-f_prefix[s.d][y][s.q_cut]);
    }
};

std::vector<SubjectView> make_views(const Cohort& cohort, const HazardGrid& grid,
                                    const std::vector<double>* w) {
    std::vector<SubjectView> views(cohort.size());
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& r = cohort.records[i];
        SubjectView& s = views[i];
        s.d = r.exposed;
        s.y = r.defect;
        s.event = r.event();
        s.w = w ? (*w)[i] : 1.0;
        const auto& t = grid.times;
        s.q_cut = static_cast<int>(std::lower_bound(t.begin(), t.end(), r.enroll_ga) - t.begin());
        s.x_cut = static_cast<int>(std::upper_bound(t.begin(), t.end(), r.end_ga) - t.begin());
        if (s.event) {
            auto it = std::lower_bound(t.begin(), t.end(), r.end_ga);
            if (it == t.end() || *it != r.end_ga)
                throw ValidationError("event time " + format_double(r.end_ga) +
                                      " is not on the hazard grid");
            s.event_k = static_cast<int>(it - t.begin());
        }
    }
    return views;
}

struct SStepSpec {
    bool free_beta_d = true;
    bool free_beta_y = true;
};

// Maximizes the expected complete-data log-likelihood given E-step weights.
// The logistic block is the saturated (1, D) model; the survival block is the
// weighted discrete-hazard fit over (d, y) classes.
AteTheta s_step(const EStepWeights& ew, const AteTheta& cur, const SStepSpec& spec) {
    const std::size_t n = ew.w_pi1.size();
    const std::size_t K = cur.grid.size();

    double sy[2] = {0, 0}, sw[2] = {0, 0};
    for (std::size_t i = 0; i < n; ++i) {
        sy[ew.d[i]] += ew.w_pi1[i];
        sw[ew.d[i]] += ew.w_pi1[i] + ew.w_pi0[i];
    }
    Eigen::MatrixXd X(2, 2);
    X << 1, 0, 1, 1;
    Eigen::VectorXd yv(2), wv(2), off = Eigen::VectorXd::Zero(2);
    yv << (sw[0] > 0 ? sy[0] / sw[0] : 0.0), (sw[1] > 0 ? sy[1] / sw[1] : 0.0);
    wv << sw[0], sw[1];
    LogisticFit lf =
        fit_logistic_irls(X, yv, wv, off, LogisticOptions{}, {"alpha0", "alpha_d"});

    AteTheta next = cur;
    next.alpha0 = lf.coef[0];
    next.alpha_d = lf.coef[1];

    // survival block: one class per (d, y)
    std::vector<CoxClass> classes;
    std::vector<int> dims;
    if (spec.free_beta_d) dims.push_back(0);
    if (spec.free_beta_y) dims.push_back(1);
    for (int d = 0; d < 2; ++d)
        for (int y = 0; y < 2; ++y) {
            CoxClass c;
            c.x.resize(dims.size());
            double xy[2] = {static_cast<double>(d), static_cast<double>(y)};
            for (std::size_t j = 0; j < dims.size(); ++j) c.x[j] = xy[dims[j]];
            c.offset = (spec.free_beta_d ? 0.0 : cur.beta_d * d) +
                       (spec.free_beta_y ? 0.0 : cur.beta_y * y);
            c.event_w.assign(K, 0.0);
            c.censored_atrisk.assign(K, 0.0);
            classes.push_back(std::move(c));
        }

    // bucket ghost scales by q_cut and censored weight by x_cut, then turn
    // them into suffix sums over the grid
    std::array<std::array<std::vector<double>, 2>, 2> ghost_b, cens_b;
    for (int d = 0; d < 2; ++d)
        for (int y = 0; y < 2; ++y) {
            ghost_b[d][y].assign(K + 1, 0.0);
            cens_b[d][y].assign(K + 1, 0.0);
        }
    for (std::size_t i = 0; i < n; ++i) {
        int d = ew.d[i];
        ghost_b[d][1][ew.q_cut[i]] += ew.ghost_scale1[i];
        ghost_b[d][0][ew.q_cut[i]] += ew.ghost_scale0[i];
        if (ew.event_k[i] >= 0) {
            classes[2 * d + 1].event_w[ew.event_k[i]] += ew.w_pi1[i];
            classes[2 * d + 0].event_w[ew.event_k[i]] += ew.w_pi0[i];
        } else {
            cens_b[d][1][ew.x_cut[i]] += ew.w_s1[i];
            cens_b[d][0][ew.x_cut[i]] += ew.w_s0[i];
        }
    }
    for (int d = 0; d < 2; ++d)
        for (int y = 0; y < 2; ++y) {
            CoxClass& c = classes[2 * d + y];
            double ghost_suffix = 0.0, cens_suffix = 0.0;
            for (std::size_t k = K; k-- > 0;) {
                ghost_suffix += ghost_b[d][y][k + 1];
                cens_suffix += cens_b[d][y][k + 1];
                c.event_w[k] += ghost_suffix * ew.f_class[d][y][k];
                c.censored_atrisk[k] = cens_suffix;
            }
        }

    Eigen::VectorXd beta0(dims.size());
    double by[2] = {cur.beta_d, cur.beta_y};
    for (std::size_t j = 0; j < dims.size(); ++j) beta0[j] = by[dims[j]];
    CoxMstep cm = weighted_cox_mstep(classes, K, beta0);
    for (std::size_t j = 0; j < dims.size(); ++j)
        (dims[j] == 0 ? next.beta_d : next.beta_y) = cm.beta[j];
    next.grid.lambda = cm.lambda;
    return next;
}

double l2_change(const AteTheta& a, const AteTheta& b) {
    double s = 0.0;
    auto add = [&s](double u, double v) { s += (u - v) * (u - v); };
    add(a.alpha0, b.alpha0);
    add(a.alpha_d, b.alpha_d);
    add(a.beta_d, b.beta_d);
    add(a.beta_y, b.beta_y);
    for (std::size_t k = 0; k < a.grid.lambda.size(); ++k)
        add(a.grid.lambda[k], b.grid.lambda[k]);
    return std::sqrt(s);
}

}  // namespace

double EStepWeights::w_f(std::size_t i, std::size_t k, int y) const {
    double v = 0.0;
    if (event_k[i] == static_cast<int>(k)) v += y ? w_pi1[i] : w_pi0[i];
    if (static_cast<int>(k) < q_cut[i])
        v += (y ? ghost_scale1[i] : ghost_scale0[i]) * f_class[d[i]][y][k];
    return v;
}

EStepWeights e_step(const Cohort& cohort, const WeightVector& weights, const AteTheta& theta) {
    if (weights.w.size() != cohort.size())
        throw ValidationError("e_step: weight/record count mismatch");
    const std::size_t n = cohort.size();
    ClassTables tables = ClassTables::build(theta);
    auto views = make_views(cohort, theta.grid, &weights.w);

    EStepWeights ew;
    ew.w_pi1.resize(n);
    ew.w_pi0.resize(n);
    ew.w_s1.resize(n);
    ew.w_s0.resize(n);
    ew.posterior1.resize(n);
    ew.ghost_scale1.resize(n);
    ew.ghost_scale0.resize(n);
    ew.event_k.resize(n);
    ew.q_cut.resize(n);
    ew.x_cut.resize(n);
    ew.d.resize(n);
    ew.f_class = tables.f;

    for (std::size_t i = 0; i < n; ++i) {
        const SubjectView& s = views[i];
        double r1;
        if (s.y >= 0) {
            r1 = s.y;
        } else {
            double lt1 = std::log(theta.pi(s.d)) + tables.log_surv_factor(theta, s, 1);
            double lt0 = std::log1p(-theta.pi(s.d)) + tables.log_surv_factor(theta, s, 0);
            double m = std::max(lt1, lt0);
            r1 = std::exp(lt1 - m) / (std::exp(lt1 - m) + std::exp(lt0 - m));
        }
        ew.posterior1[i] = r1;
        ew.w_pi1[i] = s.w * r1;
        ew.w_pi0[i] = s.w * (1.0 - r1);
        ew.w_s1[i] = s.event ? 0.0 : ew.w_pi1[i];
        ew.w_s0[i] = s.event ? 0.0 : ew.w_pi0[i];
        ew.ghost_scale1[i] = ew.w_pi1[i] / (1.0 - tables.f_prefix[s.d][1][s.q_cut]);
        ew.ghost_scale0[i] = ew.w_pi0[i] / (1.0 - tables.f_prefix[s.d][0][s.q_cut]);
        ew.event_k[i] = s.event_k;
        ew.q_cut[i] = s.q_cut;
        ew.x_cut[i] = s.x_cut;
        ew.d[i] = s.d;
    }
    return ew;
}

double posterior_missing_defect(const SubjectRecord& record, const AteTheta& theta) {
    if (record.defect_observed())
        throw ValidationError("posterior_missing_defect: defect already observed for " +
                              record.id);
    Cohort one;
    one.records.push_back(record);
    ClassTables tables = ClassTables::build(theta);
    auto views = make_views(one, theta.grid, nullptr);
    const SubjectView& s = views[0];
    double lt1 = std::log(theta.pi(s.d)) + tables.log_surv_factor(theta, s, 1);
    double lt0 = std::log1p(-theta.pi(s.d)) + tables.log_surv_factor(theta, s, 0);
    double m = std::max(lt1, lt0);
    return std::exp(lt1 - m) / (std::exp(lt1 - m) + std::exp(lt0 - m));
}

double observed_loglik(const Cohort& cohort, const WeightVector& weights,
                       const AteTheta& theta) {
    ClassTables tables = ClassTables::build(theta);
    auto views = make_views(cohort, theta.grid, &weights.w);
    double ll = 0.0;
    for (const auto& s : views) {
        double lt[2];
        for (int y = 0; y < 2; ++y)
            lt[y] = (y ? std::log(theta.pi(s.d)) : std::log1p(-theta.pi(s.d))) +
                    tables.log_surv_factor(theta, s, y);
        double contrib;
        if (s.y >= 0) {
            contrib = lt[s.y];
        } else {
            double m = std::max(lt[0], lt[1]);
            contrib = m + std::log(std::exp(lt[0] - m) + std::exp(lt[1] - m));
        }
        ll += s.w * contrib;
    }
    return ll;
}

AteFit fit_ate(const Cohort& cohort, const WeightVector& weights, const EsOptions& opts) {
    AteFit fit;
    fit.theta.grid.times = event_times(cohort);
    const std::size_t K = fit.theta.grid.size();
    fit.theta.grid.lambda.assign(K, 0.0);
    if (K == 0) throw FitError("fit_ate: cohort has no SAB/stillbirth events");
    if (opts.beta_y_fixed) fit.theta.beta_y = *opts.beta_y_fixed;

    auto views = make_views(cohort, fit.theta.grid, &weights.w);

    // identifiability bookkeeping: an arm with no events cannot move beta_d,
    // and beta_y needs event mass on the defect side (observed or fractional)
    double arm_events[2] = {0, 0};
    for (const auto& s : views)
        if (s.event) arm_events[s.d] += s.w;
    bool free_bd = arm_events[0] > 0.0 && arm_events[1] > 0.0;
    if (!free_bd)
        fit.warnings.push_back("an exposure arm has no events; beta_d frozen at 0");

    // initialization: missing defects read as 0, truncation ignored
    EStepWeights init_w;
    {
        const std::size_t n = cohort.size();
        init_w.w_pi1.assign(n, 0.0);
        init_w.w_pi0.assign(n, 0.0);
        init_w.w_s1.assign(n, 0.0);
        init_w.w_s0.assign(n, 0.0);
        init_w.posterior1.assign(n, 0.0);
        init_w.ghost_scale1.assign(n, 0.0);
        init_w.ghost_scale0.assign(n, 0.0);
        init_w.event_k.resize(n);
        init_w.q_cut.assign(n, 0);  // ignoring truncation = no ghosts
        init_w.x_cut.resize(n);
        init_w.d.resize(n);
        for (int d = 0; d < 2; ++d)
            for (int y = 0; y < 2; ++y) init_w.f_class[d][y].assign(K, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const SubjectView& s = views[i];
            int y0 = s.y == 1 ? 1 : 0;
            (y0 ? init_w.w_pi1 : init_w.w_pi0)[i] = s.w;
            if (!s.event) (y0 ? init_w.w_s1 : init_w.w_s0)[i] = s.w;
            init_w.event_k[i] = s.event_k;
            init_w.x_cut[i] = s.x_cut;
            init_w.d[i] = s.d;
        }
    }
    auto event_mass_y1 = [](const EStepWeights& ew) {
        double s = 0.0;
        for (std::size_t i = 0; i < ew.w_pi1.size(); ++i) {
            if (ew.event_k[i] >= 0) s += ew.w_pi1[i];
            if (ew.q_cut[i] > 0) s += ew.ghost_scale1[i];
        }
        return s;
    };

    SStepSpec spec;
    spec.free_beta_d = free_bd;
    spec.free_beta_y = !opts.beta_y_fixed && event_mass_y1(init_w) > 0.0;
    bool beta_y_warned = false;
    if (!opts.beta_y_fixed && !spec.free_beta_y) {
        fit.warnings.push_back("no event mass on the defect side; beta_y frozen at 0");
        beta_y_warned = true;
    }

    try {
        fit.theta = s_step(init_w, fit.theta, spec);
    } catch (const FitError& e) {
        throw FitError("fit_ate: initialization failed: " + std::string(e.what()));
    }
    fit.loglik_trace.push_back(observed_loglik(cohort, weights, fit.theta));

    for (int it = 1; it <= opts.max_iter; ++it) {
        EStepWeights ew = e_step(cohort, weights, fit.theta);
        if (!opts.beta_y_fixed) {
            spec.free_beta_y = event_mass_y1(ew) > 0.0;
            if (!spec.free_beta_y && !beta_y_warned) {
                fit.warnings.push_back("no event mass on the defect side; beta_y frozen");
                beta_y_warned = true;
            }
        }
        AteTheta next;
        try {
            next = s_step(ew, fit.theta, spec);
        } catch (const FitError& e) {
            throw FitError("fit_ate: S-step failed at iteration " + std::to_string(it) +
                           ": " + std::string(e.what()));
        }
        double change = l2_change(next, fit.theta);
        fit.theta = next;
        fit.iterations = it;
        double ll = observed_loglik(cohort, weights, fit.theta);
        if (ll < fit.loglik_trace.back() - 1e-8) fit.ascent_ok = false;
        fit.loglik_trace.push_back(ll);
        if (opts.verbose)
            std::fprintf(stderr, "es iter %d change %.3e loglik %.10f\n", it, change, ll);
        if (change < opts.tol) {
            fit.converged = true;
            break;
        }
    }

    EStepWeights final_w = e_step(cohort, weights, fit.theta);
    for (std::size_t i = 0; i < cohort.size(); ++i)
        if (!cohort.records[i].defect_observed()) {
            fit.posterior_ids.push_back(cohort.records[i].id);
            fit.posterior_missing.push_back(final_w.posterior1[i]);
        }
    return fit;
}

double percentile(std::vector<double> draws, double prob) {
    if (draws.empty()) return std::nan("");
    std::sort(draws.begin(), draws.end());
    double pos = prob * static_cast<double>(draws.size() - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= draws.size()) return draws.back();
    double frac = pos - static_cast<double>(lo);
    return draws[lo] * (1.0 - frac) + draws[lo + 1] * frac;
}

AteBootstrap bootstrap_ate(const Cohort& cohort, const AteFit& full_fit,
                           const BootstrapOptions& opts) {
    if (opts.B < 50) throw ValidationError("bootstrap: B must be at least 50");
    const std::size_t n = cohort.size();

    unsigned jobs = opts.jobs > 0 ? static_cast<unsigned>(opts.jobs)
                                  : std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::optional<std::array<double, 4>>> slots(opts.B);
    parallel_for(static_cast<std::size_t>(opts.B), jobs, [&](std::size_t b) {
        Rng rng(derive_seed(opts.seed, 0, b));
        Cohort re;
        re.schema = cohort.schema;
        re.records.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            re.records.push_back(cohort.records[bounded_index(rng, n)]);
        try {
            PropensityFit pf = fit_propensity(re);
            WeightVector wv = stabilized_weights(re, pf);
            AteFit f = fit_ate(re, wv, opts.es);
            if (f.converged)
                slots[b] = std::array<double, 4>{f.theta.alpha0, f.theta.alpha_d,
                                                 f.theta.beta_d, f.theta.beta_y};
        } catch (const FitError&) {
            // dropped replicate, counted below
        }
    });

    AteBootstrap boot;
    boot.requested = opts.B;
    for (const auto& s : slots)
        if (s) boot.draws.push_back(*s);
    boot.dropped = opts.B - static_cast<int>(boot.draws.size());
    if (boot.dropped > opts.drop_limit * opts.B)
        throw FitError("bootstrap: " + std::to_string(boot.dropped) + " of " +
                       std::to_string(opts.B) + " replicates failed");

    const char* names[4] = {"alpha0", "alpha_d", "beta_d", "beta_y"};
    double point[4] = {full_fit.theta.alpha0, full_fit.theta.alpha_d, full_fit.theta.beta_d,
                       full_fit.theta.beta_y};
    for (int j = 0; j < 4; ++j) {
        std::vector<double> v;
        v.reserve(boot.draws.size());
        for (const auto& d : boot.draws) v.push_back(d[j]);
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
        ParamSummary ps;
        ps.name = names[j];
        ps.estimate = point[j];
        ps.se = sd;
        ps.ci_lo = percentile(v, 0.025);
        ps.ci_hi = percentile(v, 0.975);
        ps.p = wald_p(point[j], sd);
        boot.params.push_back(ps);
    }
    return boot;
}

}  // namespace terata
