#include "terata/pe.hpp"

#include <cmath>
#include <set>

#include "doctest.h"
#include "support/oracles.hpp"
#include "terata/errors.hpp"
#include "terata/fixture.hpp"
#include "terata/num.hpp"
#include "terata/rng.hpp"

using namespace terata;

namespace {

SubjectRecord rec(std::string id, int d, int y, double q, double x, EndReason er) {
    SubjectRecord r;
    r.id = std::move(id);
    r.exposed = d;
    r.defect = y;
    r.enroll_ga = q;
    r.end_ga = x;
    r.end_reason = er;
    return r;
}

WeightVector unit_weights(std::size_t n) {
    WeightVector wv;
    wv.w.assign(n, 1.0);
    wv.p_exposed = 0.5;
    return wv;
}

PeTheta toy_theta() {
    PeTheta t;
    t.gamma_ns = 0.2;
    t.gamma_nn = -0.3;
    t.alpha0 = {-1.0, -0.8, -0.6};
    t.alphaD = {0.5, 0.3, -0.2};
    t.beta0_ns = 0.4;
    t.betaD_nn = -0.7;
    t.beta_y = 1.0;
    t.grid.times = {10.0};
    t.grid.lambda = {0.25};
    return t;
}

// cohort drawn from the strata model itself so the fit has an interior
// optimum: strata, stratum-specific defect rates, defect-tilted event times
// for susceptible combos, left truncation by rejection, some ltfu and
// missing defects
Cohort synthetic_pe_cohort(std::uint64_t seed, int n) {
    Rng rng(seed);
    Cohort c;
    c.schema.names = {"z"};
    c.schema.types = {CovariateType::binary};
    c.schema.levels = {{}};
    const double a0[3] = {-1.6, -1.0, -0.9};
    const double aD[3] = {0.7, 0.0, 0.0};
    int i = 0;
    while (i < n) {
        double z = rbernoulli(rng, 0.5) ? 1.0 : 0.0;
        int d = rbernoulli(rng, expit(-0.2 + 0.6 * z)) ? 1 : 0;
        double u = runif(rng);
        int g = u < 0.482 ? 0 : (u < 0.805 ? 1 : 2);
        int y = rbernoulli(rng, expit(a0[g] + aD[g] * d)) ? 1 : 0;
        bool susceptible = g == 2 || (g == 1 && d == 0);
        double cens = rbernoulli(rng, 0.1) ? 6.0 + 24.0 * runif(rng) : 1e30;
        double q = 9.0 * runif(rng);
        SubjectRecord r;
        if (susceptible) {
            double eta = (g == 1 ? 0.3 : -0.4 * d) + 0.8 * y;
            double t = 14.0;
            for (int k = 5; k < 14; ++k) {
                if (runif(rng) < std::min(0.95, 0.18 * std::exp(eta))) {
                    t = static_cast<double>(k);
                    break;
                }
            }
            if (cens < t) {
                if (cens <= q) continue;
                r = rec("s" + std::to_string(i), d, -1, q, cens, EndReason::ltfu);
            } else {
                if (t <= q) continue;
                r = rec("s" + std::to_string(i), d, rbernoulli(rng, 0.45) ? -1 : y, q,
                        t, EndReason::sab_stillbirth);
            }
        } else if (cens < 39.0) {
            if (cens <= q) continue;
            r = rec("s" + std::to_string(i), d, -1, q, cens, EndReason::ltfu);
        } else {
            r = rec("s" + std::to_string(i), d, y, q, 39.0, EndReason::livebirth);
        }
        r.covariates = {z};
        c.records.push_back(r);
        ++i;
    }
    return c;
}

OffsetSpec pinned_nsnn() {
    OffsetSpec off;
    off.alpha0_ns = -1.0;
    off.alphaD_ns = 0.0;
    off.alpha0_nn = -1.0;
    off.alphaD_nn = 0.0;
    return off;
}

}  // namespace

TEST_SUITE("pe") {

TEST_CASE("strata probabilities are a softmax over (0, gammas)") {
    auto p = strata_probs(0.0, 0.0);
    CHECK(p[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(p[2] == doctest::Approx(1.0 / 3).epsilon(1e-12));

    p = strata_probs(-40.0, 0.0);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p[1] < 1e-15);
    CHECK(p[2] == doctest::Approx(0.5).epsilon(1e-12));

    p = strata_probs(0.5, -1.0);
    double z = 1.0 + std::exp(0.5) + std::exp(-1.0);
    CHECK(p[0] == doctest::Approx(1.0 / z).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(std::exp(0.5) / z).epsilon(1e-12));
    CHECK(p[2] == doctest::Approx(std::exp(-1.0) / z).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(0.33150).epsilon(2e-5));
    CHECK(p[1] == doctest::Approx(0.54656).epsilon(2e-5));
    CHECK(p[2] == doctest::Approx(0.12195).epsilon(2e-5));
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("per-stratum outcome probability honors offsets and null effects") {
    PeTheta t;
    CHECK(pe_outcome_prob(Stratum::ss, 0, t) == 0.5);
    CHECK(pe_outcome_prob(Stratum::ss, 1, t) == 0.5);
    t.alpha0[2] = -2.0;
    t.alphaD[2] = 0.0;
    CHECK(pe_outcome_prob(Stratum::nn, 1, t) == doctest::Approx(0.11920).epsilon(5e-5));
    CHECK(pe_outcome_prob(Stratum::nn, 0, t) == pe_outcome_prob(Stratum::nn, 1, t));
}

TEST_CASE("stratum survival applies the right linear predictor and rejects cured") {
    PeTheta t = toy_theta();
    t.beta0_ns = std::log(2.0);
    double lam = cum_hazard(t.grid, 12.0);
    CHECK(lam == doctest::Approx(0.25));
    PeTheta ref = t;
    ref.betaD_nn = 0.0;
    ref.beta_y = 0.0;
    CHECK(pe_survival(12.0, 0, 0, Stratum::nn, ref) ==
          doctest::Approx(std::exp(-0.25)).epsilon(1e-12));
    CHECK(pe_survival(12.0, 0, 0, Stratum::ns, ref) ==
          doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK_THROWS_AS(pe_survival(12.0, 0, 0, Stratum::ss, t), ValidationError);
    CHECK_THROWS_AS(pe_survival(12.0, 1, 0, Stratum::ns, t), ValidationError);
}

TEST_CASE("observed groups map to the consistent strata sets") {
    auto set_of = [](int d, int m) {
        ObservedGroup g;
        g.exposed = d;
        g.m_obs = m;
        return consistent_strata(g);
    };
    CHECK(set_of(0, 0) == std::vector<Stratum>{Stratum::ss});
    CHECK(set_of(0, 1) == std::vector<Stratum>{Stratum::ns, Stratum::nn});
    CHECK(set_of(1, 0) == std::vector<Stratum>{Stratum::ss, Stratum::ns});
    CHECK(set_of(1, 1) == std::vector<Stratum>{Stratum::nn});
    CHECK(set_of(0, -1).size() == 3);
    CHECK(set_of(1, -1).size() == 3);
}

TEST_CASE("latent posterior respects support and sums to one") {
    PeTheta t = toy_theta();
    SUBCASE("exposed event sits in NN only, split by the Bayes ratio") {
        SubjectRecord r = rec("a", 1, -1, 0.0, 10.0, EndReason::sab_stillbirth);
        LatentPosterior post = latent_posterior(r, t);
        CHECK(post.stratum_mass(Stratum::nn) == doctest::Approx(1.0).epsilon(1e-12));
        double pi = expit(-0.6 - 0.2);
        double e1 = std::exp(-0.7 + 1.0), e0 = std::exp(-0.7);
        double n1 = pi * 0.25 * e1 * std::exp(-0.25 * e1);
        double n0 = (1.0 - pi) * 0.25 * e0 * std::exp(-0.25 * e0);
        CHECK(post.defect_mass() == doctest::Approx(n1 / (n0 + n1)).epsilon(1e-12));
    }
    SUBCASE("observed defect restricts the table") {
        SubjectRecord r = rec("b", 1, 0, 0.0, 10.0, EndReason::sab_stillbirth);
        LatentPosterior post = latent_posterior(r, t);
        CHECK(post.defect_mass() == 0.0);
        CHECK(post.p[2][0] == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("eliminating NS sends exposed livebirths to SS") {
        PeTheta t2 = t;
        t2.gamma_ns = -40.0;
        SubjectRecord r = rec("c", 1, 0, 3.0, 39.0, EndReason::livebirth);
        LatentPosterior post = latent_posterior(r, t2);
        CHECK(post.stratum_mass(Stratum::ss) == doctest::Approx(1.0).epsilon(1e-10));
    }
    SUBCASE("censored unknown spreads over all strata and sums to one") {
        SubjectRecord r = rec("d", 0, -1, 4.0, 22.0, EndReason::ltfu);
        LatentPosterior post = latent_posterior(r, t);
        double total = 0.0;
        for (int g = 0; g < 3; ++g)
            for (int y = 0; y < 2; ++y) total += post.p[g][y];
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(post.stratum_mass(Stratum::ss) > 0.0);
        CHECK(post.stratum_mass(Stratum::ns) > 0.0);
        CHECK(post.stratum_mass(Stratum::nn) > 0.0);
    }
    SUBCASE("an event with zero hazard mass is degenerate") {
        PeTheta t3 = t;
        t3.grid.lambda = {0.0};
        SubjectRecord r = rec("e", 1, -1, 0.0, 10.0, EndReason::sab_stillbirth);
        CHECK_THROWS_AS(latent_posterior(r, t3), FitError);
    }
}

TEST_CASE("exposed livebirths share at most two NS posterior values") {
    Cohort cohort = otis_fixture();
    PeTheta t = toy_theta();
    std::set<long long> seen;
    int count = 0;
    for (const auto& r : cohort.records) {
        ObservedGroup g = classify_observed_group(r);
        if (!(g.exposed == 1 && g.m_obs == 0)) continue;
        LatentPosterior post = latent_posterior(r, t);
        seen.insert(std::llround(post.stratum_mass(Stratum::ns) * 1e12));
        ++count;
    }
    CHECK(count > 100);
    CHECK(seen.size() <= 2);
}

TEST_CASE("log OR_M matches the brute-force strata-probability identity") {
    Eigen::Matrix2d zero = Eigen::Matrix2d::Zero();
    LogOrM base = log_or_m(0.0, 0.0, zero);
    CHECK(base.estimate == doctest::Approx(-1.3862943611198906).epsilon(1e-10));
    CHECK(base.se == 0.0);

    CHECK(std::fabs(log_or_m(-40.0, 0.7, zero).estimate) < 1e-12);

    Rng rng(33u);
    for (int i = 0; i < 20; ++i) {
        double gns = -2.0 + 4.0 * runif(rng);
        double gnn = -2.0 + 4.0 * runif(rng);
        auto p = strata_probs(gns, gnn);
        double m1 = p[2], m0 = p[2] + p[1];
        double brute = std::log(m1 / (1.0 - m1)) - std::log(m0 / (1.0 - m0));
        CHECK(log_or_m(gns, gnn, zero).estimate == doctest::Approx(brute).epsilon(1e-10));
    }
}

TEST_CASE("log OR_M gradient matches central differences") {
    Eigen::Matrix2d zero = Eigen::Matrix2d::Zero();
    Rng rng(34u);
    double h = 1e-5;
    for (int i = 0; i < 20; ++i) {
        double gns = -2.0 + 4.0 * runif(rng);
        double gnn = -2.0 + 4.0 * runif(rng);
        LogOrM v = log_or_m(gns, gnn, zero);
        double d0 = (log_or_m(gns + h, gnn, zero).estimate -
                     log_or_m(gns - h, gnn, zero).estimate) /
                    (2 * h);
        double d1 = (log_or_m(gns, gnn + h, zero).estimate -
                     log_or_m(gns, gnn - h, zero).estimate) /
                    (2 * h);
        CHECK(v.gradient[0] == doctest::Approx(d0).epsilon(1e-6));
        CHECK(v.gradient[1] == doctest::Approx(d1).epsilon(1e-6));
    }

    Eigen::Matrix2d cov;
    cov << 0.04, 0.01, 0.01, 0.09;
    LogOrM v = log_or_m(0.3, -0.2, cov);
    double g0 = v.gradient[0], g1 = v.gradient[1];
    double var = 0.04 * g0 * g0 + 2 * 0.01 * g0 * g1 + 0.09 * g1 * g1;
    CHECK(v.se == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
}

TEST_CASE("observed log-likelihood matches hand computation") {
    Cohort c;
    c.records.push_back(rec("s1", 0, -1, 4.0, 10.0, EndReason::sab_stillbirth));
    c.records.push_back(rec("s2", 1, 1, 11.0, 39.0, EndReason::livebirth));
    WeightVector wv;
    wv.w = {1.2, 0.8};
    wv.p_exposed = 0.5;
    PeTheta t = toy_theta();

    double z = 1.0 + std::exp(0.2) + std::exp(-0.3);
    double pss = 1.0 / z, pns = std::exp(0.2) / z, pnn = std::exp(-0.3) / z;

    // s1: event at the grid time, enrolled before it, so the subject-level
    // enrollment normalizer is exactly 1
    double num1 = 0.0;
    for (int y = 0; y < 2; ++y) {
        double pi_ns = expit(-0.8);
        double e_ns = std::exp(0.4 + 1.0 * y);
        num1 += pns * (y ? pi_ns : 1.0 - pi_ns) * 0.25 * e_ns * std::exp(-0.25 * e_ns);
        double pi_nn = expit(-0.6);
        double e_nn = std::exp(1.0 * y);
        num1 += pnn * (y ? pi_nn : 1.0 - pi_nn) * 0.25 * e_nn * std::exp(-0.25 * e_nn);
    }

    // s2: exposed livebirth, cured combos only; the normalizer subtracts the
    // NN event mass that would have blocked enrollment
    double pi_ss1 = expit(-1.0 + 0.5), pi_ns1 = expit(-0.8 + 0.3);
    double num2 = pss * pi_ss1 + pns * pi_ns1;
    double pi_nn1 = expit(-0.6 - 0.2);
    double n2 = pss + pns;
    for (int y = 0; y < 2; ++y) {
        double e = std::exp(-0.7 + 1.0 * y);
        double f = 0.25 * e * std::exp(-0.25 * e);
        n2 += pnn * (y ? pi_nn1 : 1.0 - pi_nn1) * (1.0 - f);
    }

    double expected = 1.2 * std::log(num1) + 0.8 * (std::log(num2) - std::log(n2));
    CHECK(pe_observed_loglik(c, wv, t) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("collapsing the strata reduces to a plain weighted logistic") {
    Rng rng(88u);
    Cohort c;
    std::vector<int> d;
    std::vector<double> y, w;
    for (int i = 0; i < 60; ++i) {
        int di = i % 2;
        int yi = rbernoulli(rng, expit(-1.0 + 0.6 * di)) ? 1 : 0;
        c.records.push_back(
            rec("s" + std::to_string(i), di, yi, 3.0 * runif(rng), 39.0,
                EndReason::livebirth));
        d.push_back(di);
        y.push_back(yi);
        w.push_back(0.5 + runif(rng));
    }
    WeightVector wv;
    wv.w = w;
    wv.p_exposed = 0.5;

    OffsetSpec off;
    off.gamma_ns = -30.0;
    off.gamma_nn = -30.0;
    PeFit fit = fit_pe(c, wv, off);
    CHECK(fit.converged);
    CHECK(fit.ascent_ok);
    CHECK(fit.strata[0] == doctest::Approx(1.0).epsilon(1e-10));

    Eigen::Vector2d direct = oracle::saturated_logistic(d, y, w);
    CHECK(fit.theta.alpha0[0] == doctest::Approx(direct[0]).epsilon(1e-6));
    CHECK(fit.theta.alphaD[0] == doctest::Approx(direct[1]).epsilon(1e-6));
}

TEST_CASE("fixture fit with paper-style offsets behaves") {
    Cohort cohort = otis_fixture();
    PropensityFit pf = fit_propensity(cohort);
    WeightVector wv = stabilized_weights(cohort, pf);
    OffsetSpec off;
    off.alpha0_ns = -1.0;
    off.alpha0_nn = -1.0;
    off.alphaD_nn = 0.0;
    EsOptions opts;
    opts.tol = 1e-9;
    opts.max_iter = 20000;
    PeFit fit = fit_pe(cohort, wv, off, opts);

    CHECK(fit.converged);
    CHECK(fit.ascent_ok);
    for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i)
        CHECK(fit.loglik_trace[i] >= fit.loglik_trace[i - 1] - 1e-8);

    CHECK(fit.strata[0] + fit.strata[1] + fit.strata[2] == doctest::Approx(1.0));
    CHECK(fit.strata[0] > 0.5);
    CHECK(fit.theta.alphaD[0] > 0.0);  // exposure raises defect odds within SS

    // membership tables: every exposed event is pure NN
    REQUIRE(fit.membership.size() == cohort.size());
    double ns_among_exposed_live = 0.0;
    int exposed_live = 0;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& r = cohort.records[i];
        ObservedGroup g = classify_observed_group(r);
        double total = fit.membership[i][0] + fit.membership[i][1] + fit.membership[i][2];
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        if (g.exposed == 1 && g.m_obs == 1)
            CHECK(fit.membership[i][2] == doctest::Approx(1.0).epsilon(1e-12));
        if (g.exposed == 1 && g.m_obs == 0) {
            ns_among_exposed_live += fit.membership[i][1];
            ++exposed_live;
        }
    }
    // the NS share of exposed livebirths is a small minority
    CHECK(ns_among_exposed_live / exposed_live < 0.5);

    // stationarity over the free finite-dimensional coordinates
    auto ll_at = [&](const PeTheta& th) { return pe_observed_loglik(cohort, wv, th); };
    double h = 1e-5, ss = 0.0;
    auto bump = [&](auto set) {
        PeTheta up = fit.theta, dn = fit.theta;
        set(up, h);
        set(dn, -h);
        double g = (ll_at(up) - ll_at(dn)) / (2 * h);
        ss += g * g;
    };
    bump([](PeTheta& t, double e) { t.gamma_ns += e; });
    bump([](PeTheta& t, double e) { t.gamma_nn += e; });
    bump([](PeTheta& t, double e) { t.alpha0[0] += e; });
    bump([](PeTheta& t, double e) { t.alphaD[0] += e; });
    bump([](PeTheta& t, double e) { t.alphaD[1] += e; });
    bump([](PeTheta& t, double e) { t.beta0_ns += e; });
    bump([](PeTheta& t, double e) { t.betaD_nn += e; });
    bump([](PeTheta& t, double e) { t.beta_y += e; });
    CHECK(std::sqrt(ss) < 1e-4);
}

TEST_CASE("default and degenerate starts agree") {
    Cohort cohort = otis_fixture();
    PropensityFit pf = fit_propensity(cohort);
    WeightVector wv = stabilized_weights(cohort, pf);
    OffsetSpec off;
    off.alpha0_ns = -1.0;
    off.alpha0_nn = -1.0;
    off.alphaD_nn = 0.0;
    EsOptions opts;
    opts.tol = 1e-9;
    opts.max_iter = 20000;
    PeFit a = fit_pe(cohort, wv, off, opts);

    PeTheta start;
    start.grid.times = event_times(cohort);
    start.grid.lambda.assign(start.grid.times.size(), 0.01);
    PeFit b = fit_pe(cohort, wv, off, opts, &start);
    CHECK(b.converged);
    CHECK(b.theta.gamma_ns == doctest::Approx(a.theta.gamma_ns).epsilon(1e-4));
    CHECK(b.theta.gamma_nn == doctest::Approx(a.theta.gamma_nn).epsilon(1e-4));
    CHECK(b.theta.alpha0[0] == doctest::Approx(a.theta.alpha0[0]).epsilon(1e-4));
    CHECK(b.theta.alphaD[0] == doctest::Approx(a.theta.alphaD[0]).epsilon(1e-4));
    CHECK(b.theta.alphaD[1] == doctest::Approx(a.theta.alphaD[1]).epsilon(1e-4));
    CHECK(b.theta.beta0_ns == doctest::Approx(a.theta.beta0_ns).epsilon(1e-4));
    CHECK(b.theta.betaD_nn == doctest::Approx(a.theta.betaD_nn).epsilon(1e-4));
    CHECK(b.theta.beta_y == doctest::Approx(a.theta.beta_y).epsilon(1e-4));

    PeTheta bad = start;
    bad.grid.times.push_back(99.0);
    bad.grid.lambda.push_back(0.01);
    CHECK_THROWS_AS(fit_pe(cohort, wv, off, opts, &bad), ValidationError);
}

TEST_CASE("estimates are invariant to a common time shift") {
    Cohort c = synthetic_pe_cohort(417u, 90);
    WeightVector wv = unit_weights(c.size());
    OffsetSpec off = pinned_nsnn();
    PeFit base = fit_pe(c, wv, off);
    REQUIRE(base.converged);

    Cohort moved = c;
    for (auto& r : moved.records) {
        r.enroll_ga += 7.0;
        r.end_ga += 7.0;
    }
    PeFit shifted = fit_pe(moved, wv, off);
    CHECK(shifted.theta.gamma_ns == doctest::Approx(base.theta.gamma_ns).epsilon(1e-12));
    CHECK(shifted.theta.gamma_nn == doctest::Approx(base.theta.gamma_nn).epsilon(1e-12));
    CHECK(shifted.theta.alpha0[0] == doctest::Approx(base.theta.alpha0[0]).epsilon(1e-12));
    CHECK(shifted.theta.alphaD[0] == doctest::Approx(base.theta.alphaD[0]).epsilon(1e-12));
    CHECK(shifted.theta.beta0_ns == doctest::Approx(base.theta.beta0_ns).epsilon(1e-12));
    CHECK(shifted.theta.betaD_nn == doctest::Approx(base.theta.betaD_nn).epsilon(1e-12));
    CHECK(shifted.theta.beta_y == doctest::Approx(base.theta.beta_y).epsilon(1e-12));
}

TEST_CASE("pe bootstrap is deterministic and fills the delta-method pieces") {
    Cohort c = synthetic_pe_cohort(991u, 160);
    PropensityFit pf = fit_propensity(c);
    WeightVector wv = stabilized_weights(c, pf);
    OffsetSpec off = pinned_nsnn();
    PeFit fit = fit_pe(c, wv, off);
    REQUIRE(fit.converged);

    BootstrapOptions bo;
    bo.B = 50;
    bo.seed = 11;
    bo.jobs = 1;
    PeBootstrap one = bootstrap_pe(c, fit, off, bo);
    bo.jobs = 3;
    PeBootstrap three = bootstrap_pe(c, fit, off, bo);

    CHECK(one.dropped == three.dropped);
    REQUIRE(one.draws.size() == three.draws.size());
    for (std::size_t b = 0; b < one.draws.size(); ++b)
        for (std::size_t j = 0; j < one.draws[b].size(); ++j)
            CHECK(one.draws[b][j] == three.draws[b][j]);

    REQUIRE(one.params.size() == fit.free_names.size());
    CHECK(one.gamma_cov(0, 1) == one.gamma_cov(1, 0));
    CHECK(one.gamma_cov(0, 0) > 0.0);
    CHECK(one.gamma_cov(1, 1) > 0.0);
    CHECK(one.log_or.se > 0.0);
    CHECK(one.log_or.estimate == doctest::Approx(fit.log_or_est));
    CHECK(one.log_or_p == three.log_or_p);
}

}  // TEST_SUITE
