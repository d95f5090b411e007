#include <cmath>

#include "doctest.h"
#include "terata/fixture.hpp"
#include "terata/num.hpp"
#include "terata/propensity.hpp"
#include "terata/rng.hpp"

using namespace terata;

namespace {

// Minimal confounded cohort: one real covariate driving exposure. Outcome
// fields are placeholders; only the propensity machinery is exercised.
Cohort confounded_cohort(Rng& rng, int n, double a0, double a1) {
    Cohort c;
    c.schema.names = {"x"};
    c.schema.types = {CovariateType::real};
    c.schema.levels = {{}};
    for (int i = 0; i < n; ++i) {
        SubjectRecord r;
        r.id = "c" + std::to_string(i + 1);
        double x = rnorm(rng);
        r.exposed = rbernoulli(rng, expit(a0 + a1 * x)) ? 1 : 0;
        r.defect = 0;
        r.enroll_ga = 5.0;
        r.end_ga = 39.0;
        r.end_reason = EndReason::livebirth;
        r.covariates = {x};
        c.records.push_back(std::move(r));
    }
    return c;
}

}  // namespace

TEST_SUITE("propensity") {

TEST_CASE("stabilized weight arithmetic") {
    Cohort c = otis_fixture();
    PropensityFit fit;
    fit.fitted_scores.assign(c.size(), 0.5);
    // overwrite one unexposed subject's score with 0.8
    std::size_t unexposed_at = 0;
    for (std::size_t i = 0; i < c.size(); ++i)
        if (!c.records[i].exposed) {
            unexposed_at = i;
            fit.fitted_scores[i] = 0.8;
            break;
        }
    WeightVector wv = stabilized_weights(c, fit);
    CHECK(wv.p_exposed == doctest::Approx(336.0 / 494.0));
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (i == unexposed_at) {
            CHECK(wv.w[i] == doctest::Approx(1.5992).epsilon(1e-4));
        } else if (c.records[i].exposed) {
            CHECK(wv.w[i] == doctest::Approx(1.3603).epsilon(1e-4));
        }
        CHECK(wv.w[i] > 0.0);
    }
}

TEST_CASE("score equal to arm fraction gives unit weights") {
    Cohort c = otis_fixture();
    PropensityFit fit;
    fit.fitted_scores.assign(c.size(), 336.0 / 494.0);
    WeightVector wv = stabilized_weights(c, fit);
    for (double w : wv.w) CHECK(w == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("fixture fit converges and weights sum near arm sizes") {
    Cohort c = otis_fixture();
    PropensityFit fit = fit_propensity(c);
    CHECK(fit.converged);
    CHECK(fit.clipped == 0);
    REQUIRE(fit.coefficients.size() == 5);
    WeightVector wv = stabilized_weights(c, fit);
    double s1 = 0, s0 = 0;
    for (std::size_t i = 0; i < c.size(); ++i)
        (c.records[i].exposed ? s1 : s0) += wv.w[i];
    CHECK(s1 == doctest::Approx(336.0).epsilon(0.10));
    CHECK(s0 == doctest::Approx(158.0).epsilon(0.10));
}

TEST_CASE("recovers known propensity coefficients") {
    Rng rng(2024);
    Cohort c = confounded_cohort(rng, 10000, 1.0, -0.5);
    PropensityFit fit = fit_propensity(c);
    // 3 MC SEs with information-based SE at n=10000
    CHECK(std::fabs(fit.coefficients[0] - 1.0) < 3.0 * 0.025);
    CHECK(std::fabs(fit.coefficients[1] + 0.5) < 3.0 * 0.025);
}

TEST_CASE("scores are clipped into the positivity band") {
    Rng rng(42);
    Cohort c;
    c.schema.names = {"x"};
    c.schema.types = {CovariateType::real};
    c.schema.levels = {{}};
    int i = 0;
    for (double x : {-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0})
        for (int rep = 0; rep < 60; ++rep) {
            SubjectRecord r;
            r.id = "c" + std::to_string(++i);
            r.exposed = rbernoulli(rng, expit(2.0 * x)) ? 1 : 0;
            r.defect = 0;
            r.enroll_ga = 5.0;
            r.end_ga = 39.0;
            r.end_reason = EndReason::livebirth;
            r.covariates = {x};
            c.records.push_back(std::move(r));
        }
    PropensityFit fit = fit_propensity(c);
    CHECK(fit.clipped > 0);
    for (double s : fit.fitted_scores) {
        CHECK(s >= kScoreClip);
        CHECK(s <= 1.0 - kScoreClip);
    }
}

TEST_CASE("covariate equal to exposure is reported as separation") {
    Rng rng(11);
    Cohort c;
    c.schema.names = {"leak"};
    c.schema.types = {CovariateType::real};
    c.schema.levels = {{}};
    for (int i = 0; i < 50; ++i) {
        SubjectRecord r;
        r.id = "c" + std::to_string(i + 1);
        r.exposed = i % 2;
        r.defect = 0;
        r.enroll_ga = 5.0;
        r.end_ga = 39.0;
        r.end_reason = EndReason::livebirth;
        r.covariates = {static_cast<double>(r.exposed)};
        c.records.push_back(std::move(r));
    }
    try {
        fit_propensity(c);
        FAIL("expected FitError");
    } catch (const FitError& e) {
        CHECK(std::string(e.what()).find("leak") != std::string::npos);
    }
}

TEST_CASE("refit after rescaling a covariate gives identical scores") {
    Rng rng(77);
    Cohort c = confounded_cohort(rng, 800, 0.4, 0.9);
    PropensityFit f1 = fit_propensity(c);
    Cohort cs = c;
    for (auto& r : cs.records) r.covariates[0] *= 100.0;
    PropensityFit f2 = fit_propensity(cs);
    for (std::size_t i = 0; i < c.size(); ++i)
        CHECK(f1.fitted_scores[i] == doctest::Approx(f2.fitted_scores[i]).epsilon(1e-7));
}

TEST_CASE("weights are permutation equivariant") {
    Cohort c = otis_fixture();
    PropensityFit fit = fit_propensity(c);
    WeightVector wv = stabilized_weights(c, fit);

    Cohort rev = c;
    std::reverse(rev.records.begin(), rev.records.end());
    PropensityFit rfit = fit_propensity(rev);
    WeightVector rwv = stabilized_weights(rev, rfit);
    const std::size_t n = c.size();
    for (std::size_t i = 0; i < n; ++i)
        CHECK(wv.w[i] == doctest::Approx(rwv.w[n - 1 - i]).epsilon(1e-9));
}

TEST_CASE("balance table behavior") {
    Cohort c = otis_fixture();
    PropensityFit fit = fit_propensity(c);

    // unit weights reproduce the unweighted SMD
    WeightVector unit;
    unit.p_exposed = 336.0 / 494.0;
    unit.w.assign(c.size(), 1.0);
    BalanceReport rep = balance_table(c, unit, fit);
    REQUIRE(rep.rows.size() == 4);
    for (const auto& row : rep.rows)
        CHECK(row.smd_weighted == doctest::Approx(row.smd_unweighted).epsilon(1e-12));

    // a constant covariate has no scale: SMD is not applicable
    Cohort cc = c;
    for (auto& r : cc.records) r.covariates[1] = 150.0;
    BalanceReport crep = balance_table(cc, unit, fit);
    CHECK(std::isnan(crep.rows[1].smd_unweighted));

    std::string csv = crep.to_csv();
    CHECK(csv.find("covariate,smd_unweighted,smd_weighted,clipped_count") == 0);
    CHECK(csv.find("NA") != std::string::npos);
}

TEST_CASE("weighting shrinks confounder imbalance on average") {
    Rng rng(31337);
    int improved = 0;
    const int reps = 50;
    for (int rep = 0; rep < reps; ++rep) {
        Cohort c = confounded_cohort(rng, 500, 0.2, 1.0);
        PropensityFit fit = fit_propensity(c);
        WeightVector wv = stabilized_weights(c, fit);
        BalanceReport rep_tbl = balance_table(c, wv, fit);
        if (std::fabs(rep_tbl.rows[0].smd_weighted) <
            std::fabs(rep_tbl.rows[0].smd_unweighted))
            improved++;
    }
    CHECK(improved > reps / 2);
}

}  // TEST_SUITE
