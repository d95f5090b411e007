#include "terata/sensitivity.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
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

// treatment-effect model data: defect-tilted event hazard, truncation by
// rejection, missing defects among events and everyone lost to follow-up
Cohort synthetic_ate_cohort(std::uint64_t seed, int n) {
    Rng rng(seed);
    Cohort c;
    c.schema.names = {"z"};
    c.schema.types = {CovariateType::binary};
    c.schema.levels = {{}};
    int i = 0;
    while (i < n) {
        double z = rbernoulli(rng, 0.5) ? 1.0 : 0.0;
        int d = rbernoulli(rng, expit(-0.2 + 0.6 * z)) ? 1 : 0;
        int y = rbernoulli(rng, expit(-1.5 + 0.8 * d)) ? 1 : 0;
        double cens = rbernoulli(rng, 0.08) ? 13.0 + 17.0 * runif(rng) : 1e30;
        double q = 7.0 * runif(rng);
        double t = 1e30;
        for (int k = 5; k <= 12; ++k) {
            if (runif(rng) < std::min(0.9, 0.12 * std::exp(-0.3 * d + 0.9 * y))) {
                t = static_cast<double>(k);
                break;
            }
        }
        SubjectRecord r;
        if (t < cens) {
            if (t <= q) continue;
            r = rec("s" + std::to_string(i), d, rbernoulli(rng, 0.5) ? -1 : y, q, t,
                    EndReason::sab_stillbirth);
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

// same generator as the strata-model tests: interior optimum by construction
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

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(bool(in));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::size_t line_count(const std::string& text) {
    std::size_t n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

double metric(const SensitivityGrid& g, const SensitivityCell& cell, const char* name) {
    for (std::size_t i = 0; i < g.metric_names.size(); ++i)
        if (g.metric_names[i] == name) return cell.metrics[i];
    FAIL("no metric ", name);
    return 0.0;
}

}  // namespace

TEST_SUITE("sensitivity") {

TEST_CASE("axis strings parse and expand to value grids") {
    GridAxis a = parse_axis("beta_y=0:5:0.5");
    CHECK(a.name == "beta_y");
    auto v = a.values();
    REQUIRE(v.size() == 11);
    CHECK(v.front() == 0.0);
    CHECK(v.back() == 5.0);

    CHECK(parse_axis("a0=-2:0:0.5").values().size() == 5);
    CHECK(parse_axis("aD=-2:2:0.5").values().size() == 9);
    CHECK(parse_axis("x=1.5:1.5:1").values() == std::vector<double>{1.5});
    // steps that do not divide the range stop short of hi
    auto w = parse_axis("x=0:1:0.4").values();
    REQUIRE(w.size() == 3);
    CHECK(w.back() == doctest::Approx(0.8));

    CHECK_THROWS_AS(parse_axis("noequals"), ValidationError);
    CHECK_THROWS_AS(parse_axis("=0:1:1"), ValidationError);
    CHECK_THROWS_AS(parse_axis("x=0:1"), ValidationError);
    CHECK_THROWS_AS(parse_axis("x=a:1:1"), ValidationError);
    CHECK_THROWS_AS(parse_axis("x=0:1:0"), ValidationError);
    CHECK_THROWS_AS(parse_axis("x=1:0:0.5"), ValidationError);

    auto axes = default_pe_axes();
    REQUIRE(axes.size() == 3);
    CHECK(axes[0].count() * axes[1].count() * axes[2].count() == 225);
}

TEST_CASE("beta_y sweep refits with the coordinate frozen") {
    Cohort c = synthetic_ate_cohort(52u, 70);
    WeightVector wv = unit_weights(c.size());
    SweepOptions so;
    so.axis = {"beta_y", 0.0, 1.0, 0.5};
    SensitivityGrid g = ate_beta_y_sweep(c, wv, so);

    REQUIRE(g.cells.size() == 3);
    CHECK(g.axes.size() == 1);
    REQUIRE(!g.table_ids.empty());
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& cell = g.cells[i];
        CHECK(cell.coords[0] == 0.5 * static_cast<double>(i));
        CHECK(cell.converged);
        CHECK(std::isfinite(metric(g, cell, "alpha0")));
        CHECK(std::isfinite(metric(g, cell, "beta_d")));
        // no bootstrap requested, so the uncertainty metrics stay unset
        CHECK(std::isnan(metric(g, cell, "alpha_d_se")));
    }

    // with beta_y = 0 event times carry no defect information, so the
    // posterior for a missing defect is the structural prior
    const auto& zero = g.cells[0];
    double a0 = metric(g, zero, "alpha0");
    double ad = metric(g, zero, "alpha_d");
    for (std::size_t s = 0; s < g.table_ids.size(); ++s) {
        const SubjectRecord* r = nullptr;
        for (const auto& cand : c.records)
            if (cand.id == g.table_ids[s]) r = &cand;
        REQUIRE(r != nullptr);
        CHECK(r->event());
        CHECK(zero.tables[0][s] ==
              doctest::Approx(expit(a0 + ad * r->exposed)).epsilon(1e-8));
    }
}

// monotone fans are a property of low cumulative hazard: for a late event a
// large beta_y argues the defect would have ended the pregnancy earlier, so
// the claim is tested on the study-shaped fixture rather than on arbitrary
// synthetic data
TEST_CASE("posterior fans rise with beta_y on the fixture") {
    Cohort c = otis_fixture();
    PropensityFit pf = fit_propensity(c);
    WeightVector wv = stabilized_weights(c, pf);
    SweepOptions so;
    so.axis = {"beta_y", 0.0, 5.0, 1.0};
    SensitivityGrid g = ate_beta_y_sweep(c, wv, so);
    REQUIRE(g.cells.size() == 6);
    REQUIRE(g.table_ids.size() == 25);  // events only, censored missing defects excluded
    for (const auto& cell : g.cells) REQUIRE(cell.converged);
    for (std::size_t s = 0; s < g.table_ids.size(); ++s) {
        for (std::size_t i = 1; i < g.cells.size(); ++i)
            CHECK(g.cells[i].tables[0][s] >= g.cells[i - 1].tables[0][s] - 1e-9);
        CHECK(g.cells.back().tables[0][s] > g.cells.front().tables[0][s]);
    }
}

TEST_CASE("freezing beta_y at the mle reproduces the unconstrained fit") {
    Cohort c = synthetic_ate_cohort(13u, 90);
    WeightVector wv = unit_weights(c.size());
    EsOptions es;
    es.tol = 1e-8;
    es.max_iter = 2000;
    AteFit free = fit_ate(c, wv, es);
    REQUIRE(free.converged);

    SweepOptions so;
    so.axis = {"beta_y", free.theta.beta_y, free.theta.beta_y, 1.0};
    so.es = es;
    SensitivityGrid g = ate_beta_y_sweep(c, wv, so);
    REQUIRE(g.cells.size() == 1);
    REQUIRE(g.cells[0].converged);
    CHECK(metric(g, g.cells[0], "alpha0") ==
          doctest::Approx(free.theta.alpha0).epsilon(1e-6));
    CHECK(metric(g, g.cells[0], "alpha_d") ==
          doctest::Approx(free.theta.alpha_d).epsilon(1e-6));
    CHECK(metric(g, g.cells[0], "beta_d") ==
          doctest::Approx(free.theta.beta_d).epsilon(1e-6));
}

TEST_CASE("sweep bootstrap metrics are worker-count independent") {
    Cohort c = synthetic_ate_cohort(31u, 70);
    WeightVector wv = unit_weights(c.size());
    SweepOptions so;
    so.axis = {"beta_y", 0.5, 0.5, 1.0};
    so.boot_B = 50;
    so.seed = 7;
    so.jobs = 1;
    SensitivityGrid one = ate_beta_y_sweep(c, wv, so);
    so.jobs = 3;
    SensitivityGrid three = ate_beta_y_sweep(c, wv, so);

    REQUIRE(one.cells.size() == 1);
    REQUIRE(one.cells[0].converged);
    CHECK(metric(one, one.cells[0], "alpha_d_se") > 0.0);
    CHECK(metric(one, one.cells[0], "alpha_d_lo") < metric(one, one.cells[0], "alpha_d_hi"));
    double p = metric(one, one.cells[0], "alpha_d_p");
    CHECK(p > 0.0);
    CHECK(p <= 1.0);
    for (std::size_t m = 0; m < one.metric_names.size(); ++m) {
        double a = one.cells[0].metrics[m], b = three.cells[0].metrics[m];
        if (std::isnan(a))
            CHECK(std::isnan(b));
        else
            CHECK(a == b);
    }
}

TEST_CASE("offset grid covers the axes outer product with warm starts") {
    Cohort c = synthetic_pe_cohort(205u, 140);
    WeightVector wv = unit_weights(c.size());
    OffsetSpec base;
    base.alphaD_ns = 0.0;
    base.alpha0_nn = -1.0;
    PeGridOptions po;
    po.axes = {{"alpha0_ns", -1.0, -0.5, 0.5}, {"alphaD_nn", -0.5, 0.5, 0.5}};
    po.jobs = 1;
    SensitivityGrid g = pe_offset_grid(c, wv, base, po);

    REQUIRE(g.cells.size() == 6);
    CHECK(g.table_ids.size() == c.size());
    const double a0ns[2] = {-1.0, -0.5};
    const double aDnn[3] = {-0.5, 0.0, 0.5};
    for (std::size_t i = 0; i < 6; ++i) {
        const auto& cell = g.cells[i];
        CHECK(cell.coords[0] == a0ns[i / 3]);
        CHECK(cell.coords[1] == aDnn[i % 3]);
        REQUIRE(cell.converged);
        CHECK(std::isfinite(metric(g, cell, "alphaD_ss")));
        CHECK(metric(g, cell, "p_ss") + metric(g, cell, "p_ns") + metric(g, cell, "p_nn") ==
              doctest::Approx(1.0).epsilon(1e-10));
        CHECK(std::isfinite(metric(g, cell, "log_or")));
        for (std::size_t s = 0; s < g.table_ids.size(); ++s) {
            CHECK(cell.tables[0][s] + cell.tables[1][s] + cell.tables[2][s] ==
                  doctest::Approx(1.0).epsilon(1e-9));
            CHECK(cell.tables[3][s] >= 0.0);
            CHECK(cell.tables[3][s] <= 1.0);
        }
    }

    po.jobs = 2;
    SensitivityGrid par = pe_offset_grid(c, wv, base, po);
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t m = 0; m < g.metric_names.size(); ++m) {
            double a = g.cells[i].metrics[m], b = par.cells[i].metrics[m];
            if (std::isnan(a))
                CHECK(std::isnan(b));
            else
                CHECK(a == b);
        }
        for (std::size_t t = 0; t < g.table_names.size(); ++t)
            for (std::size_t s = 0; s < g.table_ids.size(); ++s)
                CHECK(g.cells[i].tables[t][s] == par.cells[i].tables[t][s]);
    }

    PeGridOptions bad;
    bad.axes = {{"beta_y", 0.0, 1.0, 0.5}};
    CHECK_THROWS_AS(pe_offset_grid(c, wv, base, bad), ValidationError);
}

TEST_CASE("export writes stable plot-ready artifacts") {
    Cohort c = synthetic_ate_cohort(52u, 70);
    WeightVector wv = unit_weights(c.size());
    SweepOptions so;
    so.axis = {"beta_y", 0.0, 1.0, 0.5};
    SensitivityGrid g = ate_beta_y_sweep(c, wv, so);

    auto files = export_grid(g, "sens_export_test");
    REQUIRE(files.size() == 3);
    std::string cells1 = slurp(files[0]);
    std::string post1 = slurp(files[1]);
    std::string man1 = slurp(files[2]);
    auto again = export_grid(g, "sens_export_test");
    CHECK(slurp(again[0]) == cells1);
    CHECK(slurp(again[1]) == post1);
    CHECK(slurp(again[2]) == man1);

    CHECK(line_count(cells1) == g.cells.size() + 1);
    CHECK(line_count(post1) == g.cells.size() * g.table_ids.size() + 1);
    auto man = nlohmann::json::parse(man1);
    CHECK(man["cell_count"] == g.cells.size());
    CHECK(man["converged_cells"] == 3);
    CHECK(man["files"]["cells"] == files[0]);
    CHECK(man["axes"][0]["name"] == "beta_y");

    SensitivityGrid empty = g;
    empty.cells.clear();
    auto efiles = export_grid(empty, "sens_export_empty");
    CHECK(line_count(slurp(efiles[0])) == 1);

    for (const auto& f : files) std::remove(f.c_str());
    for (const auto& f : efiles) std::remove(f.c_str());
}

}  // TEST_SUITE
