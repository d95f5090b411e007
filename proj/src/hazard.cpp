#include "terata/hazard.hpp"

#include <algorithm>
#include <cmath>

#include "terata/csv.hpp"
#include "terata/errors.hpp"
#include "terata/num.hpp"

namespace terata {

std::vector<double> event_times(const Cohort& cohort) {
    std::vector<double> t;
    for (const auto& r : cohort.records)
        if (r.event()) t.push_back(r.end_ga);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

namespace {

void check_grid(const HazardGrid& grid) {
    if (grid.lambda.size() != grid.times.size())
        throw ValidationError("hazard grid: times/masses length mismatch");
    for (double l : grid.lambda)
        if (!(l >= 0.0) || !std::isfinite(l))
            throw ValidationError("hazard grid: negative or non-finite mass");
}

}  // namespace

double cum_hazard(const HazardGrid& grid, double t) {
    check_grid(grid);
    double sum = 0.0;
    for (std::size_t k = 0; k < grid.size() && grid.times[k] <= t; ++k)
        sum += grid.lambda[k];
    return sum;
}

double cum_hazard_before(const HazardGrid& grid, double t) {
    check_grid(grid);
    double sum = 0.0;
    for (std::size_t k = 0; k < grid.size() && grid.times[k] < t; ++k)
        sum += grid.lambda[k];
    return sum;
}

double survival_function(const HazardGrid& grid, double linpred, double t) {
    return std::exp(-cum_hazard(grid, t) * std::exp(linpred));
}

double survival_before(const HazardGrid& grid, double linpred, double t) {
    return std::exp(-cum_hazard_before(grid, t) * std::exp(linpred));
}

double event_mass(const HazardGrid& grid, double linpred, std::size_t k) {
    check_grid(grid);
    if (k >= grid.size()) throw ValidationError("event_mass: grid index out of range");
    double e = std::exp(linpred);
    return grid.lambda[k] * e * std::exp(-cum_hazard(grid, grid.times[k]) * e);
}

GhostMoments ghost_moments(const HazardGrid& grid, double linpred, double Q) {
    if (Q < 0.0) throw ValidationError("ghost_moments: negative enrollment time");
    GhostMoments gm;
    double p = survival_before(grid, linpred, Q);
    if (p <= 0.0)
        throw FitError("ghost_moments: zero enrollment survival at Q=" + format_double(Q));
    gm.expected_count = (1.0 - p) / p;

    double total = 0.0;
    for (std::size_t k = 0; k < grid.size() && grid.times[k] < Q; ++k) {
        gm.support.push_back(k);
        gm.time_distribution.push_back(event_mass(grid, linpred, k));
        total += gm.time_distribution.back();
    }
    if (gm.expected_count == 0.0) {
        gm.support.clear();
        gm.time_distribution.clear();
        return gm;
    }
    // total > 0 whenever p < 1: some positive mass sits before Q
    for (double& v : gm.time_distribution) v /= total;
    return gm;
}

KmCurve km_left_truncated(const std::vector<double>& q, const std::vector<double>& x,
                          const std::vector<int>& delta, const std::vector<double>& w) {
    const std::size_t n = x.size();
    if (q.size() != n || delta.size() != n || (!w.empty() && w.size() != n))
        throw ValidationError("km_left_truncated: input length mismatch");

    std::vector<double> times;
    for (std::size_t i = 0; i < n; ++i)
        if (delta[i]) times.push_back(x[i]);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());

    KmCurve km;
    km.times = times;
    double s = 1.0;
    for (double t : times) {
        double risk = 0.0, ev = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double wi = w.empty() ? 1.0 : w[i];
            if (q[i] < t && t <= x[i]) risk += wi;
            if (delta[i] && x[i] == t) ev += wi;
        }
        if (risk <= 0.0) {
            km.empty_risk_warning = true;
        } else {
            s *= 1.0 - ev / risk;
        }
        km.at_risk.push_back(risk);
        km.events.push_back(ev);
        km.estimate.push_back(s);
    }
    return km;
}

KmCurve km_left_truncated(const Cohort& cohort, const std::vector<double>& w) {
    std::vector<double> q, x;
    std::vector<int> delta;
    for (const auto& r : cohort.records) {
        q.push_back(r.enroll_ga);
        x.push_back(r.end_ga);
        delta.push_back(r.event() ? 1 : 0);
    }
    return km_left_truncated(q, x, delta, w);
}

std::string KmCurve::to_csv() const {
    CsvTable table;
    table.header = {"time", "estimate", "at_risk", "events"};
    for (std::size_t k = 0; k < times.size(); ++k)
        table.rows.push_back({format_double(times[k]), format_double(estimate[k]),
                              format_double(at_risk[k]), format_double(events[k])});
    return write_csv(table);
}

}  // namespace terata
