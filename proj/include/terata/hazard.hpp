#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "terata/cohort.hpp"

namespace terata {

// Discrete baseline hazard: point masses lambda[k] at strictly increasing
// times[k]. The grid is the set of distinct observed event times.
struct HazardGrid {
    std::vector<double> times;
    std::vector<double> lambda;

    std::size_t size() const { return times.size(); }
};

std::vector<double> event_times(const Cohort& cohort);

// Cumulative hazard sum over t_k <= t (cum_hazard) or t_k < t (cum_hazard_before).
double cum_hazard(const HazardGrid& grid, double t);
double cum_hazard_before(const HazardGrid& grid, double t);

// S(t) = exp(-Lambda(t) e^linpred), right-continuous.
double survival_function(const HazardGrid& grid, double linpred, double t);
// Left limit S(t-), the enrollment survival used for truncation terms.
double survival_before(const HazardGrid& grid, double linpred, double t);

// f(t_k) = lambda_k e^linpred exp(-Lambda(t_k) e^linpred) with Lambda(t_k)
// including lambda_k, matching the discrete likelihood product.
double event_mass(const HazardGrid& grid, double linpred, std::size_t k);

// Moments of the ghost-copy augmentation for a subject enrolled at Q:
// a geometric number of failed pre-enrollment trials with success probability
// S(Q-), each failure landing on a grid point before Q.
struct GhostMoments {
    double expected_count = 0.0;             // (1-p)/p, p = S(Q-)
    std::vector<std::size_t> support;        // grid indices with t_k < Q
    std::vector<double> time_distribution;   // sums to 1 when support nonempty
};

GhostMoments ghost_moments(const HazardGrid& grid, double linpred, double Q);

// Product-limit estimator under left truncation; risk set {i: Q_i < t <= X_i}.
struct KmCurve {
    std::vector<double> times;     // event times, ascending
    std::vector<double> estimate;  // S(t) after the drop at times[k]
    std::vector<double> at_risk;   // weighted risk-set size at times[k]
    std::vector<double> events;    // weighted event count at times[k]
    bool empty_risk_warning = false;

    std::string to_csv() const;
};

KmCurve km_left_truncated(const std::vector<double>& q, const std::vector<double>& x,
                          const std::vector<int>& delta,
                          const std::vector<double>& w = {});

KmCurve km_left_truncated(const Cohort& cohort, const std::vector<double>& w = {});

}  // namespace terata
