#include "terata/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "terata/rng.hpp"

namespace terata {

namespace {

double round1(double v) { return std::round(v * 10.0) / 10.0; }

// Enrollment GA, roughly the observed distribution: most women enroll in the
// first trimester, a thin tail past week 12.
double draw_enroll(Rng& rng) { return round1(2.0 + 14.0 * rbeta(rng, 2.0, 4.0)); }

double draw_delivery(Rng& rng, double q) {
    double t = round1(rnorm(rng, 39.4, 1.3));
    return std::max({t, 36.0, q + 0.2});
}

double draw_sab_time(Rng& rng, double q) {
    double lo = q + 0.5;
    double t = round1(lo + runif(rng) * (19.0 - lo));
    return std::min(std::max(t, q + 0.2), 19.8);
}

template <typename T>
void shuffle_vec(Rng& rng, std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[bounded_index(rng, i)]);
}

struct Slot {
    EndReason reason;
    int defect;  // -1 missing
};

std::vector<Slot> arm_slots(bool exposed) {
    std::vector<Slot> s;
    auto add = [&s](int n, EndReason r, int defect) {
        for (int i = 0; i < n; ++i) s.push_back({r, defect});
    };
    if (exposed) {
        add(30, EndReason::livebirth, 1);
        add(287, EndReason::livebirth, 0);
        add(13, EndReason::sab_stillbirth, -1);
        add(1, EndReason::sab_stillbirth, 0);  // stillbirth slot, end time set past week 20
        add(3, EndReason::tab, 1);
        add(2, EndReason::ltfu, -1);
    } else {
        add(5, EndReason::livebirth, 1);
        add(139, EndReason::livebirth, 0);
        add(1, EndReason::sab_stillbirth, 1);
        add(12, EndReason::sab_stillbirth, -1);
        add(1, EndReason::tab, 1);
    }
    return s;
}

// Exactly `ones` ones among n entries, in shuffled order.
std::vector<int> exact_binary(Rng& rng, int n, int ones) {
    std::vector<int> v(n, 0);
    std::fill(v.begin(), v.begin() + ones, 1);
    shuffle_vec(rng, v);
    return v;
}

std::vector<int> exact_levels(Rng& rng, const std::vector<int>& counts) {
    std::vector<int> v;
    for (std::size_t l = 0; l < counts.size(); ++l)
        for (int i = 0; i < counts[l]; ++i) v.push_back(static_cast<int>(l));
    shuffle_vec(rng, v);
    return v;
}

}  // namespace

Cohort otis_fixture() {
    Rng rng(902741u);

    Cohort cohort;
    cohort.schema.names = {"asthma", "height", "referral"};
    cohort.schema.types = {CovariateType::binary, CovariateType::real,
                           CovariateType::categorical};
    cohort.schema.levels = {{}, {}, {"I", "II", "III"}};

    struct ArmSpec {
        bool exposed;
        int asthma;
        double height_mean, height_sd;
        std::vector<int> referral;
    };
    const ArmSpec arms[2] = {{true, 45, 165.0, 6.98, {26, 199, 111}},
                             {false, 32, 167.0, 7.01, {65, 52, 41}}};

    std::vector<SubjectRecord> records;
    for (const auto& arm : arms) {
        auto slots = arm_slots(arm.exposed);
        const int n = static_cast<int>(slots.size());
        shuffle_vec(rng, slots);
        auto asthma = exact_binary(rng, n, arm.asthma);
        auto referral = exact_levels(rng, arm.referral);

        bool stillbirth_used = false;
        for (int i = 0; i < n; ++i) {
            SubjectRecord rec;
            rec.exposed = arm.exposed ? 1 : 0;
            rec.defect = slots[i].defect;
            rec.end_reason = slots[i].reason;
            rec.enroll_ga = draw_enroll(rng);
            switch (rec.end_reason) {
                case EndReason::livebirth:
                    rec.end_ga = draw_delivery(rng, rec.enroll_ga);
                    break;
                case EndReason::sab_stillbirth:
                    // the lone exposed defect=0 event is the stillbirth
                    if (arm.exposed && slots[i].defect == 0 && !stillbirth_used) {
                        rec.end_ga = 28.3;
                        stillbirth_used = true;
                    } else {
                        rec.end_ga = draw_sab_time(rng, rec.enroll_ga);
                    }
                    break;
                case EndReason::tab:
                    rec.end_ga = round1(std::max(rec.enroll_ga + 1.0, 13.0 + 6.0 * runif(rng)));
                    break;
                case EndReason::ltfu:
                    rec.end_ga = round1(rec.enroll_ga + 2.0 + 10.0 * runif(rng));
                    break;
            }
            double h = round1(rnorm(rng, arm.height_mean, arm.height_sd));
            rec.covariates = {static_cast<double>(asthma[i]),
                              std::min(std::max(h, 140.0), 195.0),
                              static_cast<double>(referral[i])};
            records.push_back(std::move(rec));
        }
    }

    shuffle_vec(rng, records);
    for (std::size_t i = 0; i < records.size(); ++i) {
        char buf[24];
        std::snprintf(buf, sizeof buf, "s%03u", static_cast<unsigned>(i + 1));
        records[i].id = buf;
    }
    cohort.records = std::move(records);
    return cohort;
}

}  // namespace terata
