#include "terata/simulate.hpp"

#include <cmath>
#include <limits>

#include "json.hpp"
#include "terata/errors.hpp"
#include "terata/num.hpp"
#include "terata/pe.hpp"

namespace terata {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_prob(double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0))
        throw ValidationError(std::string("dgp: ") + name + " must lie in [0,1]");
}

void check_hazard(const PiecewiseHazard& h, const char* name) {
    if (h.cuts.size() < 2 || h.rates.size() != h.cuts.size() - 1)
        throw ValidationError(std::string("dgp: ") + name +
                              " needs k+1 cuts for k rates, k >= 1");
    for (std::size_t i = 1; i < h.cuts.size(); ++i)
        if (!(h.cuts[i] > h.cuts[i - 1]))
            throw ValidationError(std::string("dgp: ") + name + " cuts must ascend");
    for (double r : h.rates)
        if (!(r >= 0.0) || !std::isfinite(r))
            throw ValidationError(std::string("dgp: ") + name + " rates must be >= 0");
}

}  // namespace

double PiecewiseHazard::cum(double t) const {
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        if (t <= cuts[i]) break;
        double hi = t < cuts[i + 1] ? t : cuts[i + 1];
        acc += rates[i] * (hi - cuts[i]);
    }
    return acc;
}

double PiecewiseHazard::draw(Rng& rng, double loghr) const {
    double target = rexp(rng) * std::exp(-loghr);
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        double seg = rates[i] * (cuts[i + 1] - cuts[i]);
        if (target < seg) return cuts[i] + target / rates[i];
        target -= seg;
    }
    return kInf;
}

void DgpParams::validate() const {
    check_prob(p_asthma, "p_asthma");
    double pr = 0.0;
    for (double p : p_referral) {
        check_prob(p, "p_referral");
        pr += p;
    }
    if (std::fabs(pr - 1.0) > 1e-9)
        throw ValidationError("dgp: p_referral must sum to 1");
    if (!(height_sd > 0.0)) throw ValidationError("dgp: height_sd must be positive");
    check_hazard(hazard, "hazard");
    if (!(q_hi >= q_lo) || q_lo < 0.0)
        throw ValidationError("dgp: enrollment window needs 0 <= q_lo <= q_hi");
    if (q_hi > q_lo && (!(q_beta_a > 0.0) || !(q_beta_b > 0.0)))
        throw ValidationError("dgp: enrollment beta shapes must be positive");
    if (!(deliv_sd >= 0.0) || !(deliv_min > 0.0))
        throw ValidationError("dgp: delivery parameters out of range");
    // the truncation analogue of P(Q > xi) = 0: every subject outlives its
    // enrollment window unless it fails first
    if (q_hi > deliv_min)
        throw ValidationError("dgp: enrollment support must end by the delivery floor");
    if (!(ltfu_rate >= 0.0)) throw ValidationError("dgp: ltfu_rate must be >= 0");
    check_prob(p_tab, "p_tab");
    if (p_tab > 0.0 && !(tab_by > q_hi))
        throw ValidationError("dgp: tab_by must exceed the enrollment window");
    check_prob(miss_sab, "miss_sab");
    if (pe) check_hazard(pe->hazard, "pe.hazard");
}

DgpParams table5_defaults() {
    DgpParams p;
    p.p_asthma = 0.156;
    p.height_mean = 165.6;
    p.height_sd = 7.0;
    p.p_referral = {0.184, 0.508, 0.308};
    p.prop0 = -0.835;
    p.prop_asthma = -0.50;
    p.prop_height = -0.041;
    p.prop_ref2 = 2.26;
    p.prop_ref3 = 1.91;
    p.alpha0 = -3.336;
    p.alpha_d = 1.093;
    p.beta_d = -0.801;
    p.beta_y = 0.485;
    // SAB mass concentrated in weeks 6-12, a thin stillbirth tail past 20
    p.hazard.cuts = {2.0, 6.0, 12.0, 20.0, 32.0};
    p.hazard.rates = {0.0037, 0.0111, 0.0037, 0.0006};
    p.q_lo = 2.0;
    p.q_hi = 16.0;
    p.q_beta_a = 2.0;
    p.q_beta_b = 4.0;
    p.deliv_mean = 39.4;
    p.deliv_sd = 1.3;
    p.deliv_min = 20.0;
    p.ltfu_rate = 0.00016;
    p.p_tab = 0.0085;
    p.tab_by = 20.0;
    p.miss_sab = 0.95;
    return p;
}

DgpParams pe_defaults() {
    DgpParams p = table5_defaults();
    PeDgp pe;
    pe.gamma_ns = -3.13;
    pe.gamma_nn = -3.08;
    pe.alpha0 = {-3.3, -1.0, -1.0};
    pe.alphaD = {1.1, 0.0, 0.0};
    pe.beta0_ns = 0.3;
    pe.betaD_nn = -0.4;
    pe.beta_y = 0.485;
    // susceptible pregnancies fail before delivery with near certainty
    pe.hazard.cuts = {2.0, 6.0, 12.0, 20.0};
    pe.hazard.rates = {0.25, 0.75, 0.45};
    p.pe = pe;
    return p;
}

Cohort simulate_cohort(const DgpParams& params, std::size_t n, std::uint64_t seed) {
    if (n < 1) throw ValidationError("simulate: n must be at least 1");
    params.validate();
    Rng rng(seed);

    Cohort cohort;
    cohort.schema.names = {"asthma", "height", "referral"};
    cohort.schema.types = {CovariateType::binary, CovariateType::real,
                           CovariateType::categorical};
    cohort.schema.levels = {{}, {}, {"I", "II", "III"}};

    std::size_t accepted = 0, attempts = 0;
    while (accepted < n) {
        ++attempts;
        if (attempts >= 1000 && accepted * 100 < attempts)
            throw ValidationError("simulate: truncation acceptance rate fell below 1%");

        double asthma = rbernoulli(rng, params.p_asthma) ? 1.0 : 0.0;
        double height = rnorm(rng, params.height_mean, params.height_sd);
        double u = runif(rng);
        int ref = u < params.p_referral[0] ? 0
                  : u < params.p_referral[0] + params.p_referral[1] ? 1
                                                                    : 2;
        double lp = params.prop0 + params.prop_asthma * asthma +
                    params.prop_height * (height - params.height_mean) +
                    (ref == 1 ? params.prop_ref2 : 0.0) +
                    (ref == 2 ? params.prop_ref3 : 0.0);
        int d = rbernoulli(rng, expit(lp)) ? 1 : 0;

        int y;
        double t;
        if (params.pe) {
            const PeDgp& pe = *params.pe;
            auto probs = strata_probs(pe.gamma_ns, pe.gamma_nn);
            double v = runif(rng);
            int g = v < probs[0] ? 0 : v < probs[0] + probs[1] ? 1 : 2;
            y = rbernoulli(rng, expit(pe.alpha0[g] + pe.alphaD[g] * d)) ? 1 : 0;
            bool susceptible = g == 2 || (g == 1 && d == 0);
            t = susceptible
                    ? pe.hazard.draw(rng, pe.beta0_ns * (1 - d) * (g == 1 ? 1.0 : 0.0) +
                                              pe.betaD_nn * d * (g == 2 ? 1.0 : 0.0) +
                                              pe.beta_y * y)
                    : kInf;
        } else {
            y = rbernoulli(rng, expit(params.alpha0 + params.alpha_d * d)) ? 1 : 0;
            t = params.hazard.draw(rng, params.beta_d * d + params.beta_y * y);
        }

        double deliv = rnorm(rng, params.deliv_mean, params.deliv_sd);
        if (deliv < params.deliv_min) deliv = params.deliv_min;
        double q = params.q_hi > params.q_lo
                       ? params.q_lo +
                             (params.q_hi - params.q_lo) *
                                 rbeta(rng, params.q_beta_a, params.q_beta_b)
                       : params.q_lo;
        double ltfu =
            params.ltfu_rate > 0.0 ? q + rexp(rng) / params.ltfu_rate : kInf;
        double tab_hi = params.tab_by < deliv ? params.tab_by : deliv;
        double tab = rbernoulli(rng, params.p_tab) && tab_hi > q
                         ? q + (tab_hi - q) * runif(rng)
                         : kInf;

        if (t <= q) continue;  // truncated out, never enrolled

        SubjectRecord rec;
        rec.exposed = d;
        rec.enroll_ga = q;
        rec.covariates = {asthma, height, static_cast<double>(ref)};
        double end = t;
        if (deliv < end) end = deliv;
        if (ltfu < end) end = ltfu;
        if (tab < end) end = tab;
        rec.end_ga = end;
        if (end == t) {
            rec.end_reason = EndReason::sab_stillbirth;
            rec.defect = rbernoulli(rng, params.miss_sab) ? -1 : y;
        } else if (end == deliv) {
            rec.end_reason = EndReason::livebirth;
            rec.defect = y;
        } else if (end == ltfu) {
            rec.end_reason = EndReason::ltfu;
            rec.defect = -1;
        } else {
            rec.end_reason = EndReason::tab;
            rec.defect = y;
        }
        ++accepted;
        char id[32];
        std::snprintf(id, sizeof(id), "sim%06zu", accepted);
        rec.id = id;
        cohort.records.push_back(std::move(rec));
    }
    return cohort;
}

OracleTruth oracle_truth(const DgpParams& params, std::uint64_t seed, std::size_t draws) {
    params.validate();
    OracleTruth truth;
    if (params.pe) {
        const PeDgp& pe = *params.pe;
        truth.alpha_d = pe.alphaD[0];
        truth.or_y = std::exp(pe.alphaD[0]);
        truth.strata = strata_probs(pe.gamma_ns, pe.gamma_nn);
        Eigen::Matrix2d zero = Eigen::Matrix2d::Zero();
        truth.log_or_m = log_or_m(pe.gamma_ns, pe.gamma_nn, zero).estimate;
        truth.log_or_m_se = 0.0;
        return truth;
    }

    truth.alpha_d = params.alpha_d;
    truth.or_y = std::exp(params.alpha_d);
    Rng rng(seed);
    double fail[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < draws; ++i) {
        for (int d : {0, 1}) {
            int y = rbernoulli(rng, expit(params.alpha0 + params.alpha_d * d)) ? 1 : 0;
            double t = params.hazard.draw(rng, params.beta_d * d + params.beta_y * y);
            double deliv = rnorm(rng, params.deliv_mean, params.deliv_sd);
            if (deliv < params.deliv_min) deliv = params.deliv_min;
            if (t < deliv) fail[d] += 1.0;
        }
    }
    double m = static_cast<double>(draws);
    double p1 = fail[1] / m, p0 = fail[0] / m;
    if (p0 <= 0.0 || p0 >= 1.0 || p1 <= 0.0 || p1 >= 1.0)
        throw FitError("oracle_truth: degenerate failure probability");
    truth.log_or_m = std::log(p1 / (1.0 - p1)) - std::log(p0 / (1.0 - p0));
    truth.log_or_m_se =
        std::sqrt(1.0 / (m * p1 * (1.0 - p1)) + 1.0 / (m * p0 * (1.0 - p0)));
    return truth;
}

namespace {

nlohmann::ordered_json hazard_json(const PiecewiseHazard& h) {
    return {{"cuts", h.cuts}, {"rates", h.rates}};
}

PiecewiseHazard hazard_from(const nlohmann::json& j) {
    PiecewiseHazard h;
    h.cuts = j.at("cuts").get<std::vector<double>>();
    h.rates = j.at("rates").get<std::vector<double>>();
    return h;
}

}  // namespace

std::string dgp_to_json(const DgpParams& p) {
    nlohmann::ordered_json j;
    j["p_asthma"] = p.p_asthma;
    j["height_mean"] = p.height_mean;
    j["height_sd"] = p.height_sd;
    j["p_referral"] = p.p_referral;
    j["prop0"] = p.prop0;
    j["prop_asthma"] = p.prop_asthma;
    j["prop_height"] = p.prop_height;
    j["prop_ref2"] = p.prop_ref2;
    j["prop_ref3"] = p.prop_ref3;
    j["alpha0"] = p.alpha0;
    j["alpha_d"] = p.alpha_d;
    j["beta_d"] = p.beta_d;
    j["beta_y"] = p.beta_y;
    j["hazard"] = hazard_json(p.hazard);
    j["q_lo"] = p.q_lo;
    j["q_hi"] = p.q_hi;
    j["q_beta_a"] = p.q_beta_a;
    j["q_beta_b"] = p.q_beta_b;
    j["deliv_mean"] = p.deliv_mean;
    j["deliv_sd"] = p.deliv_sd;
    j["deliv_min"] = p.deliv_min;
    j["ltfu_rate"] = p.ltfu_rate;
    j["p_tab"] = p.p_tab;
    j["tab_by"] = p.tab_by;
    j["miss_sab"] = p.miss_sab;
    if (p.pe) {
        nlohmann::ordered_json pe;
        pe["gamma_ns"] = p.pe->gamma_ns;
        pe["gamma_nn"] = p.pe->gamma_nn;
        pe["alpha0"] = p.pe->alpha0;
        pe["alphaD"] = p.pe->alphaD;
        pe["beta0_ns"] = p.pe->beta0_ns;
        pe["betaD_nn"] = p.pe->betaD_nn;
        pe["beta_y"] = p.pe->beta_y;
        pe["hazard"] = hazard_json(p.pe->hazard);
        j["pe"] = pe;
    }
    return j.dump(2) + "\n";
}

DgpParams dgp_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("dgp json: ") + e.what());
    }
    DgpParams p;
    try {
        j.at("p_asthma").get_to(p.p_asthma);
        j.at("height_mean").get_to(p.height_mean);
        j.at("height_sd").get_to(p.height_sd);
        j.at("p_referral").get_to(p.p_referral);
        j.at("prop0").get_to(p.prop0);
        j.at("prop_asthma").get_to(p.prop_asthma);
        j.at("prop_height").get_to(p.prop_height);
        j.at("prop_ref2").get_to(p.prop_ref2);
        j.at("prop_ref3").get_to(p.prop_ref3);
        j.at("alpha0").get_to(p.alpha0);
        j.at("alpha_d").get_to(p.alpha_d);
        j.at("beta_d").get_to(p.beta_d);
        j.at("beta_y").get_to(p.beta_y);
        p.hazard = hazard_from(j.at("hazard"));
        j.at("q_lo").get_to(p.q_lo);
        j.at("q_hi").get_to(p.q_hi);
        j.at("q_beta_a").get_to(p.q_beta_a);
        j.at("q_beta_b").get_to(p.q_beta_b);
        j.at("deliv_mean").get_to(p.deliv_mean);
        j.at("deliv_sd").get_to(p.deliv_sd);
        j.at("deliv_min").get_to(p.deliv_min);
        j.at("ltfu_rate").get_to(p.ltfu_rate);
        j.at("p_tab").get_to(p.p_tab);
        j.at("tab_by").get_to(p.tab_by);
        j.at("miss_sab").get_to(p.miss_sab);
        if (j.contains("pe")) {
            const auto& q = j.at("pe");
            PeDgp pe;
            q.at("gamma_ns").get_to(pe.gamma_ns);
            q.at("gamma_nn").get_to(pe.gamma_nn);
            q.at("alpha0").get_to(pe.alpha0);
            q.at("alphaD").get_to(pe.alphaD);
            q.at("beta0_ns").get_to(pe.beta0_ns);
            q.at("betaD_nn").get_to(pe.betaD_nn);
            q.at("beta_y").get_to(pe.beta_y);
            pe.hazard = hazard_from(q.at("hazard"));
            p.pe = pe;
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("dgp json: ") + e.what());
    }
    p.validate();
    return p;
}

}  // namespace terata
