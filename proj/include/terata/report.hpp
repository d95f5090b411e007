#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "terata/ate.hpp"
#include "terata/cohort.hpp"
#include "terata/pe.hpp"
#include "terata/propensity.hpp"

namespace terata {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kReportFormatVersion = 1;

using ordered_json = nlohmann::ordered_json;

// One row per parameter: estimate and SE on the log scale, the exponentiated
// point estimate, and the percentile CI mapped to the OR/HR scale. The
// summary pointer is null when no bootstrap ran; se/ci/p come out as JSON null.
ordered_json param_row(const std::string& name, double estimate, const ParamSummary* summary);

ordered_json summary_report(const CohortSummary& summary);
ordered_json balance_report(const PropensityFit& fit, const BalanceReport& balance);
ordered_json ate_report(const AteFit& fit, const AteBootstrap* boot);
ordered_json pe_report(const PeFit& fit, const PeBootstrap* boot);

// Missing-defect posteriors for event subjects, one row per subject:
// id, event time, posterior P(defect), exposure arm.
std::string ate_posterior_csv(const Cohort& cohort, const AteFit& fit);

// Stratum membership and defect posterior for every subject.
std::string pe_membership_csv(const Cohort& cohort, const PeFit& fit);

// Deliberately time-free, and the config echo excludes worker counts, so
// reruns are byte-identical at any parallelism.
ordered_json run_manifest(const std::string& subcommand, const ordered_json& config,
                          const std::vector<std::string>& artifacts);

// Refuses to overwrite an existing path unless force is set.
void write_artifact(const std::string& path, const std::string& content, bool force);

}  // namespace terata
