#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "terata/errors.hpp"

namespace terata {

enum class EndReason : std::uint8_t { sab_stillbirth, livebirth, tab, ltfu };

const char* end_reason_label(EndReason r);
EndReason parse_end_reason(const std::string& token);

enum class CovariateType : std::uint8_t { real, binary, categorical };

struct CovariateSchema {
    std::vector<std::string> names;
    std::vector<CovariateType> types;
    // Per categorical covariate: sorted level labels, first level is the reference.
    // Entries for real/binary covariates are empty.
    std::vector<std::vector<std::string>> levels;

    std::size_t size() const { return names.size(); }
};

// Covariate values are stored as doubles; categorical cells hold the level
// index within schema.levels (binary cells hold 0/1).
struct SubjectRecord {
    std::string id;
    int exposed = 0;               // D
    int defect = -1;               // Y: 1 yes, 0 no, -1 missing (O = defect >= 0)
    double enroll_ga = 0.0;        // Q, weeks
    double end_ga = 0.0;           // X, weeks
    EndReason end_reason = EndReason::livebirth;
    std::vector<double> covariates;

    bool event() const { return end_reason == EndReason::sab_stillbirth; }  // Delta
    bool defect_observed() const { return defect >= 0; }
};

struct Cohort {
    std::vector<SubjectRecord> records;
    CovariateSchema schema;

    std::size_t size() const { return records.size(); }
};

// m_obs: 1 iff the pregnancy ended in SAB/stillbirth, 0 iff livebirth,
// -1 (unknown) for TAB and LTFU.
struct ObservedGroup {
    int exposed = 0;
    int m_obs = 0;

    std::string label() const;  // "O(d,m)" with m in {0,1,?}
    bool operator==(const ObservedGroup&) const = default;
};

ObservedGroup classify_observed_group(const SubjectRecord& record);

// Scans covariate columns of a headered CSV body: cells that are all 0/1 are
// binary, cells that all parse as numbers are real, anything else categorical
// with sorted distinct levels.
CovariateSchema infer_schema(const std::vector<std::string>& names,
                             const std::vector<std::vector<std::string>>& columns);

Cohort parse_cohort(const std::string& csv_text, const CovariateSchema& schema);
Cohort parse_cohort(const std::string& csv_text);  // schema inferred

std::string serialize_cohort(const Cohort& cohort);

Cohort load_cohort_file(const std::string& path);

struct OutcomeCounts {
    // defect yes / no / missing
    int live_birth[3] = {0, 0, 0};
    int sab[3] = {0, 0, 0};
    int stillbirth[3] = {0, 0, 0};
    int tab[3] = {0, 0, 0};
    int ltfu[3] = {0, 0, 0};
    int total() const;
};

struct GroupSummary {
    int size = 0;
    int defect_yes = 0;
    int defect_no = 0;
    int defect_missing = 0;
};

struct CohortSummary {
    OutcomeCounts exposed;
    OutcomeCounts unexposed;
    // keyed by ObservedGroup::label(), all six keys always present
    std::map<std::string, GroupSummary> groups;
};

// A SAB/stillbirth event at or after 20 weeks is tabulated as stillbirth;
// the model itself never distinguishes the two.
CohortSummary summarize(const Cohort& cohort);

// Design matrix for covariate-adjusted models: intercept column first, then
// real/binary columns verbatim, then one indicator per non-reference level.
struct DesignMatrix {
    std::vector<std::string> column_names;
    std::vector<std::vector<double>> rows;  // cohort order

    std::size_t cols() const { return column_names.size(); }
};

DesignMatrix build_design(const Cohort& cohort);

}  // namespace terata
