#include "terata/cohort.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "terata/csv.hpp"
#include "terata/num.hpp"

namespace terata {

const char* end_reason_label(EndReason r) {
    switch (r) {
        case EndReason::sab_stillbirth: return "sab_stillbirth";
        case EndReason::livebirth: return "livebirth";
        case EndReason::tab: return "tab";
        case EndReason::ltfu: return "ltfu";
    }
    return "?";
}

EndReason parse_end_reason(const std::string& token) {
    if (token == "sab_stillbirth") return EndReason::sab_stillbirth;
    if (token == "livebirth") return EndReason::livebirth;
    if (token == "tab") return EndReason::tab;
    if (token == "ltfu") return EndReason::ltfu;
    throw ValidationError("unknown end_reason token: " + token);
}

std::string ObservedGroup::label() const {
    std::string m = m_obs < 0 ? "?" : std::to_string(m_obs);
    return "O(" + std::to_string(exposed) + "," + m + ")";
}

ObservedGroup classify_observed_group(const SubjectRecord& record) {
    ObservedGroup g;
    g.exposed = record.exposed;
    switch (record.end_reason) {
        case EndReason::sab_stillbirth: g.m_obs = 1; break;
        case EndReason::livebirth: g.m_obs = 0; break;
        case EndReason::tab:
        case EndReason::ltfu: g.m_obs = -1; break;
    }
    return g;
}

namespace {

constexpr int kFixedColumns = 6;
const char* const kFixedHeader[kFixedColumns] = {"id",        "exposed",    "defect",
                                                 "enroll_ga", "end_ga",     "end_reason"};

bool missing_cell(const std::string& cell) { return cell.empty() || cell == "NA"; }

double parse_numeric_cell(const std::string& cell, const char* what, std::size_t row) {
    double v;
    if (!parse_double(cell, v))
        throw ParseError("row " + std::to_string(row) + ": malformed " + what + " '" + cell + "'");
    return v;
}

int parse_binary_cell(const std::string& cell, const char* what, std::size_t row) {
    if (cell == "0") return 0;
    if (cell == "1") return 1;
    throw ParseError("row " + std::to_string(row) + ": " + what + " must be 0 or 1, got '" +
                     cell + "'");
}

}  // namespace

CovariateSchema infer_schema(const std::vector<std::string>& names,
                             const std::vector<std::vector<std::string>>& columns) {
    if (names.size() != columns.size())
        throw ValidationError("schema inference: name/column count mismatch");
    CovariateSchema schema;
    schema.names = names;
    for (const auto& col : columns) {
        bool all_binary = true, all_real = true;
        for (const auto& cell : col) {
            if (cell != "0" && cell != "1") all_binary = false;
            double tmp;
            if (!parse_double(cell, tmp)) all_real = false;
        }
        if (all_binary) {
            schema.types.push_back(CovariateType::binary);
            schema.levels.emplace_back();
        } else if (all_real) {
            schema.types.push_back(CovariateType::real);
            schema.levels.emplace_back();
        } else {
            std::set<std::string> distinct(col.begin(), col.end());
            schema.types.push_back(CovariateType::categorical);
            schema.levels.emplace_back(distinct.begin(), distinct.end());
        }
    }
    return schema;
}

namespace {

Cohort parse_cohort_impl(const std::string& csv_text, const CovariateSchema* schema_in) {
    CsvTable table = read_csv(csv_text);
    if (table.header.size() < kFixedColumns)
        throw ParseError("header has " + std::to_string(table.header.size()) +
                         " columns, expected at least " + std::to_string(kFixedColumns));
    for (int c = 0; c < kFixedColumns; ++c)
        if (table.header[c] != kFixedHeader[c])
            throw ParseError("column " + std::to_string(c + 1) + " must be '" +
                             kFixedHeader[c] + "', got '" + table.header[c] + "'");

    std::vector<std::string> cov_names(table.header.begin() + kFixedColumns, table.header.end());

    CovariateSchema schema;
    if (schema_in) {
        if (schema_in->names != cov_names)
            throw ValidationError("covariate header does not match the supplied schema");
        schema = *schema_in;
    } else {
        std::vector<std::vector<std::string>> columns(cov_names.size());
        for (const auto& row : table.rows)
            for (std::size_t c = 0; c < cov_names.size(); ++c)
                columns[c].push_back(row[kFixedColumns + c]);
        schema = infer_schema(cov_names, columns);
    }

    Cohort cohort;
    cohort.schema = schema;
    cohort.records.reserve(table.rows.size());
    std::set<std::string> seen_ids;
    int n_exposed = 0, n_unexposed = 0;

    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t row_no = r + 1;
        SubjectRecord rec;
        rec.id = row[0];
        if (rec.id.empty()) throw ValidationError("row " + std::to_string(row_no) + ": empty id");
        if (!seen_ids.insert(rec.id).second)
            throw ValidationError("duplicate id: " + rec.id);
        rec.exposed = parse_binary_cell(row[1], "exposed", row_no);
        rec.defect = missing_cell(row[2]) ? -1 : parse_binary_cell(row[2], "defect", row_no);
        rec.enroll_ga = parse_numeric_cell(row[3], "enroll_ga", row_no);
        rec.end_ga = parse_numeric_cell(row[4], "end_ga", row_no);
        rec.end_reason = parse_end_reason(row[5]);
        if (rec.enroll_ga < 0)
            throw ValidationError("row " + std::to_string(row_no) + ": negative enroll_ga");
        if (rec.enroll_ga > rec.end_ga)
            throw ValidationError("row " + std::to_string(row_no) + ": enroll_ga " +
                                  format_double(rec.enroll_ga) + " exceeds end_ga " +
                                  format_double(rec.end_ga));
        if (rec.end_reason == EndReason::livebirth && rec.defect < 0)
            throw ValidationError("row " + std::to_string(row_no) +
                                  ": livebirth requires an observed defect status");

        rec.covariates.resize(schema.size());
        for (std::size_t c = 0; c < schema.size(); ++c) {
            const std::string& cell = row[kFixedColumns + c];
            switch (schema.types[c]) {
                case CovariateType::real:
                    rec.covariates[c] =
                        parse_numeric_cell(cell, schema.names[c].c_str(), row_no);
                    break;
                case CovariateType::binary:
                    rec.covariates[c] =
                        parse_binary_cell(cell, schema.names[c].c_str(), row_no);
                    break;
                case CovariateType::categorical: {
                    const auto& lv = schema.levels[c];
                    auto it = std::find(lv.begin(), lv.end(), cell);
                    if (it == lv.end())
                        throw ValidationError("row " + std::to_string(row_no) +
                                              ": unknown level '" + cell + "' for " +
                                              schema.names[c]);
                    rec.covariates[c] = static_cast<double>(it - lv.begin());
                    break;
                }
            }
        }
        (rec.exposed ? n_exposed : n_unexposed)++;
        cohort.records.push_back(std::move(rec));
    }

    if (!cohort.records.empty() && (n_exposed == 0 || n_unexposed == 0))
        throw ValidationError("cohort has no " +
                              std::string(n_exposed == 0 ? "exposed" : "unexposed") +
                              " subjects");
    return cohort;
}

}  // namespace

Cohort parse_cohort(const std::string& csv_text, const CovariateSchema& schema) {
    return parse_cohort_impl(csv_text, &schema);
}

Cohort parse_cohort(const std::string& csv_text) { return parse_cohort_impl(csv_text, nullptr); }

std::string serialize_cohort(const Cohort& cohort) {
    CsvTable table;
    for (int c = 0; c < kFixedColumns; ++c) table.header.emplace_back(kFixedHeader[c]);
    for (const auto& n : cohort.schema.names) table.header.push_back(n);
    for (const auto& rec : cohort.records) {
        std::vector<std::string> row;
        row.push_back(rec.id);
        row.push_back(std::to_string(rec.exposed));
        row.push_back(rec.defect < 0 ? "NA" : std::to_string(rec.defect));
        row.push_back(format_double(rec.enroll_ga));
        row.push_back(format_double(rec.end_ga));
        row.push_back(end_reason_label(rec.end_reason));
        for (std::size_t c = 0; c < cohort.schema.size(); ++c) {
            double v = rec.covariates[c];
            switch (cohort.schema.types[c]) {
                case CovariateType::real: row.push_back(format_double(v)); break;
                case CovariateType::binary:
                    row.push_back(std::to_string(static_cast<int>(v)));
                    break;
                case CovariateType::categorical:
                    row.push_back(cohort.schema.levels[c][static_cast<std::size_t>(v)]);
                    break;
            }
        }
        table.rows.push_back(std::move(row));
    }
    return write_csv(table);
}

Cohort load_cohort_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open cohort file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_cohort(buf.str());
}

int OutcomeCounts::total() const {
    int t = 0;
    for (const int* arr : {live_birth, sab, stillbirth, tab, ltfu})
        t += arr[0] + arr[1] + arr[2];
    return t;
}

CohortSummary summarize(const Cohort& cohort) {
    CohortSummary s;
    for (int d : {0, 1})
        for (int m : {0, 1, -1}) s.groups[ObservedGroup{d, m}.label()] = GroupSummary{};

    for (const auto& rec : cohort.records) {
        OutcomeCounts& arm = rec.exposed ? s.exposed : s.unexposed;
        int slot = rec.defect == 1 ? 0 : rec.defect == 0 ? 1 : 2;
        switch (rec.end_reason) {
            case EndReason::sab_stillbirth:
                (rec.end_ga >= 20.0 ? arm.stillbirth : arm.sab)[slot]++;
                break;
            case EndReason::livebirth: arm.live_birth[slot]++; break;
            case EndReason::tab: arm.tab[slot]++; break;
            case EndReason::ltfu: arm.ltfu[slot]++; break;
        }
        GroupSummary& g = s.groups[classify_observed_group(rec).label()];
        g.size++;
        (rec.defect == 1 ? g.defect_yes : rec.defect == 0 ? g.defect_no : g.defect_missing)++;
    }
    return s;
}

DesignMatrix build_design(const Cohort& cohort) {
    DesignMatrix dm;
    dm.column_names.push_back("(intercept)");
    const auto& sch = cohort.schema;
    for (std::size_t c = 0; c < sch.size(); ++c) {
        if (sch.types[c] == CovariateType::categorical) {
            for (std::size_t l = 1; l < sch.levels[c].size(); ++l)
                dm.column_names.push_back(sch.names[c] + "=" + sch.levels[c][l]);
        } else {
            dm.column_names.push_back(sch.names[c]);
        }
    }
    dm.rows.reserve(cohort.size());
    for (const auto& rec : cohort.records) {
        std::vector<double> row;
        row.reserve(dm.cols());
        row.push_back(1.0);
        for (std::size_t c = 0; c < sch.size(); ++c) {
            if (sch.types[c] == CovariateType::categorical) {
                auto idx = static_cast<std::size_t>(rec.covariates[c]);
                for (std::size_t l = 1; l < sch.levels[c].size(); ++l)
                    row.push_back(idx == l ? 1.0 : 0.0);
            } else {
                row.push_back(rec.covariates[c]);
            }
        }
        dm.rows.push_back(std::move(row));
    }
    return dm;
}

}  // namespace terata
