#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "terata/ate.hpp"
#include "terata/pe.hpp"

namespace terata {

// Inclusive arithmetic range lo, lo+step, ..., hi. Commensurate decimal steps
// keep the endpoint despite representation drift, so "0:5:0.5" has exactly 11
// values; values never exceed hi by more than drift.
struct GridAxis {
    std::string name;
    double lo = 0.0;
    double hi = 0.0;
    double step = 1.0;

    std::size_t count() const;
    std::vector<double> values() const;
};

// CLI axis syntax "name=lo:hi:step".
GridAxis parse_axis(const std::string& text);

struct SensitivityCell {
    std::vector<double> coords;  // one value per axis, axes order
    bool converged = false;
    int iterations = 0;
    std::string error;            // fit or bootstrap failure message
    std::vector<double> metrics;  // aligned with SensitivityGrid::metric_names
    // per-subject posterior tables: tables[t][s] pairs table_names[t] with
    // table_ids[s]; NaN-filled when the cell's fit failed
    std::vector<std::vector<double>> tables;
};

// Row-major cell layout with the last axis fastest, so a fixed setting of the
// leading axes is one contiguous run.
struct SensitivityGrid {
    std::vector<GridAxis> axes;
    std::vector<std::string> metric_names;
    std::vector<std::string> table_names;
    std::vector<std::string> table_ids;  // subject ids, shared by every cell
    std::vector<SensitivityCell> cells;
};

struct SweepOptions {
    GridAxis axis{"beta_y", 0.0, 5.0, 0.5};
    EsOptions es;
    int boot_B = 0;  // 0 skips the per-cell bootstrap; CI metrics stay NaN
    std::uint64_t seed = 1;
    int jobs = 0;
};

// Refits the treatment-effect model with beta_y frozen at each axis value.
// The posterior_missing table tracks P(Y=1 | observed) for event subjects
// with missing defect status, the curves that fan upward as beta_y grows.
SensitivityGrid ate_beta_y_sweep(const Cohort& cohort, const WeightVector& weights,
                                 const SweepOptions& opts = {});

// alpha0_ns, alpha0_nn in [-2, 0] and alphaD_nn in [-2, 2], step 0.5:
// the 5 x 5 x 9 = 225 cell default.
std::vector<GridAxis> default_pe_axes();

struct PeGridOptions {
    std::vector<GridAxis> axes = default_pe_axes();
    EsOptions es;
    int boot_B = 0;
    std::uint64_t seed = 1;
    int jobs = 0;  // chains along the leading axes run in parallel
};

// One strata-model fit per cell. Axis names select OffsetSpec coordinates and
// override the base spec; cells along the last axis warm-start from the
// nearest preceding converged cell of their chain. Failed cells record the
// error and the sweep continues.
SensitivityGrid pe_offset_grid(const Cohort& cohort, const WeightVector& weights,
                               const OffsetSpec& base, const PeGridOptions& opts = {});

// Writes <stem>.csv (one row per cell), <stem>_posteriors.csv (one row per
// cell and subject, only when the grid carries tables) and
// <stem>_manifest.json. Bytes are identical across repeated exports of the
// same grid. Returns the paths written.
std::vector<std::string> export_grid(const SensitivityGrid& grid, const std::string& stem);

}  // namespace terata
