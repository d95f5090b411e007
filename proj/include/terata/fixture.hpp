#pragma once

#include "terata/cohort.hpp"

namespace terata {

// Deterministic 494-subject synthetic cohort shaped like the OTIS antiasthmatic
// study: exact outcome-by-arm and observed-group margins, exact asthma and
// referral-source counts, heights drawn once from the published arm means.
// Every call returns byte-identical data; data/fixture_otis.csv is its
// serialization and is regenerated by tools/make_fixture.
Cohort otis_fixture();

}  // namespace terata
