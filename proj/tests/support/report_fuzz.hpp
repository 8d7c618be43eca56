#pragma once

#include <string>
#include <vector>

#include "gazedistill/report.hpp"
#include "testkit.hpp"

namespace testkit {

struct FuzzReport {
    std::string json;
    gazedistill::ReportErrorKind expected;
    std::string field;
};

/// A valid provider response built from random vocabulary choices.
std::string random_valid_report_json(Rng& rng);

/// Reports with exactly one corrupted field: out-of-vocabulary enum values,
/// out-of-range areas, or a removed key.
std::vector<FuzzReport> invalid_report_corpus(Rng& rng, int count);

/// Random printable string that does not normalize onto any vocabulary word.
std::string out_of_vocabulary_word(Rng& rng);

}  // namespace testkit
