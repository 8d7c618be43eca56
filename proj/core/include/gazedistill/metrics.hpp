#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gazedistill/grid.hpp"

namespace gazedistill {

/// 2|a∩b| / (|a|+|b|); 1 when both are empty.
double dice(const BinaryMask& a, const BinaryMask& b);

/// Mean of foreground and background IoU; an absent class scores 1.
double miou(const BinaryMask& a, const BinaryMask& b);

/// Foreground pixels with a 4-neighbour in the background or on the border.
std::vector<std::pair<int, int>> boundary_pixels(const BinaryMask& mask);

/// Exact squared Euclidean distance from every pixel to the nearest set
/// pixel of `sites` (separable lower-envelope transform). Returns +inf
/// everywhere if `sites` is empty.
Grid<double> squared_distance_transform(const BinaryMask& sites);

/// Symmetric boundary-to-boundary nearest-neighbour distances, sorted.
/// Throws UndefinedMetricError if either mask is empty.
std::vector<double> surface_distances(const BinaryMask& a, const BinaryMask& b, double spacing = 1.0);

/// Linear interpolation between order statistics (q in [0,1]).
double percentile(std::vector<double> values, double q);

double hd95(const BinaryMask& a, const BinaryMask& b, double spacing = 1.0);
double asd(const BinaryMask& a, const BinaryMask& b, double spacing = 1.0);

double recall(const BinaryMask& prediction, const BinaryMask& truth);

struct MaskScores {
    double dice = 0.0;
    double miou = 0.0;
    std::optional<double> hd95;  ///< missing when a mask is empty
    std::optional<double> asd;
};

MaskScores score_masks(const BinaryMask& prediction, const BinaryMask& truth, double spacing = 1.0);

struct MetricSummary {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;
};

/// Mean and population standard deviation of the defined values.
MetricSummary summarize(const std::vector<std::optional<double>>& values);

/// JSON evaluation report: per-image scores plus aggregate mean/std.
std::string evaluation_report_json(const std::vector<std::string>& ids, const std::vector<MaskScores>& scores);

}  // namespace gazedistill
