#pragma once

#include <cstddef>
#include <istream>
#include <string>
#include <vector>

#include "gazedistill/grid.hpp"

namespace gazedistill {

/// One fixation event. Coordinates are normalized to [0,1] (x = column, y = row).
struct GazeRecord {
    double x = 0.0;
    double y = 0.0;
    double duration_ms = 0.0;
    double confidence = 1.0;

    bool operator==(const GazeRecord&) const = default;
};

enum class GazeFormat { csv, json };

struct GazeLog {
    std::vector<GazeRecord> records;
    /// Number of coordinate/confidence values clamped into range while loading.
    std::size_t clamp_warnings = 0;
};

/// Parses a gaze log. CSV expects the header `x,y,duration_ms,confidence`;
/// JSON expects an array of objects with those keys. Throws RecordError
/// carrying the 1-based line (CSV) or element index (JSON) of a bad record.
GazeLog load_gaze(std::istream& source, GazeFormat format);
GazeLog load_gaze_file(const std::string& path);

void write_gaze_csv(std::ostream& out, const std::vector<GazeRecord>& records);

struct DensityMap {
    Grid<double> values;
    double sigma_px = 0.0;
};

/// Duration-weighted Gaussian splatting, peak-normalized to 1.
/// Records are accumulated in a canonical order so the result does not
/// depend on the order of `records`.
DensityMap density_map(const std::vector<GazeRecord>& records, int height, int width, double sigma_px);

/// Default kernel radius: 3% of the shorter image side.
double default_sigma_px(int height, int width);

struct MaskPair {
    BinaryMask m_hc;
    BinaryMask m_bc;
    double tau_hc = 0.7;
    double tau_bc = 0.3;
};

struct MaskParams {
    double sigma_px = 0.0;  ///< <= 0 selects default_sigma_px
    double tau_hc = 0.7;
    double tau_bc = 0.3;
    int min_component_px = 16;
};

/// Dual super-level thresholding. Components of m_bc below `min_component_px`
/// (4-connected) are dropped and m_hc is intersected with the cleaned m_bc.
MaskPair threshold_masks(const DensityMap& dm, double tau_hc, double tau_bc, int min_component_px);

MaskPair masks_from_gaze(const std::vector<GazeRecord>& records, int height, int width, const MaskParams& params);

/// Removes 4-connected foreground components with fewer than `min_pixels` pixels.
BinaryMask remove_small_components(const BinaryMask& mask, int min_pixels);

}  // namespace gazedistill
