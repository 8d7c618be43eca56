#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gazedistill/gaze_masks.hpp"
#include "gazedistill/grid.hpp"
#include "gazedistill/report.hpp"

namespace gazedistill {

struct SceneSpec {
    int image_side = 64;
    int lesion_count = 1;
    double radius_min = 8.0;
    double radius_max = 16.0;
    double texture_noise = 0.08;
    int gaze_points = 40;
    double gaze_jitter_px = 2.0;
    double distractor_rate = 0.2;
    double background_level = 0.3;
    double lesion_level = 0.7;
    /// Benign round look-alikes that are not part of the ground truth.
    int mimic_count = 0;
    double mimic_radius_min = 3.0;
    double mimic_radius_max = 5.0;
    double mimic_level = 0.6;
    /// Probability that a mimic draws distractor fixations at all.
    double mimic_attention = 0.5;
    /// Share of distractor fixations placed on attended mimics.
    double mimic_fixation_share = 0.0;
    std::uint64_t seed = 0;

    /// Throws ParameterError when a field is out of range.
    void validate() const;
};

struct Mimic {
    double row = 0.0;
    double col = 0.0;
    double radius = 0.0;
    bool attended = false;
};

struct Scene {
    Image image;
    BinaryMask gt;
    double center_row = 0.0;  ///< continuous coordinates, pixel (r, c) has centre (r + 0.5, c + 0.5)
    double center_col = 0.0;
    std::vector<Mimic> mimics;
};

/// Star-convex blob on a flat background. The blob radius stays inside
/// [radius_min, radius_max] at every angle.
Scene gen_scene(const SceneSpec& spec);

/// Fixations: inside-lesion points with jitter plus uniform distractors.
std::vector<GazeRecord> simulate_gaze(const BinaryMask& gt, const SceneSpec& spec);

/// As above; a share of the distractors lands on attended mimics.
std::vector<GazeRecord> simulate_gaze(const Scene& scene, const SceneSpec& spec);

/// Rule-based stand-in for a provider report.
LesionReport simulate_report(const BinaryMask& gt);

/// 4πA/P² with P taken from the count of exposed pixel edges scaled by π/4.
double isoperimetric_ratio(const BinaryMask& mask);

/// (lattice points in the convex hull of the mask − mask pixels) / hull points.
double convexity_defect(const BinaryMask& mask);

inline constexpr double kClearBoundaryRatio = 0.8;
inline constexpr double kSmoothDefect = 0.05;

/// Spec for the i-th scene of a dataset with base seed `seed`.
SceneSpec scene_spec_for(const SceneSpec& base, std::uint64_t seed, int index);

std::string scene_id(int index);

struct DatasetSummary {
    int count = 0;
    std::string manifest_sha256;
};

/// Writes images/, masks/, gaze/, reports/ and manifest.json under `dir`.
DatasetSummary write_dataset(const std::string& dir, const SceneSpec& base, int count);

}  // namespace gazedistill
