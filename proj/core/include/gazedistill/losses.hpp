#pragma once

#include <cstdint>
#include <vector>

#include "gazedistill/gaze_masks.hpp"
#include "gazedistill/grid.hpp"
#include "gazedistill/nn.hpp"

namespace gazedistill {

/// Floor applied to every log argument.
constexpr double kLogFloor = 1e-12;

/// Per-pixel class labels with -1 for "unlabeled".
using LabelMap = Grid<std::int8_t>;
constexpr std::int8_t kUnlabeled = -1;

/// Teacher supervision from a gaze mask pair: foreground where m_hc is set,
/// background where m_bc is not set, unlabeled in the band between.
LabelMap partial_labels(const MaskPair& masks);

struct LossValue {
    double value = 0.0;
    nn::Tensor grad;       ///< dL/d(probabilities) of the differentiated input
    bool skipped = false;  ///< the loss had no support (empty label/region set)
};

/// Mean of -log p(label) over labeled pixels; returns 0 with `skipped` when
/// nothing is labeled.
LossValue pce_loss(const nn::Tensor& probs, const LabelMap& labels);

struct AfcValue {
    double value = 0.0;
    std::vector<nn::Tensor> grad;  ///< dL/dZ_k for each student stage
};

/// β · mean_k mean_p (1 − ⟨Z_k, X'_k⟩ / (‖Z_k‖‖X'_k‖ + ε)) with inner
/// products and norms over channels.
AfcValue afc_loss(const std::vector<nn::Tensor>& student, const std::vector<nn::Tensor>& teacher, double beta = 1.0,
                  double epsilon = 1e-6);

struct ConfidentRegions {
    BinaryMask omega_pos;
    BinaryMask omega_neg;
    double tau_pos = 0.8;
    double tau_neg = 0.2;
};

ConfidentRegions confident_regions(const nn::Tensor& probs_teacher, const nn::Tensor& probs_student,
                                   double tau_pos = 0.8, double tau_neg = 0.2);

struct CwcValue {
    double value = 0.0;
    double positive = 0.0;
    double negative = 0.0;
    nn::Tensor grad;  ///< dL/d(student probabilities)
    bool positive_empty = false;
    bool negative_empty = false;
};

/// Binary-class inverse term: −log(1 − p_S(opposite of the teacher's class)).
double inverse_consistency(double student_prob_opposite);

CwcValue cwc_loss(const nn::Tensor& probs_teacher, const nn::Tensor& probs_student, const ConfidentRegions& regions);

struct DarmConfig {
    double tau_dis = 0.5;
    int patch_side = 8;
    double rate = 0.5;
    std::uint64_t seed = 0;
};

struct Patch {
    int row = 0;
    int col = 0;
    int side = 0;
    bool operator==(const Patch&) const = default;
};

struct DarmResult {
    BinaryMask masked;        ///< M̃_bc
    BinaryMask disagreement;  ///< D
    std::vector<Patch> candidates;
    std::vector<Patch> selected;
};

/// Tiles the grid into full, non-overlapping s×s patches; patches lying
/// entirely inside the disagreement set are each selected with probability
/// `rate` and zeroed in the returned supervision.
DarmResult darm_mask(const nn::Tensor& probs_teacher, const nn::Tensor& probs_student, const BinaryMask& m_bc,
                     const DarmConfig& cfg, nn::Rng& rng);

/// Mean binary cross-entropy of the student's foreground probability
/// against a binary target over all pixels.
LossValue ce_loss(const nn::Tensor& probs_student, const BinaryMask& target);

struct LossWeights {
    double lambda_afc = 0.1;
    double lambda_cwc_max = 1.0;
    double beta = 1.0;
    double epsilon = 1e-6;
};

double student_objective(double ce, double afc, double cwc, const LossWeights& w, double warmup_factor);

}  // namespace gazedistill
