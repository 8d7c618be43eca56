#include "gazedistill/losses.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace gazedistill {

using nn::Tensor;

namespace {

double safe_log(double p) { return std::log(std::max(p, kLogFloor)); }

// d/dp of -log(max(p, floor))
double neg_log_grad(double p) { return p > kLogFloor ? -1.0 / p : 0.0; }

void require_grid(const Tensor& probs, int height, int width, const char* context) {
    if (probs.height != height || probs.width != width) {
        throw StructuralError(std::string(context) + ": probability map is " + std::to_string(probs.height) + "x" +
                              std::to_string(probs.width) + ", mask is " + std::to_string(height) + "x" +
                              std::to_string(width));
    }
}

void require_binary(const Tensor& probs, const char* context) {
    if (probs.channels != 2) {
        throw StructuralError(std::string(context) + ": expected 2 classes, got " + std::to_string(probs.channels));
    }
}

}  // namespace

LabelMap partial_labels(const MaskPair& masks) {
    require_same_shape(masks.m_hc, masks.m_bc, "partial_labels");
    LabelMap labels(masks.m_hc.height(), masks.m_hc.width(), kUnlabeled);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (masks.m_hc[i] != 0) {
            labels[i] = 1;
        } else if (masks.m_bc[i] == 0) {
            labels[i] = 0;
        }
    }
    return labels;
}

LossValue pce_loss(const Tensor& probs, const LabelMap& labels) {
    require_grid(probs, labels.height(), labels.width(), "pce_loss");
    LossValue out;
    out.grad = Tensor(probs.channels, probs.height, probs.width);
    std::size_t labeled = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) labeled += labels[i] != kUnlabeled;
    if (labeled == 0) {
        out.skipped = true;
        return out;
    }
    const double inv_n = 1.0 / static_cast<double>(labeled);
    double sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int cls = labels[i];
        if (cls == kUnlabeled) continue;
        if (cls < 0 || cls >= probs.channels) throw StructuralError("pce_loss: label outside the class range");
        const auto col = static_cast<Eigen::Index>(i);
        const double p = probs.values(cls, col);
        sum -= safe_log(p);
        out.grad.values(cls, col) = neg_log_grad(p) * inv_n;
    }
    out.value = sum * inv_n;
    return out;
}

AfcValue afc_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher, double beta, double epsilon) {
    if (student.size() != teacher.size() || student.empty()) {
        throw StructuralError("afc_loss: stage count mismatch (" + std::to_string(student.size()) + " vs " +
                              std::to_string(teacher.size()) + ")");
    }
    AfcValue out;
    out.grad.resize(student.size());
    const double stage_weight = beta / static_cast<double>(student.size());
    for (std::size_t k = 0; k < student.size(); ++k) {
        const Tensor& z = student[k];
        const Tensor& x = teacher[k];
        nn::require_same_shape(z, x, "afc_loss stage " + std::to_string(k + 1));
        Tensor& g = out.grad[k];
        g = Tensor(z.channels, z.height, z.width);
        const double scale = stage_weight / static_cast<double>(z.pixels());
        double stage_sum = 0.0;
        for (int p = 0; p < z.pixels(); ++p) {
            const auto zc = z.values.col(p);
            const auto xc = x.values.col(p);
            const double dot = zc.dot(xc);
            const double zn = zc.norm();
            const double xn = xc.norm();
            const double denom = zn * xn + epsilon;
            stage_sum += 1.0 - dot / denom;
            // d(dot/denom)/dz = x/denom - dot·xn·z/(zn·denom²)
            Eigen::VectorXd dcos = xc / denom;
            if (zn > 0.0) dcos -= (dot * xn / (zn * denom * denom)) * zc;
            g.values.col(p) = -scale * dcos;
        }
        out.value += stage_weight * stage_sum / static_cast<double>(z.pixels());
    }
    return out;
}

ConfidentRegions confident_regions(const Tensor& probs_teacher, const Tensor& probs_student, double tau_pos,
                                   double tau_neg) {
    if (!(tau_pos > 0.0 && tau_pos < 1.0) || !(tau_neg > 0.0 && tau_neg < 1.0)) {
        throw ParameterError("confident_regions: thresholds must lie in (0,1)");
    }
    nn::require_same_shape(probs_teacher, probs_student, "confident_regions");
    ConfidentRegions r{BinaryMask(probs_teacher.height, probs_teacher.width, 0),
                       BinaryMask(probs_teacher.height, probs_teacher.width, 0), tau_pos, tau_neg};
    for (int p = 0; p < probs_teacher.pixels(); ++p) {
        const auto t = probs_teacher.values.col(p);
        const auto s = probs_student.values.col(p);
        const auto i = static_cast<std::size_t>(p);
        r.omega_pos[i] = (t.maxCoeff() >= tau_pos && s.maxCoeff() >= tau_pos) ? 1 : 0;
        r.omega_neg[i] = (t.minCoeff() <= tau_neg && s.minCoeff() <= tau_neg) ? 1 : 0;
    }
    return r;
}

double inverse_consistency(double student_prob_opposite) { return -safe_log(1.0 - student_prob_opposite); }

CwcValue cwc_loss(const Tensor& probs_teacher, const Tensor& probs_student, const ConfidentRegions& regions) {
    nn::require_same_shape(probs_teacher, probs_student, "cwc_loss");
    require_binary(probs_teacher, "cwc_loss");
    require_grid(probs_teacher, regions.omega_pos.height(), regions.omega_pos.width(), "cwc_loss");
    CwcValue out;
    out.grad = Tensor(probs_student.channels, probs_student.height, probs_student.width);
    const std::size_t n_pos = count_set(regions.omega_pos);
    const std::size_t n_neg = count_set(regions.omega_neg);
    out.positive_empty = n_pos == 0;
    out.negative_empty = n_neg == 0;

    for (int p = 0; p < probs_teacher.pixels(); ++p) {
        const auto i = static_cast<std::size_t>(p);
        const bool in_pos = regions.omega_pos[i] != 0;
        const bool in_neg = regions.omega_neg[i] != 0;
        if (!in_pos && !in_neg) continue;
        const int y_teacher = probs_teacher.values(1, p) > probs_teacher.values(0, p) ? 1 : 0;
        const int opposite = 1 - y_teacher;
        if (in_pos) {
            const double w = probs_teacher.values.col(p).maxCoeff();
            const double ps = probs_student.values(y_teacher, p);
            out.positive += w * -safe_log(ps) / static_cast<double>(n_pos);
            out.grad.values(y_teacher, p) += w * neg_log_grad(ps) / static_cast<double>(n_pos);
        }
        if (in_neg) {
            const double w = probs_teacher.values.col(p).minCoeff();
            const double q = probs_student.values(opposite, p);
            out.negative += w * inverse_consistency(q) / static_cast<double>(n_neg);
            // d/dq −log(1 − q) = 1/(1 − q)
            if (1.0 - q > kLogFloor) out.grad.values(opposite, p) += w / ((1.0 - q) * static_cast<double>(n_neg));
        }
    }
    out.value = out.positive + out.negative;
    return out;
}

DarmResult darm_mask(const Tensor& probs_teacher, const Tensor& probs_student, const BinaryMask& m_bc,
                     const DarmConfig& cfg, nn::Rng& rng) {
    nn::require_same_shape(probs_teacher, probs_student, "darm_mask");
    require_grid(probs_teacher, m_bc.height(), m_bc.width(), "darm_mask");
    if (cfg.patch_side < 1) throw ParameterError("darm_mask: patch side must be >= 1");
    if (!(cfg.rate >= 0.0 && cfg.rate <= 1.0)) throw ParameterError("darm_mask: rate must lie in [0,1]");

    const int h = m_bc.height();
    const int w = m_bc.width();
    DarmResult out{m_bc, BinaryMask(h, w, 0), {}, {}};
    for (int p = 0; p < probs_teacher.pixels(); ++p) {
        const double diff = (probs_teacher.values.col(p) - probs_student.values.col(p)).cwiseAbs().maxCoeff();
        out.disagreement[static_cast<std::size_t>(p)] = diff >= cfg.tau_dis ? 1 : 0;
    }
    const int s = cfg.patch_side;
    std::bernoulli_distribution pick(cfg.rate);
    for (int r0 = 0; r0 + s <= h; r0 += s) {
        for (int c0 = 0; c0 + s <= w; c0 += s) {
            bool inside = true;
            for (int r = r0; r < r0 + s && inside; ++r) {
                for (int c = c0; c < c0 + s; ++c) {
                    if (out.disagreement(r, c) == 0) {
                        inside = false;
                        break;
                    }
                }
            }
            if (!inside) continue;
            const Patch patch{r0, c0, s};
            out.candidates.push_back(patch);
            if (!pick(rng)) continue;
            out.selected.push_back(patch);
            for (int r = r0; r < r0 + s; ++r) {
                for (int c = c0; c < c0 + s; ++c) out.masked(r, c) = 0;
            }
        }
    }
    return out;
}

LossValue ce_loss(const Tensor& probs_student, const BinaryMask& target) {
    require_binary(probs_student, "ce_loss");
    require_grid(probs_student, target.height(), target.width(), "ce_loss");
    LossValue out;
    out.grad = Tensor(probs_student.channels, probs_student.height, probs_student.width);
    const double inv_n = 1.0 / static_cast<double>(probs_student.pixels());
    double sum = 0.0;
    for (int p = 0; p < probs_student.pixels(); ++p) {
        const double y = probs_student.values(1, p);
        if (target[static_cast<std::size_t>(p)] != 0) {
            sum -= safe_log(y);
            out.grad.values(1, p) = neg_log_grad(y) * inv_n;
        } else {
            sum -= safe_log(1.0 - y);
            out.grad.values(1, p) = (1.0 - y > kLogFloor ? 1.0 / (1.0 - y) : 0.0) * inv_n;
        }
    }
    out.value = sum * inv_n;
    return out;
}

double student_objective(double ce, double afc, double cwc, const LossWeights& w, double warmup_factor) {
    if (w.lambda_afc < 0.0 || w.lambda_cwc_max < 0.0) throw ParameterError("student_objective: negative loss weight");
    if (!(warmup_factor >= 0.0 && warmup_factor <= 1.0)) {
        throw ParameterError("student_objective: warmup factor must lie in [0,1]");
    }
    return ce + w.lambda_afc * afc + warmup_factor * w.lambda_cwc_max * cwc;
}

}  // namespace gazedistill
