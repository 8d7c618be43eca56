#include "gazedistill/optim.hpp"

#include <cmath>
#include <numbers>

#include "gazedistill/errors.hpp"

namespace gazedistill {

double cosine_lr(long step, long total_steps, double lr_init) {
    if (total_steps < 1) throw ParameterError("cosine_lr: total_steps must be >= 1");
    if (step < 0 || step > total_steps) throw ParameterError("cosine_lr: step outside [0, total_steps]");
    if (step == total_steps) return 0.0;
    const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
    return lr_init * 0.5 * (1.0 + std::cos(phase));
}

double clip_grad_norm(nn::ParamStore& store, double max_norm) {
    if (!(max_norm > 0.0)) throw ParameterError("clip_grad_norm: max_norm must be positive");
    const double norm = store.grad_norm();
    if (norm > max_norm) store.scale_grad(max_norm / norm);
    return norm;
}

Adam::Adam(const nn::ParamStore& store, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : store.all()) {
        m_.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols()));
    }
}

void Adam::step(nn::ParamStore& store, double lr) {
    if (store.size() != m_.size()) throw StateError("Adam: parameter store changed size");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& p = store[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
        if (lr == 0.0) continue;
        p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
}

}  // namespace gazedistill
