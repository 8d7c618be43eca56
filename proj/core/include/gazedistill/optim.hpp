#pragma once

#include <vector>

#include <Eigen/Core>

#include "gazedistill/nn.hpp"

namespace gazedistill {

/// lr_init · ½(1 + cos(π · step / total_steps)), for 0 ≤ step ≤ total_steps.
double cosine_lr(long step, long total_steps, double lr_init);

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(nn::ParamStore& store, double max_norm);

class Adam {
public:
    explicit Adam(const nn::ParamStore& store, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(nn::ParamStore& store, double lr);
    long steps() const noexcept { return t_; }

private:
    double beta1_;
    double beta2_;
    double eps_;
    long t_ = 0;
    std::vector<Eigen::MatrixXd> m_;
    std::vector<Eigen::MatrixXd> v_;
};

}  // namespace gazedistill
