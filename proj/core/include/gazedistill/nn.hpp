#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gazedistill/grid.hpp"

namespace gazedistill::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C×H×W activation stored as a channels × (H·W) matrix; column = row·W + col.
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    RowMatrix values;

    Tensor() = default;
    Tensor(int c, int h, int w) : channels(c), height(h), width(w), values(RowMatrix::Zero(c, h * w)) {}

    int pixels() const noexcept { return height * width; }
    bool same_shape(const Tensor& o) const noexcept {
        return channels == o.channels && height == o.height && width == o.width;
    }
    double& at(int c, int row, int col) { return values(c, row * width + col); }
    double at(int c, int row, int col) const { return values(c, row * width + col); }

    static Tensor from_image(const Image& image);
};

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& context);

struct Param {
    std::string name;
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
};

/// Named parameters in insertion order. Layers refer to entries by index.
class ParamStore {
public:
    std::size_t add(const std::string& name, Eigen::MatrixXd init);
    Param& operator[](std::size_t i) { return params_[i]; }
    const Param& operator[](std::size_t i) const { return params_[i]; }
    std::size_t find(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t size() const noexcept { return params_.size(); }
    bool empty() const noexcept { return params_.empty(); }
    std::vector<Param>& all() noexcept { return params_; }
    const std::vector<Param>& all() const noexcept { return params_; }

    void zero_grad();
    double grad_norm() const;
    void scale_grad(double factor);
    std::size_t scalar_count() const;

private:
    std::vector<Param> params_;
    std::map<std::string, std::size_t> index_;
};

using Rng = std::mt19937_64;

Eigen::MatrixXd he_normal(int rows, int cols, int fan_in, Rng& rng);
Eigen::MatrixXd normal_matrix(int rows, int cols, double stddev, Rng& rng);

/// k×k convolution, stride 1, zero padding k/2. Weight is out × (in·k·k).
struct Conv2d {
    int in = 0;
    int out = 0;
    int kernel = 3;
    std::size_t weight = 0;
    std::size_t bias = 0;

    static Conv2d create(ParamStore& store, const std::string& name, int in, int out, int kernel, Rng& rng);
    /// `col` receives the unfolded input needed by backward.
    Tensor forward(const ParamStore& store, const Tensor& x, RowMatrix& col) const;
    Tensor backward(ParamStore& store, const RowMatrix& col, const Tensor& dy, int height, int width) const;
};

RowMatrix im2col(const Tensor& x, int kernel);
Tensor col2im(const RowMatrix& col, int channels, int height, int width, int kernel);

/// Per-channel normalization over the spatial extent with affine γ, β.
struct InstanceNorm {
    int channels = 0;
    std::size_t gamma = 0;
    std::size_t beta = 0;
    double eps = 1e-5;

    struct Cache {
        RowMatrix normalized;
        Eigen::VectorXd inv_std;
    };

    static InstanceNorm create(ParamStore& store, const std::string& name, int channels);
    Tensor forward(const ParamStore& store, const Tensor& x, Cache& cache) const;
    Tensor backward(ParamStore& store, const Cache& cache, const Tensor& dy) const;
};

/// Layer normalization over channels at each spatial position; rows of `x`
/// are positions. Returns γ ⊙ x̂ + β.
struct RowNormCache {
    Eigen::MatrixXd normalized;
    Eigen::VectorXd inv_std;
};
Eigen::MatrixXd row_layer_norm(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& gamma, const Eigen::RowVectorXd& beta,
                               double eps, RowNormCache* cache);
Eigen::MatrixXd row_layer_norm_backward(const RowNormCache& cache, const Eigen::RowVectorXd& gamma,
                                        const Eigen::MatrixXd& dy, Eigen::RowVectorXd& dgamma,
                                        Eigen::RowVectorXd& dbeta);

constexpr double kLeakySlope = 0.01;
Tensor leaky_relu(const Tensor& x);
Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy);

/// 2×2 max pooling, stride 2. `argmax` stores the winning input column per output.
Tensor max_pool2(const Tensor& x, std::vector<int>& argmax);
Tensor max_pool2_backward(const std::vector<int>& argmax, const Tensor& dy, int height, int width);

Tensor upsample2(const Tensor& x);
Tensor upsample2_backward(const Tensor& dy);

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& d, int first_channels, Tensor& da, Tensor& db);

/// Softmax across channels at every pixel.
Tensor softmax_channels(const Tensor& logits);
Tensor softmax_channels_backward(const Tensor& probs, const Tensor& dprobs);

}  // namespace gazedistill::nn
