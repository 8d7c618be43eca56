#include "gazedistill/nn.hpp"

#include <cmath>
#include <limits>

namespace gazedistill::nn {

Tensor Tensor::from_image(const Image& image) {
    Tensor t(1, image.height(), image.width());
    for (std::size_t i = 0; i < image.size(); ++i) t.values(0, static_cast<Eigen::Index>(i)) = image[i];
    return t;
}

void require_same_shape(const Tensor& a, const Tensor& b, const std::string& context) {
    if (!a.same_shape(b)) {
        throw StructuralError(context + ": tensor shape " + std::to_string(a.channels) + "x" + std::to_string(a.height) +
                              "x" + std::to_string(a.width) + " vs " + std::to_string(b.channels) + "x" +
                              std::to_string(b.height) + "x" + std::to_string(b.width));
    }
}

// --- ParamStore ------------------------------------------------------------

std::size_t ParamStore::add(const std::string& name, Eigen::MatrixXd init) {
    if (index_.count(name) != 0) throw StructuralError("duplicate parameter " + name);
    const std::size_t id = params_.size();
    Param p{name, std::move(init), {}};
    p.grad = Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols());
    params_.push_back(std::move(p));
    index_[name] = id;
    return id;
}

std::size_t ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StructuralError("no parameter named " + name);
    return it->second;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.grad.setZero();
}

double ParamStore::grad_norm() const {
    double sq = 0.0;
    for (const auto& p : params_) sq += p.grad.squaredNorm();
    return std::sqrt(sq);
}

void ParamStore::scale_grad(double factor) {
    for (auto& p : params_) p.grad *= factor;
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

Eigen::MatrixXd normal_matrix(int rows, int cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
    }
    return m;
}

Eigen::MatrixXd he_normal(int rows, int cols, int fan_in, Rng& rng) {
    return normal_matrix(rows, cols, std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

// --- convolution -----------------------------------------------------------

RowMatrix im2col(const Tensor& x, int kernel) {
    const int pad = kernel / 2;
    const int h = x.height;
    const int w = x.width;
    RowMatrix col = RowMatrix::Zero(static_cast<Eigen::Index>(x.channels) * kernel * kernel, h * w);
    for (int c = 0; c < x.channels; ++c) {
        const double* src = x.values.row(c).data();
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                double* dst = col.row((c * kernel + ky) * kernel + kx).data();
                const int dy = ky - pad;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    const double* srow = src + sy * w + dx;
                    double* drow = dst + y * w;
                    for (int xx = x0; xx < x1; ++xx) drow[xx] = srow[xx];
                }
            }
        }
    }
    return col;
}

Tensor col2im(const RowMatrix& col, int channels, int height, int width, int kernel) {
    const int pad = kernel / 2;
    Tensor x(channels, height, width);
    for (int c = 0; c < channels; ++c) {
        double* dst = x.values.row(c).data();
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                const double* src = col.row((c * kernel + ky) * kernel + kx).data();
                const int dy = ky - pad;
                const int dx = kx - pad;
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(width, width - dx);
                for (int y = 0; y < height; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= height) continue;
                    double* drow = dst + sy * width + dx;
                    const double* srow = src + y * width;
                    for (int xx = x0; xx < x1; ++xx) drow[xx] += srow[xx];
                }
            }
        }
    }
    return x;
}

Conv2d Conv2d::create(ParamStore& store, const std::string& name, int in, int out, int kernel, Rng& rng) {
    Conv2d conv;
    conv.in = in;
    conv.out = out;
    conv.kernel = kernel;
    const int fan_in = in * kernel * kernel;
    conv.weight = store.add(name + ".weight", he_normal(out, fan_in, fan_in, rng));
    conv.bias = store.add(name + ".bias", Eigen::MatrixXd::Zero(out, 1));
    return conv;
}

Tensor Conv2d::forward(const ParamStore& store, const Tensor& x, RowMatrix& col) const {
    if (x.channels != in) {
        throw StructuralError("conv expects " + std::to_string(in) + " input channels, got " + std::to_string(x.channels));
    }
    Tensor y(out, x.height, x.width);
    if (kernel == 1) {
        col = x.values;
    } else {
        col = im2col(x, kernel);
    }
    y.values.noalias() = store[weight].value * col;
    y.values.colwise() += store[bias].value.col(0);
    return y;
}

Tensor Conv2d::backward(ParamStore& store, const RowMatrix& col, const Tensor& dy, int height, int width) const {
    store[weight].grad.noalias() += dy.values * col.transpose();
    store[bias].grad.col(0) += dy.values.rowwise().sum();
    RowMatrix dcol = store[weight].value.transpose() * dy.values;
    if (kernel == 1) {
        Tensor dx(in, height, width);
        dx.values = std::move(dcol);
        return dx;
    }
    return col2im(dcol, in, height, width, kernel);
}

// --- normalization ---------------------------------------------------------

InstanceNorm InstanceNorm::create(ParamStore& store, const std::string& name, int channels) {
    InstanceNorm n;
    n.channels = channels;
    n.gamma = store.add(name + ".gamma", Eigen::MatrixXd::Ones(channels, 1));
    n.beta = store.add(name + ".beta", Eigen::MatrixXd::Zero(channels, 1));
    return n;
}

Tensor InstanceNorm::forward(const ParamStore& store, const Tensor& x, Cache& cache) const {
    const double n = x.pixels();
    Tensor y(x.channels, x.height, x.width);
    cache.normalized.resize(x.channels, x.pixels());
    cache.inv_std.resize(x.channels);
    for (int c = 0; c < x.channels; ++c) {
        const double mean = x.values.row(c).sum() / n;
        const double var = (x.values.row(c).array() - mean).square().sum() / n;
        const double inv = 1.0 / std::sqrt(var + eps);
        cache.inv_std[c] = inv;
        cache.normalized.row(c) = (x.values.row(c).array() - mean) * inv;
        y.values.row(c) = cache.normalized.row(c).array() * store[gamma].value(c, 0) + store[beta].value(c, 0);
    }
    return y;
}

Tensor InstanceNorm::backward(ParamStore& store, const Cache& cache, const Tensor& dy) const {
    const double n = dy.pixels();
    Tensor dx(dy.channels, dy.height, dy.width);
    for (int c = 0; c < dy.channels; ++c) {
        const auto xhat = cache.normalized.row(c).array();
        const auto g = dy.values.row(c).array();
        store[gamma].grad(c, 0) += (g * xhat).sum();
        store[beta].grad(c, 0) += g.sum();
        const double gm = store[gamma].value(c, 0);
        const double mean_g = g.sum() / n;
        const double mean_gx = (g * xhat).sum() / n;
        dx.values.row(c) = gm * cache.inv_std[c] * (g - mean_g - xhat * mean_gx);
    }
    return dx;
}

Eigen::MatrixXd row_layer_norm(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& gamma, const Eigen::RowVectorXd& beta,
                               double eps, RowNormCache* cache) {
    const Eigen::Index rows = x.rows();
    const double c = static_cast<double>(x.cols());
    Eigen::MatrixXd normalized(rows, x.cols());
    Eigen::VectorXd inv_std(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double mean = x.row(i).sum() / c;
        const double var = (x.row(i).array() - mean).square().sum() / c;
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        normalized.row(i) = (x.row(i).array() - mean) * inv_std[i];
    }
    Eigen::MatrixXd y = (normalized.array().rowwise() * gamma.array()).rowwise() + beta.array();
    if (cache != nullptr) {
        cache->normalized = std::move(normalized);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Eigen::MatrixXd row_layer_norm_backward(const RowNormCache& cache, const Eigen::RowVectorXd& gamma,
                                        const Eigen::MatrixXd& dy, Eigen::RowVectorXd& dgamma,
                                        Eigen::RowVectorXd& dbeta) {
    const double c = static_cast<double>(dy.cols());
    dgamma += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
    dbeta += dy.colwise().sum();
    Eigen::MatrixXd dxhat = dy.array().rowwise() * gamma.array();
    Eigen::MatrixXd dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double mean_g = dxhat.row(i).sum() / c;
        const double mean_gx = (dxhat.row(i).array() * cache.normalized.row(i).array()).sum() / c;
        dx.row(i) = cache.inv_std[i] * (dxhat.row(i).array() - mean_g - cache.normalized.row(i).array() * mean_gx);
    }
    return dx;
}

// --- elementwise and resampling -------------------------------------------

Tensor leaky_relu(const Tensor& x) {
    Tensor y = x;
    y.values = x.values.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
    return y;
}

Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy) {
    Tensor dx = dy;
    dx.values = dy.values.binaryExpr(x.values, [](double g, double v) { return v > 0.0 ? g : kLeakySlope * g; });
    return dx;
}

Tensor max_pool2(const Tensor& x, std::vector<int>& argmax) {
    if (x.height % 2 != 0 || x.width % 2 != 0) throw StructuralError("max_pool2 requires even spatial dimensions");
    const int oh = x.height / 2;
    const int ow = x.width / 2;
    Tensor y(x.channels, oh, ow);
    argmax.assign(static_cast<std::size_t>(x.channels) * oh * ow, 0);
    for (int c = 0; c < x.channels; ++c) {
        for (int r = 0; r < oh; ++r) {
            for (int q = 0; q < ow; ++q) {
                int best = (2 * r) * x.width + 2 * q;
                double best_v = x.values(c, best);
                for (int dr = 0; dr < 2; ++dr) {
                    for (int dq = 0; dq < 2; ++dq) {
                        const int idx = (2 * r + dr) * x.width + 2 * q + dq;
                        if (x.values(c, idx) > best_v) {
                            best_v = x.values(c, idx);
                            best = idx;
                        }
                    }
                }
                y.values(c, r * ow + q) = best_v;
                argmax[static_cast<std::size_t>(c) * oh * ow + static_cast<std::size_t>(r * ow + q)] = best;
            }
        }
    }
    return y;
}

Tensor max_pool2_backward(const std::vector<int>& argmax, const Tensor& dy, int height, int width) {
    Tensor dx(dy.channels, height, width);
    const int n = dy.pixels();
    for (int c = 0; c < dy.channels; ++c) {
        for (int i = 0; i < n; ++i) {
            dx.values(c, argmax[static_cast<std::size_t>(c) * n + static_cast<std::size_t>(i)]) += dy.values(c, i);
        }
    }
    return dx;
}

Tensor upsample2(const Tensor& x) {
    Tensor y(x.channels, x.height * 2, x.width * 2);
    for (int c = 0; c < x.channels; ++c) {
        for (int r = 0; r < y.height; ++r) {
            for (int q = 0; q < y.width; ++q) y.values(c, r * y.width + q) = x.values(c, (r / 2) * x.width + q / 2);
        }
    }
    return y;
}

Tensor upsample2_backward(const Tensor& dy) {
    Tensor dx(dy.channels, dy.height / 2, dy.width / 2);
    for (int c = 0; c < dy.channels; ++c) {
        for (int r = 0; r < dy.height; ++r) {
            for (int q = 0; q < dy.width; ++q) dx.values(c, (r / 2) * dx.width + q / 2) += dy.values(c, r * dy.width + q);
        }
    }
    return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.height != b.height || a.width != b.width) throw StructuralError("concat_channels: spatial size mismatch");
    Tensor y(a.channels + b.channels, a.height, a.width);
    y.values.topRows(a.channels) = a.values;
    y.values.bottomRows(b.channels) = b.values;
    return y;
}

void split_channels(const Tensor& d, int first_channels, Tensor& da, Tensor& db) {
    da = Tensor(first_channels, d.height, d.width);
    db = Tensor(d.channels - first_channels, d.height, d.width);
    da.values = d.values.topRows(first_channels);
    db.values = d.values.bottomRows(d.channels - first_channels);
}

Tensor softmax_channels(const Tensor& logits) {
    Tensor p = logits;
    for (int i = 0; i < logits.pixels(); ++i) {
        const double m = logits.values.col(i).maxCoeff();
        double z = 0.0;
        for (int c = 0; c < logits.channels; ++c) {
            const double e = std::exp(logits.values(c, i) - m);
            p.values(c, i) = e;
            z += e;
        }
        p.values.col(i) /= z;
    }
    return p;
}

Tensor softmax_channels_backward(const Tensor& probs, const Tensor& dprobs) {
    Tensor dlogits = dprobs;
    for (int i = 0; i < probs.pixels(); ++i) {
        const double dot = probs.values.col(i).dot(dprobs.values.col(i));
        dlogits.values.col(i) = probs.values.col(i).array() * (dprobs.values.col(i).array() - dot);
    }
    return dlogits;
}

}  // namespace gazedistill::nn
