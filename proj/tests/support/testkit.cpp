#include "testkit.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>

#include <unistd.h>

namespace testkit {

using gazedistill::BinaryMask;
using gazedistill::nn::Tensor;

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

BinaryMask random_mask(Rng& rng, int height, int width, double density) {
    BinaryMask m(height, width, 0);
    std::bernoulli_distribution on(density);
    for (auto& v : m.data()) v = on(rng) ? 1 : 0;
    return m;
}

BinaryMask random_shape_mask(Rng& rng, int height, int width) {
    BinaryMask m(height, width, 0);
    const int shapes = uniform_int(rng, 1, 3);
    for (int s = 0; s < shapes; ++s) {
        if (uniform_int(rng, 0, 1) == 0) {
            const int r0 = uniform_int(rng, 0, height - 1);
            const int c0 = uniform_int(rng, 0, width - 1);
            const int r1 = uniform_int(rng, r0, height - 1);
            const int c1 = uniform_int(rng, c0, width - 1);
            for (int r = r0; r <= r1; ++r)
                for (int c = c0; c <= c1; ++c) m(r, c) = 1;
        } else {
            const double cr = uniform(rng, 0, height);
            const double cc = uniform(rng, 0, width);
            const double rad = uniform(rng, 0.5, std::max(height, width) / 2.0);
            for (int r = 0; r < height; ++r)
                for (int c = 0; c < width; ++c)
                    if (std::hypot(r + 0.5 - cr, c + 0.5 - cc) <= rad) m(r, c) = 1;
        }
    }
    if (gazedistill::count_set(m) == 0) m(uniform_int(rng, 0, height - 1), uniform_int(rng, 0, width - 1)) = 1;
    return m;
}

Tensor random_probs(Rng& rng, int classes, int height, int width, double floor) {
    Tensor t(classes, height, width);
    for (int p = 0; p < t.pixels(); ++p) {
        for (;;) {
            double sum = 0.0;
            for (int c = 0; c < classes; ++c) {
                t.values(c, p) = std::exp(uniform(rng, -3.0, 3.0));
                sum += t.values(c, p);
            }
            t.values.col(p) /= sum;
            if (t.values.col(p).minCoeff() >= floor) break;
        }
    }
    return t;
}

Tensor random_tensor(Rng& rng, int channels, int height, int width, double stddev) {
    Tensor t(channels, height, width);
    std::normal_distribution<double> n(0.0, stddev);
    for (Eigen::Index i = 0; i < t.values.size(); ++i) t.values.data()[i] = n(rng);
    return t;
}

Tensor constant_probs(int height, int width, double foreground) {
    Tensor t(2, height, width);
    t.values.row(0).setConstant(1.0 - foreground);
    t.values.row(1).setConstant(foreground);
    return t;
}

double relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
    const double scale = std::max(analytic.norm(), numeric.norm());
    if (scale == 0.0) return 0.0;
    return (analytic - numeric).norm() / scale;
}

Eigen::VectorXd numeric_gradient(const std::function<double()>& f, std::vector<double*> values, double step) {
    Eigen::VectorXd g(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
        double* v = values[i];
        const double saved = *v;
        *v = saved + step;
        const double plus = f();
        *v = saved - step;
        const double minus = f();
        *v = saved;
        g(static_cast<Eigen::Index>(i)) = (plus - minus) / (2.0 * step);
    }
    return g;
}

std::vector<double*> entries(Eigen::Ref<Eigen::MatrixXd> m) {
    std::vector<double*> out;
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(&m(r, c));
    return out;
}

std::vector<double*> entries(gazedistill::nn::RowMatrix& m) {
    std::vector<double*> out;
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(&m(r, c));
    return out;
}

Eigen::VectorXd flatten(const Eigen::MatrixXd& m) {
    Eigen::VectorXd v(m.size());
    Eigen::Index k = 0;
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) v(k++) = m(r, c);
    return v;
}

Eigen::VectorXd flatten(const gazedistill::nn::RowMatrix& m) {
    Eigen::VectorXd v(m.size());
    Eigen::Index k = 0;
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) v(k++) = m(r, c);
    return v;
}

double oracle_dice(const BinaryMask& a, const BinaryMask& b) {
    long inter = 0, na = 0, nb = 0;
    for (int r = 0; r < a.height(); ++r)
        for (int c = 0; c < a.width(); ++c) {
            na += a(r, c) != 0;
            nb += b(r, c) != 0;
            inter += a(r, c) != 0 && b(r, c) != 0;
        }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double oracle_miou(const BinaryMask& a, const BinaryMask& b) {
    double total = 0.0;
    for (int cls = 0; cls < 2; ++cls) {
        long inter = 0, uni = 0;
        for (int r = 0; r < a.height(); ++r)
            for (int c = 0; c < a.width(); ++c) {
                const bool x = (a(r, c) != 0) == (cls == 1);
                const bool y = (b(r, c) != 0) == (cls == 1);
                inter += x && y;
                uni += x || y;
            }
        total += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
    return total / 2.0;
}

std::vector<std::pair<int, int>> oracle_boundary(const BinaryMask& m) {
    std::vector<std::pair<int, int>> out;
    auto bg = [&](int r, int c) { return r < 0 || c < 0 || r >= m.height() || c >= m.width() || m(r, c) == 0; };
    for (int r = 0; r < m.height(); ++r)
        for (int c = 0; c < m.width(); ++c)
            if (m(r, c) != 0 && (bg(r - 1, c) || bg(r + 1, c) || bg(r, c - 1) || bg(r, c + 1))) out.emplace_back(r, c);
    return out;
}

std::vector<double> oracle_surface_distances(const BinaryMask& a, const BinaryMask& b) {
    const auto ba = oracle_boundary(a);
    const auto bb = oracle_boundary(b);
    std::vector<double> d;
    auto nearest = [](std::pair<int, int> p, const std::vector<std::pair<int, int>>& set) {
        long best = std::numeric_limits<long>::max();
        for (auto q : set) {
            const long dr = p.first - q.first;
            const long dc = p.second - q.second;
            best = std::min(best, dr * dr + dc * dc);
        }
        return std::sqrt(static_cast<double>(best));
    };
    for (auto p : ba) d.push_back(nearest(p, bb));
    for (auto p : bb) d.push_back(nearest(p, ba));
    std::sort(d.begin(), d.end());
    return d;
}

double oracle_percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double rank = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, v.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

double oracle_hd95(const BinaryMask& a, const BinaryMask& b) { return oracle_percentile(oracle_surface_distances(a, b), 0.95); }

double oracle_asd(const BinaryMask& a, const BinaryMask& b) {
    const auto d = oracle_surface_distances(a, b);
    double s = 0.0;
    for (double x : d) s += x;
    return s / static_cast<double>(d.size());
}

bool within_binomial_band(std::size_t successes, std::size_t trials, double p, double sigmas) {
    const double n = static_cast<double>(trials);
    const double sd = std::sqrt(n * p * (1.0 - p));
    return std::abs(static_cast<double>(successes) - n * p) <= sigmas * sd;
}

}  // namespace testkit
