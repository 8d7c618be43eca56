#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gazedistill/errors.hpp"

namespace gazedistill {

/// Dense row-major H×W grid. Index (row, col).
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width), data_(static_cast<std::size_t>(checked(height, width)), fill) {}

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(int row, int col) { return data_[index(row, col)]; }
    const T& operator()(int row, int col) const { return data_[index(row, col)]; }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    bool same_shape(const Grid<T>& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_;
    }
    bool operator==(const Grid& other) const = default;

private:
    static long checked(int height, int width) {
        if (height < 0 || width < 0) throw ParameterError("grid dimensions must be nonnegative");
        return static_cast<long>(height) * width;
    }
    std::size_t index(int row, int col) const noexcept {
        return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(col);
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

using Image = Grid<double>;
using BinaryMask = Grid<std::uint8_t>;

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const std::string& context) {
    if (a.height() != b.height() || a.width() != b.width()) {
        throw StructuralError(context + ": shape mismatch " + std::to_string(a.height()) + "x" +
                              std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                              std::to_string(b.width()));
    }
}

inline std::size_t count_set(const BinaryMask& mask) {
    std::size_t n = 0;
    for (auto v : mask.data()) n += v != 0;
    return n;
}

}  // namespace gazedistill
