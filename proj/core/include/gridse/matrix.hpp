#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace gridse {

/// Dense row-major matrix of doubles. Plain value type used for feature
/// tables and report data; the autodiff engine has its own tensor type.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), v_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), v_(std::move(values)) {
        if (v_.size() != rows_ * cols_) throw std::invalid_argument("Matrix: data size does not match shape");
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return v_.empty(); }

    double& at(std::size_t r, std::size_t c) { return v_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return v_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {v_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {v_.data() + r * cols_, cols_}; }

    const std::vector<double>& data() const noexcept { return v_; }
    std::vector<double>& data() noexcept { return v_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> v_;
};

}  // namespace gridse
