#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

#include "gridse/matrix.hpp"
#include "gridse/rng.hpp"

namespace gridse::ad {

class Tape;

/// Dense 2-D tensor of 64-bit reals. A Tensor is a cheap handle: it shares
/// its value buffer and, when it participates in differentiation, carries
/// its node id on the Tape that recorded it. Vectors are n x 1, scalars
/// 1 x 1.
class Tensor {
public:
    Tensor() = default;

    static Tensor constant(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor constant(const Matrix& m);
    static Tensor zeros(std::size_t rows, std::size_t cols);
    static Tensor scalar(double value);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return rows_ * cols_; }
    bool defined() const noexcept { return data_ != nullptr; }

    const std::vector<double>& values() const { return *data_; }
    double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols_ + c]; }
    /// Value of a 1x1 tensor.
    double value() const;

    bool requires_grad() const noexcept { return node_ >= 0; }
    /// Same values, no gradient tracking.
    Tensor detach() const;

private:
    friend class Tape;
    std::shared_ptr<const std::vector<double>> data_;
    std::size_t rows_ = 0, cols_ = 0;
    std::ptrdiff_t node_ = -1;
    const Tape* tape_ = nullptr;
};

/// Reverse-mode differentiation tape. Operations record their backward
/// closures in topological (creation) order; backward() visits each record
/// exactly once, newest first. A Tape is built per forward pass and is
/// single-threaded.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Tracked leaf tensor (parameter or input under test).
    Tensor leaf(std::size_t rows, std::size_t cols, std::vector<double> values);
    Tensor leaf(const Matrix& m);

    // -- forward operations ------------------------------------------------
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, double factor);
    /// mat + bias broadcast over rows (bias is 1 x d).
    Tensor add_bias(const Tensor& mat, const Tensor& bias);
    Tensor concat_cols(const std::vector<Tensor>& parts);
    Tensor slice_cols(const Tensor& a, std::size_t first, std::size_t count);
    Tensor gather_rows(const Tensor& a, std::vector<std::size_t> indices);
    Tensor segment_sum(const Tensor& a, std::vector<std::size_t> segments, std::size_t num_segments);
    Tensor segment_mean(const Tensor& a, std::vector<std::size_t> segments, std::size_t num_segments);
    /// Softmax of an E x 1 score column within each segment.
    Tensor segment_softmax(const Tensor& scores, std::vector<std::size_t> segments,
                           std::size_t num_segments);
    Tensor row_softmax(const Tensor& a);
    /// Scales row r of mat by column vector entry s[r].
    Tensor row_scale(const Tensor& mat, const Tensor& s);
    Tensor rowwise_sum(const Tensor& a);
    Tensor sum_all(const Tensor& a);
    Tensor mean_all(const Tensor& a);
    Tensor elu(const Tensor& a);
    Tensor leaky_relu(const Tensor& a, double negative_slope);
    Tensor sigmoid(const Tensor& a);
    Tensor tanh(const Tensor& a);
    Tensor cwise_max(const Tensor& a, const Tensor& b);
    /// Per-row normalization over features with learned gain/bias (1 x d).
    Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon = 1e-5);
    /// Inverted dropout; identity when !training or p == 0. The mask is
    /// drawn from rng and saved for the backward pass.
    Tensor dropout(const Tensor& a, double p, Rng& rng, bool training);

    /// Reverse-mode pass from a scalar loss. Throws std::invalid_argument
    /// if loss is not 1x1 or not recorded on this tape.
    void backward(const Tensor& loss);

    /// Gradient of a tensor after backward(); zeros for tensors that are
    /// untracked or unreachable from the loss.
    std::vector<double> grad(const Tensor& t) const;

    std::size_t num_nodes() const noexcept { return nodes_.size(); }

private:
    struct Node {
        std::size_t rows = 0, cols = 0;
        std::function<void(Tape&)> backprop;  // null for leaves
    };

    Tensor make(std::size_t rows, std::size_t cols, std::vector<double> values, bool tracked,
                std::function<void(Tape&)> backprop);
    std::vector<double>& grad_buffer(std::ptrdiff_t node);
    bool tracked_here(const Tensor& t) const;

    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
};

}  // namespace gridse::ad
