#include "gridse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace gridse::ad {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string shape_str(std::size_t r, std::size_t c) {
    return std::to_string(r) + "x" + std::to_string(c);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        fail(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
             shape_str(b.rows(), b.cols()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

Tensor Tensor::constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols)
        fail("Tensor::constant: data size " + std::to_string(values.size()) + " does not match shape " +
             shape_str(rows, cols));
    Tensor t;
    t.data_ = std::make_shared<const std::vector<double>>(std::move(values));
    t.rows_ = rows;
    t.cols_ = cols;
    return t;
}

Tensor Tensor::constant(const Matrix& m) { return constant(m.rows(), m.cols(), m.data()); }

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
    return constant(rows, cols, std::vector<double>(rows * cols, 0.0));
}

Tensor Tensor::scalar(double value) { return constant(1, 1, {value}); }

double Tensor::value() const {
    if (size() != 1) fail("Tensor::value: tensor is " + shape_str(rows_, cols_) + ", not a scalar");
    return (*data_)[0];
}

Tensor Tensor::detach() const {
    Tensor t = *this;
    t.node_ = -1;
    t.tape_ = nullptr;
    return t;
}

// ---------------------------------------------------------------------------
// Tape basics
// ---------------------------------------------------------------------------

bool Tape::tracked_here(const Tensor& t) const {
    if (t.node_ < 0) return false;
    if (t.tape_ != this) fail("tape: tensor was recorded on a different tape");
    return true;
}

Tensor Tape::make(std::size_t rows, std::size_t cols, std::vector<double> values, bool tracked,
                  std::function<void(Tape&)> backprop) {
    Tensor t = Tensor::constant(rows, cols, std::move(values));
    if (!tracked) return t;
    t.tape_ = this;
    t.node_ = static_cast<std::ptrdiff_t>(nodes_.size());
    nodes_.push_back({rows, cols, std::move(backprop)});
    return t;
}

Tensor Tape::leaf(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return make(rows, cols, std::move(values), true, nullptr);
}

Tensor Tape::leaf(const Matrix& m) { return leaf(m.rows(), m.cols(), m.data()); }

std::vector<double>& Tape::grad_buffer(std::ptrdiff_t node) {
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(node)].rows * nodes_[static_cast<std::size_t>(node)].cols, 0.0);
    return g;
}

void Tape::backward(const Tensor& loss) {
    if (loss.node_ < 0 || loss.tape_ != this) fail("backward: loss is not recorded on this tape");
    if (loss.size() != 1)
        fail("backward: loss must be a scalar, got " + shape_str(loss.rows(), loss.cols()));
    grads_.assign(nodes_.size(), {});
    grad_buffer(loss.node_)[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (grads_[i].empty()) continue;  // unreachable from the loss
        if (nodes_[i].backprop) nodes_[i].backprop(*this);
    }
}

std::vector<double> Tape::grad(const Tensor& t) const {
    if (t.node_ >= 0 && t.tape_ == this && static_cast<std::size_t>(t.node_) < grads_.size() &&
        !grads_[static_cast<std::size_t>(t.node_)].empty())
        return grads_[static_cast<std::size_t>(t.node_)];
    return std::vector<double>(t.size(), 0.0);
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        fail("matmul: incompatible shapes " + shape_str(a.rows(), a.cols()) + " * " +
             shape_str(b.rows(), b.cols()));
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    std::vector<double> out(n * m, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv.data() + p * m;
            double* orow = out.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
        }

    const bool ta = tracked_here(a), tb = tracked_here(b);
    if (!ta && !tb) return Tensor::constant(n, m, std::move(out));
    auto an = a.node_, bn = b.node_;
    auto ad = a.data_, bd = b.data_;
    Tensor result = make(n, m, std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        if (ta) {
            auto& ga = tape.grad_buffer(an);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double gij = g[i * m + j];
                    if (gij == 0.0) continue;
                    const double* brow = bd->data() + 0;
                    for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gij * brow[p * m + j];
                }
        }
        if (tb) {
            auto& gb = tape.grad_buffer(bn);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = (*ad)[i * k + p];
                    if (aip == 0.0) continue;
                    const double* grow = g.data() + i * m;
                    for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += aip * grow[j];
                }
        }
    };
    return result;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    const bool ta = tracked_here(a), tb = tracked_here(b);
    if (!ta && !tb) return Tensor::constant(a.rows(), a.cols(), std::move(out));
    auto an = a.node_, bn = b.node_;
    Tensor result = make(a.rows(), a.cols(), std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        if (ta) {
            auto& ga = tape.grad_buffer(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tb) {
            auto& gb = tape.grad_buffer(bn);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    };
    return result;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    const bool ta = tracked_here(a), tb = tracked_here(b);
    if (!ta && !tb) return Tensor::constant(a.rows(), a.cols(), std::move(out));
    auto an = a.node_, bn = b.node_;
    Tensor result = make(a.rows(), a.cols(), std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        if (ta) {
            auto& ga = tape.grad_buffer(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (tb) {
            auto& gb = tape.grad_buffer(bn);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    };
    return result;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    const bool ta = tracked_here(a), tb = tracked_here(b);
    if (!ta && !tb) return Tensor::constant(a.rows(), a.cols(), std::move(out));
    auto an = a.node_, bn = b.node_;
    auto ad = a.data_, bd = b.data_;
    Tensor result = make(a.rows(), a.cols(), std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        if (ta) {
            auto& ga = tape.grad_buffer(an);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*bd)[i];
        }
        if (tb) {
            auto& gb = tape.grad_buffer(bn);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (*ad)[i];
        }
    };
    return result;
}

Tensor Tape::scale(const Tensor& a, double factor) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
    if (!tracked_here(a)) return Tensor::constant(a.rows(), a.cols(), std::move(out));
    auto an = a.node_;
    Tensor result = make(a.rows(), a.cols(), std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        auto& ga = tape.grad_buffer(an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    };
    return result;
}

Tensor Tape::add_bias(const Tensor& mat, const Tensor& bias) {
    if (bias.rows() != 1 || bias.cols() != mat.cols())
        fail("add_bias: bias " + shape_str(bias.rows(), bias.cols()) + " does not broadcast over " +
             shape_str(mat.rows(), mat.cols()));
    const std::size_t n = mat.rows(), d = mat.cols();
    std::vector<double> out(n * d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = mat.values()[r * d + c] + bias.values()[c];
    const bool tm = tracked_here(mat), tb = tracked_here(bias);
    if (!tm && !tb) return Tensor::constant(n, d, std::move(out));
    auto mn = mat.node_, bn = bias.node_;
    Tensor result = make(n, d, std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        if (tm) {
            auto& gm = tape.grad_buffer(mn);
            for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
        }
        if (tb) {
            auto& gb = tape.grad_buffer(bn);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
        }
    };
    return result;
}

Tensor Tape::concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) fail("concat_cols: no inputs");
    const std::size_t n = parts.front().rows();
    std::size_t total = 0;
    bool tracked = false;
    for (const auto& p : parts) {
        if (p.rows() != n) fail("concat_cols: row count mismatch");
        total += p.cols();
        tracked = tracked || tracked_here(p);
    }
    std::vector<double> out(n * total);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < p.cols(); ++c) out[r * total + offset + c] = p.at(r, c);
        offset += p.cols();
    }
    if (!tracked) return Tensor::constant(n, total, std::move(out));

    struct Piece {
        std::ptrdiff_t node;
        std::size_t offset, cols;
    };
    std::vector<Piece> pieces;
    offset = 0;
    for (const auto& p : parts) {
        if (tracked_here(p)) pieces.push_back({p.node_, offset, p.cols()});
        offset += p.cols();
    }
    Tensor result = make(n, total, std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        for (const auto& piece : pieces) {
            auto& gp = tape.grad_buffer(piece.node);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < piece.cols; ++c)
                    gp[r * piece.cols + c] += g[r * total + piece.offset + c];
        }
    };
    return result;
}

Tensor Tape::slice_cols(const Tensor& a, std::size_t first, std::size_t count) {
    if (first + count > a.cols()) fail("slice_cols: range exceeds " + shape_str(a.rows(), a.cols()));
    const std::size_t n = a.rows(), d = a.cols();
    std::vector<double> out(n * count);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < count; ++c) out[r * count + c] = a.values()[r * d + first + c];
    if (!tracked_here(a)) return Tensor::constant(n, count, std::move(out));
    auto an = a.node_;
    Tensor result = make(n, count, std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        auto& ga = tape.grad_buffer(an);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < count; ++c) ga[r * d + first + c] += g[r * count + c];
    };
    return result;
}

Tensor Tape::gather_rows(const Tensor& a, std::vector<std::size_t> indices) {
    const std::size_t d = a.cols();
    for (auto i : indices)
        if (i >= a.rows()) fail("gather_rows: index " + std::to_string(i) + " out of range");
    std::vector<double> out(indices.size() * d);
    for (std::size_t r = 0; r < indices.size(); ++r)
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = a.values()[indices[r] * d + c];
    if (!tracked_here(a)) return Tensor::constant(indices.size(), d, std::move(out));
    auto an = a.node_;
    const std::size_t k = indices.size();
    auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(indices));
    Tensor result = make(k, d, std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        auto& ga = tape.grad_buffer(an);
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t c = 0; c < d; ++c) ga[(*idx)[r] * d + c] += g[r * d + c];
    };
    return result;
}

Tensor Tape::segment_sum(const Tensor& a, std::vector<std::size_t> segments, std::size_t num_segments) {
    if (segments.size() != a.rows()) fail("segment_sum: segment count does not match rows");
    const std::size_t d = a.cols();
    for (auto s : segments)
        if (s >= num_segments) fail("segment_sum: segment id out of range");
    std::vector<double> out(num_segments * d, 0.0);
    for (std::size_t r = 0; r < segments.size(); ++r)
        for (std::size_t c = 0; c < d; ++c) out[segments[r] * d + c] += a.values()[r * d + c];
    if (!tracked_here(a)) return Tensor::constant(num_segments, d, std::move(out));
    auto an = a.node_;
    const std::size_t e = segments.size();
    auto seg = std::make_shared<const std::vector<std::size_t>>(std::move(segments));
    Tensor result = make(num_segments, d, std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        auto& ga = tape.grad_buffer(an);
        for (std::size_t r = 0; r < e; ++r)
            for (std::size_t c = 0; c < d; ++c) ga[r * d + c] += g[(*seg)[r] * d + c];
    };
    return result;
}

Tensor Tape::segment_mean(const Tensor& a, std::vector<std::size_t> segments, std::size_t num_segments) {
    if (segments.size() != a.rows()) fail("segment_mean: segment count does not match rows");
    const std::size_t d = a.cols();
    std::vector<double> counts(num_segments, 0.0);
    for (auto s : segments) {
        if (s >= num_segments) fail("segment_mean: segment id out of range");
        counts[s] += 1.0;
    }
    std::vector<double> out(num_segments * d, 0.0);
    for (std::size_t r = 0; r < segments.size(); ++r)
        for (std::size_t c = 0; c < d; ++c) out[segments[r] * d + c] += a.values()[r * d + c];
    for (std::size_t s = 0; s < num_segments; ++s)
        if (counts[s] > 0.0)
            for (std::size_t c = 0; c < d; ++c) out[s * d + c] /= counts[s];
    if (!tracked_here(a)) return Tensor::constant(num_segments, d, std::move(out));
    auto an = a.node_;
    const std::size_t e = segments.size();
    auto seg = std::make_shared<const std::vector<std::size_t>>(std::move(segments));
    auto cnt = std::make_shared<const std::vector<double>>(std::move(counts));
    Tensor result = make(num_segments, d, std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        auto& ga = tape.grad_buffer(an);
        for (std::size_t r = 0; r < e; ++r) {
            const double inv = 1.0 / (*cnt)[(*seg)[r]];
            for (std::size_t c = 0; c < d; ++c) ga[r * d + c] += g[(*seg)[r] * d + c] * inv;
        }
    };
    return result;
}

Tensor Tape::segment_softmax(const Tensor& scores, std::vector<std::size_t> segments,
                             std::size_t num_segments) {
    if (scores.cols() != 1) fail("segment_softmax: scores must be a column vector");
    if (segments.size() != scores.rows()) fail("segment_softmax: segment count does not match rows");
    const std::size_t e = segments.size();
    std::vector<double> seg_max(num_segments, -std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < e; ++r) {
        if (segments[r] >= num_segments) fail("segment_softmax: segment id out of range");
        seg_max[segments[r]] = std::max(seg_max[segments[r]], scores.values()[r]);
    }
    std::vector<double> out(e);
    std::vector<double> denom(num_segments, 0.0);
    for (std::size_t r = 0; r < e; ++r) {
        out[r] = std::exp(scores.values()[r] - seg_max[segments[r]]);
        denom[segments[r]] += out[r];
    }
    for (std::size_t r = 0; r < e; ++r) out[r] /= denom[segments[r]];
    if (!tracked_here(scores)) return Tensor::constant(e, 1, std::move(out));
    auto sn = scores.node_;
    auto seg = std::make_shared<const std::vector<std::size_t>>(std::move(segments));
    const std::size_t segs = num_segments;
    Tensor result = make(e, 1, std::move(out), true, nullptr);
    const auto self = result.node_;
    auto yv = result.data_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        auto& gs = tape.grad_buffer(sn);
        std::vector<double> dot(segs, 0.0);
        for (std::size_t r = 0; r < e; ++r) dot[(*seg)[r]] += g[r] * (*yv)[r];
        for (std::size_t r = 0; r < e; ++r) gs[r] += (*yv)[r] * (g[r] - dot[(*seg)[r]]);
    };
    return result;
}

Tensor Tape::row_softmax(const Tensor& a) {
    const std::size_t n = a.rows(), d = a.cols();
    std::vector<double> out(n * d);
    for (std::size_t r = 0; r < n; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < d; ++c) mx = std::max(mx, a.at(r, c));
        double sum = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            out[r * d + c] = std::exp(a.at(r, c) - mx);
            sum += out[r * d + c];
        }
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] /= sum;
    }
    if (!tracked_here(a)) return Tensor::constant(n, d, std::move(out));
    auto an = a.node_;
    Tensor result = make(n, d, std::move(out), true, nullptr);
    const auto self = result.node_;
    auto yv = result.data_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        auto& ga = tape.grad_buffer(an);
        for (std::size_t r = 0; r < n; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * (*yv)[r * d + c];
            for (std::size_t c = 0; c < d; ++c)
                ga[r * d + c] += (*yv)[r * d + c] * (g[r * d + c] - dot);
        }
    };
    return result;
}

Tensor Tape::row_scale(const Tensor& mat, const Tensor& s) {
    if (s.cols() != 1 || s.rows() != mat.rows())
        fail("row_scale: scale vector " + shape_str(s.rows(), s.cols()) + " does not match " +
             shape_str(mat.rows(), mat.cols()));
    const std::size_t n = mat.rows(), d = mat.cols();
    std::vector<double> out(n * d);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] = mat.values()[r * d + c] * s.values()[r];
    const bool tm = tracked_here(mat), ts = tracked_here(s);
    if (!tm && !ts) return Tensor::constant(n, d, std::move(out));
    auto mn = mat.node_, sn = s.node_;
    auto md = mat.data_, sd = s.data_;
    Tensor result = make(n, d, std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        if (tm) {
            auto& gm = tape.grad_buffer(mn);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) gm[r * d + c] += g[r * d + c] * (*sd)[r];
        }
        if (ts) {
            auto& gs = tape.grad_buffer(sn);
            for (std::size_t r = 0; r < n; ++r) {
                double acc = 0.0;
                for (std::size_t c = 0; c < d; ++c) acc += g[r * d + c] * (*md)[r * d + c];
                gs[r] += acc;
            }
        }
    };
    return result;
}

Tensor Tape::rowwise_sum(const Tensor& a) {
    const std::size_t n = a.rows(), d = a.cols();
    std::vector<double> out(n, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) out[r] += a.values()[r * d + c];
    if (!tracked_here(a)) return Tensor::constant(n, 1, std::move(out));
    auto an = a.node_;
    Tensor result = make(n, 1, std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        auto& ga = tape.grad_buffer(an);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) ga[r * d + c] += g[r];
    };
    return result;
}

Tensor Tape::sum_all(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    if (!tracked_here(a)) return Tensor::scalar(total);
    auto an = a.node_;
    const std::size_t sz = a.size();
    Tensor result = make(1, 1, {total}, true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const double g = tape.grads_[static_cast<std::size_t>(self)][0];
        auto& ga = tape.grad_buffer(an);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g;
    };
    return result;
}

Tensor Tape::mean_all(const Tensor& a) {
    if (a.size() == 0) fail("mean_all: empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor Tape::elu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.values()[i];
        out[i] = x > 0.0 ? x : std::expm1(x);
    }
    if (!tracked_here(a)) return Tensor::constant(a.rows(), a.cols(), std::move(out));
    auto an = a.node_;
    auto ad = a.data_;
    Tensor result = make(a.rows(), a.cols(), std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        auto& ga = tape.grad_buffer(an);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = (*ad)[i];
            ga[i] += g[i] * (x > 0.0 ? 1.0 : std::exp(x));
        }
    };
    return result;
}

Tensor Tape::leaky_relu(const Tensor& a, double negative_slope) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = a.values()[i];
        out[i] = x > 0.0 ? x : negative_slope * x;
    }
    if (!tracked_here(a)) return Tensor::constant(a.rows(), a.cols(), std::move(out));
    auto an = a.node_;
    auto ad = a.data_;
    Tensor result = make(a.rows(), a.cols(), std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        auto& ga = tape.grad_buffer(an);
        for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] += g[i] * ((*ad)[i] > 0.0 ? 1.0 : negative_slope);
    };
    return result;
}

Tensor Tape::sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.values()[i]));
    if (!tracked_here(a)) return Tensor::constant(a.rows(), a.cols(), std::move(out));
    auto an = a.node_;
    Tensor result = make(a.rows(), a.cols(), std::move(out), true, nullptr);
    const auto self = result.node_;
    auto yv = result.data_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        auto& ga = tape.grad_buffer(an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*yv)[i] * (1.0 - (*yv)[i]);
    };
    return result;
}

Tensor Tape::tanh(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values()[i]);
    if (!tracked_here(a)) return Tensor::constant(a.rows(), a.cols(), std::move(out));
    auto an = a.node_;
    Tensor result = make(a.rows(), a.cols(), std::move(out), true, nullptr);
    const auto self = result.node_;
    auto yv = result.data_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        auto& ga = tape.grad_buffer(an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - (*yv)[i] * (*yv)[i]);
    };
    return result;
}

Tensor Tape::cwise_max(const Tensor& a, const Tensor& b) {
    require_same_shape("cwise_max", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.values()[i], b.values()[i]);
    const bool ta = tracked_here(a), tb = tracked_here(b);
    if (!ta && !tb) return Tensor::constant(a.rows(), a.cols(), std::move(out));
    auto an = a.node_, bn = b.node_;
    auto ad = a.data_, bd = b.data_;
    Tensor result = make(a.rows(), a.cols(), std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        for (std::size_t i = 0; i < g.size(); ++i) {
            const bool pick_a = (*ad)[i] >= (*bd)[i];
            if (pick_a && ta)
                tape.grad_buffer(an)[i] += g[i];
            else if (!pick_a && tb)
                tape.grad_buffer(bn)[i] += g[i];
        }
    };
    return result;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
    const std::size_t n = x.rows(), d = x.cols();
    if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d)
        fail("layer_norm: gain/bias must be 1x" + std::to_string(d));
    std::vector<double> xhat(n * d), inv_std(n), out(n * d);
    for (std::size_t r = 0; r < n; ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < d; ++c) mean += x.values()[r * d + c];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double diff = x.values()[r * d + c] - mean;
            var += diff * diff;
        }
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + epsilon);
        for (std::size_t c = 0; c < d; ++c) {
            xhat[r * d + c] = (x.values()[r * d + c] - mean) * inv_std[r];
            out[r * d + c] = xhat[r * d + c] * gain.values()[c] + bias.values()[c];
        }
    }
    const bool tx = tracked_here(x), tg = tracked_here(gain), tb = tracked_here(bias);
    if (!tx && !tg && !tb) return Tensor::constant(n, d, std::move(out));
    auto xn = x.node_, gn = gain.node_, bn = bias.node_;
    auto gaind = gain.data_;
    auto xh = std::make_shared<const std::vector<double>>(std::move(xhat));
    auto istd = std::make_shared<const std::vector<double>>(std::move(inv_std));
    Tensor result = make(n, d, std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        if (tx) {
            auto& gx = tape.grad_buffer(xn);
            for (std::size_t r = 0; r < n; ++r) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    const double dxhat = g[r * d + c] * (*gaind)[c];
                    m1 += dxhat;
                    m2 += dxhat * (*xh)[r * d + c];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                for (std::size_t c = 0; c < d; ++c) {
                    const double dxhat = g[r * d + c] * (*gaind)[c];
                    gx[r * d + c] += (*istd)[r] * (dxhat - m1 - (*xh)[r * d + c] * m2);
                }
            }
        }
        if (tg) {
            auto& gg = tape.grad_buffer(gn);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) gg[c] += g[r * d + c] * (*xh)[r * d + c];
        }
        if (tb) {
            auto& gb = tape.grad_buffer(bn);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < d; ++c) gb[c] += g[r * d + c];
        }
    };
    return result;
}

Tensor Tape::dropout(const Tensor& a, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0) fail("dropout: p must lie in [0, 1)");
    if (!training || p == 0.0) return a;
    const double keep = 1.0 - p;
    std::vector<double> mask(a.size());
    for (auto& m : mask) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * mask[i];
    if (!tracked_here(a)) return Tensor::constant(a.rows(), a.cols(), std::move(out));
    auto an = a.node_;
    auto saved = std::make_shared<const std::vector<double>>(std::move(mask));
    Tensor result = make(a.rows(), a.cols(), std::move(out), true, nullptr);
    const auto self = result.node_;
    nodes_[static_cast<std::size_t>(self)].backprop = [=](Tape& tape) {
        const auto& g = tape.grads_[static_cast<std::size_t>(self)];
        auto& ga = tape.grad_buffer(an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*saved)[i];
    };
    return result;
}

}  // namespace gridse::ad
