#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "qvit/errors.hpp"

namespace qvit {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

struct TensorData {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
};

// Self-test hook for the gradient checker: when set, the GELU backward rule
// returns the negated derivative.
inline std::atomic<bool> flip_gelu_backward{false};

}  // namespace detail

/// Dense row-major real64 array. Copies share storage; use detach() for a
/// deep copy. Values are treated as immutable once a tensor has been consumed
/// by a recorded op, except for leaf parameters updated between steps.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
        : data_(std::make_shared<detail::TensorData>()) {
        for (auto extent : shape)
            if (extent == 0) throw DimensionError("tensor extents must be positive: " + shape_str(shape));
        if (numel(shape) != values.size())
            throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                                 std::to_string(values.size()) + " values");
        data_->shape = std::move(shape);
        data_->values = std::move(values);
        data_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        auto n = numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }
    static Tensor scalar(double value) { return Tensor({1}, {value}); }
    static Tensor parameter(Shape shape, std::vector<double> values) {
        return Tensor(std::move(shape), std::move(values), true);
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return data_->shape; }
    std::size_t rank() const { return data_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return data_->shape.at(axis); }
    std::size_t size() const { return data_->values.size(); }
    bool requires_grad() const { return data_->requires_grad; }

    std::span<const double> values() const { return data_->values; }
    std::span<double> mutable_values() { return data_->values; }
    double operator[](std::size_t i) const { return data_->values[i]; }
    double item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return data_->values[0];
    }

    Tensor detach() const { return Tensor(shape(), data_->values, false); }

    // Identity of the underlying storage, used as the gradient-map key.
    const detail::TensorData* id() const { return data_.get(); }

private:
    friend class Tape;
    std::shared_ptr<detail::TensorData> data_;
};

/// Gradients produced by one backward pass, keyed by tensor identity.
class GradientMap {
public:
    bool contains(const Tensor& t) const { return grads_.count(t.id()) != 0; }

    // Tensors the loss does not depend on have no entry; they read as zeros.
    std::vector<double> get(const Tensor& t) const {
        auto it = grads_.find(t.id());
        if (it == grads_.end()) return std::vector<double>(t.size(), 0.0);
        return it->second;
    }

private:
    friend class Tape;
    std::unordered_map<const detail::TensorData*, std::vector<double>> grads_;
};

/// Ordered record of differentiable operations. One tape per logical thread.
class Tape {
public:
    // Accumulate (+=) into each grad_in span; an empty span marks an input
    // that does not require a gradient.
    using BackwardFn =
        std::function<void(std::span<const double> grad_out, std::span<const std::span<double>> grad_in)>;

    Tape() = default;

    /// A tape that computes values but records nothing.
    static Tape inference() {
        Tape t;
        t.recording_ = false;
        return t;
    }

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    Tensor record(Tensor out, std::vector<Tensor> inputs, BackwardFn backward) {
        if (!recording_) return out;
        bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
        if (!needs) return out;
        out.data_->requires_grad = true;
        nodes_.push_back(Node{std::move(inputs), out, std::move(backward)});
        return out;
    }

    /// Reverse-mode sweep from a scalar loss. A tape supports one sweep until
    /// reset().
    GradientMap backward(const Tensor& loss) {
        if (loss.size() != 1)
            throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
        if (consumed_) throw ContractError("backward already ran on this tape; call reset() first");
        auto found = std::find_if(nodes_.rbegin(), nodes_.rend(),
                                  [&](const Node& n) { return n.output.id() == loss.id(); });
        if (found == nodes_.rend()) throw ContractError("loss was not recorded on this tape");
        consumed_ = true;

        GradientMap result;
        auto& grads = result.grads_;
        grads[loss.id()] = {1.0};
        std::vector<std::span<double>> grad_in;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            auto out = grads.find(it->output.id());
            if (out == grads.end()) continue;
            grad_in.clear();
            for (const auto& in : it->inputs) {
                if (!in.requires_grad()) {
                    grad_in.emplace_back();
                    continue;
                }
                auto [slot, inserted] = grads.try_emplace(in.id());
                if (inserted) slot->second.assign(in.size(), 0.0);
                grad_in.emplace_back(slot->second);
            }
            it->backward(out->second, grad_in);
        }
        return result;
    }

    void reset() {
        nodes_.clear();
        consumed_ = false;
    }

private:
    struct Node {
        std::vector<Tensor> inputs;
        Tensor output;
        BackwardFn backward;
    };
    std::vector<Node> nodes_;
    bool recording_ = true;
    bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

// outer × axis × inner decomposition of a row-major shape.
struct AxisView {
    std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
    v.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace detail

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return tape.record(Tensor(a.shape(), std::move(out)), {a, b}, [](auto g, auto gin) {
        for (auto& gi : gin)
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
    });
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return tape.record(Tensor(a.shape(), std::move(out)), {a, b}, [a, b](auto g, auto gin) {
        for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i] * b[i];
        for (std::size_t i = 0; i < gin[1].size(); ++i) gin[1][i] += g[i] * a[i];
    });
}

inline Tensor scale(Tape& tape, const Tensor& a, double s) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return tape.record(Tensor(a.shape(), std::move(out)), {a}, [s](auto g, auto gin) {
        for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i] * s;
    });
}

inline Tensor sum(Tape& tape, const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    return tape.record(Tensor::scalar(total), {a}, [](auto g, auto gin) {
        for (auto& v : gin[0]) v += g[0];
    });
}

inline Tensor mean(Tape& tape, const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    const double inv = 1.0 / static_cast<double>(a.size());
    return tape.record(Tensor::scalar(total * inv), {a}, [inv](auto g, auto gin) {
        for (auto& v : gin[0]) v += g[0] * inv;
    });
}

inline Tensor reshape(Tape& tape, const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<double> out(a.values().begin(), a.values().end());
    return tape.record(Tensor(std::move(shape), std::move(out)), {a}, [](auto g, auto gin) {
        for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i];
    });
}

/// 2-D transpose.
inline Tensor transpose(Tape& tape, const Tensor& a) {
    if (a.rank() != 2) throw DimensionError("transpose expects a matrix, got " + shape_str(a.shape()));
    const std::size_t rows = a.dim(0), cols = a.dim(1);
    std::vector<double> out(a.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
    return tape.record(Tensor({cols, rows}, std::move(out)), {a}, [rows, cols](auto g, auto gin) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gin[0][r * cols + c] += g[c * rows + r];
    });
}

/// Contiguous range [begin, begin + length) along `axis`.
inline Tensor slice(Tape& tape, const Tensor& a, std::size_t axis, std::size_t begin, std::size_t length) {
    auto v = detail::axis_view(a.shape(), axis);
    if (length == 0 || begin + length > v.extent)
        throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                             ") exceeds axis extent of " + shape_str(a.shape()));
    Shape shape = a.shape();
    shape[axis] = length;
    std::vector<double> out(v.outer * length * v.inner);
    const std::size_t chunk = length * v.inner;
    for (std::size_t o = 0; o < v.outer; ++o)
        std::copy_n(a.values().begin() + (o * v.extent + begin) * v.inner, chunk, out.begin() + o * chunk);
    return tape.record(Tensor(std::move(shape), std::move(out)), {a}, [v, begin, chunk](auto g, auto gin) {
        for (std::size_t o = 0; o < v.outer; ++o) {
            double* dst = gin[0].data() + (o * v.extent + begin) * v.inner;
            const double* src = g.data() + o * chunk;
            for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
    });
}

inline std::vector<Tensor> split(Tape& tape, const Tensor& a, const std::vector<std::size_t>& sizes, std::size_t axis) {
    auto total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (axis >= a.rank() || total != a.dim(axis))
        throw DimensionError("split sizes do not cover axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
    std::vector<Tensor> parts;
    std::size_t begin = 0;
    for (auto s : sizes) {
        parts.push_back(slice(tape, a, axis, begin, s));
        begin += s;
    }
    return parts;
}

inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    Shape shape = parts.front().shape();
    auto v0 = detail::axis_view(shape, axis);
    std::size_t extent = 0;
    for (const auto& p : parts) {
        auto v = detail::axis_view(p.shape(), axis);
        if (p.rank() != shape.size() || v.outer != v0.outer || v.inner != v0.inner)
            throw DimensionError("concat: incompatible shapes " + shape_str(parts.front().shape()) + " and " +
                                 shape_str(p.shape()));
        extent += v.extent;
    }
    shape[axis] = extent;
    std::vector<double> out(v0.outer * extent * v0.inner);
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t chunk = p.dim(axis) * v0.inner;
        for (std::size_t o = 0; o < v0.outer; ++o)
            std::copy_n(p.values().begin() + o * chunk, chunk, out.begin() + o * extent * v0.inner + offset * v0.inner);
        offset += p.dim(axis);
    }
    std::vector<std::size_t> extents;
    for (const auto& p : parts) extents.push_back(p.dim(axis));
    return tape.record(Tensor(std::move(shape), std::move(out)), parts,
                       [v0, extent, offsets, extents](auto g, auto gin) {
                           for (std::size_t k = 0; k < gin.size(); ++k) {
                               if (gin[k].empty()) continue;
                               const std::size_t chunk = extents[k] * v0.inner;
                               for (std::size_t o = 0; o < v0.outer; ++o) {
                                   const double* src = g.data() + o * extent * v0.inner + offsets[k] * v0.inner;
                                   double* dst = gin[k].data() + o * chunk;
                                   for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                               }
                           }
                       });
}

/// Matrix product a[N×K] · b[K×M].
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<double> out(n * m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            for (std::size_t j = 0; j < m; ++j) out[i * m + j] += av * b[p * m + j];
        }
    return tape.record(Tensor({n, m}, std::move(out)), {a, b}, [a, b, n, k, m](auto g, auto gin) {
        if (!gin[0].empty())
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * b[p * m + j];
                    gin[0][i * k + p] += acc;
                }
        if (!gin[1].empty())
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < m; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < n; ++i) acc += a[i * k + p] * g[i * m + j];
                    gin[1][p * m + j] += acc;
                }
    });
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// out = x·Wᵀ + b over the trailing axis of x; leading axes are batch axes.
inline Tensor affine(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (weight.rank() != 2 || x.rank() == 0 || x.shape().back() != weight.dim(1) || bias.rank() != 1 ||
        bias.dim(0) != weight.dim(0))
        throw DimensionError("affine: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) +
                             ", bias " + shape_str(bias.shape()));
    const std::size_t in = weight.dim(1), out_dim = weight.dim(0), rows = x.size() / in;
    Shape shape = x.shape();
    shape.back() = out_dim;
    std::vector<double> out(rows * out_dim);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = bias[o];
            for (std::size_t i = 0; i < in; ++i) acc += weight[o * in + i] * x[r * in + i];
            out[r * out_dim + o] = acc;
        }
    return tape.record(Tensor(std::move(shape), std::move(out)), {x, weight, bias},
                       [x, weight, in, out_dim, rows](auto g, auto gin) {
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t o = 0; o < out_dim; ++o) {
                                   const double go = g[r * out_dim + o];
                                   if (!gin[0].empty())
                                       for (std::size_t i = 0; i < in; ++i) gin[0][r * in + i] += go * weight[o * in + i];
                                   if (!gin[1].empty())
                                       for (std::size_t i = 0; i < in; ++i) gin[1][o * in + i] += go * x[r * in + i];
                                   if (!gin[2].empty()) gin[2][o] += go;
                               }
                       });
}

/// x + b with b[D] broadcast over the leading axes of x[…×D].
inline Tensor bias_add(Tape& tape, const Tensor& x, const Tensor& bias) {
    if (x.rank() == 0 || bias.rank() != 1 || x.shape().back() != bias.dim(0))
        throw DimensionError("bias_add: input " + shape_str(x.shape()) + ", bias " + shape_str(bias.shape()));
    const std::size_t d = bias.dim(0);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + bias[i % d];
    return tape.record(Tensor(x.shape(), std::move(out)), {x, bias}, [d](auto g, auto gin) {
        for (std::size_t i = 0; i < gin[0].size(); ++i) gin[0][i] += g[i];
        if (!gin[1].empty())
            for (std::size_t i = 0; i < g.size(); ++i) gin[1][i % d] += g[i];
    });
}

inline Tensor relu(Tape& tape, const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return tape.record(Tensor(x.shape(), std::move(out)), {x}, [x](auto g, auto gin) {
        for (std::size_t i = 0; i < gin[0].size(); ++i)
            if (x[i] > 0.0) gin[0][i] += g[i];
    });
}

/// Exact GELU, x·Φ(x) with the erf-based normal CDF.
inline Tensor gelu(Tape& tape, const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * detail::normal_cdf(x[i]);
    return tape.record(Tensor(x.shape(), std::move(out)), {x}, [x](auto g, auto gin) {
        const double sign = detail::flip_gelu_backward.load(std::memory_order_relaxed) ? -1.0 : 1.0;
        for (std::size_t i = 0; i < gin[0].size(); ++i) {
            const double d = detail::normal_cdf(x[i]) + x[i] * detail::normal_pdf(x[i]);
            gin[0][i] += sign * g[i] * d;
        }
    });
}

/// Softmax over the trailing axis.
inline Tensor softmax(Tape& tape, const Tensor& z) {
    const std::size_t k = z.shape().back(), rows = z.size() / k;
    std::vector<double> out(z.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = z.values().data() + r * k;
        double* y = out.data() + r * k;
        const double mx = *std::max_element(in, in + k);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += (y[j] = std::exp(in[j] - mx));
        for (std::size_t j = 0; j < k; ++j) y[j] /= total;
    }
    Tensor result(z.shape(), std::move(out));
    return tape.record(result, {z}, [y = result.detach(), k, rows](auto g, auto gin) {
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * y[r * k + j];
            for (std::size_t j = 0; j < k; ++j) gin[0][r * k + j] += y[r * k + j] * (g[r * k + j] - dot);
        }
    });
}

inline constexpr double kLayerNormEps = 1e-5;

/// (x − mean)/sqrt(var + eps)·gamma + beta per trailing-axis slice, population variance.
inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = kLayerNormEps) {
    const std::size_t d = x.shape().back();
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d})
        throw DimensionError("layer_norm: input " + shape_str(x.shape()) + ", gamma " + shape_str(gamma.shape()) +
                             ", beta " + shape_str(beta.shape()));
    const std::size_t rows = x.size() / d;
    std::vector<double> xhat(x.size()), rstd(rows), out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.values().data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(d);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (in[j] - mu) * rstd[r];
            out[r * d + j] = xhat[r * d + j] * gamma[j] + beta[j];
        }
    }
    return tape.record(Tensor(x.shape(), std::move(out)), {x, gamma, beta},
                       [gamma, xhat = std::move(xhat), rstd = std::move(rstd), d, rows](auto g, auto gin) {
                           const double inv_d = 1.0 / static_cast<double>(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* go = g.data() + r * d;
                               const double* xh = xhat.data() + r * d;
                               if (!gin[0].empty()) {
                                   double mean_g = 0.0, mean_gx = 0.0;
                                   for (std::size_t j = 0; j < d; ++j) {
                                       const double gj = go[j] * gamma[j];
                                       mean_g += gj;
                                       mean_gx += gj * xh[j];
                                   }
                                   mean_g *= inv_d;
                                   mean_gx *= inv_d;
                                   for (std::size_t j = 0; j < d; ++j)
                                       gin[0][r * d + j] += rstd[r] * (go[j] * gamma[j] - mean_g - xh[j] * mean_gx);
                               }
                               if (!gin[1].empty())
                                   for (std::size_t j = 0; j < d; ++j) gin[1][j] += go[j] * xh[j];
                               if (!gin[2].empty())
                                   for (std::size_t j = 0; j < d; ++j) gin[2][j] += go[j];
                           }
                       });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

enum class Reduction { sum, mean };

inline constexpr double kProbabilityClamp = 1e-12;

namespace detail {
inline void check_labels(const Tensor& m, std::span<const int> labels, const char* op) {
    if (m.rank() != 2 || labels.size() != m.dim(0))
        throw DimensionError(std::string(op) + ": input " + shape_str(m.shape()) + " with " +
                             std::to_string(labels.size()) + " labels");
    for (std::size_t n = 0; n < labels.size(); ++n)
        if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= m.dim(1))
            throw RangeError(std::string(op) + ": label " + std::to_string(labels[n]) + " at row " +
                             std::to_string(n) + " outside [0, " + std::to_string(m.dim(1)) + ")");
}
}  // namespace detail

/// −Σ log p[n, label_n] from probabilities, clamped at 1e-12.
inline Tensor cross_entropy(Tape& tape, const Tensor& probs, std::span<const int> labels,
                            Reduction reduction = Reduction::sum) {
    detail::check_labels(probs, labels, "cross_entropy");
    const std::size_t k = probs.dim(1);
    const double factor = reduction == Reduction::mean ? 1.0 / static_cast<double>(labels.size()) : 1.0;
    double loss = 0.0;
    for (std::size_t n = 0; n < labels.size(); ++n)
        loss -= std::log(std::max(probs[n * k + labels[n]], kProbabilityClamp));
    std::vector<int> y(labels.begin(), labels.end());
    return tape.record(Tensor::scalar(loss * factor), {probs}, [probs, y, k, factor](auto g, auto gin) {
        for (std::size_t n = 0; n < y.size(); ++n) {
            const double p = probs[n * k + y[n]];
            if (p > kProbabilityClamp) gin[0][n * k + y[n]] -= g[0] * factor / p;
        }
    });
}

/// Cross-entropy of softmax(logits) via a fused log-softmax.
inline Tensor cross_entropy_logits(Tape& tape, const Tensor& logits, std::span<const int> labels,
                                   Reduction reduction = Reduction::sum) {
    detail::check_labels(logits, labels, "cross_entropy_logits");
    const std::size_t k = logits.dim(1), rows = labels.size();
    const double factor = reduction == Reduction::mean ? 1.0 / static_cast<double>(rows) : 1.0;
    std::vector<double> probs(logits.size());
    double loss = 0.0;
    for (std::size_t n = 0; n < rows; ++n) {
        const double* z = logits.values().data() + n * k;
        const double mx = *std::max_element(z, z + k);
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) total += std::exp(z[j] - mx);
        const double lse = mx + std::log(total);
        for (std::size_t j = 0; j < k; ++j) probs[n * k + j] = std::exp(z[j] - lse);
        loss += lse - z[labels[n]];
    }
    std::vector<int> y(labels.begin(), labels.end());
    return tape.record(Tensor::scalar(loss * factor), {logits},
                       [probs = std::move(probs), y, k, factor](auto g, auto gin) {
                           for (std::size_t n = 0; n < y.size(); ++n)
                               for (std::size_t j = 0; j < k; ++j) {
                                   const double onehot = static_cast<int>(j) == y[n] ? 1.0 : 0.0;
                                   gin[0][n * k + j] += g[0] * factor * (probs[n * k + j] - onehot);
                               }
                       });
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

struct FiniteDiffReport {
    double max_abs_error = 0.0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::vector<double> autodiff;
    std::vector<double> numeric;
};

/// Compares the autodiff gradient of `loss_fn` w.r.t. `param` against central
/// differences with step h. Relative error uses max(|a|, |n|, abs_floor) as
/// the denominator. `loss_fn` must be deterministic and build its graph on the
/// tape it is given.
inline FiniteDiffReport finite_diff_check(const std::function<Tensor(Tape&)>& loss_fn, Tensor param, double h,
                                          double abs_floor = 1e-8) {
    if (!(h > 0.0) || !std::isfinite(h)) throw ContractError("finite difference step must be positive and finite");
    if (!param.requires_grad()) throw ContractError("finite_diff_check: parameter does not require grad");

    FiniteDiffReport report;
    {
        Tape tape;
        auto loss = loss_fn(tape);
        report.autodiff = tape.backward(loss).get(param);
    }
    auto values = param.mutable_values();
    report.numeric.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + h;
        auto tp = Tape::inference();
        const double up = loss_fn(tp).item();
        values[i] = saved - h;
        auto tm = Tape::inference();
        const double down = loss_fn(tm).item();
        values[i] = saved;
        report.numeric[i] = (up - down) / (2.0 * h);

        const double abs_err = std::abs(report.autodiff[i] - report.numeric[i]);
        const double denom = std::max({std::abs(report.autodiff[i]), std::abs(report.numeric[i]), abs_floor});
        const double rel_err = abs_err / denom;
        report.max_abs_error = std::max(report.max_abs_error, abs_err);
        if (rel_err > report.max_rel_error) {
            report.max_rel_error = rel_err;
            report.worst_index = i;
        }
    }
    return report;
}

}  // namespace qvit
