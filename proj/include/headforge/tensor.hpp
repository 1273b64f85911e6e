#pragma once

// Dense row-major tensors and a tape-based reverse-mode graph covering the
// primitives the dual-stream transformer needs. There is no general
// broadcasting: each primitive accepts exactly the shapes the model uses and
// rejects everything else with the offending shapes named.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace headforge {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <class T>
struct TensorStorage {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
};

// Shared handle to a tensor node. Copies alias the same storage, which is what
// lets the tape write gradients back into parameters.
template <class T>
class Tensor {
   public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : node_(std::make_shared<TensorStorage<T>>()) {
        node_->value.assign(shape_numel(shape), T{0});
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : node_(std::make_shared<TensorStorage<T>>()) {
        if (shape_numel(shape) != values.size()) {
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::initializer_list<T> values, bool requires_grad = false)
        : Tensor(std::move(shape), std::vector<T>(values), requires_grad) {}

    static Tensor scalar(T v, bool requires_grad = false) {
        return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rows() const { return node_->shape.at(0); }
    std::size_t cols() const { return rank() >= 2 ? node_->shape[1] : 1; }

    std::span<T> data() { return node_->value; }
    std::span<const T> data() const { return node_->value; }
    T& operator[](std::size_t i) { return node_->value[i]; }
    const T& operator[](std::size_t i) const { return node_->value[i]; }
    T& at(std::size_t r, std::size_t c) { return node_->value[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

    T item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool v) { node_->requires_grad = v; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<T> grad() {
        ensure_grad();
        return node_->grad;
    }
    std::span<const T> grad() const { return node_->grad; }
    void ensure_grad() {
        if (node_->grad.empty()) node_->grad.assign(node_->value.size(), T{0});
    }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T{0}); }
    void clear_grad() { node_->grad.clear(); }

    // Deep copy detached from any graph.
    Tensor clone() const {
        Tensor t(shape(), node_->value, requires_grad());
        return t;
    }

    bool same_node(const Tensor& o) const { return node_ == o.node_; }

   private:
    std::shared_ptr<TensorStorage<T>> node_;
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
MatMap<T> as_matrix(std::span<T> s, std::size_t rows, std::size_t cols) {
    return MatMap<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
ConstMatMap<T> as_matrix(std::span<const T> s, std::size_t rows, std::size_t cols) {
    return ConstMatMap<T>(s.data(), static_cast<Eigen::Index>(rows),
                          static_cast<Eigen::Index>(cols));
}

inline double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_derivative(double x) {
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    return cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline constexpr double kLayerNormEps = 1e-5;

// Records primitive operations in execution order; backward() replays their
// adjoint rules in reverse exactly once. With recording disabled the same
// primitives run forward-only, so inference and training share one code path.
template <class T>
class Graph {
   public:
    struct Node {
        const char* op;
        Tensor<T> output;
        std::function<void()> backward;
    };

    explicit Graph(bool record = true) : record_(record) {}

    bool recording() const { return record_; }
    std::size_t node_count() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }

    void reset() {
        nodes_.clear();
        backward_done_ = false;
    }

    void backward(Tensor<T>& loss) {
        if (backward_done_) throw std::logic_error("backward called twice without reset");
        if (loss.size() != 1) {
            throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
        }
        backward_done_ = true;
        if (!loss.requires_grad()) return;
        loss.ensure_grad();
        loss.grad()[0] += T{1};
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            // outputs that never reached the loss carry no gradient
            if (it->output.has_grad()) it->backward();
        }
    }

    // ---- primitives -------------------------------------------------------

    // [n,k] x [k,m] -> [n,m]
    Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
        require_rank(a, 2, "matmul");
        require_rank(b, 2, "matmul");
        if (a.cols() != b.rows()) mismatch("matmul", a, b);
        const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
        Tensor<T> out = result({n, m}, a, b);
        as_matrix<T>(out.data(), n, m).noalias() =
            as_matrix<T>(std::as_const(a).data(), n, k) * as_matrix<T>(std::as_const(b).data(), k, m);
        if (tracked(out)) {
            push("matmul", out, [a, b, out, n, k, m]() mutable {
                auto g = as_matrix<T>(std::as_const(out).grad(), n, m);
                if (a.requires_grad()) {
                    as_matrix<T>(a.grad(), n, k).noalias() +=
                        g * as_matrix<T>(std::as_const(b).data(), k, m).transpose();
                }
                if (b.requires_grad()) {
                    as_matrix<T>(b.grad(), k, m).noalias() +=
                        as_matrix<T>(std::as_const(a).data(), n, k).transpose() * g;
                }
            });
        }
        return out;
    }

    // [n,k] x [m,k]^T -> [n,m]; used by the tied language-model head.
    Tensor<T> matmul_nt(Tensor<T> a, Tensor<T> b) {
        require_rank(a, 2, "matmul_nt");
        require_rank(b, 2, "matmul_nt");
        if (a.cols() != b.cols()) mismatch("matmul_nt", a, b);
        const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
        Tensor<T> out = result({n, m}, a, b);
        as_matrix<T>(out.data(), n, m).noalias() =
            as_matrix<T>(std::as_const(a).data(), n, k) *
            as_matrix<T>(std::as_const(b).data(), m, k).transpose();
        if (tracked(out)) {
            push("matmul_nt", out, [a, b, out, n, k, m]() mutable {
                auto g = as_matrix<T>(std::as_const(out).grad(), n, m);
                if (a.requires_grad()) {
                    as_matrix<T>(a.grad(), n, k).noalias() +=
                        g * as_matrix<T>(std::as_const(b).data(), m, k);
                }
                if (b.requires_grad()) {
                    as_matrix<T>(b.grad(), m, k).noalias() +=
                        g.transpose() * as_matrix<T>(std::as_const(a).data(), n, k);
                }
            });
        }
        return out;
    }

    Tensor<T> add(Tensor<T> a, Tensor<T> b) {
        if (a.shape() != b.shape()) mismatch("add", a, b);
        Tensor<T> out = result(a.shape(), a, b);
        auto o = out.data();
        auto x = std::as_const(a).data();
        auto y = std::as_const(b).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
        if (tracked(out)) {
            push("add", out, [a, b, out]() mutable {
                auto g = std::as_const(out).grad();
                if (a.requires_grad()) accumulate(a.grad(), g);
                if (b.requires_grad()) accumulate(b.grad(), g);
            });
        }
        return out;
    }

    // [n,m] + [m] broadcast over rows
    Tensor<T> add_row(Tensor<T> a, Tensor<T> bias) {
        require_rank(a, 2, "add_row");
        if (bias.size() != a.cols()) mismatch("add_row", a, bias);
        const std::size_t n = a.rows(), m = a.cols();
        Tensor<T> out = result(a.shape(), a, bias);
        auto o = out.data();
        auto x = std::as_const(a).data();
        auto b = std::as_const(bias).data();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < m; ++c) o[r * m + c] = x[r * m + c] + b[c];
        if (tracked(out)) {
            push("add_row", out, [a, bias, out, n, m]() mutable {
                auto g = std::as_const(out).grad();
                if (a.requires_grad()) accumulate(a.grad(), g);
                if (bias.requires_grad()) {
                    auto gb = bias.grad();
                    for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < m; ++c) gb[c] += g[r * m + c];
                }
            });
        }
        return out;
    }

    // elementwise product
    Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
        if (a.shape() != b.shape()) mismatch("mul", a, b);
        Tensor<T> out = result(a.shape(), a, b);
        auto o = out.data();
        auto x = std::as_const(a).data();
        auto y = std::as_const(b).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
        if (tracked(out)) {
            push("mul", out, [a, b, out]() mutable {
                auto g = std::as_const(out).grad();
                auto x = std::as_const(a).data();
                auto y = std::as_const(b).data();
                if (a.requires_grad()) {
                    auto ga = a.grad();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
                }
                if (b.requires_grad()) {
                    auto gb = b.grad();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
                }
            });
        }
        return out;
    }

    Tensor<T> scale(Tensor<T> a, T s) {
        Tensor<T> out = result(a.shape(), a);
        auto o = out.data();
        auto x = std::as_const(a).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * s;
        if (tracked(out)) {
            push("scale", out, [a, out, s]() mutable {
                auto g = std::as_const(out).grad();
                auto ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
            });
        }
        return out;
    }

    Tensor<T> sigmoid(Tensor<T> a) {
        Tensor<T> out = result(a.shape(), a);
        auto o = out.data();
        auto x = std::as_const(a).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = T{1} / (T{1} + std::exp(-x[i]));
        if (tracked(out)) {
            push("sigmoid", out, [a, out]() mutable {
                auto g = std::as_const(out).grad();
                auto y = std::as_const(out).data();
                auto ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T{1} - y[i]);
            });
        }
        return out;
    }

    Tensor<T> gelu(Tensor<T> a) {
        Tensor<T> out = result(a.shape(), a);
        auto o = out.data();
        auto x = std::as_const(a).data();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(gelu_value(x[i]));
        if (tracked(out)) {
            push("gelu", out, [a, out]() mutable {
                auto g = std::as_const(out).grad();
                auto x = std::as_const(a).data();
                auto ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga[i] += g[i] * static_cast<T>(gelu_derivative(x[i]));
            });
        }
        return out;
    }

    // Row-wise LayerNorm with affine gamma/beta of length cols.
    Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, double eps = kLayerNormEps) {
        require_rank(x, 2, "layer_norm");
        if (gamma.size() != x.cols() || beta.size() != x.cols()) mismatch("layer_norm", x, gamma);
        const std::size_t n = x.rows(), m = x.cols();
        Tensor<T> out = result(x.shape(), x, gamma, beta);
        auto xhat = std::make_shared<std::vector<T>>(n * m);
        auto inv_std = std::make_shared<std::vector<T>>(n);
        auto xv = std::as_const(x).data();
        auto gv = std::as_const(gamma).data();
        auto bv = std::as_const(beta).data();
        auto o = out.data();
        for (std::size_t r = 0; r < n; ++r) {
            T mean{0};
            for (std::size_t c = 0; c < m; ++c) mean += xv[r * m + c];
            mean /= static_cast<T>(m);
            T var{0};
            for (std::size_t c = 0; c < m; ++c) {
                const T d = xv[r * m + c] - mean;
                var += d * d;
            }
            var /= static_cast<T>(m);
            const T is = T{1} / std::sqrt(var + static_cast<T>(eps));
            (*inv_std)[r] = is;
            for (std::size_t c = 0; c < m; ++c) {
                const T h = (xv[r * m + c] - mean) * is;
                (*xhat)[r * m + c] = h;
                o[r * m + c] = h * gv[c] + bv[c];
            }
        }
        if (tracked(out)) {
            push("layer_norm", out, [x, gamma, beta, out, xhat, inv_std, n, m]() mutable {
                auto g = std::as_const(out).grad();
                auto gv = std::as_const(gamma).data();
                if (gamma.requires_grad() || beta.requires_grad()) {
                    auto gg = gamma.grad();
                    auto gb = beta.grad();
                    for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < m; ++c) {
                            gg[c] += g[r * m + c] * (*xhat)[r * m + c];
                            gb[c] += g[r * m + c];
                        }
                }
                if (x.requires_grad()) {
                    auto gx = x.grad();
                    for (std::size_t r = 0; r < n; ++r) {
                        T sum_d{0}, sum_dh{0};
                        for (std::size_t c = 0; c < m; ++c) {
                            const T d = g[r * m + c] * gv[c];
                            sum_d += d;
                            sum_dh += d * (*xhat)[r * m + c];
                        }
                        const T inv_m = T{1} / static_cast<T>(m);
                        for (std::size_t c = 0; c < m; ++c) {
                            const T d = g[r * m + c] * gv[c];
                            gx[r * m + c] += (*inv_std)[r] *
                                             (d - inv_m * sum_d - (*xhat)[r * m + c] * inv_m * sum_dh);
                        }
                    }
                }
            });
        }
        return out;
    }

    // Gathers rows of table [V,d] -> [ids.size(), d].
    Tensor<T> embedding(Tensor<T> table, std::span<const std::uint32_t> ids) {
        require_rank(table, 2, "embedding");
        const std::size_t n = ids.size(), v = table.rows(), d = table.cols();
        for (std::size_t i = 0; i < n; ++i) {
            if (ids[i] >= v) {
                throw std::out_of_range("token id " + std::to_string(ids[i]) + " at position " +
                                        std::to_string(i) + " exceeds vocabulary size " +
                                        std::to_string(v));
            }
        }
        Tensor<T> out = result({n, d}, table);
        auto tv = std::as_const(table).data();
        auto o = out.data();
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                        o.begin() + static_cast<std::ptrdiff_t>(i * d));
        if (tracked(out)) {
            std::vector<std::uint32_t> idv(ids.begin(), ids.end());
            push("embedding", out, [table, out, idv = std::move(idv), d]() mutable {
                auto g = std::as_const(out).grad();
                auto gt = table.grad();
                for (std::size_t i = 0; i < idv.size(); ++i)
                    for (std::size_t c = 0; c < d; ++c) gt[idv[i] * d + c] += g[i * d + c];
            });
        }
        return out;
    }

    // Columns [begin, begin+count) of a [n,m] tensor; splits heads.
    Tensor<T> slice_cols(Tensor<T> x, std::size_t begin, std::size_t count) {
        require_rank(x, 2, "slice_cols");
        const std::size_t n = x.rows(), m = x.cols();
        if (begin + count > m) {
            throw ShapeError("slice_cols [" + std::to_string(begin) + "," +
                             std::to_string(begin + count) + ") out of range for " +
                             shape_str(x.shape()));
        }
        Tensor<T> out = result({n, count}, x);
        auto xv = std::as_const(x).data();
        auto o = out.data();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < count; ++c) o[r * count + c] = xv[r * m + begin + c];
        if (tracked(out)) {
            push("slice_cols", out, [x, out, begin, count, n, m]() mutable {
                auto g = std::as_const(out).grad();
                auto gx = x.grad();
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < count; ++c) gx[r * m + begin + c] += g[r * count + c];
            });
        }
        return out;
    }

    // Concatenates [n, m_i] tensors along columns; merges heads.
    Tensor<T> concat_cols(std::vector<Tensor<T>> parts) {
        if (parts.empty()) throw ShapeError("concat_cols of zero tensors");
        const std::size_t n = parts[0].rows();
        std::size_t m = 0;
        bool any_grad = false;
        for (const auto& p : parts) {
            require_rank(p, 2, "concat_cols");
            if (p.rows() != n) mismatch("concat_cols", parts[0], p);
            m += p.cols();
            any_grad = any_grad || p.requires_grad();
        }
        Tensor<T> out({n, m}, record_ && any_grad);
        auto o = out.data();
        std::size_t off = 0;
        for (const auto& p : parts) {
            const std::size_t pc = p.cols();
            auto pv = p.data();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < pc; ++c) o[r * m + off + c] = pv[r * pc + c];
            off += pc;
        }
        if (tracked(out)) {
            push("concat_cols", out, [parts, out, n, m]() mutable {
                auto g = std::as_const(out).grad();
                std::size_t off = 0;
                for (auto& p : parts) {
                    const std::size_t pc = p.cols();
                    if (p.requires_grad()) {
                        auto gp = p.grad();
                        for (std::size_t r = 0; r < n; ++r)
                            for (std::size_t c = 0; c < pc; ++c) gp[r * pc + c] += g[r * m + off + c];
                    }
                    off += pc;
                }
            });
        }
        return out;
    }

    // Scaled causal scores for rows packed as consecutive sequences of length
    // seq_len: out[s*T+i, j] = scale * q_i . k_j for j <= i, -inf for j > i.
    Tensor<T> causal_scores(Tensor<T> q, Tensor<T> k, std::size_t seq_len, T scale) {
        require_rank(q, 2, "causal_scores");
        if (q.shape() != k.shape()) mismatch("causal_scores", q, k);
        if (seq_len == 0 || q.rows() % seq_len != 0) {
            throw ShapeError("causal_scores: rows " + std::to_string(q.rows()) +
                             " not a multiple of sequence length " + std::to_string(seq_len));
        }
        const std::size_t n = q.rows(), dh = q.cols(), t = seq_len, nseq = n / t;
        Tensor<T> out = result({n, t}, q, k);
        auto qv = std::as_const(q).data();
        auto kv = std::as_const(k).data();
        auto o = out.data();
        const T neg_inf = -std::numeric_limits<T>::infinity();
        for (std::size_t s = 0; s < nseq; ++s) {
            auto qs = as_matrix<T>(qv.subspan(s * t * dh, t * dh), t, dh);
            auto ks = as_matrix<T>(kv.subspan(s * t * dh, t * dh), t, dh);
            auto os = as_matrix<T>(o.subspan(s * t * t, t * t), t, t);
            os.noalias() = (qs * ks.transpose()) * scale;
            for (std::size_t i = 0; i < t; ++i)
                for (std::size_t j = i + 1; j < t; ++j) os(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = neg_inf;
        }
        if (tracked(out)) {
            push("causal_scores", out, [q, k, out, t, dh, nseq, scale]() mutable {
                auto g = std::as_const(out).grad();
                RowMat<T> gs(t, t);
                for (std::size_t s = 0; s < nseq; ++s) {
                    gs = as_matrix<T>(g.subspan(s * t * t, t * t), t, t);
                    for (std::size_t i = 0; i < t; ++i)
                        for (std::size_t j = i + 1; j < t; ++j) gs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = T{0};
                    auto qs = as_matrix<T>(std::as_const(q).data().subspan(s * t * dh, t * dh), t, dh);
                    auto ks = as_matrix<T>(std::as_const(k).data().subspan(s * t * dh, t * dh), t, dh);
                    if (q.requires_grad())
                        as_matrix<T>(q.grad().subspan(s * t * dh, t * dh), t, dh).noalias() += (gs * ks) * scale;
                    if (k.requires_grad())
                        as_matrix<T>(k.grad().subspan(s * t * dh, t * dh), t, dh).noalias() +=
                            (gs.transpose() * qs) * scale;
                }
            });
        }
        return out;
    }

    // Row softmax; -inf entries come out exactly 0.
    Tensor<T> softmax_rows(Tensor<T> x) {
        require_rank(x, 2, "softmax_rows");
        const std::size_t n = x.rows(), m = x.cols();
        Tensor<T> out = result(x.shape(), x);
        auto xv = std::as_const(x).data();
        auto o = out.data();
        for (std::size_t r = 0; r < n; ++r) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t c = 0; c < m; ++c) mx = std::max(mx, xv[r * m + c]);
            T sum{0};
            for (std::size_t c = 0; c < m; ++c) {
                const T v = xv[r * m + c];
                const T e = std::isinf(v) && v < 0 ? T{0} : std::exp(v - mx);
                o[r * m + c] = e;
                sum += e;
            }
            for (std::size_t c = 0; c < m; ++c) o[r * m + c] /= sum;
        }
        if (tracked(out)) {
            push("softmax_rows", out, [x, out, n, m]() mutable {
                auto g = std::as_const(out).grad();
                auto y = std::as_const(out).data();
                auto gx = x.grad();
                for (std::size_t r = 0; r < n; ++r) {
                    T dot{0};
                    for (std::size_t c = 0; c < m; ++c) dot += g[r * m + c] * y[r * m + c];
                    for (std::size_t c = 0; c < m; ++c)
                        gx[r * m + c] += y[r * m + c] * (g[r * m + c] - dot);
                }
            });
        }
        return out;
    }

    // Per-sequence probs [T,T] x values [T,dh] for packed sequences.
    Tensor<T> attend(Tensor<T> probs, Tensor<T> v, std::size_t seq_len) {
        require_rank(probs, 2, "attend");
        require_rank(v, 2, "attend");
        if (probs.cols() != seq_len || probs.rows() != v.rows() || v.rows() % seq_len != 0)
            mismatch("attend", probs, v);
        const std::size_t n = v.rows(), dh = v.cols(), t = seq_len, nseq = n / t;
        Tensor<T> out = result({n, dh}, probs, v);
        auto pv = std::as_const(probs).data();
        auto vv = std::as_const(v).data();
        auto o = out.data();
        for (std::size_t s = 0; s < nseq; ++s) {
            as_matrix<T>(o.subspan(s * t * dh, t * dh), t, dh).noalias() =
                as_matrix<T>(pv.subspan(s * t * t, t * t), t, t) *
                as_matrix<T>(vv.subspan(s * t * dh, t * dh), t, dh);
        }
        if (tracked(out)) {
            push("attend", out, [probs, v, out, t, dh, nseq]() mutable {
                auto g = std::as_const(out).grad();
                for (std::size_t s = 0; s < nseq; ++s) {
                    auto gs = as_matrix<T>(g.subspan(s * t * dh, t * dh), t, dh);
                    if (probs.requires_grad())
                        as_matrix<T>(probs.grad().subspan(s * t * t, t * t), t, t).noalias() +=
                            gs * as_matrix<T>(std::as_const(v).data().subspan(s * t * dh, t * dh), t, dh)
                                     .transpose();
                    if (v.requires_grad())
                        as_matrix<T>(v.grad().subspan(s * t * dh, t * dh), t, dh).noalias() +=
                            as_matrix<T>(std::as_const(probs).data().subspan(s * t * t, t * t), t, t)
                                .transpose() *
                            gs;
                }
            });
        }
        return out;
    }

    // Mean cross-entropy of logits [n,V] against targets; rows with a
    // negative target are ignored.
    Tensor<T> cross_entropy(Tensor<T> logits, std::span<const std::int64_t> targets) {
        require_rank(logits, 2, "cross_entropy");
        const std::size_t n = logits.rows(), v = logits.cols();
        if (targets.size() != n) {
            throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                             " targets for logits " + shape_str(logits.shape()));
        }
        std::size_t count = 0;
        for (std::size_t r = 0; r < n; ++r) {
            if (targets[r] >= static_cast<std::int64_t>(v)) {
                throw std::out_of_range("target id " + std::to_string(targets[r]) + " at row " +
                                        std::to_string(r) + " exceeds vocabulary size " +
                                        std::to_string(v));
            }
            if (targets[r] >= 0) ++count;
        }
        Tensor<T> out = result({1}, logits);
        auto probs = std::make_shared<std::vector<T>>(n * v);
        auto lv = std::as_const(logits).data();
        double total = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t c = 0; c < v; ++c) mx = std::max(mx, lv[r * v + c]);
            T sum{0};
            for (std::size_t c = 0; c < v; ++c) {
                const T e = std::exp(lv[r * v + c] - mx);
                (*probs)[r * v + c] = e;
                sum += e;
            }
            for (std::size_t c = 0; c < v; ++c) (*probs)[r * v + c] /= sum;
            if (targets[r] >= 0) {
                total += static_cast<double>(std::log(sum) + mx -
                                             lv[r * v + static_cast<std::size_t>(targets[r])]);
            }
        }
        out[0] = count ? static_cast<T>(total / static_cast<double>(count)) : T{0};
        if (tracked(out) && count) {
            std::vector<std::int64_t> tg(targets.begin(), targets.end());
            push("cross_entropy", out, [logits, out, probs, tg = std::move(tg), n, v, count]() mutable {
                const T g = std::as_const(out).grad()[0] / static_cast<T>(count);
                auto gl = logits.grad();
                for (std::size_t r = 0; r < n; ++r) {
                    if (tg[r] < 0) continue;
                    for (std::size_t c = 0; c < v; ++c) gl[r * v + c] += g * (*probs)[r * v + c];
                    gl[r * v + static_cast<std::size_t>(tg[r])] -= g;
                }
            });
        }
        return out;
    }

    // sum_i w_i * s_i over scalar tensors.
    Tensor<T> weighted_sum(std::vector<Tensor<T>> terms, std::vector<T> weights) {
        if (terms.size() != weights.size() || terms.empty()) {
            throw ShapeError("weighted_sum: " + std::to_string(terms.size()) + " terms, " +
                             std::to_string(weights.size()) + " weights");
        }
        bool any_grad = false;
        T total{0};
        for (std::size_t i = 0; i < terms.size(); ++i) {
            total += weights[i] * terms[i].item();
            any_grad = any_grad || terms[i].requires_grad();
        }
        Tensor<T> out = Tensor<T>::scalar(total, record_ && any_grad);
        if (tracked(out)) {
            push("weighted_sum", out, [terms, weights, out]() mutable {
                const T g = std::as_const(out).grad()[0];
                for (std::size_t i = 0; i < terms.size(); ++i)
                    if (terms[i].requires_grad()) terms[i].grad()[0] += g * weights[i];
            });
        }
        return out;
    }

    Tensor<T> sum(Tensor<T> a) {
        T total{0};
        for (T x : std::as_const(a).data()) total += x;
        Tensor<T> out = Tensor<T>::scalar(total, record_ && a.requires_grad());
        if (tracked(out)) {
            push("sum", out, [a, out]() mutable {
                const T g = std::as_const(out).grad()[0];
                for (auto& x : a.grad()) x += g;
            });
        }
        return out;
    }

    // Inverted dropout; the mask is drawn from the caller's generator.
    template <class Rng>
    Tensor<T> dropout(Tensor<T> a, double p, Rng& rng) {
        if (p <= 0.0) return a;
        Tensor<T> mask(a.shape());
        std::bernoulli_distribution keep(1.0 - p);
        const T s = static_cast<T>(1.0 / (1.0 - p));
        for (auto& m : mask.data()) m = keep(rng) ? s : T{0};
        return mul(a, mask);
    }

   private:
    template <class... Ts>
    Tensor<T> result(Shape shape, const Ts&... inputs) {
        const bool any = (inputs.requires_grad() || ...);
        return Tensor<T>(std::move(shape), record_ && any);
    }

    bool tracked(const Tensor<T>& out) const { return record_ && out.requires_grad(); }

    void push(const char* op, const Tensor<T>& output, std::function<void()> fn) {
        if (backward_done_) throw std::logic_error("graph already differentiated; call reset()");
        nodes_.push_back(Node{op, output, std::move(fn)});
    }

    static void accumulate(std::span<T> dst, std::span<const T> src) {
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }

    static void require_rank(const Tensor<T>& t, std::size_t r, const char* op) {
        if (t.rank() != r) {
            throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                             shape_str(t.shape()));
        }
    }

    [[noreturn]] static void mismatch(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }

    bool record_;
    bool backward_done_ = false;
    std::vector<Node> nodes_;
};

}  // namespace headforge
