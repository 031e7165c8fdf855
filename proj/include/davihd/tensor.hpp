#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "davihd/errors.hpp"
#include "davihd/rng.hpp"

namespace davihd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

struct TensorStorage {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated (zeroed) iff requires_grad
    bool requires_grad = false;
};

// Dense row-major f64 tensor. Value semantics on the handle; the storage is
// shared, so copies alias. A tensor that is not attached to a live tape is
// safe to share read-only across threads.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : s_(std::make_shared<TensorStorage>()) {
        s_->shape = std::move(shape);
        s_->value.assign(shape_numel(s_->shape), 0.0);
    }

    Tensor(Shape shape, std::vector<double> values) : s_(std::make_shared<TensorStorage>()) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
        s_->shape = std::move(shape);
        s_->value = std::move(values);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.values().begin(), t.values().end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor uniform(Rng& rng, Shape shape, double lo, double hi) {
        Tensor t(std::move(shape));
        for (double& x : t.values()) x = rng.uniform(lo, hi);
        return t;
    }

    static Tensor normal(Rng& rng, Shape shape, double mean = 0.0, double sd = 1.0) {
        Tensor t(std::move(shape));
        for (double& x : t.values()) x = rng.normal(mean, sd);
        return t;
    }

    bool defined() const { return static_cast<bool>(s_); }
    const Shape& shape() const { return s_->shape; }
    std::size_t ndim() const { return s_->shape.size(); }
    std::size_t dim(std::size_t i) const { return s_->shape[i]; }
    std::size_t numel() const { return s_->value.size(); }

    std::vector<double>& values() { return s_->value; }
    const std::vector<double>& values() const { return s_->value; }

    double item() const {
        if (numel() != 1) throw ShapeError("item(): tensor is not scalar, shape " + shape_str(shape()));
        return s_->value[0];
    }

    double at(std::initializer_list<std::size_t> idx) const { return s_->value[flat_index(idx)]; }
    double& at(std::initializer_list<std::size_t> idx) { return s_->value[flat_index(idx)]; }

    bool requires_grad() const { return s_ && s_->requires_grad; }

    void set_requires_grad(bool on) {
        s_->requires_grad = on;
        if (on)
            s_->grad.assign(s_->value.size(), 0.0);
        else
            s_->grad.clear();
    }

    std::vector<double>& grad() {
        if (!requires_grad()) throw ShapeError("grad(): tensor does not require grad");
        return s_->grad;
    }
    const std::vector<double>& grad() const {
        if (!requires_grad()) throw ShapeError("grad(): tensor does not require grad");
        return s_->grad;
    }

    void zero_grad() {
        if (requires_grad()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
    }

    // Deep copy of values only (no grad, no tape attachment).
    Tensor detached_copy() const { return Tensor(s_->shape, s_->value); }

    const std::shared_ptr<TensorStorage>& storage() const { return s_; }

private:
    std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != s_->shape.size())
            throw ShapeError("index rank mismatch for shape " + shape_str(s_->shape));
        std::size_t flat = 0, k = 0;
        for (std::size_t i : idx) {
            flat = flat * s_->shape[k] + i;
            ++k;
        }
        return flat;
    }

    std::shared_ptr<TensorStorage> s_;
};

// Append-only record of backward closures. Node append order is a valid
// topological order by construction; backward() replays it exactly once in
// reverse append order. One tape per thread at a time; not reentrant.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active() { return active_; }

    void record(std::function<void()> back) { nodes_.push_back(std::move(back)); }

    std::size_t node_count() const { return nodes_.size(); }

    void backward(const Tensor& loss) {
        if (consumed_) throw ShapeError("backward(): tape already consumed");
        if (loss.numel() != 1) throw ShapeError("backward(): loss is not scalar");
        if (!loss.requires_grad()) throw ShapeError("backward(): loss is detached from the tape");
        consumed_ = true;
        loss.storage()->grad[0] += 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
    inline static thread_local Tape* active_ = nullptr;
    friend class TapeScope;
};

class TapeScope {
public:
    explicit TapeScope(Tape& t) : prev_(Tape::active_) { Tape::active_ = &t; }
    ~TapeScope() { Tape::active_ = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
    for (double v : t.values())
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite value after ") + op);
}

inline bool wants_grad(std::initializer_list<const Tensor*> ins) {
    if (!Tape::active()) return false;
    for (const Tensor* t : ins)
        if (t->requires_grad()) return true;
    return false;
}

// Accumulate b into a.
inline void axpy(std::vector<double>& a, const std::vector<double>& b, double s = 1.0) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += s * b[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops (equal shapes)
// ---------------------------------------------------------------------------

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    detail::check_finite(out, "add");
    if (detail::wants_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto as = a.storage(), bs = b.storage(), os = out.storage();
        Tape::active()->record([as, bs, os] {
            if (as->requires_grad) detail::axpy(as->grad, os->grad);
            if (bs->requires_grad) detail::axpy(bs->grad, os->grad);
        });
    }
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    detail::check_finite(out, "sub");
    if (detail::wants_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto as = a.storage(), bs = b.storage(), os = out.storage();
        Tape::active()->record([as, bs, os] {
            if (as->requires_grad) detail::axpy(as->grad, os->grad);
            if (bs->requires_grad) detail::axpy(bs->grad, os->grad, -1.0);
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    detail::check_finite(out, "mul");
    if (detail::wants_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto as = a.storage(), bs = b.storage(), os = out.storage();
        Tape::active()->record([as, bs, os] {
            if (as->requires_grad)
                for (std::size_t i = 0; i < os->grad.size(); ++i) as->grad[i] += os->grad[i] * bs->value[i];
            if (bs->requires_grad)
                for (std::size_t i = 0; i < os->grad.size(); ++i) bs->grad[i] += os->grad[i] * as->value[i];
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, double c) {
    Tensor out(a.shape());
    const auto& av = a.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    detail::check_finite(out, "scale");
    if (detail::wants_grad({&a})) {
        out.set_requires_grad(true);
        auto as = a.storage(), os = out.storage();
        Tape::active()->record([as, os, c] { detail::axpy(as->grad, os->grad, c); });
    }
    return out;
}

// Broadcast v along every axis except `axis`: out[..., i, ...] = x[..., i, ...] op v[i].
namespace detail {

struct AxisSpans {
    std::size_t outer, n, inner;
};

inline AxisSpans axis_spans(const Tensor& x, std::size_t axis, const Tensor& v, const char* op) {
    if (axis >= x.ndim()) throw ShapeError(std::string(op) + ": axis out of range");
    if (v.ndim() != 1 || v.dim(0) != x.dim(axis))
        throw ShapeError(std::string(op) + ": vector length " + shape_str(v.shape()) +
                         " does not match axis extent " + std::to_string(x.dim(axis)));
    AxisSpans sp{1, x.dim(axis), 1};
    for (std::size_t i = 0; i < axis; ++i) sp.outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.ndim(); ++i) sp.inner *= x.dim(i);
    return sp;
}

}  // namespace detail

inline Tensor add_axis(const Tensor& x, const Tensor& v, std::size_t axis) {
    auto sp = detail::axis_spans(x, axis, v, "add_axis");
    Tensor out(x.shape());
    const auto& xv = x.values();
    const auto& vv = v.values();
    auto& ov = out.values();
    std::size_t p = 0;
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.n; ++i) {
            const double c = vv[i];
            for (std::size_t k = 0; k < sp.inner; ++k, ++p) ov[p] = xv[p] + c;
        }
    detail::check_finite(out, "add_axis");
    if (detail::wants_grad({&x, &v})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), vs = v.storage(), os = out.storage();
        Tape::active()->record([xs, vs, os, sp] {
            if (xs->requires_grad) detail::axpy(xs->grad, os->grad);
            if (vs->requires_grad) {
                std::size_t q = 0;
                for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t i = 0; i < sp.n; ++i) {
                        double acc = 0.0;
                        for (std::size_t k = 0; k < sp.inner; ++k, ++q) acc += os->grad[q];
                        vs->grad[i] += acc;
                    }
            }
        });
    }
    return out;
}

inline Tensor mul_axis(const Tensor& x, const Tensor& v, std::size_t axis) {
    auto sp = detail::axis_spans(x, axis, v, "mul_axis");
    Tensor out(x.shape());
    const auto& xv = x.values();
    const auto& vv = v.values();
    auto& ov = out.values();
    std::size_t p = 0;
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.n; ++i) {
            const double c = vv[i];
            for (std::size_t k = 0; k < sp.inner; ++k, ++p) ov[p] = xv[p] * c;
        }
    detail::check_finite(out, "mul_axis");
    if (detail::wants_grad({&x, &v})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), vs = v.storage(), os = out.storage();
        Tape::active()->record([xs, vs, os, sp] {
            std::size_t q = 0;
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < sp.n; ++i) {
                    const double c = vs->value[i];
                    double acc = 0.0;
                    for (std::size_t k = 0; k < sp.inner; ++k, ++q) {
                        if (xs->requires_grad) xs->grad[q] += os->grad[q] * c;
                        acc += os->grad[q] * xs->value[q];
                    }
                    if (vs->requires_grad) vs->grad[i] += acc;
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    detail::check_finite(out, "relu");
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), os = out.storage();
        Tape::active()->record([xs, os] {
            for (std::size_t i = 0; i < os->grad.size(); ++i)
                if (xs->value[i] > 0.0) xs->grad[i] += os->grad[i];
        });
    }
    return out;
}

inline Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const double v = xv[i];
        ov[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    }
    detail::check_finite(out, "sigmoid");
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), os = out.storage();
        Tape::active()->record([xs, os] {
            for (std::size_t i = 0; i < os->grad.size(); ++i) {
                const double y = os->value[i];
                xs->grad[i] += os->grad[i] * y * (1.0 - y);
            }
        });
    }
    return out;
}

// Numerically stabilized softmax along `axis`; output sums to 1 along that
// axis within 1e-12 for all finite inputs.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.ndim()) throw ShapeError("softmax: axis out of range");
    Tensor out(x.shape());
    std::size_t outer = 1, inner = 1;
    const std::size_t n = x.dim(axis);
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < inner; ++k) {
            const std::size_t base = o * n * inner + k;
            double mx = -1e300;
            for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, xv[base + i * inner]);
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = std::exp(xv[base + i * inner] - mx);
                ov[base + i * inner] = e;
                sum += e;
            }
            for (std::size_t i = 0; i < n; ++i) ov[base + i * inner] /= sum;
        }
    detail::check_finite(out, "softmax");
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), os = out.storage();
        Tape::active()->record([xs, os, outer, inner, n] {
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t k = 0; k < inner; ++k) {
                    const std::size_t base = o * n * inner + k;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < n; ++i)
                        dot += os->grad[base + i * inner] * os->value[base + i * inner];
                    for (std::size_t i = 0; i < n; ++i) {
                        const std::size_t p = base + i * inner;
                        xs->grad[p] += os->value[p] * (os->grad[p] - dot);
                    }
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tensor out(std::move(shape), x.values());
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), os = out.storage();
        Tape::active()->record([xs, os] { detail::axpy(xs->grad, os->grad); });
    }
    return out;
}

inline Tensor transpose2d(const Tensor& x) {
    if (x.ndim() != 2) throw ShapeError("transpose2d: expected rank 2, got " + shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1);
    Tensor out({n, m});
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ov[j * m + i] = xv[i * n + j];
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), os = out.storage();
        Tape::active()->record([xs, os, m, n] {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) xs->grad[i * n + j] += os->grad[j * m + i];
        });
    }
    return out;
}

inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t w) {
    if (x.ndim() != 2) throw ShapeError("slice_cols: expected rank 2");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (c0 + w > n) throw ShapeError("slice_cols: out of range");
    Tensor out({m, w});
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) ov[i * w + j] = xv[i * n + c0 + j];
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), os = out.storage();
        Tape::active()->record([xs, os, m, n, w, c0] {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) xs->grad[i * n + c0 + j] += os->grad[i * w + j];
        });
    }
    return out;
}

inline Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t h) {
    if (x.ndim() < 1) throw ShapeError("slice_rows: rank 0");
    const std::size_t m = x.dim(0);
    if (r0 + h > m) throw ShapeError("slice_rows: out of range");
    std::size_t inner = x.numel() / m;
    Shape os_shape = x.shape();
    os_shape[0] = h;
    Tensor out(os_shape);
    const auto& xv = x.values();
    auto& ov = out.values();
    std::copy(xv.begin() + r0 * inner, xv.begin() + (r0 + h) * inner, ov.begin());
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), os = out.storage();
        Tape::active()->record([xs, os, r0, inner, h] {
            for (std::size_t i = 0; i < h * inner; ++i) xs->grad[r0 * inner + i] += os->grad[i];
        });
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t m = parts[0].dim(0);
    std::size_t n = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != m) throw ShapeError("concat_cols: row count mismatch");
        n += p.dim(1);
    }
    Tensor out({m, n});
    auto& ov = out.values();
    std::size_t col = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.dim(1);
        const auto& pv = p.values();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) ov[i * n + col + j] = pv[i * w + j];
        col += w;
    }
    bool rec = false;
    for (const Tensor& p : parts) rec = rec || p.requires_grad();
    if (Tape::active() && rec) {
        out.set_requires_grad(true);
        std::vector<std::shared_ptr<TensorStorage>> ps;
        ps.reserve(parts.size());
        for (const Tensor& p : parts) ps.push_back(p.storage());
        auto os = out.storage();
        Tape::active()->record([ps, os, m, n] {
            std::size_t col = 0;
            for (auto& p : ps) {
                const std::size_t w = p->shape[1];
                if (p->requires_grad)
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j) p->grad[i * w + j] += os->grad[i * n + col + j];
                col += w;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    Tensor out = Tensor::scalar(s);
    detail::check_finite(out, "sum");
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), os = out.storage();
        Tape::active()->record([xs, os] {
            const double g = os->grad[0];
            for (double& v : xs->grad) v += g;
        });
    }
    return out;
}

inline Tensor mean_all(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    double s = 0.0;
    for (double v : x.values()) s += v;
    Tensor out = Tensor::scalar(s * inv);
    detail::check_finite(out, "mean");
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), os = out.storage();
        Tape::active()->record([xs, os, inv] {
            const double g = os->grad[0] * inv;
            for (double& v : xs->grad) v += g;
        });
    }
    return out;
}

namespace detail {
inline Shape drop_axis(const Shape& s, std::size_t axis) {
    Shape r;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) r.push_back(s[i]);
    if (r.empty()) r.push_back(1);
    return r;
}
}  // namespace detail

inline Tensor sum_axis(const Tensor& x, std::size_t axis, bool mean = false) {
    if (axis >= x.ndim()) throw ShapeError("sum_axis: axis out of range");
    std::size_t outer = 1, inner = 1;
    const std::size_t n = x.dim(axis);
    for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
    for (std::size_t i = axis + 1; i < x.ndim(); ++i) inner *= x.dim(i);
    Tensor out(detail::drop_axis(x.shape(), axis));
    const double w = mean ? 1.0 / static_cast<double>(n) : 1.0;
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < inner; ++k) ov[o * inner + k] += w * xv[(o * n + i) * inner + k];
    detail::check_finite(out, mean ? "mean_axis" : "sum_axis");
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), os = out.storage();
        Tape::active()->record([xs, os, outer, inner, n, w] {
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t k = 0; k < inner; ++k)
                        xs->grad[(o * n + i) * inner + k] += w * os->grad[o * inner + k];
        });
    }
    return out;
}

inline Tensor mean_axis(const Tensor& x, std::size_t axis) { return sum_axis(x, axis, true); }

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

namespace detail {

struct MatmulPlan {
    std::size_t m, k, n;
    std::size_t batch;                 // total output batches
    std::vector<std::size_t> a_off;    // per-batch element offsets
    std::vector<std::size_t> b_off;
};

inline MatmulPlan matmul_plan(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2) throw ShapeError("matmul: operands must have rank >= 2");
    MatmulPlan p{};
    p.m = a.dim(a.ndim() - 2);
    p.k = a.dim(a.ndim() - 1);
    p.n = b.dim(b.ndim() - 1);
    if (b.dim(b.ndim() - 2) != p.k)
        throw ShapeError("matmul: inner dims disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const std::size_t ra = a.ndim() - 2, rb = b.ndim() - 2;
    const std::size_t rc = std::max(ra, rb);
    Shape ab(rc, 1), bb(rc, 1), cb(rc, 1);
    for (std::size_t i = 0; i < ra; ++i) ab[rc - ra + i] = a.dim(i);
    for (std::size_t i = 0; i < rb; ++i) bb[rc - rb + i] = b.dim(i);
    for (std::size_t i = 0; i < rc; ++i) {
        if (ab[i] != bb[i] && ab[i] != 1 && bb[i] != 1)
            throw ShapeError("matmul: batch dims not broadcastable");
        cb[i] = std::max(ab[i], bb[i]);
    }
    p.batch = shape_numel(cb);
    p.a_off.resize(p.batch);
    p.b_off.resize(p.batch);
    for (std::size_t idx = 0; idx < p.batch; ++idx) {
        std::size_t rem = idx, ao = 0, bo = 0;
        for (std::size_t i = 0; i < rc; ++i) {
            std::size_t stride = 1;
            for (std::size_t j = i + 1; j < rc; ++j) stride *= cb[j];
            const std::size_t ci = rem / stride;
            rem %= stride;
            ao = ao * ab[i] + (ab[i] == 1 ? 0 : ci);
            bo = bo * bb[i] + (bb[i] == 1 ? 0 : ci);
        }
        p.a_off[idx] = ao * p.m * p.k;
        p.b_off[idx] = bo * p.k * p.n;
    }
    return p;
}

inline Shape matmul_out_shape(const Tensor& a, const Tensor& b, const MatmulPlan& p) {
    const std::size_t ra = a.ndim() - 2, rb = b.ndim() - 2;
    const std::size_t rc = std::max(ra, rb);
    Shape out(rc + 2, 1);
    for (std::size_t i = 0; i < rc; ++i) {
        std::size_t av = i < rc - ra ? 1 : a.dim(i - (rc - ra));
        std::size_t bv = i < rc - rb ? 1 : b.dim(i - (rc - rb));
        out[i] = std::max(av, bv);
    }
    out[rc] = p.m;
    out[rc + 1] = p.n;
    return out;
}

}  // namespace detail

// Standard matrix product with numpy-style broadcasting over leading batch
// dims (each batch extent must match or be 1).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    auto plan = detail::matmul_plan(a, b);
    Tensor out(detail::matmul_out_shape(a, b, plan));
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    const std::size_t m = plan.m, k = plan.k, n = plan.n;
    for (std::size_t bi = 0; bi < plan.batch; ++bi) {
        const double* A = av.data() + plan.a_off[bi];
        const double* B = bv.data() + plan.b_off[bi];
        double* C = ov.data() + bi * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double x = A[i * k + kk];
                const double* Br = B + kk * n;
                double* Cr = C + i * n;
                for (std::size_t j = 0; j < n; ++j) Cr[j] += x * Br[j];
            }
    }
    detail::check_finite(out, "matmul");
    if (detail::wants_grad({&a, &b})) {
        out.set_requires_grad(true);
        auto as = a.storage(), bs = b.storage(), os = out.storage();
        Tape::active()->record([as, bs, os, plan] {
            const std::size_t m = plan.m, k = plan.k, n = plan.n;
            for (std::size_t bi = 0; bi < plan.batch; ++bi) {
                const double* A = as->value.data() + plan.a_off[bi];
                const double* B = bs->value.data() + plan.b_off[bi];
                const double* G = os->grad.data() + bi * m * n;
                if (as->requires_grad) {
                    double* dA = as->grad.data() + plan.a_off[bi];
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) {
                            const double g = G[i * n + j];
                            const double* Br = B + j;
                            for (std::size_t kk = 0; kk < k; ++kk) dA[i * k + kk] += g * Br[kk * n];
                        }
                }
                if (bs->requires_grad) {
                    double* dB = bs->grad.data() + plan.b_off[bi];
                    for (std::size_t kk = 0; kk < k; ++kk)
                        for (std::size_t i = 0; i < m; ++i) {
                            const double x = A[i * k + kk];
                            const double* Gr = G + i * n;
                            double* dBr = dB + kk * n;
                            for (std::size_t j = 0; j < n; ++j) dBr[j] += x * Gr[j];
                        }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

// Cross-correlation (no kernel flip), zero padding.
// input [C_in, F, T], kernel [C_out, C_in, kF, kT] -> [C_out, F', T'].
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride_f = 1,
                     std::size_t stride_t = 1, std::size_t pad_f = 0, std::size_t pad_t = 0) {
    if (input.ndim() != 3) throw ShapeError("conv2d: input must be [C,F,T]");
    if (kernel.ndim() != 4) throw ShapeError("conv2d: kernel must be [Co,Ci,kF,kT]");
    if (stride_f == 0 || stride_t == 0) throw ShapeError("conv2d: zero stride");
    const std::size_t ci = input.dim(0), F = input.dim(1), T = input.dim(2);
    const std::size_t co = kernel.dim(0), kf = kernel.dim(2), kt = kernel.dim(3);
    if (kernel.dim(1) != ci) throw ShapeError("conv2d: channel mismatch");
    if (kf > F + 2 * pad_f || kt > T + 2 * pad_t)
        throw ShapeError("conv2d: kernel larger than padded input");
    const std::size_t Fo = (F + 2 * pad_f - kf) / stride_f + 1;
    const std::size_t To = (T + 2 * pad_t - kt) / stride_t + 1;
    Tensor out({co, Fo, To});
    const auto& xv = input.values();
    const auto& wv = kernel.values();
    auto& ov = out.values();

    // Valid output ranges per kernel offset, so inner loops are branch-free.
    auto fo_range = [&](std::size_t off, std::size_t pad, std::size_t stride, std::size_t ext,
                        std::size_t outn) {
        // positions o with 0 <= o*stride + off - pad < ext
        std::size_t lo = off >= pad ? 0 : (pad - off + stride - 1) / stride;
        std::size_t hi = outn;  // exclusive
        if (ext + pad > off) {
            std::size_t max_o = (ext + pad - off - 1) / stride;
            hi = std::min(outn, max_o + 1);
        } else {
            hi = lo;
        }
        return std::pair<std::size_t, std::size_t>(lo, hi);
    };

    for (std::size_t oc = 0; oc < co; ++oc)
        for (std::size_t icn = 0; icn < ci; ++icn)
            for (std::size_t i = 0; i < kf; ++i) {
                auto [flo, fhi] = fo_range(i, pad_f, stride_f, F, Fo);
                for (std::size_t j = 0; j < kt; ++j) {
                    const double w = wv[((oc * ci + icn) * kf + i) * kt + j];
                    if (w == 0.0) continue;
                    auto [tlo, thi] = fo_range(j, pad_t, stride_t, T, To);
                    for (std::size_t fo = flo; fo < fhi; ++fo) {
                        const std::size_t fi = fo * stride_f + i - pad_f;
                        const double* xr = xv.data() + (icn * F + fi) * T;
                        double* orow = ov.data() + (oc * Fo + fo) * To;
                        if (stride_t == 1) {
                            const double* xs = xr + (tlo + j - pad_t);
                            for (std::size_t to = tlo; to < thi; ++to) orow[to] += w * xs[to - tlo];
                        } else {
                            for (std::size_t to = tlo; to < thi; ++to)
                                orow[to] += w * xr[to * stride_t + j - pad_t];
                        }
                    }
                }
            }
    detail::check_finite(out, "conv2d");
    if (detail::wants_grad({&input, &kernel})) {
        out.set_requires_grad(true);
        auto xs = input.storage(), ws = kernel.storage(), os = out.storage();
        Tape::active()->record([xs, ws, os, ci, F, T, co, kf, kt, Fo, To, stride_f, stride_t, pad_f,
                                pad_t] {
            for (std::size_t oc = 0; oc < co; ++oc)
                for (std::size_t icn = 0; icn < ci; ++icn)
                    for (std::size_t i = 0; i < kf; ++i)
                        for (std::size_t j = 0; j < kt; ++j) {
                            const std::size_t widx = ((oc * ci + icn) * kf + i) * kt + j;
                            const double w = ws->value[widx];
                            double wg = 0.0;
                            for (std::size_t fo = 0; fo < Fo; ++fo) {
                                const std::size_t fi_s = fo * stride_f + i;
                                if (fi_s < pad_f || fi_s - pad_f >= F) continue;
                                const std::size_t fi = fi_s - pad_f;
                                const double* grow = os->grad.data() + (oc * Fo + fo) * To;
                                const double* xrow = xs->value.data() + (icn * F + fi) * T;
                                double* dxrow =
                                    xs->requires_grad ? xs->grad.data() + (icn * F + fi) * T : nullptr;
                                for (std::size_t to = 0; to < To; ++to) {
                                    const std::size_t ti_s = to * stride_t + j;
                                    if (ti_s < pad_t || ti_s - pad_t >= T) continue;
                                    const std::size_t ti = ti_s - pad_t;
                                    const double g = grow[to];
                                    wg += g * xrow[ti];
                                    if (dxrow) dxrow[ti] += g * w;
                                }
                            }
                            if (ws->requires_grad) ws->grad[widx] += wg;
                        }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

// Bin i averages input indices [floor(i*T/T_out), ceil((i+1)*T/T_out)) along
// the last axis; bins may overlap when T_out does not divide T.
inline Tensor adaptive_avg_pool_time(const Tensor& x, std::size_t t_out) {
    if (x.ndim() < 1) throw ShapeError("adaptive_avg_pool_time: rank 0");
    if (t_out == 0) throw ShapeError("adaptive_avg_pool_time: T_out must be >= 1");
    const std::size_t t_in = x.dim(x.ndim() - 1);
    if (t_in == 0) throw ShapeError("adaptive_avg_pool_time: empty time axis");
    Shape os_shape = x.shape();
    os_shape.back() = t_out;
    Tensor out(os_shape);
    const std::size_t rows = x.numel() / t_in;
    std::vector<std::size_t> lo(t_out), hi(t_out);
    for (std::size_t i = 0; i < t_out; ++i) {
        lo[i] = (i * t_in) / t_out;
        hi[i] = ((i + 1) * t_in + t_out - 1) / t_out;  // ceil
    }
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < t_out; ++i) {
            double acc = 0.0;
            for (std::size_t t = lo[i]; t < hi[i]; ++t) acc += xv[r * t_in + t];
            ov[r * t_out + i] = acc / static_cast<double>(hi[i] - lo[i]);
        }
    detail::check_finite(out, "adaptive_avg_pool_time");
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), os = out.storage();
        Tape::active()->record([xs, os, rows, t_in, t_out, lo, hi] {
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < t_out; ++i) {
                    const double g = os->grad[r * t_out + i] / static_cast<double>(hi[i] - lo[i]);
                    for (std::size_t t = lo[i]; t < hi[i]; ++t) xs->grad[r * t_in + t] += g;
                }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

// Learnable affine + running statistics for batch_norm2d. Running stats are
// plain-value tensors (never on tape) so checkpoints can carry them as named
// buffers.
struct BatchNorm2dState {
    Tensor gamma;         // [C]
    Tensor beta;          // [C]
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C]
    double momentum = 0.1;
    double eps = 1e-5;

    BatchNorm2dState() = default;

    explicit BatchNorm2dState(std::size_t channels, double momentum_ = 0.1, double eps_ = 1e-5)
        : gamma(Tensor::full({channels}, 1.0)),
          beta(Tensor::zeros({channels})),
          running_mean(Tensor::zeros({channels})),
          running_var(Tensor::full({channels}, 1.0)),
          momentum(momentum_),
          eps(eps_) {}
};

// x is [B, C, F, T]. Train mode normalizes by biased per-channel batch
// statistics and updates the running estimates; eval mode normalizes by the
// running estimates. Gradients flow through the batch statistics in train
// mode and through the affine only in eval mode.
inline Tensor batch_norm2d(const Tensor& x, BatchNorm2dState& st, bool training) {
    if (x.ndim() != 4) throw ShapeError("batch_norm2d: input must be [B,C,F,T]");
    const std::size_t B = x.dim(0), C = x.dim(1), F = x.dim(2), T = x.dim(3);
    if (st.gamma.dim(0) != C) throw ShapeError("batch_norm2d: channel count mismatch");
    const std::size_t n = B * F * T;
    if (training && n < 2)
        throw ShapeError("batch_norm2d: train mode needs at least 2 elements per channel");
    Tensor out(x.shape());
    const auto& xv = x.values();
    auto& ov = out.values();
    std::vector<double> mean(C), inv_std(C);
    const std::size_t plane = F * T;
    for (std::size_t c = 0; c < C; ++c) {
        double mu, var;
        if (training) {
            double s = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* p = xv.data() + (b * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
            }
            mu = s / static_cast<double>(n);
            double sq = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* p = xv.data() + (b * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    sq += d * d;
                }
            }
            var = sq / static_cast<double>(n);
            auto& rm = st.running_mean.values();
            auto& rv = st.running_var.values();
            rm[c] = (1.0 - st.momentum) * rm[c] + st.momentum * mu;
            rv[c] = (1.0 - st.momentum) * rv[c] + st.momentum * var;
        } else {
            mu = st.running_mean.values()[c];
            var = st.running_var.values()[c];
        }
        mean[c] = mu;
        inv_std[c] = 1.0 / std::sqrt(var + st.eps);
    }
    const auto& gv = st.gamma.values();
    const auto& bv = st.beta.values();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const double* p = xv.data() + (b * C + c) * plane;
            double* q = ov.data() + (b * C + c) * plane;
            const double mu = mean[c], is = inv_std[c], g = gv[c], bb = bv[c];
            for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - mu) * is * g + bb;
        }
    detail::check_finite(out, "batch_norm2d");
    if (detail::wants_grad({&x, &st.gamma, &st.beta})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), gs = st.gamma.storage(), bs = st.beta.storage(), os = out.storage();
        Tape::active()->record([xs, gs, bs, os, B, C, plane, n, mean, inv_std, training] {
            for (std::size_t c = 0; c < C; ++c) {
                const double mu = mean[c], is = inv_std[c], g = gs->value[c];
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t b = 0; b < B; ++b) {
                    const double* xp = xs->value.data() + (b * C + c) * plane;
                    const double* gp = os->grad.data() + (b * C + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_dy += gp[i];
                        sum_dy_xhat += gp[i] * (xp[i] - mu) * is;
                    }
                }
                if (gs->requires_grad) gs->grad[c] += sum_dy_xhat;
                if (bs->requires_grad) bs->grad[c] += sum_dy;
                if (xs->requires_grad) {
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t b = 0; b < B; ++b) {
                        const double* xp = xs->value.data() + (b * C + c) * plane;
                        const double* gp = os->grad.data() + (b * C + c) * plane;
                        double* dxp = xs->grad.data() + (b * C + c) * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                            if (training) {
                                const double xhat = (xp[i] - mu) * is;
                                dxp[i] +=
                                    g * is * (gp[i] - inv_n * sum_dy - xhat * inv_n * sum_dy_xhat);
                            } else {
                                dxp[i] += g * is * gp[i];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Layer normalization over the last axis with learnable affine.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    if (x.ndim() < 1) throw ShapeError("layer_norm: rank 0");
    const std::size_t d = x.dim(x.ndim() - 1);
    if (gamma.ndim() != 1 || gamma.dim(0) != d || beta.ndim() != 1 || beta.dim(0) != d)
        throw ShapeError("layer_norm: affine shape mismatch");
    const std::size_t rows = x.numel() / d;
    Tensor out(x.shape());
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    auto& ov = out.values();
    std::vector<double> mean(rows), inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = xv.data() + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += p[i];
        mu /= static_cast<double>(d);
        double sq = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double dv = p[i] - mu;
            sq += dv * dv;
        }
        const double is = 1.0 / std::sqrt(sq / static_cast<double>(d) + eps);
        mean[r] = mu;
        inv_std[r] = is;
        double* q = ov.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) q[i] = (p[i] - mu) * is * gv[i] + bv[i];
    }
    detail::check_finite(out, "layer_norm");
    if (detail::wants_grad({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), gs = gamma.storage(), bs = beta.storage(), os = out.storage();
        Tape::active()->record([xs, gs, bs, os, rows, d, mean, inv_std] {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xp = xs->value.data() + r * d;
                const double* gp = os->grad.data() + r * d;
                const double mu = mean[r], is = inv_std[r];
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    const double xhat = (xp[i] - mu) * is;
                    const double dxhat = gp[i] * gs->value[i];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (gs->requires_grad) gs->grad[i] += gp[i] * xhat;
                    if (bs->requires_grad) bs->grad[i] += gp[i];
                }
                if (xs->requires_grad) {
                    const double inv_d = 1.0 / static_cast<double>(d);
                    double* dxp = xs->grad.data() + r * d;
                    for (std::size_t i = 0; i < d; ++i) {
                        const double xhat = (xp[i] - mu) * is;
                        const double dxhat = gp[i] * gs->value[i];
                        dxp[i] += is * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// spectro-temporal helpers
// ---------------------------------------------------------------------------

// Absolute frame-to-frame difference along the time axis of an [F,T] map;
// column 0 is defined as zero so shapes stay aligned.
inline Tensor frame_diff(const Tensor& x) {
    if (x.ndim() != 2) throw ShapeError("frame_diff: expected [F,T]");
    const std::size_t F = x.dim(0), T = x.dim(1);
    if (T < 1) throw ShapeError("frame_diff: empty");
    Tensor out({F, T});
    const auto& xv = x.values();
    auto& ov = out.values();
    for (std::size_t f = 0; f < F; ++f) {
        ov[f * T] = 0.0;
        for (std::size_t t = 1; t < T; ++t) ov[f * T + t] = std::abs(xv[f * T + t] - xv[f * T + t - 1]);
    }
    detail::check_finite(out, "frame_diff");
    if (detail::wants_grad({&x})) {
        out.set_requires_grad(true);
        auto xs = x.storage(), os = out.storage();
        Tape::active()->record([xs, os, F, T] {
            for (std::size_t f = 0; f < F; ++f)
                for (std::size_t t = 1; t < T; ++t) {
                    const double diff = xs->value[f * T + t] - xs->value[f * T + t - 1];
                    const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                    const double g = os->grad[f * T + t] * s;
                    xs->grad[f * T + t] += g;
                    xs->grad[f * T + t - 1] -= g;
                }
        });
    }
    return out;
}

}  // namespace davihd
