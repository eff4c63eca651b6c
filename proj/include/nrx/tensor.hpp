#pragma once

// Reverse-mode automatic differentiation on dense row-major tensors.
// Define-by-run: ops execute eagerly and, when a Tape is recording and an
// input participates in a gradient path, push a backward closure onto the
// tape. Tape::backward replays closures in reverse execution order, which is
// a valid topological order by construction.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "nrx/rng.hpp"

#define NRX_REQUIRE(cond, msg)                    \
    do {                                          \
        if (!(cond)) {                            \
            std::ostringstream nrx_os_;           \
            nrx_os_ << msg;                       \
            throw std::invalid_argument(nrx_os_.str()); \
        }                                         \
    } while (0)

namespace nrx {

// All tensor storage is 64-byte aligned: Eigen picks vectorization prologues
// from runtime pointer alignment, and a fixed alignment keeps repeated runs
// bit-identical regardless of heap state.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t alignment = 64;

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) {
        const std::size_t bytes = ((n * sizeof(T) + alignment - 1) / alignment) * alignment;
        void* p = std::aligned_alloc(alignment, bytes ? bytes : alignment);
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, std::size_t) { std::free(p); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const {
        return true;
    }
    template <class U>
    bool operator!=(const AlignedAllocator<U>&) const {
        return false;
    }
};

template <class T>
using AlignedVec = std::vector<T, AlignedAllocator<T>>;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

template <class T>
struct TensorData {
    Shape shape;
    AlignedVec<T> value;
    AlignedVec<T> grad;  // sized lazily on first accumulation
    bool track = false;  // participates in a gradient path
};

template <class T>
class Tensor {
  public:
    using Scalar = T;

    Tensor() = default;

    static Tensor zeros(Shape shape) {
        Tensor t;
        t.d_ = std::make_shared<TensorData<T>>();
        t.d_->shape = std::move(shape);
        t.d_->value.assign(shape_numel(t.d_->shape), T(0));
        return t;
    }

    static Tensor full(Shape shape, T v) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.d_->value.begin(), t.d_->value.end(), v);
        return t;
    }

    static Tensor from(Shape shape, AlignedVec<T> data) {
        NRX_REQUIRE(shape_numel(shape) == data.size(),
                    "tensor: shape " << shape_str(shape) << " does not match data length "
                                     << data.size());
        Tensor t;
        t.d_ = std::make_shared<TensorData<T>>();
        t.d_->shape = std::move(shape);
        t.d_->value = std::move(data);
        return t;
    }

    static Tensor from(Shape shape, const std::vector<T>& data) {
        return from(std::move(shape), AlignedVec<T>(data.begin(), data.end()));
    }

    static Tensor from(Shape shape, std::initializer_list<T> data) {
        return from(std::move(shape), AlignedVec<T>(data.begin(), data.end()));
    }

    static Tensor scalar(T v) { return from({1}, {v}); }

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t numel() const { return d_->value.size(); }
    std::size_t extent(std::size_t axis) const { return d_->shape[axis]; }

    AlignedVec<T>& value() { return d_->value; }
    const AlignedVec<T>& value() const { return d_->value; }
    T item() const {
        NRX_REQUIRE(numel() == 1, "item: tensor has " << numel() << " elements");
        return d_->value[0];
    }

    bool tracked() const { return d_->track; }
    Tensor& set_requires_grad(bool on = true) {
        d_->track = on;
        if (on) ensure_grad();
        return *this;
    }

    AlignedVec<T>& grad() {
        ensure_grad();
        return d_->grad;
    }
    const AlignedVec<T>& grad() const {
        const_cast<Tensor*>(this)->ensure_grad();
        return d_->grad;
    }
    void zero_grad() {
        if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), T(0));
    }

    void ensure_grad() {
        if (d_->grad.size() != d_->value.size()) d_->grad.assign(d_->value.size(), T(0));
    }

    std::shared_ptr<TensorData<T>> data() const { return d_; }

  private:
    std::shared_ptr<TensorData<T>> d_;
};

template <class T>
class Tape {
  public:
    void record(std::function<void()> backward_fn) {
        nodes_.push_back(std::move(backward_fn));
    }

    bool recording() const { return recording_; }
    void set_recording(bool on) { recording_ = on; }

    std::size_t size() const { return nodes_.size(); }
    void reset() { nodes_.clear(); }

    // Populates d(loss)/d(t) for every tracked tensor reachable from loss.
    void backward(Tensor<T>& loss) {
        NRX_REQUIRE(loss.numel() == 1,
                    "backward: loss must be scalar, got " << shape_str(loss.shape()));
        loss.ensure_grad();
        loss.grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

  private:
    std::vector<std::function<void()>> nodes_;
    bool recording_ = true;
};

namespace detail {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<EMat<T>>;
template <class T>
using MapC = Eigen::Map<const EMat<T>>;

template <class T>
bool track_out(const Tape<T>& g, std::initializer_list<const Tensor<T>*> ins) {
    if (!g.recording()) return false;
    for (auto* t : ins)
        if ((*t).tracked()) return true;
    return false;
}

template <class T>
void add_into(AlignedVec<T>& dst, const AlignedVec<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and structural ops

template <class T>
Tensor<T> add(Tape<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    NRX_REQUIRE(a.shape() == b.shape(), "add: shape mismatch " << shape_str(a.shape()) << " vs "
                                                               << shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    if (detail::track_out(g, {&a, &b})) {
        out.set_requires_grad();
        auto ad = a.data(), bd = b.data(), od = out.data();
        g.record([ad, bd, od] {
            if (ad->track) {
                if (ad->grad.size() != ad->value.size()) ad->grad.assign(ad->value.size(), T(0));
                detail::add_into(ad->grad, od->grad);
            }
            if (bd->track) {
                if (bd->grad.size() != bd->value.size()) bd->grad.assign(bd->value.size(), T(0));
                detail::add_into(bd->grad, od->grad);
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> sub(Tape<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    NRX_REQUIRE(a.shape() == b.shape(), "sub: shape mismatch " << shape_str(a.shape()) << " vs "
                                                               << shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    if (detail::track_out(g, {&a, &b})) {
        out.set_requires_grad();
        auto ad = a.data(), bd = b.data(), od = out.data();
        g.record([ad, bd, od] {
            if (ad->track) {
                if (ad->grad.size() != ad->value.size()) ad->grad.assign(ad->value.size(), T(0));
                detail::add_into(ad->grad, od->grad);
            }
            if (bd->track) {
                if (bd->grad.size() != bd->value.size()) bd->grad.assign(bd->value.size(), T(0));
                for (std::size_t i = 0; i < bd->grad.size(); ++i) bd->grad[i] -= od->grad[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> mul(Tape<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    NRX_REQUIRE(a.shape() == b.shape(), "mul: shape mismatch " << shape_str(a.shape()) << " vs "
                                                               << shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    if (detail::track_out(g, {&a, &b})) {
        out.set_requires_grad();
        auto ad = a.data(), bd = b.data(), od = out.data();
        g.record([ad, bd, od] {
            if (ad->track) {
                if (ad->grad.size() != ad->value.size()) ad->grad.assign(ad->value.size(), T(0));
                for (std::size_t i = 0; i < ad->grad.size(); ++i)
                    ad->grad[i] += od->grad[i] * bd->value[i];
            }
            if (bd->track) {
                if (bd->grad.size() != bd->value.size()) bd->grad.assign(bd->value.size(), T(0));
                for (std::size_t i = 0; i < bd->grad.size(); ++i)
                    bd->grad[i] += od->grad[i] * ad->value[i];
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> scale(Tape<T>& g, const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const auto& av = a.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
    if (detail::track_out(g, {&a})) {
        out.set_requires_grad();
        auto ad = a.data(), od = out.data();
        g.record([ad, od, c] {
            if (ad->grad.size() != ad->value.size()) ad->grad.assign(ad->value.size(), T(0));
            for (std::size_t i = 0; i < ad->grad.size(); ++i) ad->grad[i] += od->grad[i] * c;
        });
    }
    return out;
}

template <class T>
Tensor<T> reshape(Tape<T>& g, const Tensor<T>& a, Shape shape) {
    NRX_REQUIRE(shape_numel(shape) == a.numel(),
                "reshape: cannot view " << shape_str(a.shape()) << " as " << shape_str(shape));
    Tensor<T> out = Tensor<T>::from(std::move(shape), a.value());
    if (detail::track_out(g, {&a})) {
        out.set_requires_grad();
        auto ad = a.data(), od = out.data();
        g.record([ad, od] {
            if (ad->grad.size() != ad->value.size()) ad->grad.assign(ad->value.size(), T(0));
            detail::add_into(ad->grad, od->grad);
        });
    }
    return out;
}

template <class T>
Tensor<T> transpose(Tape<T>& g, const Tensor<T>& a) {
    NRX_REQUIRE(a.rank() == 2, "transpose: expected rank-2, got " << shape_str(a.shape()));
    const std::size_t m = a.extent(0), n = a.extent(1);
    Tensor<T> out = Tensor<T>::zeros({n, m});
    detail::MapC<T> A(a.value().data(), static_cast<Eigen::Index>(m),
                      static_cast<Eigen::Index>(n));
    detail::MapM<T> O(out.value().data(), static_cast<Eigen::Index>(n),
                      static_cast<Eigen::Index>(m));
    O = A.transpose();
    if (detail::track_out(g, {&a})) {
        out.set_requires_grad();
        auto ad = a.data(), od = out.data();
        g.record([ad, od, m, n] {
            if (ad->grad.size() != ad->value.size()) ad->grad.assign(ad->value.size(), T(0));
            detail::MapM<T> dA(ad->grad.data(), static_cast<Eigen::Index>(m),
                               static_cast<Eigen::Index>(n));
            detail::MapC<T> dO(od->grad.data(), static_cast<Eigen::Index>(n),
                               static_cast<Eigen::Index>(m));
            dA += dO.transpose();
        });
    }
    return out;
}

template <class T>
Tensor<T> slice_cols(Tape<T>& g, const Tensor<T>& a, std::size_t c0, std::size_t c1) {
    NRX_REQUIRE(a.rank() == 2, "slice_cols: expected rank-2, got " << shape_str(a.shape()));
    NRX_REQUIRE(c0 < c1 && c1 <= a.extent(1),
                "slice_cols: range [" << c0 << "," << c1 << ") out of " << a.extent(1));
    const std::size_t m = a.extent(0), n = a.extent(1), w = c1 - c0;
    Tensor<T> out = Tensor<T>::zeros({m, w});
    for (std::size_t r = 0; r < m; ++r)
        std::copy_n(a.value().data() + r * n + c0, w, out.value().data() + r * w);
    if (detail::track_out(g, {&a})) {
        out.set_requires_grad();
        auto ad = a.data(), od = out.data();
        g.record([ad, od, m, n, w, c0] {
            if (ad->grad.size() != ad->value.size()) ad->grad.assign(ad->value.size(), T(0));
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < w; ++c)
                    ad->grad[r * n + c0 + c] += od->grad[r * w + c];
        });
    }
    return out;
}

template <class T>
Tensor<T> concat_cols(Tape<T>& g, const std::vector<Tensor<T>>& parts) {
    NRX_REQUIRE(!parts.empty(), "concat_cols: no inputs");
    const std::size_t m = parts.front().extent(0);
    std::size_t n = 0;
    for (const auto& p : parts) {
        NRX_REQUIRE(p.rank() == 2 && p.extent(0) == m,
                    "concat_cols: row mismatch " << shape_str(p.shape()));
        n += p.extent(1);
    }
    Tensor<T> out = Tensor<T>::zeros({m, n});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.extent(1);
        for (std::size_t r = 0; r < m; ++r)
            std::copy_n(p.value().data() + r * w, w, out.value().data() + r * n + off);
        off += w;
    }
    bool track = false;
    for (const auto& p : parts) track = track || (g.recording() && p.tracked());
    if (track) {
        out.set_requires_grad();
        std::vector<std::shared_ptr<TensorData<T>>> pd;
        for (const auto& p : parts) pd.push_back(p.data());
        auto od = out.data();
        g.record([pd, od, m, n] {
            std::size_t off = 0;
            for (auto& d : pd) {
                const std::size_t w = d->shape[1];
                if (d->track) {
                    if (d->grad.size() != d->value.size()) d->grad.assign(d->value.size(), T(0));
                    for (std::size_t r = 0; r < m; ++r)
                        for (std::size_t c = 0; c < w; ++c)
                            d->grad[r * w + c] += od->grad[r * n + off + c];
                }
                off += w;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// linear algebra

template <class T>
Tensor<T> matmul(Tape<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
    NRX_REQUIRE(a.rank() == 2 && b.rank() == 2,
                "matmul: expected rank-2 inputs, got " << shape_str(a.shape()) << " and "
                                                       << shape_str(b.shape()));
    NRX_REQUIRE(a.extent(1) == b.extent(0), "matmul: inner extents differ, "
                                                << shape_str(a.shape()) << " vs "
                                                << shape_str(b.shape()));
    const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor<T> out = Tensor<T>::zeros({m, n});
    {
        detail::MapC<T> A(a.value().data(), m, k);
        detail::MapC<T> B(b.value().data(), k, n);
        detail::MapM<T> O(out.value().data(), m, n);
        O.noalias() = A * B;
    }
    if (detail::track_out(g, {&a, &b})) {
        out.set_requires_grad();
        auto ad = a.data(), bd = b.data(), od = out.data();
        g.record([ad, bd, od, m, k, n] {
            detail::MapC<T> dO(od->grad.data(), m, n);
            if (ad->track) {
                if (ad->grad.size() != ad->value.size()) ad->grad.assign(ad->value.size(), T(0));
                detail::MapC<T> B(bd->value.data(), k, n);
                detail::MapM<T> dA(ad->grad.data(), m, k);
                dA.noalias() += dO * B.transpose();
            }
            if (bd->track) {
                if (bd->grad.size() != bd->value.size()) bd->grad.assign(bd->value.size(), T(0));
                detail::MapC<T> A(ad->value.data(), m, k);
                detail::MapM<T> dB(bd->grad.data(), k, n);
                dB.noalias() += A.transpose() * dO;
            }
        });
    }
    return out;
}

// Affine map over the last axis, broadcast over all leading axes.
template <class T>
Tensor<T> dense(Tape<T>& g, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    NRX_REQUIRE(x.rank() >= 1 && w.rank() == 2 && b.rank() == 1,
                "dense: bad ranks " << shape_str(x.shape()) << ", " << shape_str(w.shape())
                                    << ", " << shape_str(b.shape()));
    const std::size_t f = x.extent(x.rank() - 1);
    NRX_REQUIRE(f == w.extent(0), "dense: input features " << f << " != weight rows "
                                                           << w.extent(0));
    const std::size_t d = w.extent(1);
    NRX_REQUIRE(b.extent(0) == d, "dense: bias length " << b.extent(0) << " != units " << d);
    const std::size_t rows = x.numel() / f;
    Shape oshape = x.shape();
    oshape.back() = d;
    Tensor<T> out = Tensor<T>::zeros(oshape);
    {
        detail::MapC<T> X(x.value().data(), rows, f);
        detail::MapC<T> W(w.value().data(), f, d);
        detail::MapM<T> O(out.value().data(), rows, d);
        O.noalias() = X * W;
        O.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(b.value().data(), d);
    }
    if (detail::track_out(g, {&x, &w, &b})) {
        out.set_requires_grad();
        auto xd = x.data(), wd = w.data(), bdat = b.data(), od = out.data();
        g.record([xd, wd, bdat, od, rows, f, d] {
            detail::MapC<T> dO(od->grad.data(), rows, d);
            if (xd->track) {
                if (xd->grad.size() != xd->value.size()) xd->grad.assign(xd->value.size(), T(0));
                detail::MapC<T> W(wd->value.data(), f, d);
                detail::MapM<T> dX(xd->grad.data(), rows, f);
                dX.noalias() += dO * W.transpose();
            }
            if (wd->track) {
                if (wd->grad.size() != wd->value.size()) wd->grad.assign(wd->value.size(), T(0));
                detail::MapC<T> X(xd->value.data(), rows, f);
                detail::MapM<T> dW(wd->grad.data(), f, d);
                dW.noalias() += X.transpose() * dO;
            }
            if (bdat->track) {
                if (bdat->grad.size() != bdat->value.size())
                    bdat->grad.assign(bdat->value.size(), T(0));
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> dB(bdat->grad.data(), d);
                dB += dO.colwise().sum();
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// nonlinearities

// Numerically stable softmax along `axis` (max-subtraction).
template <class T>
Tensor<T> softmax(Tape<T>& g, const Tensor<T>& x, std::size_t axis) {
    NRX_REQUIRE(axis < x.rank(), "softmax: axis " << axis << " out of rank " << x.rank());
    const std::size_t n = x.extent(axis);
    std::size_t inner = 1, outer = 1;
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.extent(i);
    for (std::size_t i = 0; i < axis; ++i) outer *= x.extent(i);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.value();
    auto& ov = out.value();
    if (inner == 1) {
        // contiguous rows: SIMD exp/sum
        using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
        for (std::size_t o = 0; o < outer; ++o) {
            Eigen::Map<const Arr> row(xv.data() + o * n, n);
            Eigen::Map<Arr> orow(ov.data() + o * n, n);
            orow = (row - row.maxCoeff()).exp();
            orow /= orow.sum();
        }
    } else {
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
                const std::size_t base = o * n * inner + i;
                T mx = xv[base];
                for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
                T sum = T(0);
                for (std::size_t j = 0; j < n; ++j) {
                    const T e = std::exp(xv[base + j * inner] - mx);
                    ov[base + j * inner] = e;
                    sum += e;
                }
                const T inv = T(1) / sum;
                for (std::size_t j = 0; j < n; ++j) ov[base + j * inner] *= inv;
            }
    }
    if (detail::track_out(g, {&x})) {
        out.set_requires_grad();
        auto xd = x.data(), od = out.data();
        g.record([xd, od, outer, inner, n] {
            if (xd->grad.size() != xd->value.size()) xd->grad.assign(xd->value.size(), T(0));
            if (inner == 1) {
                using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
                for (std::size_t o = 0; o < outer; ++o) {
                    Eigen::Map<const Arr> y(od->value.data() + o * n, n);
                    Eigen::Map<const Arr> dy(od->grad.data() + o * n, n);
                    Eigen::Map<Arr> dx(xd->grad.data() + o * n, n);
                    const T dot = (dy * y).sum();
                    dx += y * (dy - dot);
                }
                return;
            }
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < inner; ++i) {
                    const std::size_t base = o * n * inner + i;
                    T dot = T(0);
                    for (std::size_t j = 0; j < n; ++j)
                        dot += od->grad[base + j * inner] * od->value[base + j * inner];
                    for (std::size_t j = 0; j < n; ++j) {
                        const std::size_t idx = base + j * inner;
                        xd->grad[idx] += od->value[idx] * (od->grad[idx] - dot);
                    }
                }
        });
    }
    return out;
}

// Per-vector normalization over the last axis, then elementwise affine.
template <class T>
Tensor<T> layer_norm(Tape<T>& g, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& shift, T eps = T(1e-5)) {
    NRX_REQUIRE(x.rank() >= 1, "layer_norm: rank-0 input");
    const std::size_t d = x.extent(x.rank() - 1);
    NRX_REQUIRE(gain.rank() == 1 && gain.extent(0) == d && shift.rank() == 1 &&
                    shift.extent(0) == d,
                "layer_norm: gain/shift must have shape (" << d << ")");
    const std::size_t rows = x.numel() / d;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    // Cache normalized values and inverse stddev per row for the backward pass.
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto rstd = std::make_shared<std::vector<T>>(rows);
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* p = xv.data() + r * d;
        T mean = T(0);
        for (std::size_t j = 0; j < d; ++j) mean += p[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (std::size_t j = 0; j < d; ++j) {
            const T c = p[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T rs = T(1) / std::sqrt(var + eps);
        (*rstd)[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const T xh = (p[j] - mean) * rs;
            (*xhat)[r * d + j] = xh;
            ov[r * d + j] = gain.value()[j] * xh + shift.value()[j];
        }
    }
    if (detail::track_out(g, {&x, &gain, &shift})) {
        out.set_requires_grad();
        auto xd = x.data(), gd = gain.data(), sd = shift.data(), od = out.data();
        g.record([xd, gd, sd, od, xhat, rstd, rows, d] {
            for (std::size_t r = 0; r < rows; ++r) {
                const T* dy = od->grad.data() + r * d;
                const T* xh = xhat->data() + r * d;
                if (gd->track) {
                    if (gd->grad.size() != gd->value.size())
                        gd->grad.assign(gd->value.size(), T(0));
                    for (std::size_t j = 0; j < d; ++j) gd->grad[j] += dy[j] * xh[j];
                }
                if (sd->track) {
                    if (sd->grad.size() != sd->value.size())
                        sd->grad.assign(sd->value.size(), T(0));
                    for (std::size_t j = 0; j < d; ++j) sd->grad[j] += dy[j];
                }
                if (xd->track) {
                    if (xd->grad.size() != xd->value.size())
                        xd->grad.assign(xd->value.size(), T(0));
                    T mg = T(0), mgx = T(0);
                    for (std::size_t j = 0; j < d; ++j) {
                        const T gj = dy[j] * gd->value[j];
                        mg += gj;
                        mgx += gj * xh[j];
                    }
                    mg /= static_cast<T>(d);
                    mgx /= static_cast<T>(d);
                    const T rs = (*rstd)[r];
                    for (std::size_t j = 0; j < d; ++j) {
                        const T gj = dy[j] * gd->value[j];
                        xd->grad[r * d + j] += (gj - mg - xh[j] * mgx) * rs;
                    }
                }
            }
        });
    }
    return out;
}

// PReLU; alpha has one entry per last-axis channel, or a single shared entry.
template <class T>
Tensor<T> prelu(Tape<T>& g, const Tensor<T>& x, const Tensor<T>& alpha) {
    NRX_REQUIRE(alpha.rank() == 1, "prelu: alpha must be rank-1");
    const std::size_t c = x.rank() ? x.extent(x.rank() - 1) : 1;
    const std::size_t na = alpha.extent(0);
    NRX_REQUIRE(na == 1 || na == c,
                "prelu: alpha length " << na << " does not match channels " << c);
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const T a = alpha.value()[na == 1 ? 0 : i % c];
        ov[i] = xv[i] >= T(0) ? xv[i] : a * xv[i];
    }
    if (detail::track_out(g, {&x, &alpha})) {
        out.set_requires_grad();
        auto xd = x.data(), adx = alpha.data(), od = out.data();
        g.record([xd, adx, od, c, na] {
            if (xd->track && xd->grad.size() != xd->value.size())
                xd->grad.assign(xd->value.size(), T(0));
            if (adx->track && adx->grad.size() != adx->value.size())
                adx->grad.assign(adx->value.size(), T(0));
            for (std::size_t i = 0; i < od->grad.size(); ++i) {
                const std::size_t ai = na == 1 ? 0 : i % c;
                const T xi = xd->value[i];
                if (xd->track)
                    xd->grad[i] += od->grad[i] * (xi >= T(0) ? T(1) : adx->value[ai]);
                if (adx->track && xi < T(0)) adx->grad[ai] += od->grad[i] * xi;
            }
        });
    }
    return out;
}

// Inverted dropout; identity when not training or rate == 0.
template <class T>
Tensor<T> dropout(Tape<T>& g, const Tensor<T>& x, double rate, bool training, Rng& rng) {
    NRX_REQUIRE(rate >= 0.0 && rate < 1.0, "dropout: rate " << rate << " outside [0,1)");
    if (!training || rate == 0.0) {
        Tensor<T> out = Tensor<T>::from(x.shape(), x.value());
        if (detail::track_out(g, {&x})) {
            out.set_requires_grad();
            auto xd = x.data(), od = out.data();
            g.record([xd, od] {
                if (xd->grad.size() != xd->value.size()) xd->grad.assign(xd->value.size(), T(0));
                detail::add_into(xd->grad, od->grad);
            });
        }
        return out;
    }
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    auto mask = std::make_shared<std::vector<std::uint8_t>>(x.numel());
    const T keep_scale = T(1.0 / (1.0 - rate));
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const bool keep = rng.uniform(0.0, 1.0) >= rate;
        (*mask)[i] = keep;
        ov[i] = keep ? xv[i] * keep_scale : T(0);
    }
    if (detail::track_out(g, {&x})) {
        out.set_requires_grad();
        auto xd = x.data(), od = out.data();
        g.record([xd, od, mask, keep_scale] {
            if (xd->grad.size() != xd->value.size()) xd->grad.assign(xd->value.size(), T(0));
            for (std::size_t i = 0; i < xd->grad.size(); ++i)
                if ((*mask)[i]) xd->grad[i] += od->grad[i] * keep_scale;
        });
    }
    return out;
}

template <class T>
Tensor<T> softplus(Tape<T>& g, const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const auto& xv = x.value();
    auto& ov = out.value();
    for (std::size_t i = 0; i < ov.size(); ++i)
        ov[i] = std::max(xv[i], T(0)) + std::log1p(std::exp(-std::abs(xv[i])));
    if (detail::track_out(g, {&x})) {
        out.set_requires_grad();
        auto xd = x.data(), od = out.data();
        g.record([xd, od] {
            if (xd->grad.size() != xd->value.size()) xd->grad.assign(xd->value.size(), T(0));
            for (std::size_t i = 0; i < xd->grad.size(); ++i) {
                const T xi = xd->value[i];
                const T sig = xi >= T(0) ? T(1) / (T(1) + std::exp(-xi))
                                         : std::exp(xi) / (T(1) + std::exp(xi));
                xd->grad[i] += od->grad[i] * sig;
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> sum(Tape<T>& g, const Tensor<T>& x) {
    T s = T(0);
    for (const T v : x.value()) s += v;
    Tensor<T> out = Tensor<T>::scalar(s);
    if (detail::track_out(g, {&x})) {
        out.set_requires_grad();
        auto xd = x.data(), od = out.data();
        g.record([xd, od] {
            if (xd->grad.size() != xd->value.size()) xd->grad.assign(xd->value.size(), T(0));
            const T dy = od->grad[0];
            for (auto& v : xd->grad) v += dy;
        });
    }
    return out;
}

template <class T>
Tensor<T> mean(Tape<T>& g, const Tensor<T>& x) {
    Tensor<T> s = sum(g, x);
    return scale(g, s, T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// conv2d: channels-last x (H,W,Cin), kernels (kh,kw,Cin,Cout), "same" zero
// padding, odd kernel extents. Lowered to GEMM through im2col.

namespace detail {

template <class T>
void im2col(const AlignedVec<T>& x, std::size_t h, std::size_t w, std::size_t cin,
            std::size_t kh, std::size_t kw, AlignedVec<T>& cols) {
    const std::size_t ph = kh / 2, pw = kw / 2;
    const std::size_t patch = kh * kw * cin;
    cols.assign(h * w * patch, T(0));
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            T* dst = cols.data() + (i * w + j) * patch;
            for (std::size_t di = 0; di < kh; ++di) {
                const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + di) -
                                          static_cast<std::ptrdiff_t>(ph);
                if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t dj = 0; dj < kw; ++dj) {
                    const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dj) -
                                              static_cast<std::ptrdiff_t>(pw);
                    if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
                    std::copy_n(x.data() + (static_cast<std::size_t>(si) * w +
                                            static_cast<std::size_t>(sj)) *
                                               cin,
                                cin, dst + (di * kw + dj) * cin);
                }
            }
        }
}

template <class T>
void col2im(const AlignedVec<T>& cols, std::size_t h, std::size_t w, std::size_t cin,
            std::size_t kh, std::size_t kw, AlignedVec<T>& x) {
    const std::size_t ph = kh / 2, pw = kw / 2;
    const std::size_t patch = kh * kw * cin;
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const T* src = cols.data() + (i * w + j) * patch;
            for (std::size_t di = 0; di < kh; ++di) {
                const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + di) -
                                          static_cast<std::ptrdiff_t>(ph);
                if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t dj = 0; dj < kw; ++dj) {
                    const std::ptrdiff_t sj = static_cast<std::ptrdiff_t>(j + dj) -
                                              static_cast<std::ptrdiff_t>(pw);
                    if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
                    T* dst = x.data() + (static_cast<std::size_t>(si) * w +
                                         static_cast<std::size_t>(sj)) *
                                            cin;
                    const T* s = src + (di * kw + dj) * cin;
                    for (std::size_t c = 0; c < cin; ++c) dst[c] += s[c];
                }
            }
        }
}

}  // namespace detail

template <class T>
Tensor<T> conv2d(Tape<T>& g, const Tensor<T>& x, const Tensor<T>& kernels,
                 const Tensor<T>& bias) {
    NRX_REQUIRE(x.rank() == 3, "conv2d: input must be (H,W,Cin), got " << shape_str(x.shape()));
    NRX_REQUIRE(kernels.rank() == 4,
                "conv2d: kernels must be (kh,kw,Cin,Cout), got " << shape_str(kernels.shape()));
    const std::size_t h = x.extent(0), w = x.extent(1), cin = x.extent(2);
    const std::size_t kh = kernels.extent(0), kw = kernels.extent(1);
    NRX_REQUIRE(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel extents must be odd, got "
                                                << kh << "x" << kw);
    NRX_REQUIRE(kernels.extent(2) == cin, "conv2d: kernel channels " << kernels.extent(2)
                                                                     << " != input channels "
                                                                     << cin);
    const std::size_t cout = kernels.extent(3);
    NRX_REQUIRE(bias.rank() == 1 && bias.extent(0) == cout,
                "conv2d: bias length " << bias.extent(0) << " != output channels " << cout);

    const std::size_t rows = h * w, patch = kh * kw * cin;
    auto cols = std::make_shared<AlignedVec<T>>();
    detail::im2col(x.value(), h, w, cin, kh, kw, *cols);

    Tensor<T> out = Tensor<T>::zeros({h, w, cout});
    {
        detail::MapC<T> M(cols->data(), rows, patch);
        detail::MapC<T> K(kernels.value().data(), patch, cout);
        detail::MapM<T> O(out.value().data(), rows, cout);
        O.noalias() = M * K;
        O.rowwise() +=
            Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().data(), cout);
    }
    if (detail::track_out(g, {&x, &kernels, &bias})) {
        out.set_requires_grad();
        auto xd = x.data(), kd = kernels.data(), bd = bias.data(), od = out.data();
        g.record([xd, kd, bd, od, cols, h, w, cin, kh, kw, cout, rows, patch] {
            detail::MapC<T> dO(od->grad.data(), rows, cout);
            if (kd->track) {
                if (kd->grad.size() != kd->value.size()) kd->grad.assign(kd->value.size(), T(0));
                detail::MapC<T> M(cols->data(), rows, patch);
                detail::MapM<T> dK(kd->grad.data(), patch, cout);
                dK.noalias() += M.transpose() * dO;
            }
            if (bd->track) {
                if (bd->grad.size() != bd->value.size()) bd->grad.assign(bd->value.size(), T(0));
                Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> dB(bd->grad.data(), cout);
                dB += dO.colwise().sum();
            }
            if (xd->track) {
                if (xd->grad.size() != xd->value.size()) xd->grad.assign(xd->value.size(), T(0));
                AlignedVec<T> dcols(rows * patch);
                detail::MapC<T> K(kd->value.data(), patch, cout);
                detail::MapM<T> dM(dcols.data(), rows, patch);
                dM.noalias() = dO * K.transpose();
                detail::col2im(dcols, h, w, cin, kh, kw, xd->grad);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adam

template <class T>
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<std::vector<T>> m, v;  // one buffer pair per parameter

    void init(const std::vector<Tensor<T>>& params) {
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p.numel(), T(0));
            v.emplace_back(p.numel(), T(0));
        }
        step = 0;
    }
};

// One bias-corrected Adam update; reads each parameter's .grad().
template <class T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state) {
    NRX_REQUIRE(state.m.size() == params.size(),
                "adam_step: state holds " << state.m.size() << " buffers for " << params.size()
                                          << " parameters");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& val = params[p].value();
        auto& grd = params[p].grad();
        NRX_REQUIRE(state.m[p].size() == val.size(), "adam_step: parameter " << p
                                                                             << " changed size");
        for (std::size_t i = 0; i < val.size(); ++i) {
            const double gi = static_cast<double>(grd[i]);
            const double mi = state.beta1 * static_cast<double>(state.m[p][i]) +
                              (1.0 - state.beta1) * gi;
            const double vi = state.beta2 * static_cast<double>(state.v[p][i]) +
                              (1.0 - state.beta2) * gi * gi;
            state.m[p][i] = static_cast<T>(mi);
            state.v[p][i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            val[i] = static_cast<T>(static_cast<double>(val[i]) -
                                    state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

// ---------------------------------------------------------------------------
// initializers

template <class T>
void fill_glorot_uniform(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : w.value()) v = static_cast<T>(rng.uniform(-limit, limit));
}

template <class T>
void fill_he_uniform(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : w.value()) v = static_cast<T>(rng.uniform(-limit, limit));
}

}  // namespace nrx
