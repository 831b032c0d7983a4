#pragma once

#include <algorithm>
#include <cmath>
#include <Eigen/Dense>

#include "cfci/core/autodiff.hpp"

namespace cfci {

using EigenRowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EigenMap = Eigen::Map<EigenRowMat>;
using EigenCMap = Eigen::Map<const EigenRowMat>;

// ---------------------------------------------------------------------------
// broadcasting helpers
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// strides of `src` aligned to broadcast result `out`, 0 where broadcast
inline std::vector<std::int64_t> broadcast_strides(const Shape& src, const Shape& out) {
    std::vector<std::int64_t> st(out.size(), 0);
    std::vector<std::int64_t> src_st(src.size(), 1);
    for (int i = static_cast<int>(src.size()) - 2; i >= 0; --i)
        src_st[i] = src_st[i + 1] * src[i + 1];
    const std::size_t off = out.size() - src.size();
    for (std::size_t i = 0; i < src.size(); ++i)
        st[off + i] = (src[i] == 1 && out[off + i] != 1) ? 0 : src_st[i];
    return st;
}

template <class F>
inline Tensor ew_binary(const Tensor& a, const Tensor& b, F f) {
    if (same_shape(a, b)) {
        Tensor out(Shape(a.shape()));
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        const std::int64_t n = a.numel();
        for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
        return out;
    }
    const Shape os = broadcast_shape(a.shape(), b.shape());
    Tensor out{Shape(os)};
    const auto sa = broadcast_strides(a.shape(), os);
    const auto sb = broadcast_strides(b.shape(), os);
    const std::size_t r = os.size();
    std::vector<std::int64_t> idx(r, 0);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    std::int64_t oa = 0, ob = 0;
    const std::int64_t n = out.numel();
    for (std::int64_t lin = 0; lin < n; ++lin) {
        po[lin] = f(pa[oa], pb[ob]);
        for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
            oa += sa[d];
            ob += sb[d];
            if (++idx[d] < os[d]) break;
            idx[d] = 0;
            oa -= sa[d] * os[d];
            ob -= sb[d] * os[d];
        }
    }
    return out;
}

/// Sum `g` down to `target` (inverse of broadcasting).
inline Tensor reduce_to(const Tensor& g, const Shape& target) {
    if (g.shape() == target) return g;
    Tensor out{Shape(target)};
    const auto st = broadcast_strides(target, g.shape());
    const Shape& gs = g.shape();
    const std::size_t r = gs.size();
    std::vector<std::int64_t> idx(r, 0);
    const double* pg = g.data();
    double* po = out.data();
    std::int64_t ot = 0;
    const std::int64_t n = g.numel();
    for (std::int64_t lin = 0; lin < n; ++lin) {
        po[ot] += pg[lin];
        for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
            ot += st[d];
            if (++idx[d] < gs[d]) break;
            idx[d] = 0;
            ot -= st[d] * gs[d];
        }
    }
    return out;
}

inline void accumulate_reduced(Node& parent, const Tensor& g) {
    accumulate_grad(parent, reduce_to(g, parent.value.shape()));
}

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    Tensor out = ew_binary(a.value(), b.value(), [](double x, double y) { return x + y; });
    return make_op(std::move(out), {a, b}, [](Node& n) {
        accumulate_reduced(*n.parents[0], n.grad);
        accumulate_reduced(*n.parents[1], n.grad);
    });
}

inline Var sub(const Var& a, const Var& b) {
    Tensor out = ew_binary(a.value(), b.value(), [](double x, double y) { return x - y; });
    return make_op(std::move(out), {a, b}, [](Node& n) {
        accumulate_reduced(*n.parents[0], n.grad);
        Tensor neg{Shape(n.grad.shape())};
        const double* pg = n.grad.data();
        double* pn = neg.data();
        for (std::int64_t i = 0; i < neg.numel(); ++i) pn[i] = -pg[i];
        accumulate_reduced(*n.parents[1], neg);
    });
}

inline Var mul(const Var& a, const Var& b) {
    Tensor av = a.value(), bv = b.value();
    Tensor out = ew_binary(av, bv, [](double x, double y) { return x * y; });
    return make_op(std::move(out), {a, b}, [av, bv](Node& n) {
        accumulate_reduced(*n.parents[0], ew_binary(n.grad, bv, [](double g, double y) { return g * y; }));
        accumulate_reduced(*n.parents[1], ew_binary(n.grad, av, [](double g, double x) { return g * x; }));
    });
}

inline Var div(const Var& a, const Var& b) {
    Tensor av = a.value(), bv = b.value();
    Tensor out = ew_binary(av, bv, [](double x, double y) { return x / y; });
    return make_op(std::move(out), {a, b}, [av, bv](Node& n) {
        accumulate_reduced(*n.parents[0], ew_binary(n.grad, bv, [](double g, double y) { return g / y; }));
        Tensor gb = ew_binary(n.grad, ew_binary(av, bv, [](double x, double y) { return -x / (y * y); }),
                              [](double g, double t) { return g * t; });
        accumulate_reduced(*n.parents[1], gb);
    });
}

template <class F, class DF>
inline Var ew_unary(const Var& a, F f, DF df) {
    const Tensor& av = a.value();
    Tensor out{Shape(av.shape())};
    const double* pa = av.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < av.numel(); ++i) po[i] = f(pa[i]);
    Tensor av_keep = av;
    return make_op(std::move(out), {a}, [av_keep, df](Node& n) {
        Tensor gx{Shape(av_keep.shape())};
        const double* pg = n.grad.data();
        const double* px = av_keep.data();
        const double* py = n.value.data();
        double* pd = gx.data();
        for (std::int64_t i = 0; i < gx.numel(); ++i) pd[i] = pg[i] * df(px[i], py[i]);
        accumulate_grad(*n.parents[0], gx);
    });
}

inline Var neg(const Var& a) {
    return ew_unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}
inline Var relu(const Var& a) {
    return ew_unary(a, [](double x) { return x > 0 ? x : 0.0; },
                    [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}
inline Var sigmoid(const Var& a) {
    return ew_unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}
inline Var gelu(const Var& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return ew_unary(a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
                    [=](double x, double) {
                        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                        return cdf + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
                    });
}
inline Var exp_op(const Var& a) {
    return ew_unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Var log_op(const Var& a) {
    return ew_unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}
inline Var sqrt_op(const Var& a) {
    return ew_unary(a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}
inline Var square(const Var& a) {
    return ew_unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Var mul_scalar(const Var& a, double s) {
    return ew_unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}
inline Var add_scalar(const Var& a, double s) {
    return ew_unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Shape reduced_shape(const Shape& s, const std::vector<int>& axes, bool keepdims) {
    std::vector<bool> drop(s.size(), false);
    for (int a : axes) drop[a] = true;
    Shape out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (drop[i]) {
            if (keepdims) out.push_back(1);
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

/// Sum over `axes` (keepdims). Backward re-broadcasts.
inline Var sum_axes(const Var& a, const std::vector<int>& axes, bool keepdims = true) {
    const Tensor& av = a.value();
    Shape os = reduced_shape(av.shape(), axes, true);
    Tensor out = reduce_to(av, os);
    Shape final = keepdims ? os : reduced_shape(av.shape(), axes, false);
    Tensor out_f = out.reshaped(Shape(final));
    Shape in_shape = av.shape();
    return make_op(std::move(out_f), {a}, [os, in_shape](Node& n) {
        Tensor g = n.grad.reshaped(Shape(os));
        Tensor gx = ew_binary(Tensor(Shape(in_shape)), g, [](double, double y) { return y; });
        accumulate_grad(*n.parents[0], gx);
    });
}

inline Var mean_axes(const Var& a, const std::vector<int>& axes, bool keepdims = true) {
    std::int64_t cnt = 1;
    for (int ax : axes) cnt *= a.shape()[ax];
    return mul_scalar(sum_axes(a, axes, keepdims), 1.0 / static_cast<double>(cnt));
}

inline Var sum_all(const Var& a) {
    const Tensor& av = a.value();
    double s = 0;
    const double* p = av.data();
    for (std::int64_t i = 0; i < av.numel(); ++i) s += p[i];
    Shape in_shape = av.shape();
    return make_op(Tensor::scalar(s), {a}, [in_shape](Node& n) {
        accumulate_grad(*n.parents[0], Tensor(Shape(in_shape), n.grad.item()));
    });
}

inline Var mean_all(const Var& a) {
    return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// movement
// ---------------------------------------------------------------------------

inline Var reshape(const Var& a, Shape shape) {
    Shape in_shape = a.shape();
    Tensor out = a.value().reshaped(std::move(shape));
    return make_op(std::move(out), {a}, [in_shape](Node& n) {
        accumulate_grad(*n.parents[0], n.grad.reshaped(Shape(in_shape)));
    });
}

inline Tensor permute_tensor(const Tensor& t, const std::vector<int>& perm) {
    const Shape& s = t.shape();
    Shape os(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) os[i] = s[perm[i]];
    Tensor out{Shape(os)};
    const auto in_st = t.strides();
    std::vector<std::int64_t> st(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) st[i] = in_st[perm[i]];
    std::vector<std::int64_t> idx(os.size(), 0);
    const double* pi = t.data();
    double* po = out.data();
    std::int64_t oi = 0;
    const std::int64_t n = out.numel();
    for (std::int64_t lin = 0; lin < n; ++lin) {
        po[lin] = pi[oi];
        for (int d = static_cast<int>(os.size()) - 1; d >= 0; --d) {
            oi += st[d];
            if (++idx[d] < os[d]) break;
            idx[d] = 0;
            oi -= st[d] * os[d];
        }
    }
    return out;
}

inline Var permute(const Var& a, const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
    Tensor out = permute_tensor(a.value(), perm);
    return make_op(std::move(out), {a}, [inv](Node& n) {
        accumulate_grad(*n.parents[0], permute_tensor(n.grad, inv));
    });
}

inline Var concat(const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: empty");
    const Shape& s0 = parts[0].shape();
    Shape os = s0;
    std::int64_t total = 0;
    for (const auto& p : parts) total += p.shape()[axis];
    os[axis] = total;
    Tensor out{Shape(os)};

    // outer = product of dims before axis, inner = product after
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= os[i];
    for (std::size_t i = axis + 1; i < os.size(); ++i) inner *= os[i];

    std::vector<std::int64_t> sizes;
    for (const auto& p : parts) sizes.push_back(p.shape()[axis]);

    double* po = out.data();
    std::int64_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const double* pp = parts[k].value().data();
        const std::int64_t blk = sizes[k] * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(pp + o * blk, pp + (o + 1) * blk, po + o * total * inner + off);
        off += blk;
    }
    return make_op(std::move(out), parts, [sizes, outer, inner, total](Node& n) {
        const double* pg = n.grad.data();
        std::int64_t off = 0;
        for (std::size_t k = 0; k < n.parents.size(); ++k) {
            Node& p = *n.parents[k];
            const std::int64_t blk = sizes[k] * inner;
            if (p.requires_grad) {
                Tensor gp{Shape(p.value.shape())};
                double* pd = gp.data();
                for (std::int64_t o = 0; o < outer; ++o)
                    std::copy(pg + o * total * inner + off, pg + o * total * inner + off + blk, pd + o * blk);
                accumulate_grad(p, gp);
            }
            off += blk;
        }
    });
}

inline Var slice(const Var& a, int axis, std::int64_t start, std::int64_t len) {
    const Shape& s = a.shape();
    Shape os = s;
    os[axis] = len;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    Tensor out{Shape(os)};
    const double* pa = a.value().data();
    double* po = out.data();
    const std::int64_t in_blk = s[axis] * inner;
    const std::int64_t out_blk = len * inner;
    for (std::int64_t o = 0; o < outer; ++o)
        std::copy(pa + o * in_blk + start * inner, pa + o * in_blk + start * inner + out_blk, po + o * out_blk);
    Shape in_shape = s;
    return make_op(std::move(out), {a}, [axis, start, len, outer, inner, in_shape](Node& n) {
        Node& p = *n.parents[0];
        Tensor gp{Shape(in_shape)};
        const std::int64_t in_blk = in_shape[axis] * inner;
        const std::int64_t out_blk = len * inner;
        const double* pg = n.grad.data();
        double* pd = gp.data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy(pg + o * out_blk, pg + (o + 1) * out_blk, pd + o * in_blk + start * inner);
        accumulate_grad(p, gp);
    });
}

// ---------------------------------------------------------------------------
// matrix products (Eigen-backed)
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::int64_t n = av.dim(0), k = av.dim(1), m = bv.dim(1);
    if (bv.dim(0) != k) throw std::invalid_argument("matmul: inner dims disagree");
    Tensor out{Shape{n, m}};
    EigenCMap A(av.data(), n, k);
    EigenCMap B(bv.data(), k, m);
    EigenMap(out.data(), n, m).noalias() = A * B;
    Tensor av_keep = av, bv_keep = bv;
    return make_op(std::move(out), {a, b}, [av_keep, bv_keep, n, k, m](Node& nd) {
        EigenCMap G(nd.grad.data(), n, m);
        EigenCMap A(av_keep.data(), n, k);
        EigenCMap B(bv_keep.data(), k, m);
        if (nd.parents[0]->requires_grad) {
            Tensor ga{Shape{n, k}};
            EigenMap(ga.data(), n, k).noalias() = G * B.transpose();
            accumulate_grad(*nd.parents[0], ga);
        }
        if (nd.parents[1]->requires_grad) {
            Tensor gb{Shape{k, m}};
            EigenMap(gb.data(), k, m).noalias() = A.transpose() * G;
            accumulate_grad(*nd.parents[1], gb);
        }
    });
}

/// Batched matmul [G,n,k] x [G,k,m] -> [G,n,m].
inline Var bmm(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::int64_t g = av.dim(0), n = av.dim(1), k = av.dim(2), m = bv.dim(2);
    if (bv.dim(0) != g || bv.dim(1) != k) throw std::invalid_argument("bmm: shape mismatch");
    Tensor out{Shape{g, n, m}};
    for (std::int64_t i = 0; i < g; ++i) {
        EigenCMap A(av.data() + i * n * k, n, k);
        EigenCMap B(bv.data() + i * k * m, k, m);
        EigenMap(out.data() + i * n * m, n, m).noalias() = A * B;
    }
    Tensor av_keep = av, bv_keep = bv;
    return make_op(std::move(out), {a, b}, [av_keep, bv_keep, g, n, k, m](Node& nd) {
        if (nd.parents[0]->requires_grad) {
            Tensor ga{Shape{g, n, k}};
            for (std::int64_t i = 0; i < g; ++i) {
                EigenCMap G(nd.grad.data() + i * n * m, n, m);
                EigenCMap B(bv_keep.data() + i * k * m, k, m);
                EigenMap(ga.data() + i * n * k, n, k).noalias() = G * B.transpose();
            }
            accumulate_grad(*nd.parents[0], ga);
        }
        if (nd.parents[1]->requires_grad) {
            Tensor gb{Shape{g, k, m}};
            for (std::int64_t i = 0; i < g; ++i) {
                EigenCMap G(nd.grad.data() + i * n * m, n, m);
                EigenCMap A(av_keep.data() + i * n * k, n, k);
                EigenMap(gb.data() + i * k * m, k, m).noalias() = A.transpose() * G;
            }
            accumulate_grad(*nd.parents[1], gb);
        }
    });
}

// ---------------------------------------------------------------------------
// softmax over the last axis
// ---------------------------------------------------------------------------

inline Var softmax_last(const Var& a) {
    const Tensor& av = a.value();
    const Shape& s = av.shape();
    const std::int64_t cols = s.back();
    const std::int64_t rows = av.numel() / cols;
    Tensor out{Shape(s)};
    const double* px = av.data();
    double* py = out.data();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* x = px + r * cols;
        double* y = py + r * cols;
        double mx = x[0];
        for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
        double z = 0;
        for (std::int64_t c = 0; c < cols; ++c) {
            y[c] = std::exp(x[c] - mx);
            z += y[c];
        }
        const double inv = 1.0 / z;
        for (std::int64_t c = 0; c < cols; ++c) y[c] *= inv;
    }
    return make_op(std::move(out), {a}, [rows, cols](Node& n) {
        Tensor gx{Shape(n.value.shape())};
        const double* py = n.value.data();
        const double* pg = n.grad.data();
        double* pd = gx.data();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = py + r * cols;
            const double* g = pg + r * cols;
            double* d = pd + r * cols;
            double dot = 0;
            for (std::int64_t c = 0; c < cols; ++c) dot += g[c] * y[c];
            for (std::int64_t c = 0; c < cols; ++c) d[c] = y[c] * (g[c] - dot);
        }
        accumulate_grad(*n.parents[0], gx);
    });
}

} // namespace cfci
