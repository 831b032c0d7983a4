#pragma once

#include "cfci/core/ops.hpp"

namespace cfci {

// ---------------------------------------------------------------------------
// conv3d: im2col + GEMM, processed in output-depth slabs so the column
// buffer stays bounded even at 128^3.
// ---------------------------------------------------------------------------

namespace detail {

struct Conv3dDims {
    std::int64_t B, Ci, D, H, W, Co, k, stride, pad, od, oh, ow;
};

inline Conv3dDims conv3d_dims(const Shape& xs, const Shape& ws, std::int64_t stride, std::int64_t pad) {
    if (xs.size() != 5 || ws.size() != 5) throw std::invalid_argument("conv3d: expects 5-D input and weight");
    Conv3dDims d;
    d.B = xs[0]; d.Ci = xs[1]; d.D = xs[2]; d.H = xs[3]; d.W = xs[4];
    d.Co = ws[0]; d.k = ws[2];
    if (ws[1] != d.Ci) throw std::invalid_argument("conv3d: channel mismatch");
    d.stride = stride; d.pad = pad;
    d.od = (d.D + 2 * pad - d.k) / stride + 1;
    d.oh = (d.H + 2 * pad - d.k) / stride + 1;
    d.ow = (d.W + 2 * pad - d.k) / stride + 1;
    if (d.od < 1 || d.oh < 1 || d.ow < 1) throw std::invalid_argument("conv3d: kernel larger than padded input");
    return d;
}

inline std::int64_t conv3d_slab(const Conv3dDims& d) {
    const std::int64_t per_slice = d.Ci * d.k * d.k * d.k * d.oh * d.ow;
    const std::int64_t budget = 4'000'000; // doubles (~32 MB)
    return std::max<std::int64_t>(1, std::min(d.od, budget / std::max<std::int64_t>(1, per_slice)));
}

// cols: [Ci*k^3, nz*oh*ow] for output depth range [z0, z0+nz)
inline void im2col_slab(const double* x, const Conv3dDims& d, std::int64_t z0, std::int64_t nz, double* cols) {
    const std::int64_t plane = d.oh * d.ow;
    const std::int64_t ncol = nz * plane;
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < d.Ci; ++ci) {
        const double* xc = x + ci * d.D * d.H * d.W;
        for (std::int64_t kz = 0; kz < d.k; ++kz)
            for (std::int64_t ky = 0; ky < d.k; ++ky)
                for (std::int64_t kx = 0; kx < d.k; ++kx, ++row) {
                    double* c = cols + row * ncol;
                    for (std::int64_t oz = z0; oz < z0 + nz; ++oz) {
                        const std::int64_t iz = oz * d.stride - d.pad + kz;
                        for (std::int64_t oy = 0; oy < d.oh; ++oy) {
                            const std::int64_t iy = oy * d.stride - d.pad + ky;
                            double* cc = c + ((oz - z0) * d.oh + oy) * d.ow;
                            if (iz < 0 || iz >= d.D || iy < 0 || iy >= d.H) {
                                std::fill(cc, cc + d.ow, 0.0);
                                continue;
                            }
                            const double* xr = xc + (iz * d.H + iy) * d.W;
                            for (std::int64_t ox = 0; ox < d.ow; ++ox) {
                                const std::int64_t ix = ox * d.stride - d.pad + kx;
                                cc[ox] = (ix >= 0 && ix < d.W) ? xr[ix] : 0.0;
                            }
                        }
                    }
                }
    }
}

// scatter-add transpose of im2col_slab
inline void col2im_slab(const double* cols, const Conv3dDims& d, std::int64_t z0, std::int64_t nz, double* gx) {
    const std::int64_t plane = d.oh * d.ow;
    const std::int64_t ncol = nz * plane;
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < d.Ci; ++ci) {
        double* xc = gx + ci * d.D * d.H * d.W;
        for (std::int64_t kz = 0; kz < d.k; ++kz)
            for (std::int64_t ky = 0; ky < d.k; ++ky)
                for (std::int64_t kx = 0; kx < d.k; ++kx, ++row) {
                    const double* c = cols + row * ncol;
                    for (std::int64_t oz = z0; oz < z0 + nz; ++oz) {
                        const std::int64_t iz = oz * d.stride - d.pad + kz;
                        if (iz < 0 || iz >= d.D) continue;
                        for (std::int64_t oy = 0; oy < d.oh; ++oy) {
                            const std::int64_t iy = oy * d.stride - d.pad + ky;
                            if (iy < 0 || iy >= d.H) continue;
                            const double* cc = c + ((oz - z0) * d.oh + oy) * d.ow;
                            double* xr = xc + (iz * d.H + iy) * d.W;
                            for (std::int64_t ox = 0; ox < d.ow; ++ox) {
                                const std::int64_t ix = ox * d.stride - d.pad + kx;
                                if (ix >= 0 && ix < d.W) xr[ix] += cc[ox];
                            }
                        }
                    }
                }
    }
}

} // namespace detail

/// 3-D convolution. x [B,Ci,D,H,W], w [Co,Ci,k,k,k], optional bias [Co].
inline Var conv3d(const Var& x, const Var& w, const Var& bias, std::int64_t stride, std::int64_t pad) {
    using namespace detail;
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Conv3dDims d = conv3d_dims(xv.shape(), wv.shape(), stride, pad);
    const std::int64_t kk = d.Ci * d.k * d.k * d.k;
    const std::int64_t ovol = d.od * d.oh * d.ow;
    Tensor out{Shape{d.B, d.Co, d.od, d.oh, d.ow}};

    const bool pointwise = (d.k == 1 && d.stride == 1 && d.pad == 0);
    const std::int64_t slab = conv3d_slab(d);
    std::vector<double> cols;
    if (!pointwise) cols.resize(kk * slab * d.oh * d.ow);

    EigenCMap W(wv.data(), d.Co, kk);
    for (std::int64_t b = 0; b < d.B; ++b) {
        const double* xb = xv.data() + b * d.Ci * d.D * d.H * d.W;
        double* ob = out.data() + b * d.Co * ovol;
        if (pointwise) {
            EigenCMap X(xb, d.Ci, ovol);
            EigenMap(ob, d.Co, ovol).noalias() = W * X;
        } else {
            for (std::int64_t z0 = 0; z0 < d.od; z0 += slab) {
                const std::int64_t nz = std::min(slab, d.od - z0);
                im2col_slab(xb, d, z0, nz, cols.data());
                EigenCMap C(cols.data(), kk, nz * d.oh * d.ow);
                // output rows are strided by full depth; write through a temp map per slab
                Eigen::Map<EigenRowMat, 0, Eigen::OuterStride<>> O(
                    ob + z0 * d.oh * d.ow, d.Co, nz * d.oh * d.ow, Eigen::OuterStride<>(ovol));
                O.noalias() = W * C;
            }
        }
    }
    const bool has_bias = bias.defined();
    if (has_bias) {
        const double* pb = bias.value().data();
        double* po = out.data();
        for (std::int64_t b = 0; b < d.B; ++b)
            for (std::int64_t co = 0; co < d.Co; ++co) {
                const double bv = pb[co];
                double* p = po + (b * d.Co + co) * ovol;
                for (std::int64_t i = 0; i < ovol; ++i) p[i] += bv;
            }
    }

    std::vector<Var> parents = {x, w};
    if (has_bias) parents.push_back(bias);
    Tensor xv_keep = xv, wv_keep = wv;
    return make_op(std::move(out), std::move(parents), [xv_keep, wv_keep, d, has_bias](Node& n) {
        using namespace detail;
        const std::int64_t kk = d.Ci * d.k * d.k * d.k;
        const std::int64_t ovol = d.od * d.oh * d.ow;
        const bool pointwise = (d.k == 1 && d.stride == 1 && d.pad == 0);
        const std::int64_t slab = conv3d_slab(d);

        Node& xp = *n.parents[0];
        Node& wp = *n.parents[1];
        const bool need_x = xp.requires_grad;
        const bool need_w = wp.requires_grad;

        Tensor gx, gw;
        if (need_x) gx = Tensor(Shape(xv_keep.shape()));
        if (need_w) gw = Tensor(Shape(wv_keep.shape()));
        EigenCMap W(wv_keep.data(), d.Co, kk);

        std::vector<double> cols, gcols;
        if (!pointwise) {
            cols.resize(kk * slab * d.oh * d.ow);
            gcols.resize(kk * slab * d.oh * d.ow);
        }
        for (std::int64_t b = 0; b < d.B; ++b) {
            const double* xb = xv_keep.data() + b * d.Ci * d.D * d.H * d.W;
            const double* gb = n.grad.data() + b * d.Co * ovol;
            if (pointwise) {
                EigenCMap G(gb, d.Co, ovol);
                EigenCMap X(xb, d.Ci, ovol);
                if (need_w) EigenMap(gw.data(), d.Co, kk).noalias() += G * X.transpose();
                if (need_x) EigenMap(gx.data() + b * d.Ci * ovol, d.Ci, ovol).noalias() = W.transpose() * G;
            } else {
                for (std::int64_t z0 = 0; z0 < d.od; z0 += slab) {
                    const std::int64_t nz = std::min(slab, d.od - z0);
                    Eigen::Map<const EigenRowMat, 0, Eigen::OuterStride<>> G(
                        gb + z0 * d.oh * d.ow, d.Co, nz * d.oh * d.ow, Eigen::OuterStride<>(ovol));
                    if (need_w) {
                        im2col_slab(xb, d, z0, nz, cols.data());
                        EigenCMap C(cols.data(), kk, nz * d.oh * d.ow);
                        EigenMap(gw.data(), d.Co, kk).noalias() += G * C.transpose();
                    }
                    if (need_x) {
                        EigenMap GC(gcols.data(), kk, nz * d.oh * d.ow);
                        GC.noalias() = W.transpose() * G;
                        col2im_slab(gcols.data(), d, z0, nz, gx.data() + b * d.Ci * d.D * d.H * d.W);
                    }
                }
            }
        }
        if (need_x) accumulate_grad(xp, gx);
        if (need_w) accumulate_grad(wp, gw);
        if (has_bias && n.parents[2]->requires_grad) {
            Tensor gbias{Shape{d.Co}};
            const double* pg = n.grad.data();
            for (std::int64_t b = 0; b < d.B; ++b)
                for (std::int64_t co = 0; co < d.Co; ++co) {
                    double s = 0;
                    const double* p = pg + (b * d.Co + co) * ovol;
                    for (std::int64_t i = 0; i < ovol; ++i) s += p[i];
                    gbias[co] += s;
                }
            accumulate_grad(*n.parents[2], gbias);
        }
    });
}

// ---------------------------------------------------------------------------
// shared-kernel 1-D convolution across the channel axis (ECA style)
// x [B,C], kernel [K] (K odd), zero padding (K-1)/2, no bias
// ---------------------------------------------------------------------------

inline Var conv1d_channel(const Var& x, const Var& kernel) {
    const Tensor& xv = x.value();
    const Tensor& kv = kernel.value();
    const std::int64_t B = xv.dim(0), C = xv.dim(1), K = kv.dim(0);
    const std::int64_t h = (K - 1) / 2;
    Tensor out{Shape{B, C}};
    const double* px = xv.data();
    const double* pk = kv.data();
    double* po = out.data();
    for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
            double s = 0;
            for (std::int64_t j = 0; j < K; ++j) {
                const std::int64_t i = c + j - h;
                if (i >= 0 && i < C) s += pk[j] * px[b * C + i];
            }
            po[b * C + c] = s;
        }
    Tensor xv_keep = xv, kv_keep = kv;
    return make_op(std::move(out), {x, kernel}, [xv_keep, kv_keep, B, C, K, h](Node& n) {
        const double* pg = n.grad.data();
        if (n.parents[0]->requires_grad) {
            Tensor gx{Shape{B, C}};
            const double* pk = kv_keep.data();
            for (std::int64_t b = 0; b < B; ++b)
                for (std::int64_t i = 0; i < C; ++i) {
                    double s = 0;
                    for (std::int64_t j = 0; j < K; ++j) {
                        const std::int64_t c = i - j + h;
                        if (c >= 0 && c < C) s += pg[b * C + c] * pk[j];
                    }
                    gx[b * C + i] = s;
                }
            accumulate_grad(*n.parents[0], gx);
        }
        if (n.parents[1]->requires_grad) {
            Tensor gk{Shape{K}};
            const double* px = xv_keep.data();
            for (std::int64_t j = 0; j < K; ++j) {
                double s = 0;
                for (std::int64_t b = 0; b < B; ++b)
                    for (std::int64_t c = 0; c < C; ++c) {
                        const std::int64_t i = c + j - h;
                        if (i >= 0 && i < C) s += pg[b * C + c] * px[b * C + i];
                    }
                gk[j] = s;
            }
            accumulate_grad(*n.parents[1], gk);
        }
    });
}

// ---------------------------------------------------------------------------
// trilinear x2 upsampling (align_corners = false)
// ---------------------------------------------------------------------------

namespace detail {
inline void up2_axis_weights(std::int64_t o, std::int64_t in, std::int64_t& lo, std::int64_t& hi, double& w_hi) {
    const double c = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    const double fl = std::floor(c);
    lo = static_cast<std::int64_t>(fl);
    w_hi = c - fl;
    hi = lo + 1;
    if (lo < 0) { lo = 0; }
    if (hi > in - 1) { hi = in - 1; }
}
} // namespace detail

inline Var upsample_trilinear2x(const Var& x) {
    const Tensor& xv = x.value();
    const Shape& s = xv.shape();
    const std::int64_t B = s[0], C = s[1], D = s[2], H = s[3], W = s[4];
    const std::int64_t OD = D * 2, OH = H * 2, OW = W * 2;
    Tensor out{Shape{B, C, OD, OH, OW}};

    std::vector<std::int64_t> zlo(OD), zhi(OD), ylo(OH), yhi(OH), xlo(OW), xhi(OW);
    std::vector<double> zw(OD), yw(OH), xw(OW);
    for (std::int64_t o = 0; o < OD; ++o) detail::up2_axis_weights(o, D, zlo[o], zhi[o], zw[o]);
    for (std::int64_t o = 0; o < OH; ++o) detail::up2_axis_weights(o, H, ylo[o], yhi[o], yw[o]);
    for (std::int64_t o = 0; o < OW; ++o) detail::up2_axis_weights(o, W, xlo[o], xhi[o], xw[o]);

    const double* px = xv.data();
    double* po = out.data();
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
        const double* xc = px + bc * D * H * W;
        double* oc = po + bc * OD * OH * OW;
        for (std::int64_t oz = 0; oz < OD; ++oz)
            for (std::int64_t oy = 0; oy < OH; ++oy) {
                const double* r00 = xc + (zlo[oz] * H + ylo[oy]) * W;
                const double* r01 = xc + (zlo[oz] * H + yhi[oy]) * W;
                const double* r10 = xc + (zhi[oz] * H + ylo[oy]) * W;
                const double* r11 = xc + (zhi[oz] * H + yhi[oy]) * W;
                const double wz = zw[oz], wy = yw[oy];
                double* orow = oc + (oz * OH + oy) * OW;
                for (std::int64_t ox = 0; ox < OW; ++ox) {
                    const double wx = xw[ox];
                    const std::int64_t l = xlo[ox], hgh = xhi[ox];
                    const double v00 = r00[l] * (1 - wx) + r00[hgh] * wx;
                    const double v01 = r01[l] * (1 - wx) + r01[hgh] * wx;
                    const double v10 = r10[l] * (1 - wx) + r10[hgh] * wx;
                    const double v11 = r11[l] * (1 - wx) + r11[hgh] * wx;
                    orow[ox] = (v00 * (1 - wy) + v01 * wy) * (1 - wz) + (v10 * (1 - wy) + v11 * wy) * wz;
                }
            }
    }
    Shape in_shape = s;
    return make_op(std::move(out), {x}, [in_shape, zlo, zhi, ylo, yhi, xlo, xhi, zw, yw, xw](Node& n) {
        const std::int64_t B = in_shape[0], C = in_shape[1], D = in_shape[2], H = in_shape[3], W = in_shape[4];
        const std::int64_t OD = D * 2, OH = H * 2, OW = W * 2;
        Tensor gx{Shape(in_shape)};
        const double* pg = n.grad.data();
        double* pd = gx.data();
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
            double* xc = pd + bc * D * H * W;
            const double* oc = pg + bc * OD * OH * OW;
            for (std::int64_t oz = 0; oz < OD; ++oz)
                for (std::int64_t oy = 0; oy < OH; ++oy) {
                    const double wz = zw[oz], wy = yw[oy];
                    const std::int64_t z0 = zlo[oz] * H, z1 = zhi[oz] * H;
                    const double* grow = oc + (oz * OH + oy) * OW;
                    for (std::int64_t ox = 0; ox < OW; ++ox) {
                        const double g = grow[ox];
                        const double wx = xw[ox];
                        const std::int64_t l = xlo[ox], hgh = xhi[ox];
                        xc[(z0 + ylo[oy]) * W + l]   += g * (1 - wz) * (1 - wy) * (1 - wx);
                        xc[(z0 + ylo[oy]) * W + hgh] += g * (1 - wz) * (1 - wy) * wx;
                        xc[(z0 + yhi[oy]) * W + l]   += g * (1 - wz) * wy * (1 - wx);
                        xc[(z0 + yhi[oy]) * W + hgh] += g * (1 - wz) * wy * wx;
                        xc[(z1 + ylo[oy]) * W + l]   += g * wz * (1 - wy) * (1 - wx);
                        xc[(z1 + ylo[oy]) * W + hgh] += g * wz * (1 - wy) * wx;
                        xc[(z1 + yhi[oy]) * W + l]   += g * wz * wy * (1 - wx);
                        xc[(z1 + yhi[oy]) * W + hgh] += g * wz * wy * wx;
                    }
                }
        }
        accumulate_grad(*n.parents[0], gx);
    });
}

} // namespace cfci
