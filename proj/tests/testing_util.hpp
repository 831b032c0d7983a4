#pragma once

#include <functional>

#include "cfci/core/nn.hpp"

namespace cfci::testing {

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

/// Central finite differences on every element of `probes` against the
/// analytic gradient of the scalar produced by `loss_fn`. `loss_fn` must
/// rebuild the graph from the probe Vars on each call. The floor keeps
/// FD cancellation noise (~|L|*eps/h) from dominating gradients that are
/// analytically zero, e.g. bias shifts that normalisation cancels.
inline double max_grad_rel_err(std::vector<Var> probes, const std::function<Var()>& loss_fn,
                               double h = 1e-5, double floor = 1e-5) {
    for (auto& p : probes) p.zero_grad();
    Var loss = loss_fn();
    backward(loss);

    double worst = 0.0;
    for (auto& p : probes) {
        Tensor& x = p.value_mut();
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            const double x0 = x[i];
            double lp, lm;
            {
                NoGradGuard ng;
                x[i] = x0 + h;
                lp = loss_fn().value().item();
                x[i] = x0 - h;
                lm = loss_fn().value().item();
                x[i] = x0;
            }
            const double fd = (lp - lm) / (2 * h);
            const double an = p.has_grad() ? p.grad()[i] : 0.0;
            worst = std::max(worst, rel_err(an, fd, floor));
        }
    }
    return worst;
}

/// Reference direct convolution, used as the oracle for the GEMM path.
inline Tensor conv3d_naive(const Tensor& x, const Tensor& w, const Tensor& b,
                           std::int64_t stride, std::int64_t pad) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    const std::int64_t B = xs[0], Ci = xs[1], D = xs[2], H = xs[3], W = xs[4];
    const std::int64_t Co = ws[0], k = ws[2];
    const std::int64_t od = (D + 2 * pad - k) / stride + 1;
    const std::int64_t oh = (H + 2 * pad - k) / stride + 1;
    const std::int64_t ow = (W + 2 * pad - k) / stride + 1;
    Tensor out{Shape{B, Co, od, oh, ow}};
    for (std::int64_t bb = 0; bb < B; ++bb)
        for (std::int64_t co = 0; co < Co; ++co)
            for (std::int64_t oz = 0; oz < od; ++oz)
                for (std::int64_t oy = 0; oy < oh; ++oy)
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        double s = b.defined() ? b[co] : 0.0;
                        for (std::int64_t ci = 0; ci < Ci; ++ci)
                            for (std::int64_t kz = 0; kz < k; ++kz)
                                for (std::int64_t ky = 0; ky < k; ++ky)
                                    for (std::int64_t kx = 0; kx < k; ++kx) {
                                        const std::int64_t iz = oz * stride - pad + kz;
                                        const std::int64_t iy = oy * stride - pad + ky;
                                        const std::int64_t ix = ox * stride - pad + kx;
                                        if (iz < 0 || iz >= D || iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                        s += x[(((bb * Ci + ci) * D + iz) * H + iy) * W + ix] *
                                             w[(((co * Ci + ci) * k + kz) * k + ky) * k + kx];
                                    }
                        out[(((bb * Co + co) * od + oz) * oh + oy) * ow + ox] = s;
                    }
    return out;
}

} // namespace cfci::testing
