#pragma once

#include <cmath>
#include <numbers>

#include "ssah/autograd.hpp"

namespace ssah {

// Largest rotation magnitude accepted by rotate(), in degrees.
inline constexpr double kMaxRotationDeg = 90.0;

namespace ag {

// Rotates each image of an NCHW batch about its center by theta[n] degrees
// (positive = counter-clockwise as displayed, rows growing downward).
// Output pixels are inverse-mapped into the source and bilinearly sampled;
// neighbours outside the image read as 0. Differentiable in pixels and angle.
template <typename T>
Var<T> rotate(const Var<T>& x, const Var<T>& theta_deg) {
    const auto& xv = x.value();
    const auto& tv = theta_deg.value();
    if (xv.rank() != 4) throw DimensionError("rotate expects NCHW");
    const int n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (tv.size() != static_cast<std::size_t>(n)) throw DimensionError("rotate: one angle per image");
    for (T t : tv.vec())
        if (!(std::abs(static_cast<double>(t)) <= kMaxRotationDeg))
            throw ParameterError("rotate: |theta| exceeds " + std::to_string(kMaxRotationDeg) + " degrees");

    const T cy = T(h - 1) / 2, cx = T(w - 1) / 2;
    const T rad = T(std::numbers::pi / 180.0);
    Tensor<T> out(xv.shape());
    for (int b = 0; b < n; ++b) {
        const T th = tv[b] * rad;
        const T cs = tv[b] == T(0) ? T(1) : std::cos(th);
        const T sn = tv[b] == T(0) ? T(0) : std::sin(th);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const T dx = T(j) - cx, dy = T(i) - cy;
                const T xs = cx + cs * dx - sn * dy;
                const T ys = cy + sn * dx + cs * dy;
                const int x0 = static_cast<int>(std::floor(xs)), y0 = static_cast<int>(std::floor(ys));
                const T ax = xs - T(x0), ay = ys - T(y0);
                for (int ch = 0; ch < c; ++ch) {
                    const T* img = xv.data() + (static_cast<std::size_t>(b) * c + ch) * h * w;
                    auto px = [&](int yy, int xx) -> T {
                        return (yy >= 0 && yy < h && xx >= 0 && xx < w) ? img[yy * w + xx] : T(0);
                    };
                    const T v = (T(1) - ay) * ((T(1) - ax) * px(y0, x0) + ax * px(y0, x0 + 1)) +
                                ay * ((T(1) - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1));
                    out.at(b, ch, i, j) = v;
                }
            }
    }

    return make_op<T>(std::move(out), {x, theta_deg}, [n, c, h, w, cx, cy, rad](Node<T>& self) {
        const auto& xv = self.parents[0]->value;
        const auto& tv = self.parents[1]->value;
        const bool gx_needed = needs(self, 0), gt_needed = needs(self, 1);
        for (int b = 0; b < n; ++b) {
            const T th = tv[b] * rad;
            const T cs = tv[b] == T(0) ? T(1) : std::cos(th);
            const T sn = tv[b] == T(0) ? T(0) : std::sin(th);
            T gtheta = 0;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) {
                    const T dx = T(j) - cx, dy = T(i) - cy;
                    const T xs = cx + cs * dx - sn * dy;
                    const T ys = cy + sn * dx + cs * dy;
                    const T dxs = (-sn * dx - cs * dy) * rad;
                    const T dys = (cs * dx - sn * dy) * rad;
                    const int x0 = static_cast<int>(std::floor(xs)), y0 = static_cast<int>(std::floor(ys));
                    const T ax = xs - T(x0), ay = ys - T(y0);
                    for (int ch = 0; ch < c; ++ch) {
                        const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * h * w;
                        const T g = self.grad[base + static_cast<std::size_t>(i) * w + j];
                        if (g == T(0)) continue;
                        const T* img = xv.data() + base;
                        auto inside = [&](int yy, int xx) { return yy >= 0 && yy < h && xx >= 0 && xx < w; };
                        auto px = [&](int yy, int xx) -> T { return inside(yy, xx) ? img[yy * w + xx] : T(0); };
                        if (gt_needed) {
                            const T v00 = px(y0, x0), v01 = px(y0, x0 + 1), v10 = px(y0 + 1, x0), v11 = px(y0 + 1, x0 + 1);
                            const T d_ax = (T(1) - ay) * (v01 - v00) + ay * (v11 - v10);
                            const T d_ay = (T(1) - ax) * (v10 - v00) + ax * (v11 - v01);
                            gtheta += g * (d_ax * dxs + d_ay * dys);
                        }
                        if (gx_needed) {
                            T* gimg = self.parents[0]->grad_buffer().data() + base;
                            auto acc = [&](int yy, int xx, T wgt) {
                                if (inside(yy, xx)) gimg[yy * w + xx] += g * wgt;
                            };
                            acc(y0, x0, (T(1) - ay) * (T(1) - ax));
                            acc(y0, x0 + 1, (T(1) - ay) * ax);
                            acc(y0 + 1, x0, ay * (T(1) - ax));
                            acc(y0 + 1, x0 + 1, ay * ax);
                        }
                    }
                }
            if (gt_needed) self.parents[1]->grad_buffer()[b] += gtheta;
        }
    });
}

}  // namespace ag

// Non-differentiable convenience wrapper for a single CHW image.
template <typename T>
Tensor<T> rotate_image(const Tensor<T>& chw, double theta_deg) {
    auto batch = chw.reshaped({1, chw.dim(0), chw.dim(1), chw.dim(2)});
    auto out = ag::rotate(ag::constant(std::move(batch)), ag::constant(Tensor<T>({1}, static_cast<T>(theta_deg))));
    return out.value().reshaped(chw.shape());
}

}  // namespace ssah
