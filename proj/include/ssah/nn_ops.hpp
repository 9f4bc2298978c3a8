#pragma once

#include <Eigen/Core>
#include <cmath>

#include "ssah/autograd.hpp"

namespace ssah::ag {

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

struct ConvGeom {
    int n, c, h, w, o, kh, kw, stride, pad, ho, wo;
    [[nodiscard]] int rows() const { return c * kh * kw; }
    [[nodiscard]] int cols() const { return n * ho * wo; }
};

// Output columns [lo, hi) whose input coordinate o*stride - pad + k lies in [0, size).
inline void valid_range(int k, int pad, int stride, int size, int out, int& lo, int& hi) {
    // o*stride >= pad - k  and  o*stride <= size - 1 + pad - k
    const int a = pad - k;
    lo = a <= 0 ? 0 : (a + stride - 1) / stride;
    const int b = size - 1 + pad - k;
    hi = b < 0 ? 0 : std::min(out, b / stride + 1);
    if (hi < lo) hi = lo;
}

// Unfolds an NCHW batch into a [C*kh*kw, N*Ho*Wo] matrix.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
    const std::size_t cols = static_cast<std::size_t>(g.cols());
    const int hw = g.ho * g.wo;
    for (int c = 0; c < g.c; ++c)
        for (int ki = 0; ki < g.kh; ++ki) {
            int ilo, ihi;
            valid_range(ki, g.pad, g.stride, g.h, g.ho, ilo, ihi);
            for (int kj = 0; kj < g.kw; ++kj) {
                int jlo, jhi;
                valid_range(kj, g.pad, g.stride, g.w, g.wo, jlo, jhi);
                T* row = col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * cols;
                for (int n = 0; n < g.n; ++n) {
                    const T* img = x + (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
                    T* dst = row + static_cast<std::size_t>(n) * hw;
                    for (int oi = 0; oi < g.ho; ++oi) {
                        T* d = dst + oi * g.wo;
                        if (oi < ilo || oi >= ihi) {
                            std::fill_n(d, g.wo, T(0));
                            continue;
                        }
                        const T* src = img + (oi * g.stride - g.pad + ki) * g.w - g.pad + kj;
                        std::fill_n(d, jlo, T(0));
                        if (g.stride == 1) {
                            std::copy(src + jlo, src + jhi, d + jlo);
                        } else {
                            for (int oj = jlo; oj < jhi; ++oj) d[oj] = src[oj * g.stride];
                        }
                        std::fill(d + jhi, d + g.wo, T(0));
                    }
                }
            }
        }
}

// Adjoint of im2col: scatters-add a column matrix back into an NCHW batch.
template <typename T>
void col2im(const T* col, const ConvGeom& g, T* x) {
    const std::size_t cols = static_cast<std::size_t>(g.cols());
    const int hw = g.ho * g.wo;
    for (int c = 0; c < g.c; ++c)
        for (int ki = 0; ki < g.kh; ++ki) {
            int ilo, ihi;
            valid_range(ki, g.pad, g.stride, g.h, g.ho, ilo, ihi);
            for (int kj = 0; kj < g.kw; ++kj) {
                int jlo, jhi;
                valid_range(kj, g.pad, g.stride, g.w, g.wo, jlo, jhi);
                const T* row = col + static_cast<std::size_t>((c * g.kh + ki) * g.kw + kj) * cols;
                for (int n = 0; n < g.n; ++n) {
                    T* img = x + (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
                    const T* src = row + static_cast<std::size_t>(n) * hw;
                    for (int oi = ilo; oi < ihi; ++oi) {
                        T* dst = img + (oi * g.stride - g.pad + ki) * g.w - g.pad + kj;
                        const T* s = src + oi * g.wo;
                        for (int oj = jlo; oj < jhi; ++oj) dst[oj * g.stride] += s[oj];
                    }
                }
            }
        }
}

// [O, N*HW] (matrix layout) <-> [N, O, HW] (tensor layout)
template <typename T>
void matrix_to_nchw(const T* m, int o, int n, int hw, T* out) {
    for (int oc = 0; oc < o; ++oc)
        for (int b = 0; b < n; ++b)
            std::copy_n(m + static_cast<std::size_t>(oc) * n * hw + static_cast<std::size_t>(b) * hw, hw,
                        out + (static_cast<std::size_t>(b) * o + oc) * hw);
}
template <typename T>
void nchw_to_matrix(const T* t, int o, int n, int hw, T* m) {
    for (int oc = 0; oc < o; ++oc)
        for (int b = 0; b < n; ++b)
            std::copy_n(t + (static_cast<std::size_t>(b) * o + oc) * hw, hw,
                        m + static_cast<std::size_t>(oc) * n * hw + static_cast<std::size_t>(b) * hw);
}

}  // namespace detail

// 2-D convolution. x: [N,C,H,W], w: [O,C,kh,kw], b: [O].
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad) {
    using namespace detail;
    const auto& xv = x.value();
    const auto& wv = w.value();
    if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(1) != xv.dim(1)) throw DimensionError("conv2d: input " + xv.shape_str() + " weight " + wv.shape_str());
    ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), wv.dim(3), stride, pad, 0, 0};
    g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
    g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
    if (b.value().size() != static_cast<std::size_t>(g.o)) throw DimensionError("conv2d: bias size");

    auto col = std::make_shared<std::vector<T>>(static_cast<std::size_t>(g.rows()) * g.cols());
    im2col(xv.data(), g, col->data());
    MatRM<T> out_m = CMapRM<T>(wv.data(), g.o, g.rows()) * CMapRM<T>(col->data(), g.rows(), g.cols());
    for (int oc = 0; oc < g.o; ++oc) out_m.row(oc).array() += b.value()[oc];
    Tensor<T> out({g.n, g.o, g.ho, g.wo});
    matrix_to_nchw(out_m.data(), g.o, g.n, g.ho * g.wo, out.data());

    return make_op<T>(std::move(out), {x, w, b}, [g, col](Node<T>& self) {
        MatRM<T> gm(g.o, g.cols());
        nchw_to_matrix(self.grad.data(), g.o, g.n, g.ho * g.wo, gm.data());
        const auto& wv = self.parents[1]->value;
        if (needs(self, 0)) {
            MatRM<T> dcol = CMapRM<T>(wv.data(), g.o, g.rows()).transpose() * gm;
            col2im(dcol.data(), g, self.parents[0]->grad_buffer().data());
        }
        if (needs(self, 1)) {
            MapRM<T>(self.parents[1]->grad_buffer().data(), g.o, g.rows()).noalias() +=
                gm * CMapRM<T>(col->data(), g.rows(), g.cols()).transpose();
        }
        if (needs(self, 2)) {
            auto& gb = self.parents[2]->grad_buffer();
            for (int oc = 0; oc < g.o; ++oc) gb[oc] += gm.row(oc).sum();
        }
    });
}

// Transposed ("fractionally strided") convolution, the adjoint of conv2d with
// the same stride/pad. x: [N,C,H,W], w: [C,O,kh,kw]. The output size is given
// explicitly so that an odd-sized map survives a stride-2 round trip.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride, int pad, int out_h, int out_w) {
    using namespace detail;
    const auto& xv = x.value();
    const auto& wv = w.value();
    if (xv.rank() != 4 || wv.rank() != 4 || wv.dim(0) != xv.dim(1)) throw DimensionError("conv_transpose2d: input " + xv.shape_str() + " weight " + wv.shape_str());
    // Geometry of the forward conv that maps [out_h,out_w] -> [H,W].
    ConvGeom g{xv.dim(0), wv.dim(1), out_h, out_w, wv.dim(0), wv.dim(2), wv.dim(3), stride, pad, xv.dim(2), xv.dim(3)};
    if ((out_h + 2 * pad - g.kh) / stride + 1 != g.ho || (out_w + 2 * pad - g.kw) / stride + 1 != g.wo)
        throw DimensionError("conv_transpose2d: output size incompatible with input");
    if (b.value().size() != static_cast<std::size_t>(g.c)) throw DimensionError("conv_transpose2d: bias size");

    const int hw_in = g.ho * g.wo;
    MatRM<T> xm(g.o, g.cols());
    nchw_to_matrix(xv.data(), g.o, g.n, hw_in, xm.data());
    MatRM<T> col = CMapRM<T>(wv.data(), g.o, g.rows()).transpose() * xm;
    Tensor<T> out({g.n, g.c, out_h, out_w});
    col2im(col.data(), g, out.data());
    const int hw_out = out_h * out_w;
    for (int n = 0; n < g.n; ++n)
        for (int c = 0; c < g.c; ++c) {
            T* p = out.data() + (static_cast<std::size_t>(n) * g.c + c) * hw_out;
            for (int i = 0; i < hw_out; ++i) p[i] += b.value()[c];
        }

    auto xm_keep = std::make_shared<MatRM<T>>(std::move(xm));
    return make_op<T>(std::move(out), {x, w, b}, [g, xm_keep, hw_in, hw_out](Node<T>& self) {
        std::vector<T> gcol(static_cast<std::size_t>(g.rows()) * g.cols());
        im2col(self.grad.data(), g, gcol.data());
        const auto& wv = self.parents[1]->value;
        auto gcol_m = CMapRM<T>(gcol.data(), g.rows(), g.cols());
        if (needs(self, 0)) {
            MatRM<T> gx = CMapRM<T>(wv.data(), g.o, g.rows()) * gcol_m;
            std::vector<T> tmp(self.parents[0]->value.size());
            matrix_to_nchw(gx.data(), g.o, g.n, hw_in, tmp.data());
            auto& gxb = self.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < tmp.size(); ++i) gxb[i] += tmp[i];
        }
        if (needs(self, 1)) {
            MapRM<T>(self.parents[1]->grad_buffer().data(), g.o, g.rows()).noalias() += (*xm_keep) * gcol_m.transpose();
        }
        if (needs(self, 2)) {
            auto& gb = self.parents[2]->grad_buffer();
            for (int n = 0; n < g.n; ++n)
                for (int c = 0; c < g.c; ++c) {
                    const T* p = self.grad.data() + (static_cast<std::size_t>(n) * g.c + c) * hw_out;
                    T s = 0;
                    for (int i = 0; i < hw_out; ++i) s += p[i];
                    gb[c] += s;
                }
        }
    });
}

// Instance normalization with per-channel affine parameters.
template <typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
    const auto& xv = x.value();
    if (xv.rank() != 4) throw DimensionError("instance_norm expects NCHW");
    const int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    if (gamma.value().size() != static_cast<std::size_t>(c) || beta.value().size() != static_cast<std::size_t>(c))
        throw DimensionError("instance_norm: affine size");
    auto xhat = std::make_shared<Tensor<T>>(xv.shape());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n) * c);
    Tensor<T> out(xv.shape());
    for (int i = 0; i < n * c; ++i) {
        const T* p = xv.data() + static_cast<std::size_t>(i) * hw;
        T mean = 0;
        for (int j = 0; j < hw; ++j) mean += p[j];
        mean /= hw;
        T var = 0;
        for (int j = 0; j < hw; ++j) var += (p[j] - mean) * (p[j] - mean);
        var /= hw;
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        const T gm = gamma.value()[i % c], bt = beta.value()[i % c];
        T* xh = xhat->data() + static_cast<std::size_t>(i) * hw;
        T* o = out.data() + static_cast<std::size_t>(i) * hw;
        for (int j = 0; j < hw; ++j) {
            xh[j] = (p[j] - mean) * is;
            o[j] = gm * xh[j] + bt;
        }
    }
    return make_op<T>(std::move(out), {x, gamma, beta}, [n, c, hw, xhat, inv_std](Node<T>& self) {
        const auto& gm = self.parents[1]->value;
        for (int i = 0; i < n * c; ++i) {
            const T* dy = self.grad.data() + static_cast<std::size_t>(i) * hw;
            const T* xh = xhat->data() + static_cast<std::size_t>(i) * hw;
            T sdy = 0, sdyx = 0;
            for (int j = 0; j < hw; ++j) {
                sdy += dy[j];
                sdyx += dy[j] * xh[j];
            }
            if (needs(self, 1)) self.parents[1]->grad_buffer()[i % c] += sdyx;
            if (needs(self, 2)) self.parents[2]->grad_buffer()[i % c] += sdy;
            if (needs(self, 0)) {
                T* dx = self.parents[0]->grad_buffer().data() + static_cast<std::size_t>(i) * hw;
                const T k = gm[i % c] * (*inv_std)[i] / hw;
                for (int j = 0; j < hw; ++j) dx[j] += k * (hw * dy[j] - sdy - xh[j] * sdyx);
            }
        }
    });
}

// [N,C,H,W] -> [N,C]
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    const auto& xv = x.value();
    const int n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
    Tensor<T> out({n, c});
    for (int i = 0; i < n * c; ++i) {
        T s = 0;
        const T* p = xv.data() + static_cast<std::size_t>(i) * hw;
        for (int j = 0; j < hw; ++j) s += p[j];
        out[i] = s / hw;
    }
    return make_op<T>(std::move(out), {x}, [n, c, hw](Node<T>& self) {
        auto& gx = self.parents[0]->grad_buffer();
        for (int i = 0; i < n * c; ++i) {
            const T g = self.grad[i] / hw;
            T* p = gx.data() + static_cast<std::size_t>(i) * hw;
            for (int j = 0; j < hw; ++j) p[j] += g;
        }
    });
}

// x: [N,D], w: [O,D], b: [O] -> [N,O]
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
    using namespace detail;
    const auto& xv = x.value();
    const auto& wv = w.value();
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) throw DimensionError("linear: input " + xv.shape_str() + " weight " + wv.shape_str());
    const int n = xv.dim(0), d = xv.dim(1), o = wv.dim(0);
    Tensor<T> out({n, o});
    MapRM<T> om(out.data(), n, o);
    om.noalias() = CMapRM<T>(xv.data(), n, d) * CMapRM<T>(wv.data(), o, d).transpose();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < o; ++j) om(i, j) += b.value()[j];
    return make_op<T>(std::move(out), {x, w, b}, [n, d, o](Node<T>& self) {
        auto gy = CMapRM<T>(self.grad.data(), n, o);
        if (needs(self, 0))
            MapRM<T>(self.parents[0]->grad_buffer().data(), n, d).noalias() += gy * CMapRM<T>(self.parents[1]->value.data(), o, d);
        if (needs(self, 1))
            MapRM<T>(self.parents[1]->grad_buffer().data(), o, d).noalias() += gy.transpose() * CMapRM<T>(self.parents[0]->value.data(), n, d);
        if (needs(self, 2)) {
            auto& gb = self.parents[2]->grad_buffer();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < o; ++j) gb[j] += gy(i, j);
        }
    });
}

}  // namespace ssah::ag
