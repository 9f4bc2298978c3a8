#pragma once

// Batch losses over relaxed codes, with analytic gradients.
//
// Layout: `mu` is [N, k] (codes of the original batch images), `hard` is
// [bands * N, k] band-major (row b*N + i is band b+1 of image i), possibly with
// zero bands. All batch losses are means over their index sets. Pair-based
// terms are evaluated through Gram matrices; gradients are assembled from
// per-entry coefficient matrices.

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "ssah/codes.hpp"
#include "ssah/data.hpp"
#include "ssah/tensor.hpp"

namespace ssah::losses {

using codes::PairLabel;
using data::LabeledPair;

struct LossWeights {
    double alpha = 0.5;
    double beta = 0.1;
    double lambda1 = 1.0;
    double lambda2 = 0.5;

    void validate() const {
        if (alpha < 0 || beta < 0 || lambda1 < 0 || lambda2 < 0) throw ConfigError("loss weights must be non-negative");
    }
};

enum class MarginMode {
    self_paced,  // omega * (1 - d_ij)
    fixed,       // omega
};

// max(omega (1 - d_orig) - hard, 0)
template <typename T>
T adv_hinge(T hard, T d_orig, T omega) {
    return std::max(omega * (T(1) - d_orig) - hard, T(0));
}

// max(omega - hard, 0)
template <typename T>
T fixed_paced_loss(T hard, T omega) {
    return std::max(omega - hard, T(0));
}

// (sim - S)^2
template <typename T>
T pairwise_semantic_term(std::span<const T> a, std::span<const T> b, PairLabel s) {
    const T d = codes::similarity_degree(a, b) - T(codes::label_value(s));
    return d * d;
}

template <typename T>
struct LossValue {
    T value = 0;
    Tensor<T> grad_mu;    // same shape as mu
    Tensor<T> grad_hard;  // same shape as hard
    bool no_pairs = false;
};

namespace detail {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using CMap = Eigen::Map<const Mat<T>>;
template <typename T>
using Map = Eigen::Map<Mat<T>>;

template <typename T>
struct Shape {
    int n, k, bands;
};

template <typename T>
Shape<T> check(const Tensor<T>& mu, const Tensor<T>& hard) {
    if (mu.rank() != 2) throw DimensionError("codes must be [N, k]");
    const int n = mu.dim(0), k = mu.dim(1);
    if (k == 0) throw DimensionError("empty codes");
    int bands = 0;
    if (!hard.empty() || hard.rank() == 2) {
        if (hard.rank() != 2 || hard.dim(1) != k || (n > 0 && hard.dim(0) % n != 0))
            throw DimensionError("generated codes must be [bands*N, k], got " + hard.shape_str());
        bands = n > 0 ? hard.dim(0) / n : 0;
    }
    return {n, k, bands};
}

template <typename T>
LossValue<T> zero_value(const Tensor<T>& mu, const Tensor<T>& hard) {
    LossValue<T> out;
    out.grad_mu = Tensor<T>::zeros_like(mu);
    out.grad_hard = Tensor<T>::zeros_like(hard);
    return out;
}

// Band b of `hard` as an [N, k] map.
template <typename T>
CMap<T> band(const Tensor<T>& hard, int b, int n, int k) {
    return CMap<T>(hard.data() + static_cast<std::size_t>(b) * n * k, n, k);
}
template <typename T>
Map<T> band(Tensor<T>& hard, int b, int n, int k) {
    return Map<T>(hard.data() + static_cast<std::size_t>(b) * n * k, n, k);
}

}  // namespace detail

// Self-paced adversarial loss: for each labeled pair (i, j) and band n,
//   hinge(hard(y_i, y_j), d_ij, omega) + hinge(hard(x_i, y_j), d_ij, omega / 2)
// where hard(.) = d' - d and the cross-domain d' uses sim(mu_i, mu'_j).
// Mean over pairs and bands. With MarginMode::fixed the margins are the
// constants omega and omega / 2.
template <typename T>
LossValue<T> self_paced_loss(const Tensor<T>& mu, const Tensor<T>& hard, const std::vector<LabeledPair>& pairs, T omega,
                             MarginMode mode = MarginMode::self_paced) {
    using namespace detail;
    const auto sh = check(mu, hard);
    auto out = zero_value(mu, hard);
    if (pairs.empty() || sh.bands == 0) {
        out.no_pairs = pairs.empty();
        return out;
    }
    const int n = sh.n, k = sh.k;
    const T inv2k = T(1) / (T(2) * T(k));
    const T scale = T(1) / (T(pairs.size()) * T(sh.bands));
    auto M = CMap<T>(mu.data(), n, k);
    const Mat<T> G = M * M.transpose();
    Mat<T> coef_g = Mat<T>::Zero(n, n);
    auto gmu = Map<T>(out.grad_mu.data(), n, k);

    T total = 0;
    for (int b = 0; b < sh.bands; ++b) {
        auto H = band(hard, b, n, k);
        const Mat<T> Gh = H * H.transpose();
        const Mat<T> Gc = M * H.transpose();  // Gc(i, j) = mu_i . mu'_j
        Mat<T> coef_h = Mat<T>::Zero(n, n);
        Mat<T> coef_c = Mat<T>::Zero(n, n);
        for (const auto& p : pairs) {
            const int sv = codes::label_value(p.s);
            const T s = T(2 * sv - 1);
            const T d = T(sv) - s * (G(p.i, p.j) + T(k)) * inv2k;
            const T d_hh = T(sv) - s * (Gh(p.i, p.j) + T(k)) * inv2k;
            const T d_c = T(sv) - s * (Gc(p.i, p.j) + T(k)) * inv2k;
            const T margin_hh = mode == MarginMode::self_paced ? omega * (T(1) - d) : omega;
            const T margin_c = mode == MarginMode::self_paced ? omega / T(2) * (T(1) - d) : omega / T(2);
            const T dmargin_hh = mode == MarginMode::self_paced ? -omega : T(0);  // d margin / d d
            const T dmargin_c = mode == MarginMode::self_paced ? -omega / T(2) : T(0);
            // term = margin - (d' - d); d d / d G = -s / 2k
            const T t_hh = margin_hh - (d_hh - d);
            if (t_hh > T(0)) {
                total += t_hh;
                coef_g(p.i, p.j) += (dmargin_hh + T(1)) * (-s * inv2k) * scale;
                coef_h(p.i, p.j) += s * inv2k * scale;
            }
            const T t_c = margin_c - (d_c - d);
            if (t_c > T(0)) {
                total += t_c;
                coef_g(p.i, p.j) += (dmargin_c + T(1)) * (-s * inv2k) * scale;
                coef_c(p.i, p.j) += s * inv2k * scale;
            }
        }
        auto gh = band(out.grad_hard, b, n, k);
        gh.noalias() += (coef_h + coef_h.transpose()) * H;
        gh.noalias() += coef_c.transpose() * M;
        gmu.noalias() += coef_c * H;
    }
    gmu.noalias() += (coef_g + coef_g.transpose()) * M;
    out.value = total * scale;
    return out;
}

// Supervised semantic loss: mean over pairs of (sim(mu_i, mu_j) - S)^2, plus
// the means over pairs and bands of the same term for (mu_i, mu'_j) and
// (mu'_i, mu'_j). Without generated codes only the first group remains.
template <typename T>
LossValue<T> semantic_loss(const Tensor<T>& mu, const Tensor<T>& hard, const std::vector<LabeledPair>& pairs) {
    using namespace detail;
    const auto sh = check(mu, hard);
    auto out = zero_value(mu, hard);
    if (pairs.empty()) {
        out.no_pairs = true;
        return out;
    }
    const int n = sh.n, k = sh.k;
    const T inv2k = T(1) / (T(2) * T(k));
    auto M = CMap<T>(mu.data(), n, k);
    auto gmu = Map<T>(out.grad_mu.data(), n, k);

    // group over a Gram matrix: returns the mean and fills the coefficients
    auto group = [&](const Mat<T>& gram, Mat<T>& coef, T scale) {
        T s = 0;
        for (const auto& p : pairs) {
            const T r = (gram(p.i, p.j) + T(k)) * inv2k - T(codes::label_value(p.s));
            s += r * r;
            coef(p.i, p.j) += T(2) * r * inv2k * scale;
        }
        return s * scale;
    };

    const T pair_scale = T(1) / T(pairs.size());
    Mat<T> coef_g = Mat<T>::Zero(n, n);
    T total = group(M * M.transpose(), coef_g, pair_scale);
    gmu.noalias() += (coef_g + coef_g.transpose()) * M;

    if (sh.bands > 0) {
        const T band_scale = pair_scale / T(sh.bands);
        for (int b = 0; b < sh.bands; ++b) {
            auto H = band(hard, b, n, k);
            auto gh = band(out.grad_hard, b, n, k);
            Mat<T> coef_c = Mat<T>::Zero(n, n);
            total += group(M * H.transpose(), coef_c, band_scale);
            gmu.noalias() += coef_c * H;
            gh.noalias() += coef_c.transpose() * M;
            Mat<T> coef_h = Mat<T>::Zero(n, n);
            total += group(H * H.transpose(), coef_h, band_scale);
            gh.noalias() += (coef_h + coef_h.transpose()) * H;
        }
    }
    out.value = total;
    return out;
}

// Consistent loss: mean over all images and bands of (k - mu'_i . mu_i) / 2k.
template <typename T>
LossValue<T> consistent_loss(const Tensor<T>& mu, const Tensor<T>& hard) {
    using namespace detail;
    const auto sh = check(mu, hard);
    auto out = zero_value(mu, hard);
    if (sh.bands == 0 || sh.n == 0) return out;
    const int n = sh.n, k = sh.k;
    const T inv2k = T(1) / (T(2) * T(k));
    const T scale = T(1) / (T(n) * T(sh.bands));
    auto M = CMap<T>(mu.data(), n, k);
    auto gmu = Map<T>(out.grad_mu.data(), n, k);
    T total = 0;
    for (int b = 0; b < sh.bands; ++b) {
        auto H = band(hard, b, n, k);
        total += (T(k) * T(n) - (M.array() * H.array()).sum()) * inv2k;
        gmu.noalias() -= H * (inv2k * scale);
        band(out.grad_hard, b, n, k).noalias() -= M * (inv2k * scale);
    }
    out.value = total * scale;
    return out;
}

// Quantization loss: mean over images of ||mu - sign(mu)||_1 plus mean over
// images and bands of ||mu' - sign(mu')||_1. The signs are constants.
template <typename T>
LossValue<T> quantization_loss(const Tensor<T>& mu, const Tensor<T>& hard) {
    const auto sh = detail::check(mu, hard);
    auto out = detail::zero_value(mu, hard);
    auto term = [](const Tensor<T>& x, Tensor<T>& g, T scale) {
        T s = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const T diff = x[i] - codes::sign_of(x[i]);
            s += std::abs(diff);
            g[i] = (diff > T(0) ? T(1) : diff < T(0) ? T(-1) : T(0)) * scale;
        }
        return s * scale;
    };
    if (sh.n == 0) return out;
    out.value = term(mu, out.grad_mu, T(1) / T(sh.n));
    if (sh.bands > 0) out.value += term(hard, out.grad_hard, T(1) / (T(sh.n) * T(sh.bands)));
    return out;
}

template <typename T>
struct Objective {
    T value = 0;
    T self_paced = 0;
    T semantic = 0;
    T consistent = 0;
    T quantization = 0;
    Tensor<T> grad_mu;
    Tensor<T> grad_hard;
    bool no_pairs = false;
};

namespace detail {
template <typename T>
void accumulate(Objective<T>& obj, const LossValue<T>& term, T weight) {
    if (weight == T(0)) return;
    obj.value += weight * term.value;
    for (std::size_t i = 0; i < obj.grad_mu.size(); ++i) obj.grad_mu[i] += weight * term.grad_mu[i];
    for (std::size_t i = 0; i < obj.grad_hard.size(); ++i) obj.grad_hard[i] += weight * term.grad_hard[i];
}
}  // namespace detail

// alpha * l_sp + lambda1 * l_sem + beta * l_quan
template <typename T>
Objective<T> anet_objective(const Tensor<T>& mu, const Tensor<T>& hard, const std::vector<LabeledPair>& pairs, const LossWeights& w,
                            T omega, MarginMode mode = MarginMode::self_paced) {
    Objective<T> obj;
    obj.grad_mu = Tensor<T>::zeros_like(mu);
    obj.grad_hard = Tensor<T>::zeros_like(hard);
    const auto sp = self_paced_loss(mu, hard, pairs, omega, mode);
    const auto sem = semantic_loss(mu, hard, pairs);
    const auto quan = quantization_loss(mu, hard);
    obj.self_paced = sp.value;
    obj.semantic = sem.value;
    obj.quantization = quan.value;
    obj.no_pairs = pairs.empty();
    detail::accumulate(obj, sp, T(w.alpha));
    detail::accumulate(obj, sem, T(w.lambda1));
    detail::accumulate(obj, quan, T(w.beta));
    return obj;
}

// lambda1 * l_sem + lambda2 * l_con + beta * l_quan
template <typename T>
Objective<T> hnet_objective(const Tensor<T>& mu, const Tensor<T>& hard, const std::vector<LabeledPair>& pairs, const LossWeights& w) {
    Objective<T> obj;
    obj.grad_mu = Tensor<T>::zeros_like(mu);
    obj.grad_hard = Tensor<T>::zeros_like(hard);
    const auto sem = semantic_loss(mu, hard, pairs);
    const auto con = consistent_loss(mu, hard);
    const auto quan = quantization_loss(mu, hard);
    obj.semantic = sem.value;
    obj.consistent = con.value;
    obj.quantization = quan.value;
    obj.no_pairs = pairs.empty();
    detail::accumulate(obj, sem, T(w.lambda1));
    detail::accumulate(obj, con, T(w.lambda2));
    detail::accumulate(obj, quan, T(w.beta));
    return obj;
}

}  // namespace ssah::losses
