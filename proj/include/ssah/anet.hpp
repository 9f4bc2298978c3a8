#pragma once

// The adversarial generator. MARN regresses one raw scalar per rotation band
// and maps it into that band's angle range; MSMN maps a feature map to a pair
// of single-channel additive/multiplicative masks; apply_mask injects them.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssah/module.hpp"
#include "ssah/warp.hpp"

namespace ssah::anet {

using ag::Var;

// Band n (1-based) covers |theta| in [10(n-1), 10n] degrees.
inline constexpr double kBandWidthDeg = 10.0;

// theta = sgn(tanh a) * (10(n-1) + 10|tanh a|), with sgn(0) = +1.
template <typename T>
T band_angle(T raw, int band) {
    const T t = std::tanh(raw);
    const T s = t < T(0) ? T(-1) : T(1);
    return s * (T(kBandWidthDeg) * T(band - 1) + T(kBandWidthDeg) * std::abs(t));
}

// raw: [N, bands] -> angles in band-major order [bands * N] (entry b*N + i is
// band b+1 of image i), matching tile_batch.
template <typename T>
Var<T> band_angles(const Var<T>& raw) {
    const auto& rv = raw.value();
    if (rv.rank() != 2) throw DimensionError("band_angles expects [N, bands]");
    const int n = rv.dim(0), bands = rv.dim(1);
    Tensor<T> out({bands * n});
    for (int i = 0; i < n; ++i)
        for (int b = 0; b < bands; ++b) out[static_cast<std::size_t>(b) * n + i] = band_angle(rv.at(i, b), b + 1);
    return ag::make_op<T>(std::move(out), {raw}, [n, bands](ag::Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const auto& rv = self.parents[0]->value;
        for (int i = 0; i < n; ++i)
            for (int b = 0; b < bands; ++b) {
                const T t = std::tanh(rv.at(i, b));
                g.at(i, b) += self.grad[static_cast<std::size_t>(b) * n + i] * T(kBandWidthDeg) * (T(1) - t * t);
            }
    });
}

// Raw (pre-activation) masks for one feature layer, one channel broadcast
// across the layer's channels. Layer 0 is the image itself.
template <typename T>
struct MaskPair {
    Var<T> am_raw;  // [M,1,d,d]
    Var<T> pm_raw;  // [M,1,d,d]
    int layer = 0;
};

// F = (1 - sigmoid(pm)) * f + tanh(am), clamped to [-1, 1] when `unit_range`.
template <typename T>
Var<T> apply_mask(const Var<T>& f, const Var<T>& am_raw, const Var<T>& pm_raw, bool unit_range) {
    const auto& fv = f.value();
    const auto& av = am_raw.value();
    const auto& pv = pm_raw.value();
    if (fv.rank() != 4 || av.rank() != 4 || pv.rank() != 4 || av.dim(1) != 1 || !av.same_shape(pv) ||
        av.dim(0) != fv.dim(0) || av.dim(2) != fv.dim(2) || av.dim(3) != fv.dim(3))
        throw DimensionError("apply_mask: feature " + fv.shape_str() + " masks " + av.shape_str() + "/" + pv.shape_str());
    const int n = fv.dim(0), c = fv.dim(1), hw = fv.dim(2) * fv.dim(3);
    Tensor<T> out(fv.shape());
    for (int b = 0; b < n; ++b)
        for (int p = 0; p < hw; ++p) {
            const std::size_t mi = static_cast<std::size_t>(b) * hw + p;
            const T gate = T(1) - T(1) / (T(1) + std::exp(-pv[mi]));
            const T add = std::tanh(av[mi]);
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t fi = (static_cast<std::size_t>(b) * c + ch) * hw + p;
                T v = gate * fv[fi] + add;
                if (unit_range) v = std::clamp(v, T(-1), T(1));
                out[fi] = v;
            }
        }
    return ag::make_op<T>(std::move(out), {f, am_raw, pm_raw}, [n, c, hw, unit_range](ag::Node<T>& self) {
        const auto& fv = self.parents[0]->value;
        const auto& av = self.parents[1]->value;
        const auto& pv = self.parents[2]->value;
        const bool gf = ag::needs(self, 0), ga = ag::needs(self, 1), gp = ag::needs(self, 2);
        for (int b = 0; b < n; ++b)
            for (int p = 0; p < hw; ++p) {
                const std::size_t mi = static_cast<std::size_t>(b) * hw + p;
                const T sig = T(1) / (T(1) + std::exp(-pv[mi]));
                const T th = std::tanh(av[mi]);
                T sum_a = 0, sum_p = 0;
                for (int ch = 0; ch < c; ++ch) {
                    const std::size_t fi = (static_cast<std::size_t>(b) * c + ch) * hw + p;
                    T g = self.grad[fi];
                    if (unit_range) {
                        const T pre = (T(1) - sig) * fv[fi] + th;
                        if (pre <= T(-1) || pre >= T(1)) g = T(0);
                    }
                    if (gf) self.parents[0]->grad_buffer()[fi] += g * (T(1) - sig);
                    sum_a += g;
                    sum_p += g * fv[fi];
                }
                if (ga) self.parents[1]->grad_buffer()[mi] += sum_a * (T(1) - th * th);
                if (gp) self.parents[2]->grad_buffer()[mi] -= sum_p * sig * (T(1) - sig);
            }
    });
}

template <typename T>
Var<T> apply_mask(const Var<T>& f, const MaskPair<T>& m) {
    return apply_mask(f, m.am_raw, m.pm_raw, m.layer == 0);
}

// Initial multiplicative-mask bias: sigmoid(-4) ~ 0.018, so generations start
// close to the identity.
inline constexpr double kInitialGateBias = -4.0;

struct GeneratorSpec {
    int width = 8;
    int residual_blocks = 3;
};

// Stride-2 conv, residual blocks, 1/2-strided (transposed) conv to two maps.
template <typename T>
class MaskGenerator {
public:
    MaskGenerator() = default;
    MaskGenerator(nn::ParamSet<T>& ps, const std::string& name, int in_channels, const GeneratorSpec& spec, Rng& rng)
        : down_(ps, name + ".down", in_channels, spec.width, 3, 2, 1, rng), down_norm_(ps, name + ".down_norm", spec.width) {
        for (int r = 0; r < spec.residual_blocks; ++r) {
            const std::string rn = name + ".res" + std::to_string(r);
            res_.push_back({nn::Conv<T>(ps, rn + ".conv1", spec.width, spec.width, 3, 1, 1, rng), nn::InstanceNorm<T>(ps, rn + ".norm1", spec.width),
                            nn::Conv<T>(ps, rn + ".conv2", spec.width, spec.width, 3, 1, 1, rng), nn::InstanceNorm<T>(ps, rn + ".norm2", spec.width)});
        }
        up_w_ = ps.add(name + ".up.weight", Tensor<T>({spec.width, 2, 3, 3}));
        Tensor<T> bias({2});
        bias[1] = T(kInitialGateBias);
        up_b_ = ps.add(name + ".up.bias", std::move(bias));
    }

    MaskPair<T> operator()(const Var<T>& f, int layer) const {
        const int d_h = f.dim(2), d_w = f.dim(3);
        Var<T> h = ag::leaky_relu(down_norm_(down_(f)), T(0.1));
        for (const auto& r : res_) {
            Var<T> t = ag::leaky_relu(r.norm1(r.conv1(h)), T(0.1));
            h = ag::add(h, r.norm2(r.conv2(t)));
        }
        Var<T> out = ag::conv_transpose2d(h, up_w_, up_b_, 2, 1, d_h, d_w);
        return {ag::channel(out, 0), ag::channel(out, 1), layer};
    }

private:
    struct Residual {
        nn::Conv<T> conv1;
        nn::InstanceNorm<T> norm1;
        nn::Conv<T> conv2;
        nn::InstanceNorm<T> norm2;
    };
    nn::Conv<T> down_;
    nn::InstanceNorm<T> down_norm_;
    std::vector<Residual> res_;
    Var<T> up_w_, up_b_;
};

// Small conv regressor: image -> one raw scalar per band.
template <typename T>
class RotationRegressor {
public:
    RotationRegressor() = default;
    RotationRegressor(nn::ParamSet<T>& ps, int in_channels, int bands, Rng& rng)
        : conv1_(ps, "marn.conv1", in_channels, 8, 3, 2, 1, rng), norm1_(ps, "marn.norm1", 8),
          conv2_(ps, "marn.conv2", 8, 16, 3, 2, 1, rng), head_(ps, "marn.head", 16, bands, rng, 0.5) {}

    Var<T> operator()(const Var<T>& images) const {
        Var<T> h = ag::leaky_relu(norm1_(conv1_(images)), T(0.1));
        // No normalization right before pooling: an instance-normalized map
        // averages to a constant.
        h = ag::leaky_relu(conv2_(h), T(0.1));
        return head_(ag::global_avg_pool(h));
    }

private:
    nn::Conv<T> conv1_;
    nn::InstanceNorm<T> norm1_;
    nn::Conv<T> conv2_;
    nn::Linear<T> head_;
};

struct ANetSpec {
    int image_channels = 3;
    int bands = 3;
    std::vector<int> mask_layers{0, 1, 2};
    std::vector<int> layer_channels;  // channels of each H-Net feature layer, index 0 = image
    GeneratorSpec generator;
    bool use_marn = true;
    bool use_msmn = true;
};

// MARN + MSMN with one parameter set (the A-Net's trainable parameters).
template <typename T>
class ANet {
public:
    ANet() = default;
    ANet(const ANet&) = delete;
    ANet& operator=(const ANet&) = delete;
    ANet(ANet&&) noexcept = default;
    ANet& operator=(ANet&&) noexcept = default;
    ANet(ANetSpec spec, Rng rng) : spec_(std::move(spec)) {
        if (spec_.use_marn) marn_ = RotationRegressor<T>(params_, spec_.image_channels, spec_.bands, rng);
        if (spec_.use_msmn)
            for (int m : spec_.mask_layers) {
                if (m < 0 || m >= static_cast<int>(spec_.layer_channels.size()))
                    throw ConfigError("mask layer " + std::to_string(m) + " does not exist in the encoder");
                generators_.emplace(m, MaskGenerator<T>(params_, "msmn.layer" + std::to_string(m), spec_.layer_channels[m], spec_.generator, rng));
            }
    }

    [[nodiscard]] const ANetSpec& spec() const { return spec_; }
    nn::ParamSet<T>& params() { return params_; }
    [[nodiscard]] const nn::ParamSet<T>& params() const { return params_; }

    // Raw band scalars [N, bands].
    Var<T> marn_raw(const Var<T>& images) const {
        if (!spec_.use_marn) throw ConfigError("MARN disabled in this A-Net");
        return marn_(images);
    }

    // Rotation angles in band-major order [bands * N].
    Var<T> angles(const Var<T>& images) const { return band_angles(marn_raw(images)); }

    // n rotated variants of each image, band-major [bands * N, C, H, W], and
    // the angles used.
    std::pair<Var<T>, Var<T>> marn_forward(const Var<T>& images) const {
        Var<T> theta = angles(images);
        return {ag::rotate(ag::tile_batch(images, spec_.bands), theta), theta};
    }

    [[nodiscard]] bool has_generator(int layer) const { return generators_.count(layer) != 0; }

    MaskPair<T> msmn_forward(const Var<T>& f, int layer) const {
        auto it = generators_.find(layer);
        if (it == generators_.end()) throw ConfigError("no mask generator for layer " + std::to_string(layer));
        return it->second(f, layer);
    }

private:
    ANetSpec spec_;
    nn::ParamSet<T> params_;
    RotationRegressor<T> marn_;
    std::map<int, MaskGenerator<T>> generators_;
};

}  // namespace ssah::anet
