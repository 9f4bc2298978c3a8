#pragma once

// Hashing encoder: strided conv blocks (instance norm + leaky ReLU), global
// average pooling and a fully connected hashing layer with tanh output, so
// codes lie strictly inside (-1, 1)^k.

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssah/anet.hpp"
#include "ssah/module.hpp"

namespace ssah::hnet {

using ag::Var;
using anet::MaskPair;

struct EncoderSpec {
    int image_channels = 3;
    int image_size = 28;
    std::vector<int> widths{32, 64, 128};
    int kernel = 3;
    int stride = 2;
    int code_length = 12;
    std::vector<int> mask_layers{0, 1, 2};

    // Channels of feature layer m; layer 0 is the input image.
    [[nodiscard]] std::vector<int> layer_channels() const {
        std::vector<int> out{image_channels};
        out.insert(out.end(), widths.begin(), widths.end());
        return out;
    }

    void validate() const {
        if (code_length < 8) throw ConfigError("code length must be at least 8");
        if (widths.empty()) throw ConfigError("encoder needs at least one conv block");
        for (int m : mask_layers)
            if (m < 0 || m > static_cast<int>(widths.size())) throw ConfigError("mask layer " + std::to_string(m) + " does not exist");
    }
};

// Called once per configured mask layer with the feature about to be masked;
// returns the masks to inject there.
template <typename T>
using MaskSource = std::function<std::optional<MaskPair<T>>(int layer, const Var<T>& feature)>;

// Rotated images (band-major) together with explicit masks for each layer.
template <typename T>
struct HardVariantSet {
    Var<T> rotated;
    std::map<int, MaskPair<T>> masks;
};

template <typename T>
class Encoder {
public:
    Encoder() = default;
    Encoder(const Encoder&) = delete;
    Encoder& operator=(const Encoder&) = delete;
    Encoder(Encoder&&) noexcept = default;
    Encoder& operator=(Encoder&&) noexcept = default;

    Encoder(EncoderSpec spec, Rng rng) : spec_(std::move(spec)) {
        spec_.validate();
        int in = spec_.image_channels;
        for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
            const std::string name = "hnet.block" + std::to_string(i + 1);
            const int pad = spec_.kernel / 2;
            Block b{nn::Conv<T>(params_, name + ".conv", in, spec_.widths[i], spec_.kernel, spec_.stride, pad, rng), std::nullopt};
            // The last block feeds the global pool and stays unnormalized.
            if (i + 1 < spec_.widths.size()) b.norm.emplace(params_, name + ".norm", spec_.widths[i]);
            blocks_.push_back(std::move(b));
            in = spec_.widths[i];
        }
        hash_ = nn::Linear<T>(params_, "hnet.hash", in, spec_.code_length, rng, 0.5);
    }

    [[nodiscard]] const EncoderSpec& spec() const { return spec_; }
    nn::ParamSet<T>& params() { return params_; }
    [[nodiscard]] const nn::ParamSet<T>& params() const { return params_; }
    [[nodiscard]] int code_length() const { return spec_.code_length; }

    // images [N,C,H,W] -> codes [N,k]
    Var<T> encode(const Var<T>& images) const { return forward(images, nullptr); }

    // Forward pass where the feature at every configured mask layer is replaced
    // by its masked version before continuing.
    Var<T> encode_hard(const Var<T>& images, const MaskSource<T>& masks) const { return forward(images, &masks); }

    Var<T> encode_hard(const HardVariantSet<T>& v) const {
        MaskSource<T> src = [&v](int layer, const Var<T>&) -> std::optional<MaskPair<T>> {
            auto it = v.masks.find(layer);
            if (it == v.masks.end()) return std::nullopt;
            return it->second;
        };
        return forward(v.rotated, &src);
    }

    // Data-dependent initialization of the hashing layer: rescales each code
    // unit so that its pre-activation has zero mean and standard deviation
    // `target_std` over `images`. At random init the pooled features share a
    // large common component; without this the pairwise losses first shrink
    // all codes toward zero, where their gradients vanish.
    void calibrate(const Var<T>& images, double target_std = 1.0) {
        const Var<T> feat = features(images, nullptr);
        const auto& f = feat.value();
        auto& w = hash_.w.mutable_value();
        auto& b = hash_.b.mutable_value();
        const int n = f.dim(0), in = f.dim(1), k = spec_.code_length;
        if (n < 2) throw DimensionError("calibration needs at least two images");
        for (int c = 0; c < k; ++c) {
            double sum = 0, sq = 0;
            for (int i = 0; i < n; ++i) {
                double z = b[c];
                for (int j = 0; j < in; ++j) z += static_cast<double>(w[static_cast<std::size_t>(c) * in + j]) * f.at(i, j);
                sum += z;
                sq += z * z;
            }
            const double mean = sum / n;
            const double sd = std::sqrt(std::max(sq / n - mean * mean, 0.0));
            if (!(sd > 1e-12)) continue;
            const double s = target_std / sd;
            for (int j = 0; j < in; ++j) w[static_cast<std::size_t>(c) * in + j] = static_cast<T>(w[static_cast<std::size_t>(c) * in + j] * s);
            b[c] = static_cast<T>((b[c] - mean) * s);
        }
    }

private:
    // Pooled features [N, widths.back()].
    Var<T> features(const Var<T>& images, const MaskSource<T>* masks) const {
        const auto& s = images.shape();
        if (s.size() != 4 || s[1] != spec_.image_channels || s[2] != spec_.image_size || s[3] != spec_.image_size)
            throw DimensionError("encoder expects [N," + std::to_string(spec_.image_channels) + "," + std::to_string(spec_.image_size) + "," +
                                 std::to_string(spec_.image_size) + "], got " + images.value().shape_str());
        Var<T> h = inject(images, 0, masks);
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            h = blocks_[i].conv(h);
            if (blocks_[i].norm) h = (*blocks_[i].norm)(h);
            h = ag::leaky_relu(h, T(0.1));
            h = inject(h, static_cast<int>(i + 1), masks);
        }
        return ag::global_avg_pool(h);
    }

    Var<T> forward(const Var<T>& images, const MaskSource<T>* masks) const {
        return ag::tanh(hash_(features(images, masks)));
    }

    Var<T> inject(const Var<T>& f, int layer, const MaskSource<T>* masks) const {
        if (!masks || !*masks) return f;
        if (std::find(spec_.mask_layers.begin(), spec_.mask_layers.end(), layer) == spec_.mask_layers.end()) return f;
        auto m = (*masks)(layer, f);
        if (!m) throw ConfigError("missing mask for configured layer " + std::to_string(layer));
        m->layer = layer;
        return anet::apply_mask(f, *m);
    }

    struct Block {
        nn::Conv<T> conv;
        std::optional<nn::InstanceNorm<T>> norm;
    };
    EncoderSpec spec_;
    nn::ParamSet<T> params_;
    std::vector<Block> blocks_;
    nn::Linear<T> hash_;
};

}  // namespace ssah::hnet
