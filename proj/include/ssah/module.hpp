#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ssah/nn_ops.hpp"
#include "ssah/rng.hpp"

namespace ssah::nn {

using ag::Var;

// Ordered, named collection of trainable leaves. Order is part of the
// checkpoint format, so parameters are registered once at construction.
template <typename T>
class ParamSet {
public:
    Var<T> add(std::string name, Tensor<T> init) {
        Var<T> v(std::move(init), true);
        params_.emplace_back(std::move(name), v);
        return v;
    }

    [[nodiscard]] const std::vector<std::pair<std::string, Var<T>>>& items() const { return params_; }
    std::vector<std::pair<std::string, Var<T>>>& items() { return params_; }

    void set_trainable(bool on) {
        for (auto& [_, v] : params_) v.set_requires_grad(on);
    }
    void zero_grad() {
        for (auto& [_, v] : params_) v.zero_grad();
    }
    [[nodiscard]] std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [_, v] : params_) n += v.value().size();
        return n;
    }

    // Flat copy of all values, in registration order.
    [[nodiscard]] std::vector<T> flatten() const {
        std::vector<T> out;
        out.reserve(count());
        for (const auto& [_, v] : params_) out.insert(out.end(), v.value().vec().begin(), v.value().vec().end());
        return out;
    }

private:
    std::vector<std::pair<std::string, Var<T>>> params_;
};

template <typename T>
Tensor<T> he_normal(std::vector<int> shape, int fan_in, Rng& rng, double gain = 1.0) {
    Tensor<T> t(std::move(shape));
    const double sd = gain * std::sqrt(2.0 / fan_in);
    for (auto& v : t.vec()) v = static_cast<T>(rng.normal(0.0, sd));
    return t;
}

// conv weights + bias
template <typename T>
struct Conv {
    Var<T> w, b;
    int stride = 1, pad = 1;

    Conv() = default;
    Conv(ParamSet<T>& ps, const std::string& name, int in, int out, int k, int stride_, int pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        w = ps.add(name + ".weight", he_normal<T>({out, in, k, k}, in * k * k, rng));
        b = ps.add(name + ".bias", Tensor<T>({out}));
    }
    Var<T> operator()(const Var<T>& x) const { return ag::conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct InstanceNorm {
    Var<T> gamma, beta;

    InstanceNorm() = default;
    InstanceNorm(ParamSet<T>& ps, const std::string& name, int channels) {
        gamma = ps.add(name + ".gamma", Tensor<T>({channels}, T(1)));
        beta = ps.add(name + ".beta", Tensor<T>({channels}));
    }
    Var<T> operator()(const Var<T>& x) const { return ag::instance_norm(x, gamma, beta); }
};

template <typename T>
struct Linear {
    Var<T> w, b;

    Linear() = default;
    Linear(ParamSet<T>& ps, const std::string& name, int in, int out, Rng& rng, double gain = 1.0) {
        w = ps.add(name + ".weight", he_normal<T>({out, in}, in, rng, gain));
        b = ps.add(name + ".bias", Tensor<T>({out}));
    }
    Var<T> operator()(const Var<T>& x) const { return ag::linear(x, w, b); }
};

}  // namespace ssah::nn
