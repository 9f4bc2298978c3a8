#pragma once

// Code-space algebra shared by the losses and the retrieval metrics.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssah/errors.hpp"

namespace ssah::codes {

// Pairwise supervision: similar (1), dissimilar (0), or unknown when either
// endpoint is unlabeled.
enum class PairLabel : std::int8_t { dissimilar = 0, similar = 1, unknown = -1 };

inline PairLabel pair_label_from(int s) {
    if (s == 0) return PairLabel::dissimilar;
    if (s == 1) return PairLabel::similar;
    throw ParameterError("pair label must be 0 or 1, got " + std::to_string(s));
}

// S as a number; unknown labels must be filtered by the caller.
inline int label_value(PairLabel s) {
    if (s == PairLabel::unknown) throw ParameterError("unknown pair label reached code algebra");
    return static_cast<int>(s);
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size())
        throw DimensionError("code lengths differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    T s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// (mu_i . mu_j + k) / (2k); in [0, 1] for codes in [-1, 1]^k.
template <typename T>
T similarity_degree(std::span<const T> mu_i, std::span<const T> mu_j) {
    const T k = static_cast<T>(mu_i.size());
    if (mu_i.empty()) throw DimensionError("empty code");
    return (dot(mu_i, mu_j) + k) / (T(2) * k);
}

// Distance between a pair label and an estimated similarity degree:
// S - (2S - 1) * sim, i.e. 1 - sim for similar pairs and sim for dissimilar.
template <typename T>
T pair_distance(PairLabel s, T sim) {
    const int sv = label_value(s);
    return T(sv) - T(2 * sv - 1) * sim;
}

// How much harder the generated pair is than the original: d_hard - d_orig.
template <typename T>
T hard_degree(T d_orig, T d_hard) {
    return d_hard - d_orig;
}

// sign(mu) with 0 mapped to +1.
template <typename T>
std::vector<std::int8_t> binarize(std::span<const T> mu) {
    std::vector<std::int8_t> b(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) b[i] = mu[i] < T(0) ? std::int8_t{-1} : std::int8_t{1};
    return b;
}

template <typename T>
T sign_of(T v) {
    return v < T(0) ? T(-1) : T(1);
}

inline int hamming_distance(std::span<const std::int8_t> a, std::span<const std::int8_t> b) {
    if (a.size() != b.size())
        throw DimensionError("code lengths differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    int d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

}  // namespace ssah::codes
