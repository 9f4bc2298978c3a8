#pragma once

// Datasets, semi-supervised and unseen-class splits, pairwise labels and
// batch assembly, plus a synthetic shape benchmark for desk-scale runs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "ssah/codes.hpp"
#include "ssah/errors.hpp"
#include "ssah/rng.hpp"
#include "ssah/tensor.hpp"

namespace ssah::data {

using codes::PairLabel;

struct LabeledImage {
    Tensor<float> pixels;        // [C, H, W], values in [-1, 1]
    std::vector<int> class_ids;  // sorted, unique; empty when unlabeled
    bool is_labeled = false;
};

struct Dataset {
    int channels = 3;
    int height = 0;
    int width = 0;
    std::vector<LabeledImage> images;

    [[nodiscard]] std::size_t size() const { return images.size(); }

    // Distinct class ids in ascending order.
    [[nodiscard]] std::vector<int> classes() const {
        std::vector<int> out;
        for (const auto& im : images) out.insert(out.end(), im.class_ids.begin(), im.class_ids.end());
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    void add(Tensor<float> pixels, std::vector<int> class_ids) {
        std::sort(class_ids.begin(), class_ids.end());
        class_ids.erase(std::unique(class_ids.begin(), class_ids.end()), class_ids.end());
        const bool labeled = !class_ids.empty();
        images.push_back({std::move(pixels), std::move(class_ids), labeled});
    }
};

inline bool classes_intersect(const std::vector<int>& a, const std::vector<int>& b) {
    auto i = a.begin();
    auto j = b.begin();
    while (i != a.end() && j != b.end()) {
        if (*i == *j) return true;
        if (*i < *j) ++i;
        else ++j;
    }
    return false;
}

inline PairLabel build_pair_label(const LabeledImage& a, const LabeledImage& b) {
    if (!a.is_labeled || !b.is_labeled) return PairLabel::unknown;
    return classes_intersect(a.class_ids, b.class_ids) ? PairLabel::similar : PairLabel::dissimilar;
}

struct SplitSpec {
    int labeled_per_class = 0;
    int query_per_class = 0;
    std::uint64_t seed = 0;
    double unseen_fraction = 0.0;  // 0 for the standard protocol
};

struct SemiSupervisedSplit {
    std::vector<int> query;
    std::vector<int> database;
    std::vector<int> labeled_train;
    std::vector<int> unlabeled_train;
};

namespace detail {
inline std::vector<std::vector<int>> indices_by_primary_class(const Dataset& ds, const std::vector<int>& classes) {
    std::vector<std::vector<int>> out(classes.size());
    for (int i = 0; i < static_cast<int>(ds.size()); ++i) {
        const auto& ids = ds.images[i].class_ids;
        if (ids.empty()) continue;
        const auto pos = std::lower_bound(classes.begin(), classes.end(), ids.front()) - classes.begin();
        out[pos].push_back(i);
    }
    return out;
}
}  // namespace detail

// Per class (by primary class id): query_per_class images to the query set,
// the rest to the database; within the database, labeled_per_class images are
// labeled training data and the remainder unlabeled. Images without any class
// id join the database as unlabeled.
inline SemiSupervisedSplit split_semi_supervised(const Dataset& ds, const SplitSpec& spec) {
    if (spec.labeled_per_class < 0 || spec.query_per_class < 0) throw ConfigError("split counts must be non-negative");
    const auto classes = ds.classes();
    const auto groups = detail::indices_by_primary_class(ds, classes);
    Rng rng = Rng(spec.seed).derive("split_semi_supervised");
    SemiSupervisedSplit out;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        auto idx = groups[c];
        const auto need = static_cast<std::size_t>(spec.query_per_class + spec.labeled_per_class);
        if (idx.size() < need)
            throw ConfigError("class " + std::to_string(classes[c]) + " has " + std::to_string(idx.size()) +
                              " images, split needs " + std::to_string(need));
        rng.shuffle(idx.begin(), idx.end());
        const auto q = static_cast<std::ptrdiff_t>(spec.query_per_class);
        const auto l = static_cast<std::ptrdiff_t>(spec.labeled_per_class);
        out.query.insert(out.query.end(), idx.begin(), idx.begin() + q);
        out.labeled_train.insert(out.labeled_train.end(), idx.begin() + q, idx.begin() + q + l);
        out.unlabeled_train.insert(out.unlabeled_train.end(), idx.begin() + q + l, idx.end());
    }
    for (int i = 0; i < static_cast<int>(ds.size()); ++i)
        if (ds.images[i].class_ids.empty()) out.unlabeled_train.push_back(i);
    std::sort(out.query.begin(), out.query.end());
    std::sort(out.labeled_train.begin(), out.labeled_train.end());
    std::sort(out.unlabeled_train.begin(), out.unlabeled_train.end());
    out.database = out.labeled_train;
    out.database.insert(out.database.end(), out.unlabeled_train.begin(), out.unlabeled_train.end());
    std::sort(out.database.begin(), out.database.end());
    return out;
}

struct UnseenSplit {
    std::vector<int> known_classes;
    std::vector<int> unseen_classes;
    std::vector<int> train75;
    std::vector<int> test75;
    std::vector<int> train25;
    std::vector<int> test25;
};

// Known classes: floor((1 - unseen_fraction) * C); every class's images are
// halved into train and test.
inline UnseenSplit split_unseen_classes(const Dataset& ds, const SplitSpec& spec) {
    auto classes = ds.classes();
    if (classes.size() < 4) throw ConfigError("unseen-class protocol needs at least 4 classes");
    if (!(spec.unseen_fraction > 0.0 && spec.unseen_fraction < 1.0)) throw ConfigError("unseen_fraction must be in (0, 1)");
    const auto groups = detail::indices_by_primary_class(ds, classes);
    Rng rng = Rng(spec.seed).derive("split_unseen_classes");
    std::vector<std::size_t> order(classes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    const auto known = static_cast<std::size_t>(std::floor((1.0 - spec.unseen_fraction) * static_cast<double>(classes.size()) + 1e-9));
    if (known == 0 || known == classes.size()) throw ConfigError("unseen split leaves an empty class set");

    UnseenSplit out;
    for (std::size_t r = 0; r < order.size(); ++r) {
        const std::size_t c = order[r];
        const bool is_known = r < known;
        (is_known ? out.known_classes : out.unseen_classes).push_back(classes[c]);
        auto idx = groups[c];
        rng.shuffle(idx.begin(), idx.end());
        const auto half = static_cast<std::ptrdiff_t>(idx.size() / 2);
        auto& train = is_known ? out.train75 : out.train25;
        auto& test = is_known ? out.test75 : out.test25;
        train.insert(train.end(), idx.begin(), idx.begin() + half);
        test.insert(test.end(), idx.begin() + half, idx.end());
    }
    for (auto* v : {&out.known_classes, &out.unseen_classes, &out.train75, &out.test75, &out.train25, &out.test25})
        std::sort(v->begin(), v->end());
    return out;
}

// A copy of `ds` restricted to `indices`, where only members of `labeled`
// (a sorted subset) keep their class ids. This is what the trainer sees.
inline Dataset training_view(const Dataset& ds, const std::vector<int>& indices, const std::vector<int>& labeled) {
    Dataset out{ds.channels, ds.height, ds.width, {}};
    out.images.reserve(indices.size());
    for (int i : indices) {
        LabeledImage im = ds.images.at(i);
        if (!std::binary_search(labeled.begin(), labeled.end(), i)) {
            im.class_ids.clear();
            im.is_labeled = false;
        }
        out.images.push_back(std::move(im));
    }
    return out;
}

inline Dataset subset(const Dataset& ds, const std::vector<int>& indices) {
    Dataset out{ds.channels, ds.height, ds.width, {}};
    out.images.reserve(indices.size());
    for (int i : indices) out.images.push_back(ds.images.at(i));
    return out;
}

struct LabeledPair {
    int i;  // batch-local positions, i < j
    int j;
    PairLabel s;
};

struct PairBatch {
    std::vector<int> members;      // dataset indices, in batch order
    std::vector<LabeledPair> pairs;  // every unordered labeled pair once
    std::vector<int> unlabeled;    // batch-local positions of unlabeled members
};

inline PairBatch assemble_batch(const std::vector<int>& indices, const Dataset& ds) {
    PairBatch b;
    b.members = indices;
    for (int p = 0; p < static_cast<int>(indices.size()); ++p) {
        const auto& a = ds.images.at(indices[p]);
        if (!a.is_labeled) {
            b.unlabeled.push_back(p);
            continue;
        }
        for (int q = p + 1; q < static_cast<int>(indices.size()); ++q) {
            const auto s = build_pair_label(a, ds.images.at(indices[q]));
            if (s != PairLabel::unknown) b.pairs.push_back({p, q, s});
        }
    }
    return b;
}

// Stacks the given images into an NCHW tensor.
template <typename T = float>
Tensor<T> stack(const Dataset& ds, const std::vector<int>& indices) {
    Tensor<T> out({static_cast<int>(indices.size()), ds.channels, ds.height, ds.width});
    const std::size_t per = static_cast<std::size_t>(ds.channels) * ds.height * ds.width;
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto& px = ds.images.at(indices[k]).pixels;
        if (px.size() != per) throw DimensionError("image size differs from dataset geometry");
        std::copy(px.vec().begin(), px.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(k * per));
    }
    return out;
}

// ---- synthetic benchmark ----------------------------------------------------

inline constexpr int kSyntheticShapes = 8;
// Strength of the per-class hue shift on top of the random instance colour.
inline constexpr double kClassTint = 0.4;

namespace detail {
// Shape membership in local coordinates scaled so the shape spans ~[-1, 1].
inline bool inside_shape(int shape, double u, double v) {
    const double r = std::hypot(u, v);
    switch (shape) {
        case 0: return r <= 0.95;                                                         // disk
        case 1: return std::max(std::abs(u), std::abs(v)) <= 0.75;                        // square
        case 2: return (std::abs(u) <= 0.28 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.28 && std::abs(u) <= 1.0);  // plus
        case 3: return r <= 1.0 && r >= 0.55;                                             // ring
        case 4: return v >= -0.85 && v <= 0.75 && std::abs(u) * 1.7 <= (v + 0.85);        // triangle
        case 5: {                                                                         // diagonal cross
            const double a = (u + v) * std::numbers::sqrt2 / 2, b = (u - v) * std::numbers::sqrt2 / 2;
            return (std::abs(a) <= 0.28 && std::abs(b) <= 1.0) || (std::abs(b) <= 0.28 && std::abs(a) <= 1.0);
        }
        case 6: return std::max(std::abs(u), std::abs(v)) <= 0.9 && std::fmod(v + 0.9, 0.6) < 0.3;  // bars
        default: return std::abs(u) + std::abs(v) <= 1.0;                                 // diamond
    }
}
}  // namespace detail

// Class-conditional geometric patterns: the class fixes the shape (and a
// colour tint); position, scale, orientation, colour and noise vary per
// instance. Deterministic per seed.
inline Dataset make_synthetic_dataset(int n_classes, int per_class, int image_size, std::uint64_t seed) {
    if (image_size < 16) throw ConfigError("synthetic images must be at least 16 pixels");
    if (n_classes < 1 || per_class < 0) throw ConfigError("synthetic dataset needs at least one class");
    Dataset ds{3, image_size, image_size, {}};
    Rng master(seed);
    const double half = (image_size - 1) / 2.0;
    for (int c = 0; c < n_classes; ++c) {
        Rng rng = master.derive("synthetic_class", static_cast<std::uint64_t>(c));
        const int shape = c % kSyntheticShapes;
        const double hue = 2.0 * std::numbers::pi * c / std::max(n_classes, 1);
        for (int k = 0; k < per_class; ++k) {
            Tensor<float> px({3, image_size, image_size});
            const double bg = rng.uniform(-0.7, -0.3);
            const double scale = image_size * rng.uniform(0.24, 0.36);
            const double cx = half + rng.uniform(-0.12, 0.12) * image_size;
            const double cy = half + rng.uniform(-0.12, 0.12) * image_size;
            const double rot = rng.uniform(-20.0, 20.0) * std::numbers::pi / 180.0;
            // Instance colour: random bright colour shifted towards the class hue.
            double col[3];
            for (int ch = 0; ch < 3; ++ch)
                col[ch] = std::clamp(rng.uniform(0.1, 0.9) + kClassTint * std::cos(hue + 2.0 * std::numbers::pi * ch / 3.0), -1.0, 1.0);
            const double cs = std::cos(rot), sn = std::sin(rot);
            for (int i = 0; i < image_size; ++i)
                for (int j = 0; j < image_size; ++j) {
                    // 2x2 supersampled coverage
                    int hits = 0;
                    for (int si = 0; si < 2; ++si)
                        for (int sj = 0; sj < 2; ++sj) {
                            const double x = j + 0.25 + 0.5 * sj - cx, y = i + 0.25 + 0.5 * si - cy;
                            const double u = (cs * x + sn * y) / scale, v = (-sn * x + cs * y) / scale;
                            hits += detail::inside_shape(shape, u, v);
                        }
                    const double cover = hits / 4.0;
                    for (int ch = 0; ch < 3; ++ch) {
                        const double val = (1.0 - cover) * bg + cover * col[ch] + rng.normal(0.0, 0.08);
                        px[(static_cast<std::size_t>(ch) * image_size + i) * image_size + j] = static_cast<float>(std::clamp(val, -1.0, 1.0));
                    }
                }
            ds.add(std::move(px), {c});
        }
    }
    return ds;
}

}  // namespace ssah::data
