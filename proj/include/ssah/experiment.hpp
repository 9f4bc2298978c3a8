#pragma once

// Experiment orchestration shared by the CLI and the acceptance binary:
// building the dataset an experiment names, the standard semi-supervised
// run, and the unseen-class protocol.

#include <cmath>
#include <algorithm>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "ssah/config.hpp"
#include "ssah/dataset_io.hpp"
#include "ssah/retrieval.hpp"
#include "ssah/trainer.hpp"

namespace ssah::experiment {

inline data::Dataset build_dataset(const config::Experiment& e) {
    if (e.dataset.kind == "synthetic")
        return data::make_synthetic_dataset(e.dataset.classes, e.dataset.per_class, e.dataset.image_size, e.dataset_seed());
    return io::load_dataset(e.dataset.path);
}

// Dataset, split and the trainer's view of the training data.
struct Prepared {
    data::Dataset dataset;
    data::SplitSpec split_spec;
    data::SemiSupervisedSplit split;
    data::Dataset train_view;
};

inline Prepared prepare(const config::Experiment& e) {
    Prepared p;
    p.dataset = build_dataset(e);
    p.split_spec = e.resolved_split();
    p.split = data::split_semi_supervised(p.dataset, p.split_spec);
    p.train_view = data::training_view(p.dataset, p.split.database, p.split.labeled_train);
    return p;
}

// Named index sets a checkpoint can be evaluated on: "test" queries the
// database with the held-out queries, "train" uses the labeled training
// images as queries.
inline std::pair<std::vector<int>, std::vector<int>> eval_sets(const Prepared& p, const std::string& name) {
    if (name == "test") return {p.split.query, p.split.database};
    if (name == "train") return {p.split.labeled_train, p.split.database};
    throw ConfigError("unknown split '" + name + "' (expected test or train)");
}

struct MeanStd {
    double mean = 0;
    double stddev = 0;  // population standard deviation
};

inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd out;
    if (v.empty()) return out;
    out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(v.size()));
    return out;
}

// ---- unseen classes ----

struct UnseenSplitResult {
    std::vector<int> known_classes;
    std::vector<int> unseen_classes;
    double map = 0;
    std::size_t batches_checked = 0;
};

struct UnseenReport {
    std::vector<UnseenSplitResult> splits;
    MeanStd map;
};

// Trains on train75 (known classes, `labeled_per_class` of them labeled per
// class, the rest unlabeled), then queries train25 with test25. Every batch the
// trainer draws is checked against the unseen class set; a violation throws.
template <typename T = float>
UnseenReport evaluate_unseen(const config::Experiment& e, int n_splits = 5,
                             const std::function<void(int, const UnseenSplitResult&)>& progress = {}) {
    if (n_splits < 1) throw ConfigError("evaluate_unseen needs at least one split");
    if (!(e.split.unseen_fraction > 0.0)) throw ConfigError("unseen protocol needs split.unseen_fraction > 0");
    const data::Dataset ds = build_dataset(e);
    Rng master = Rng(e.seed).derive("unseen");
    UnseenReport report;
    std::vector<double> maps;
    for (int s = 0; s < n_splits; ++s) {
        data::SplitSpec spec = e.split;
        spec.seed = master.derive("split", static_cast<std::uint64_t>(s)).next_u64();
        const auto us = data::split_unseen_classes(ds, spec);

        // Labeled subset of train75: the first labeled_per_class of each known
        // class in a seeded shuffle.
        Rng pick = master.derive("labeled", static_cast<std::uint64_t>(s));
        std::vector<int> shuffled = us.train75;
        pick.shuffle(shuffled.begin(), shuffled.end());
        std::vector<int> labeled;
        std::map<int, int> taken;
        for (int i : shuffled) {
            const int c = ds.images[i].class_ids.front();
            if (taken[c] < e.split.labeled_per_class) {
                ++taken[c];
                labeled.push_back(i);
            }
        }
        std::sort(labeled.begin(), labeled.end());

        auto cfg = e.resolved_train();
        cfg.seed = master.derive("train", static_cast<std::uint64_t>(s)).next_u64();
        train::Trainer<T> tr(cfg, data::training_view(ds, us.train75, labeled));

        UnseenSplitResult r;
        r.known_classes = us.known_classes;
        r.unseen_classes = us.unseen_classes;
        // The view drops labels of unlabeled members, so map back to the
        // source dataset to see true classes.
        tr.on_batch = [&](const std::vector<int>& members) {
            for (int pos : members) {
                const auto& ids = ds.images.at(us.train75.at(pos)).class_ids;
                if (data::classes_intersect(ids, us.unseen_classes))
                    throw std::logic_error("unseen class image " + std::to_string(us.train75[pos]) + " reached a training batch");
            }
            ++r.batches_checked;
        };
        tr.run();
        r.map = retrieval::mean_average_precision(train::make_run(tr.hnet(), ds, us.test25, us.train25));
        maps.push_back(r.map);
        if (progress) progress(s, r);
        report.splits.push_back(std::move(r));
    }
    report.map = mean_std(maps);
    return report;
}

}  // namespace ssah::experiment
