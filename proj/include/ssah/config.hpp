#pragma once

// JSON experiment configuration. Keys mirror the C++ field names; unknown keys
// are rejected so that a typo never silently falls back to a default.

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssah/data.hpp"
#include "ssah/errors.hpp"
#include "ssah/rng.hpp"
#include "ssah/trainer.hpp"

namespace ssah::config {

using json = nlohmann::json;

struct DatasetSource {
    std::string kind = "synthetic";  // "synthetic" | "directory"
    int classes = 4;
    int per_class = 250;
    int image_size = 28;
    std::string path;  // directory kind only

    bool operator==(const DatasetSource&) const = default;
};

// One experiment: everything needed to rebuild data, split and trainer. The
// single `seed` drives training; split and dataset streams derive from it.
struct Experiment {
    std::uint64_t seed = 0;
    train::TrainConfig train;
    data::SplitSpec split{50, 50, 0, 0.0};
    DatasetSource dataset;
    std::string output_dir = "runs/default";
    // Ablation matrix (ablate only).
    std::vector<train::VariantTag> variants;
    std::vector<std::uint64_t> seeds;
    std::vector<int> code_lengths;

    [[nodiscard]] data::SplitSpec resolved_split() const {
        data::SplitSpec s = split;
        s.seed = Rng(seed).derive("split").next_u64();
        return s;
    }
    [[nodiscard]] std::uint64_t dataset_seed() const { return Rng(seed).derive("dataset").next_u64(); }
    [[nodiscard]] train::TrainConfig resolved_train() const {
        train::TrainConfig c = train;
        c.seed = seed;
        return c;
    }
    [[nodiscard]] Experiment with_seed(std::uint64_t s) const {
        Experiment e = *this;
        e.seed = s;
        return e;
    }

    bool operator==(const Experiment& o) const {
        return seed == o.seed && train == o.train && split.labeled_per_class == o.split.labeled_per_class &&
               split.query_per_class == o.split.query_per_class && split.unseen_fraction == o.split.unseen_fraction &&
               dataset == o.dataset && output_dir == o.output_dir && variants == o.variants && seeds == o.seeds &&
               code_lengths == o.code_lengths;
    }
};

namespace detail {

// Walks one JSON object, remembering which keys were read.
class Reader {
public:
    Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <typename F>
    void opt(const char* key, F&& read) {
        seen_.insert(key);
        if (j_.contains(key)) read(j_.at(key), where_ + "." + key);
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

inline long long get_int(const json& v, const std::string& at) {
    if (!v.is_number_integer()) throw ConfigError(at + ": expected an integer");
    return v.get<long long>();
}
inline std::uint64_t get_u64(const json& v, const std::string& at) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    const auto x = get_int(v, at);
    if (x < 0) throw ConfigError(at + ": expected a non-negative integer");
    return static_cast<std::uint64_t>(x);
}
inline double get_real(const json& v, const std::string& at) {
    if (!v.is_number()) throw ConfigError(at + ": expected a number");
    return v.get<double>();
}
inline std::string get_str(const json& v, const std::string& at) {
    if (!v.is_string()) throw ConfigError(at + ": expected a string");
    return v.get<std::string>();
}
template <typename F>
auto get_list(const json& v, const std::string& at, F&& elem) {
    if (!v.is_array()) throw ConfigError(at + ": expected an array");
    std::vector<decltype(elem(v, at))> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(elem(v[i], at + "[" + std::to_string(i) + "]"));
    return out;
}
inline int get_i32(const json& v, const std::string& at) {
    const auto x = get_int(v, at);
    if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(at + ": out of range");
    return static_cast<int>(x);
}

}  // namespace detail

inline json to_json(const losses::LossWeights& w) {
    return {{"alpha", w.alpha}, {"beta", w.beta}, {"lambda1", w.lambda1}, {"lambda2", w.lambda2}};
}

// TrainConfig without its seed (the seed lives at the experiment level).
inline json to_json(const train::TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"lr_decay_factor", c.lr_decay_factor},
            {"lr_decay_at", c.lr_decay_at},
            {"momentum", c.momentum},
            {"weight_decay", c.weight_decay},
            {"weights", to_json(c.weights)},
            {"omega0", c.omega0},
            {"omega_step", c.omega_step},
            {"omega_period", c.omega_period},
            {"bands", c.bands},
            {"code_length", c.code_length},
            {"variant", c.variant.str()},
            {"encoder_widths", c.encoder_widths},
            {"mask_layers", c.mask_layers},
            {"generator_width", c.generator_width},
            {"generator_residual_blocks", c.generator_residual_blocks}};
}

inline json to_json(const data::SplitSpec& s) {
    return {{"labeled_per_class", s.labeled_per_class}, {"query_per_class", s.query_per_class}, {"unseen_fraction", s.unseen_fraction}};
}

inline json to_json(const DatasetSource& d) {
    if (d.kind == "directory") return {{"kind", d.kind}, {"path", d.path}};
    return {{"kind", d.kind}, {"classes", d.classes}, {"per_class", d.per_class}, {"image_size", d.image_size}};
}

inline json to_json(const Experiment& e) {
    json j = {{"seed", e.seed}, {"train", to_json(e.train)}, {"split", to_json(e.split)}, {"dataset", to_json(e.dataset)}, {"output_dir", e.output_dir}};
    if (!e.variants.empty()) {
        json v = json::array();
        for (const auto& t : e.variants) v.push_back(t.str());
        j["variants"] = v;
    }
    if (!e.seeds.empty()) j["seeds"] = e.seeds;
    if (!e.code_lengths.empty()) j["code_lengths"] = e.code_lengths;
    return j;
}

inline losses::LossWeights weights_from_json(const json& j, const std::string& at) {
    using namespace detail;
    losses::LossWeights w;
    Reader r(j, at);
    r.opt("alpha", [&](const json& v, const std::string& p) { w.alpha = get_real(v, p); });
    r.opt("beta", [&](const json& v, const std::string& p) { w.beta = get_real(v, p); });
    r.opt("lambda1", [&](const json& v, const std::string& p) { w.lambda1 = get_real(v, p); });
    r.opt("lambda2", [&](const json& v, const std::string& p) { w.lambda2 = get_real(v, p); });
    r.finish();
    return w;
}

inline train::TrainConfig train_from_json(const json& j, const std::string& at = "train") {
    using namespace detail;
    train::TrainConfig c;
    Reader r(j, at);
    r.opt("epochs", [&](const json& v, const std::string& p) { c.epochs = get_i32(v, p); });
    r.opt("batch_size", [&](const json& v, const std::string& p) { c.batch_size = get_i32(v, p); });
    r.opt("learning_rate", [&](const json& v, const std::string& p) { c.learning_rate = get_real(v, p); });
    r.opt("lr_decay_factor", [&](const json& v, const std::string& p) { c.lr_decay_factor = get_real(v, p); });
    r.opt("lr_decay_at", [&](const json& v, const std::string& p) { c.lr_decay_at = get_real(v, p); });
    r.opt("momentum", [&](const json& v, const std::string& p) { c.momentum = get_real(v, p); });
    r.opt("weight_decay", [&](const json& v, const std::string& p) { c.weight_decay = get_real(v, p); });
    r.opt("weights", [&](const json& v, const std::string& p) { c.weights = weights_from_json(v, p); });
    r.opt("omega0", [&](const json& v, const std::string& p) { c.omega0 = get_real(v, p); });
    r.opt("omega_step", [&](const json& v, const std::string& p) { c.omega_step = get_real(v, p); });
    r.opt("omega_period", [&](const json& v, const std::string& p) { c.omega_period = get_i32(v, p); });
    r.opt("bands", [&](const json& v, const std::string& p) { c.bands = get_i32(v, p); });
    r.opt("code_length", [&](const json& v, const std::string& p) { c.code_length = get_i32(v, p); });
    r.opt("variant", [&](const json& v, const std::string& p) { c.variant = train::VariantTag::parse(get_str(v, p)); });
    r.opt("encoder_widths", [&](const json& v, const std::string& p) { c.encoder_widths = get_list(v, p, get_i32); });
    r.opt("mask_layers", [&](const json& v, const std::string& p) { c.mask_layers = get_list(v, p, get_i32); });
    r.opt("generator_width", [&](const json& v, const std::string& p) { c.generator_width = get_i32(v, p); });
    r.opt("generator_residual_blocks", [&](const json& v, const std::string& p) { c.generator_residual_blocks = get_i32(v, p); });
    r.finish();
    c.validate();
    return c;
}

inline data::SplitSpec split_from_json(const json& j, const std::string& at = "split") {
    using namespace detail;
    data::SplitSpec s{50, 50, 0, 0.0};
    Reader r(j, at);
    r.opt("labeled_per_class", [&](const json& v, const std::string& p) { s.labeled_per_class = get_i32(v, p); });
    r.opt("query_per_class", [&](const json& v, const std::string& p) { s.query_per_class = get_i32(v, p); });
    r.opt("unseen_fraction", [&](const json& v, const std::string& p) { s.unseen_fraction = get_real(v, p); });
    r.finish();
    if (s.labeled_per_class < 0 || s.query_per_class < 0) throw ConfigError(at + ": counts must be non-negative");
    if (s.unseen_fraction < 0 || s.unseen_fraction >= 1) throw ConfigError(at + ".unseen_fraction must be in [0, 1)");
    return s;
}

inline DatasetSource dataset_from_json(const json& j, const std::string& at = "dataset") {
    using namespace detail;
    DatasetSource d;
    Reader r(j, at);
    r.opt("kind", [&](const json& v, const std::string& p) { d.kind = get_str(v, p); });
    r.opt("classes", [&](const json& v, const std::string& p) { d.classes = get_i32(v, p); });
    r.opt("per_class", [&](const json& v, const std::string& p) { d.per_class = get_i32(v, p); });
    r.opt("image_size", [&](const json& v, const std::string& p) { d.image_size = get_i32(v, p); });
    r.opt("path", [&](const json& v, const std::string& p) { d.path = get_str(v, p); });
    r.finish();
    if (d.kind == "synthetic") {
        if (d.classes < 1 || d.per_class < 1 || d.image_size < 16) throw ConfigError(at + ": bad synthetic dataset shape");
        if (!d.path.empty()) throw ConfigError(at + ": 'path' only applies to directory datasets");
    } else if (d.kind == "directory") {
        if (d.path.empty()) throw ConfigError(at + ": directory dataset needs 'path'");
    } else {
        throw ConfigError(at + ".kind must be 'synthetic' or 'directory'");
    }
    return d;
}

inline Experiment experiment_from_json(const json& j) {
    using namespace detail;
    Experiment e;
    Reader r(j, "config");
    r.opt("seed", [&](const json& v, const std::string& p) { e.seed = get_u64(v, p); });
    r.opt("train", [&](const json& v, const std::string& p) { e.train = train_from_json(v, p); });
    r.opt("split", [&](const json& v, const std::string& p) { e.split = split_from_json(v, p); });
    r.opt("dataset", [&](const json& v, const std::string& p) { e.dataset = dataset_from_json(v, p); });
    r.opt("output_dir", [&](const json& v, const std::string& p) { e.output_dir = get_str(v, p); });
    r.opt("variants", [&](const json& v, const std::string& p) {
        for (const auto& s : get_list(v, p, get_str)) {
            // A bare "fixed_paced" stands for the whole margin sweep.
            if (s == "fixed_paced") {
                for (double w : train::kFixedPacedSweep) e.variants.push_back({train::Variant::fixed_paced, w});
            } else {
                e.variants.push_back(train::VariantTag::parse(s));
            }
        }
    });
    r.opt("seeds", [&](const json& v, const std::string& p) { e.seeds = get_list(v, p, get_u64); });
    r.opt("code_lengths", [&](const json& v, const std::string& p) { e.code_lengths = get_list(v, p, get_i32); });
    r.finish();
    if (e.output_dir.empty()) throw ConfigError("config.output_dir must not be empty");
    for (int k : e.code_lengths)
        if (k < 8) throw ConfigError("config.code_lengths: every length must be at least 8");
    return e;
}

inline Experiment parse_experiment(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& err) {
        throw ConfigError(std::string("config is not valid JSON: ") + err.what());
    }
    return experiment_from_json(j);
}

inline std::string read_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot read " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline Experiment load_experiment(const std::string& path) { return parse_experiment(read_text(path)); }

inline std::string dump(const Experiment& e) { return to_json(e).dump(2) + "\n"; }

}  // namespace ssah::config
