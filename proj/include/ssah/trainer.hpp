#pragma once

// Alternating optimization of the A-Net (generator) and H-Net (encoder).
// Every batch runs the A-Net update first (H-Net frozen, gradients flowing
// through it into masks and angles), then regenerates the hard variants with
// the updated A-Net and runs the H-Net update (A-Net outputs constant).

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ssah/anet.hpp"
#include "ssah/data.hpp"
#include "ssah/hnet.hpp"
#include "ssah/losses.hpp"
#include "ssah/retrieval.hpp"

namespace ssah::train {

using ag::Var;

enum class Variant { full, random_rotate, random_mask, marn_only, msmn_only, fixed_paced, no_adversarial };

struct VariantTag {
    Variant kind = Variant::full;
    double fixed_omega = 0.0;  // only for fixed_paced

    [[nodiscard]] std::string str() const {
        switch (kind) {
            case Variant::full: return "full";
            case Variant::random_rotate: return "random_rotate";
            case Variant::random_mask: return "random_mask";
            case Variant::marn_only: return "marn_only";
            case Variant::msmn_only: return "msmn_only";
            case Variant::no_adversarial: return "no_adversarial";
            case Variant::fixed_paced: {
                std::ostringstream os;
                os << "fixed_paced(" << fixed_omega << ")";
                return os.str();
            }
        }
        return "?";
    }

    // "full", "marn_only", ..., "fixed_paced(0.5)"
    static VariantTag parse(const std::string& s) {
        static const std::pair<const char*, Variant> plain[] = {
            {"full", Variant::full},           {"random_rotate", Variant::random_rotate}, {"random_mask", Variant::random_mask},
            {"marn_only", Variant::marn_only}, {"msmn_only", Variant::msmn_only},         {"no_adversarial", Variant::no_adversarial}};
        for (const auto& [name, v] : plain)
            if (s == name) return {v, 0.0};
        const std::string prefix = "fixed_paced(";
        if (s.rfind(prefix, 0) == 0 && s.size() > prefix.size() + 1 && s.back() == ')') {
            const std::string num = s.substr(prefix.size(), s.size() - prefix.size() - 1);
            std::size_t used = 0;
            double w = 0;
            try {
                w = std::stod(num, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == num.size() && w > 0) return {Variant::fixed_paced, w};
        }
        throw ConfigError("unrecognized variant tag '" + s + "'");
    }

    [[nodiscard]] bool adversarial() const {
        return kind == Variant::full || kind == Variant::marn_only || kind == Variant::msmn_only || kind == Variant::fixed_paced;
    }
    [[nodiscard]] bool learned_rotation() const { return kind == Variant::full || kind == Variant::marn_only || kind == Variant::fixed_paced; }
    [[nodiscard]] bool learned_masks() const { return kind == Variant::full || kind == Variant::msmn_only || kind == Variant::fixed_paced; }
    bool operator==(const VariantTag&) const = default;
};

// Margins swept by the fixed-paced ablation.
inline const std::vector<double> kFixedPacedSweep{0.01, 0.05, 0.1, 0.3, 0.5, 1.0};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double lr_decay_factor = 0.1;
    double lr_decay_at = 2.0 / 3.0;  // fraction of epochs
    double momentum = 0.9;
    double weight_decay = 5e-4;
    losses::LossWeights weights;
    double omega0 = 0.1;
    double omega_step = 0.02;
    int omega_period = 5;
    int bands = 3;
    int code_length = 12;
    std::uint64_t seed = 0;
    VariantTag variant;
    std::vector<int> encoder_widths{32, 64, 128};
    std::vector<int> mask_layers{0, 1, 2};
    int generator_width = 8;
    int generator_residual_blocks = 3;

    void validate() const {
        if (epochs < 0) throw ConfigError("epochs must be non-negative");
        if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
        if (!(learning_rate > 0) || !(momentum >= 0 && momentum < 1) || weight_decay < 0 || !(lr_decay_factor > 0) ||
            !(lr_decay_at > 0))
            throw ConfigError("optimizer rates must be positive");
        if (!(omega0 > 0) || omega_step < 0 || omega_period < 1) throw ConfigError("margin schedule must keep omega positive");
        if (bands < 1 || bands > 9) throw ConfigError("bands must be in [1, 9]");
        if (code_length < 8) throw ConfigError("code_length must be at least 8");
        if (generator_width < 1 || generator_residual_blocks < 0) throw ConfigError("bad generator shape");
        weights.validate();
    }

    bool operator==(const TrainConfig& o) const {
        return epochs == o.epochs && batch_size == o.batch_size && learning_rate == o.learning_rate && lr_decay_factor == o.lr_decay_factor &&
               lr_decay_at == o.lr_decay_at && momentum == o.momentum && weight_decay == o.weight_decay && weights.alpha == o.weights.alpha &&
               weights.beta == o.weights.beta && weights.lambda1 == o.weights.lambda1 && weights.lambda2 == o.weights.lambda2 &&
               omega0 == o.omega0 && omega_step == o.omega_step && omega_period == o.omega_period && bands == o.bands &&
               code_length == o.code_length && seed == o.seed && variant == o.variant && encoder_widths == o.encoder_widths &&
               mask_layers == o.mask_layers && generator_width == o.generator_width && generator_residual_blocks == o.generator_residual_blocks;
    }
};

// omega(e) = omega0 + step * floor(e / period)
inline double margin_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw ParameterError("epoch must be non-negative");
    return cfg.omega0 + cfg.omega_step * static_cast<double>(epoch / cfg.omega_period);
}

inline double learning_rate_at(int epoch, const TrainConfig& cfg) {
    const int decay_epoch = static_cast<int>(std::floor(cfg.lr_decay_at * cfg.epochs));
    return epoch >= decay_epoch ? cfg.learning_rate * cfg.lr_decay_factor : cfg.learning_rate;
}

// ---- ablation baselines --------------------------------------------------------

// Angles drawn uniformly from +/-[10(n-1), 10n] per band, band-major [bands*N].
template <typename T>
Tensor<T> baseline_random_rotate(int n_images, int bands, Rng& rng) {
    Tensor<T> out({bands * n_images});
    for (int b = 0; b < bands; ++b)
        for (int i = 0; i < n_images; ++i) {
            const double mag = rng.uniform(anet::kBandWidthDeg * b, anet::kBandWidthDeg * (b + 1));
            out[static_cast<std::size_t>(b) * n_images + i] = static_cast<T>(rng.coin() ? mag : -mag);
        }
    return out;
}

// Post-activation concentration of the random-mask baseline: 90% of values
// within [-0.1, 0.1] (the multiplicative gate within [0, 0.1]).
inline constexpr double kRandomMaskInnerFraction = 0.9;
inline constexpr double kRandomMaskInnerBound = 0.1;

namespace detail {
// Draw in (lo, hi) with the inner-band concentration above.
inline double concentrated_draw(Rng& rng, double lo, double hi) {
    const double a = std::max(lo, -kRandomMaskInnerBound), b = std::min(hi, kRandomMaskInnerBound);
    if (rng.uniform() < kRandomMaskInnerFraction) return rng.uniform(a, b);
    const double left = a - lo, right = hi - b;
    const double u = rng.uniform(0.0, left + right);
    return u < left ? lo + u : b + (u - left);
}
}  // namespace detail

// Raw masks whose activations follow the baseline distribution: tanh(am) in
// (-1, 1) and the gate sigmoid(pm) in (0, 1). Values are clipped a hair inside
// the open ranges so the raw values stay finite.
template <typename T>
anet::MaskPair<T> baseline_random_mask(std::vector<int> shape, int layer, Rng& rng) {
    constexpr double edge = 1e-6;
    Tensor<T> am(shape), pm(shape);
    for (auto& v : am.vec()) {
        const double a = std::clamp(detail::concentrated_draw(rng, -1.0, 1.0), -1.0 + edge, 1.0 - edge);
        v = static_cast<T>(std::atanh(a));
    }
    for (auto& v : pm.vec()) {
        const double g = std::clamp(detail::concentrated_draw(rng, 0.0, 1.0), edge, 1.0 - edge);
        v = static_cast<T>(std::log(g / (1.0 - g)));
    }
    return {ag::constant(std::move(am)), ag::constant(std::move(pm)), layer};
}

// ---- optimizer -------------------------------------------------------------------

// SGD with momentum and L2 weight decay: v = m v + (g + wd p); p -= lr v.
template <typename T>
class Sgd {
public:
    Sgd() = default;
    explicit Sgd(const nn::ParamSet<T>& ps) {
        for (const auto& [_, v] : ps.items()) velocity_.emplace_back(v.value().shape());
    }

    void step(nn::ParamSet<T>& ps, double lr, double momentum, double weight_decay) {
        auto& items = ps.items();
        for (std::size_t p = 0; p < items.size(); ++p) {
            auto& param = items[p].second;
            auto& value = param.mutable_value();
            const auto& grad = param.grad();
            auto& vel = velocity_[p];
            for (std::size_t i = 0; i < value.size(); ++i) {
                const T g = grad[i] + static_cast<T>(weight_decay) * value[i];
                vel[i] = static_cast<T>(momentum) * vel[i] + g;
                value[i] -= static_cast<T>(lr) * vel[i];
            }
        }
    }

    std::vector<Tensor<T>>& velocity() { return velocity_; }
    [[nodiscard]] const std::vector<Tensor<T>>& velocity() const { return velocity_; }

private:
    std::vector<Tensor<T>> velocity_;
};

// ---- training loop ---------------------------------------------------------------

enum class UpdateKind : char { anet = 'A', hnet = 'H' };

struct EpochMetrics {
    int epoch = 0;
    double omega = 0;
    double anet_self_paced = 0;
    double anet_semantic = 0;
    double anet_quantization = 0;
    double anet_total = 0;
    double hnet_semantic = 0;
    double hnet_consistent = 0;
    double hnet_quantization = 0;
    double hnet_total = 0;
    double wall_time_s = 0;
};

inline std::string metrics_csv_header() {
    return "epoch,omega,anet_self_paced,anet_semantic,anet_quantization,anet_total,hnet_semantic,hnet_consistent,hnet_quantization,hnet_total,wall_time_s";
}

inline std::string metrics_csv_row(const EpochMetrics& m) {
    std::ostringstream os;
    os.precision(17);
    os << m.epoch << ',' << m.omega << ',' << m.anet_self_paced << ',' << m.anet_semantic << ',' << m.anet_quantization << ',' << m.anet_total
       << ',' << m.hnet_semantic << ',' << m.hnet_consistent << ',' << m.hnet_quantization << ',' << m.hnet_total << ',';
    os.precision(6);
    os << m.wall_time_s;
    return os.str();
}

inline hnet::EncoderSpec encoder_spec(const TrainConfig& cfg, const data::Dataset& ds) {
    hnet::EncoderSpec s;
    s.image_channels = ds.channels;
    s.image_size = ds.height;
    s.widths = cfg.encoder_widths;
    s.code_length = cfg.code_length;
    s.mask_layers = cfg.mask_layers;
    if (ds.height != ds.width) throw ConfigError("encoder expects square images");
    return s;
}

inline anet::ANetSpec anet_spec(const TrainConfig& cfg, const hnet::EncoderSpec& enc) {
    anet::ANetSpec s;
    s.image_channels = enc.image_channels;
    s.bands = cfg.bands;
    s.mask_layers = cfg.mask_layers;
    s.layer_channels = enc.layer_channels();
    s.generator = {cfg.generator_width, cfg.generator_residual_blocks};
    s.use_marn = cfg.variant.learned_rotation();
    s.use_msmn = cfg.variant.learned_masks();
    return s;
}

inline constexpr std::size_t kCalibrationImages = 256;

template <typename T = float>
class Trainer {
public:
    // `train_set` is the training view: unlabeled members carry no class ids.
    Trainer(TrainConfig cfg, data::Dataset train_set)
        : cfg_(std::move(cfg)), data_(std::move(train_set)) {
        cfg_.validate();
        if (data_.size() == 0) throw ConfigError("empty training set");
        const auto enc = encoder_spec(cfg_, data_);
        Rng master(cfg_.seed);
        hnet_ = hnet::Encoder<T>(enc, master.derive("hnet"));
        anet_ = anet::ANet<T>(anet_spec(cfg_, enc), master.derive("anet"));
        calibrate(master.derive("calibrate"));
        sgd_h_ = Sgd<T>(hnet_.params());
        sgd_a_ = Sgd<T>(anet_.params());
        rng_ = master.derive("train");
    }

    [[nodiscard]] const TrainConfig& config() const { return cfg_; }
    [[nodiscard]] const data::Dataset& dataset() const { return data_; }
    hnet::Encoder<T>& hnet() { return hnet_; }
    [[nodiscard]] const hnet::Encoder<T>& hnet() const { return hnet_; }
    anet::ANet<T>& anet() { return anet_; }
    [[nodiscard]] int epoch() const { return epoch_; }
    [[nodiscard]] bool finished() const { return epoch_ >= cfg_.epochs; }
    [[nodiscard]] const std::vector<EpochMetrics>& history() const { return history_; }

    // Hooks: after every optimizer step, and before every batch (dataset
    // positions of the batch members).
    std::function<void(UpdateKind)> on_update;
    std::function<void(const std::vector<int>&)> on_batch;
    // Written when a non-finite loss aborts training.
    std::string dump_path;

    // The omega in force for the current epoch.
    [[nodiscard]] double current_omega() const {
        return cfg_.variant.kind == Variant::fixed_paced ? cfg_.variant.fixed_omega : margin_schedule(epoch_, cfg_);
    }

    EpochMetrics train_epoch() {
        const auto t0 = std::chrono::steady_clock::now();
        EpochMetrics m;
        m.epoch = epoch_;
        m.omega = current_omega();
        const double lr = learning_rate_at(epoch_, cfg_);

        std::vector<int> order(data_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        rng_.shuffle(order.begin(), order.end());

        int batches = 0, a_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch_size));
            std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
            if (on_batch) on_batch(idx);
            const auto batch = data::assemble_batch(idx, data_);
            const Var<T> x = ag::constant(data::stack<T>(data_, idx));
            if (cfg_.variant.adversarial()) {
                const auto a = anet_step(x, batch, m.omega, lr);
                m.anet_self_paced += a.self_paced;
                m.anet_semantic += a.semantic;
                m.anet_quantization += a.quantization;
                m.anet_total += a.value;
                ++a_batches;
            }
            const auto h = hnet_step(x, batch, lr);
            m.hnet_semantic += h.semantic;
            m.hnet_consistent += h.consistent;
            m.hnet_quantization += h.quantization;
            m.hnet_total += h.value;
            ++batches;
        }
        if (a_batches) {
            m.anet_self_paced /= a_batches;
            m.anet_semantic /= a_batches;
            m.anet_quantization /= a_batches;
            m.anet_total /= a_batches;
        }
        if (batches) {
            m.hnet_semantic /= batches;
            m.hnet_consistent /= batches;
            m.hnet_quantization /= batches;
            m.hnet_total /= batches;
        }
        ++epoch_;
        m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history_.push_back(m);
        return m;
    }

    // Runs the remaining epochs; `after_epoch` may e.g. write logs/checkpoints.
    void run(const std::function<void(const EpochMetrics&)>& after_epoch = {}) {
        while (!finished()) {
            const auto m = train_epoch();
            if (after_epoch) after_epoch(m);
        }
    }

    // Relaxed codes [n, k] of dataset images, H-Net only.
    Tensor<T> encode(const data::Dataset& ds, const std::vector<int>& indices, int chunk = 128) const {
        return encode_with(hnet_, ds, indices, chunk);
    }

    static Tensor<T> encode_with(const hnet::Encoder<T>& enc, const data::Dataset& ds, const std::vector<int>& indices, int chunk = 128) {
        const int k = enc.code_length();
        Tensor<T> out({static_cast<int>(indices.size()), k});
        for (std::size_t s = 0; s < indices.size(); s += chunk) {
            const std::size_t e = std::min(indices.size(), s + static_cast<std::size_t>(chunk));
            std::vector<int> part(indices.begin() + static_cast<std::ptrdiff_t>(s), indices.begin() + static_cast<std::ptrdiff_t>(e));
            const auto codes = enc.encode(ag::constant(data::stack<T>(ds, part))).value();
            std::copy(codes.vec().begin(), codes.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(s * k));
        }
        return out;
    }

    // ---- state access for checkpoints ----
    Sgd<T>& sgd_hnet() { return sgd_h_; }
    Sgd<T>& sgd_anet() { return sgd_a_; }
    Rng& rng() { return rng_; }
    void set_epoch(int e) { epoch_ = e; }
    std::vector<EpochMetrics>& mutable_history() { return history_; }

private:
    losses::Objective<T> anet_step(const Var<T>& x, const data::PairBatch& batch, double omega, double lr) {
        hnet_.params().set_trainable(false);
        anet_.params().set_trainable(true);
        anet_.params().zero_grad();

        const Var<T> mu = hnet_.encode(x);
        Var<T> y = ag::tile_batch(x, cfg_.bands);
        if (cfg_.variant.learned_rotation()) y = ag::rotate(y, checked_angles(x));
        hnet::MaskSource<T> masks;
        if (cfg_.variant.learned_masks())
            masks = [this](int layer, const Var<T>& f) -> std::optional<anet::MaskPair<T>> { return anet_.msmn_forward(f, layer); };
        const Var<T> hard = hnet_.encode_hard(y, masks);

        const auto mode = cfg_.variant.kind == Variant::fixed_paced ? losses::MarginMode::fixed : losses::MarginMode::self_paced;
        auto obj = losses::anet_objective(mu.value(), hard.value(), batch.pairs, cfg_.weights, static_cast<T>(omega), mode);
        guard(obj.value, "A-Net objective");
        ag::backward(ag::external_scalar(obj.value, {hard}, {obj.grad_hard}));
        sgd_a_.step(anet_.params(), lr, cfg_.momentum, cfg_.weight_decay);
        guard_params(anet_.params(), "A-Net parameters");
        anet_.params().set_trainable(false);
        if (on_update) on_update(UpdateKind::anet);
        return obj;
    }

    losses::Objective<T> hnet_step(const Var<T>& x, const data::PairBatch& batch, double lr) {
        anet_.params().set_trainable(false);
        hnet_.params().set_trainable(true);
        hnet_.params().zero_grad();
        const int n = x.dim(0);
        const auto& kind = cfg_.variant.kind;

        const Var<T> mu = hnet_.encode(x);
        Var<T> hard;
        if (kind != Variant::no_adversarial) {
            Var<T> y;
            if (cfg_.variant.learned_rotation()) {
                y = ag::rotate(ag::tile_batch(x, cfg_.bands), ag::detach(checked_angles(x)));
            } else if (kind == Variant::random_rotate) {
                y = ag::rotate(ag::tile_batch(x, cfg_.bands), ag::constant(baseline_random_rotate<T>(n, cfg_.bands, rng_)));
            } else {
                y = ag::tile_batch(x, cfg_.bands);
            }
            hnet::MaskSource<T> masks;
            if (cfg_.variant.learned_masks()) {
                masks = [this](int layer, const Var<T>& f) -> std::optional<anet::MaskPair<T>> {
                    auto m = anet_.msmn_forward(ag::detach(f), layer);
                    return anet::MaskPair<T>{ag::detach(m.am_raw), ag::detach(m.pm_raw), layer};
                };
            } else if (kind == Variant::random_mask) {
                masks = [this](int layer, const Var<T>& f) -> std::optional<anet::MaskPair<T>> {
                    return baseline_random_mask<T>({f.dim(0), 1, f.dim(2), f.dim(3)}, layer, rng_);
                };
            }
            hard = hnet_.encode_hard(y, masks);
        }
        const Tensor<T> hard_v = hard.defined() ? hard.value() : Tensor<T>({0, cfg_.code_length});
        auto obj = losses::hnet_objective(mu.value(), hard_v, batch.pairs, cfg_.weights);
        guard(obj.value, "H-Net objective");
        if (hard.defined()) ag::backward(ag::external_scalar(obj.value, {mu, hard}, {obj.grad_mu, obj.grad_hard}));
        else ag::backward(ag::external_scalar(obj.value, {mu}, {obj.grad_mu}));
        sgd_h_.step(hnet_.params(), lr, cfg_.momentum, cfg_.weight_decay);
        guard_params(hnet_.params(), "H-Net parameters");
        hnet_.params().set_trainable(false);
        if (on_update) on_update(UpdateKind::hnet);
        return obj;
    }

    // Up to kCalibrationImages training images, drawn without replacement.
    void calibrate(Rng rng) {
        std::vector<int> idx(data_.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        rng.shuffle(idx.begin(), idx.end());
        idx.resize(std::min<std::size_t>(idx.size(), kCalibrationImages));
        if (idx.size() < 2) return;
        hnet_.calibrate(ag::constant(data::stack<T>(data_, idx)));
    }

    Var<T> checked_angles(const Var<T>& x) {
        Var<T> theta = anet_.angles(x);
        for (T t : theta.value().vec())
            if (!std::isfinite(static_cast<double>(t))) guard(t, "MARN angle");
        return theta;
    }

    // A finite loss can still produce a step that overflows the weights; the
    // next forward pass would then fail somewhere less informative.
    void guard_params(const nn::ParamSet<T>& ps, const char* what) {
        for (const auto& [_, v] : ps.items())
            for (T x : v.value().vec())
                if (!std::isfinite(static_cast<double>(x))) return guard(std::numeric_limits<T>::quiet_NaN(), what);
    }

    void guard(T value, const char* what) {
        if (std::isfinite(static_cast<double>(value))) return;
        std::string where;
        if (!dump_path.empty() && dump_hook) {
            dump_hook(dump_path);
            where = dump_path;
        }
        throw DivergenceError(std::string(what) + " is not finite at epoch " + std::to_string(epoch_) +
                                  (where.empty() ? "" : "; state dumped to " + where),
                              where);
    }

public:
    // Installed by the checkpoint layer to write a state dump.
    std::function<void(const std::string&)> dump_hook;

private:
    TrainConfig cfg_;
    data::Dataset data_;
    hnet::Encoder<T> hnet_;
    anet::ANet<T> anet_;
    Sgd<T> sgd_h_, sgd_a_;
    Rng rng_;
    int epoch_ = 0;
    std::vector<EpochMetrics> history_;
};

// Encodes queries and database with the H-Net and packs the sign codes.
template <typename T>
retrieval::RetrievalRun make_run(const hnet::Encoder<T>& enc, const data::Dataset& ds, const std::vector<int>& queries,
                                 const std::vector<int>& database) {
    retrieval::RetrievalRun run;
    const int k = enc.code_length();
    const auto qc = Trainer<T>::encode_with(enc, ds, queries);
    const auto dc = Trainer<T>::encode_with(enc, ds, database);
    run.queries = retrieval::PackedCodes::from_relaxed<T>(qc.span(), k);
    run.database = retrieval::PackedCodes::from_relaxed<T>(dc.span(), k);
    for (int i : queries) run.query_labels.push_back(ds.images.at(i).class_ids);
    for (int i : database) run.database_labels.push_back(ds.images.at(i).class_ids);
    return run;
}

}  // namespace ssah::train
