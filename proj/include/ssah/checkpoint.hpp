#pragma once

// Single-file training checkpoints.
//
// Little-endian layout:
//   bytes 0..7  magic "SSAHCKPT"
//   u32         format version (1)
//   u32         element size of stored tensors (4 = float, 8 = double)
//   str         experiment config JSON            (str = u64 length + bytes)
//   i32         next epoch
//   4 x u64     RNG words, u8 has_spare, f64 spare
//   blocks      H-Net params, A-Net params, H-Net velocity, A-Net velocity
//               (block = u32 count, then per tensor: str name, u32 rank,
//                rank x i32 dims, values)
//   u32         history rows, then 11 f64 per row (epoch first)

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssah/config.hpp"
#include "ssah/trainer.hpp"

namespace ssah::ckpt {

inline constexpr char kMagic[8] = {'S', 'S', 'A', 'H', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;  // widened on read; narrowed back on restore
};

struct Checkpoint {
    std::uint32_t element_size = 4;
    std::string config_json;
    int epoch = 0;
    Rng::State rng{};
    std::vector<NamedTensor> hnet, anet, velocity_hnet, velocity_anet;
    std::vector<train::EpochMetrics> history;

    [[nodiscard]] config::Experiment experiment() const { return config::parse_experiment(config_json); }
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

class Writer {
public:
    explicit Writer(std::ostream& os) : os_(os) {}
    void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    template <typename U>
    void le(U v) {
        unsigned char b[sizeof(U)];
        for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
        bytes(b, sizeof(U));
    }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
    void str(const std::string& s) {
        le<std::uint64_t>(s.size());
        bytes(s.data(), s.size());
    }

private:
    std::ostream& os_;
};

class Reader {
public:
    Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
    void bytes(void* p, std::size_t n) {
        if (!is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n))) throw CheckpointError(path_ + ": truncated checkpoint");
    }
    template <typename U>
    U le() {
        unsigned char b[sizeof(U)];
        bytes(b, sizeof(U));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return static_cast<U>(v);
    }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
    float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
    std::string str(std::size_t limit = std::size_t{1} << 30) {
        const auto n = le<std::uint64_t>();
        if (n > limit) throw CheckpointError(path_ + ": implausible string length");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

private:
    std::istream& is_;
    std::string path_;
};

template <typename T>
void write_tensor(Writer& w, const std::string& name, const Tensor<T>& t) {
    w.str(name);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) w.le<std::int32_t>(d);
    for (T v : t.vec()) {
        if constexpr (sizeof(T) == 4) w.f32(static_cast<float>(v));
        else w.f64(static_cast<double>(v));
    }
}

inline NamedTensor read_tensor(Reader& r, std::uint32_t element_size) {
    NamedTensor t;
    t.name = r.str(4096);
    const auto rank = r.le<std::uint32_t>();
    if (rank > 8) throw CheckpointError("implausible tensor rank in checkpoint");
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const int d = r.le<std::int32_t>();
        if (d < 0) throw CheckpointError("negative tensor dimension in checkpoint");
        t.shape.push_back(d);
        n *= static_cast<std::size_t>(d);
    }
    t.values.resize(n);
    for (auto& v : t.values) v = element_size == 4 ? static_cast<double>(r.f32()) : r.f64();
    return t;
}

template <typename T>
void write_params(Writer& w, const nn::ParamSet<T>& ps) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(ps.items().size()));
    for (const auto& [name, v] : ps.items()) write_tensor(w, name, v.value());
}

template <typename T>
void write_velocity(Writer& w, const nn::ParamSet<T>& ps, const std::vector<Tensor<T>>& vel) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(vel.size()));
    for (std::size_t i = 0; i < vel.size(); ++i) write_tensor(w, ps.items().at(i).first, vel[i]);
}

inline std::vector<NamedTensor> read_block(Reader& r, std::uint32_t element_size) {
    const auto n = r.le<std::uint32_t>();
    if (n > 100000) throw CheckpointError("implausible tensor count in checkpoint");
    std::vector<NamedTensor> out;
    out.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(read_tensor(r, element_size));
    return out;
}

template <typename T>
void fill(Tensor<T>& dst, const NamedTensor& src, const std::string& expect_name) {
    if (src.name != expect_name) throw CheckpointError("checkpoint tensor '" + src.name + "' where '" + expect_name + "' was expected");
    if (src.shape != dst.shape()) throw CheckpointError("checkpoint tensor '" + src.name + "' has a different shape");
    for (std::size_t i = 0; i < src.values.size(); ++i) dst[i] = static_cast<T>(src.values[i]);
}

template <typename T>
void restore_params(nn::ParamSet<T>& ps, const std::vector<NamedTensor>& block, const char* what) {
    if (block.size() != ps.items().size()) throw CheckpointError(std::string("checkpoint ") + what + " parameter count does not match the model");
    for (std::size_t i = 0; i < block.size(); ++i) fill(ps.items()[i].second.mutable_value(), block[i], ps.items()[i].first);
}

template <typename T>
void restore_velocity(const nn::ParamSet<T>& ps, std::vector<Tensor<T>>& vel, const std::vector<NamedTensor>& block, const char* what) {
    if (block.size() != vel.size()) throw CheckpointError(std::string("checkpoint ") + what + " optimizer state does not match the model");
    for (std::size_t i = 0; i < block.size(); ++i) fill(vel[i], block[i], ps.items()[i].first);
}

inline void metrics_row(Writer& w, const train::EpochMetrics& m) {
    for (double v : {static_cast<double>(m.epoch), m.omega, m.anet_self_paced, m.anet_semantic, m.anet_quantization, m.anet_total,
                     m.hnet_semantic, m.hnet_consistent, m.hnet_quantization, m.hnet_total, m.wall_time_s})
        w.f64(v);
}

inline train::EpochMetrics metrics_row(Reader& r) {
    train::EpochMetrics m;
    m.epoch = static_cast<int>(r.f64());
    for (double* p : {&m.omega, &m.anet_self_paced, &m.anet_semantic, &m.anet_quantization, &m.anet_total, &m.hnet_semantic,
                      &m.hnet_consistent, &m.hnet_quantization, &m.hnet_total, &m.wall_time_s})
        *p = r.f64();
    return m;
}

}  // namespace detail

template <typename T>
void save(const std::string& path, const config::Experiment& exp, train::Trainer<T>& tr) {
    // Write to a sibling file first so an interrupted save never leaves a
    // truncated checkpoint behind.
    const std::string tmp = path + ".partial";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw CheckpointError("cannot write " + tmp);
        detail::Writer w(os);
        w.bytes(kMagic, 8);
        w.le<std::uint32_t>(kFormatVersion);
        w.le<std::uint32_t>(sizeof(T));
        w.str(config::dump(exp));
        w.le<std::int32_t>(tr.epoch());
        const auto st = tr.rng().state();
        for (auto word : st.words) w.le<std::uint64_t>(word);
        w.le<std::uint8_t>(st.has_spare ? 1 : 0);
        w.f64(st.spare);
        detail::write_params(w, tr.hnet().params());
        detail::write_params(w, tr.anet().params());
        detail::write_velocity(w, tr.hnet().params(), tr.sgd_hnet().velocity());
        detail::write_velocity(w, tr.anet().params(), tr.sgd_anet().velocity());
        w.le<std::uint32_t>(static_cast<std::uint32_t>(tr.history().size()));
        for (const auto& m : tr.history()) detail::metrics_row(w, m);
        if (!os) throw CheckpointError("failed writing " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into place at " + path);
}

inline Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot read " + path);
    detail::Reader r(is, path);
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError(path + ": not a checkpoint");
    if (r.le<std::uint32_t>() != kFormatVersion) throw CheckpointError(path + ": unsupported checkpoint version");
    Checkpoint c;
    c.element_size = r.le<std::uint32_t>();
    if (c.element_size != 4 && c.element_size != 8) throw CheckpointError(path + ": unsupported element size");
    c.config_json = r.str();
    c.epoch = r.le<std::int32_t>();
    for (auto& word : c.rng.words) word = r.le<std::uint64_t>();
    c.rng.has_spare = r.le<std::uint8_t>() != 0;
    c.rng.spare = r.f64();
    c.hnet = detail::read_block(r, c.element_size);
    c.anet = detail::read_block(r, c.element_size);
    c.velocity_hnet = detail::read_block(r, c.element_size);
    c.velocity_anet = detail::read_block(r, c.element_size);
    const auto rows = r.le<std::uint32_t>();
    for (std::uint32_t i = 0; i < rows; ++i) c.history.push_back(detail::metrics_row(r));
    return c;
}

// Puts a trainer (built from the same experiment) into the saved state.
template <typename T>
void restore(train::Trainer<T>& tr, const Checkpoint& c) {
    if (c.element_size != sizeof(T)) throw CheckpointError("checkpoint precision differs from the trainer's");
    detail::restore_params(tr.hnet().params(), c.hnet, "H-Net");
    detail::restore_params(tr.anet().params(), c.anet, "A-Net");
    detail::restore_velocity(tr.hnet().params(), tr.sgd_hnet().velocity(), c.velocity_hnet, "H-Net");
    detail::restore_velocity(tr.anet().params(), tr.sgd_anet().velocity(), c.velocity_anet, "A-Net");
    tr.rng().set_state(c.rng);
    tr.set_epoch(c.epoch);
    tr.mutable_history() = c.history;
}

// The H-Net alone, as used for evaluation: the A-Net block is never read into
// a model.
template <typename T = float>
hnet::Encoder<T> load_hnet(const Checkpoint& c, const hnet::EncoderSpec& spec) {
    hnet::Encoder<T> enc(spec, Rng(0));
    detail::restore_params(enc.params(), c.hnet, "H-Net");
    return enc;
}

// Installs a divergence hook that dumps the trainer state to `path`.
template <typename T>
void install_dump(train::Trainer<T>& tr, const config::Experiment& exp, const std::string& path) {
    tr.dump_path = path;
    tr.dump_hook = [&tr, exp](const std::string& p) { save(p, exp, tr); };
}

}  // namespace ssah::ckpt
