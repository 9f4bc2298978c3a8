#pragma once

// Hamming-ranking retrieval evaluation over bit-packed codes.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ssah/codes.hpp"
#include "ssah/data.hpp"
#include "ssah/errors.hpp"

namespace ssah::retrieval {

// Sign bits packed 64 per word; bit c of code i is 1 when component c is +1.
class PackedCodes {
public:
    PackedCodes() = default;
    explicit PackedCodes(int k) : k_(k), words_((k + 63) / 64) {
        if (k <= 0) throw DimensionError("code length must be positive");
    }

    template <typename T>
    static PackedCodes from_relaxed(std::span<const T> mu, int k) {
        if (k <= 0 || mu.size() % static_cast<std::size_t>(k) != 0) throw DimensionError("relaxed codes do not divide into rows of k");
        PackedCodes out(k);
        const std::size_t n = mu.size() / k;
        for (std::size_t i = 0; i < n; ++i) out.push_back(codes::binarize(mu.subspan(i * k, k)));
        return out;
    }

    void push_back(std::span<const std::int8_t> bits) {
        if (bits.size() != static_cast<std::size_t>(k_)) throw DimensionError("code length mismatch");
        const std::size_t base = data_.size();
        data_.resize(base + words_, 0);
        for (int c = 0; c < k_; ++c)
            if (bits[c] > 0) data_[base + c / 64] |= std::uint64_t{1} << (c % 64);
    }

    [[nodiscard]] int k() const { return k_; }
    [[nodiscard]] int words() const { return words_; }
    [[nodiscard]] std::size_t size() const { return words_ ? data_.size() / words_ : 0; }
    [[nodiscard]] std::span<const std::uint64_t> row(std::size_t i) const { return {data_.data() + i * words_, static_cast<std::size_t>(words_)}; }
    [[nodiscard]] const std::vector<std::uint64_t>& raw() const { return data_; }
    std::vector<std::uint64_t>& raw() { return data_; }

    [[nodiscard]] std::vector<std::int8_t> unpack(std::size_t i) const {
        std::vector<std::int8_t> out(k_);
        const auto r = row(i);
        for (int c = 0; c < k_; ++c) out[c] = ((r[c / 64] >> (c % 64)) & 1) ? 1 : -1;
        return out;
    }

    [[nodiscard]] int distance(std::size_t i, const PackedCodes& other, std::size_t j) const {
        const auto a = row(i), b = other.row(j);
        int d = 0;
        for (int w = 0; w < words_; ++w) d += std::popcount(a[w] ^ b[w]);
        return d;
    }

private:
    int k_ = 0;
    int words_ = 0;
    std::vector<std::uint64_t> data_;
};

struct RetrievalRun {
    PackedCodes database;
    std::vector<std::vector<int>> database_labels;
    PackedCodes queries;
    std::vector<std::vector<int>> query_labels;

    void validate() const {
        if (database.size() == 0 || queries.size() == 0) throw DimensionError("retrieval needs nonempty database and queries");
        if (database.k() != queries.k()) throw DimensionError("database and query code lengths differ");
        if (database_labels.size() != database.size() || query_labels.size() != queries.size())
            throw DimensionError("one label set per code");
    }
    [[nodiscard]] int k() const { return database.k(); }
};

// Database order by ascending Hamming distance, ties by ascending index
// (a counting sort over the k + 1 possible distances).
inline std::vector<int> rank_database(const PackedCodes& queries, std::size_t q, const PackedCodes& db) {
    const int k = db.k();
    std::vector<int> dist(db.size());
    std::vector<int> bucket(static_cast<std::size_t>(k) + 2, 0);
    for (std::size_t i = 0; i < db.size(); ++i) {
        dist[i] = queries.distance(q, db, i);
        ++bucket[dist[i] + 1];
    }
    for (int r = 0; r <= k; ++r) bucket[r + 1] += bucket[r];
    std::vector<int> order(db.size());
    for (std::size_t i = 0; i < db.size(); ++i) order[bucket[dist[i]]++] = static_cast<int>(i);
    return order;
}

// AP over the top `cutoff` ranks: mean over relevant hits r of precision@r.
// Returns 0 when the top `cutoff` holds no relevant item.
inline double average_precision(std::span<const std::uint8_t> relevance, std::size_t cutoff) {
    if (relevance.empty()) throw DimensionError("average_precision of an empty ranking");
    if (cutoff > relevance.size()) throw DimensionError("cutoff exceeds ranking length");
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t r = 0; r < cutoff; ++r) {
        if (!relevance[r]) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    return hits ? sum / static_cast<double>(hits) : 0.0;
}

namespace detail {
inline std::vector<std::uint8_t> relevance_in_order(const RetrievalRun& run, std::size_t q, const std::vector<int>& order) {
    std::vector<std::uint8_t> rel(order.size());
    for (std::size_t r = 0; r < order.size(); ++r)
        rel[r] = data::classes_intersect(run.query_labels[q], run.database_labels[order[r]]) ? 1 : 0;
    return rel;
}
}  // namespace detail

// cutoff 0 = the whole database.
inline double mean_average_precision(const RetrievalRun& run, std::size_t cutoff = 0) {
    run.validate();
    const std::size_t r = cutoff == 0 ? run.database.size() : std::min(cutoff, run.database.size());
    double total = 0.0;
    for (std::size_t q = 0; q < run.queries.size(); ++q) {
        const auto order = rank_database(run.queries, q, run.database);
        total += average_precision(detail::relevance_in_order(run, q, order), r);
    }
    return total / static_cast<double>(run.queries.size());
}

// Mean precision of the top N, for each N in `ns` (clamped to the database size).
inline std::vector<double> precision_at_n(const RetrievalRun& run, const std::vector<std::size_t>& ns) {
    run.validate();
    std::vector<double> out(ns.size(), 0.0);
    for (std::size_t q = 0; q < run.queries.size(); ++q) {
        const auto rel = detail::relevance_in_order(run, q, rank_database(run.queries, q, run.database));
        std::vector<std::size_t> prefix(rel.size() + 1, 0);
        for (std::size_t r = 0; r < rel.size(); ++r) prefix[r + 1] = prefix[r] + rel[r];
        for (std::size_t t = 0; t < ns.size(); ++t) {
            const std::size_t n = std::min(ns[t], rel.size());
            if (n > 0) out[t] += static_cast<double>(prefix[n]) / static_cast<double>(n);
        }
    }
    for (auto& v : out) v /= static_cast<double>(run.queries.size());
    return out;
}

struct PrPoint {
    int radius;
    double precision;
    double recall;
};

// Precision and recall of Hamming-ball retrieval at every radius 0..k,
// averaged over queries. An empty ball has precision 0; a query without any
// relevant database item has recall 0.
inline std::vector<PrPoint> pr_curve(const RetrievalRun& run) {
    run.validate();
    const int k = run.k();
    std::vector<PrPoint> out(static_cast<std::size_t>(k) + 1);
    for (int r = 0; r <= k; ++r) out[r] = {r, 0.0, 0.0};
    for (std::size_t q = 0; q < run.queries.size(); ++q) {
        std::vector<std::size_t> ret(static_cast<std::size_t>(k) + 1, 0), rel(static_cast<std::size_t>(k) + 1, 0);
        std::size_t total_rel = 0;
        for (std::size_t i = 0; i < run.database.size(); ++i) {
            const int d = run.queries.distance(q, run.database, i);
            const bool hit = data::classes_intersect(run.query_labels[q], run.database_labels[i]);
            ++ret[d];
            rel[d] += hit;
            total_rel += hit;
        }
        std::size_t cum_ret = 0, cum_rel = 0;
        for (int r = 0; r <= k; ++r) {
            cum_ret += ret[r];
            cum_rel += rel[r];
            if (cum_ret) out[r].precision += static_cast<double>(cum_rel) / static_cast<double>(cum_ret);
            if (total_rel) out[r].recall += static_cast<double>(cum_rel) / static_cast<double>(total_rel);
        }
    }
    for (auto& p : out) {
        p.precision /= static_cast<double>(run.queries.size());
        p.recall /= static_cast<double>(run.queries.size());
    }
    return out;
}

// ---- code dump -----------------------------------------------------------------
//
// Little-endian layout:
//   bytes 0..7   magic "SSAHCODE"
//   u32          format version (1)
//   u32          k
//   u64          count
//   u32          words per code, ceil(k / 64)
//   count * words u64, row-major, bit c of a row = (component c is +1)

inline constexpr char kCodeMagic[8] = {'S', 'S', 'A', 'H', 'C', 'O', 'D', 'E'};
inline constexpr std::uint32_t kCodeFormatVersion = 1;

namespace detail {
template <typename U>
void put_le(std::ostream& os, U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), sizeof(U));
}
template <typename U>
U get_le(std::istream& is) {
    unsigned char b[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) throw std::runtime_error("truncated code file");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return static_cast<U>(v);
}
}  // namespace detail

inline void write_codes(const std::string& path, const PackedCodes& codes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os.write(kCodeMagic, 8);
    detail::put_le<std::uint32_t>(os, kCodeFormatVersion);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(codes.k()));
    detail::put_le<std::uint64_t>(os, codes.size());
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(codes.words()));
    for (std::uint64_t w : codes.raw()) detail::put_le<std::uint64_t>(os, w);
}

inline PackedCodes read_codes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kCodeMagic, 8) != 0) throw std::runtime_error(path + ": not a code file");
    if (detail::get_le<std::uint32_t>(is) != kCodeFormatVersion) throw std::runtime_error(path + ": unsupported version");
    const auto k = detail::get_le<std::uint32_t>(is);
    const auto count = detail::get_le<std::uint64_t>(is);
    const auto words = detail::get_le<std::uint32_t>(is);
    PackedCodes out(static_cast<int>(k));
    if (static_cast<int>(words) != out.words()) throw std::runtime_error(path + ": word count does not match k");
    out.raw().resize(count * words);
    for (auto& w : out.raw()) w = detail::get_le<std::uint64_t>(is);
    return out;
}

}  // namespace ssah::retrieval
