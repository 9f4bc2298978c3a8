#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "oracles.hpp"
#include "ssah/autograd.hpp"
#include "ssah/data.hpp"
#include "ssah/retrieval.hpp"
#include "ssah/rng.hpp"
#include "ssah/tensor.hpp"

namespace testing_util {

using ssah::Rng;
using ssah::Tensor;

// Relaxed codes in (-1, 1), drawn like tanh outputs.
inline Tensor<double> random_codes(int rows, int k, Rng& rng) {
    Tensor<double> t({rows, k});
    for (auto& v : t.vec()) v = std::tanh(rng.normal(0.0, 1.5));
    return t;
}

inline std::vector<oracle::Code> rows_of(const Tensor<double>& t, int first, int count) {
    std::vector<oracle::Code> out;
    const int k = t.dim(1);
    for (int r = first; r < first + count; ++r) out.emplace_back(t.data() + static_cast<std::size_t>(r) * k, t.data() + static_cast<std::size_t>(r + 1) * k);
    return out;
}

inline oracle::Bands bands_of(const Tensor<double>& hard, int n) {
    oracle::Bands out;
    if (n == 0) return out;
    for (int b = 0; b < hard.dim(0) / n; ++b) out.push_back(rows_of(hard, b * n, n));
    return out;
}

// Random labeled pairs over n images where roughly `labeled_fraction` carry
// one of `classes` labels.
struct RandomBatch {
    std::vector<ssah::data::LabeledPair> pairs;
    std::vector<oracle::Pair> oracle_pairs;
};

inline RandomBatch random_pairs(int n, int classes, double labeled_fraction, Rng& rng) {
    std::vector<int> label(n, -1);
    for (auto& l : label)
        if (rng.uniform() < labeled_fraction) l = static_cast<int>(rng.below(classes));
    RandomBatch b;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (label[i] >= 0 && label[j] >= 0) {
                const int s = label[i] == label[j] ? 1 : 0;
                b.pairs.push_back({i, j, ssah::codes::pair_label_from(s)});
                b.oracle_pairs.push_back({i, j, s});
            }
    return b;
}

// Central differences of f at x, one entry at a time.
inline std::vector<double> numeric_grad(std::vector<double>& x, const std::function<double()>& f, double h) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

// max |a - b| / max(1, |b|)
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
    return worst;
}

inline std::vector<std::int8_t> to_bits(const std::vector<int>& c) { return {c.begin(), c.end()}; }

// Random +-1 codes; about a fifth of the items carry a second label.
inline oracle::Instance random_instance(Rng& rng, int n_db, int n_q, int k, int classes) {
    oracle::Instance in;
    auto code = [&] {
        std::vector<int> c(k);
        for (auto& b : c) b = rng.coin() ? 1 : -1;
        return c;
    };
    auto labels = [&] {
        std::vector<int> l{static_cast<int>(rng.below(classes))};
        if (rng.uniform() < 0.2) {
            const int extra = static_cast<int>(rng.below(classes));
            if (extra != l[0]) l.push_back(extra);
        }
        std::sort(l.begin(), l.end());
        return l;
    };
    for (int i = 0; i < n_db; ++i) {
        in.db.push_back(code());
        in.db_labels.push_back(labels());
    }
    for (int i = 0; i < n_q; ++i) {
        in.q.push_back(code());
        in.q_labels.push_back(labels());
    }
    return in;
}

inline ssah::retrieval::RetrievalRun to_run(const oracle::Instance& in, int k) {
    ssah::retrieval::RetrievalRun run;
    run.database = ssah::retrieval::PackedCodes(k);
    run.queries = ssah::retrieval::PackedCodes(k);
    for (const auto& c : in.db) run.database.push_back(to_bits(c));
    for (const auto& c : in.q) run.queries.push_back(to_bits(c));
    run.database_labels = in.db_labels;
    run.query_labels = in.q_labels;
    return run;
}

// Analytic vs central-difference gradient of <w, f(x)> w.r.t. the leaf x,
// where w is a fixed random projection. Returns the worst relative error,
// scaled by max(floor, |numeric|).
inline double graph_grad_error(const Tensor<double>& x0, const std::function<ssah::ag::Var<double>(const ssah::ag::Var<double>&)>& f,
                               double h, Rng& rng, double floor = 1.0) {
    using ssah::ag::Var;
    Var<double> leaf(x0, true);
    const Var<double> y = f(leaf);
    Tensor<double> w(y.shape());
    for (auto& v : w.vec()) v = rng.normal();
    ssah::ag::backward(ssah::ag::dot_const(y, w));
    const Tensor<double> analytic = leaf.grad();

    std::vector<double> x(x0.vec().begin(), x0.vec().end());
    auto eval = [&] {
        Tensor<double> t(x0.shape());
        std::copy(x.begin(), x.end(), t.vec().begin());
        return ssah::ag::dot_const(f(ssah::ag::constant(std::move(t))), w).value()[0];
    };
    const auto numeric = numeric_grad(x, eval, h);
    double worst = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / std::max(floor, std::abs(numeric[i])));
    return worst;
}

}  // namespace testing_util
