#pragma once

// The four CLI commands as plain functions returning exit codes, so tests can
// drive them without spawning processes.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssah/checkpoint.hpp"
#include "ssah/config.hpp"
#include "ssah/experiment.hpp"
#include "ssah/plot.hpp"

namespace ssah::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kUsageError = 2, kDiverged = 3 };

inline constexpr const char* kCheckpointName = "checkpoint.ckpt";
inline constexpr const char* kDivergenceDumpName = "diverged.ckpt";
inline constexpr const char* kMetricsName = "metrics.csv";
inline constexpr const char* kConfigSnapshotName = "config.json";

struct Streams {
    std::ostream& out = std::cout;
    std::ostream& err = std::cerr;
};

namespace detail {

inline void write_file(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot write " + p.string());
    os << text;
}

inline std::string fixed(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

// 1, 2, 5, 10, 20, 50, ... up to n, plus n itself.
inline std::vector<std::size_t> precision_ns(std::size_t n) {
    std::vector<std::size_t> out;
    for (std::size_t base = 1; base <= n; base *= 10)
        for (std::size_t m : {1, 2, 5})
            if (base * m <= n) out.push_back(base * m);
    if (out.empty() || out.back() != n) out.push_back(n);
    return out;
}

inline std::string dir_name(const train::VariantTag& v, int k, std::uint64_t seed) {
    std::string s = v.str();
    for (char& c : s)
        if (c == '(' || c == ')') c = '_';
    while (!s.empty() && s.back() == '_') s.pop_back();
    return s + "_k" + std::to_string(k) + "_s" + std::to_string(seed);
}

}  // namespace detail

// ---- train ----

inline constexpr int kUnseenSplits = 5;

inline json unseen_json(const experiment::UnseenReport& r) {
    json splits = json::array();
    for (const auto& s : r.splits)
        splits.push_back({{"known_classes", s.known_classes}, {"unseen_classes", s.unseen_classes}, {"mAP", s.map}, {"batches_checked", s.batches_checked}});
    return {{"splits", splits}, {"mAP_mean", r.map.mean}, {"mAP_std", r.map.stddev}};
}

inline int run_unseen(const config::Experiment& e, const fs::path& out, Streams io) {
    const auto report = experiment::evaluate_unseen<float>(e, kUnseenSplits, [&](int s, const experiment::UnseenSplitResult& r) {
        io.out << "split " << s << "  unseen classes";
        for (int c : r.unseen_classes) io.out << ' ' << c;
        io.out << "  mAP " << detail::fixed(r.map) << '\n';
    });
    detail::write_file(out / "unseen.json", unseen_json(report).dump(2) + "\n");
    io.out << "unseen-class mAP " << detail::fixed(report.map.mean) << " +/- " << detail::fixed(report.map.stddev) << " over " << kUnseenSplits
           << " splits\n";
    return kOk;
}

// Trains the experiment in `config_path`, writing a verbatim config snapshot,
// metrics.csv (one row per epoch) and a checkpoint after every epoch into the
// experiment's output directory. With `resume`, training continues from that
// checkpoint, which must come from the same experiment. A config with a
// nonzero split.unseen_fraction runs the unseen-class protocol instead and
// writes unseen.json.
inline int cmd_train(const std::string& config_path, const std::string& resume, Streams io = {}) {
    config::Experiment e;
    std::string text;
    try {
        text = config::read_text(config_path);
        e = config::parse_experiment(text);
    } catch (const ConfigError& ex) {
        io.err << "error: " << ex.what() << '\n';
        return kUsageError;
    }
    const fs::path out(e.output_dir);
    try {
        fs::create_directories(out);
        detail::write_file(out / kConfigSnapshotName, text);
        if (e.split.unseen_fraction > 0) {
            if (!resume.empty()) throw ConfigError("the unseen-class protocol trains one model per split and cannot resume");
            return run_unseen(e, out, io);
        }
        const auto prepared = experiment::prepare(e);
        train::Trainer<float> tr(e.resolved_train(), prepared.train_view);
        if (!resume.empty()) {
            const auto c = ckpt::load(resume);
            if (!(c.experiment() == e)) throw ConfigError("checkpoint " + resume + " was written for a different experiment");
            ckpt::restore(tr, c);
            io.out << "resumed at epoch " << tr.epoch() << '\n';
        }
        ckpt::install_dump(tr, e, (out / kDivergenceDumpName).string());

        std::ofstream csv(out / kMetricsName, std::ios::trunc);
        if (!csv) throw ConfigError("cannot write " + (out / kMetricsName).string());
        csv << train::metrics_csv_header() << '\n';
        for (const auto& m : tr.history()) csv << train::metrics_csv_row(m) << '\n';
        csv.flush();

        tr.run([&](const train::EpochMetrics& m) {
            csv << train::metrics_csv_row(m) << '\n';
            csv.flush();
            ckpt::save((out / kCheckpointName).string(), e, tr);
            io.out << "epoch " << m.epoch << "  omega " << detail::fixed(m.omega, 3) << "  hnet " << detail::fixed(m.hnet_total) << "  anet "
                   << detail::fixed(m.anet_total) << "  " << detail::fixed(m.wall_time_s, 2) << "s\n";
        });
        if (tr.history().empty() || !fs::exists(out / kCheckpointName)) ckpt::save((out / kCheckpointName).string(), e, tr);
        const double map = retrieval::mean_average_precision(train::make_run(tr.hnet(), prepared.dataset, prepared.split.query, prepared.split.database));
        io.out << "test mAP " << detail::fixed(map) << " (" << e.train.code_length << " bits)\n";
    } catch (const DivergenceError& ex) {
        io.err << "diverged: " << ex.what() << '\n';
        return kDiverged;
    } catch (const ConfigError& ex) {
        io.err << "error: " << ex.what() << '\n';
        return kUsageError;
    } catch (const ckpt::CheckpointError& ex) {
        io.err << "error: " << ex.what() << '\n';
        return kUsageError;
    }
    return kOk;
}

// ---- eval ----

// Metrics of a retrieval run as JSON. `cutoff` 0 means the whole database.
inline json metrics_json(const retrieval::RetrievalRun& run, std::size_t cutoff) {
    json j;
    j["code_length"] = run.k();
    j["queries"] = run.queries.size();
    j["database"] = run.database.size();
    j["cutoff"] = cutoff;
    const double map_all = retrieval::mean_average_precision(run);
    j["mAP"] = cutoff ? retrieval::mean_average_precision(run, cutoff) : map_all;
    json by_cutoff = {{"all", map_all}};
    if (cutoff) by_cutoff[std::to_string(cutoff)] = j["mAP"];
    j["mAP_by_cutoff"] = by_cutoff;
    const auto ns = detail::precision_ns(run.database.size());
    j["precision_at_n"] = {{"n", ns}, {"precision", retrieval::precision_at_n(run, ns)}};
    json radius = json::array(), precision = json::array(), recall = json::array();
    for (const auto& p : retrieval::pr_curve(run)) {
        radius.push_back(p.radius);
        precision.push_back(p.precision);
        recall.push_back(p.recall);
    }
    j["pr_curve"] = {{"radius", radius}, {"precision", precision}, {"recall", recall}};
    return j;
}

// Writes <prefix>.query.codes, <prefix>.database.codes and the label sidecar
// <prefix>.json.
inline void dump_codes(const std::string& prefix, const retrieval::RetrievalRun& run, const std::vector<int>& query_idx,
                       const std::vector<int>& db_idx) {
    retrieval::write_codes(prefix + ".query.codes", run.queries);
    retrieval::write_codes(prefix + ".database.codes", run.database);
    const json side = {{"code_length", run.k()},
                       {"query_indices", query_idx},
                       {"query_labels", run.query_labels},
                       {"database_indices", db_idx},
                       {"database_labels", run.database_labels}};
    detail::write_file(prefix + ".json", side.dump(2) + "\n");
}

// Evaluates the H-Net stored in a checkpoint on a named split. Only the H-Net
// parameter block is turned into a model; the A-Net block is never loaded.
inline int cmd_eval(const std::string& ckpt_path, const std::string& split, std::size_t cutoff, const std::string& out_path = {},
                    const std::string& codes_prefix = {}, Streams io = {}) {
    try {
        const auto c = ckpt::load(ckpt_path);
        const auto e = c.experiment();
        const auto prepared = experiment::prepare(e);
        const auto [queries, database] = experiment::eval_sets(prepared, split);
        const auto spec = train::encoder_spec(e.resolved_train(), prepared.train_view);
        retrieval::RetrievalRun run;
        if (c.element_size == 8) run = train::make_run(ckpt::load_hnet<double>(c, spec), prepared.dataset, queries, database);
        else run = train::make_run(ckpt::load_hnet<float>(c, spec), prepared.dataset, queries, database);
        json j = metrics_json(run, cutoff);
        j["split"] = split;
        j["epoch"] = c.epoch;
        const std::string text = j.dump(2) + "\n";
        if (out_path.empty()) io.out << text;
        else detail::write_file(out_path, text);
        if (!codes_prefix.empty()) dump_codes(codes_prefix, run, queries, database);
    } catch (const ConfigError& ex) {
        io.err << "error: " << ex.what() << '\n';
        return kUsageError;
    } catch (const ckpt::CheckpointError& ex) {
        io.err << "error: " << ex.what() << '\n';
        return kUsageError;
    }
    return kOk;
}

// ---- ablate ----

struct AblationRow {
    std::string variant;
    int code_length;
    std::uint64_t seed;
    double map;
};

inline std::string ablation_markdown(const std::vector<AblationRow>& rows, const std::vector<train::VariantTag>& variants,
                                     const std::vector<int>& ks) {
    std::ostringstream md;
    md << "| variant |";
    for (int k : ks) md << ' ' << k << " bits |";
    md << "\n|---|";
    for (std::size_t i = 0; i < ks.size(); ++i) md << "---|";
    md << '\n';
    for (const auto& v : variants) {
        md << "| " << v.str() << " |";
        for (int k : ks) {
            std::vector<double> maps;
            for (const auto& r : rows)
                if (r.variant == v.str() && r.code_length == k) maps.push_back(r.map);
            const auto ms = experiment::mean_std(maps);
            md << ' ' << detail::fixed(ms.mean) << " ± " << detail::fixed(ms.stddev) << " |";
        }
        md << '\n';
    }
    return md.str();
}

// Runs variants x code lengths x seeds. Every variant sees the same seeds,
// hence the same data, split and initial H-Net for a given seed.
inline int cmd_ablate(const std::string& manifest_path, Streams io = {}) {
    config::Experiment e;
    try {
        e = config::load_experiment(manifest_path);
        if (e.variants.empty()) throw ConfigError(manifest_path + ": manifest lists no variants");
    } catch (const ConfigError& ex) {
        io.err << "error: " << ex.what() << '\n';
        return kUsageError;
    }
    const auto seeds = e.seeds.empty() ? std::vector<std::uint64_t>{e.seed} : e.seeds;
    const auto ks = e.code_lengths.empty() ? std::vector<int>{e.train.code_length} : e.code_lengths;
    const fs::path out(e.output_dir);
    std::vector<AblationRow> rows;
    try {
        fs::create_directories(out);
        std::ofstream csv(out / "ablation.csv", std::ios::trunc);
        if (!csv) throw ConfigError("cannot write " + (out / "ablation.csv").string());
        csv << "variant,code_length,seed,mAP\n";
        for (int k : ks)
            for (const auto& v : e.variants)
                for (auto seed : seeds) {
                    auto ex = e.with_seed(seed);
                    ex.train.variant = v;
                    ex.train.code_length = k;
                    const auto prepared = experiment::prepare(ex);
                    train::Trainer<float> tr(ex.resolved_train(), prepared.train_view);
                    const fs::path run_dir = out / "runs" / detail::dir_name(v, k, seed);
                    fs::create_directories(run_dir);
                    ckpt::install_dump(tr, ex, (run_dir / kDivergenceDumpName).string());
                    std::ofstream mcsv(run_dir / kMetricsName, std::ios::trunc);
                    mcsv << train::metrics_csv_header() << '\n';
                    tr.run([&](const train::EpochMetrics& m) { mcsv << train::metrics_csv_row(m) << '\n'; });
                    const auto run = train::make_run(tr.hnet(), prepared.dataset, prepared.split.query, prepared.split.database);
                    const double map = retrieval::mean_average_precision(run);
                    detail::write_file(run_dir / "eval.json", metrics_json(run, 0).dump(2) + "\n");
                    rows.push_back({v.str(), k, seed, map});
                    std::ostringstream line;
                    line.precision(17);
                    line << v.str() << ',' << k << ',' << seed << ',' << map;
                    csv << line.str() << '\n';
                    csv.flush();
                    io.out << v.str() << "  k=" << k << "  seed=" << seed << "  mAP " << detail::fixed(map) << '\n';
                }
        const std::string md = ablation_markdown(rows, e.variants, ks);
        detail::write_file(out / "ablation.md", md);
        io.out << '\n' << md;
    } catch (const DivergenceError& ex) {
        io.err << "diverged: " << ex.what() << '\n';
        return kDiverged;
    } catch (const ConfigError& ex) {
        io.err << "error: " << ex.what() << '\n';
        return kUsageError;
    }
    return kOk;
}

// ---- plot ----

inline const std::vector<std::string>& plot_kinds() {
    static const std::vector<std::string> k{"loss", "pn", "pr"};
    return k;
}

// Reads metrics.csv into named columns; empty when the file is missing or has
// no data rows.
inline std::map<std::string, std::vector<double>> read_metrics_csv(const fs::path& p) {
    std::map<std::string, std::vector<double>> cols;
    std::ifstream is(p);
    std::string line;
    if (!is || !std::getline(is, line)) return cols;
    std::vector<std::string> names;
    {
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) names.push_back(tok);
    }
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        for (std::size_t c = 0; c < names.size() && std::getline(ss, tok, ','); ++c) cols[names[c]].push_back(std::stod(tok));
        ++rows;
    }
    if (rows == 0) cols.clear();
    return cols;
}

// Renders loss.svg from metrics.csv and pn.svg / pr.svg from every eval JSON
// in `in_dir`. Missing inputs produce a warning, not an error.
inline int cmd_plot(const std::string& in_dir, const std::string& out_dir, std::vector<std::string> kinds = {}, Streams io = {}) {
    if (kinds.empty()) kinds = plot_kinds();
    for (const auto& k : kinds)
        if (std::find(plot_kinds().begin(), plot_kinds().end(), k) == plot_kinds().end()) {
            io.err << "error: unknown plot kind '" << k << "' (expected loss, pn or pr)\n";
            return kUsageError;
        }
    if (!fs::is_directory(in_dir)) {
        io.err << "error: " << in_dir << " is not a directory\n";
        return kUsageError;
    }
    const auto metrics = read_metrics_csv(fs::path(in_dir) / kMetricsName);

    std::vector<std::pair<std::string, json>> evals;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(in_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream is(f);
        const auto j = json::parse(is, nullptr, false);
        if (!j.is_discarded() && j.is_object() && j.contains("pr_curve") && j.contains("precision_at_n")) evals.emplace_back(f.stem().string(), j);
    }

    std::vector<std::pair<std::string, plot::Chart>> charts;
    for (const auto& kind : kinds) {
        plot::Chart c;
        if (kind == "loss") {
            if (metrics.empty()) continue;
            c.title = "Training losses";
            c.x_label = "epoch";
            c.y_label = "loss";
            for (const char* col : {"hnet_total", "hnet_semantic", "hnet_consistent", "hnet_quantization", "anet_total", "anet_self_paced"})
                if (metrics.count(col)) c.series.push_back({col, metrics.at("epoch"), metrics.at(col)});
        } else {
            if (evals.empty()) continue;
            for (const auto& [name, j] : evals) {
                if (kind == "pn") c.series.push_back({name, j["precision_at_n"]["n"].get<std::vector<double>>(), j["precision_at_n"]["precision"].get<std::vector<double>>()});
                else c.series.push_back({name, j["pr_curve"]["recall"].get<std::vector<double>>(), j["pr_curve"]["precision"].get<std::vector<double>>()});
            }
            if (kind == "pn") {
                c.title = "Precision@top-N";
                c.x_label = "N";
                c.y_label = "precision";
                c.log_x = true;
            } else {
                c.title = "Precision-recall (Hamming radius)";
                c.x_label = "recall";
                c.y_label = "precision";
                c.x_range = plot::kUnitRange;
            }
            c.y_range = plot::kUnitRange;
        }
        charts.emplace_back(kind, std::move(c));
    }
    if (charts.empty()) {
        io.err << "warning: no metrics found in " << in_dir << "; nothing plotted\n";
        return kOk;
    }
    try {
        fs::create_directories(out_dir);
        for (const auto& [kind, c] : charts) {
            const auto path = fs::path(out_dir) / (kind + ".svg");
            detail::write_file(path, plot::render_svg(c));
            io.out << "wrote " << path.string() << '\n';
        }
    } catch (const ConfigError& ex) {
        io.err << "error: " << ex.what() << '\n';
        return kUsageError;
    }
    for (const auto& kind : kinds)
        if (std::none_of(charts.begin(), charts.end(), [&](const auto& c) { return c.first == kind; }))
            io.err << "warning: no data for '" << kind << "' plot in " << in_dir << '\n';
    return kOk;
}

}  // namespace ssah::cli
