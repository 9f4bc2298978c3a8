#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "ssah/commands.hpp"

using namespace ssah;
using namespace testing_util;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) { return config::read_text(p.string()); }

void write(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    os << text;
}

// metrics.csv without the wall-clock column
std::string strip_wall_time(const std::string& csv) {
    std::istringstream is(csv);
    std::string line, out;
    while (std::getline(is, line)) out += line.substr(0, line.rfind(',')) + '\n';
    return out;
}

struct Quiet {
    std::ostringstream out, err;
    cli::Streams streams() { return {out, err}; }
};

fs::path write_config(const fs::path& dir, const config::Experiment& e, const std::string& name = "config.json") {
    const auto p = dir / name;
    write(p, config::dump(e));
    return p;
}

}  // namespace

// ---- config ----

TEST(Config, DumpParseRoundTrip) {
    auto e = tiny_experiment("runs/x", 12345678901234ULL);
    e.train.variant = train::VariantTag::parse("fixed_paced(0.3)");
    e.train.weights = {0.25, 0.01, 2.0, 0.125};
    e.variants = {train::VariantTag::parse("full"), train::VariantTag::parse("no_adversarial")};
    e.seeds = {0, 1};
    e.code_lengths = {12, 24};
    EXPECT_EQ(config::parse_experiment(config::dump(e)), e);
}

TEST(Config, DefaultsFillMissingKeys) {
    const auto e = config::parse_experiment(R"({"seed": 4, "train": {"epochs": 2}})");
    EXPECT_EQ(e.seed, 4u);
    EXPECT_EQ(e.train.epochs, 2);
    EXPECT_EQ(e.train.batch_size, 32);
    EXPECT_EQ(e.train.bands, 3);
    EXPECT_EQ(e.dataset.kind, "synthetic");
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
    for (const char* text : {R"({"sed": 1})", R"({"train": {"epoch": 3}})", R"({"train": {"weights": {"gamma": 1}}})",
                             R"({"seed": -1})", R"({"seed": "one"})", R"({"train": {"epochs": 2.5}})", R"({"train": {"variant": "best"}})",
                             R"({"split": {"unseen_fraction": 1.0}})", R"({"dataset": {"kind": "web"}})",
                             R"({"dataset": {"kind": "directory"}})", R"({"code_lengths": [4]})", R"({"output_dir": ""})", "{", "[]"})
        EXPECT_THROW(config::parse_experiment(text), ConfigError) << text;
}

TEST(Config, BareFixedPacedExpandsToTheMarginSweep) {
    const auto e = config::parse_experiment(R"({"variants": ["full", "fixed_paced"]})");
    ASSERT_EQ(e.variants.size(), 1 + train::kFixedPacedSweep.size());
    EXPECT_EQ(e.variants[0].str(), "full");
    for (std::size_t i = 0; i < train::kFixedPacedSweep.size(); ++i) EXPECT_EQ(e.variants[i + 1].fixed_omega, train::kFixedPacedSweep[i]);
}

TEST(Config, DerivedSeedsDependOnTheExperimentSeed) {
    const auto a = tiny_experiment("x", 1), b = tiny_experiment("x", 2);
    EXPECT_NE(a.resolved_split().seed, b.resolved_split().seed);
    EXPECT_NE(a.dataset_seed(), b.dataset_seed());
    EXPECT_NE(a.dataset_seed(), a.resolved_split().seed);
    EXPECT_EQ(a.resolved_train().seed, 1u);
}

TEST(Config, SampleConfigsParse) {
    for (const char* name : {"desk.json", "smoke.json", "ablation.json", "unseen.json"}) {
        const fs::path p = fs::path(SSAH_SOURCE_DIR) / "configs" / name;
        EXPECT_NO_THROW(config::load_experiment(p.string())) << name;
    }
}

// ---- train ----

TEST(TrainCommand, MissingOrInvalidConfigIsAUsageError) {
    const auto dir = scratch_dir("cli_bad");
    Quiet q;
    EXPECT_EQ(cli::cmd_train((dir / "nope.json").string(), "", q.streams()), cli::kUsageError);
    write(dir / "bad.json", R"({"train": {"epochs": -1}})");
    EXPECT_EQ(cli::cmd_train((dir / "bad.json").string(), "", q.streams()), cli::kUsageError);
    EXPECT_NE(q.err.str().find("error:"), std::string::npos);
    fs::remove_all(dir);
}

TEST(TrainCommand, WritesSnapshotMetricsAndCheckpoint) {
    const auto dir = scratch_dir("cli_train");
    const auto e = tiny_experiment((dir / "out").string());
    // odd formatting must survive verbatim
    const std::string text = "{ \"seed\" : 3,\n  \"train\": " + config::to_json(e.train).dump() + ",\n \"split\": " + config::to_json(e.split).dump() +
                             ", \"dataset\": " + config::to_json(e.dataset).dump() + ", \"output_dir\": " + json(e.output_dir).dump() + "}\n";
    write(dir / "c.json", text);
    Quiet q;
    ASSERT_EQ(cli::cmd_train((dir / "c.json").string(), "", q.streams()), cli::kOk) << q.err.str();
    EXPECT_EQ(slurp(dir / "out" / "config.json"), text);
    const auto csv = slurp(dir / "out" / "metrics.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), train::metrics_csv_header());
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + e.train.epochs);
    EXPECT_EQ(ckpt::load((dir / "out" / "checkpoint.ckpt").string()).epoch, e.train.epochs);
    EXPECT_NE(q.out.str().find("test mAP"), std::string::npos);
    fs::remove_all(dir);
}

TEST(TrainCommand, IdenticalRunsWriteIdenticalMetrics) {
    const auto dir = scratch_dir("cli_repro");
    const auto e = tiny_experiment((dir / "out").string());
    const auto cfg = write_config(dir, e);
    Quiet q;
    ASSERT_EQ(cli::cmd_train(cfg.string(), "", q.streams()), cli::kOk);
    const auto first = slurp(dir / "out" / "metrics.csv");
    ASSERT_EQ(cli::cmd_train(cfg.string(), "", q.streams()), cli::kOk);
    EXPECT_EQ(strip_wall_time(slurp(dir / "out" / "metrics.csv")), strip_wall_time(first));
    fs::remove_all(dir);
}

TEST(TrainCommand, ResumeFromFinishedRunRestoresHistory) {
    const auto dir = scratch_dir("cli_resume");
    const auto e = tiny_experiment((dir / "out").string());
    const auto cfg = write_config(dir, e);
    Quiet q;
    ASSERT_EQ(cli::cmd_train(cfg.string(), "", q.streams()), cli::kOk);
    const auto metrics = slurp(dir / "out" / "metrics.csv");
    fs::copy_file(dir / "out" / "checkpoint.ckpt", dir / "saved.ckpt");
    ASSERT_EQ(cli::cmd_train(cfg.string(), (dir / "saved.ckpt").string(), q.streams()), cli::kOk) << q.err.str();
    EXPECT_EQ(slurp(dir / "out" / "metrics.csv"), metrics);
    EXPECT_NE(q.out.str().find("resumed at epoch 3"), std::string::npos);
    fs::remove_all(dir);
}

TEST(TrainCommand, ResumeRejectsCheckpointFromAnotherExperiment) {
    const auto dir = scratch_dir("cli_resume_other");
    auto e = tiny_experiment((dir / "out").string());
    e.train.epochs = 1;
    Quiet q;
    ASSERT_EQ(cli::cmd_train(write_config(dir, e).string(), "", q.streams()), cli::kOk);
    e.seed = 99;
    EXPECT_EQ(cli::cmd_train(write_config(dir, e, "other.json").string(), (dir / "out" / "checkpoint.ckpt").string(), q.streams()),
              cli::kUsageError);
    EXPECT_EQ(cli::cmd_train(write_config(dir, e, "other.json").string(), (dir / "missing.ckpt").string(), q.streams()), cli::kUsageError);
    fs::remove_all(dir);
}

TEST(TrainCommand, DivergenceExitsWithThreeAndDumps) {
    const auto dir = scratch_dir("cli_diverge");
    auto e = tiny_experiment((dir / "out").string());
    e.train.learning_rate = 1e30;
    Quiet q;
    EXPECT_EQ(cli::cmd_train(write_config(dir, e).string(), "", q.streams()), cli::kDiverged);
    EXPECT_TRUE(fs::exists(dir / "out" / "diverged.ckpt"));
    EXPECT_NE(q.err.str().find("diverged"), std::string::npos);
    fs::remove_all(dir);
}

TEST(TrainCommand, DirectoryDatasetTrains) {
    const auto dir = scratch_dir("cli_dir_data");
    io::save_dataset(data::make_synthetic_dataset(2, 14, 16, 8), (dir / "data").string());
    auto e = tiny_experiment((dir / "out").string());
    e.train.epochs = 1;
    e.dataset = {"directory", 0, 0, 0, (dir / "data").string()};
    Quiet q;
    EXPECT_EQ(cli::cmd_train(write_config(dir, e).string(), "", q.streams()), cli::kOk) << q.err.str();
    fs::remove_all(dir);
}

// ---- eval ----

TEST(EvalCommand, ReportsDeterministicMetrics) {
    const auto dir = scratch_dir("cli_eval");
    const auto e = tiny_experiment((dir / "out").string());
    Quiet q;
    ASSERT_EQ(cli::cmd_train(write_config(dir, e).string(), "", q.streams()), cli::kOk);
    const auto ck = (dir / "out" / "checkpoint.ckpt").string();
    ASSERT_EQ(cli::cmd_eval(ck, "test", 0, (dir / "a.json").string(), (dir / "codes").string(), q.streams()), cli::kOk);
    ASSERT_EQ(cli::cmd_eval(ck, "test", 0, (dir / "b.json").string(), {}, q.streams()), cli::kOk);
    EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
    const auto j = json::parse(slurp(dir / "a.json"));
    EXPECT_EQ(j["queries"], 6);
    EXPECT_EQ(j["database"], 22);
    EXPECT_EQ(j["code_length"], 8);
    EXPECT_EQ(j["epoch"], 3);
    EXPECT_GE(j["mAP"].get<double>(), 0.0);
    EXPECT_LE(j["mAP"].get<double>(), 1.0);
    EXPECT_EQ(j["pr_curve"]["radius"].size(), 9u);
    EXPECT_EQ(j["precision_at_n"]["n"].back(), 22);

    // The training command's final line agrees with eval.
    const auto out = q.out.str();
    const auto pos = out.find("test mAP ");
    ASSERT_NE(pos, std::string::npos);
    EXPECT_NEAR(std::stod(out.substr(pos + 9)), j["mAP"].get<double>(), 5e-5);

    const auto codes = retrieval::read_codes((dir / "codes.database.codes").string());
    EXPECT_EQ(codes.size(), 22u);
    EXPECT_TRUE(fs::exists(dir / "codes.query.codes"));
    EXPECT_EQ(json::parse(slurp(dir / "codes.json"))["query_indices"].size(), 6u);

    ASSERT_EQ(cli::cmd_eval(ck, "train", 5, (dir / "t.json").string(), {}, q.streams()), cli::kOk);
    const auto t = json::parse(slurp(dir / "t.json"));
    EXPECT_EQ(t["queries"], 8);
    EXPECT_TRUE(t["mAP_by_cutoff"].contains("5"));
    fs::remove_all(dir);
}

TEST(EvalCommand, BadInputsAreUsageErrors) {
    const auto dir = scratch_dir("cli_eval_bad");
    auto e = tiny_experiment((dir / "out").string());
    e.train.epochs = 1;
    Quiet q;
    ASSERT_EQ(cli::cmd_train(write_config(dir, e).string(), "", q.streams()), cli::kOk);
    EXPECT_EQ(cli::cmd_eval((dir / "out" / "checkpoint.ckpt").string(), "validation", 0, {}, {}, q.streams()), cli::kUsageError);
    EXPECT_EQ(cli::cmd_eval((dir / "none.ckpt").string(), "test", 0, {}, {}, q.streams()), cli::kUsageError);
    fs::remove_all(dir);
}

// ---- ablate ----

TEST(AblateCommand, RunsTheFullMatrix) {
    const auto dir = scratch_dir("cli_ablate");
    auto e = tiny_experiment((dir / "out").string());
    e.train.epochs = 1;
    e.variants = {train::VariantTag::parse("full"), train::VariantTag::parse("no_adversarial")};
    e.seeds = {0, 1};
    e.code_lengths = {8, 12};
    Quiet q;
    ASSERT_EQ(cli::cmd_ablate(write_config(dir, e).string(), q.streams()), cli::kOk) << q.err.str();
    std::istringstream csv(slurp(dir / "out" / "ablation.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "variant,code_length,seed,mAP");
    std::set<std::string> keys;
    while (std::getline(csv, line)) keys.insert(line.substr(0, line.rfind(',')));
    EXPECT_EQ(keys, (std::set<std::string>{"full,8,0", "full,8,1", "full,12,0", "full,12,1", "no_adversarial,8,0", "no_adversarial,8,1",
                                           "no_adversarial,12,0", "no_adversarial,12,1"}));
    EXPECT_TRUE(fs::exists(dir / "out" / "runs" / "full_k12_s1" / "eval.json"));
    EXPECT_TRUE(fs::exists(dir / "out" / "runs" / "no_adversarial_k8_s0" / "metrics.csv"));
    const auto md = slurp(dir / "out" / "ablation.md");
    EXPECT_NE(md.find("| full |"), std::string::npos);
    EXPECT_NE(md.find("12 bits"), std::string::npos);
    fs::remove_all(dir);
}

TEST(AblateCommand, ManifestWithoutVariantsIsAUsageError) {
    const auto dir = scratch_dir("cli_ablate_bad");
    Quiet q;
    EXPECT_EQ(cli::cmd_ablate(write_config(dir, tiny_experiment((dir / "out").string())).string(), q.streams()), cli::kUsageError);
    fs::remove_all(dir);
}

TEST(AblateCommand, RunDirectoryNames) {
    EXPECT_EQ(cli::detail::dir_name(train::VariantTag::parse("fixed_paced(0.5)"), 12, 2), "fixed_paced_0.5_k12_s2");
    EXPECT_EQ(cli::detail::dir_name(train::VariantTag::parse("full"), 48, 0), "full_k48_s0");
}

// ---- plot ----

TEST(PlotCommand, EmptyInputIsANoOp) {
    const auto dir = scratch_dir("cli_plot_empty");
    Quiet q;
    EXPECT_EQ(cli::cmd_plot(dir.string(), (dir / "figs").string(), {}, q.streams()), cli::kOk);
    EXPECT_FALSE(fs::exists(dir / "figs"));
    EXPECT_NE(q.err.str().find("warning"), std::string::npos);
}

TEST(PlotCommand, BadArgumentsAreUsageErrors) {
    const auto dir = scratch_dir("cli_plot_bad");
    Quiet q;
    EXPECT_EQ(cli::cmd_plot((dir / "missing").string(), (dir / "figs").string(), {}, q.streams()), cli::kUsageError);
    EXPECT_EQ(cli::cmd_plot(dir.string(), (dir / "figs").string(), {"histogram"}, q.streams()), cli::kUsageError);
}

TEST(PlotCommand, RendersAllThreeFigures) {
    const auto dir = scratch_dir("cli_plot");
    auto e = tiny_experiment((dir / "out").string());
    Quiet q;
    ASSERT_EQ(cli::cmd_train(write_config(dir, e).string(), "", q.streams()), cli::kOk);
    ASSERT_EQ(cli::cmd_eval((dir / "out" / "checkpoint.ckpt").string(), "test", 0, (dir / "out" / "eval.json").string(), {}, q.streams()), cli::kOk);
    ASSERT_EQ(cli::cmd_plot((dir / "out").string(), (dir / "figs").string(), {}, q.streams()), cli::kOk);
    for (const char* f : {"loss.svg", "pn.svg", "pr.svg"}) {
        const auto svg = slurp(dir / "figs" / f);
        EXPECT_NE(svg.find("<svg"), std::string::npos) << f;
        EXPECT_NE(svg.find("</svg>"), std::string::npos) << f;
    }
    EXPECT_NE(slurp(dir / "figs" / "loss.svg").find("hnet_total"), std::string::npos);
    EXPECT_NE(slurp(dir / "figs" / "pr.svg").find("eval"), std::string::npos);
    // deterministic output
    const auto first = slurp(dir / "figs" / "pn.svg");
    ASSERT_EQ(cli::cmd_plot((dir / "out").string(), (dir / "figs").string(), {"pn"}, q.streams()), cli::kOk);
    EXPECT_EQ(slurp(dir / "figs" / "pn.svg"), first);
    fs::remove_all(dir);
}

// ---- unseen classes ----

TEST(UnseenProtocol, KeepsUnseenClassesOutOfTraining) {
    auto e = tiny_experiment("unused");
    e.dataset.classes = 8;
    e.dataset.per_class = 8;
    e.split = {2, 0, 0, 0.25};
    e.train.epochs = 1;
    const auto r = experiment::evaluate_unseen<float>(e, 2);
    ASSERT_EQ(r.splits.size(), 2u);
    for (const auto& s : r.splits) {
        EXPECT_EQ(s.known_classes.size(), 6u);
        EXPECT_EQ(s.unseen_classes.size(), 2u);
        EXPECT_FALSE(data::classes_intersect(s.known_classes, s.unseen_classes));
        EXPECT_GT(s.batches_checked, 0u);
        EXPECT_GE(s.map, 0.0);
        EXPECT_LE(s.map, 1.0);
    }
    EXPECT_NE(r.splits[0].unseen_classes, r.splits[1].unseen_classes);
}

TEST(UnseenProtocol, TrainCommandWritesReport) {
    const auto dir = scratch_dir("cli_unseen");
    auto e = tiny_experiment((dir / "out").string());
    e.dataset.classes = 8;
    e.dataset.per_class = 8;
    e.split = {2, 0, 0, 0.25};
    e.train.epochs = 1;
    Quiet q;
    const auto cfg = write_config(dir, e);
    ASSERT_EQ(cli::cmd_train(cfg.string(), "", q.streams()), cli::kOk) << q.err.str();
    const auto j = json::parse(slurp(dir / "out" / "unseen.json"));
    EXPECT_EQ(j["splits"].size(), 5u);
    EXPECT_TRUE(j.contains("mAP_std"));
    EXPECT_NE(q.out.str().find("+/-"), std::string::npos);
    EXPECT_EQ(cli::cmd_train(cfg.string(), (dir / "x.ckpt").string(), q.streams()), cli::kUsageError);
    fs::remove_all(dir);
}

TEST(MeanStd, PopulationStandardDeviation) {
    const auto ms = experiment::mean_std({1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(ms.mean, 2.5);
    EXPECT_DOUBLE_EQ(ms.stddev, std::sqrt(1.25));
    EXPECT_EQ(experiment::mean_std({}).mean, 0.0);
}
