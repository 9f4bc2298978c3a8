// ssah: train, evaluate, ablate and plot semi-supervised adversarial hashing
// experiments.

#include <iostream>

#include "CLI11.hpp"
#include "ssah/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised adversarial deep hashing"};
    app.require_subcommand(1);

    std::string config_path, resume;
    auto* train = app.add_subcommand("train", "Train an experiment; writes metrics.csv and checkpoints");
    train->add_option("--config", config_path, "Experiment JSON")->required();
    train->add_option("--resume", resume, "Checkpoint to continue from");

    std::string ckpt_path, split = "test", out_path, codes_prefix;
    std::size_t cutoff = 0;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint's H-Net; prints metrics JSON");
    eval->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
    eval->add_option("--split", split, "test or train")->required();
    eval->add_option("--cutoff", cutoff, "mAP cutoff (0 = whole database)");
    eval->add_option("--out", out_path, "Write the JSON here instead of stdout");
    eval->add_option("--dump-codes", codes_prefix, "Also write packed codes and a label sidecar with this prefix");

    std::string manifest;
    auto* ablate = app.add_subcommand("ablate", "Run a variant x seed x code-length matrix");
    ablate->add_option("--manifest", manifest, "Experiment JSON with variants/seeds/code_lengths")->required();

    std::string in_dir, plot_out;
    std::vector<std::string> kinds;
    auto* plot = app.add_subcommand("plot", "Render loss, P@N and PR curves as SVG");
    plot->add_option("--in", in_dir, "Directory with metrics.csv and/or eval JSON files")->required();
    plot->add_option("--out", plot_out, "Output directory")->required();
    plot->add_option("--kind", kinds, "loss, pn or pr (repeatable; default all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : ssah::cli::kUsageError;
    }

    try {
        if (*train) return ssah::cli::cmd_train(config_path, resume);
        if (*eval) return ssah::cli::cmd_eval(ckpt_path, split, cutoff, out_path, codes_prefix);
        if (*ablate) return ssah::cli::cmd_ablate(manifest);
        if (*plot) return ssah::cli::cmd_plot(in_dir, plot_out, kinds);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return ssah::cli::kUsageError;
}
