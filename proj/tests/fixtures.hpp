#pragma once

#include <filesystem>
#include <string>

#include "ssah/config.hpp"

namespace testing_util {

// Small enough to train a few epochs in well under a second.
inline ssah::config::Experiment tiny_experiment(const std::string& output_dir, std::uint64_t seed = 3) {
    ssah::config::Experiment e;
    e.seed = seed;
    e.dataset.classes = 2;
    e.dataset.per_class = 14;
    e.dataset.image_size = 16;
    e.split = {4, 3, 0, 0.0};
    e.train.epochs = 3;
    e.train.batch_size = 8;
    e.train.learning_rate = 0.01;
    e.train.code_length = 8;
    e.train.encoder_widths = {4, 6, 8};
    e.train.generator_width = 4;
    e.train.generator_residual_blocks = 1;
    e.output_dir = output_dir;
    return e;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("ssah_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testing_util
