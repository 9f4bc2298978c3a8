#pragma once

// On-disk datasets and split manifests.
//
// A dataset directory holds PNG images (8-bit gray, RGB or RGBA; alpha is
// dropped) and a labels.csv with header `path,class_ids`. Paths are relative
// to the directory; class ids are `;`-separated and empty for unlabeled
// images. Pixels map to [-1, 1] as v = byte / 127.5 - 1.

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssah/data.hpp"

namespace ssah::io {

namespace fs = std::filesystem;
using data::Dataset;
using data::SemiSupervisedSplit;
using data::SplitSpec;

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline std::uint8_t to_byte(float v) {
    const double b = std::round((static_cast<double>(v) + 1.0) * 127.5);
    return static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
}

inline std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && s[b] == ' ') ++b;
    return s.substr(b);
}

}  // namespace detail

// [C, H, W] in [-1, 1] -> PNG (gray for C = 1, RGB for C = 3).
inline void write_png(const std::string& path, const Tensor<float>& px) {
    if (px.rank() != 3 || (px.dim(0) != 1 && px.dim(0) != 3)) throw DimensionError("write_png expects [1|3, H, W], got " + px.shape_str());
    const int c = px.dim(0), h = px.dim(1), w = px.dim(2);
    detail::FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw ConfigError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw std::runtime_error("libpng initialisation failed");
    }
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * c);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng failed writing " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, w, h, 8, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) row[static_cast<std::size_t>(x) * c + ch] = detail::to_byte(px[(static_cast<std::size_t>(ch) * h + y) * w + x]);
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// PNG -> [channels, H, W]; gray is replicated when 3 channels are requested.
inline Tensor<float> read_png(const std::string& path, int channels = 3) {
    if (channels != 1 && channels != 3) throw ConfigError("read_png supports 1 or 3 channels");
    detail::FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw ConfigError("cannot read image " + path);
    png_byte sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw ConfigError(path + ": not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw std::runtime_error("libpng initialisation failed");
    }
    std::vector<std::uint8_t> buf;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ConfigError(path + ": corrupt PNG");
    }
    png_init_io(png, f.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    // Normalize everything to 8-bit RGB.
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const std::size_t stride = png_get_rowbytes(png, info);
    buf.resize(stride * static_cast<std::size_t>(h));
    rows.resize(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y) rows[y] = buf.data() + stride * static_cast<std::size_t>(y);
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor<float> out({channels, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::uint8_t* p = rows[y] + 3 * x;
            if (channels == 3)
                for (int ch = 0; ch < 3; ++ch) out[(static_cast<std::size_t>(ch) * h + y) * w + x] = static_cast<float>(p[ch] / 127.5 - 1.0);
            else
                out[static_cast<std::size_t>(y) * w + x] = static_cast<float>((0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 127.5 - 1.0);
        }
    return out;
}

inline std::vector<int> parse_class_ids(const std::string& field, const std::string& where) {
    std::vector<int> ids;
    std::stringstream ss(field);
    std::string tok;
    while (std::getline(ss, tok, ';')) {
        tok = detail::trim(tok);
        if (tok.empty()) continue;
        std::size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(tok, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != tok.size() || v < 0) throw ConfigError(where + ": bad class id '" + tok + "'");
        ids.push_back(v);
    }
    return ids;
}

// Writes img_00000.png, ... and labels.csv into `dir` (created if missing).
inline void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream csv(fs::path(dir) / "labels.csv");
    if (!csv) throw ConfigError("cannot write labels.csv in " + dir);
    csv << "path,class_ids\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%05zu.png", i);
        write_png((fs::path(dir) / name).string(), ds.images[i].pixels);
        csv << name << ',';
        const auto& ids = ds.images[i].class_ids;
        for (std::size_t j = 0; j < ids.size(); ++j) csv << (j ? ";" : "") << ids[j];
        csv << '\n';
    }
}

inline Dataset load_dataset(const std::string& dir, int channels = 3) {
    const fs::path root(dir);
    std::ifstream csv(root / "labels.csv");
    if (!csv) throw ConfigError("dataset directory " + dir + " has no labels.csv");
    std::string line;
    if (!std::getline(csv, line) || detail::trim(line) != "path,class_ids")
        throw ConfigError(dir + "/labels.csv: header must be 'path,class_ids'");
    Dataset ds;
    ds.channels = channels;
    int lineno = 1;
    while (std::getline(csv, line)) {
        ++lineno;
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto comma = line.find(',');
        const std::string where = dir + "/labels.csv:" + std::to_string(lineno);
        if (comma == std::string::npos) throw ConfigError(where + ": expected 'path,class_ids'");
        const std::string rel = detail::trim(line.substr(0, comma));
        auto px = read_png((root / rel).string(), channels);
        if (ds.images.empty()) {
            ds.height = px.dim(1);
            ds.width = px.dim(2);
        } else if (px.dim(1) != ds.height || px.dim(2) != ds.width) {
            throw ConfigError(where + ": image size differs from the first image");
        }
        ds.add(std::move(px), parse_class_ids(line.substr(comma + 1), where));
    }
    if (ds.images.empty()) throw ConfigError(dir + "/labels.csv lists no images");
    return ds;
}

// ---- split manifests ----

inline nlohmann::json split_to_json(const SplitSpec& spec, const SemiSupervisedSplit& s) {
    return {{"spec",
             {{"labeled_per_class", spec.labeled_per_class},
              {"query_per_class", spec.query_per_class},
              {"seed", spec.seed},
              {"unseen_fraction", spec.unseen_fraction}}},
            {"query", s.query},
            {"database", s.database},
            {"labeled_train", s.labeled_train},
            {"unlabeled_train", s.unlabeled_train}};
}

inline void save_split(const std::string& path, const SplitSpec& spec, const SemiSupervisedSplit& s) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write " + path);
    os << split_to_json(spec, s).dump(2) << '\n';
}

inline std::pair<SplitSpec, SemiSupervisedSplit> load_split(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read " + path);
    try {
        const auto j = nlohmann::json::parse(is);
        SplitSpec spec;
        const auto& js = j.at("spec");
        spec.labeled_per_class = js.at("labeled_per_class").get<int>();
        spec.query_per_class = js.at("query_per_class").get<int>();
        spec.seed = js.at("seed").get<std::uint64_t>();
        spec.unseen_fraction = js.at("unseen_fraction").get<double>();
        SemiSupervisedSplit s;
        s.query = j.at("query").get<std::vector<int>>();
        s.database = j.at("database").get<std::vector<int>>();
        s.labeled_train = j.at("labeled_train").get<std::vector<int>>();
        s.unlabeled_train = j.at("unlabeled_train").get<std::vector<int>>();
        return {spec, s};
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

}  // namespace ssah::io
