#pragma once

// Minimal SVG line charts for loss traces and retrieval curves.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ssah::plot {

struct Series {
    std::string name;
    std::vector<double> x;
    std::vector<double> y;
};

struct Chart {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::optional<std::pair<double, double>> x_range;  // auto when empty
    std::optional<std::pair<double, double>> y_range;
    bool log_x = false;
    std::vector<Series> series;
};

inline constexpr std::pair<double, double> kUnitRange{0.0, 1.0};

namespace detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::pair<double, double> extent(const std::vector<Series>& ss, bool want_x) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : ss)
        for (double v : want_x ? s.x : s.y)
            if (std::isfinite(v)) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
    if (!std::isfinite(lo)) return {0.0, 1.0};
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    return {lo, hi};
}

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace detail

inline std::string render_svg(const Chart& c) {
    constexpr double W = 640, H = 420, L = 70, R = 170, T = 40, B = 55;
    const double pw = W - L - R, ph = H - T - B;
    auto [x0, x1] = c.x_range ? *c.x_range : detail::extent(c.series, true);
    const auto [y0, y1] = c.y_range ? *c.y_range : detail::extent(c.series, false);
    const bool log_x = c.log_x && x0 > 0;
    auto fx = [&](double v) {
        double t = log_x ? (std::log10(v) - std::log10(x0)) / (std::log10(x1) - std::log10(x0)) : (v - x0) / (x1 - x0);
        return L + pw * std::clamp(t, 0.0, 1.0);
    };
    auto fy = [&](double v) { return T + ph * (1.0 - std::clamp((v - y0) / (y1 - y0), 0.0, 1.0)); };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::num(W) + "\" height=\"" + detail::num(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + detail::num(L + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" + detail::escape(c.title) + "</text>\n";
    s += "<rect x=\"" + detail::num(L) + "\" y=\"" + detail::num(T) + "\" width=\"" + detail::num(pw) + "\" height=\"" + detail::num(ph) +
         "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = log_x ? std::pow(10.0, std::log10(x0) + (std::log10(x1) - std::log10(x0)) * i / 5.0) : x0 + (x1 - x0) * i / 5.0;
        const double yv = y0 + (y1 - y0) * i / 5.0;
        const double px = fx(xv), py = fy(yv);
        s += "<line x1=\"" + detail::num(px) + "\" y1=\"" + detail::num(T + ph) + "\" x2=\"" + detail::num(px) + "\" y2=\"" + detail::num(T + ph + 5) +
             "\" stroke=\"#444\"/>";
        s += "<text x=\"" + detail::num(px) + "\" y=\"" + detail::num(T + ph + 18) + "\" text-anchor=\"middle\">" + detail::tick(xv) + "</text>\n";
        s += "<line x1=\"" + detail::num(L - 5) + "\" y1=\"" + detail::num(py) + "\" x2=\"" + detail::num(L + pw) + "\" y2=\"" + detail::num(py) +
             "\" stroke=\"#ddd\"/>";
        s += "<text x=\"" + detail::num(L - 8) + "\" y=\"" + detail::num(py + 4) + "\" text-anchor=\"end\">" + detail::tick(yv) + "</text>\n";
    }
    s += "<text x=\"" + detail::num(L + pw / 2) + "\" y=\"" + detail::num(H - 12) + "\" text-anchor=\"middle\">" + detail::escape(c.x_label) + "</text>\n";
    s += "<text transform=\"translate(18," + detail::num(T + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" + detail::escape(c.y_label) + "</text>\n";
    for (std::size_t i = 0; i < c.series.size(); ++i) {
        const auto& ser = c.series[i];
        const char* colour = detail::kPalette[i % std::size(detail::kPalette)];
        std::string pts;
        for (std::size_t j = 0; j < std::min(ser.x.size(), ser.y.size()); ++j) {
            if (!std::isfinite(ser.x[j]) || !std::isfinite(ser.y[j]) || (log_x && ser.x[j] <= 0)) continue;
            pts += detail::num(fx(ser.x[j])) + "," + detail::num(fy(ser.y[j])) + " ";
        }
        s += "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"1.8\" points=\"" + pts + "\"/>\n";
        const double ly = T + 14 + 18 * static_cast<double>(i);
        s += "<line x1=\"" + detail::num(L + pw + 12) + "\" y1=\"" + detail::num(ly) + "\" x2=\"" + detail::num(L + pw + 32) + "\" y2=\"" + detail::num(ly) +
             "\" stroke=\"" + colour + "\" stroke-width=\"2\"/>";
        s += "<text x=\"" + detail::num(L + pw + 37) + "\" y=\"" + detail::num(ly + 4) + "\">" + detail::escape(ser.name) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

}  // namespace ssah::plot
