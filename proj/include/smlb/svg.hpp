#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "smlb/common.hpp"
#include "smlb/table.hpp"

namespace smlb {

struct SvgOptions {
    bool log_x = false;
    bool log_y = false;
    int width = 760;
    int height = 480;
};

namespace detail {
inline std::string fmt_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}
} // namespace detail

/// Standalone SVG line chart: one polyline per y column, legend, optional
/// log scales. CSV remains the data contract; this is for eyeballing curves.
inline void render_svg(const ResultTable& table, const std::string& x_col,
                       const std::vector<std::string>& y_cols, std::ostream& os,
                       const SvgOptions& opt = {}) {
    if (table.rows.empty()) throw std::invalid_argument("render_svg: empty table");
    if (y_cols.empty()) throw std::invalid_argument("render_svg: no y columns");
    const std::vector<double> xs_raw = table.column(x_col);
    std::vector<std::vector<double>> ys_raw;
    for (const auto& c : y_cols) ys_raw.push_back(table.column(c));

    auto tf = [](bool logscale, double v) { return logscale ? std::log10(v) : v; };
    for (double v : xs_raw)
        if (opt.log_x && v <= 0.0)
            throw std::invalid_argument("render_svg: log x-axis needs positive values");
    std::vector<double> xs;
    for (double v : xs_raw) xs.push_back(tf(opt.log_x, v));

    double ymin = 1e300, ymax = -1e300;
    std::vector<std::vector<double>> ys(ys_raw.size());
    for (std::size_t s = 0; s < ys_raw.size(); ++s) {
        for (double v : ys_raw[s]) {
            if (opt.log_y && v <= 0.0)
                throw std::invalid_argument("render_svg: log y-axis needs positive values");
            const double w = tf(opt.log_y, v);
            ys[s].push_back(w);
            ymin = std::min(ymin, w);
            ymax = std::max(ymax, w);
        }
    }
    double xmin = *std::min_element(xs.begin(), xs.end());
    double xmax = *std::max_element(xs.begin(), xs.end());
    if (xmax == xmin) xmax = xmin + 1.0;
    if (ymax == ymin) ymax = ymin + 1.0;

    const double ml = 70, mr = 20, mt = 20, mb = 50;
    const double pw = opt.width - ml - mr, ph = opt.height - mt - mb;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return mt + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b"};
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\""
       << opt.height << "\" viewBox=\"0 0 " << opt.width << " " << opt.height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    // axes
    os << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
       << mt + ph << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
       << "\" stroke=\"black\"/>\n";
    // ticks
    const int nticks = 5;
    for (int i = 0; i <= nticks; ++i) {
        const double fx = xmin + (xmax - xmin) * i / nticks;
        const double fy = ymin + (ymax - ymin) * i / nticks;
        const double tx = px(fx), ty = py(fy);
        const double lx = opt.log_x ? std::pow(10.0, fx) : fx;
        const double ly = opt.log_y ? std::pow(10.0, fy) : fy;
        os << "<line x1=\"" << tx << "\" y1=\"" << mt + ph << "\" x2=\"" << tx << "\" y2=\""
           << mt + ph + 5 << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << tx << "\" y=\"" << mt + ph + 18
           << "\" font-size=\"11\" text-anchor=\"middle\">" << detail::fmt_tick(lx)
           << "</text>\n";
        os << "<line x1=\"" << ml - 5 << "\" y1=\"" << ty << "\" x2=\"" << ml << "\" y2=\"" << ty
           << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << ml - 8 << "\" y=\"" << ty + 4
           << "\" font-size=\"11\" text-anchor=\"end\">" << detail::fmt_tick(ly) << "</text>\n";
    }
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << opt.height - 8
       << "\" font-size=\"12\" text-anchor=\"middle\">" << x_col
       << (opt.log_x ? " (log)" : "") << "</text>\n";
    // series
    for (std::size_t s = 0; s < ys.size(); ++s) {
        os << "<polyline fill=\"none\" stroke=\"" << palette[s % 6]
           << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < xs.size(); ++i)
            os << px(xs[i]) << "," << py(ys[s][i]) << " ";
        os << "\"/>\n";
    }
    // legend
    for (std::size_t s = 0; s < y_cols.size(); ++s) {
        const double lx = ml + pw - 150, ly = mt + 14 + 16 * static_cast<double>(s);
        os << "<line x1=\"" << lx << "\" y1=\"" << ly - 4 << "\" x2=\"" << lx + 22 << "\" y2=\""
           << ly - 4 << "\" stroke=\"" << palette[s % 6] << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << lx + 28 << "\" y=\"" << ly << "\" font-size=\"11\">" << y_cols[s]
           << (opt.log_y ? " (log)" : "") << "</text>\n";
    }
    os << "</svg>\n";
}

} // namespace smlb
