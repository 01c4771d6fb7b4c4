#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "seisforge/errors.hpp"
#include "seisforge/ground_motion.hpp" // fmt_g17
#include "seisforge/linalg.hpp"

namespace seisforge::svg {

struct Series {
    std::string label;
    std::string color; // CSS color
    Vec y;
};

/// Static line chart: time on x, one polyline per series, small legend.
inline void write_line_chart(const std::filesystem::path& path, const std::string& title,
                             const std::string& y_label, double dt,
                             const std::vector<Series>& series, int width = 960,
                             int height = 320) {
    if (series.empty()) throw ConfigError("svg: no series to plot");
    const double ml = 70, mr = 20, mt = 34, mb = 42;
    const double pw = width - ml - mr, ph = height - mt - mb;

    std::size_t n = 0;
    double ymin = 0.0, ymax = 0.0;
    for (const auto& s : series) {
        n = std::max(n, s.y.size());
        for (double v : s.y) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    if (n < 2) n = 2;
    if (ymax - ymin < 1e-30) {
        ymax += 1.0;
        ymin -= 1.0;
    }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    const double tmax = (n - 1) * dt;

    auto xmap = [&](double t) { return ml + pw * t / tmax; };
    auto ymap = [&](double v) { return mt + ph * (1.0 - (v - ymin) / (ymax - ymin)); };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return std::string(buf);
    };

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";

    // axes and ticks
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
        << mt + ph << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
        << mt + ph << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double t = tmax * i / 5.0;
        out << "<line x1=\"" << xmap(t) << "\" y1=\"" << mt + ph << "\" x2=\"" << xmap(t)
            << "\" y2=\"" << mt + ph + 4 << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << xmap(t) << "\" y=\"" << mt + ph + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << num(t)
            << "</text>\n";
        const double v = ymin + (ymax - ymin) * i / 5.0;
        out << "<line x1=\"" << ml - 4 << "\" y1=\"" << ymap(v) << "\" x2=\"" << ml << "\" y2=\""
            << ymap(v) << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << ml - 8 << "\" y=\"" << ymap(v) + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(v)
            << "</text>\n";
    }
    out << "<text x=\"" << ml + pw / 2 << "\" y=\"" << height - 8
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">time (s)"
        << "</text>\n";
    out << "<text x=\"16\" y=\"" << mt + ph / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        << "transform=\"rotate(-90 16 " << mt + ph / 2 << ")\">" << y_label << "</text>\n";

    for (const auto& s : series) {
        out << "<polyline fill=\"none\" stroke=\"" << s.color
            << "\" stroke-width=\"1.2\" points=\"";
        for (std::size_t i = 0; i < s.y.size(); ++i) {
            if (i) out << ' ';
            out << num(xmap(i * dt)) << ',' << num(ymap(s.y[i]));
        }
        out << "\"/>\n";
    }

    double lx = ml + 10;
    for (const auto& s : series) {
        out << "<line x1=\"" << lx << "\" y1=\"" << mt + 10 << "\" x2=\"" << lx + 22 << "\" y2=\""
            << mt + 10 << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << lx + 26 << "\" y=\"" << mt + 14
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.label << "</text>\n";
        lx += 32 + 7.0 * s.label.size();
    }
    out << "</svg>\n";
}

} // namespace seisforge::svg
