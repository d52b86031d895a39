#pragma once

#include <algorithm>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctxdiff/vec.hpp"

namespace ctxdiff {

// Minimal 2D scatter plot, one color per class. Only meaningful for d = 2.
inline void write_scatter_svg(const std::string& path, const std::vector<Vec>& points,
                              const std::vector<int>& classes, int size_px = 480) {
    if (points.size() != classes.size()) {
        throw std::invalid_argument("write_scatter_svg: point/class count mismatch");
    }
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};
    double lo_x = -1, hi_x = 1, lo_y = -1, hi_y = 1;
    if (!points.empty()) {
        lo_x = hi_x = points[0][0];
        lo_y = hi_y = points[0][1];
        for (const Vec& p : points) {
            if (p.size() != 2) throw std::invalid_argument("write_scatter_svg: points must be 2D");
            lo_x = std::min(lo_x, p[0]);
            hi_x = std::max(hi_x, p[0]);
            lo_y = std::min(lo_y, p[1]);
            hi_y = std::max(hi_y, p[1]);
        }
    }
    const double pad_x = 0.05 * std::max(1e-9, hi_x - lo_x);
    const double pad_y = 0.05 * std::max(1e-9, hi_y - lo_y);
    lo_x -= pad_x, hi_x += pad_x, lo_y -= pad_y, hi_y += pad_y;
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_scatter_svg: cannot open " + path);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size_px << "\" height=\""
       << size_px << "\" viewBox=\"0 0 " << size_px << " " << size_px << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double x = (points[i][0] - lo_x) / (hi_x - lo_x) * size_px;
        const double y = size_px - (points[i][1] - lo_y) / (hi_y - lo_y) * size_px;
        const char* color = palette[static_cast<std::size_t>(classes[i]) % 8];
        os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"2\" fill=\"" << color
           << "\" fill-opacity=\"0.6\"/>\n";
    }
    os << "</svg>\n";
}

}  // namespace ctxdiff
