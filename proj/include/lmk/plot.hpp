#pragma once

#include <vector>

#include "lmk/image.hpp"

namespace lmk {

// Minimal line-plot rasterizer (axes, ticks, numeric tick labels, one
// polyline per series) so sweeps render without an external plotting
// dependency. The CSV stays the canonical output.
struct PlotSeries {
    std::vector<double> xs;
    std::vector<double> ys;
    double gray = 0.0;  // stroke intensity, 0 = black
    bool markers = true;
};

Image render_line_plot(const std::vector<PlotSeries>& series, int width = 720,
                       int height = 480);

}  // namespace lmk
