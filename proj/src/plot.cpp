#include "lmk/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace lmk {

namespace {

// 3x5 glyphs for tick labels: digits plus '-', '.', 'e', '+'
const char* glyph(char c) {
    switch (c) {
        case '0': return "111101101101111";
        case '1': return "010110010010111";
        case '2': return "111001111100111";
        case '3': return "111001111001111";
        case '4': return "101101111001001";
        case '5': return "111100111001111";
        case '6': return "111100111101111";
        case '7': return "111001010010010";
        case '8': return "111101111101111";
        case '9': return "111101111001111";
        case '-': return "000000111000000";
        case '+': return "000010111010000";
        case '.': return "000000000000010";
        case 'e': return "011101110100011";
        default: return nullptr;
    }
}

void draw_text(Image& img, int x0, int y0, const std::string& text,
               double gray) {
    int cx = x0;
    for (char c : text) {
        const char* g = glyph(c);
        if (g) {
            for (int gy = 0; gy < 5; ++gy)
                for (int gx = 0; gx < 3; ++gx)
                    if (g[gy * 3 + gx] == '1') {
                        const int px = cx + gx, py = y0 + gy;
                        if (px >= 0 && px < img.width && py >= 0 &&
                            py < img.height)
                            img.at(py, px) = gray;
                    }
        }
        cx += 4;
    }
}

void draw_line(Image& img, double x0, double y0, double x1, double y1,
               double gray) {
    const double len = std::hypot(x1 - x0, y1 - y0);
    const int steps = std::max(1, int(std::ceil(len * 2.0)));
    for (int i = 0; i <= steps; ++i) {
        const double t = double(i) / steps;
        const int x = int(std::lround(x0 + t * (x1 - x0)));
        const int y = int(std::lround(y0 + t * (y1 - y0)));
        if (x >= 0 && x < img.width && y >= 0 && y < img.height)
            img.at(y, x) = gray;
    }
}

void draw_marker(Image& img, int x, int y, double gray) {
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            const int px = x + dx, py = y + dy;
            if (px >= 0 && px < img.width && py >= 0 && py < img.height)
                img.at(py, px) = gray;
        }
}

std::string tick_label(double v) {
    char buf[32];
    const double av = std::fabs(v);
    if (v == 0.0)
        std::snprintf(buf, sizeof buf, "0");
    else if (av >= 0.01 && av < 10000.0)
        std::snprintf(buf, sizeof buf, "%.3g", v);
    else
        std::snprintf(buf, sizeof buf, "%.1e", v);
    return buf;
}

}  // namespace

Image render_line_plot(const std::vector<PlotSeries>& series, int width,
                       int height) {
    Image img(height, width, 1.0);
    const int ml = 52, mr = 16, mt = 16, mb = 32;  // margins
    const int x0 = ml, x1 = width - mr, y0 = height - mb, y1 = mt;

    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool any = false;
    for (const auto& s : series)
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) continue;
            if (!any) {
                xmin = xmax = s.xs[i];
                ymin = ymax = s.ys[i];
                any = true;
            }
            xmin = std::min(xmin, s.xs[i]);
            xmax = std::max(xmax, s.xs[i]);
            ymin = std::min(ymin, s.ys[i]);
            ymax = std::max(ymax, s.ys[i]);
        }
    if (!any) {
        xmin = ymin = 0;
        xmax = ymax = 1;
    }
    if (xmax - xmin < 1e-300) xmax = xmin + 1.0;
    if (ymax - ymin < 1e-300) ymax = ymin + 1.0;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) {
        return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0);
    };
    auto py = [&](double y) {
        return y0 - (y - ymin) / (ymax - ymin) * (y0 - y1);
    };

    // axes
    draw_line(img, x0, y0, x1, y0, 0.0);
    draw_line(img, x0, y0, x0, y1, 0.0);
    const int n_ticks = 5;
    for (int i = 0; i <= n_ticks; ++i) {
        const double fx = xmin + (xmax - xmin) * i / n_ticks;
        const double fy = ymin + (ymax - ymin) * i / n_ticks;
        draw_line(img, px(fx), y0, px(fx), y0 + 4, 0.0);
        draw_line(img, x0 - 4, py(fy), x0, py(fy), 0.0);
        const std::string lx = tick_label(fx);
        draw_text(img, int(px(fx)) - int(lx.size()) * 2, y0 + 8, lx, 0.0);
        const std::string ly = tick_label(fy);
        draw_text(img, x0 - 6 - int(ly.size()) * 4, int(py(fy)) - 2, ly, 0.0);
    }

    for (const auto& s : series) {
        double lx = 0, lyv = 0;
        bool have_prev = false;
        for (size_t i = 0; i < s.xs.size(); ++i) {
            if (!std::isfinite(s.xs[i]) || !std::isfinite(s.ys[i])) {
                have_prev = false;
                continue;
            }
            const double cx = px(s.xs[i]), cy = py(s.ys[i]);
            if (have_prev) draw_line(img, lx, lyv, cx, cy, s.gray);
            if (s.markers) draw_marker(img, int(cx), int(cy), s.gray);
            lx = cx;
            lyv = cy;
            have_prev = true;
        }
    }
    return img;
}

}  // namespace lmk
