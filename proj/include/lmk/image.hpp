#pragma once

#include <string>
#include <vector>

#include "lmk/common.hpp"

namespace lmk {

// 2D scalar intensity grid, row-major, values normalized to [0, 1].
// Coordinates are continuous pixel coordinates with the origin at the
// center of pixel (0,0); x indexes columns, y indexes rows.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Image() = default;
    Image(int h, int w, double fill = 0.0)
        : height(h), width(w), data(size_t(h) * size_t(w), fill) {}

    double& at(int y, int x) { return data[size_t(y) * width + x]; }
    double at(int y, int x) const { return data[size_t(y) * width + x]; }
    size_t pixel_count() const { return data.size(); }
    bool same_extent(const Image& o) const {
        return height == o.height && width == o.width;
    }
};

// Bilinear sample with clamp-to-border. Exact for integer coordinates.
double bilinear_sample(const Image& img, double x, double y);

// d(sample)/dx and d(sample)/dy of the piecewise-linear interpolant at
// (x, y); zero in a clamped direction. One-sided at cell boundaries.
void bilinear_sample_grad(const Image& img, double x, double y,
                          double& dvdx, double& dvdy);

// 8-bit grayscale PNG or PGM (P2/P5), normalized to [0,1] by dividing by
// the format maximum. Dispatches on file magic.
Image load_image(const std::string& path);

// Writes 8-bit grayscale PNG; values clamped to [0,1] then scaled to 0..255.
void save_png_gray8(const Image& img, const std::string& path);

// Lossless 64-bit sidecar. Layout: 8-byte magic "LMK64RAW", uint32 height,
// uint32 width (little-endian), then height*width doubles, row-major.
void save_raw64(const Image& img, const std::string& path);
Image load_raw64(const std::string& path);

}  // namespace lmk
