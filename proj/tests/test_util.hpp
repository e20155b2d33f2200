#pragma once

#include <cmath>
#include <vector>

#include "lmk/common.hpp"
#include "lmk/image.hpp"
#include "lmk/tps.hpp"

namespace lmk::test {

// Rejection-sample m landmarks inside the extent with a minimum pairwise
// separation, so the resulting TPS systems stay comfortably solvable.
inline LandmarkSet random_landmarks(Rng& rng, int m, double extent_x,
                                    double extent_y, double min_sep) {
    LandmarkSet lms;
    while (lms.point_count() < m) {
        Point2 p{rng.uniform(0.0, extent_x - 1.0), rng.uniform(0.0, extent_y - 1.0)};
        bool ok = true;
        for (const auto& q : lms.points) {
            const double d = std::hypot(p.x - q.x, p.y - q.y);
            if (d < min_sep) {
                ok = false;
                break;
            }
        }
        if (ok) lms.points.push_back(p);
    }
    return lms;
}

// Smooth synthetic test image: a sum of broad Gaussian bumps. Smoothness
// keeps bilinear-interpolation kinks negligible in finite-difference checks.
inline Image gaussian_blobs_image(int h, int w, uint64_t seed, int n_blobs = 4,
                                  double sigma = 0.0) {
    Rng rng(seed);
    if (sigma <= 0.0) sigma = 0.22 * std::min(h, w);
    struct Blob {
        double cx, cy, amp, s2;
    };
    std::vector<Blob> blobs;
    for (int i = 0; i < n_blobs; ++i) {
        const double s = sigma * rng.uniform(0.7, 1.3);
        blobs.push_back({rng.uniform(0.2 * w, 0.8 * w),
                         rng.uniform(0.2 * h, 0.8 * h),
                         rng.uniform(0.3, 1.0), s * s});
    }
    Image img(h, w);
    double vmax = 1e-12;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 0.0;
            for (const auto& b : blobs) {
                const double dx = x - b.cx, dy = y - b.cy;
                v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.s2));
            }
            img.at(y, x) = v;
            vmax = std::max(vmax, v);
        }
    for (auto& v : img.data) v /= vmax;
    return img;
}

// Non-smooth texture with no flat patches, for NCC/MIND checks.
inline Image texture_image(int h, int w, uint64_t seed) {
    Rng rng(seed);
    Image img(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = 0.5 + 0.2 * std::sin(0.9 * x + 0.35 * y) +
                             0.15 * std::cos(1.7 * y - 0.22 * x) +
                             0.1 * rng.uniform(-1.0, 1.0);
            img.at(y, x) = std::clamp(v, 0.0, 1.0);
        }
    return img;
}

}  // namespace lmk::test
