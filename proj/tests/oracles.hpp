#pragma once

// Independent brute-force reference implementations of the matching losses.
// Deliberately written as plain nested loops with no shared code with the
// library, so they can serve as oracles.

#include <cmath>
#include <vector>

#include "lmk/image.hpp"
#include "lmk/losses.hpp"

namespace lmk::test {

inline double oracle_l2(const Image& a, const Image& b) {
    double s = 0.0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x)
            s += (a.at(y, x) - b.at(y, x)) * (a.at(y, x) - b.at(y, x));
    return s / (double(a.height) * double(a.width));
}

inline double oracle_ncc(const Image& a, const Image& b, int p) {
    const int h = p / 2;
    double total = 0.0;
    long centers = 0;
    for (int cy = h; cy + h < a.height; ++cy) {
        for (int cx = h; cx + h < a.width; ++cx) {
            double ma = 0.0, mb = 0.0;
            for (int dy = -h; dy <= h; ++dy)
                for (int dx = -h; dx <= h; ++dx) {
                    ma += a.at(cy + dy, cx + dx);
                    mb += b.at(cy + dy, cx + dx);
                }
            ma /= p * p;
            mb /= p * p;
            double num = 0.0, da = 0.0, db = 0.0;
            for (int dy = -h; dy <= h; ++dy)
                for (int dx = -h; dx <= h; ++dx) {
                    num += (a.at(cy + dy, cx + dx) - ma) *
                           (b.at(cy + dy, cx + dx) - mb);
                    da += (a.at(cy + dy, cx + dx) - ma) *
                          (a.at(cy + dy, cx + dx) - ma);
                    db += (b.at(cy + dy, cx + dx) - mb) *
                          (b.at(cy + dy, cx + dx) - mb);
                }
            double ncc = 0.0;
            if (da > 1e-8 && db > 1e-8) ncc = num / std::sqrt(da * db);
            total += ncc;
            ++centers;
        }
    }
    return 1.0 - total / double(centers);
}

inline double oracle_mind_feature(const Image& img, int x, int y, int p,
                                  int rx, int ry, double floor) {
    const int h = p / 2;
    auto px = [&](int xx, int yy) {
        if (xx < 0) xx = 0;
        if (xx >= img.width) xx = img.width - 1;
        if (yy < 0) yy = 0;
        if (yy >= img.height) yy = img.height - 1;
        return img.at(yy, xx);
    };
    double ssd = 0.0, mean = 0.0;
    for (int dy = -h; dy <= h; ++dy)
        for (int dx = -h; dx <= h; ++dx) {
            const double u = px(x + dx, y + dy);
            const double v = px(x + rx + dx, y + ry + dy);
            ssd += (u - v) * (u - v);
            mean += u;
        }
    mean /= p * p;
    double var = 0.0;
    for (int dy = -h; dy <= h; ++dy)
        for (int dx = -h; dx <= h; ++dx) {
            const double u = px(x + dx, y + dy);
            var += (u - mean) * (u - mean);
        }
    var /= p * p;
    return std::exp(-ssd / (var + floor));
}

inline double oracle_mind(const Image& a, const Image& b, int p,
                          const std::vector<std::array<int, 2>>& disps,
                          double floor) {
    double total = 0.0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x)
            for (const auto& r : disps)
                total += std::fabs(
                    oracle_mind_feature(a, x, y, p, r[0], r[1], floor) -
                    oracle_mind_feature(b, x, y, p, r[0], r[1], floor));
    return total / (double(a.height) * double(a.width) * double(disps.size()));
}

inline double oracle_masked_l2(const Image& a, const Image& b, const Image& ma,
                               const Image& mb) {
    double s = 0.0;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            const double d = a.at(y, x) * ma.at(y, x) - b.at(y, x) * mb.at(y, x);
            s += d * d;
        }
    return s / (double(a.height) * double(a.width));
}

}  // namespace lmk::test
