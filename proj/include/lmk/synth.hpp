#pragma once

#include "lmk/manifest.hpp"

namespace lmk {

// Desk-scale synthetic corpus: smooth closed shapes in up to three
// families (elongated ellipse, three-lobed outline, and a "deformed"
// anomaly class: the ellipse with a localized radial bump), with random
// rotation <= 10 degrees, translation <= 5 px, scale +-10% and mild noise.
// Images and binary segmentation masks are written as 8-bit PNGs, byte
// identical for a fixed seed.
struct SynthConfig {
    std::string out_dir;
    int n_per_class = 50;
    uint64_t seed = 0;
    std::vector<std::string> classes = {"ellipse", "lobed", "deformed"};
    int image_size = 128;
    double noise_sigma = 0.02;
};

// Generates the dataset and writes <out_dir>/manifest.tsv; returns the
// manifest. Splits are assigned per class: 80% train, 10% val, 10% test.
Manifest generate_synthetic(const SynthConfig& cfg);

}  // namespace lmk
