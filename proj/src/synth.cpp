#include "lmk/synth.hpp"

#include <cmath>
#include <filesystem>

namespace lmk {

namespace fs = std::filesystem;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

struct ShapeSample {
    int family = 0;       // 0 ellipse, 1 lobed, 2 deformed
    double rot = 0.0;     // radians
    double tx = 0.0, ty = 0.0;
    double scale = 1.0;
    double bump_amp = 0.0;
    double bump_theta = 0.0;
};

double radial(const ShapeSample& s, double theta, double unit) {
    double r;
    if (s.family == 1) {
        r = 31.0 * unit * (1.0 + 0.22 * std::cos(3.0 * theta));
    } else {
        const double a = 40.0 * unit, b = 22.0 * unit;
        const double c = b * std::cos(theta), d = a * std::sin(theta);
        r = a * b / std::sqrt(c * c + d * d);
    }
    if (s.family == 2) {
        double dt = std::fmod(theta - s.bump_theta + 3.0 * kTwoPi, kTwoPi);
        if (dt > kTwoPi / 2) dt -= kTwoPi;
        r += s.bump_amp * unit * std::exp(-dt * dt / (2.0 * 0.35 * 0.35));
    }
    return r;
}

void render(const ShapeSample& s, int size, double noise_sigma, Rng& rng,
            Image& img, Image& mask) {
    img = Image(size, size);
    mask = Image(size, size);
    const double unit = size / 128.0;
    const double cx = (size - 1) / 2.0 + s.tx;
    const double cy = (size - 1) / 2.0 + s.ty;
    const double bg = 0.15, fg = 0.85;
    const double cr = std::cos(-s.rot), sr = std::sin(-s.rot);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double dx = (x - cx) / s.scale;
            const double dy = (y - cy) / s.scale;
            const double ux = cr * dx - sr * dy;
            const double uy = sr * dx + cr * dy;
            const double rho = std::hypot(ux, uy);
            const double edge = radial(s, std::atan2(uy, ux), unit);
            // one-pixel soft edge; mask thresholds the same alpha
            const double alpha =
                std::clamp(0.5 + (edge - rho) * s.scale, 0.0, 1.0);
            img.at(y, x) = std::clamp(
                bg + (fg - bg) * alpha + noise_sigma * rng.normal(), 0.0, 1.0);
            mask.at(y, x) = alpha > 0.5 ? 1.0 : 0.0;
        }
    }
}

}  // namespace

Manifest generate_synthetic(const SynthConfig& cfg) {
    require(cfg.n_per_class >= 2, "need at least 2 samples per class");
    require(cfg.image_size >= 32, "image size too small");
    require(!cfg.classes.empty(), "no classes requested");
    for (const auto& c : cfg.classes)
        require(c == "ellipse" || c == "lobed" || c == "deformed",
                "unknown synthetic class '" + c + "'");

    fs::create_directories(fs::path(cfg.out_dir) / "images");
    fs::create_directories(fs::path(cfg.out_dir) / "masks");

    Manifest manifest;
    manifest.image_size = cfg.image_size;
    manifest.dir = cfg.out_dir;

    Rng root(cfg.seed);
    for (size_t ci = 0; ci < cfg.classes.size(); ++ci) {
        const std::string& cls = cfg.classes[ci];
        const int family = cls == "ellipse" ? 0 : (cls == "lobed" ? 1 : 2);
        for (int i = 0; i < cfg.n_per_class; ++i) {
            Rng rng = Rng(cfg.seed).split(uint64_t(ci) * 1000003 + uint64_t(i));
            ShapeSample s;
            s.family = family;
            s.rot = rng.uniform(-10.0, 10.0) * kTwoPi / 360.0;
            s.tx = rng.uniform(-5.0, 5.0);
            s.ty = rng.uniform(-5.0, 5.0);
            s.scale = rng.uniform(0.9, 1.1);
            if (family == 2) {
                s.bump_amp = rng.uniform(12.0, 16.0);
                s.bump_theta = 0.8 + rng.uniform(-0.15, 0.15);
            }
            Image img, mask;
            render(s, cfg.image_size, cfg.noise_sigma, rng, img, mask);

            char idbuf[64];
            std::snprintf(idbuf, sizeof idbuf, "%s_%03d", cls.c_str(), i);
            const std::string id = idbuf;
            const std::string img_rel = "images/" + id + ".png";
            const std::string mask_rel = "masks/" + id + ".png";
            save_png_gray8(img, (fs::path(cfg.out_dir) / img_rel).string());
            save_png_gray8(mask, (fs::path(cfg.out_dir) / mask_rel).string());

            // per-class split: first 80% train, next 10% val, rest test
            const int n = cfg.n_per_class;
            const int n_train = std::max(1, int(n * 0.8));
            const int n_val = std::max(1, int(n * 0.1));
            std::string split = "test";
            if (i < n_train) split = "train";
            else if (i < n_train + n_val) split = "val";

            manifest.records.push_back({id, img_rel, split, mask_rel, cls});
        }
    }
    save_manifest(manifest, (fs::path(cfg.out_dir) / "manifest.tsv").string());
    (void)root;
    return manifest;
}

}  // namespace lmk
