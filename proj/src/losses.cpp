#include "lmk/losses.hpp"

#include <algorithm>
#include <cmath>

namespace lmk {

namespace {

constexpr double kNccVarianceFloor = 1e-8;

void check_extents(const Image& a, const Image& b) {
    require(a.same_extent(b), "image extent mismatch: " +
                                  std::to_string(a.width) + "x" +
                                  std::to_string(a.height) + " vs " +
                                  std::to_string(b.width) + "x" +
                                  std::to_string(b.height));
}

inline int clamp_i(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace

LossKind parse_loss_kind(const std::string& name) {
    if (name == "l2") return LossKind::L2;
    if (name == "ncc") return LossKind::Ncc;
    if (name == "mind") return LossKind::Mind;
    throw Error("unknown loss kind '" + name + "' (expected l2, ncc or mind)");
}

std::string loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::L2: return "l2";
        case LossKind::Ncc: return "ncc";
        case LossKind::Mind: return "mind";
    }
    return "?";
}

void MindConfig::validate() const {
    require(patch_size > 0 && patch_size % 2 == 1,
            "MIND patch size must be odd and positive");
    require(variance_floor > 0.0, "MIND variance floor must be positive");
    require(!displacements.empty(), "MIND displacement set is empty");
    for (const auto& r : displacements)
        require(r[0] != 0 || r[1] != 0, "MIND displacement must be nonzero");
}

void validate_mask(const Mask& mask) {
    bool any_positive = false;
    for (double v : mask.data) {
        require(v >= 0.0 && v <= 1.0, "mask values must lie in [0,1]");
        if (v > 0.0) any_positive = true;
    }
    require(any_positive, "mask has no positive values");
}

double l2_match(const Image& target, const Image& registered) {
    check_extents(target, registered);
    double acc = 0.0;
    for (size_t i = 0; i < target.data.size(); ++i) {
        const double d = target.data[i] - registered.data[i];
        acc += d * d;
    }
    return acc / double(target.data.size());
}

double l2_match_grad(const Image& target, const Image& registered,
                     std::vector<double>& d_registered) {
    check_extents(target, registered);
    const double inv_n = 1.0 / double(target.data.size());
    d_registered.assign(target.data.size(), 0.0);
    double acc = 0.0;
    for (size_t i = 0; i < target.data.size(); ++i) {
        const double d = registered.data[i] - target.data[i];
        acc += d * d;
        d_registered[i] = 2.0 * d * inv_n;
    }
    return acc * inv_n;
}

namespace {

// Shared NCC patch scan; calls visit(center, stats) for every valid patch.
template <typename Visit>
double ncc_scan(const Image& a, const Image& b, int p, Visit&& visit) {
    check_extents(a, b);
    require(p > 0 && p % 2 == 1, "NCC patch size must be odd and positive");
    require(p <= std::min(a.width, a.height),
            "NCC patch larger than the image");
    const int h = p / 2;
    const int n = p * p;
    const double inv_n = 1.0 / n;
    double acc = 0.0;
    long count = 0;
    for (int cy = h; cy < a.height - h; ++cy) {
        for (int cx = h; cx < a.width - h; ++cx) {
            double sa = 0, sb = 0;
            for (int dy = -h; dy <= h; ++dy)
                for (int dx = -h; dx <= h; ++dx) {
                    sa += a.at(cy + dy, cx + dx);
                    sb += b.at(cy + dy, cx + dx);
                }
            const double ma = sa * inv_n, mb = sb * inv_n;
            double saa = 0, sbb = 0, sab = 0;
            for (int dy = -h; dy <= h; ++dy)
                for (int dx = -h; dx <= h; ++dx) {
                    const double va = a.at(cy + dy, cx + dx) - ma;
                    const double vb = b.at(cy + dy, cx + dx) - mb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            double ncc = 0.0;
            const bool live = saa > kNccVarianceFloor && sbb > kNccVarianceFloor;
            if (live) ncc = sab / std::sqrt(saa * sbb);
            acc += ncc;
            ++count;
            visit(cx, cy, live, ma, mb, saa, sbb, ncc);
        }
    }
    require(count > 0, "no valid NCC patch centers");
    return 1.0 - acc / double(count);
}

}  // namespace

double ncc_match(const Image& target, const Image& registered, int patch_size) {
    return ncc_scan(target, registered, patch_size,
                    [](int, int, bool, double, double, double, double, double) {});
}

double ncc_match_grad(const Image& target, const Image& registered,
                      int patch_size, std::vector<double>& d_registered) {
    d_registered.assign(target.data.size(), 0.0);
    const int h = patch_size / 2;
    long n_centers = long(std::max(0, target.width - 2 * h)) *
                     long(std::max(0, target.height - 2 * h));
    const double coef = n_centers > 0 ? -1.0 / double(n_centers) : 0.0;
    return ncc_scan(
        target, registered, patch_size,
        [&](int cx, int cy, bool live, double ma, double mb, double saa,
            double sbb, double ncc) {
            if (!live) return;
            const double denom = std::sqrt(saa * sbb);
            for (int dy = -h; dy <= h; ++dy)
                for (int dx = -h; dx <= h; ++dx) {
                    const double va = target.at(cy + dy, cx + dx) - ma;
                    const double vb = registered.at(cy + dy, cx + dx) - mb;
                    d_registered[size_t(cy + dy) * target.width + (cx + dx)] +=
                        coef * (va / denom - ncc * vb / sbb);
                }
        });
}

double mind_feature(const Image& img, int x, int y, const MindConfig& cfg,
                    const std::array<int, 2>& r) {
    cfg.validate();
    const int h = cfg.patch_size / 2;
    const int n = cfg.patch_size * cfg.patch_size;
    double sum = 0.0, sum2 = 0.0, ssd = 0.0;
    for (int dy = -h; dy <= h; ++dy)
        for (int dx = -h; dx <= h; ++dx) {
            const double va = img.at(clamp_i(y + dy, 0, img.height - 1),
                                     clamp_i(x + dx, 0, img.width - 1));
            const double vb =
                img.at(clamp_i(y + r[1] + dy, 0, img.height - 1),
                       clamp_i(x + r[0] + dx, 0, img.width - 1));
            sum += va;
            sum2 += va * va;
            const double d = va - vb;
            ssd += d * d;
        }
    const double mean = sum / n;
    const double var = std::max(0.0, sum2 / n - mean * mean);
    return std::exp(-ssd / (var + cfg.variance_floor));
}

double mind_match(const Image& target, const Image& registered,
                  const MindConfig& cfg) {
    check_extents(target, registered);
    cfg.validate();
    double acc = 0.0;
    for (int y = 0; y < target.height; ++y)
        for (int x = 0; x < target.width; ++x)
            for (const auto& r : cfg.displacements)
                acc += std::abs(mind_feature(target, x, y, cfg, r) -
                                mind_feature(registered, x, y, cfg, r));
    return acc / (double(target.data.size()) * cfg.displacements.size());
}

double mind_match_grad(const Image& target, const Image& registered,
                       const MindConfig& cfg, std::vector<double>& d_registered) {
    check_extents(target, registered);
    cfg.validate();
    d_registered.assign(target.data.size(), 0.0);
    const int hp = cfg.patch_size / 2;
    const int n = cfg.patch_size * cfg.patch_size;
    const double inv_total =
        1.0 / (double(target.data.size()) * cfg.displacements.size());
    const int w = target.width, hh = target.height;

    std::vector<int> a_idx(n), b_idx(n);
    std::vector<double> va(n);
    double acc = 0.0;
    for (int y = 0; y < hh; ++y) {
        for (int x = 0; x < w; ++x) {
            // patch at x: indices, values, mean and population variance
            int k = 0;
            double sum = 0.0;
            for (int dy = -hp; dy <= hp; ++dy)
                for (int dx = -hp; dx <= hp; ++dx, ++k) {
                    const int ai = clamp_i(y + dy, 0, hh - 1) * w +
                                   clamp_i(x + dx, 0, w - 1);
                    a_idx[k] = ai;
                    va[k] = registered.data[ai];
                    sum += va[k];
                }
            const double mean = sum / n;
            double var = 0.0;
            for (int i = 0; i < n; ++i) var += (va[i] - mean) * (va[i] - mean);
            var /= n;
            const double v_reg = var + cfg.variance_floor;

            for (const auto& r : cfg.displacements) {
                k = 0;
                double ssd = 0.0;
                for (int dy = -hp; dy <= hp; ++dy)
                    for (int dx = -hp; dx <= hp; ++dx, ++k) {
                        const int bi = clamp_i(y + r[1] + dy, 0, hh - 1) * w +
                                       clamp_i(x + r[0] + dx, 0, w - 1);
                        b_idx[k] = bi;
                        const double d = va[k] - registered.data[bi];
                        ssd += d * d;
                    }
                const double f_reg = std::exp(-ssd / v_reg);
                const double f_tgt = mind_feature(target, x, y, cfg, r);
                const double diff = f_tgt - f_reg;
                acc += std::abs(diff);
                const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                if (sgn == 0.0) continue;
                // d|f_tgt - f_reg|/dI = -sgn * df_reg/dI,
                // df_reg/dI_j = f_reg * (ssd * dvar_j - v_reg * dssd_j) / v_reg^2
                const double alpha = -sgn * inv_total * f_reg / (v_reg * v_reg);
                for (int i = 0; i < n; ++i) {
                    const double d = va[i] - registered.data[b_idx[i]];
                    const double dssd_a = 2.0 * d;
                    const double dvar_a = 2.0 * (va[i] - mean) / n;
                    d_registered[a_idx[i]] +=
                        alpha * (ssd * dvar_a - v_reg * dssd_a);
                    d_registered[b_idx[i]] += alpha * (v_reg * dssd_a);
                }
            }
        }
    }
    return acc * inv_total;
}

double match_loss(const Image& target, const Image& registered,
                  const MatchSpec& spec) {
    switch (spec.kind) {
        case LossKind::L2: return l2_match(target, registered);
        case LossKind::Ncc: return ncc_match(target, registered, spec.ncc_patch);
        case LossKind::Mind: return mind_match(target, registered, spec.mind);
    }
    throw Error("unreachable loss kind");
}

double match_loss_grad(const Image& target, const Image& registered,
                       const MatchSpec& spec, std::vector<double>& d_registered) {
    switch (spec.kind) {
        case LossKind::L2:
            return l2_match_grad(target, registered, d_registered);
        case LossKind::Ncc:
            return ncc_match_grad(target, registered, spec.ncc_patch,
                                  d_registered);
        case LossKind::Mind:
            return mind_match_grad(target, registered, spec.mind, d_registered);
    }
    throw Error("unreachable loss kind");
}

double masked_match(const Image& target, const Image& registered,
                    const Mask& mask_t, const Mask& mask_r,
                    const MatchSpec& spec) {
    check_extents(target, mask_t);
    check_extents(registered, mask_r);
    check_extents(target, registered);
    Image mt = target, mr = registered;
    for (size_t i = 0; i < mt.data.size(); ++i) {
        mt.data[i] *= mask_t.data[i];
        mr.data[i] *= mask_r.data[i];
    }
    return match_loss(mt, mr, spec);
}

double total_loss(double match, double kappa, double lambda) {
    require(lambda >= 0.0, "lambda must be non-negative");
    return match + lambda * kappa;
}

double weak_loss(double image_match, double kappa,
                 std::optional<double> seg_match, double lambda, double beta) {
    require(lambda >= 0.0, "lambda must be non-negative");
    require(beta >= 0.0, "beta must be non-negative");
    double loss = image_match + lambda * kappa;
    if (seg_match.has_value()) loss += beta * *seg_match;
    return loss;
}

}  // namespace lmk
