#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "lmk/image.hpp"

namespace lmk {

enum class LossKind { L2, Ncc, Mind };

LossKind parse_loss_kind(const std::string& name);  // "l2" | "ncc" | "mind"
std::string loss_kind_name(LossKind kind);

struct MindConfig {
    int patch_size = 3;  // odd, isotropic
    std::vector<std::array<int, 2>> displacements = {
        {5, 0}, {-5, 0}, {0, 5}, {0, -5}};  // 4-neighborhood, ||r|| = 5
    double variance_floor = 1e-6;

    void validate() const;
};

// Matching-loss selector plus the per-kind parameters.
struct MatchSpec {
    LossKind kind = LossKind::L2;
    int ncc_patch = 9;
    MindConfig mind;
};

// A soft region-of-interest weight in [0,1], same extent as the images it
// masks, with at least one strictly positive value.
using Mask = Image;
void validate_mask(const Mask& mask);

// Mean squared per-pixel difference.
double l2_match(const Image& target, const Image& registered);

// 1 - mean zero-normalized cross-correlation over all fully-contained
// patches. Patches with variance <= 1e-8 on either side contribute 0.
double ncc_match(const Image& target, const Image& registered, int patch_size);

// exp(-ssd / (var + floor)) between the patch at x and the patch at x + r;
// patch footprints are clamped to the image border.
double mind_feature(const Image& img, int x, int y, const MindConfig& cfg,
                    const std::array<int, 2>& r);

// Mean absolute difference of the per-pixel descriptors over all grid
// locations and all displacements.
double mind_match(const Image& target, const Image& registered,
                  const MindConfig& cfg);

double match_loss(const Image& target, const Image& registered,
                  const MatchSpec& spec);

// Applies the base loss to the pixelwise products mask .* image.
double masked_match(const Image& target, const Image& registered,
                    const Mask& mask_t, const Mask& mask_r,
                    const MatchSpec& spec);

// match + lambda * kappa
double total_loss(double match, double kappa, double lambda);

// image_match + lambda * kappa + beta * seg_match (segmentation term only
// when both segmentations exist).
double weak_loss(double image_match, double kappa,
                 std::optional<double> seg_match, double lambda, double beta);

// Gradient kernels with respect to the registered image; each returns the
// loss value and accumulates nothing (d_registered is overwritten).
double l2_match_grad(const Image& target, const Image& registered,
                     std::vector<double>& d_registered);
double ncc_match_grad(const Image& target, const Image& registered,
                      int patch_size, std::vector<double>& d_registered);
double mind_match_grad(const Image& target, const Image& registered,
                       const MindConfig& cfg, std::vector<double>& d_registered);
double match_loss_grad(const Image& target, const Image& registered,
                       const MatchSpec& spec, std::vector<double>& d_registered);

}  // namespace lmk
