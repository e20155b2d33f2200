#pragma once

#include <optional>

#include "lmk/autodiff.hpp"
#include "lmk/encoder.hpp"
#include "lmk/losses.hpp"
#include "lmk/tps.hpp"

namespace lmk {

enum class Variant { Plain, Weak, Localized };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

// Everything the registration graph needs besides the two images: the
// matching loss, the regularization weight, anchors, and the variant.
struct RegistrationConfig {
    MatchSpec match;
    double lambda = 0.0;
    double beta = 1.0;
    Variant variant = Variant::Plain;
    std::optional<Mask> mask;  // localized variant, fixed per dataset
    int anchor_count = 4;
    std::array<int, 2> image_extent = {128, 128};

    Tensor anchor_tensor() const;
};

// Differentiable pair graph built from learned-landmark leaves:
// landmarks -> anchors -> system -> solve -> warp -> loss (+ lambda kappa,
// + beta seg term for the weak variant when both segmentations exist).
struct PairTape {
    Tape tape;
    ValueId src_lms = -1;  // leaf, {M,2}
    ValueId tgt_lms = -1;  // leaf, {M,2}
    ValueId match = -1;
    ValueId kappa = -1;
    ValueId loss = -1;
    bool seg_term = false;
};

PairTape build_pair_tape(const LandmarkSet& src_lms, const LandmarkSet& tgt_lms,
                         const Image& img_s, const Image& img_t,
                         const RegistrationConfig& cfg,
                         const Image* seg_s = nullptr,
                         const Image* seg_t = nullptr);

// Full Siamese graph: one tape containing both encoder passes (shared
// parameter leaves) and the registration graph.
struct SiameseTape {
    Tape tape;
    std::vector<ValueId> param_leaves;
    ValueId src_lms = -1;
    ValueId tgt_lms = -1;
    ValueId match = -1;
    ValueId kappa = -1;
    ValueId loss = -1;
};

SiameseTape build_siamese_tape(const EncoderParams& params, const Image& img_s,
                               const Image& img_t,
                               const RegistrationConfig& cfg,
                               const Image* seg_s = nullptr,
                               const Image* seg_t = nullptr);

// Plain (non-differentiable) evaluation of one pair from given learned
// landmarks; used by validation, pruning and the register command.
struct PairEval {
    double match = 0.0;
    double kappa = 0.0;
    double loss = 0.0;
};

PairEval evaluate_pair(const LandmarkSet& src_lms, const LandmarkSet& tgt_lms,
                       const Image& img_s, const Image& img_t,
                       const RegistrationConfig& cfg, bool want_kappa = false);

// As evaluate_pair but also returns the solved warp and registered image.
struct PairEvalFull {
    PairEval eval;
    WarpParams warp;
    Image registered;
};
PairEvalFull evaluate_pair_full(const LandmarkSet& src_lms,
                                const LandmarkSet& tgt_lms, const Image& img_s,
                                const Image& img_t,
                                const RegistrationConfig& cfg);

}  // namespace lmk
