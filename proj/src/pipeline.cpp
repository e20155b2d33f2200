#include "lmk/pipeline.hpp"

namespace lmk {

Variant parse_variant(const std::string& name) {
    if (name == "plain") return Variant::Plain;
    if (name == "weak") return Variant::Weak;
    if (name == "localized") return Variant::Localized;
    throw Error("unknown variant '" + name +
                "' (expected plain, weak or localized)");
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Plain: return "plain";
        case Variant::Weak: return "weak";
        case Variant::Localized: return "localized";
    }
    return "?";
}

Tensor RegistrationConfig::anchor_tensor() const {
    require(anchor_count == 0 || anchor_count == 4,
            "anchor count must be 0 or 4");
    Tensor t({anchor_count, 2});
    if (anchor_count == 4) {
        const double xm = image_extent[0] - 1.0;
        const double ym = image_extent[1] - 1.0;
        t.data = {0.0, 0.0, xm, 0.0, 0.0, ym, xm, ym};
    }
    return t;
}

namespace {

Image masked_copy(const Image& img, const Mask& mask) {
    Image out = img;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= mask.data[i];
    return out;
}

struct GraphOut {
    ValueId match, kappa, loss;
    bool seg_term = false;
};

// Shared wiring from full landmark values to the scalar loss.
GraphOut emit_registration(Tape& t, ValueId src_full, ValueId tgt_full,
                           const Image& img_s, const Image& img_t,
                           const RegistrationConfig& cfg, const Image* seg_s,
                           const Image* seg_t) {
    const int w = cfg.image_extent[0], h = cfg.image_extent[1];
    require(img_s.width == w && img_s.height == h && img_t.width == w &&
                img_t.height == h,
            "image extent does not match the registration configuration");
    const auto sys = t.tps_system(tgt_full, src_full);
    const auto sol = t.tps_solve(sys.block, sys.kx, sys.ky);
    const ValueId coords = t.transform_grid(sol.wx, sol.wy, tgt_full, w, h);
    const ValueId warped = t.grid_sample(coords, img_s);

    GraphOut out;
    if (cfg.variant == Variant::Localized) {
        require(cfg.mask.has_value(), "localized variant needs a mask");
        require(cfg.mask->same_extent(img_t), "mask extent mismatch");
        const ValueId masked = t.mask_mul(warped, *cfg.mask);
        out.match = t.match_loss_op(masked, masked_copy(img_t, *cfg.mask),
                                    cfg.match);
    } else {
        out.match = t.match_loss_op(warped, img_t, cfg.match);
    }
    out.kappa = t.condition_number_op(sys.block);

    std::vector<std::pair<ValueId, double>> terms = {{out.match, 1.0},
                                                     {out.kappa, cfg.lambda}};
    if (cfg.variant == Variant::Weak && seg_s != nullptr && seg_t != nullptr) {
        // the same warp parameters move the source segmentation
        const ValueId seg_warped = t.grid_sample(coords, *seg_s);
        const ValueId seg_match = t.match_loss_op(seg_warped, *seg_t, cfg.match);
        terms.push_back({seg_match, cfg.beta});
        out.seg_term = true;
    }
    out.loss = t.add_weighted(terms);
    return out;
}

Tensor landmarks_tensor(const LandmarkSet& lms) {
    Tensor t({lms.point_count(), 2});
    t.data = lms.flatten();
    return t;
}

}  // namespace

PairTape build_pair_tape(const LandmarkSet& src_lms, const LandmarkSet& tgt_lms,
                         const Image& img_s, const Image& img_t,
                         const RegistrationConfig& cfg, const Image* seg_s,
                         const Image* seg_t) {
    require(src_lms.anchor_count == 0 && tgt_lms.anchor_count == 0,
            "build_pair_tape expects learned landmarks without anchors");
    PairTape pt;
    pt.src_lms = pt.tape.leaf(landmarks_tensor(src_lms));
    pt.tgt_lms = pt.tape.leaf(landmarks_tensor(tgt_lms));
    const Tensor anchors = cfg.anchor_tensor();
    const ValueId src_full = pt.tape.append_rows_stopgrad(pt.src_lms, anchors);
    const ValueId tgt_full = pt.tape.append_rows_stopgrad(pt.tgt_lms, anchors);
    const auto out = emit_registration(pt.tape, src_full, tgt_full, img_s,
                                       img_t, cfg, seg_s, seg_t);
    pt.match = out.match;
    pt.kappa = out.kappa;
    pt.loss = out.loss;
    pt.seg_term = out.seg_term;
    return pt;
}

SiameseTape build_siamese_tape(const EncoderParams& params, const Image& img_s,
                               const Image& img_t,
                               const RegistrationConfig& cfg,
                               const Image* seg_s, const Image* seg_t) {
    SiameseTape st;
    const auto emit = emit_encoder(st.tape, params, img_s);
    st.param_leaves = emit.param_leaves;
    st.src_lms = emit.landmarks;
    st.tgt_lms = emit_encoder_shared(st.tape, params, st.param_leaves, img_t);
    const Tensor anchors = cfg.anchor_tensor();
    const ValueId src_full = st.tape.append_rows_stopgrad(st.src_lms, anchors);
    const ValueId tgt_full = st.tape.append_rows_stopgrad(st.tgt_lms, anchors);
    const auto out = emit_registration(st.tape, src_full, tgt_full, img_s,
                                       img_t, cfg, seg_s, seg_t);
    st.match = out.match;
    st.kappa = out.kappa;
    st.loss = out.loss;
    return st;
}

PairEval evaluate_pair(const LandmarkSet& src_lms, const LandmarkSet& tgt_lms,
                       const Image& img_s, const Image& img_t,
                       const RegistrationConfig& cfg, bool want_kappa) {
    const auto full = evaluate_pair_full(src_lms, tgt_lms, img_s, img_t, cfg);
    PairEval ev = full.eval;
    if (!want_kappa) ev.kappa = 0.0;
    return ev;
}

PairEvalFull evaluate_pair_full(const LandmarkSet& src_lms,
                                const LandmarkSet& tgt_lms, const Image& img_s,
                                const Image& img_t,
                                const RegistrationConfig& cfg) {
    const auto src_full =
        append_anchors(src_lms, cfg.image_extent, cfg.anchor_count);
    const auto tgt_full =
        append_anchors(tgt_lms, cfg.image_extent, cfg.anchor_count);
    const auto sys = build_system(src_full, tgt_full);
    PairEvalFull out;
    out.warp = solve_system(sys);
    out.registered = warp_image(img_s, out.warp);
    if (cfg.variant == Variant::Localized) {
        require(cfg.mask.has_value(), "localized variant needs a mask");
        out.eval.match = masked_match(img_t, out.registered, *cfg.mask,
                                      *cfg.mask, cfg.match);
    } else {
        out.eval.match = match_loss(img_t, out.registered, cfg.match);
    }
    out.eval.kappa = condition_number(sys);
    out.eval.loss = out.eval.match + cfg.lambda * out.eval.kappa;
    return out;
}

}  // namespace lmk
