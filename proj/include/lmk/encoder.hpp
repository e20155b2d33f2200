#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lmk/autodiff.hpp"
#include "lmk/tps.hpp"

namespace lmk {

// Convolutional landmark encoder: blocks of 3x3 conv + ReLU layers, each
// block followed by a factor-2 max pool, then a fully-connected head with a
// tanh output in [-1,1] scaled to pixel coordinates.
struct ArchDescriptor {
    int input_size = 128;
    int in_channels = 1;
    std::vector<int> convs_per_block = {2, 2, 4, 4};
    std::vector<int> channels = {16, 32, 64, 128};
    int landmark_count = 16;  // learned landmarks M (anchors excluded)

    void validate() const;
    int final_spatial() const;
    int head_inputs() const;
    int head_outputs() const { return 2 * landmark_count; }
    bool operator==(const ArchDescriptor&) const = default;
};

// One contiguous slice of the flat parameter vector.
struct ParamSegment {
    size_t offset = 0;
    size_t length = 0;
    std::vector<int> shape;
};

// Deterministic parameter layout: for each conv layer its weights
// {oc,ic,3,3} then bias {oc}, in block order, followed by the head weights
// {2M, features} and head bias {2M}.
struct ParamLayout {
    std::vector<ParamSegment> segments;
    size_t total = 0;
    static ParamLayout of(const ArchDescriptor& arch);
};

struct EncoderParams {
    ArchDescriptor arch;
    std::vector<double> values;

    size_t param_count() const { return values.size(); }
};

// Deterministic given the seed: fan-in-scaled uniform init for conv and
// head. When mean_landmarks is given, the head weights are zeroed and the
// bias is set so encode() returns those landmarks for any input.
EncoderParams init_params(uint64_t seed, const ArchDescriptor& arch,
                          const std::optional<LandmarkSet>& mean_landmarks = {});

// Forward pass (runs the same tape ops as training, so training and
// inference are bit-identical). Returns learned landmarks only.
LandmarkSet encode(const EncoderParams& params, const Image& img);

// Differentiable forward: emits the encoder onto an existing tape. The
// parameter tensors become leaves (ids aligned with ParamLayout segments);
// returns the {M,2} pixel-coordinate landmark value.
struct EncoderEmit {
    std::vector<ValueId> param_leaves;
    ValueId landmarks = -1;
};
EncoderEmit emit_encoder(Tape& tape, const EncoderParams& params,
                         const Image& img);

// Emits the encoder reusing existing parameter leaves (weight sharing for
// the Siamese second pass on the same tape).
ValueId emit_encoder_shared(Tape& tape, const EncoderParams& params,
                            const std::vector<ValueId>& param_leaves,
                            const Image& img);

// Accumulates the tape's parameter-leaf gradients into a flat vector laid
// out like EncoderParams::values.
void accumulate_param_grads(const Tape& tape,
                            const std::vector<ValueId>& param_leaves,
                            const ArchDescriptor& arch,
                            std::vector<double>& flat_grad);

// Model checkpoint container. Binary layout:
//   bytes 0..7   magic "LMKCKPT1"
//   u32          JSON header length (little-endian)
//   ...          JSON header: arch, anchor_count, param_count, metadata,
//                optional kept_indices (surviving learned landmarks after
//                pruning)
//   f64[...]     parameters, little-endian
struct Checkpoint {
    EncoderParams params;
    int anchor_count = 4;
    std::map<std::string, std::string> metadata;
    std::optional<std::vector<int>> kept_indices;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lmk
