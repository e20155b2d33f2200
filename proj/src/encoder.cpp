#include "lmk/encoder.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

namespace lmk {

void ArchDescriptor::validate() const {
    require(input_size > 0 && in_channels > 0, "bad encoder input description");
    require(!convs_per_block.empty() &&
                convs_per_block.size() == channels.size(),
            "convs_per_block and channels must have the same length");
    for (size_t i = 0; i < channels.size(); ++i) {
        require(channels[i] > 0 && convs_per_block[i] > 0,
                "block sizes must be positive");
    }
    int s = input_size;
    for (size_t i = 0; i < channels.size(); ++i) {
        require(s % 2 == 0, "input size must halve at every pool");
        s /= 2;
    }
    require(s > 0, "too many pooling stages for the input size");
    require(landmark_count >= 1, "landmark_count must be at least 1");
}

int ArchDescriptor::final_spatial() const {
    int s = input_size;
    for (size_t i = 0; i < channels.size(); ++i) s /= 2;
    return s;
}

int ArchDescriptor::head_inputs() const {
    const int fs = final_spatial();
    return channels.back() * fs * fs;
}

ParamLayout ParamLayout::of(const ArchDescriptor& arch) {
    arch.validate();
    ParamLayout layout;
    size_t off = 0;
    auto add = [&](std::vector<int> shape) {
        ParamSegment seg;
        seg.offset = off;
        seg.length = Tensor::element_count(shape);
        seg.shape = std::move(shape);
        off += seg.length;
        layout.segments.push_back(seg);
    };
    int in_c = arch.in_channels;
    for (size_t blk = 0; blk < arch.channels.size(); ++blk) {
        const int out_c = arch.channels[blk];
        for (int conv = 0; conv < arch.convs_per_block[blk]; ++conv) {
            add({out_c, in_c, 3, 3});
            add({out_c});
            in_c = out_c;
        }
    }
    add({arch.head_outputs(), arch.head_inputs()});
    add({arch.head_outputs()});
    layout.total = off;
    return layout;
}

EncoderParams init_params(uint64_t seed, const ArchDescriptor& arch,
                          const std::optional<LandmarkSet>& mean_landmarks) {
    const ParamLayout layout = ParamLayout::of(arch);
    EncoderParams params;
    params.arch = arch;
    params.values.assign(layout.total, 0.0);
    Rng rng(seed);
    // conv weights: Kaiming-style fan-in uniform, biases zero
    const size_t n_seg = layout.segments.size();
    for (size_t s = 0; s + 2 < n_seg; s += 2) {
        const auto& wseg = layout.segments[s];
        const int fan_in = wseg.shape[1] * 9;
        const double bound = std::sqrt(6.0 / fan_in);
        for (size_t i = 0; i < wseg.length; ++i)
            params.values[wseg.offset + i] = rng.uniform(-bound, bound);
    }
    const auto& hw = layout.segments[n_seg - 2];
    const auto& hb = layout.segments[n_seg - 1];
    if (mean_landmarks.has_value()) {
        require(mean_landmarks->point_count() == arch.landmark_count,
                "mean landmark count does not match the architecture");
        // zero head weights; bias = atanh of the normalized coordinates so
        // the encoder emits the mean landmarks for any input
        const double half = (arch.input_size - 1) / 2.0;
        for (int i = 0; i < arch.landmark_count; ++i) {
            const auto& p = mean_landmarks->points[i];
            const double nx = std::clamp(p.x / half - 1.0, -0.999999, 0.999999);
            const double ny = std::clamp(p.y / half - 1.0, -0.999999, 0.999999);
            params.values[hb.offset + 2 * i] = std::atanh(nx);
            params.values[hb.offset + 2 * i + 1] = std::atanh(ny);
        }
    } else {
        const double bound = std::sqrt(1.0 / hw.shape[1]);
        for (size_t i = 0; i < hw.length; ++i)
            params.values[hw.offset + i] = rng.uniform(-bound, bound);
        for (size_t i = 0; i < hb.length; ++i)
            params.values[hb.offset + i] = rng.uniform(-bound, bound);
    }
    return params;
}

namespace {

Tensor image_tensor(const Image& img, int channels) {
    require(channels == 1, "multi-channel input images are not supported");
    Tensor t({1, img.height, img.width});
    t.data = img.data;
    return t;
}

ValueId emit_body(Tape& tape, const ArchDescriptor& arch,
                  const std::vector<ValueId>& leaves, const Image& img) {
    require(img.width == arch.input_size && img.height == arch.input_size,
            "image extent " + std::to_string(img.width) + "x" +
                std::to_string(img.height) +
                " does not match the encoder input size " +
                std::to_string(arch.input_size));
    ValueId x = tape.leaf(image_tensor(img, arch.in_channels));
    size_t li = 0;
    for (size_t blk = 0; blk < arch.channels.size(); ++blk) {
        for (int conv = 0; conv < arch.convs_per_block[blk]; ++conv) {
            const ValueId w = leaves[li++];
            const ValueId b = leaves[li++];
            x = tape.conv3x3(x, w, b, /*relu=*/true);
        }
        x = tape.maxpool2(x);
    }
    x = tape.reshape(x, {arch.head_inputs()});
    const ValueId hw = leaves[li++];
    const ValueId hb = leaves[li++];
    x = tape.tanh_op(tape.linear(x, hw, hb));
    x = tape.reshape(x, {arch.landmark_count, 2});
    const double half = (arch.input_size - 1) / 2.0;
    return tape.scale_shift_cols(x, half, half, half, half);
}

}  // namespace

EncoderEmit emit_encoder(Tape& tape, const EncoderParams& params,
                         const Image& img) {
    const ParamLayout layout = ParamLayout::of(params.arch);
    require(params.values.size() == layout.total,
            "parameter vector length does not match the architecture");
    EncoderEmit emit;
    emit.param_leaves.reserve(layout.segments.size());
    for (const auto& seg : layout.segments) {
        Tensor t(seg.shape);
        std::copy(params.values.begin() + seg.offset,
                  params.values.begin() + seg.offset + seg.length,
                  t.data.begin());
        emit.param_leaves.push_back(tape.leaf(std::move(t)));
    }
    emit.landmarks = emit_body(tape, params.arch, emit.param_leaves, img);
    return emit;
}

ValueId emit_encoder_shared(Tape& tape, const EncoderParams& params,
                            const std::vector<ValueId>& param_leaves,
                            const Image& img) {
    return emit_body(tape, params.arch, param_leaves, img);
}

void accumulate_param_grads(const Tape& tape,
                            const std::vector<ValueId>& param_leaves,
                            const ArchDescriptor& arch,
                            std::vector<double>& flat_grad) {
    const ParamLayout layout = ParamLayout::of(arch);
    require(param_leaves.size() == layout.segments.size(),
            "parameter leaf count mismatch");
    if (flat_grad.size() != layout.total) flat_grad.assign(layout.total, 0.0);
    for (size_t s = 0; s < layout.segments.size(); ++s) {
        const auto& seg = layout.segments[s];
        const auto& g = tape.grad(param_leaves[s]).data;
        for (size_t i = 0; i < seg.length; ++i) flat_grad[seg.offset + i] += g[i];
    }
}

LandmarkSet encode(const EncoderParams& params, const Image& img) {
    Tape tape;
    const auto emit = emit_encoder(tape, params, img);
    const auto& v = tape.value(emit.landmarks);
    LandmarkSet lms;
    lms.points.resize(size_t(params.arch.landmark_count));
    for (int i = 0; i < params.arch.landmark_count; ++i)
        lms.points[i] = {v.data[2 * i], v.data[2 * i + 1]};
    return lms;
}

// ---------------------------------------------------------------------------
// checkpoint io

static const char kCkptMagic[8] = {'L', 'M', 'K', 'C', 'K', 'P', 'T', '1'};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::json header;
    header["arch"] = {
        {"input_size", ckpt.params.arch.input_size},
        {"in_channels", ckpt.params.arch.in_channels},
        {"convs_per_block", ckpt.params.arch.convs_per_block},
        {"channels", ckpt.params.arch.channels},
        {"landmark_count", ckpt.params.arch.landmark_count},
    };
    header["anchor_count"] = ckpt.anchor_count;
    header["param_count"] = ckpt.params.values.size();
    header["metadata"] = ckpt.metadata;
    if (ckpt.kept_indices.has_value()) header["kept_indices"] = *ckpt.kept_indices;
    const std::string hs = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        require(out.good(), "cannot write checkpoint: " + path);
        out.write(kCkptMagic, 8);
        const uint32_t len = uint32_t(hs.size());
        out.write(reinterpret_cast<const char*>(&len), 4);
        out.write(hs.data(), std::streamsize(hs.size()));
        out.write(reinterpret_cast<const char*>(ckpt.params.values.data()),
                  std::streamsize(ckpt.params.values.size() * sizeof(double)));
        require(out.good(), "checkpoint write failure: " + path);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    require(in.gcount() == 8 && std::memcmp(magic, kCkptMagic, 8) == 0,
            "not a checkpoint file: " + path);
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    require(bool(in) && len > 0 && len < (1u << 24), "bad checkpoint header");
    std::string hs(len, '\0');
    in.read(hs.data(), len);
    require(bool(in), "truncated checkpoint header");
    const auto header = nlohmann::json::parse(hs);

    Checkpoint ckpt;
    const auto& a = header.at("arch");
    ckpt.params.arch.input_size = a.at("input_size").get<int>();
    ckpt.params.arch.in_channels = a.at("in_channels").get<int>();
    ckpt.params.arch.convs_per_block =
        a.at("convs_per_block").get<std::vector<int>>();
    ckpt.params.arch.channels = a.at("channels").get<std::vector<int>>();
    ckpt.params.arch.landmark_count = a.at("landmark_count").get<int>();
    ckpt.params.arch.validate();
    ckpt.anchor_count = header.at("anchor_count").get<int>();
    if (header.contains("metadata"))
        ckpt.metadata =
            header.at("metadata").get<std::map<std::string, std::string>>();
    if (header.contains("kept_indices"))
        ckpt.kept_indices = header.at("kept_indices").get<std::vector<int>>();

    const size_t n = header.at("param_count").get<size_t>();
    require(n == ParamLayout::of(ckpt.params.arch).total,
            "checkpoint parameter count does not match its architecture");
    ckpt.params.values.resize(n);
    in.read(reinterpret_cast<char*>(ckpt.params.values.data()),
            std::streamsize(n * sizeof(double)));
    require(in.gcount() == std::streamsize(n * sizeof(double)),
            "truncated checkpoint parameters");
    return ckpt;
}

}  // namespace lmk
