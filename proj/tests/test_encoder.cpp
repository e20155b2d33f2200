#include <doctest.h>

#include <filesystem>

#include "lmk/encoder.hpp"
#include "test_util.hpp"

using namespace lmk;

namespace {

ArchDescriptor tiny_arch() {
    ArchDescriptor arch;
    arch.input_size = 32;
    arch.convs_per_block = {2, 2};
    arch.channels = {4, 8};
    arch.landmark_count = 5;
    return arch;
}

}  // namespace

TEST_CASE("parameter layout is consistent and dense") {
    const auto arch = tiny_arch();
    const auto layout = ParamLayout::of(arch);
    size_t expect = 0;
    expect += 4 * 1 * 9 + 4;   // block 1 conv 1
    expect += 4 * 4 * 9 + 4;   // block 1 conv 2
    expect += 8 * 4 * 9 + 8;   // block 2 conv 1
    expect += 8 * 8 * 9 + 8;   // block 2 conv 2
    expect += 10 * (8 * 8 * 8) + 10;  // head: 2M x (channels * 8 * 8)
    CHECK(layout.total == expect);
    size_t off = 0;
    for (const auto& seg : layout.segments) {
        CHECK(seg.offset == off);
        off += seg.length;
    }
    CHECK(off == layout.total);
}

TEST_CASE("init_params is deterministic per seed") {
    const auto arch = tiny_arch();
    const auto a = init_params(7, arch);
    const auto b = init_params(7, arch);
    const auto c = init_params(8, arch);
    CHECK(a.values == b.values);
    CHECK(a.values != c.values);
}

TEST_CASE("zeroed head puts every landmark at the image center") {
    const auto arch = tiny_arch();
    auto params = init_params(3, arch);
    const auto layout = ParamLayout::of(arch);
    const auto& hw = layout.segments[layout.segments.size() - 2];
    const auto& hb = layout.segments[layout.segments.size() - 1];
    std::fill_n(params.values.begin() + hw.offset, hw.length + hb.length, 0.0);
    const auto img = test::gaussian_blobs_image(32, 32, 9);
    const auto lms = encode(params, img);
    const double center = (32 - 1) / 2.0;
    for (const auto& p : lms.points) {
        CHECK(p.x == doctest::Approx(center).epsilon(1e-12));
        CHECK(p.y == doctest::Approx(center).epsilon(1e-12));
    }
}

TEST_CASE("mean-landmark initialization reproduces the landmarks") {
    const auto arch = tiny_arch();
    LandmarkSet mean;
    Rng rng(10);
    for (int i = 0; i < 5; ++i)
        mean.points.push_back({rng.uniform(2.0, 29.0), rng.uniform(2.0, 29.0)});
    const auto params = init_params(11, arch, mean);
    for (uint64_t s : {1ull, 2ull, 3ull}) {
        const auto img = test::texture_image(32, 32, s);
        const auto lms = encode(params, img);
        for (int i = 0; i < 5; ++i) {
            CHECK(std::abs(lms.points[i].x - mean.points[i].x) <= 1e-6);
            CHECK(std::abs(lms.points[i].y - mean.points[i].y) <= 1e-6);
        }
    }
}

TEST_CASE("encode is deterministic and stays inside the image rectangle") {
    const auto arch = tiny_arch();
    const auto params = init_params(21, arch);
    const auto img = test::gaussian_blobs_image(32, 32, 22);
    const auto a = encode(params, img);
    const auto b = encode(params, img);
    for (int i = 0; i < 5; ++i) {
        CHECK(a.points[i].x == b.points[i].x);
        CHECK(a.points[i].y == b.points[i].y);
        CHECK(a.points[i].x >= 0.0);
        CHECK(a.points[i].x <= 31.0);
        CHECK(a.points[i].y >= 0.0);
        CHECK(a.points[i].y <= 31.0);
    }
}

TEST_CASE("encode rejects a mismatched input extent") {
    const auto params = init_params(4, tiny_arch());
    const auto img = test::gaussian_blobs_image(16, 32, 5);
    CHECK_THROWS_AS(encode(params, img), Error);
}

TEST_CASE("encoder gradients match finite differences on a tiny net") {
    ArchDescriptor arch;
    arch.input_size = 16;
    arch.convs_per_block = {2, 2};
    arch.channels = {3, 4};
    arch.landmark_count = 4;
    auto params = init_params(31, arch);
    const auto img = test::gaussian_blobs_image(16, 16, 32);
    Rng rng(33);
    std::vector<double> red(size_t(arch.landmark_count) * 2);
    for (auto& v : red) v = rng.uniform(-1.0, 1.0);

    auto fn = [&](const std::vector<double>& p) {
        EncoderParams ep;
        ep.arch = arch;
        ep.values = p;
        Tape tape;
        const auto emit = emit_encoder(tape, ep, img);
        return tape.value(tape.dot_const(emit.landmarks, red)).value();
    };
    auto grad = [&](const std::vector<double>& p) {
        EncoderParams ep;
        ep.arch = arch;
        ep.values = p;
        Tape tape;
        const auto emit = emit_encoder(tape, ep, img);
        tape.backward(tape.dot_const(emit.landmarks, red));
        std::vector<double> g;
        accumulate_param_grads(tape, emit.param_leaves, arch, g);
        return g;
    };
    CHECK(fd_check(fn, grad, params.values, 1e-6) <= 1e-4);
}

TEST_CASE("siamese emission shares one parameter store") {
    const auto arch = tiny_arch();
    const auto params = init_params(41, arch);
    const auto img_a = test::gaussian_blobs_image(32, 32, 42);
    const auto img_b = test::gaussian_blobs_image(32, 32, 43);

    Tape tape;
    const auto emit = emit_encoder(tape, params, img_a);
    const ValueId lms_b = emit_encoder_shared(tape, params, emit.param_leaves, img_b);
    // both passes read the same leaves; gradients from both accumulate there
    Rng rng(44);
    std::vector<double> red(10);
    for (auto& v : red) v = rng.uniform(-1.0, 1.0);
    const ValueId la = tape.dot_const(emit.landmarks, red);
    const ValueId lb = tape.dot_const(lms_b, red);
    tape.backward(tape.add_weighted({{la, 1.0}, {lb, 1.0}}));
    std::vector<double> g_both;
    accumulate_param_grads(tape, emit.param_leaves, arch, g_both);

    Tape ta;
    const auto ea = emit_encoder(ta, params, img_a);
    ta.backward(ta.dot_const(ea.landmarks, red));
    std::vector<double> ga;
    accumulate_param_grads(ta, ea.param_leaves, arch, ga);
    Tape tb;
    const auto eb = emit_encoder(tb, params, img_b);
    tb.backward(tb.dot_const(eb.landmarks, red));
    std::vector<double> gb;
    accumulate_param_grads(tb, eb.param_leaves, arch, gb);

    for (size_t i = 0; i < g_both.size(); ++i)
        CHECK(g_both[i] == doctest::Approx(ga[i] + gb[i]).epsilon(1e-12));
}

TEST_CASE("fixed-seed forward matches the frozen regression vector") {
    // golden values recorded from the first run of this configuration
    const auto arch = tiny_arch();
    const auto params = init_params(20240817, arch);
    const auto img = test::gaussian_blobs_image(32, 32, 616);
    const auto lms = encode(params, img);
    const double golden[5][2] = {
        {20.204545200266946, 16.926696560164395},
        {9.9264061930390444, 19.480008062109725},
        {11.977331801075341, 21.102191727883785},
        {11.857158710329752, 22.941095074939984},
        {18.516570113295465, 20.143262624239956},
    };
    for (int i = 0; i < 5; ++i) {
        CHECK(lms.points[i].x == doctest::Approx(golden[i][0]).epsilon(1e-9));
        CHECK(lms.points[i].y == doctest::Approx(golden[i][1]).epsilon(1e-9));
    }
}

TEST_CASE("checkpoint round trip is bit-exact") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "lmk_ckpt_test";
    fs::create_directories(dir);
    const auto path = (dir / "model.ckpt").string();

    Checkpoint ckpt;
    ckpt.params = init_params(51, tiny_arch());
    ckpt.anchor_count = 4;
    ckpt.metadata = {{"loss", "l2"}, {"lambda", "1e-06"}};
    ckpt.kept_indices = std::vector<int>{0, 2, 3};
    save_checkpoint(ckpt, path);

    const auto back = load_checkpoint(path);
    CHECK(back.params.arch == ckpt.params.arch);
    CHECK(back.params.values == ckpt.params.values);
    CHECK(back.anchor_count == 4);
    CHECK(back.metadata.at("loss") == "l2");
    REQUIRE(back.kept_indices.has_value());
    CHECK(*back.kept_indices == std::vector<int>{0, 2, 3});
    fs::remove_all(dir);
}
