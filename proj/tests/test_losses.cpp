#include <doctest.h>

#include "lmk/losses.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace lmk;

TEST_CASE("l2_match basics") {
    const auto img = test::texture_image(8, 8, 1);
    CHECK(l2_match(img, img) == 0.0);

    Image zeros(4, 4, 0.0), ones(4, 4, 1.0);
    CHECK(l2_match(zeros, ones) == doctest::Approx(1.0).epsilon(1e-15));

    const auto a = test::texture_image(4, 4, 2);
    const auto b = test::texture_image(4, 4, 3);
    CHECK(l2_match(a, b) == doctest::Approx(test::oracle_l2(a, b)).epsilon(1e-12));

    Image wrong(4, 5, 0.0);
    CHECK_THROWS_AS(l2_match(zeros, wrong), Error);
}

TEST_CASE("ncc_match self, anti-correlation and oracle") {
    const auto img = test::texture_image(8, 8, 4);
    CHECK(ncc_match(img, img, 3) == doctest::Approx(0.0).epsilon(1e-12));

    Image neg = img;
    for (auto& v : neg.data) v = 1.0 - v;  // c - I anti-correlates every patch
    CHECK(ncc_match(img, neg, 3) == doctest::Approx(2.0).epsilon(1e-12));

    const auto a = test::texture_image(8, 8, 5);
    const auto b = test::texture_image(8, 8, 6);
    CHECK(std::abs(ncc_match(a, b, 3) - test::oracle_ncc(a, b, 3)) <= 1e-10);

    CHECK_THROWS_AS(ncc_match(a, b, 4), Error);   // even patch
    CHECK_THROWS_AS(ncc_match(a, b, 9), Error);   // larger than image
}

TEST_CASE("ncc_match flat patches contribute zero") {
    Image flat(6, 6, 0.5);
    const auto img = test::texture_image(6, 6, 7);
    // every target patch is flat -> each patch NCC = 0 -> loss = 1
    CHECK(ncc_match(flat, img, 3) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mind_feature constant, periodic, oracle") {
    MindConfig cfg;
    Image flat(9, 9, 0.42);
    CHECK(mind_feature(flat, 4, 4, cfg, {5, 0}) == 1.0);

    // periodic along r with period ||r||: displaced patch is identical
    Image per(9, 16);
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 16; ++x) per.at(y, x) = 0.5 + 0.3 * std::sin(2.0 * M_PI * x / 5.0);
    CHECK(mind_feature(per, 5, 4, cfg, {5, 0}) == doctest::Approx(1.0).epsilon(1e-12));

    const auto img = test::texture_image(7, 7, 8);
    const double got = mind_feature(img, 3, 3, cfg, {5, 0});
    const double want = test::oracle_mind_feature(img, 3, 3, 3, 5, 0, 1e-6);
    CHECK(std::abs(got - want) <= 1e-10);
    CHECK(got > 0.0);
    CHECK(got <= 1.0);
}

TEST_CASE("mind_match identical, oracle and intensity robustness") {
    MindConfig cfg;
    const auto img = test::texture_image(8, 8, 9);
    CHECK(mind_match(img, img, cfg) == 0.0);

    const auto a = test::texture_image(8, 8, 10);
    const auto b = test::texture_image(8, 8, 11);
    const double want =
        test::oracle_mind(a, b, cfg.patch_size, cfg.displacements, cfg.variance_floor);
    CHECK(std::abs(mind_match(a, b, cfg) - want) <= 1e-10);

    // global intensity rescale: map the texture into [0.1, 0.4] so a*I + c
    // stays inside [0,1], then compare MIND and L2 responses
    Image base = test::texture_image(12, 12, 12);
    for (auto& v : base.data) v = 0.1 + 0.3 * v;
    Image rescaled = base;
    for (auto& v : rescaled.data) v = std::clamp(2.0 * v + 0.1, 0.0, 1.0);
    const double mind_v = mind_match(base, rescaled, cfg);
    const double l2_v = l2_match(base, rescaled);
    CHECK(mind_v <= 0.1 * l2_v);
}

TEST_CASE("losses are symmetric in their arguments") {
    const auto a = test::texture_image(8, 8, 13);
    const auto b = test::texture_image(8, 8, 14);
    MindConfig cfg;
    CHECK(l2_match(a, b) == l2_match(b, a));
    CHECK(ncc_match(a, b, 3) == doctest::Approx(ncc_match(b, a, 3)).epsilon(1e-14));
    CHECK(mind_match(a, b, cfg) == doctest::Approx(mind_match(b, a, cfg)).epsilon(1e-14));
}

TEST_CASE("masked_match all-ones, all-zeros and blurred box oracle") {
    const auto a = test::texture_image(10, 10, 15);
    const auto b = test::texture_image(10, 10, 16);
    MatchSpec spec;  // L2
    Image ones(10, 10, 1.0), zeros(10, 10, 0.0);
    CHECK(masked_match(a, b, ones, ones, spec) == l2_match(a, b));
    CHECK(masked_match(a, b, zeros, zeros, spec) == 0.0);

    // box with a softly blurred border
    Image mask(10, 10, 0.0);
    for (int y = 2; y < 8; ++y)
        for (int x = 2; x < 8; ++x) mask.at(y, x) = 1.0;
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x)
            if (mask.at(y, x) == 0.0) {
                const double dy = std::max(0, std::max(2 - y, y - 7));
                const double dx = std::max(0, std::max(2 - x, x - 7));
                mask.at(y, x) = std::exp(-(dx * dx + dy * dy) / 2.0);
            }
    validate_mask(mask);
    const double got = masked_match(a, b, mask, mask, spec);
    CHECK(std::abs(got - test::oracle_masked_l2(a, b, mask, mask)) <= 1e-12);
}

TEST_CASE("validate_mask rejects all-zero and out-of-range data") {
    Image zeros(4, 4, 0.0);
    CHECK_THROWS_AS(validate_mask(zeros), Error);
    Image high(4, 4, 1.5);
    CHECK_THROWS_AS(validate_mask(high), Error);
}

TEST_CASE("total_loss arithmetic") {
    CHECK(total_loss(0.3, 123.0, 0.0) == 0.3);
    CHECK(total_loss(0.5, 100.0, 0.005) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(total_loss(0.2, 2.5, 1.0) == doctest::Approx(2.7).epsilon(1e-15));
    CHECK_THROWS_AS(total_loss(0.1, 1.0, -0.5), Error);
}

TEST_CASE("weak_loss indicator behavior") {
    CHECK(weak_loss(0.4, 10.0, std::nullopt, 0.01, 1.0) ==
          doctest::Approx(total_loss(0.4, 10.0, 0.01)).epsilon(1e-15));
    CHECK(weak_loss(1.0, 0.0, 2.0, 0.0, 0.5) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(weak_loss(0.4, 10.0, 2.0, 0.01, 0.0) ==
          doctest::Approx(total_loss(0.4, 10.0, 0.01)).epsilon(1e-15));
}

TEST_CASE("loss kind parsing round trips") {
    CHECK(parse_loss_kind("l2") == LossKind::L2);
    CHECK(parse_loss_kind("ncc") == LossKind::Ncc);
    CHECK(parse_loss_kind("mind") == LossKind::Mind);
    CHECK(loss_kind_name(LossKind::Mind) == "mind");
    CHECK_THROWS_AS(parse_loss_kind("mse"), Error);
}

TEST_CASE("brute-force equivalence on 16x16 images") {
    const auto a = test::texture_image(16, 16, 17);
    const auto b = test::texture_image(16, 16, 18);
    MindConfig cfg;
    CHECK(std::abs(l2_match(a, b) - test::oracle_l2(a, b)) <= 1e-10);
    CHECK(std::abs(ncc_match(a, b, 3) - test::oracle_ncc(a, b, 3)) <= 1e-10);
    CHECK(std::abs(ncc_match(a, b, 5) - test::oracle_ncc(a, b, 5)) <= 1e-10);
    CHECK(std::abs(mind_match(a, b, cfg) -
                   test::oracle_mind(a, b, 3, cfg.displacements, 1e-6)) <= 1e-10);
}

TEST_CASE("loss gradient kernels match finite differences") {
    const auto t = test::texture_image(8, 8, 19);
    auto r = test::texture_image(8, 8, 20);
    MindConfig cfg;
    cfg.displacements = {{3, 0}, {0, 3}};

    struct Case {
        const char* name;
        std::function<double(const Image&)> f;
        std::function<double(const Image&, std::vector<double>&)> fg;
    };
    std::vector<Case> cases = {
        {"l2", [&](const Image& x) { return l2_match(t, x); },
         [&](const Image& x, std::vector<double>& g) { return l2_match_grad(t, x, g); }},
        {"ncc", [&](const Image& x) { return ncc_match(t, x, 3); },
         [&](const Image& x, std::vector<double>& g) {
             return ncc_match_grad(t, x, 3, g);
         }},
        {"mind", [&](const Image& x) { return mind_match(t, x, cfg); },
         [&](const Image& x, std::vector<double>& g) {
             return mind_match_grad(t, x, cfg, g);
         }},
    };
    for (auto& c : cases) {
        CAPTURE(c.name);
        std::vector<double> g;
        const double v0 = c.fg(r, g);
        CHECK(v0 == doctest::Approx(c.f(r)).epsilon(1e-14));
        Rng rng(21);
        for (int k = 0; k < 12; ++k) {
            const size_t i = rng.uniform_int(r.data.size());
            const double h = 1e-6;
            Image rp = r, rm = r;
            rp.data[i] += h;
            rm.data[i] -= h;
            const double fd = (c.f(rp) - c.f(rm)) / (2 * h);
            CHECK(g[i] == doctest::Approx(fd).epsilon(5e-5));
        }
    }
}
