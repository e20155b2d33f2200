#include <doctest.h>

#include "lmk/tps.hpp"
#include "test_util.hpp"

using namespace lmk;

namespace {

LandmarkSet make_set(std::vector<Point2> pts, int anchors = 0) {
    LandmarkSet lms;
    lms.points = std::move(pts);
    lms.anchor_count = anchors;
    return lms;
}

}  // namespace

TEST_CASE("append_anchors places the four image corners") {
    LandmarkSet lms;
    for (int i = 0; i < 16; ++i) lms.points.push_back({10.0 + i, 20.0 + i});
    const auto out = append_anchors(lms, {256, 256}, 4);
    CHECK(out.point_count() == 20);
    CHECK(out.anchor_count == 4);
    CHECK(out.points[16].x == 0.0);
    CHECK(out.points[16].y == 0.0);
    CHECK(out.points[17].x == 255.0);
    CHECK(out.points[17].y == 0.0);
    CHECK(out.points[18].x == 0.0);
    CHECK(out.points[18].y == 255.0);
    CHECK(out.points[19].x == 255.0);
    CHECK(out.points[19].y == 255.0);
    for (int i = 0; i < 16; ++i) {
        CHECK(out.points[i].x == lms.points[i].x);
        CHECK(out.points[i].y == lms.points[i].y);
    }
}

TEST_CASE("append_anchors count 0 is the identity") {
    auto lms = make_set({{1, 2}, {3, 4}, {5, 6}});
    const auto out = append_anchors(lms, {64, 64}, 0);
    CHECK(out.point_count() == 3);
    CHECK(out.anchor_count == 0);
}

TEST_CASE("append_anchors small set, extent 64") {
    auto lms = make_set({{1, 2}, {3, 4}, {5, 6}});
    const auto out = append_anchors(lms, {64, 64}, 4);
    REQUIRE(out.point_count() == 7);
    CHECK(out.anchor_count == 4);
    CHECK(out.points[4].x == 63.0);
    CHECK(out.points[4].y == 0.0);
    CHECK(out.points[6].x == 63.0);
    CHECK(out.points[6].y == 63.0);
}

TEST_CASE("append_anchors rejects other counts") {
    auto lms = make_set({{1, 2}, {3, 4}, {5, 6}});
    CHECK_THROWS_AS(append_anchors(lms, {64, 64}, 2), Error);
    CHECK_THROWS_AS(append_anchors(lms, {64, 64}, 8), Error);
}

TEST_CASE("build_system lays out the Appendix block") {
    // kernel from the target points (0,0),(1,0),(0,1)
    auto pts = make_set({{0, 0}, {1, 0}, {0, 1}});
    auto shifted = make_set({{2, 3}, {3, 3}, {2, 4}});
    const auto sys = build_system(shifted, pts);
    REQUIRE(sys.block.rows() == 6);
    REQUIRE(sys.block.cols() == 6);

    // constraint rows
    CHECK(sys.block(0, 0) == 0.0);
    CHECK(sys.block(0, 1) == 1.0);
    CHECK(sys.block(0, 2) == 0.0);
    CHECK(sys.block(1, 2) == 1.0);
    CHECK(sys.block(2, 0) == 1.0);
    CHECK(sys.block(2, 1) == 1.0);
    CHECK(sys.block(0, 3) == 0.0);
    CHECK(sys.block(2, 5) == 0.0);

    // kernel sub-block: unit distances give phi(1) = 0; the only nonzero
    // off-diagonal pair is at distance sqrt(2). Independent scalar check:
    const double r = std::sqrt(2.0);
    const double phi_sqrt2 = r * r * std::log(r);
    CHECK(phi_sqrt2 == doctest::Approx(0.6931471805599453).epsilon(1e-12));
    CHECK(sys.block(3 + 1, 2) == doctest::Approx(phi_sqrt2).epsilon(1e-12));
    CHECK(sys.block(3 + 2, 1) == doctest::Approx(phi_sqrt2).epsilon(1e-12));
    CHECK(sys.block(3 + 0, 1) == 0.0);  // distance 1
    CHECK(sys.block(3 + 0, 2) == 0.0);

    // kernel diagonal is exactly zero
    for (int i = 0; i < 3; ++i) CHECK(sys.block(3 + i, i) == 0.0);

    // affine columns of the interpolation rows
    CHECK(sys.block(3, 3) == 0.0);
    CHECK(sys.block(3, 4) == 0.0);
    CHECK(sys.block(3, 5) == 1.0);
    CHECK(sys.block(4, 3) == 1.0);

    // rhs carries the source coordinates after three zeros
    CHECK(sys.kx(0) == 0.0);
    CHECK(sys.kx(1) == 0.0);
    CHECK(sys.kx(2) == 0.0);
    CHECK(sys.kx(3) == 2.0);
    CHECK(sys.ky(5) == 4.0);
}

TEST_CASE("matrix_a is block-diagonal with two identical blocks") {
    Rng rng(7);
    const auto src = test::random_landmarks(rng, 6, 64, 64, 4.0);
    const auto tgt = test::random_landmarks(rng, 6, 64, 64, 4.0);
    const auto sys = build_system(src, tgt);
    const auto a = sys.matrix_a();
    const int n = int(sys.block.rows());
    CHECK((a.topLeftCorner(n, n) - sys.block).norm() == 0.0);
    CHECK((a.bottomRightCorner(n, n) - sys.block).norm() == 0.0);
    CHECK(a.topRightCorner(n, n).norm() == 0.0);
    CHECK(a.bottomLeftCorner(n, n).norm() == 0.0);
    // kernel sub-block symmetry
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j)
            CHECK(sys.block(3 + i, j) == doctest::Approx(sys.block(3 + j, i)));
}

TEST_CASE("build_system rejects mismatched or non-finite input") {
    auto a = make_set({{0, 0}, {1, 0}, {0, 1}, {1, 1}});
    auto b = make_set({{0, 0}, {1, 0}, {0, 1}});
    CHECK_THROWS_AS(build_system(a, b), Error);
    auto c = make_set({{0, 0}, {1, 0}, {0, 1}, {1, std::nan("")}});
    CHECK_THROWS_AS(build_system(a, c), Error);
}

TEST_CASE("solve_system identity correspondence") {
    Rng rng(11);
    const auto pts = test::random_landmarks(rng, 8, 100, 100, 6.0);
    const auto sys = build_system(pts, pts);
    const auto params = solve_system(sys);
    CHECK(params.rbf_weights.norm() <= 1e-10);
    CHECK(params.affine(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(params.affine(1, 0) == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(std::abs(params.affine(2, 0)) <= 1e-8);
    CHECK(params.affine(1, 1) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(std::abs(params.affine(0, 1)) <= 1e-8);
}

TEST_CASE("solve_system pure translation is affine only") {
    // The solved transform maps the kernel (target-argument) points onto
    // the rhs (source-argument) points, so with source = target + (5,0)
    // it is the translation x -> x + (5,0).
    Rng rng(13);
    const auto tgt = test::random_landmarks(rng, 8, 100, 100, 6.0);
    LandmarkSet src = tgt;
    for (auto& p : src.points) p.x += 5.0;
    const auto params = solve_system(build_system(src, tgt));
    CHECK(params.rbf_weights.norm() <= 1e-8);
    CHECK(params.affine(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(params.affine(2, 0) == doctest::Approx(5.0).epsilon(1e-8));
    CHECK(std::abs(params.affine(2, 1)) <= 1e-8);

    const auto moved = apply_transform(params, {{10.0, 20.0}});
    CHECK(moved[0].x == doctest::Approx(15.0).epsilon(1e-10));
    CHECK(moved[0].y == doctest::Approx(20.0).epsilon(1e-10));
}

TEST_CASE("solve_system residual is small") {
    Rng rng(17);
    for (int rep = 0; rep < 5; ++rep) {
        const auto src = test::random_landmarks(rng, 8, 128, 128, 5.0);
        const auto tgt = test::random_landmarks(rng, 8, 128, 128, 5.0);
        const auto sys = build_system(src, tgt);
        const auto params = solve_system(sys);
        Eigen::VectorXd wx(sys.block.rows()), wy(sys.block.rows());
        wx << params.rbf_weights.col(0), params.affine.col(0);
        wy << params.rbf_weights.col(1), params.affine.col(1);
        CHECK((sys.block * wx - sys.kx).norm() <= 1e-8 * sys.kx.norm());
        CHECK((sys.block * wy - sys.ky).norm() <= 1e-8 * sys.ky.norm());

        // orthogonality constraints hold after solving
        for (int c = 0; c < 2; ++c) {
            double s0 = 0, sx = 0, sy = 0;
            for (int i = 0; i < 8; ++i) {
                s0 += params.rbf_weights(i, c);
                sx += tgt.points[i].x * params.rbf_weights(i, c);
                sy += tgt.points[i].y * params.rbf_weights(i, c);
            }
            CHECK(std::abs(s0) <= 1e-8);
            CHECK(std::abs(sx) <= 1e-8);
            CHECK(std::abs(sy) <= 1e-8);
        }
    }
}

TEST_CASE("solve_system rejects coincident control points") {
    auto tgt = make_set({{10, 10}, {10, 10}, {40, 50}, {60, 20}});
    auto src = make_set({{1, 1}, {2, 2}, {3, 3}, {4, 4}});
    const auto sys = build_system(src, tgt);
    CHECK_THROWS_AS(solve_system(sys), SolverError);
    try {
        solve_system(sys);
    } catch (const SolverError& e) {
        CHECK(e.cond_estimate() >= kSingularCondThreshold);
        CHECK(std::string(e.what()).find("condition estimate") !=
              std::string::npos);
    }
}

TEST_CASE("apply_transform interpolates control points exactly") {
    Rng rng(19);
    const auto src = test::random_landmarks(rng, 12, 128, 128, 5.0);
    const auto tgt = test::random_landmarks(rng, 12, 128, 128, 5.0);
    const auto params = solve_system(build_system(src, tgt));
    const auto mapped = apply_transform(params, tgt.points);
    for (int i = 0; i < 12; ++i) {
        CHECK(std::abs(mapped[i].x - src.points[i].x) <= 1e-6);
        CHECK(std::abs(mapped[i].y - src.points[i].y) <= 1e-6);
    }
}

TEST_CASE("apply_transform identity params") {
    const auto id = WarpParams::identity();
    const auto out = apply_transform(id, {{3.5, 7.25}, {0.0, 0.0}});
    CHECK(out[0].x == 3.5);
    CHECK(out[0].y == 7.25);
    CHECK(out[1].x == 0.0);
}

TEST_CASE("affine reproduction: exact affine data has zero rbf part") {
    Rng rng(23);
    for (int rep = 0; rep < 20; ++rep) {
        const auto src = test::random_landmarks(rng, 10, 100, 100, 5.0);
        // target = F(source) for a random well-conditioned affine F
        Eigen::Matrix2d f;
        f << rng.uniform(0.8, 1.2), rng.uniform(-0.2, 0.2),
             rng.uniform(-0.2, 0.2), rng.uniform(0.8, 1.2);
        const double tx = rng.uniform(-10, 10), ty = rng.uniform(-10, 10);
        LandmarkSet tgt = src;
        for (auto& p : tgt.points) {
            const double nx = f(0, 0) * p.x + f(0, 1) * p.y + tx;
            const double ny = f(1, 0) * p.x + f(1, 1) * p.y + ty;
            p = {nx, ny};
        }
        const auto params = solve_system(build_system(src, tgt));
        CHECK(params.rbf_weights.norm() <= 1e-8);

        // the transform reproduces F^-1 at arbitrary points
        const Eigen::Matrix2d finv = f.inverse();
        for (int k = 0; k < 5; ++k) {
            const Point2 z{rng.uniform(0, 100), rng.uniform(0, 100)};
            const auto out = apply_transform(params, {z});
            const double ex = finv(0, 0) * (z.x - tx) + finv(0, 1) * (z.y - ty);
            const double ey = finv(1, 0) * (z.x - tx) + finv(1, 1) * (z.y - ty);
            CHECK(std::abs(out[0].x - ex) <= 1e-6);
            CHECK(std::abs(out[0].y - ey) <= 1e-6);
        }
    }
}

TEST_CASE("warp_image identity is bit-exact") {
    const auto img = test::texture_image(24, 31, 5);
    const auto out = warp_image(img, WarpParams::identity());
    REQUIRE(out.data.size() == img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) CHECK(out.data[i] == img.data[i]);
}

TEST_CASE("warp_image integer translation is exact in the interior") {
    const auto img = test::texture_image(16, 16, 6);
    WarpParams p = WarpParams::identity();
    p.affine(2, 0) = 3.0;  // sample from x+3
    const auto out = warp_image(img, p);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16 - 3; ++x)
            CHECK(out.at(y, x) == img.at(y, x + 3));
}

TEST_CASE("warp_image half-pixel shift of a linear ramp is exact") {
    Image ramp(8, 12);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 12; ++x) ramp.at(y, x) = 0.05 + 0.07 * x;
    WarpParams p = WarpParams::identity();
    p.affine(2, 0) = 0.5;
    const auto out = warp_image(ramp, p);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 10; ++x)
            CHECK(std::abs(out.at(y, x) - (0.05 + 0.07 * (x + 0.5))) <= 1e-6);
}

TEST_CASE("condition_number identity and diagonal cases") {
    TpsSystem sys;
    sys.block = Eigen::MatrixXd::Identity(3, 3);
    // matrix_a is the 6x6 identity; kappa_F(I_n) = n
    CHECK(condition_number(sys) == doctest::Approx(6.0).epsilon(1e-12));

    Eigen::MatrixXd d(2, 2);
    d << 1, 0, 0, 2;
    CHECK(frobenius_condition(d) == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("condition_number equals the full block-diagonal computation") {
    Rng rng(29);
    const auto src = test::random_landmarks(rng, 7, 80, 80, 5.0);
    const auto tgt = test::random_landmarks(rng, 7, 80, 80, 5.0);
    const auto sys = build_system(src, tgt);
    const double from_block = condition_number(sys);
    const double from_full = frobenius_condition(sys.matrix_a());
    CHECK(from_block == doctest::Approx(from_full).epsilon(1e-9));
}

TEST_CASE("condition number grows strictly as two landmarks collapse") {
    Rng rng(31);
    auto base = test::random_landmarks(rng, 8, 64, 64, 10.0);
    const Point2 center = base.points[0];
    double prev = 0.0;
    bool first = true;
    for (double sep : {8.0, 4.0, 2.0, 1.0, 0.5, 0.25}) {
        LandmarkSet tgt = base;
        tgt.points[1] = {center.x + sep, center.y};
        const auto sys = build_system(tgt, tgt);
        const double kappa = condition_number(sys);
        if (!first) CHECK(kappa > prev);
        prev = kappa;
        first = false;
    }
}

TEST_CASE("frobenius_condition throws on a singular matrix") {
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(3, 3);
    CHECK_THROWS_AS(frobenius_condition(z), SolverError);
}
