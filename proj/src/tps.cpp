#include "lmk/tps.hpp"

#include <Eigen/LU>

namespace lmk {

void LandmarkSet::validate() const {
    require(dim == 2, "only 2D landmark sets are supported");
    // dim+1 points pin down the affine part; the learned pipeline always
    // carries at least dim+2
    require(point_count() >= dim + 1,
            "landmark set needs at least dim+1 points, got " +
                std::to_string(point_count()));
    require(anchor_count >= 0 && anchor_count < point_count(),
            "anchor_count must be smaller than the point count");
    for (const auto& p : points)
        require(std::isfinite(p.x) && std::isfinite(p.y),
                "non-finite landmark coordinate");
}

std::vector<double> LandmarkSet::flatten() const {
    std::vector<double> out;
    out.reserve(points.size() * 2);
    for (const auto& p : points) {
        out.push_back(p.x);
        out.push_back(p.y);
    }
    return out;
}

LandmarkSet LandmarkSet::from_flat(const std::vector<double>& xy,
                                   int anchor_count) {
    require(xy.size() % 2 == 0, "flat landmark vector must have even length");
    LandmarkSet lms;
    lms.points.resize(xy.size() / 2);
    for (size_t i = 0; i < lms.points.size(); ++i)
        lms.points[i] = {xy[2 * i], xy[2 * i + 1]};
    lms.anchor_count = anchor_count;
    return lms;
}

LandmarkSet append_anchors(const LandmarkSet& lms,
                           const std::array<int, 2>& image_extent, int count) {
    require(count == 0 || count == 4,
            "anchor count must be 0 or 4 for 2D, got " + std::to_string(count));
    require(image_extent[0] > 0 && image_extent[1] > 0,
            "image extent must be positive");
    require(lms.anchor_count == 0, "landmark set already carries anchors");
    LandmarkSet out = lms;
    if (count == 4) {
        const double xm = image_extent[0] - 1.0;
        const double ym = image_extent[1] - 1.0;
        out.points.push_back({0.0, 0.0});
        out.points.push_back({xm, 0.0});
        out.points.push_back({0.0, ym});
        out.points.push_back({xm, ym});
        out.anchor_count = count;
    }
    return out;
}

TpsSystem build_system(const LandmarkSet& source, const LandmarkSet& target,
                       KernelKind kernel) {
    require(source.dim == 2 && target.dim == 2,
            "build_system requires 2D landmark sets");
    require(source.point_count() == target.point_count(),
            "source and target must have the same number of points");
    source.validate();
    target.validate();

    const int m = target.point_count();
    const int n = m + 3;
    TpsSystem sys;
    sys.kernel = kernel;
    sys.control_points = target;
    sys.block = Eigen::MatrixXd::Zero(n, n);
    sys.kx = Eigen::VectorXd::Zero(n);
    sys.ky = Eigen::VectorXd::Zero(n);

    // rows 0..2: orthogonality constraints (the RBF part carries no linear
    // or constant term)
    for (int j = 0; j < m; ++j) {
        sys.block(0, j) = target.points[j].x;
        sys.block(1, j) = target.points[j].y;
        sys.block(2, j) = 1.0;
    }
    // rows 3..m+2: interpolation conditions [phi_ij | x_i y_i 1]
    for (int i = 0; i < m; ++i) {
        const Point2 pi = target.points[i];
        for (int j = 0; j < m; ++j) {
            const double dx = pi.x - target.points[j].x;
            const double dy = pi.y - target.points[j].y;
            sys.block(3 + i, j) = tps_phi_r2(dx * dx + dy * dy);
        }
        sys.block(3 + i, m) = pi.x;
        sys.block(3 + i, m + 1) = pi.y;
        sys.block(3 + i, m + 2) = 1.0;
        sys.kx(3 + i) = source.points[i].x;
        sys.ky(3 + i) = source.points[i].y;
    }
    return sys;
}

Eigen::MatrixXd TpsSystem::matrix_a() const {
    const int n = int(block.rows());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    a.topLeftCorner(n, n) = block;
    a.bottomRightCorner(n, n) = block;
    return a;
}

Eigen::VectorXd TpsSystem::rhs_b() const {
    Eigen::VectorXd b(kx.size() + ky.size());
    b << kx, ky;
    return b;
}

double condition_estimate(const Eigen::MatrixXd& m) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
    const double rc = lu.rcond();
    if (!(rc > 0.0)) return std::numeric_limits<double>::infinity();
    return 1.0 / rc;
}

Eigen::PartialPivLU<Eigen::MatrixXd> factorize_block(const Eigen::MatrixXd& block) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(block);
    const double rc = lu.rcond();
    const double cond = (rc > 0.0) ? 1.0 / rc
                                   : std::numeric_limits<double>::infinity();
    if (!(cond < kSingularCondThreshold)) {
        throw SolverError("TPS system block is singular or near-singular "
                          "(condition estimate " + format_double(cond) + ")",
                          cond);
    }
    return lu;
}

Eigen::VectorXd solve_refined(const Eigen::PartialPivLU<Eigen::MatrixXd>& lu,
                              const Eigen::MatrixXd& block,
                              const Eigen::VectorXd& k) {
    Eigen::VectorXd w = lu.solve(k);
    // one step of iterative refinement keeps residuals near roundoff
    w += lu.solve(k - block * w);
    return w;
}

WarpParams solve_system(const TpsSystem& sys) {
    const int n = int(sys.block.rows());
    const int m = sys.point_count();
    const auto lu = factorize_block(sys.block);
    const Eigen::VectorXd wx = solve_refined(lu, sys.block, sys.kx);
    const Eigen::VectorXd wy = solve_refined(lu, sys.block, sys.ky);

    WarpParams params;
    params.control_points = sys.control_points;
    params.rbf_weights.resize(m, 2);
    params.rbf_weights.col(0) = wx.head(m);
    params.rbf_weights.col(1) = wy.head(m);
    params.affine.col(0) = wx.segment(m, 3);
    params.affine.col(1) = wy.segment(m, 3);
    (void)n;
    return params;
}

WarpParams WarpParams::identity() {
    WarpParams p;
    p.rbf_weights.resize(0, 2);
    p.affine << 1.0, 0.0,
                0.0, 1.0,
                0.0, 0.0;
    return p;
}

std::vector<Point2> apply_transform(const WarpParams& params,
                                    const std::vector<Point2>& coords) {
    const int m = int(params.rbf_weights.rows());
    std::vector<Point2> out(coords.size());
    for (size_t k = 0; k < coords.size(); ++k) {
        const Point2 p = coords[k];
        require(std::isfinite(p.x) && std::isfinite(p.y),
                "non-finite query coordinate");
        double ox = params.affine(0, 0) * p.x + params.affine(1, 0) * p.y +
                    params.affine(2, 0);
        double oy = params.affine(0, 1) * p.x + params.affine(1, 1) * p.y +
                    params.affine(2, 1);
        for (int i = 0; i < m; ++i) {
            const double dx = p.x - params.control_points.points[i].x;
            const double dy = p.y - params.control_points.points[i].y;
            const double phi = tps_phi_r2(dx * dx + dy * dy);
            ox += params.rbf_weights(i, 0) * phi;
            oy += params.rbf_weights(i, 1) * phi;
        }
        out[k] = {ox, oy};
    }
    return out;
}

void evaluate_transform_grid(const WarpParams& params, int width, int height,
                             std::vector<double>& tx, std::vector<double>& ty) {
    const size_t npix = size_t(width) * size_t(height);
    const int m = int(params.rbf_weights.rows());
    tx.assign(npix, 0.0);
    ty.assign(npix, 0.0);
    // affine part
    size_t idx = 0;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x, ++idx) {
            tx[idx] = params.affine(0, 0) * x + params.affine(1, 0) * y +
                      params.affine(2, 0);
            ty[idx] = params.affine(0, 1) * x + params.affine(1, 1) * y +
                      params.affine(2, 1);
        }
    }
    // kernel part, control point outer so the inner loop streams the grid
    for (int i = 0; i < m; ++i) {
        const double cx = params.control_points.points[i].x;
        const double cy = params.control_points.points[i].y;
        const double wx = params.rbf_weights(i, 0);
        const double wy = params.rbf_weights(i, 1);
        idx = 0;
        for (int y = 0; y < height; ++y) {
            const double dy = y - cy;
            const double dy2 = dy * dy;
            for (int x = 0; x < width; ++x, ++idx) {
                const double dx = x - cx;
                const double phi = tps_phi_r2(dx * dx + dy2);
                tx[idx] += wx * phi;
                ty[idx] += wy * phi;
            }
        }
    }
}

Image warp_image(const Image& source, const WarpParams& params) {
    Image out(source.height, source.width);
    std::vector<double> tx, ty;
    evaluate_transform_grid(params, source.width, source.height, tx, ty);
    size_t idx = 0;
    for (int y = 0; y < source.height; ++y)
        for (int x = 0; x < source.width; ++x, ++idx)
            out.at(y, x) = bilinear_sample(source, tx[idx], ty[idx]);
    return out;
}

double frobenius_condition(const Eigen::MatrixXd& m) {
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
    const double rc = lu.rcond();
    if (!(rc > 0.0))
        throw SolverError("matrix is singular; condition number undefined",
                          std::numeric_limits<double>::infinity());
    const Eigen::MatrixXd inv = lu.inverse();
    return m.norm() * inv.norm();
}

double condition_number(const TpsSystem& sys) {
    return 2.0 * frobenius_condition(sys.block);
}

}  // namespace lmk
