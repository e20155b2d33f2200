#pragma once

#include <Eigen/Dense>
#include <vector>

#include "lmk/common.hpp"
#include "lmk/image.hpp"

namespace lmk {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

// Ordered control points in continuous pixel coordinates. Ordering defines
// correspondence across images. Fixed (non-learned) anchor points, when
// present, sit at the end of the list.
struct LandmarkSet {
    std::vector<Point2> points;
    int dim = 2;
    int anchor_count = 0;

    int point_count() const { return int(points.size()); }
    int learned_count() const { return point_count() - anchor_count; }
    void validate() const;

    // landmark-major flattening (x1, y1, x2, y2, ...)
    std::vector<double> flatten() const;
    static LandmarkSet from_flat(const std::vector<double>& xy,
                                 int anchor_count = 0);
};

enum class KernelKind {
    ThinPlate2D,  // phi(r) = r^2 log r, with phi(0) = 0
};

// phi as a function of squared distance; the r -> 0 limit is exactly 0.
inline double tps_phi_r2(double r2) {
    return r2 > 0.0 ? 0.5 * r2 * std::log(r2) : 0.0;
}

// The 2D system of Appendix-style layout. The full matrix A is block
// diagonal with two copies of `block`; only the block and the two
// right-hand sides are stored.
struct TpsSystem {
    Eigen::MatrixXd block;  // (M+3) x (M+3)
    Eigen::VectorXd kx;     // rhs for the x coordinate
    Eigen::VectorXd ky;     // rhs for the y coordinate
    LandmarkSet control_points;  // the points the kernel was built from
    KernelKind kernel = KernelKind::ThinPlate2D;

    int point_count() const { return control_points.point_count(); }
    // Materialized 2(M+3) x 2(M+3) block-diagonal matrix (for tests).
    Eigen::MatrixXd matrix_a() const;
    Eigen::VectorXd rhs_b() const;
};

// Solved transform T(p) = sum_i w_i phi(||p - c_i||) + a2 p.x + a1 p.y + a0
// per output coordinate. Rows of `affine` are (x coefficient, y coefficient,
// constant); columns are the output coordinate.
struct WarpParams {
    Eigen::MatrixXd rbf_weights;            // M x 2
    Eigen::Matrix<double, 3, 2> affine;     // 3 x 2
    LandmarkSet control_points;             // kernel centers

    static WarpParams identity();
};

// Appends `count` fixed corner anchors (count must be 0 or 4 in 2D).
// image_extent is (width, height); corners are appended in the order
// (0,0), (w-1,0), (0,h-1), (w-1,h-1).
LandmarkSet append_anchors(const LandmarkSet& lms,
                           const std::array<int, 2>& image_extent, int count);

// Builds the linear system. The kernel matrix is built from the TARGET
// points and the right-hand sides carry the SOURCE coordinates, so the
// solved transform maps target-image coordinates to source-image
// coordinates (the sampling map for a backward warp of the source).
TpsSystem build_system(const LandmarkSet& source, const LandmarkSet& target,
                       KernelKind kernel = KernelKind::ThinPlate2D);

// LU with partial pivoting on the single block, reused for both coordinate
// right-hand sides. Throws SolverError when the condition estimate exceeds
// 1e12.
WarpParams solve_system(const TpsSystem& sys);

// Shared solver kernel: factorization guarded by the condition estimate,
// and a solve with one step of iterative refinement. Used by both
// solve_system and the differentiable solve primitive so the two paths
// produce bit-identical results.
Eigen::PartialPivLU<Eigen::MatrixXd> factorize_block(const Eigen::MatrixXd& block);
Eigen::VectorXd solve_refined(const Eigen::PartialPivLU<Eigen::MatrixXd>& lu,
                              const Eigen::MatrixXd& block,
                              const Eigen::VectorXd& k);

std::vector<Point2> apply_transform(const WarpParams& params,
                                    const std::vector<Point2>& coords);

// Evaluates the transform at every pixel center of a width x height grid,
// row-major. tx/ty receive the transformed coordinates.
void evaluate_transform_grid(const WarpParams& params, int width, int height,
                             std::vector<double>& tx, std::vector<double>& ty);

// Backward warp: output(y, x) = bilinear(source, T(x, y)), clamp-to-border.
Image warp_image(const Image& source, const WarpParams& params);

// ||M||_F * ||M^-1||_F. Throws SolverError on a singular matrix.
double frobenius_condition(const Eigen::MatrixXd& m);

// Frobenius condition number of the full block-diagonal system matrix,
// computed from the block alone: 2 * ||B||_F ||B^-1||_F.
double condition_number(const TpsSystem& sys);

// Condition estimate used by the solvability guard (1 / rcond of the LU).
double condition_estimate(const Eigen::MatrixXd& m);

constexpr double kSingularCondThreshold = 1e12;

}  // namespace lmk
