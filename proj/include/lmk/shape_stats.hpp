#pragma once

#include <Eigen/Dense>
#include <optional>

#include "lmk/tps.hpp"

namespace lmk {

// Mean and covariance of a control population of landmark descriptors,
// optionally in a PCA-reduced basis (mandatory when there are fewer
// samples than descriptor dimensions, where the raw covariance would be
// singular).
struct ControlStats {
    Eigen::VectorXd mean_raw;                // length D
    Eigen::VectorXd mean_work;               // working-basis mean
    Eigen::MatrixXd covariance;              // working-basis covariance
    std::optional<Eigen::MatrixXd> basis;    // D x k projection, when reduced
    int n_samples = 0;

    int raw_dim() const { return int(mean_raw.size()); }
    int work_dim() const { return int(covariance.rows()); }
};

// Descriptors are flattened landmark coordinates (x1,y1,x2,y2,...). When
// n <= D or pca_dims is given, the population is projected onto the top
// min(pca_dims, n-1) principal components (relative eigenvalue cutoff
// 1e-12) before fitting. Sample covariance (n-1 normalization).
ControlStats fit_control_stats(
    const std::vector<std::vector<double>>& descriptors,
    std::optional<int> pca_dims = {});

// Mahalanobis distance sqrt((z-mu)^T Sigma^-1 (z-mu)); the descriptor is
// projected into the working basis when one exists.
double zscore(const ControlStats& stats, const std::vector<double>& descriptor);

// Mean-shape-image procedure: computes the pointwise mean landmarks, warps
// every segmentation onto them (system built from the sample landmarks as
// source and the mean landmarks as target), and averages the warped masks.
Image mean_shape_image(const std::vector<Image>& masks,
                       const std::vector<LandmarkSet>& landmark_sets,
                       LandmarkSet* mean_out = nullptr);

LandmarkSet mean_landmarks(const std::vector<LandmarkSet>& sets);

// Feature table: one row per id, flattened coordinates with 17 significant
// digits (lossless round trip).
void export_features(const std::vector<LandmarkSet>& sets,
                     const std::vector<std::string>& ids,
                     const std::string& path);

struct FeatureTable {
    std::vector<std::string> ids;
    std::vector<std::vector<double>> rows;
};
FeatureTable read_features(const std::string& path);

}  // namespace lmk
