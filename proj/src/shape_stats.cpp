#include "lmk/shape_stats.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace lmk {

ControlStats fit_control_stats(
    const std::vector<std::vector<double>>& descriptors,
    std::optional<int> pca_dims) {
    const int n = int(descriptors.size());
    require(n >= 2, "need at least 2 descriptors to fit statistics");
    const int d = int(descriptors[0].size());
    for (const auto& row : descriptors)
        require(int(row.size()) == d, "descriptor length mismatch");

    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = descriptors[size_t(i)][size_t(j)];

    ControlStats stats;
    stats.n_samples = n;
    stats.mean_raw = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - stats.mean_raw.transpose();

    const bool reduce = pca_dims.has_value() || n <= d;
    if (reduce) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(
            centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        require(sv.size() > 0 && sv(0) > 0.0, "zero-variance descriptor data");
        int k_max = std::min<int>(int(sv.size()), n - 1);
        if (pca_dims.has_value()) k_max = std::min(k_max, *pca_dims);
        int k = 0;
        // keep the components that carry all the variance, down to the
        // relative eigenvalue cutoff
        const double cutoff = 1e-12 * sv(0) * sv(0);
        while (k < k_max && sv(k) * sv(k) > cutoff) ++k;
        require(k >= 1, "zero-variance descriptor data");
        stats.basis = svd.matrixV().leftCols(k);
        const Eigen::MatrixXd y = centered * *stats.basis;
        stats.mean_work = y.colwise().mean();
        const Eigen::MatrixXd yc = y.rowwise() - stats.mean_work.transpose();
        stats.covariance = (yc.transpose() * yc) / double(n - 1);
    } else {
        stats.mean_work = Eigen::VectorXd::Zero(d);
        stats.covariance = (centered.transpose() * centered) / double(n - 1);
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(stats.covariance);
    require(es.info() == Eigen::Success &&
                es.eigenvalues().minCoeff() > 1e-10,
            "covariance is not positive definite (zero-variance data)");
    return stats;
}

double zscore(const ControlStats& stats, const std::vector<double>& descriptor) {
    require(int(descriptor.size()) == stats.raw_dim(),
            "descriptor length " + std::to_string(descriptor.size()) +
                " does not match the statistics dimension " +
                std::to_string(stats.raw_dim()));
    Eigen::VectorXd z(stats.raw_dim());
    for (int i = 0; i < stats.raw_dim(); ++i) z(i) = descriptor[size_t(i)];
    Eigen::VectorXd w = z - stats.mean_raw;
    if (stats.basis.has_value()) w = stats.basis->transpose() * w;
    w -= stats.mean_work;
    const Eigen::VectorXd y = stats.covariance.ldlt().solve(w);
    return std::sqrt(std::max(0.0, w.dot(y)));
}

LandmarkSet mean_landmarks(const std::vector<LandmarkSet>& sets) {
    require(!sets.empty(), "no landmark sets");
    const int m = sets[0].point_count();
    LandmarkSet mean;
    mean.anchor_count = sets[0].anchor_count;
    mean.points.assign(size_t(m), {0.0, 0.0});
    for (const auto& s : sets) {
        require(s.point_count() == m, "landmark count mismatch");
        for (int i = 0; i < m; ++i) {
            mean.points[size_t(i)].x += s.points[size_t(i)].x;
            mean.points[size_t(i)].y += s.points[size_t(i)].y;
        }
    }
    for (auto& p : mean.points) {
        p.x /= double(sets.size());
        p.y /= double(sets.size());
    }
    return mean;
}

Image mean_shape_image(const std::vector<Image>& masks,
                       const std::vector<LandmarkSet>& landmark_sets,
                       LandmarkSet* mean_out) {
    require(!masks.empty() && masks.size() == landmark_sets.size(),
            "masks and landmark sets must be aligned and non-empty");
    const LandmarkSet mean = mean_landmarks(landmark_sets);
    if (mean_out) *mean_out = mean;

    Image acc(masks[0].height, masks[0].width, 0.0);
    for (size_t i = 0; i < masks.size(); ++i) {
        require(masks[i].same_extent(acc), "mask extent mismatch");
        try {
            const auto sys = build_system(landmark_sets[i], mean);
            const auto params = solve_system(sys);
            const Image warped = warp_image(masks[i], params);
            for (size_t k = 0; k < acc.data.size(); ++k)
                acc.data[k] += warped.data[k];
        } catch (const SolverError& e) {
            throw Error("mean-shape warp failed for sample " +
                        std::to_string(i) + ": " + e.what());
        }
    }
    for (auto& v : acc.data) v /= double(masks.size());
    return acc;
}

void export_features(const std::vector<LandmarkSet>& sets,
                     const std::vector<std::string>& ids,
                     const std::string& path) {
    require(sets.size() == ids.size(), "ids and landmark sets must align");
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp);
        require(out.good(), "cannot write feature file: " + path);
        out << "id";
        const int m = sets.empty() ? 0 : sets[0].point_count();
        for (int i = 0; i < m; ++i) out << ",x" << i << ",y" << i;
        out << "\n";
        for (size_t r = 0; r < sets.size(); ++r) {
            out << ids[r];
            for (const auto& p : sets[r].points)
                out << ',' << format_double(p.x) << ',' << format_double(p.y);
            out << "\n";
        }
        require(out.good(), "feature write failure: " + path);
    }
    std::filesystem::rename(tmp, path);
}

FeatureTable read_features(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open feature file: " + path);
    FeatureTable table;
    std::string line;
    require(bool(std::getline(in, line)), "empty feature file: " + path);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::getline(ss, cell, ',');
        table.ids.push_back(cell);
        std::vector<double> row;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        table.rows.push_back(std::move(row));
    }
    return table;
}

}  // namespace lmk
