#pragma once

// Rigid-body geometry, the weighted least-squares correspondence solver,
// and the pose-accuracy metrics (ADD, ADD-S, AUC, threshold rates, Chamfer).

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dcl {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

enum class Frame { camera, object };

struct Pose {
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();

    static Pose identity() { return {}; }
    // Orthonormality and det(R) = +1, both within `tol`.
    bool is_valid(double tol = 1e-9) const;
    Pose inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
    // (this * other)(p) = this(other(p))
    Pose operator*(const Pose& other) const { return {R * other.R, R * other.t + t}; }
};

struct PointCloud {
    Points points;
    std::optional<Points> colors;  // per-point RGB in [0, 1]
    Frame frame = Frame::camera;

    std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
    // Throws std::invalid_argument when empty, non-finite, or colors misaligned.
    void validate() const;
};

struct SymmetrySpec {
    enum class Kind { none, discrete };
    Kind kind = Kind::none;
    std::vector<Eigen::Matrix3d> transforms;  // includes identity when discrete

    bool symmetric() const { return kind != Kind::none; }
    static SymmetrySpec none() { return {}; }
};

Eigen::Matrix3d rot_x(double radians);
Eigen::Matrix3d rot_y(double radians);
Eigen::Matrix3d rot_z(double radians);

// Row-wise R p + t.
Points transform(const Pose& pose, const Points& pts);
// Row-wise R^T (p - t); exact inverse of transform().
Points inverse_transform(const Pose& pose, const Points& pts);

// Gram-Schmidt map from two 3-vectors to a rotation. Throws DegenerateError
// when a norm drops below 1e-8.
Eigen::Matrix3d rot6d_to_matrix(std::span<const double, 6> v);

// Re-orthonormalizes a nearly-orthonormal matrix via Gram-Schmidt of its
// first two columns.
Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& R);

// Weighted least-squares rigid alignment (SVD of the cross-covariance with
// reflection correction): argmin sum_i w_i |R src_i + t - dst_i|^2.
// Throws DegenerateError for fewer than 3 points, non-positive total weight,
// or a weighted source set of rank < 2 after centering.
Pose arun_solve(const Points& src, const Points& dst, std::optional<std::span<const double>> weights = std::nullopt);

// For each row of a, index of the nearest row of b (first index on ties).
std::vector<std::size_t> nearest_indices(const Points& a, const Points& b);
std::vector<double> nearest_distances(const Points& a, const Points& b);

// Symmetric mean nearest-neighbour distance (unsquared).
double chamfer(const Points& a, const Points& b);

double add_metric(const Pose& pred, const Pose& gt, const Points& model);
double adds_metric(const Pose& pred, const Pose& gt, const Points& model);

// Area under accuracy(tau) = fraction(e < tau), tau in [0, max_threshold],
// in percent. Evaluated with the midpoint rule on a uniform 1000-cell grid.
double auc(std::span<const double> errors, double max_threshold = 0.1);
// Percentage of errors strictly below the threshold.
double rate_below(std::span<const double> errors, double threshold = 0.02);

// Maximum pairwise distance, brute force.
double diameter(const Points& pts);

// ---- file formats --------------------------------------------------------------

// ASCII PLY with float64 x, y, z and optional uchar red, green, blue.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_ply(const std::filesystem::path& path, Frame frame);

struct MetricRow {
    std::string sample_id;
    double add = 0.0;
    double adds = 0.0;
    double auc_contrib = 0.0;
    bool below_2cm = false;
};

// CSV with header `sample_id,add,adds,auc_contrib,below_2cm`.
void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows);

}  // namespace dcl
