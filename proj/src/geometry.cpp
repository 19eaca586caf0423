#include "dcl/geometry.hpp"

#include "dcl/tensor.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dcl {

bool Pose::is_valid(double tol) const {
    if (!R.allFinite() || !t.allFinite()) return false;
    const double ortho = (R.transpose() * R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

void PointCloud::validate() const {
    if (points.rows() == 0) throw std::invalid_argument("point cloud is empty");
    if (!points.allFinite()) throw std::invalid_argument("point cloud has non-finite coordinates");
    if (colors) {
        if (colors->rows() != points.rows()) throw std::invalid_argument("color count differs from point count");
        if (!colors->allFinite() || colors->minCoeff() < 0.0 || colors->maxCoeff() > 1.0)
            throw std::invalid_argument("colors must lie in [0, 1]");
    }
}

Eigen::Matrix3d rot_x(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitX()).toRotationMatrix(); }
Eigen::Matrix3d rot_y(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitY()).toRotationMatrix(); }
Eigen::Matrix3d rot_z(double a) { return Eigen::AngleAxisd(a, Eigen::Vector3d::UnitZ()).toRotationMatrix(); }

Points transform(const Pose& pose, const Points& pts) {
    Points out = pts * pose.R.transpose();
    out.rowwise() += pose.t.transpose();
    return out;
}

Points inverse_transform(const Pose& pose, const Points& pts) {
    Points out = pts;
    out.rowwise() -= pose.t.transpose();
    return out * pose.R;
}

Eigen::Matrix3d rot6d_to_matrix(std::span<const double, 6> v) {
    const Eigen::Vector3d a(v[0], v[1], v[2]);
    const Eigen::Vector3d b(v[3], v[4], v[5]);
    const double na = a.norm();
    if (na < 1e-8) throw DegenerateError("rot6d: first vector has near-zero norm");
    const Eigen::Vector3d b1 = a / na;
    const Eigen::Vector3d u = b - b1.dot(b) * b1;
    const double nu = u.norm();
    if (nu < 1e-8) throw DegenerateError("rot6d: second vector is parallel to the first");
    const Eigen::Vector3d b2 = u / nu;
    Eigen::Matrix3d R;
    R << b1, b2, b1.cross(b2);
    return R;
}

Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& R) {
    const std::array<double, 6> v{R(0, 0), R(1, 0), R(2, 0), R(0, 1), R(1, 1), R(2, 1)};
    return rot6d_to_matrix(v);
}

Pose arun_solve(const Points& src, const Points& dst, std::optional<std::span<const double>> weights) {
    const Eigen::Index n = src.rows();
    if (dst.rows() != n) throw std::invalid_argument("arun_solve: source and target sizes differ");
    if (n < 3) throw DegenerateError("arun_solve: need at least 3 correspondences");
    Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
    if (weights) {
        if (static_cast<Eigen::Index>(weights->size()) != n) throw std::invalid_argument("arun_solve: weight count mismatch");
        for (Eigen::Index i = 0; i < n; ++i) {
            const double wi = (*weights)[static_cast<std::size_t>(i)];
            if (!(wi >= 0.0) || !std::isfinite(wi)) throw std::invalid_argument("arun_solve: weights must be finite and >= 0");
            w[i] = wi;
        }
    }
    const double total = w.sum();
    if (!(total > 0.0)) throw DegenerateError("arun_solve: total weight is zero");

    const Eigen::RowVector3d cs = (w.transpose() * src) / total;
    const Eigen::RowVector3d cd = (w.transpose() * dst) / total;
    const Points xs = src.rowwise() - cs;
    const Points xd = dst.rowwise() - cd;

    // Rank check on the weighted spread of the source set.
    const Eigen::Matrix3d spread = xs.transpose() * w.asDiagonal() * xs;
    Eigen::JacobiSVD<Eigen::Matrix3d> spread_svd(spread);
    const auto sv = spread_svd.singularValues();
    if (!(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0]) throw DegenerateError("arun_solve: source points are collinear or coincident");

    const Eigen::Matrix3d H = xs.transpose() * w.asDiagonal() * xd;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d& U = svd.matrixU();
    const Eigen::Matrix3d& V = svd.matrixV();
    Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
    D(2, 2) = (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    Pose out;
    out.R = V * D * U.transpose();
    out.t = cd.transpose() - out.R * cs.transpose();
    return out;
}

std::vector<std::size_t> nearest_indices(const Points& a, const Points& b) {
    if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("nearest neighbour query on an empty set");
    std::vector<std::size_t> out(static_cast<std::size_t>(a.rows()));
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        Eigen::Index best_j = 0;
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            const double d2 = (a.row(i) - b.row(j)).squaredNorm();
            if (d2 < best) {
                best = d2;
                best_j = j;
            }
        }
        out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best_j);
    }
    return out;
}

std::vector<double> nearest_distances(const Points& a, const Points& b) {
    const auto idx = nearest_indices(a, b);
    std::vector<double> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        out[i] = (a.row(static_cast<Eigen::Index>(i)) - b.row(static_cast<Eigen::Index>(idx[i]))).norm();
    return out;
}

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace

double chamfer(const Points& a, const Points& b) {
    return mean_of(nearest_distances(a, b)) + mean_of(nearest_distances(b, a));
}

double add_metric(const Pose& pred, const Pose& gt, const Points& model) {
    if (model.rows() == 0) throw std::invalid_argument("add_metric: empty model");
    return (transform(pred, model) - transform(gt, model)).rowwise().norm().mean();
}

double adds_metric(const Pose& pred, const Pose& gt, const Points& model) {
    if (model.rows() == 0) throw std::invalid_argument("adds_metric: empty model");
    return mean_of(nearest_distances(transform(pred, model), transform(gt, model)));
}

double auc(std::span<const double> errors, double max_threshold) {
    if (errors.empty()) throw std::invalid_argument("auc: no errors given");
    if (!(max_threshold > 0.0)) throw std::invalid_argument("auc: threshold must be positive");
    constexpr int kCells = 1000;
    std::vector<double> sorted(errors.begin(), errors.end());
    std::sort(sorted.begin(), sorted.end());
    double area = 0.0;
    for (int k = 0; k < kCells; ++k) {
        const double tau = (k + 0.5) * max_threshold / kCells;
        const auto below = std::lower_bound(sorted.begin(), sorted.end(), tau) - sorted.begin();
        area += static_cast<double>(below) / static_cast<double>(sorted.size());
    }
    return 100.0 * area / kCells;
}

double rate_below(std::span<const double> errors, double threshold) {
    if (errors.empty()) throw std::invalid_argument("rate_below: no errors given");
    const auto n = std::count_if(errors.begin(), errors.end(), [&](double e) { return e < threshold; });
    return 100.0 * static_cast<double>(n) / static_cast<double>(errors.size());
}

double diameter(const Points& pts) {
    double best = 0.0;
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
        for (Eigen::Index j = i + 1; j < pts.rows(); ++j) best = std::max(best, (pts.row(i) - pts.row(j)).squaredNorm());
    return std::sqrt(best);
}

// ---- file formats --------------------------------------------------------------

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
    cloud.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
        << "\nproperty double x\nproperty double y\nproperty double z\n";
    if (cloud.colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "end_header\n";
    char buf[128];
    for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
        int len = std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", cloud.points(i, 0), cloud.points(i, 1), cloud.points(i, 2));
        out.write(buf, len);
        if (cloud.colors) {
            const auto& c = *cloud.colors;
            len = std::snprintf(buf, sizeof buf, " %d %d %d", static_cast<int>(std::lround(c(i, 0) * 255.0)),
                                static_cast<int>(std::lround(c(i, 1) * 255.0)), static_cast<int>(std::lround(c(i, 2) * 255.0)));
            out.write(buf, len);
        }
        out.put('\n');
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

PointCloud read_ply(const std::filesystem::path& path, Frame frame) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    auto fail = [&](const std::string& why) { return std::runtime_error("bad PLY " + path.string() + ": " + why); };
    std::string line;
    if (!std::getline(in, line) || line != "ply") throw fail("missing magic");
    std::size_t count = 0;
    std::vector<std::string> props;
    bool ascii = false;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "format") {
            std::string fmt;
            ls >> fmt;
            ascii = fmt == "ascii";
        } else if (key == "element") {
            std::string what;
            ls >> what >> count;
            if (what != "vertex") throw fail("unsupported element " + what);
        } else if (key == "property") {
            std::string type, name;
            ls >> type >> name;
            props.push_back(name);
        }
    }
    if (!ascii) throw fail("only ASCII PLY is supported");
    auto find = [&](const std::string& n) -> int {
        auto it = std::find(props.begin(), props.end(), n);
        return it == props.end() ? -1 : static_cast<int>(it - props.begin());
    };
    const int ix = find("x"), iy = find("y"), iz = find("z");
    const int ir = find("red"), ig = find("green"), ib = find("blue");
    if (ix < 0 || iy < 0 || iz < 0) throw fail("missing x/y/z properties");
    const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;

    PointCloud cloud;
    cloud.frame = frame;
    cloud.points.resize(static_cast<Eigen::Index>(count), 3);
    if (has_color) cloud.colors = Points(static_cast<Eigen::Index>(count), 3);
    std::vector<double> vals(props.size());
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(in, line)) throw fail("truncated vertex list");
        const char* p = line.c_str();
        for (auto& v : vals) {
            char* end = nullptr;
            v = std::strtod(p, &end);
            if (end == p) throw fail("bad number on vertex line " + std::to_string(i));
            p = end;
        }
        const auto r = static_cast<Eigen::Index>(i);
        cloud.points.row(r) << vals[ix], vals[iy], vals[iz];
        if (has_color) cloud.colors->row(r) << vals[ir] / 255.0, vals[ig] / 255.0, vals[ib] / 255.0;
    }
    cloud.validate();
    return cloud;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const MetricRow> rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "sample_id,add,adds,auc_contrib,below_2cm\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, ",%.10g,%.10g,%.10g,%d\n", r.add, r.adds, r.auc_contrib, r.below_2cm ? 1 : 0);
        out << r.sample_id << buf;
    }
}

}  // namespace dcl
