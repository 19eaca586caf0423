#include "dcl/synthdata.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <stdexcept>

namespace dcl {

using nlohmann::json;

std::string to_string(ShapeKind k) {
    switch (k) {
        case ShapeKind::box: return "box";
        case ShapeKind::cylinder: return "cylinder";
        case ShapeKind::ell_shape: return "ell-shape";
        case ShapeKind::asymmetric_blob: return "asymmetric-blob";
    }
    return "box";
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

double normal01(std::mt19937_64& rng) {
    // Box-Muller; 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

SymmetrySpec dihedral_symmetry(int k) {
    SymmetrySpec s;
    s.kind = SymmetrySpec::Kind::discrete;
    for (int flip = 0; flip < 2; ++flip)
        for (int i = 0; i < k; ++i) {
            Eigen::Matrix3d r = rot_z(2.0 * std::numbers::pi * i / k);
            if (flip) r = rot_x(std::numbers::pi) * r;
            s.transforms.push_back(r);
        }
    return s;
}

std::vector<ShapeSpec> default_shapes() {
    std::vector<ShapeSpec> out;
    out.push_back({"box", ShapeKind::box, {0.08, 0.08, 0.16}, dihedral_symmetry(4), {0.85, 0.2, 0.2}});
    out.push_back({"cylinder", ShapeKind::cylinder, {0.10, 0.10, 0.14}, dihedral_symmetry(8), {0.2, 0.75, 0.25}});
    out.push_back({"ell", ShapeKind::ell_shape, {0.16, 0.10, 0.04}, SymmetrySpec::none(), {0.2, 0.35, 0.85}});
    out.push_back({"blob", ShapeKind::asymmetric_blob, {0.065, 0.05, 0.04}, SymmetrySpec::none(), {0.9, 0.8, 0.2}});
    return out;
}

namespace {

struct Box {
    Eigen::Vector3d lo, hi;
    double area() const {
        const Eigen::Vector3d d = hi - lo;
        return 2.0 * (d.x() * d.y() + d.y() * d.z() + d.x() * d.z());
    }
    bool strictly_inside(const Eigen::Vector3d& p) const {
        return (p.array() > lo.array() + 1e-12).all() && (p.array() < hi.array() - 1e-12).all();
    }
};

Eigen::Vector3d sample_box_surface(const Box& b, std::mt19937_64& rng) {
    const Eigen::Vector3d d = b.hi - b.lo;
    const double faces[3] = {d.y() * d.z(), d.x() * d.z(), d.x() * d.y()};  // normal along x, y, z
    double pick = uniform01(rng) * (faces[0] + faces[1] + faces[2]);
    int axis = 0;
    while (axis < 2 && pick >= faces[axis]) pick -= faces[axis++];
    Eigen::Vector3d p;
    for (int k = 0; k < 3; ++k) p[k] = uniform(rng, b.lo[k], b.hi[k]);
    p[axis] = uniform01(rng) < 0.5 ? b.lo[axis] : b.hi[axis];
    return p;
}

Eigen::Vector3d sample_cylinder(const Eigen::Vector3d& dims, std::mt19937_64& rng) {
    const double r = 0.5 * dims.x(), h = dims.z();
    const double side = 2.0 * std::numbers::pi * r * h, cap = std::numbers::pi * r * r;
    const double pick = uniform01(rng) * (side + 2.0 * cap);
    const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    if (pick < side) return {r * std::cos(theta), r * std::sin(theta), uniform(rng, -0.5 * h, 0.5 * h)};
    const double rr = r * std::sqrt(uniform01(rng));
    return {rr * std::cos(theta), rr * std::sin(theta), pick < side + cap ? 0.5 * h : -0.5 * h};
}

// Two boxes sharing a corner block; centered on the solid's centroid.
std::pair<Box, Box> ell_boxes(const Eigen::Vector3d& dims) {
    const double a = dims.x(), b = dims.y(), th = dims.z();
    Box arm1{{0, 0, 0}, {a, th, th}};
    Box arm2{{0, 0, 0}, {th, b, th}};
    const double v1 = a * th * th, v2 = th * (b - th) * th;
    const Eigen::Vector3d c1(a / 2, th / 2, th / 2), c2(th / 2, th + (b - th) / 2, th / 2);
    const Eigen::Vector3d centroid = (v1 * c1 + v2 * c2) / (v1 + v2);
    for (Box* bx : {&arm1, &arm2}) {
        bx->lo -= centroid;
        bx->hi -= centroid;
    }
    return {arm1, arm2};
}

Eigen::Vector3d sample_ell(const Eigen::Vector3d& dims, std::mt19937_64& rng) {
    const auto [arm1, arm2] = ell_boxes(dims);
    for (;;) {
        const bool first = uniform01(rng) * (arm1.area() + arm2.area()) < arm1.area();
        const Eigen::Vector3d p = sample_box_surface(first ? arm1 : arm2, rng);
        const Box& other = first ? arm2 : arm1;
        // faces buried inside the other arm are not part of the surface
        Box grown = other;
        grown.lo.array() -= 1e-9;
        grown.hi.array() += 1e-9;
        const bool buried = (p.array() > grown.lo.array()).all() && (p.array() < grown.hi.array()).all() &&
                            !((p.array() - other.lo.array()).abs() < 1e-12).any() &&
                            !((p.array() - other.hi.array()).abs() < 1e-12).any();
        if (!buried && !other.strictly_inside(p)) return p;
    }
}

Eigen::Vector3d sample_blob(const Eigen::Vector3d& axes, std::mt19937_64& rng) {
    Eigen::Vector3d d(normal01(rng), normal01(rng), normal01(rng));
    d.normalize();
    const double r = 1.0 + 0.3 * d.x() * d.x() + 0.25 * std::max(d.y(), 0.0) + 0.2 * d.z() * d.x();
    return (d * r).cwiseProduct(axes);
}

Eigen::Vector3d sample_surface(const ShapeSpec& spec, std::mt19937_64& rng) {
    switch (spec.kind) {
        case ShapeKind::box: return sample_box_surface({-0.5 * spec.dimensions, 0.5 * spec.dimensions}, rng);
        case ShapeKind::cylinder: return sample_cylinder(spec.dimensions, rng);
        case ShapeKind::ell_shape: return sample_ell(spec.dimensions, rng);
        case ShapeKind::asymmetric_blob: return sample_blob(spec.dimensions, rng);
    }
    throw std::logic_error("unknown shape kind");
}

}  // namespace

Eigen::Vector3d texture_color(const ShapeSpec& spec, const Eigen::Vector3d& p) {
    if (!spec.textured) return spec.color;
    const Eigen::Vector3d half = 0.5 * spec.dimensions;
    Eigen::Vector3d pattern;
    switch (spec.kind) {
        case ShapeKind::box: {
            const double ax = std::abs(p.x()), ay = std::abs(p.y());
            pattern = {std::abs(p.z()) / half.z(), (ax + ay) / (2.0 * half.x()), std::abs(ax - ay) / half.x()};
            break;
        }
        case ShapeKind::cylinder: {
            const double theta = std::atan2(p.y(), p.x());
            pattern = {std::abs(p.z()) / half.z(), std::hypot(p.x(), p.y()) / half.x(), 0.5 + 0.5 * std::cos(8.0 * theta)};
            break;
        }
        case ShapeKind::ell_shape: {
            const auto [arm1, arm2] = ell_boxes(spec.dimensions);
            const Eigen::Vector3d lo = arm1.lo.cwiseMin(arm2.lo), hi = arm1.hi.cwiseMax(arm2.hi);
            pattern = (p - lo).cwiseQuotient(hi - lo);
            break;
        }
        case ShapeKind::asymmetric_blob:
            pattern = (p.cwiseQuotient(2.6 * spec.dimensions)).array() + 0.5;
            break;
    }
    pattern = pattern.cwiseMax(0.0).cwiseMin(1.0);
    return 0.25 * spec.color + 0.75 * pattern;
}

PointCloud sample_model(const ShapeSpec& spec, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("sample_model: n must be positive");
    if ((spec.dimensions.array() <= 0.0).any()) throw std::invalid_argument("sample_model: dimensions must be positive");
    std::mt19937_64 rng(seed);
    PointCloud cloud;
    cloud.frame = Frame::object;
    cloud.points.resize(static_cast<Eigen::Index>(n), 3);
    const std::size_t group = spec.symmetry.symmetric() ? spec.symmetry.transforms.size() : 1;
    const std::size_t base = n / group;
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < base; ++i) {
        const Eigen::Vector3d p = sample_surface(spec, rng);
        if (group == 1) {
            cloud.points.row(row++) = p.transpose();
        } else {
            for (const auto& g : spec.symmetry.transforms) cloud.points.row(row++) = (g * p).transpose();
        }
    }
    while (row < static_cast<Eigen::Index>(n)) cloud.points.row(row++) = sample_surface(spec, rng).transpose();
    cloud.colors = Points(static_cast<Eigen::Index>(n), 3);
    for (Eigen::Index i = 0; i < cloud.points.rows(); ++i)
        cloud.colors->row(i) = texture_color(spec, cloud.points.row(i).transpose()).transpose();
    return cloud;
}

PointCloud make_observation(const PointCloud& dense_model, const Pose& gt, const ObservationOptions& opts,
                            std::uint64_t seed) {
    if (!(opts.occlusion_fraction >= 0.0) || opts.occlusion_fraction >= 0.95)
        throw std::invalid_argument("make_observation: occlusion fraction must lie in [0, 0.95)");
    if (opts.n == 0) throw std::invalid_argument("make_observation: n must be positive");
    std::mt19937_64 rng(seed);
    const Points moved = transform(gt, dense_model.points);
    const Eigen::RowVector3d centroid = moved.colwise().mean();
    const Eigen::Vector3d toward_viewer = -opts.view_dir.normalized();

    std::vector<Eigen::Index> visible;
    for (Eigen::Index i = 0; i < moved.rows(); ++i)
        if ((moved.row(i) - centroid).dot(toward_viewer.transpose()) >= 0.0) visible.push_back(i);
    if (visible.size() < 8) throw std::invalid_argument("make_observation: fewer than 8 visible points");

    // Occluder: drop the points closest to a random visible point.
    const std::size_t drop = static_cast<std::size_t>(std::floor(opts.occlusion_fraction * static_cast<double>(visible.size())));
    const auto center_idx = visible[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(visible.size()))];
    const Eigen::RowVector3d center = moved.row(center_idx);
    std::vector<std::pair<double, Eigen::Index>> by_dist;
    by_dist.reserve(visible.size());
    for (auto i : visible) by_dist.emplace_back((moved.row(i) - center).squaredNorm(), i);
    std::stable_sort(by_dist.begin(), by_dist.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Eigen::Index> kept;
    for (std::size_t k = drop; k < by_dist.size(); ++k) kept.push_back(by_dist[k].second);
    std::sort(kept.begin(), kept.end());
    if (kept.size() < 8) throw std::invalid_argument("make_observation: occlusion leaves fewer than 8 points");

    Points noisy(static_cast<Eigen::Index>(kept.size()), 3);
    for (std::size_t k = 0; k < kept.size(); ++k) {
        noisy.row(static_cast<Eigen::Index>(k)) = moved.row(kept[k]);
        if (opts.noise_sigma > 0.0)
            for (int c = 0; c < 3; ++c) noisy(static_cast<Eigen::Index>(k), c) += opts.noise_sigma * normal01(rng);
    }

    // Resample to exactly n rows.
    std::vector<std::size_t> pick(kept.size());
    for (std::size_t k = 0; k < pick.size(); ++k) pick[k] = k;
    std::vector<std::size_t> chosen;
    if (pick.size() >= opts.n) {
        for (std::size_t k = 0; k < opts.n; ++k) {
            const std::size_t j = k + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pick.size() - k));
            std::swap(pick[k], pick[j]);
            chosen.push_back(pick[k]);
        }
    } else {
        chosen = pick;
        while (chosen.size() < opts.n) chosen.push_back(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pick.size())));
    }
    PointCloud obs;
    obs.frame = Frame::camera;
    obs.points.resize(static_cast<Eigen::Index>(opts.n), 3);
    for (std::size_t k = 0; k < opts.n; ++k) obs.points.row(static_cast<Eigen::Index>(k)) = noisy.row(static_cast<Eigen::Index>(chosen[k]));
    if (dense_model.colors) {
        obs.colors = Points(static_cast<Eigen::Index>(opts.n), 3);
        for (std::size_t k = 0; k < opts.n; ++k)
            obs.colors->row(static_cast<Eigen::Index>(k)) = dense_model.colors->row(kept[chosen[k]]);
    }
    return obs;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
    std::array<double, 6> v{};
    for (;;) {
        for (double& x : v) x = normal01(rng);
        try {
            return rot6d_to_matrix(v);
        } catch (const std::domain_error&) {
            // measure-zero degenerate draw; try again
        }
    }
}

namespace {

struct ShapeAssets {
    PointCloud model;
    PointCloud dense;
    double diameter = 0.0;
};

std::vector<ShapeAssets> build_assets(const std::vector<ShapeSpec>& specs, const DatasetOptions& opts) {
    std::vector<ShapeAssets> assets;
    for (std::size_t k = 0; k < specs.size(); ++k) {
        ShapeAssets a;
        a.model = sample_model(specs[k], opts.n_model, mix_seed(opts.seed, 1'000'000 + 2 * k));
        a.dense = sample_model(specs[k], opts.dense_points, mix_seed(opts.seed, 1'000'001 + 2 * k));
        a.diameter = diameter(a.dense.points);
        assets.push_back(std::move(a));
    }
    return assets;
}

}  // namespace

Dataset generate_samples(const std::vector<ShapeSpec>& specs, const DatasetOptions& opts) {
    if (specs.empty()) throw std::invalid_argument("generate_samples: no shapes given");
    if (!(opts.split_ratio >= 0.0 && opts.split_ratio <= 1.0)) throw std::invalid_argument("split_ratio must lie in [0, 1]");
    const auto assets = build_assets(specs, opts);
    const auto n_train = static_cast<std::size_t>(std::llround(opts.split_ratio * static_cast<double>(opts.count)));
    Dataset ds;
    for (std::size_t i = 0; i < opts.count; ++i) {
        std::mt19937_64 rng(mix_seed(opts.seed, i));
        Sample s;
        s.shape_id = i % specs.size();
        const auto& spec = specs[s.shape_id];
        const auto& asset = assets[s.shape_id];
        s.gt.R = random_rotation(rng);
        for (int c = 0; c < 3; ++c) s.gt.t[c] = uniform(rng, -opts.translation_range, opts.translation_range);
        s.occlusion_fraction = uniform(rng, 0.0, opts.occlusion_max);
        s.noise_sigma = opts.noise_sigma;
        ObservationOptions oo;
        oo.view_dir = s.gt.t.norm() > 1e-9 ? Eigen::Vector3d(s.gt.t.normalized()) : Eigen::Vector3d::UnitZ();
        oo.occlusion_fraction = s.occlusion_fraction;
        oo.noise_sigma = opts.noise_sigma;
        oo.n = opts.n_obs;
        s.obs = make_observation(asset.dense, s.gt, oo, rng());
        s.model = asset.model;
        s.diameter = asset.diameter;
        s.symmetry = spec.symmetry;
        const bool train = i < n_train;
        char id[32];
        std::snprintf(id, sizeof id, "%s_%06zu", train ? "train" : "test", i);
        s.id = id;
        (train ? ds.train : ds.test).push_back(std::move(s));
    }
    return ds;
}

namespace {

json matrix_json(const Eigen::Matrix3d& R) {
    json a = json::array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) a.push_back(R(r, c));
    return a;
}

Eigen::Matrix3d matrix_from_json(const json& a) {
    if (!a.is_array() || a.size() != 9) throw std::runtime_error("expected 9 numbers for a rotation");
    Eigen::Matrix3d R;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) R(r, c) = a.at(r * 3 + c).get<double>();
    return R;
}

json symmetry_json(const SymmetrySpec& s) {
    json j;
    j["kind"] = s.symmetric() ? "discrete" : "none";
    j["transforms"] = json::array();
    for (const auto& g : s.transforms) j["transforms"].push_back(matrix_json(g));
    return j;
}

SymmetrySpec symmetry_from_json(const json& j) {
    SymmetrySpec s;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "discrete") s.kind = SymmetrySpec::Kind::discrete;
    else if (kind != "none") throw std::runtime_error("unknown symmetry kind " + kind);
    for (const auto& g : j.at("transforms")) s.transforms.push_back(matrix_from_json(g));
    return s;
}

}  // namespace

Dataset generate_dataset(const std::vector<ShapeSpec>& specs, const DatasetOptions& opts, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "models");
    fs::create_directories(dir / "obs");
    Dataset ds = generate_samples(specs, opts);
    std::vector<std::string> model_paths;
    for (std::size_t k = 0; k < specs.size(); ++k) {
        const std::string rel = "models/" + specs[k].name + ".ply";
        const auto it = std::find_if(ds.train.begin(), ds.train.end(), [&](const Sample& s) { return s.shape_id == k; });
        // assets are identical for every sample of a shape, so any sample's model will do
        const Sample* ref = it != ds.train.end() ? &*it : nullptr;
        if (!ref)
            for (const auto& s : ds.test)
                if (s.shape_id == k) {
                    ref = &s;
                    break;
                }
        if (ref) write_ply(dir / rel, ref->model);
        model_paths.push_back(rel);
    }
    auto write_split = [&](const std::vector<Sample>& split, const std::string& file) {
        std::ofstream out(dir / file, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + (dir / file).string());
        for (const auto& s : split) {
            const std::string obs_rel = "obs/" + s.id + ".ply";
            write_ply(dir / obs_rel, s.obs);
            json j;
            j["id"] = s.id;
            j["model_ply"] = model_paths[s.shape_id];
            j["obs_ply"] = obs_rel;
            j["gt"] = {{"R", matrix_json(s.gt.R)}, {"t", {s.gt.t[0], s.gt.t[1], s.gt.t[2]}}};
            j["shape_id"] = s.shape_id;
            j["diameter"] = s.diameter;
            j["symmetry"] = symmetry_json(s.symmetry);
            j["occlusion"] = s.occlusion_fraction;
            j["noise_sigma"] = s.noise_sigma;
            out << j.dump() << '\n';
        }
    };
    write_split(ds.train, "train.jsonl");
    write_split(ds.test, "test.jsonl");
    return ds;
}

std::vector<Sample> load_manifest(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
    const auto base = manifest.parent_path();
    std::map<std::string, PointCloud> models;
    std::vector<Sample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        Sample s;
        s.id = j.value("id", std::to_string(out.size()));
        const auto model_rel = j.at("model_ply").get<std::string>();
        auto it = models.find(model_rel);
        if (it == models.end()) it = models.emplace(model_rel, read_ply(base / model_rel, Frame::object)).first;
        s.model = it->second;
        s.obs = read_ply(base / j.at("obs_ply").get<std::string>(), Frame::camera);
        s.gt.R = matrix_from_json(j.at("gt").at("R"));
        const auto& t = j.at("gt").at("t");
        s.gt.t = Eigen::Vector3d(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
        s.shape_id = j.at("shape_id").get<std::size_t>();
        s.diameter = j.at("diameter").get<double>();
        s.symmetry = symmetry_from_json(j.at("symmetry"));
        s.occlusion_fraction = j.value("occlusion", 0.0);
        s.noise_sigma = j.value("noise_sigma", 0.0);
        out.push_back(std::move(s));
    }
    return out;
}

PointCloud subsample(const PointCloud& cloud, std::size_t n) {
    if (n == 0) throw std::invalid_argument("subsample: n must be positive");
    if (cloud.size() == n) return cloud;
    PointCloud out;
    out.frame = cloud.frame;
    out.points.resize(static_cast<Eigen::Index>(n), 3);
    if (cloud.colors) out.colors = Points(static_cast<Eigen::Index>(n), 3);
    for (std::size_t k = 0; k < n; ++k) {
        const auto src = static_cast<Eigen::Index>((k * cloud.size()) / n);
        out.points.row(static_cast<Eigen::Index>(k)) = cloud.points.row(src);
        if (cloud.colors) out.colors->row(static_cast<Eigen::Index>(k)) = cloud.colors->row(src);
    }
    return out;
}

}  // namespace dcl
