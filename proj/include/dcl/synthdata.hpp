#pragma once

// Synthetic CAD models, random poses and partial, occluded, noisy
// observations with exact ground truth.

#include "dcl/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace dcl {

enum class ShapeKind { box, cylinder, ell_shape, asymmetric_blob };

std::string to_string(ShapeKind k);

struct ShapeSpec {
    std::string name;
    ShapeKind kind = ShapeKind::box;
    // box: edge lengths; cylinder: (diameter, diameter, height);
    // ell_shape: (long arm, short arm, thickness); blob: semi-axes.
    Eigen::Vector3d dimensions = Eigen::Vector3d::Constant(0.1);
    SymmetrySpec symmetry;
    Eigen::Vector3d color = Eigen::Vector3d::Constant(0.5);
    // Surface pattern over the object frame, invariant under the symmetry
    // group; off means the flat `color`.
    bool textured = true;
};

// Color of surface point p (object frame): 0.25 tint + 0.75 pattern.
Eigen::Vector3d texture_color(const ShapeSpec& spec, const Eigen::Vector3d& p);

// Square prism (4-fold about z plus flips), cylinder (8-fold about z plus
// flips), an L-shaped bracket and a lumpy blob. Sizes 0.1 to 0.25 m.
std::vector<ShapeSpec> default_shapes();

// Dihedral group of order 2k: rotations by 2 pi i / k about z, each
// optionally followed by a half turn about x.
SymmetrySpec dihedral_symmetry(int k);

// Deterministic helpers on top of std::mt19937_64 (whose output sequence is
// fixed by the standard, unlike the std distributions).
double uniform01(std::mt19937_64& rng);
double uniform(std::mt19937_64& rng, double lo, double hi);
double normal01(std::mt19937_64& rng);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

// Surface sample in the object frame. For symmetric shapes, n / |G| base
// points are replicated by every group element so the set maps onto itself;
// this is exact when |G| divides n (otherwise the remainder is filled with
// unreplicated points).
PointCloud sample_model(const ShapeSpec& spec, std::size_t n, std::uint64_t seed);

struct ObservationOptions {
    Eigen::Vector3d view_dir = Eigen::Vector3d::UnitZ();
    double occlusion_fraction = 0.0;
    double noise_sigma = 0.0;
    std::size_t n = 1024;
};

// Moves the dense model by gt, keeps the half facing the viewer, removes a
// spherical patch holding `occlusion_fraction` of what remains, adds
// Gaussian noise and resamples to exactly n points (with replacement if
// needed). Throws std::invalid_argument when fewer than 8 points survive or
// the fraction is >= 0.95.
PointCloud make_observation(const PointCloud& dense_model, const Pose& gt, const ObservationOptions& opts,
                            std::uint64_t seed);

struct Sample {
    std::string id;
    PointCloud model;
    PointCloud obs;
    Pose gt;
    std::size_t shape_id = 0;
    double diameter = 0.0;
    SymmetrySpec symmetry;
    double occlusion_fraction = 0.0;
    double noise_sigma = 0.0;
};

struct DatasetOptions {
    std::size_t count = 2500;
    double split_ratio = 0.8;
    std::uint64_t seed = 42;
    std::size_t n_obs = 1024;
    std::size_t n_model = 1024;
    std::size_t dense_points = 4096;
    double occlusion_max = 0.3;
    double noise_sigma = 0.002;
    double translation_range = 0.5;  // t uniform in [-range, range]^3
};

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
};

// Uniform rotation: Gram-Schmidt of a Gaussian 6-vector.
Eigen::Matrix3d random_rotation(std::mt19937_64& rng);

Dataset generate_samples(const std::vector<ShapeSpec>& specs, const DatasetOptions& opts);

// Writes models/, obs/, train.jsonl and test.jsonl under `dir`; one JSON
// object per line: {model_ply, obs_ply, gt: {R, t}, shape_id, diameter,
// symmetry, occlusion, noise_sigma, id}. Paths are relative to `dir`.
Dataset generate_dataset(const std::vector<ShapeSpec>& specs, const DatasetOptions& opts, const std::filesystem::path& dir);

// Loads one manifest (train.jsonl or test.jsonl) written by generate_dataset.
std::vector<Sample> load_manifest(const std::filesystem::path& manifest);

// Deterministic subset of `n` rows (evenly strided); returns the cloud
// unchanged if it already has n points.
PointCloud subsample(const PointCloud& cloud, std::size_t n);

}  // namespace dcl
