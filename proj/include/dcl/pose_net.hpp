#pragma once

// Network assembly: point-wise encoders for the observation and the CAD
// model, dual FDA modules, the confidence-weighted pose head and the
// refiner, all parameters living in one ParameterStore.

#include "dcl/fda.hpp"
#include "dcl/geometry.hpp"
#include "dcl/objectives.hpp"
#include "dcl/params.hpp"
#include "dcl/pose_head.hpp"
#include "dcl/refine.hpp"

#include <cstdint>
#include <optional>
#include <string>

namespace dcl {

// Which correspondence modules feed the pose head.
enum class FdaMode { dual, p2p, c2c, none };

std::string to_string(FdaMode m);
FdaMode parse_fda_mode(const std::string& s);

struct NetworkConfig {
    std::size_t n_points_obs = 1024;
    std::size_t n_points_model = 1024;
    std::size_t encoder_hidden = 64;
    std::size_t encoder_local = 128;
    std::size_t raw_width = 256;
    std::size_t branch_width = 128;
    std::size_t pooled_width = 256;
    std::size_t disengage_depth = 2;
    std::size_t decoder_depth = 3;
    std::size_t embed_depth = 2;
    std::size_t head_depth = 2;
    bool use_rgb = true;
    // Encode the observation relative to its centroid and add the centroid
    // back to every camera-frame output.
    bool center_observation = true;
    FdaMode fda_mode = FdaMode::dual;
    bool use_confidence = true;
    std::uint64_t seed = 42;

    // Throws std::invalid_argument on out-of-range values.
    void validate() const;
};

struct ForwardResult {
    PoseTensors pred;
    std::optional<ConfidenceVector> scores;
    std::optional<FdaOutput> p2p;
    std::optional<FdaOutput> c2c;  // decoded points are absolute camera coordinates
    Eigen::Vector3d offset = Eigen::Vector3d::Zero();
};

class PoseNet {
public:
    explicit PoseNet(NetworkConfig cfg);

    const NetworkConfig& config() const { return cfg_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    bool has_refiner() const { return cfg_.fda_mode == FdaMode::dual || cfg_.fda_mode == FdaMode::p2p; }

    // Per-point shared MLP on xyz [+ rgb], a max-pooled global vector appended
    // to every row, then one more MLP. Throws std::invalid_argument if colors
    // are required but missing.
    FeatureMap encode(const PointCloud& cloud, const std::string& prefix) const;

    // The CAD model's features depend only on parameters and the model, so
    // callers may compute them once and pass them to forward().
    FeatureMap encode_model(const PointCloud& model) const { return encode(model, "enc_model"); }

    ForwardResult forward(const PointCloud& obs, const PointCloud& model,
                          const std::optional<FeatureMap>& model_features = std::nullopt) const;

    // Loss parts of one sample (undefined tensors for absent modules).
    LossParts losses(const ForwardResult& fw, const Points& obs, const Points& model, const Pose& gt,
                     const SymmetrySpec& sym, double conf_w) const;

    // Refinement state seeded from a forward pass; needs the P2P module.
    RefineState refine_state(const ForwardResult& fw) const;

    Pose refine(const ForwardResult& fw, const Points& obs, std::size_t iterations) const;

    // Mean L_pose over K refinement steps, each started from the detached
    // previous pose. Gradients reach only the refiner's parameters.
    Tensor refinement_loss(const ForwardResult& fw, const Points& obs, const Points& model, const Pose& gt,
                           const SymmetrySpec& sym, std::size_t iterations) const;

private:
    NetworkConfig cfg_;
    ParameterStore params_;
};

// Least-squares pose from decoded correspondences: P2P pairs
// (decoded_p2p_i -> obs_i) and C2C pairs (model_j -> decoded_c2c_j), with
// optional per-pair weights. Either module may be absent.
Pose solve_from_correspondence(const FdaOutput* p2p, const FdaOutput* c2c, const Points& obs, const Points& model,
                               const std::optional<ConfidenceVector>& scores = std::nullopt);

Points tensor_points(const Tensor& t);

}  // namespace dcl
