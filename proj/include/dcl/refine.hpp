#pragma once

// Iterative residual pose refinement that reuses the aligned P2P pose
// features and the first N_X confidence scores of the main forward pass.

#include "dcl/geometry.hpp"
#include "dcl/params.hpp"
#include "dcl/pose_head.hpp"
#include "dcl/tensor.hpp"

#include <optional>
#include <random>
#include <string>

namespace dcl {

struct RefineState {
    Pose pose;
    std::size_t iteration = 0;
    Tensor aligned_pose;  // N_X x C, detached
    Tensor scores;        // N_X x 1, detached; absent when confidence is disabled
};

struct ResidualTensors {
    Tensor dR;  // 3 x 3
    Tensor dt;  // 1 x 3
};

struct RefineConfig {
    std::size_t feature_width = 128;
    std::size_t embed_width = 256;
    std::size_t embed_depth = 2;
    std::size_t head_hidden = 256;
    std::size_t head_depth = 2;
};

// ".embed", ".rot_head", ".trans_head"; heads start at the identity residual
// direction (rotation bias (1,0,0,0,1,0)).
void register_refiner(ParameterStore& store, const std::string& prefix, const RefineConfig& cfg, std::mt19937_64& rng);

// Builds a state with detached copies of the cached tensors. `scores` may be
// the full N_X + N_Y vector; only the first N_X rows are kept.
RefineState make_refine_state(const Pose& initial, const Tensor& aligned_pose, const std::optional<Tensor>& scores);

// Row-wise R^T (p - t).
Points back_transform(const Points& obs, const Pose& pose);

// Embeds [back-transformed points | cached features], pools with the softmax
// of the cached scores (uniform without scores) and regresses (dR, dt).
// Throws GraphError when the cache is empty.
ResidualTensors residual_pose(const ParameterStore& store, const std::string& prefix, const RefineState& state,
                              const Points& obs);

// R_k = dR R_{k-1}, t_k = R_{k-1} dt + t_{k-1}, with R_k re-orthonormalized.
Pose compose(const Pose& prev, const Eigen::Matrix3d& dR, const Eigen::Vector3d& dt);
// Graph version of compose (prev is constant), used to train the refiner.
PoseTensors compose(const Pose& prev, const ResidualTensors& delta);

// K residual steps starting from `initial`.
Pose refine_loop(const ParameterStore& store, const std::string& prefix, const Pose& initial, RefineState state,
                 const Points& obs, std::size_t iterations);

}  // namespace dcl
