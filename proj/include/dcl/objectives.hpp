#pragma once

// Training objectives: reconstruction losses for both correspondence
// directions, the pose loss, the confidence loss and their weighted sum.
// Distances are unsquared L2 norms. For symmetric objects the per-index
// distance is replaced by nearest-point distances.

#include "dcl/geometry.hpp"
#include "dcl/pose_head.hpp"
#include "dcl/tensor.hpp"

namespace dcl {

struct LossWeights {
    double lambda_p2p = 5.0;
    double lambda_c2c = 1.0;
    double lambda_pose = 1.0;
    double lambda_conf = 1.0;
    double w = 0.01;  // balance of the -log(s) term
};

struct LossParts {
    Tensor p2p;
    Tensor c2c;
    Tensor pose;
    Tensor conf;
};

// Graph versions of the rigid maps.
Tensor transform_points(const PoseTensors& pose, const Tensor& pts);          // p R^T + t
Tensor inverse_transform_points(const PoseTensors& pose, const Tensor& pts);  // (p - t) R

Tensor points_tensor(const Points& pts);

// Mean per-row distance, or Chamfer distance when `sym` is symmetric.
Tensor set_distance(const Tensor& pred, const Tensor& target, const SymmetrySpec& sym);

// Observed points taken to the object frame by gt are the target.
Tensor loss_p2p(const Tensor& decoded, const Points& obs, const Pose& gt, const SymmetrySpec& sym);
// Model points taken to the camera frame by gt are the target.
Tensor loss_c2c(const Tensor& decoded, const Points& model, const Pose& gt, const SymmetrySpec& sym);
// ADD-style (per index) or, for symmetric objects, ADD-S-style (closest point).
Tensor loss_pose(const PoseTensors& pred, const Pose& gt, const Points& model, const SymmetrySpec& sym);

// sigma(d, s) = d s - w log(s), elementwise over equal-shape tensors.
Tensor sigma(const Tensor& d, const Tensor& s, double w);
double sigma(double d, double s, double w);

// Residual distances driving the confidence loss, measured against the
// predicted pose. Each is rows x 1.
Tensor p2p_residuals(const Tensor& decoded, const Points& obs, const PoseTensors& pred, const SymmetrySpec& sym);
Tensor c2c_residuals(const Tensor& decoded, const Points& model, const PoseTensors& pred, const SymmetrySpec& sym);

// mean_i sigma(d_p2p_i, s_i) + mean_j sigma(d_c2c_j, s_{N_X + j}).
// Throws std::invalid_argument if a score is not strictly positive.
Tensor loss_conf(const Tensor& decoded_p2p, const Tensor& decoded_c2c, const Points& obs, const Points& model,
                 const PoseTensors& pred, const ConfidenceVector& s, const SymmetrySpec& sym, double w);

// Single-block confidence term, for variants running only one module.
Tensor conf_block(const Tensor& residuals, const Tensor& scores, double w);

Tensor total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace dcl
