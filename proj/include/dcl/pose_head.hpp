#pragma once

// Confidence-weighted pose regression from paired features.

#include "dcl/fda.hpp"
#include "dcl/geometry.hpp"
#include "dcl/params.hpp"
#include "dcl/tensor.hpp"

#include <optional>
#include <random>
#include <string>

namespace dcl {

struct PairedFeatures {
    Tensor pose_pairs;   // rows x 2C
    Tensor match_pairs;  // rows x 2C
    std::size_t split_index = 0;  // rows before this index come from the P2P module
};

// Scores in (0, 1), one per paired row, stored as a rows x 1 tensor.
struct ConfidenceVector {
    Tensor s;
};

// Pose held as graph tensors: R is 3 x 3, t is 1 x 3.
struct PoseTensors {
    Tensor R;
    Tensor t;

    Pose value() const;
    static PoseTensors constant(const Pose& p);
};

// P2P rows [own | aligned] stacked over C2C rows [aligned | own].
PairedFeatures pair_features(const FdaOutput& p2p, const FdaOutput& c2c);
// Single-module variants used by ablations.
PairedFeatures pair_features_p2p(const FdaOutput& p2p);
PairedFeatures pair_features_c2c(const FdaOutput& c2c);

struct PoseHeadConfig {
    std::size_t pair_width = 256;     // 2C
    std::size_t pooled_width = 256;   // C_f
    std::size_t embed_depth = 2;
    std::size_t confidence_hidden = 128;
    std::size_t confidence_depth = 2;
    std::size_t head_hidden = 256;
    std::size_t head_depth = 2;
};

// ".confidence", ".embed", ".rot_head", ".trans_head"; the rotation head's
// last bias starts at the identity 6-vector (1,0,0,0,1,0).
void register_pose_head(ParameterStore& store, const std::string& prefix, const PoseHeadConfig& cfg,
                        std::mt19937_64& rng, bool with_confidence = true);

ConfidenceVector confidence(const ParameterStore& store, const std::string& prefix, const Tensor& match_pairs);

// f = sum_i softmax(s)_i * MLP(pose_pairs)_i as a 1 x C_f row. Without
// scores every row gets weight 1/N.
Tensor pooled_feature(const ParameterStore& store, const std::string& prefix,
                      const std::optional<ConfidenceVector>& s, const Tensor& pose_pairs);

// Separate rotation (6-vector -> Gram-Schmidt) and translation heads.
PoseTensors regress_pose(const ParameterStore& store, const std::string& prefix, const Tensor& f);

// Softmax of a rows x 1 score tensor, returned as 1 x rows weights.
Tensor softmax_weights(const Tensor& scores);

}  // namespace dcl
