#pragma once

// Feature disengagement and alignment: split point-wise features into pose
// and match streams, attend from the query set to the key set with the match
// streams, carry both streams across, and decode points from the aligned
// pose stream.

#include "dcl/geometry.hpp"
#include "dcl/params.hpp"
#include "dcl/tensor.hpp"

#include <random>
#include <string>

namespace dcl {

enum class FeatureRole { raw, pose, match, aligned_pose, aligned_match };

struct FeatureMap {
    Tensor features;  // N x C, row i belongs to point i of the owning cloud
    Frame frame = Frame::camera;
    FeatureRole role = FeatureRole::raw;
};

// Row-stochastic N x M weights from query points to key points.
struct AttentionMap {
    Tensor weights;
};

struct FdaOutput {
    Tensor own_pose;
    Tensor own_match;
    Tensor aligned_pose;
    Tensor aligned_match;
    Tensor decoded_points;  // N x 3, expressed in the key's frame
    AttentionMap attention;
};

struct FdaConfig {
    std::size_t raw_width = 256;
    std::size_t branch_width = 128;
    std::size_t disengage_depth = 2;
    std::size_t decoder_depth = 3;
    std::size_t decoder_hidden = 128;
};

// Registers the query/key disengagement MLPs and the point decoder under
// `prefix` (".query_pose", ".query_match", ".key_pose", ".key_match",
// ".decoder").
void register_fda(ParameterStore& store, const std::string& prefix, const FdaConfig& cfg, std::mt19937_64& rng);

// `side` is "query" or "key". Throws std::invalid_argument unless role is raw.
std::pair<FeatureMap, FeatureMap> disengage(const ParameterStore& store, const std::string& prefix,
                                            const std::string& side, const FeatureMap& raw);

// softmax(match_q * match_k^T) normalized over keys, without temperature.
AttentionMap compute_attention(const Tensor& match_q, const Tensor& match_k);

Tensor align(const AttentionMap& att, const Tensor& key_features);

Tensor decode_points(const ParameterStore& store, const std::string& prefix, const FeatureMap& aligned_pose);

// Full module. Throws std::invalid_argument when both inputs share a frame.
FdaOutput fda_forward(const ParameterStore& store, const std::string& prefix, const FeatureMap& query,
                      const FeatureMap& key);

}  // namespace dcl
