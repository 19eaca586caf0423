#include "dcl/fda.hpp"

#include <stdexcept>

namespace dcl {

namespace {

std::vector<std::size_t> widths(std::size_t in, std::size_t hidden, std::size_t out, std::size_t depth) {
    if (depth == 0) throw std::invalid_argument("MLP depth must be positive");
    std::vector<std::size_t> w{in};
    for (std::size_t i = 1; i < depth; ++i) w.push_back(hidden);
    w.push_back(out);
    return w;
}

}  // namespace

void register_fda(ParameterStore& store, const std::string& prefix, const FdaConfig& cfg, std::mt19937_64& rng) {
    const auto dis = widths(cfg.raw_width, cfg.branch_width, cfg.branch_width, cfg.disengage_depth);
    for (const char* name : {".query_pose", ".query_match", ".key_pose", ".key_match"})
        register_mlp(store, prefix + name, dis, rng);
    register_mlp(store, prefix + ".decoder", widths(cfg.branch_width, cfg.decoder_hidden, 3, cfg.decoder_depth), rng);
}

std::pair<FeatureMap, FeatureMap> disengage(const ParameterStore& store, const std::string& prefix,
                                            const std::string& side, const FeatureMap& raw) {
    if (raw.role != FeatureRole::raw) throw std::invalid_argument("disengage expects raw features");
    FeatureMap pose{mlp_forward(store, prefix + "." + side + "_pose", raw.features), raw.frame, FeatureRole::pose};
    FeatureMap match{mlp_forward(store, prefix + "." + side + "_match", raw.features), raw.frame, FeatureRole::match};
    return {std::move(pose), std::move(match)};
}

AttentionMap compute_attention(const Tensor& match_q, const Tensor& match_k) {
    if (match_q.cols() != match_k.cols())
        throw ShapeError("compute_attention: match widths differ (" + std::to_string(match_q.cols()) + " vs " +
                         std::to_string(match_k.cols()) + ")");
    return {softmax_rows(matmul_nt(match_q, match_k))};
}

Tensor align(const AttentionMap& att, const Tensor& key_features) {
    if (att.weights.cols() != key_features.rows()) throw ShapeError("align: attention columns differ from key rows");
    return matmul(att.weights, key_features);
}

Tensor decode_points(const ParameterStore& store, const std::string& prefix, const FeatureMap& aligned_pose) {
    if (aligned_pose.role != FeatureRole::aligned_pose) throw std::invalid_argument("decode_points expects aligned pose features");
    return mlp_forward(store, prefix + ".decoder", aligned_pose.features);
}

FdaOutput fda_forward(const ParameterStore& store, const std::string& prefix, const FeatureMap& query,
                      const FeatureMap& key) {
    if (query.frame == key.frame) throw std::invalid_argument("fda_forward: query and key share a coordinate frame");
    auto [q_pose, q_match] = disengage(store, prefix, "query", query);
    auto [k_pose, k_match] = disengage(store, prefix, "key", key);
    FdaOutput out;
    out.attention = compute_attention(q_match.features, k_match.features);
    out.own_pose = q_pose.features;
    out.own_match = q_match.features;
    out.aligned_pose = align(out.attention, k_pose.features);
    out.aligned_match = align(out.attention, k_match.features);
    out.decoded_points = decode_points(store, prefix, {out.aligned_pose, key.frame, FeatureRole::aligned_pose});
    return out;
}

}  // namespace dcl
