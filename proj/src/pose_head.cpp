#include "dcl/pose_head.hpp"

#include <stdexcept>

namespace dcl {

Pose PoseTensors::value() const {
    Pose p;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) p.R(r, c) = R(r, c);
        p.t[r] = t(0, r);
    }
    return p;
}

PoseTensors PoseTensors::constant(const Pose& p) {
    std::vector<double> r(9), t(3);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) r[i * 3 + j] = p.R(i, j);
        t[i] = p.t[i];
    }
    return {Tensor(3, 3, std::move(r)), Tensor(1, 3, std::move(t))};
}

namespace {

void check_widths(const FdaOutput& m) {
    if (m.own_pose.cols() != m.aligned_pose.cols() || m.own_match.cols() != m.aligned_match.cols())
        throw ShapeError("pair_features: own and aligned widths differ within a module");
}

}  // namespace

PairedFeatures pair_features(const FdaOutput& p2p, const FdaOutput& c2c) {
    check_widths(p2p);
    check_widths(c2c);
    if (p2p.own_pose.cols() != c2c.own_pose.cols() || p2p.own_match.cols() != c2c.own_match.cols())
        throw ShapeError("pair_features: feature widths differ across modules");
    PairedFeatures out;
    out.pose_pairs = concat_rows({concat_cols({p2p.own_pose, p2p.aligned_pose}), concat_cols({c2c.aligned_pose, c2c.own_pose})});
    out.match_pairs =
        concat_rows({concat_cols({p2p.own_match, p2p.aligned_match}), concat_cols({c2c.aligned_match, c2c.own_match})});
    out.split_index = p2p.own_pose.rows();
    return out;
}

PairedFeatures pair_features_p2p(const FdaOutput& p2p) {
    check_widths(p2p);
    return {concat_cols({p2p.own_pose, p2p.aligned_pose}), concat_cols({p2p.own_match, p2p.aligned_match}),
            p2p.own_pose.rows()};
}

PairedFeatures pair_features_c2c(const FdaOutput& c2c) {
    check_widths(c2c);
    return {concat_cols({c2c.aligned_pose, c2c.own_pose}), concat_cols({c2c.aligned_match, c2c.own_match}), 0};
}

void register_pose_head(ParameterStore& store, const std::string& prefix, const PoseHeadConfig& cfg,
                        std::mt19937_64& rng, bool with_confidence) {
    auto chain = [](std::size_t in, std::size_t hidden, std::size_t out, std::size_t depth) {
        std::vector<std::size_t> w{in};
        for (std::size_t i = 1; i < depth; ++i) w.push_back(hidden);
        w.push_back(out);
        return w;
    };
    if (with_confidence)
        register_mlp(store, prefix + ".confidence", chain(cfg.pair_width, cfg.confidence_hidden, 1, cfg.confidence_depth), rng);
    register_mlp(store, prefix + ".embed", chain(cfg.pair_width, cfg.pooled_width, cfg.pooled_width, cfg.embed_depth), rng);
    register_mlp(store, prefix + ".rot_head", chain(cfg.pooled_width, cfg.head_hidden, 6, cfg.head_depth), rng);
    register_mlp(store, prefix + ".trans_head", chain(cfg.pooled_width, cfg.head_hidden, 3, cfg.head_depth), rng);
    auto& bias = store.get(prefix + ".rot_head.l" + std::to_string(cfg.head_depth - 1) + ".b");
    const double identity6[6] = {1, 0, 0, 0, 1, 0};
    std::copy(identity6, identity6 + 6, bias.mutable_data().begin());
}

ConfidenceVector confidence(const ParameterStore& store, const std::string& prefix, const Tensor& match_pairs) {
    Tensor logits = mlp_forward(store, prefix + ".confidence", match_pairs);
    if (logits.cols() != 1) throw ShapeError("confidence MLP must emit one value per row");
    return {sigmoid(logits)};
}

Tensor softmax_weights(const Tensor& scores) {
    if (scores.cols() != 1) throw ShapeError("softmax_weights expects a column of scores");
    return softmax_rows(transpose(scores));
}

Tensor pooled_feature(const ParameterStore& store, const std::string& prefix,
                      const std::optional<ConfidenceVector>& s, const Tensor& pose_pairs) {
    Tensor embedded = mlp_forward(store, prefix + ".embed", pose_pairs);
    if (!s) return scale(sum_rows(embedded), 1.0 / static_cast<double>(embedded.rows()));
    if (s->s.rows() != pose_pairs.rows()) throw ShapeError("pooled_feature: score count differs from pair rows");
    return matmul(softmax_weights(s->s), embedded);
}

PoseTensors regress_pose(const ParameterStore& store, const std::string& prefix, const Tensor& f) {
    return {rot6d(mlp_forward(store, prefix + ".rot_head", f)), mlp_forward(store, prefix + ".trans_head", f)};
}

}  // namespace dcl
