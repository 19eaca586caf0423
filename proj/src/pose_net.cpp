#include "dcl/pose_net.hpp"

#include <random>
#include <stdexcept>

namespace dcl {

std::string to_string(FdaMode m) {
    switch (m) {
        case FdaMode::dual: return "dual";
        case FdaMode::p2p: return "p2p";
        case FdaMode::c2c: return "c2c";
        case FdaMode::none: return "none";
    }
    return "dual";
}

FdaMode parse_fda_mode(const std::string& s) {
    if (s == "dual") return FdaMode::dual;
    if (s == "p2p") return FdaMode::p2p;
    if (s == "c2c") return FdaMode::c2c;
    if (s == "none") return FdaMode::none;
    throw std::invalid_argument("unknown fda_mode '" + s + "' (expected dual, p2p, c2c or none)");
}

void NetworkConfig::validate() const {
    if (n_points_obs < 8 || n_points_model < 8) throw std::invalid_argument("point counts must be at least 8");
    for (std::size_t w : {encoder_hidden, encoder_local, raw_width, branch_width, pooled_width})
        if (w == 0) throw std::invalid_argument("feature widths must be positive");
    for (std::size_t d : {disengage_depth, decoder_depth, embed_depth, head_depth})
        if (d == 0) throw std::invalid_argument("MLP depths must be positive");
}

PoseNet::PoseNet(NetworkConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    const std::size_t in = cfg_.use_rgb ? 6 : 3;
    for (const char* enc : {"enc_obs", "enc_model"}) {
        register_mlp(params_, std::string(enc) + ".local", {in, cfg_.encoder_hidden, cfg_.encoder_local}, rng);
        register_mlp(params_, std::string(enc) + ".fuse", {2 * cfg_.encoder_local, cfg_.raw_width}, rng);
    }
    const FdaConfig fda{cfg_.raw_width, cfg_.branch_width, cfg_.disengage_depth, cfg_.decoder_depth, cfg_.branch_width};
    if (cfg_.fda_mode == FdaMode::dual || cfg_.fda_mode == FdaMode::p2p) register_fda(params_, "p2p", fda, rng);
    if (cfg_.fda_mode == FdaMode::dual || cfg_.fda_mode == FdaMode::c2c) register_fda(params_, "c2c", fda, rng);

    PoseHeadConfig head;
    head.pair_width = cfg_.fda_mode == FdaMode::none ? cfg_.raw_width : 2 * cfg_.branch_width;
    head.pooled_width = cfg_.pooled_width;
    head.embed_depth = cfg_.embed_depth;
    head.confidence_hidden = cfg_.branch_width;
    head.head_hidden = cfg_.pooled_width;
    head.head_depth = cfg_.head_depth;
    const bool with_conf = cfg_.use_confidence && cfg_.fda_mode != FdaMode::none;
    register_pose_head(params_, "head", head, rng, with_conf);

    if (has_refiner()) {
        RefineConfig rc;
        rc.feature_width = cfg_.branch_width;
        rc.embed_width = cfg_.pooled_width;
        rc.embed_depth = cfg_.embed_depth;
        rc.head_hidden = cfg_.pooled_width;
        rc.head_depth = cfg_.head_depth;
        register_refiner(params_, "refine", rc, rng);
    }
}

FeatureMap PoseNet::encode(const PointCloud& cloud, const std::string& prefix) const {
    cloud.validate();
    const std::size_t n = cloud.size();
    Tensor input = points_tensor(cloud.points);
    if (cfg_.use_rgb) {
        if (!cloud.colors) throw std::invalid_argument("encoder configured for RGB but the cloud has no colors");
        input = concat_cols({input, points_tensor(*cloud.colors)});
    }
    const Tensor local = relu(mlp_forward(params_, prefix + ".local", input));
    const Tensor global = repeat_rows(max_rows(local), n);
    return {mlp_forward(params_, prefix + ".fuse", concat_cols({local, global})), cloud.frame, FeatureRole::raw};
}

namespace {

Tensor offset_row(const Eigen::Vector3d& c) { return Tensor(1, 3, std::vector<double>{c[0], c[1], c[2]}); }

}  // namespace

ForwardResult PoseNet::forward(const PointCloud& obs, const PointCloud& model,
                               const std::optional<FeatureMap>& model_features) const {
    if (obs.frame != Frame::camera) throw std::invalid_argument("forward: observation must be in the camera frame");
    if (model.frame != Frame::object) throw std::invalid_argument("forward: model must be in the object frame");
    ForwardResult out;
    PointCloud local = obs;
    if (cfg_.center_observation) {
        obs.validate();
        out.offset = obs.points.colwise().mean().transpose();
        local.points.rowwise() -= out.offset.transpose();
    }
    const FeatureMap fx = encode(local, "enc_obs");
    const FeatureMap fy = model_features ? *model_features : encode_model(model);
    const Tensor offset = offset_row(out.offset);

    const bool conf = cfg_.use_confidence && cfg_.fda_mode != FdaMode::none;
    Tensor pose_pairs;
    if (cfg_.fda_mode == FdaMode::none) {
        pose_pairs = fx.features;
    } else {
        std::optional<PairedFeatures> pairs;
        if (cfg_.fda_mode != FdaMode::c2c) out.p2p = fda_forward(params_, "p2p", fx, fy);
        if (cfg_.fda_mode != FdaMode::p2p) {
            out.c2c = fda_forward(params_, "c2c", fy, fx);
            out.c2c->decoded_points = add_row(out.c2c->decoded_points, offset);
        }
        if (out.p2p && out.c2c) pairs = pair_features(*out.p2p, *out.c2c);
        else if (out.p2p) pairs = pair_features_p2p(*out.p2p);
        else pairs = pair_features_c2c(*out.c2c);
        pose_pairs = pairs->pose_pairs;
        if (conf) out.scores = confidence(params_, "head", pairs->match_pairs);
    }
    const Tensor f = pooled_feature(params_, "head", out.scores, pose_pairs);
    out.pred = regress_pose(params_, "head", f);
    out.pred.t = add_row(out.pred.t, offset);
    return out;
}

LossParts PoseNet::losses(const ForwardResult& fw, const Points& obs, const Points& model, const Pose& gt,
                          const SymmetrySpec& sym, double conf_w) const {
    LossParts parts;
    if (fw.p2p) parts.p2p = loss_p2p(fw.p2p->decoded_points, obs, gt, sym);
    if (fw.c2c) parts.c2c = loss_c2c(fw.c2c->decoded_points, model, gt, sym);
    parts.pose = loss_pose(fw.pred, gt, model, sym);
    if (fw.scores) {
        if (fw.p2p && fw.c2c) {
            parts.conf = loss_conf(fw.p2p->decoded_points, fw.c2c->decoded_points, obs, model, fw.pred, *fw.scores, sym, conf_w);
        } else if (fw.p2p) {
            parts.conf = conf_block(p2p_residuals(fw.p2p->decoded_points, obs, fw.pred, sym), fw.scores->s, conf_w);
        } else {
            parts.conf = conf_block(c2c_residuals(fw.c2c->decoded_points, model, fw.pred, sym), fw.scores->s, conf_w);
        }
    }
    return parts;
}

RefineState PoseNet::refine_state(const ForwardResult& fw) const {
    if (!fw.p2p) throw GraphError("refinement needs the P2P module's aligned features");
    std::optional<Tensor> scores;
    if (fw.scores) scores = fw.scores->s;
    return make_refine_state(fw.pred.value(), fw.p2p->aligned_pose, scores);
}

Pose PoseNet::refine(const ForwardResult& fw, const Points& obs, std::size_t iterations) const {
    if (iterations == 0 || !has_refiner()) return fw.pred.value();
    return refine_loop(params_, "refine", fw.pred.value(), refine_state(fw), obs, iterations);
}

Tensor PoseNet::refinement_loss(const ForwardResult& fw, const Points& obs, const Points& model, const Pose& gt,
                                const SymmetrySpec& sym, std::size_t iterations) const {
    if (iterations == 0) throw std::invalid_argument("refinement_loss needs at least one iteration");
    RefineState state = refine_state(fw);
    Tensor total;
    for (std::size_t k = 0; k < iterations; ++k) {
        const PoseTensors composed = compose(state.pose, residual_pose(params_, "refine", state, obs));
        const Tensor l = loss_pose(composed, gt, model, sym);
        total = total.defined() ? add(total, l) : l;
        const Pose next = composed.value();
        state.pose.R = orthonormalize(next.R);
        state.pose.t = next.t;
        ++state.iteration;
    }
    return scale(total, 1.0 / static_cast<double>(iterations));
}

Points tensor_points(const Tensor& t) {
    if (t.cols() != 3) throw ShapeError("tensor_points expects N x 3");
    Points p(static_cast<Eigen::Index>(t.rows()), 3);
    std::copy(t.data().begin(), t.data().end(), p.data());
    return p;
}

Pose solve_from_correspondence(const FdaOutput* p2p, const FdaOutput* c2c, const Points& obs, const Points& model,
                               const std::optional<ConfidenceVector>& scores) {
    if (!p2p && !c2c) throw std::invalid_argument("solve_from_correspondence: no correspondence module given");
    std::vector<const Points*> srcs, dsts;
    Points decoded_p2p, decoded_c2c;
    if (p2p) {
        decoded_p2p = tensor_points(p2p->decoded_points);
        if (decoded_p2p.rows() != obs.rows()) throw ShapeError("P2P decoded points differ in count from the observation");
        srcs.push_back(&decoded_p2p);
        dsts.push_back(&obs);
    }
    if (c2c) {
        decoded_c2c = tensor_points(c2c->decoded_points);
        if (decoded_c2c.rows() != model.rows()) throw ShapeError("C2C decoded points differ in count from the model");
        srcs.push_back(&model);
        dsts.push_back(&decoded_c2c);
    }
    Eigen::Index total = 0;
    for (const auto* s : srcs) total += s->rows();
    Points src(total, 3), dst(total, 3);
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < srcs.size(); ++k) {
        src.middleRows(row, srcs[k]->rows()) = *srcs[k];
        dst.middleRows(row, dsts[k]->rows()) = *dsts[k];
        row += srcs[k]->rows();
    }
    if (!scores) return arun_solve(src, dst);
    if (static_cast<Eigen::Index>(scores->s.rows()) != total) throw ShapeError("solve_from_correspondence: score count mismatch");
    return arun_solve(src, dst, scores->s.data());
}

}  // namespace dcl
