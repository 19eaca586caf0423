#include "dcl/refine.hpp"

#include "dcl/objectives.hpp"

namespace dcl {

void register_refiner(ParameterStore& store, const std::string& prefix, const RefineConfig& cfg, std::mt19937_64& rng) {
    auto chain = [](std::size_t in, std::size_t hidden, std::size_t out, std::size_t depth) {
        std::vector<std::size_t> w{in};
        for (std::size_t i = 1; i < depth; ++i) w.push_back(hidden);
        w.push_back(out);
        return w;
    };
    register_mlp(store, prefix + ".embed", chain(3 + cfg.feature_width, cfg.embed_width, cfg.embed_width, cfg.embed_depth), rng);
    register_mlp(store, prefix + ".rot_head", chain(cfg.embed_width, cfg.head_hidden, 6, cfg.head_depth), rng);
    register_mlp(store, prefix + ".trans_head", chain(cfg.embed_width, cfg.head_hidden, 3, cfg.head_depth), rng);
    auto& bias = store.get(prefix + ".rot_head.l" + std::to_string(cfg.head_depth - 1) + ".b");
    const double identity6[6] = {1, 0, 0, 0, 1, 0};
    std::copy(identity6, identity6 + 6, bias.mutable_data().begin());
}

RefineState make_refine_state(const Pose& initial, const Tensor& aligned_pose, const std::optional<Tensor>& scores) {
    RefineState st;
    st.pose = initial;
    st.aligned_pose = aligned_pose.detach();
    if (scores) {
        if (scores->rows() < aligned_pose.rows()) throw ShapeError("refine: fewer scores than observed points");
        st.scores = slice_rows(scores->detach(), 0, aligned_pose.rows());
    }
    return st;
}

Points back_transform(const Points& obs, const Pose& pose) { return inverse_transform(pose, obs); }

ResidualTensors residual_pose(const ParameterStore& store, const std::string& prefix, const RefineState& state,
                              const Points& obs) {
    if (!state.aligned_pose.defined()) throw GraphError("refine: cached aligned features are missing");
    if (static_cast<std::size_t>(obs.rows()) != state.aligned_pose.rows())
        throw ShapeError("refine: observation size differs from cached features");
    const Tensor input = concat_cols({points_tensor(back_transform(obs, state.pose)), state.aligned_pose});
    const Tensor embedded = mlp_forward(store, prefix + ".embed", input);
    Tensor f = state.scores.defined() ? matmul(softmax_weights(state.scores), embedded)
                                      : scale(sum_rows(embedded), 1.0 / static_cast<double>(embedded.rows()));
    return {rot6d(mlp_forward(store, prefix + ".rot_head", f)), mlp_forward(store, prefix + ".trans_head", f)};
}

Pose compose(const Pose& prev, const Eigen::Matrix3d& dR, const Eigen::Vector3d& dt) {
    Pose out;
    out.R = orthonormalize(dR * prev.R);
    out.t = prev.R * dt + prev.t;
    return out;
}

PoseTensors compose(const Pose& prev, const ResidualTensors& delta) {
    const PoseTensors p = PoseTensors::constant(prev);
    return {matmul(delta.dR, p.R), add(matmul_nt(delta.dt, p.R), p.t)};
}

Pose refine_loop(const ParameterStore& store, const std::string& prefix, const Pose& initial, RefineState state,
                 const Points& obs, std::size_t iterations) {
    state.pose = initial;
    for (std::size_t k = 0; k < iterations; ++k) {
        const ResidualTensors delta = residual_pose(store, prefix, state, obs);
        const Pose d = PoseTensors{delta.dR, delta.dt}.value();
        state.pose = compose(state.pose, d.R, d.t);
        ++state.iteration;
    }
    return state.pose;
}

}  // namespace dcl
