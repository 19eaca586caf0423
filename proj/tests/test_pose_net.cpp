#include "dcl/pose_net.hpp"
#include "dcl/synthdata.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <numeric>

using namespace dcl;

namespace {

NetworkConfig tiny_config(FdaMode mode = FdaMode::dual, bool conf = true) {
    NetworkConfig c;
    c.n_points_obs = 32;
    c.n_points_model = 32;
    c.encoder_hidden = 8;
    c.encoder_local = 8;
    c.raw_width = 12;
    c.branch_width = 6;
    c.pooled_width = 10;
    c.fda_mode = mode;
    c.use_confidence = conf;
    c.seed = 7;
    return c;
}

const Dataset& tiny_data() {
    static const Dataset d = [] {
        DatasetOptions o;
        o.count = 8;
        o.n_obs = 32;
        o.n_model = 32;
        o.dense_points = 512;
        o.seed = 3;
        return generate_samples(default_shapes(), o);
    }();
    return d;
}

PointCloud permuted(const PointCloud& c, const std::vector<Eigen::Index>& perm) {
    PointCloud out = c;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        out.points.row(static_cast<Eigen::Index>(i)) = c.points.row(perm[i]);
        if (c.colors) out.colors->row(static_cast<Eigen::Index>(i)) = c.colors->row(perm[i]);
    }
    return out;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

double grad_norm(const ParameterStore::Entry& e) {
    double n = 0.0;
    for (double g : e.value.grad()) n += g * g;
    return n;
}

}  // namespace

TEST(Encoder, PermutationEquivariantAndShapes) {
    const PoseNet net(tiny_config());
    const PointCloud& obs = tiny_data().train[0].obs;
    std::vector<Eigen::Index> perm(obs.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::reverse(perm.begin(), perm.end());
    std::swap(perm[3], perm[17]);
    const Tensor a = net.encode(obs, "enc_obs").features;
    const Tensor b = net.encode(permuted(obs, perm), "enc_obs").features;
    ASSERT_EQ(a.shape(), (std::vector<std::size_t>{32, 12}));
    for (std::size_t i = 0; i < perm.size(); ++i)
        for (std::size_t j = 0; j < 12; ++j) EXPECT_EQ(b(i, j), a(static_cast<std::size_t>(perm[i]), j));

    PointCloud one;
    one.points = obs.points.topRows(1);
    one.colors = obs.colors->topRows(1);
    EXPECT_EQ(net.encode(one, "enc_obs").features.rows(), 1u);
}

TEST(Encoder, DuplicateRowsGiveDuplicateFeatures) {
    const PoseNet net(tiny_config());
    PointCloud c = tiny_data().train[1].obs;
    c.points.row(5) = c.points.row(2);
    c.colors->row(5) = c.colors->row(2);
    const Tensor f = net.encode(c, "enc_obs").features;
    for (std::size_t j = 0; j < f.cols(); ++j) EXPECT_EQ(f(5, j), f(2, j));
}

TEST(Encoder, MissingColorsThrow) {
    const PoseNet net(tiny_config());
    PointCloud c = tiny_data().train[0].obs;
    c.colors.reset();
    EXPECT_THROW(net.encode(c, "enc_obs"), std::invalid_argument);
}

TEST(Forward, ValidDeterministicAndModelCacheExact) {
    const PoseNet net(tiny_config());
    const Sample& s = tiny_data().train[2];
    const ForwardResult a = net.forward(s.obs, s.model);
    const ForwardResult b = net.forward(s.obs, s.model, net.encode_model(s.model));
    EXPECT_TRUE(a.pred.value().is_valid(1e-9));
    EXPECT_TRUE(bit_equal(a.pred.R, b.pred.R));
    EXPECT_TRUE(bit_equal(a.pred.t, b.pred.t));
    EXPECT_TRUE(bit_equal(a.scores->s, b.scores->s));
    EXPECT_TRUE(bit_equal(a.p2p->decoded_points, b.p2p->decoded_points));
    EXPECT_TRUE(bit_equal(a.c2c->decoded_points, b.c2c->decoded_points));
    const PoseNet again(tiny_config());
    EXPECT_TRUE(bit_equal(again.forward(s.obs, s.model).pred.R, a.pred.R));
    EXPECT_EQ(a.scores->s.rows(), 64u);
}

TEST(Forward, FrameChecks) {
    const PoseNet net(tiny_config());
    const Sample& s = tiny_data().train[0];
    EXPECT_THROW(net.forward(s.model, s.model), std::invalid_argument);
    EXPECT_THROW(net.forward(s.obs, s.obs), std::invalid_argument);
}

TEST(Forward, AllVariantsRun) {
    const Sample& s = tiny_data().train[3];
    for (FdaMode m : {FdaMode::dual, FdaMode::p2p, FdaMode::c2c, FdaMode::none})
        for (bool conf : {true, false}) {
            const PoseNet net(tiny_config(m, conf));
            const ForwardResult fw = net.forward(s.obs, s.model);
            EXPECT_TRUE(fw.pred.value().is_valid(1e-9)) << to_string(m);
            EXPECT_EQ(fw.scores.has_value(), conf && m != FdaMode::none) << to_string(m);
            EXPECT_EQ(fw.p2p.has_value(), m == FdaMode::dual || m == FdaMode::p2p);
            EXPECT_EQ(fw.c2c.has_value(), m == FdaMode::dual || m == FdaMode::c2c);
            const LossParts parts = net.losses(fw, s.obs.points, s.model.points, s.gt, s.symmetry, 0.01);
            EXPECT_TRUE(std::isfinite(total_loss(parts, LossWeights{}).item()));
        }
}

TEST(Forward, InvalidConfigThrows) {
    NetworkConfig c = tiny_config();
    c.n_points_obs = 4;
    EXPECT_THROW(PoseNet{c}, std::invalid_argument);
    c = tiny_config();
    c.branch_width = 0;
    EXPECT_THROW(PoseNet{c}, std::invalid_argument);
    EXPECT_THROW(parse_fda_mode("triple"), std::invalid_argument);
    EXPECT_EQ(parse_fda_mode(to_string(FdaMode::c2c)), FdaMode::c2c);
}

TEST(Gradients, TotalLossReachesEveryNonRefinerParameter) {
    PoseNet net(tiny_config());
    const Sample& s = tiny_data().train[4];
    const ForwardResult fw = net.forward(s.obs, s.model);
    backward(total_loss(net.losses(fw, s.obs.points, s.model.points, s.gt, s.symmetry, 0.01), LossWeights{}));
    for (const auto& e : net.params().entries()) {
        if (e.name.rfind("refine.", 0) == 0) {
            EXPECT_FALSE(e.value.has_grad()) << e.name;
            continue;
        }
        // biases of a relu layer can be dead on one sample; weights of every group must move
        if (e.name.find(".W") != std::string::npos) EXPECT_GT(grad_norm(e), 0.0) << e.name;
    }
}

TEST(Gradients, RefinementLossReachesOnlyTheRefiner) {
    PoseNet net(tiny_config());
    const Sample& s = tiny_data().train[5];
    const ForwardResult fw = net.forward(s.obs, s.model);
    const Tensor l = net.refinement_loss(fw, s.obs.points, s.model.points, s.gt, s.symmetry, 2);
    EXPECT_TRUE(std::isfinite(l.item()));
    backward(l);
    for (const auto& e : net.params().entries()) {
        if (e.name.rfind("refine.", 0) == 0) {
            if (e.name.find(".W") != std::string::npos) EXPECT_GT(grad_norm(e), 0.0) << e.name;
        } else {
            EXPECT_FALSE(e.value.has_grad()) << e.name;
        }
    }
    EXPECT_THROW(net.refinement_loss(fw, s.obs.points, s.model.points, s.gt, s.symmetry, 0), std::invalid_argument);
}

TEST(Refine, ValidAndZeroIterationsIsIdentity) {
    const PoseNet net(tiny_config());
    const Sample& s = tiny_data().test[0];
    const ForwardResult fw = net.forward(s.obs, s.model);
    const Pose k0 = net.refine(fw, s.obs.points, 0);
    EXPECT_EQ(k0.R, fw.pred.value().R);
    EXPECT_TRUE(net.refine(fw, s.obs.points, 2).is_valid(1e-9));
    const PoseNet none(tiny_config(FdaMode::none));
    EXPECT_FALSE(none.has_refiner());
}

TEST(LeastSquares, ExactCorrespondencesRecoverPose) {
    const Sample& s = tiny_data().test[1];
    FdaOutput p2p, c2c;
    p2p.decoded_points = points_tensor(inverse_transform(s.gt, s.obs.points));
    c2c.decoded_points = points_tensor(transform(s.gt, s.model.points));
    const Pose p = solve_from_correspondence(&p2p, &c2c, s.obs.points, s.model.points);
    EXPECT_LT((p.R - s.gt.R).norm(), 1e-9);
    EXPECT_LT((p.t - s.gt.t).norm(), 1e-9);
    const Pose w = solve_from_correspondence(&p2p, &c2c, s.obs.points, s.model.points, ConfidenceVector{Tensor(64, 1, 1.0)});
    EXPECT_LT((w.R - p.R).norm(), 1e-12);
    EXPECT_LT((w.t - p.t).norm(), 1e-12);
    EXPECT_LT((solve_from_correspondence(&p2p, nullptr, s.obs.points, s.model.points).R - s.gt.R).norm(), 1e-9);
    EXPECT_THROW(solve_from_correspondence(nullptr, nullptr, s.obs.points, s.model.points), std::invalid_argument);
    EXPECT_THROW(solve_from_correspondence(&p2p, &c2c, s.obs.points, s.model.points, ConfidenceVector{Tensor(3, 1, 1.0)}),
                 ShapeError);
}

TEST(Losses, TranslationConsistencyAtFixedPoint) {
    const Sample& s = tiny_data().train[0];
    const Eigen::Vector3d v(0.3, -0.1, 0.25);
    Points obs_v = s.obs.points;
    obs_v.rowwise() += v.transpose();
    const Pose gt_v{s.gt.R, s.gt.t + v};
    const Tensor dp = points_tensor(inverse_transform(s.gt, s.obs.points));
    const Tensor dc = points_tensor(transform(gt_v, s.model.points));
    EXPECT_LT(loss_p2p(dp, obs_v, gt_v, SymmetrySpec::none()).item(), 1e-15);
    EXPECT_EQ(loss_c2c(dc, s.model.points, gt_v, SymmetrySpec::none()).item(), 0.0);
    EXPECT_EQ(loss_pose(PoseTensors::constant(gt_v), gt_v, s.model.points, SymmetrySpec::none()).item(), 0.0);
}
