#include "dcl/objectives.hpp"
#include "dcl/refine.hpp"
#include "dcl/synthdata.hpp"

#include <gtest/gtest.h>

#include <cstring>

using namespace dcl;

namespace {

Points random_points(std::mt19937_64& rng, std::size_t n, double scale = 0.1) {
    Points p(static_cast<Eigen::Index>(n), 3);
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (int j = 0; j < 3; ++j) p(i, j) = uniform(rng, -scale, scale);
    return p;
}

Pose random_pose(std::mt19937_64& rng) {
    return {random_rotation(rng), Eigen::Vector3d(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, 0.2, 1.0))};
}

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(r * c);
    for (double& x : v) x = uniform(rng, lo, hi);
    return Tensor(r, c, std::move(v));
}

RefineConfig small_cfg() { return {5, 8, 2, 6, 2}; }

void zero_last_weights(ParameterStore& s) {
    for (double& w : s.get("r.rot_head.l1.W").mutable_data()) w = 0.0;
    for (double& w : s.get("r.trans_head.l1.W").mutable_data()) w = 0.0;
}

}  // namespace

TEST(BackTransform, IdentityAndDelegation) {
    std::mt19937_64 rng(1);
    const Points obs = random_points(rng, 10);
    EXPECT_EQ(back_transform(obs, Pose::identity()), obs);
    const Pose p = random_pose(rng);
    const Points a = back_transform(obs, p), b = inverse_transform(p, obs);
    EXPECT_EQ(0, std::memcmp(a.data(), b.data(), sizeof(double) * a.size()));
}

TEST(BackTransform, GroundTruthLandsOnModel) {
    std::mt19937_64 rng(2);
    const Points model = random_points(rng, 20);
    const Pose gt = random_pose(rng);
    const Points back = back_transform(transform(gt, model), gt);
    EXPECT_LT((back - model).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Compose, IdentityResidualAndIdentityPrevious) {
    std::mt19937_64 rng(3);
    const Pose prev = random_pose(rng);
    const Pose same = compose(prev, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero());
    EXPECT_LT((same.R - prev.R).norm(), 1e-15);
    EXPECT_EQ(same.t, prev.t);
    const Eigen::Matrix3d dR = random_rotation(rng);
    const Eigen::Vector3d dt(0.01, -0.03, 0.2);
    const Pose d = compose(Pose::identity(), dR, dt);
    EXPECT_LT((d.R - dR).norm(), 1e-15);
    EXPECT_EQ(d.t, dt);
}

TEST(Compose, LiteralFormula) {
    std::mt19937_64 rng(4);
    const Pose prev = random_pose(rng);
    const Eigen::Matrix3d dR = random_rotation(rng);
    const Eigen::Vector3d dt(0.05, 0.02, -0.01);
    const Pose out = compose(prev, dR, dt);
    EXPECT_LT((out.R - dR * prev.R).norm(), 1e-14);
    EXPECT_LT((out.t - (prev.R * dt + prev.t)).norm(), 1e-15);
}

TEST(Compose, ChainStaysOrthonormal) {
    std::mt19937_64 rng(5);
    Pose p = random_pose(rng);
    for (int i = 0; i < 3; ++i) {
        p = compose(p, random_rotation(rng), Eigen::Vector3d(uniform(rng, -0.1, 0.1), 0.0, 0.02));
        EXPECT_LT((p.R.transpose() * p.R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(p.R.determinant(), 1.0, 1e-12);
    }
}

TEST(Compose, GraphVersionMatchesValueVersion) {
    std::mt19937_64 rng(6);
    const Pose prev = random_pose(rng);
    const Eigen::Matrix3d dR = random_rotation(rng);
    const Eigen::Vector3d dt(0.04, -0.02, 0.07);
    const PoseTensors d = PoseTensors::constant({dR, dt});
    const Pose g = compose(prev, ResidualTensors{d.R, d.t}).value();
    const Pose v = compose(prev, dR, dt);
    EXPECT_LT((g.R - v.R).norm(), 1e-14);
    EXPECT_LT((g.t - v.t).norm(), 1e-15);
}

TEST(Residual, AlwaysValidRotation) {
    std::mt19937_64 rng(7);
    ParameterStore s;
    register_refiner(s, "r", small_cfg(), rng);
    const Points obs = random_points(rng, 12);
    for (int trial = 0; trial < 20; ++trial) {
        const RefineState st = make_refine_state(random_pose(rng), random_tensor(rng, 12, 5, -3, 3), random_tensor(rng, 12, 1, 0.01, 0.99));
        const Pose d = PoseTensors{residual_pose(s, "r", st, obs).dR, Tensor(1, 3)}.value();
        EXPECT_LT((d.R.transpose() * d.R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(d.R.determinant(), 1.0, 1e-12);
    }
}

TEST(Residual, ZeroWeightHeadsGiveIdentity) {
    std::mt19937_64 rng(8);
    ParameterStore s;
    register_refiner(s, "r", small_cfg(), rng);
    zero_last_weights(s);
    const Points obs = random_points(rng, 9);
    const RefineState st = make_refine_state(random_pose(rng), random_tensor(rng, 9, 5), std::nullopt);
    const ResidualTensors d = residual_pose(s, "r", st, obs);
    const Pose v = PoseTensors{d.dR, d.dt}.value();
    EXPECT_LT((v.R - Eigen::Matrix3d::Identity()).norm(), 1e-15);
    EXPECT_EQ(v.t, Eigen::Vector3d::Zero());
}

TEST(Residual, UsesOnlyObservedScores) {
    std::mt19937_64 rng(9);
    ParameterStore s;
    register_refiner(s, "r", small_cfg(), rng);
    const Points obs = random_points(rng, 6);
    const Tensor feats = random_tensor(rng, 6, 5);
    const Tensor head = random_tensor(rng, 6, 1, 0.1, 0.9);
    const Tensor full = concat_rows({head, random_tensor(rng, 4, 1, 0.1, 0.9)});
    const Tensor other = concat_rows({head, random_tensor(rng, 4, 1, 0.1, 0.9)});
    const Pose p = random_pose(rng);
    const ResidualTensors a = residual_pose(s, "r", make_refine_state(p, feats, head), obs);
    const ResidualTensors b = residual_pose(s, "r", make_refine_state(p, feats, full), obs);
    const ResidualTensors c = residual_pose(s, "r", make_refine_state(p, feats, other), obs);
    for (std::size_t i = 0; i < 9; ++i) {
        EXPECT_EQ(a.dR.data()[i], b.dR.data()[i]);
        EXPECT_EQ(b.dR.data()[i], c.dR.data()[i]);
    }
    EXPECT_THROW(make_refine_state(p, feats, random_tensor(rng, 5, 1)), ShapeError);
}

TEST(Residual, MissingCacheThrows) {
    std::mt19937_64 rng(10);
    ParameterStore s;
    register_refiner(s, "r", small_cfg(), rng);
    RefineState empty;
    EXPECT_THROW(residual_pose(s, "r", empty, random_points(rng, 4)), GraphError);
}

TEST(Residual, CachedFeaturesAreDetached) {
    std::mt19937_64 rng(11);
    ParameterStore s;
    register_refiner(s, "r", small_cfg(), rng);
    const Tensor upstream(6, 5, std::vector<double>(30, 0.3), true);
    const Tensor scores(6, 1, std::vector<double>(6, 0.5), true);
    const RefineState st = make_refine_state(random_pose(rng), scale(upstream, 2.0), scale(scores, 1.0));
    const ResidualTensors d = residual_pose(s, "r", st, random_points(rng, 6));
    backward(add(sum(d.dR), sum(d.dt)));
    EXPECT_FALSE(upstream.has_grad());
    EXPECT_FALSE(scores.has_grad());
    EXPECT_TRUE(s.get("r.embed.l0.W").has_grad());
}

TEST(RefineLoop, ZeroIterationsAndIdentityResiduals) {
    std::mt19937_64 rng(12);
    ParameterStore s;
    register_refiner(s, "r", small_cfg(), rng);
    const Points obs = random_points(rng, 7);
    const Pose init = random_pose(rng);
    const RefineState st = make_refine_state(init, random_tensor(rng, 7, 5), random_tensor(rng, 7, 1, 0.1, 0.9));
    const Pose k0 = refine_loop(s, "r", init, st, obs, 0);
    EXPECT_EQ(k0.R, init.R);
    EXPECT_EQ(k0.t, init.t);
    zero_last_weights(s);
    for (std::size_t k : {1u, 2u, 5u}) {
        const Pose out = refine_loop(s, "r", init, st, obs, k);
        EXPECT_LT((out.R - init.R).norm(), 1e-14);
        EXPECT_LT((out.t - init.t).norm(), 1e-15);
    }
}

TEST(RefineLoop, HundredIterationsStayValid) {
    std::mt19937_64 rng(13);
    ParameterStore s;
    register_refiner(s, "r", small_cfg(), rng);
    for (auto& e : s.entries())
        for (double& v : e.value.mutable_data()) v += uniform(rng, -0.2, 0.2);
    const Points obs = random_points(rng, 8);
    const Pose init = random_pose(rng);
    const RefineState st = make_refine_state(init, random_tensor(rng, 8, 5), random_tensor(rng, 8, 1, 0.1, 0.9));
    EXPECT_TRUE(refine_loop(s, "r", init, st, obs, 100).is_valid(1e-9));
}
