#include "gradcheck.hpp"

#include "dcl/fda.hpp"
#include "dcl/objectives.hpp"
#include "dcl/params.hpp"
#include "dcl/pose_head.hpp"
#include "dcl/refine.hpp"
#include "dcl/synthdata.hpp"

#include <cmath>

namespace dcl::testing {

namespace {

Tensor leaf(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(r * c);
    for (double& x : v) x = uniform(rng, lo, hi);
    return Tensor(r, c, std::move(v), true);
}

// Values bounded away from zero so relu stays off its kink under +-h.
Tensor leaf_away_from_zero(std::mt19937_64& rng, std::size_t r, std::size_t c) {
    std::vector<double> v(r * c);
    for (double& x : v) x = (uniform01(rng) < 0.5 ? -1.0 : 1.0) * uniform(rng, 0.1, 1.0);
    return Tensor(r, c, std::move(v), true);
}

Points random_points(std::mt19937_64& rng, std::size_t n, double scale = 0.1) {
    Points p(static_cast<Eigen::Index>(n), 3);
    for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (int k = 0; k < 3; ++k) p(i, k) = uniform(rng, -scale, scale);
    return p;
}

Pose random_pose(std::mt19937_64& rng) {
    Pose p;
    p.R = random_rotation(rng);
    for (int k = 0; k < 3; ++k) p.t[k] = uniform(rng, -0.5, 0.5);
    return p;
}

// Square-prism fixture closed under its dihedral group.
struct SymFixture {
    Points model;
    SymmetrySpec sym;
};

SymFixture sym_fixture(std::mt19937_64& rng) {
    ShapeSpec box = default_shapes().front();
    return {sample_model(box, 32, rng()).points, box.symmetry};
}

// Smallest gap between first and second nearest distances over the rows of a.
double nn_margin(const Points& a, const Points& b) {
    double margin = INFINITY;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        double first = INFINITY, second = INFINITY;
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            const double d = (a.row(i) - b.row(j)).norm();
            if (d < first) {
                second = first;
                first = d;
            } else if (d < second) {
                second = d;
            }
        }
        margin = std::min(margin, second - first);
    }
    return margin;
}

// Chamfer terms are differentiable away from nearest-neighbour switches; keep
// instances whose assignments cannot flip under the finite-difference step.
bool stable_assignment(const Points& a, const Points& b) { return nn_margin(a, b) > 1e-3 && nn_margin(b, a) > 1e-3; }

Points leaf_points(const Tensor& t) {
    Points p(static_cast<Eigen::Index>(t.rows()), 3);
    for (std::size_t i = 0; i < t.rows(); ++i)
        for (std::size_t k = 0; k < 3; ++k) p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = t(i, k);
    return p;
}

PoseTensors pose_from(const std::vector<Tensor>& l, std::size_t i6, std::size_t it) { return {rot6d(l[i6]), l[it]}; }

Tensor rot6d_leaf(std::mt19937_64& rng) {
    // well-conditioned: first vector not tiny, second not parallel
    std::vector<double> v(6);
    for (;;) {
        for (double& x : v) x = uniform(rng, -1.0, 1.0);
        const Eigen::Vector3d a(v[0], v[1], v[2]), b(v[3], v[4], v[5]);
        if (a.norm() > 0.3 && a.normalized().cross(b).norm() > 0.3) break;
    }
    return Tensor(1, 6, v, true);
}

GradCase unary(const std::string& name, std::size_t r, std::size_t c, std::function<Tensor(const Tensor&)> op,
               double lo = -1.0, double hi = 1.0) {
    return {name, [=](std::mt19937_64& rng) {
                return GradInstance{{leaf(rng, r, c, lo, hi)}, [op](const std::vector<Tensor>& l) { return op(l[0]); }};
            }};
}

GradCase binary(const std::string& name, std::size_t r1, std::size_t c1, std::size_t r2, std::size_t c2,
                std::function<Tensor(const Tensor&, const Tensor&)> op) {
    return {name, [=](std::mt19937_64& rng) {
                return GradInstance{{leaf(rng, r1, c1), leaf(rng, r2, c2)},
                                    [op](const std::vector<Tensor>& l) { return op(l[0], l[1]); }};
            }};
}

}  // namespace

double gradient_rel_error(GradInstance inst, std::mt19937_64& rng, double h) {
    const Tensor probe = inst.f(inst.leaves);
    std::vector<double> pv(probe.size());
    for (double& x : pv) x = uniform(rng, -1.0, 1.0);
    const Tensor proj(probe.rows(), probe.cols(), pv);
    auto scalar = [&]() { return sum(mul(inst.f(inst.leaves), proj)); };

    for (auto& l : inst.leaves) l.zero_grad();
    backward(scalar());
    double diff2 = 0.0, an2 = 0.0, num2 = 0.0;
    for (auto& l : inst.leaves) {
        const auto g = l.grad();
        auto d = l.mutable_data();
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double keep = d[i];
            d[i] = keep + h;
            const double up = scalar().item();
            d[i] = keep - h;
            const double down = scalar().item();
            d[i] = keep;
            const double num = (up - down) / (2.0 * h);
            diff2 += (g[i] - num) * (g[i] - num);
            an2 += g[i] * g[i];
            num2 += num * num;
        }
    }
    return std::sqrt(diff2) / std::max({std::sqrt(an2), std::sqrt(num2), 1e-10});
}

GradReport check_case(const GradCase& c, std::size_t instances, std::uint64_t seed) {
    GradReport r{c.name, 0, 0.0};
    for (std::size_t i = 0; i < instances; ++i) {
        std::mt19937_64 rng(mix_seed(seed, i));
        const double e = gradient_rel_error(c.make(rng), rng);
        r.worst_rel_error = std::max(r.worst_rel_error, std::isfinite(e) ? e : INFINITY);
        ++r.instances;
    }
    return r;
}

std::vector<GradCase> op_cases() {
    std::vector<GradCase> c;
    c.push_back(binary("matmul", 4, 5, 5, 3, [](const Tensor& a, const Tensor& b) { return matmul(a, b); }));
    c.push_back(binary("matmul_nt", 4, 5, 3, 5, [](const Tensor& a, const Tensor& b) { return matmul_nt(a, b); }));
    c.push_back(binary("matmul_tn", 5, 4, 5, 3, [](const Tensor& a, const Tensor& b) { return matmul_tn(a, b); }));
    c.push_back(unary("transpose", 3, 4, [](const Tensor& a) { return transpose(a); }));
    c.push_back(binary("add", 3, 4, 3, 4, [](const Tensor& a, const Tensor& b) { return add(a, b); }));
    c.push_back(binary("sub", 3, 4, 3, 4, [](const Tensor& a, const Tensor& b) { return sub(a, b); }));
    c.push_back(binary("mul", 3, 4, 3, 4, [](const Tensor& a, const Tensor& b) { return mul(a, b); }));
    c.push_back(unary("scale", 3, 4, [](const Tensor& a) { return scale(a, -2.5); }));
    c.push_back(unary("add_scalar", 3, 4, [](const Tensor& a) { return add_scalar(a, 0.7); }));
    c.push_back(binary("add_row", 4, 3, 1, 3, [](const Tensor& a, const Tensor& b) { return add_row(a, b); }));
    c.push_back(binary("sub_row", 4, 3, 1, 3, [](const Tensor& a, const Tensor& b) { return sub_row(a, b); }));
    c.push_back(binary("mul_col", 4, 3, 4, 1, [](const Tensor& a, const Tensor& b) { return mul_col(a, b); }));
    c.push_back({"relu", [](std::mt19937_64& rng) {
                     return GradInstance{{leaf_away_from_zero(rng, 4, 5)}, [](const std::vector<Tensor>& l) { return relu(l[0]); }};
                 }});
    c.push_back(unary("sigmoid", 4, 5, [](const Tensor& a) { return sigmoid(a); }, -3.0, 3.0));
    c.push_back(unary("log", 4, 5, [](const Tensor& a) { return log(a); }, 0.2, 2.0));
    c.push_back(unary("softmax_rows", 3, 6, [](const Tensor& a) { return softmax_rows(a); }, -2.0, 2.0));
    c.push_back(unary("sum", 3, 4, [](const Tensor& a) { return sum(a); }));
    c.push_back(unary("mean", 3, 4, [](const Tensor& a) { return mean(a); }));
    c.push_back(unary("sum_rows", 5, 3, [](const Tensor& a) { return sum_rows(a); }));
    c.push_back(unary("max_rows", 6, 4, [](const Tensor& a) { return max_rows(a); }));
    c.push_back(unary("repeat_rows", 1, 4, [](const Tensor& a) { return repeat_rows(a, 5); }));
    c.push_back(unary("row_norm", 5, 3, [](const Tensor& a) { return row_norm(a); }));
    c.push_back(binary("concat_cols", 4, 2, 4, 3, [](const Tensor& a, const Tensor& b) { return concat_cols({a, b}); }));
    c.push_back(binary("concat_rows", 2, 3, 4, 3, [](const Tensor& a, const Tensor& b) { return concat_rows({a, b}); }));
    c.push_back(unary("slice_rows", 6, 3, [](const Tensor& a) { return slice_rows(a, 1, 4); }));
    c.push_back(unary("slice_cols", 3, 6, [](const Tensor& a) { return slice_cols(a, 2, 5); }));
    c.push_back(unary("reshape", 4, 3, [](const Tensor& a) { return reshape(a, 2, 6); }));
    c.push_back(binary("nn_distance", 5, 3, 7, 3, [](const Tensor& a, const Tensor& b) { return nn_distance(a, b); }));
    c.push_back({"rot6d", [](std::mt19937_64& rng) {
                     return GradInstance{{rot6d_leaf(rng)}, [](const std::vector<Tensor>& l) { return rot6d(l[0]); }};
                 }});
    c.push_back({"mlp_forward", [](std::mt19937_64& rng) {
                     auto store = std::make_shared<ParameterStore>();
                     register_mlp(*store, "m", {4, 6, 3}, rng);
                     for (auto& e : store->entries())
                         for (double& x : e.value.mutable_data()) x += uniform(rng, -0.2, 0.2);  // nonzero biases
                     std::vector<Tensor> leaves{leaf(rng, 5, 4)};
                     for (auto& e : store->entries()) leaves.push_back(e.value);
                     return GradInstance{leaves, [store](const std::vector<Tensor>& l) { return mlp_forward(*store, "m", l[0]); }};
                 }});
    c.push_back({"attention_align", [](std::mt19937_64& rng) {
                     return GradInstance{{leaf(rng, 4, 3), leaf(rng, 5, 3), leaf(rng, 5, 2)}, [](const std::vector<Tensor>& l) {
                                             return align(compute_attention(l[0], l[1]), l[2]);
                                         }};
                 }});
    c.push_back({"pooled_feature", [](std::mt19937_64& rng) {
                     auto store = std::make_shared<ParameterStore>();
                     PoseHeadConfig cfg;
                     cfg.pair_width = 4;
                     cfg.pooled_width = 5;
                     cfg.confidence_hidden = 3;
                     cfg.head_hidden = 5;
                     register_pose_head(*store, "h", cfg, rng, true);
                     return GradInstance{{leaf(rng, 6, 1, 0.1, 0.9), leaf(rng, 6, 4)}, [store](const std::vector<Tensor>& l) {
                                             return pooled_feature(*store, "h", ConfidenceVector{l[0]}, l[1]);
                                         }};
                 }});
    c.push_back({"transform_points", [](std::mt19937_64& rng) {
                     return GradInstance{{rot6d_leaf(rng), leaf(rng, 1, 3), leaf(rng, 5, 3)}, [](const std::vector<Tensor>& l) {
                                             return transform_points(pose_from(l, 0, 1), l[2]);
                                         }};
                 }});
    c.push_back({"inverse_transform_points", [](std::mt19937_64& rng) {
                     return GradInstance{{rot6d_leaf(rng), leaf(rng, 1, 3), leaf(rng, 5, 3)}, [](const std::vector<Tensor>& l) {
                                             return inverse_transform_points(pose_from(l, 0, 1), l[2]);
                                         }};
                 }});
    c.push_back({"compose", [](std::mt19937_64& rng) {
                     const Pose prev = random_pose(rng);
                     return GradInstance{{rot6d_leaf(rng), leaf(rng, 1, 3)}, [prev](const std::vector<Tensor>& l) {
                                             const PoseTensors p = compose(prev, ResidualTensors{rot6d(l[0]), l[1]});
                                             return concat_cols({reshape(p.R, 1, 9), p.t});
                                         }};
                 }});
    return c;
}

std::vector<GradCase> loss_cases() {
    std::vector<GradCase> c;
    for (const bool symmetric : {false, true}) {
        const std::string tag = symmetric ? "_symmetric" : "";
        c.push_back({"loss_p2p" + tag, [symmetric](std::mt19937_64& rng) {
                         const Pose gt = random_pose(rng);
                         const auto fx = sym_fixture(rng);
                         const SymmetrySpec sym = symmetric ? fx.sym : SymmetrySpec::none();
                         const Points obs = transform(gt, random_points(rng, 8));
                         Tensor decoded = leaf(rng, 8, 3, -0.1, 0.1);
                         while (symmetric && !stable_assignment(leaf_points(decoded), inverse_transform(gt, obs)))
                             decoded = leaf(rng, 8, 3, -0.1, 0.1);
                         return GradInstance{{decoded}, [=](const std::vector<Tensor>& l) {
                                                 return loss_p2p(l[0], obs, gt, sym);
                                             }};
                     }});
        c.push_back({"loss_c2c" + tag, [symmetric](std::mt19937_64& rng) {
                         const Pose gt = random_pose(rng);
                         const auto fx = sym_fixture(rng);
                         const SymmetrySpec sym = symmetric ? fx.sym : SymmetrySpec::none();
                         const Points model = fx.model;
                         Tensor decoded = points_tensor(transform(gt, model));
                         do {
                             decoded = points_tensor(transform(gt, model));
                             for (double& x : decoded.mutable_data()) x += uniform(rng, -0.05, 0.05);
                         } while (symmetric && !stable_assignment(leaf_points(decoded), transform(gt, model)));
                         decoded = Tensor(decoded.rows(), 3, std::vector<double>(decoded.data().begin(), decoded.data().end()), true);
                         return GradInstance{{decoded}, [=](const std::vector<Tensor>& l) { return loss_c2c(l[0], model, gt, sym); }};
                     }});
        c.push_back({"loss_pose" + tag, [symmetric](std::mt19937_64& rng) {
                         const Pose gt = random_pose(rng);
                         const auto fx = sym_fixture(rng);
                         const SymmetrySpec sym = symmetric ? fx.sym : SymmetrySpec::none();
                         const Points model = fx.model;
                         return GradInstance{{rot6d_leaf(rng), leaf(rng, 1, 3, -0.5, 0.5)}, [=](const std::vector<Tensor>& l) {
                                                 return loss_pose(pose_from(l, 0, 1), gt, model, sym);
                                             }};
                     }});
        c.push_back({"loss_conf" + tag, [symmetric](std::mt19937_64& rng) {
                         const Pose gt = random_pose(rng);
                         const auto fx = sym_fixture(rng);
                         const SymmetrySpec sym = symmetric ? fx.sym : SymmetrySpec::none();
                         const Points model = fx.model;
                         const Points obs = transform(gt, random_points(rng, 6));
                         std::vector<Tensor> leaves{leaf(rng, 6, 3, -0.1, 0.1), leaf(rng, 32, 3, -0.6, 0.6), rot6d_leaf(rng),
                                                    leaf(rng, 1, 3, -0.5, 0.5), leaf(rng, 38, 1, 0.1, 0.9)};
                         return GradInstance{leaves, [=](const std::vector<Tensor>& l) {
                                                 return loss_conf(l[0], l[1], obs, model, pose_from(l, 2, 3), ConfidenceVector{l[4]}, sym, 0.01);
                                             }};
                     }});
    }
    c.push_back({"sigma", [](std::mt19937_64& rng) {
                     return GradInstance{{leaf(rng, 5, 1, 0.05, 1.0), leaf(rng, 5, 1, 0.1, 0.9)},
                                         [](const std::vector<Tensor>& l) { return sigma(l[0], l[1], 0.01); }};
                 }});
    c.push_back({"total_loss", [](std::mt19937_64& rng) {
                     return GradInstance{{leaf(rng, 1, 1), leaf(rng, 1, 1), leaf(rng, 1, 1), leaf(rng, 1, 1)},
                                         [](const std::vector<Tensor>& l) {
                                             return total_loss(LossParts{l[0], l[1], l[2], l[3]}, LossWeights{});
                                         }};
                 }});
    return c;
}

}  // namespace dcl::testing
