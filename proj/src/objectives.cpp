#include "dcl/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace dcl {

Tensor points_tensor(const Points& pts) {
    return Tensor(static_cast<std::size_t>(pts.rows()), 3, std::vector<double>(pts.data(), pts.data() + pts.size()));
}

Tensor transform_points(const PoseTensors& pose, const Tensor& pts) { return add_row(matmul_nt(pts, pose.R), pose.t); }

Tensor inverse_transform_points(const PoseTensors& pose, const Tensor& pts) { return matmul(sub_row(pts, pose.t), pose.R); }

Tensor set_distance(const Tensor& pred, const Tensor& target, const SymmetrySpec& sym) {
    if (sym.symmetric()) return add(mean(nn_distance(pred, target)), mean(nn_distance(target, pred)));
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw ShapeError("per-index distance needs equally sized sets");
    return mean(row_norm(sub(pred, target)));
}

Tensor loss_p2p(const Tensor& decoded, const Points& obs, const Pose& gt, const SymmetrySpec& sym) {
    return set_distance(decoded, points_tensor(inverse_transform(gt, obs)), sym);
}

Tensor loss_c2c(const Tensor& decoded, const Points& model, const Pose& gt, const SymmetrySpec& sym) {
    return set_distance(decoded, points_tensor(transform(gt, model)), sym);
}

Tensor loss_pose(const PoseTensors& pred, const Pose& gt, const Points& model, const SymmetrySpec& sym) {
    const Tensor moved = transform_points(pred, points_tensor(model));
    // same arithmetic on both sides, so pred == gt gives exactly zero
    const Tensor target = transform_points(PoseTensors::constant(gt), points_tensor(model));
    if (sym.symmetric()) return mean(nn_distance(moved, target));
    return mean(row_norm(sub(moved, target)));
}

Tensor sigma(const Tensor& d, const Tensor& s, double w) { return sub(mul(d, s), scale(log(s), w)); }

double sigma(double d, double s, double w) {
    if (!(s > 0.0)) throw std::invalid_argument("sigma: score must be positive");
    return d * s - w * std::log(s);
}

Tensor p2p_residuals(const Tensor& decoded, const Points& obs, const PoseTensors& pred, const SymmetrySpec& sym) {
    const Tensor target = inverse_transform_points(pred, points_tensor(obs));
    if (sym.symmetric()) return nn_distance(decoded, target);
    return row_norm(sub(decoded, target));
}

Tensor c2c_residuals(const Tensor& decoded, const Points& model, const PoseTensors& pred, const SymmetrySpec& sym) {
    const Tensor target = transform_points(pred, points_tensor(model));
    if (sym.symmetric()) return nn_distance(decoded, target);
    return row_norm(sub(decoded, target));
}

Tensor conf_block(const Tensor& residuals, const Tensor& scores, double w) {
    for (double v : scores.data())
        if (!(v > 0.0)) throw std::invalid_argument("confidence scores must be strictly positive");
    return mean(sigma(residuals, scores, w));
}

Tensor loss_conf(const Tensor& decoded_p2p, const Tensor& decoded_c2c, const Points& obs, const Points& model,
                 const PoseTensors& pred, const ConfidenceVector& s, const SymmetrySpec& sym, double w) {
    const std::size_t nx = decoded_p2p.rows(), ny = decoded_c2c.rows();
    if (s.s.rows() != nx + ny) throw ShapeError("loss_conf: score count differs from N_X + N_Y");
    const Tensor first = conf_block(p2p_residuals(decoded_p2p, obs, pred, sym), slice_rows(s.s, 0, nx), w);
    const Tensor second = conf_block(c2c_residuals(decoded_c2c, model, pred, sym), slice_rows(s.s, nx, nx + ny), w);
    return add(first, second);
}

Tensor total_loss(const LossParts& parts, const LossWeights& weights) {
    Tensor total;
    auto accumulate = [&](const Tensor& part, double lambda) {
        if (!part.defined()) return;
        const Tensor term = scale(part, lambda);
        total = total.defined() ? add(total, term) : term;
    };
    accumulate(parts.p2p, weights.lambda_p2p);
    accumulate(parts.c2c, weights.lambda_c2c);
    accumulate(parts.pose, weights.lambda_pose);
    accumulate(parts.conf, weights.lambda_conf);
    if (!total.defined()) throw std::invalid_argument("total_loss: no loss parts given");
    return total;
}

}  // namespace dcl
