#pragma once

#include "ivr/types.hpp"

#include <algorithm>
#include <cmath>

namespace ivr {

/// Optional per-row multiplicities: a batch of unique rows with counts stands
/// for the batch with every row repeated. Empty means all ones.
template <typename Scalar>
Scalar row_count(const Vec<Scalar>& counts, Index i) {
    return counts.size() == 0 ? Scalar(1) : counts[i];
}

template <typename Scalar>
Scalar total_count(const Vec<Scalar>& counts, Index n) {
    return counts.size() == 0 ? static_cast<Scalar>(n) : counts.sum();
}

/// Batch-mean loss with its gradient. `grad[i]` is the derivative of the
/// batch loss with respect to the i-th predicted value.
template <typename Scalar>
struct LossGrad {
    Scalar loss = Scalar(0);
    Vec<Scalar> grad;
};

/// SQL value loss mean[1(z > 0) z^2 + v / alpha] with
/// z = offset + (q - v) / (2 alpha). offset = 1 is the V objective, offset =
/// 1/2 the normalizer objective of the three-table scheme.
template <typename Scalar>
LossGrad<Scalar> sql_v_loss(const Vec<Scalar>& q, const Vec<Scalar>& v, Scalar alpha,
                            Scalar offset = Scalar(1), const Vec<Scalar>& counts = Vec<Scalar>()) {
    const Index n = q.size();
    const Scalar total = total_count(counts, n);
    LossGrad<Scalar> out;
    out.grad.resize(n);
    for (Index i = 0; i < n; ++i) {
        const Scalar c = row_count(counts, i);
        const Scalar z = std::max(offset + (q[i] - v[i]) / (Scalar(2) * alpha), Scalar(0));
        out.loss += c * (z * z + v[i] / alpha);
        out.grad[i] = c * (Scalar(1) - z) / (alpha * total);
    }
    out.loss /= total;
    return out;
}

/// Exponential with its argument clipped at `clip`, continued linearly
/// beyond it so the derivative is exp(min(u, clip)).
template <typename Scalar>
Scalar clipped_exp(Scalar u, Scalar clip) {
    return u <= clip ? std::exp(u) : std::exp(clip) * (Scalar(1) + u - clip);
}

/// EQL value loss mean[clipped_exp(u) + v / alpha] with u = (q - v) / alpha.
/// With `exp_normalize` the gradient is rescaled by exp(-max(0, max_i u_i)),
/// which keeps the step bounded without moving the stationary point.
template <typename Scalar>
LossGrad<Scalar> eql_v_loss(const Vec<Scalar>& q, const Vec<Scalar>& v, Scalar alpha,
                            Scalar clip = Scalar(5), bool exp_normalize = false,
                            const Vec<Scalar>& counts = Vec<Scalar>()) {
    const Index n = q.size();
    const Scalar total = total_count(counts, n);
    LossGrad<Scalar> out;
    out.grad.resize(n);
    Scalar top = Scalar(0);
    for (Index i = 0; i < n; ++i) {
        const Scalar c = row_count(counts, i);
        const Scalar u = (q[i] - v[i]) / alpha;
        top = std::max(top, std::min(u, clip));
        out.loss += c * (clipped_exp(u, clip) + v[i] / alpha);
        out.grad[i] = c * (Scalar(1) - std::exp(std::min(u, clip))) / (alpha * total);
    }
    out.loss /= total;
    if (exp_normalize) out.grad *= std::exp(-top);
    return out;
}

/// Expectile loss mean[|tau - 1(u < 0)| u^2] with u = q - v.
template <typename Scalar>
LossGrad<Scalar> iql_v_loss(const Vec<Scalar>& q, const Vec<Scalar>& v, Scalar tau,
                            const Vec<Scalar>& counts = Vec<Scalar>()) {
    const Index n = q.size();
    const Scalar total = total_count(counts, n);
    LossGrad<Scalar> out;
    out.grad.resize(n);
    for (Index i = 0; i < n; ++i) {
        const Scalar c = row_count(counts, i);
        const Scalar u = q[i] - v[i];
        const Scalar w = std::abs(tau - (u < Scalar(0) ? Scalar(1) : Scalar(0)));
        out.loss += c * w * u * u;
        out.grad[i] = -Scalar(2) * c * w * u / total;
    }
    out.loss /= total;
    return out;
}

/// Squared Bellman loss mean[(target - q)^2]; the target is held fixed.
template <typename Scalar>
LossGrad<Scalar> q_loss(const Vec<Scalar>& q, const Vec<Scalar>& target,
                        const Vec<Scalar>& counts = Vec<Scalar>()) {
    const Index n = q.size();
    const Scalar total = total_count(counts, n);
    LossGrad<Scalar> out;
    out.grad.resize(n);
    for (Index i = 0; i < n; ++i) {
        const Scalar c = row_count(counts, i);
        const Scalar d = target[i] - q[i];
        out.loss += c * d * d;
        out.grad[i] = -Scalar(2) * c * d / total;
    }
    out.loss /= total;
    return out;
}

/// In-sample Bellman targets r + gamma (1 - done) v_next.
template <typename Scalar>
Vec<Scalar> bellman_targets(const Vec<Scalar>& reward, const Vec<Scalar>& v_next,
                            const Eigen::Array<bool, Eigen::Dynamic, 1>& done, Scalar gamma) {
    Vec<Scalar> out(reward.size());
    for (Index i = 0; i < reward.size(); ++i) out[i] = reward[i] + (done[i] ? Scalar(0) : gamma * v_next[i]);
    return out;
}

/// Row-valued counterpart of LossGrad; `grad` has the shape of the input.
template <typename Scalar>
struct RowLossGrad {
    Scalar loss = Scalar(0);
    Mat<Scalar> grad;
};

template <typename Scalar>
Scalar logsumexp(const Eigen::Ref<const Vec<Scalar>>& x) {
    const Scalar top = x.maxCoeff();
    return top + std::log((x.array() - top).exp().sum());
}

template <typename Scalar>
Vec<Scalar> softmax(const Eigen::Ref<const Vec<Scalar>>& x) {
    Vec<Scalar> e = (x.array() - x.maxCoeff()).exp().matrix();
    return e / e.sum();
}

/// Loss over rows of action values: mean[(target - Q(s, a))^2 +
/// weight (logsumexp_b Q(s, b) - Q(s, a))]. Gradient has the shape of `q`.
template <typename Scalar>
RowLossGrad<Scalar> cql_loss(const Mat<Scalar>& q, const Eigen::VectorXi& actions, const Vec<Scalar>& target,
                             Scalar weight, const Vec<Scalar>& counts = Vec<Scalar>()) {
    const Index n = q.rows();
    const Scalar total = total_count(counts, n);
    RowLossGrad<Scalar> out;
    out.grad = Mat<Scalar>::Zero(n, q.cols());
    for (Index i = 0; i < n; ++i) {
        const Scalar c = row_count(counts, i);
        const Index a = actions[i];
        const Scalar d = target[i] - q(i, a);
        out.loss += c * d * d;
        out.grad(i, a) += -Scalar(2) * c * d;
        if (weight != Scalar(0)) {
            const Scalar top = q.row(i).maxCoeff();
            Scalar z = Scalar(0);
            for (Index b = 0; b < q.cols(); ++b) z += std::exp(q(i, b) - top);
            out.loss += c * weight * (top + std::log(z) - q(i, a));
            for (Index b = 0; b < q.cols(); ++b) out.grad(i, b) += c * weight * std::exp(q(i, b) - top) / z;
            out.grad(i, a) -= c * weight;
        }
    }
    out.loss /= total;
    out.grad /= total;
    return out;
}

/// Weighted behavior cloning loss -mean[w log softmax(logits)[a]].
template <typename Scalar>
RowLossGrad<Scalar> weighted_bc_loss(const Mat<Scalar>& logits, const Eigen::VectorXi& actions,
                                     const Vec<Scalar>& weights, const Vec<Scalar>& counts = Vec<Scalar>()) {
    const Index n = logits.rows();
    const Scalar total = total_count(counts, n);
    RowLossGrad<Scalar> out;
    out.grad = Mat<Scalar>::Zero(n, logits.cols());
    for (Index i = 0; i < n; ++i) {
        const Scalar w = row_count(counts, i) * weights[i];
        const Index a = actions[i];
        const Scalar top = logits.row(i).maxCoeff();
        Scalar z = Scalar(0);
        for (Index b = 0; b < logits.cols(); ++b) z += std::exp(logits(i, b) - top);
        out.loss -= w * (logits(i, a) - top - std::log(z));
        for (Index b = 0; b < logits.cols(); ++b) out.grad(i, b) = w * std::exp(logits(i, b) - top) / z;
        out.grad(i, a) -= w;
    }
    out.loss /= total;
    out.grad /= total;
    return out;
}

/// Per-sample loss derivatives with respect to the residual u = q - v, the
/// curves compared when discussing sparsity. The V/alpha terms are omitted.
template <typename Scalar>
Scalar sql_residual_derivative(Scalar u, Scalar alpha) {
    return std::max(Scalar(1) + u / (Scalar(2) * alpha), Scalar(0)) / alpha;
}

template <typename Scalar>
Scalar eql_residual_derivative(Scalar u, Scalar alpha, Scalar clip = Scalar(5)) {
    return std::exp(std::min(u / alpha, clip)) / alpha;
}

template <typename Scalar>
Scalar iql_residual_derivative(Scalar u, Scalar tau) {
    return Scalar(2) * std::abs(tau - (u < Scalar(0) ? Scalar(1) : Scalar(0))) * u;
}

}  // namespace ivr
