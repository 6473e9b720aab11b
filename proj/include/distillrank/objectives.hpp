#pragma once

// Score-level objectives. Every function takes the student's raw scores and
// returns the loss together with its gradient with respect to those scores;
// the encoder's backward pass carries that gradient into the parameters.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "distillrank/error.hpp"

namespace distillrank {

template <typename Scalar>
struct ScoreLoss {
  Scalar loss = Scalar(0);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> grad;
};

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() == 0) throw ValidationError("log_sum_exp of an empty vector");
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.array() - m).exp().sum());
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> log_softmax(const Eigen::MatrixBase<Derived>& x) {
  return (x.array() - log_sum_exp(x)).matrix();
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(const Eigen::MatrixBase<Derived>& x) {
  return log_softmax(x).array().exp().matrix();
}

template <typename Scalar>
Scalar logistic(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// log(1 + exp(x)) without overflow.
template <typename Scalar>
Scalar softplus(Scalar x) {
  return x > Scalar(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// KL(p || q) from log-probabilities; entries with p = 0 contribute nothing.
/// Clamped at zero: rounding can otherwise leave a tiny negative value when
/// the two distributions coincide.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_from_logs(const Eigen::MatrixBase<DerivedP>& log_p, const Eigen::MatrixBase<DerivedQ>& log_q) {
  using Scalar = typename DerivedP::Scalar;
  Scalar total(0);
  for (Eigen::Index i = 0; i < log_p.size(); ++i) {
    const Scalar p = std::exp(log_p(i));
    if (p > Scalar(0)) total += p * (log_p(i) - log_q(i));
  }
  return std::max(total, Scalar(0));
}

/// -log softmax(scores)[positive]; gradient softmax(scores) - onehot(positive).
template <typename Derived>
ScoreLoss<typename Derived::Scalar> infonce(const Eigen::MatrixBase<Derived>& scores, Eigen::Index positive) {
  if (scores.size() == 0) throw ValidationError("infonce: empty candidate set");
  if (positive < 0 || positive >= scores.size()) throw ValidationError("infonce: positive index out of range");
  const auto log_p = log_softmax(scores);
  ScoreLoss<typename Derived::Scalar> out;
  out.loss = -log_p(positive);
  out.grad = log_p.array().exp().matrix();
  out.grad(positive) -= 1;
  return out;
}

/// KL(softmax(teacher / tau) || softmax(student)). No temperature on the
/// student side. Gradient w.r.t. student scores: P_student - P_teacher.
template <typename DerivedS, typename DerivedT>
ScoreLoss<typename DerivedS::Scalar> pointwise_kd(const Eigen::MatrixBase<DerivedS>& student,
                                                  const Eigen::MatrixBase<DerivedT>& teacher,
                                                  typename DerivedS::Scalar tau) {
  using Scalar = typename DerivedS::Scalar;
  if (!(tau > Scalar(0))) throw ValidationError("pointwise_kd: temperature must be positive");
  if (student.size() != teacher.size()) throw ValidationError("pointwise_kd: student/teacher size mismatch");
  if (student.size() < 2) throw ValidationError("pointwise_kd: need at least two documents");
  const auto log_t = log_softmax((teacher / tau).eval());
  const auto log_s = log_softmax(student);
  ScoreLoss<Scalar> out;
  out.loss = kl_from_logs(log_t, log_s);
  out.grad = log_s.array().exp().matrix() - log_t.array().exp().matrix();
  return out;
}

/// Binary KL(Bernoulli(p_teacher) || Bernoulli(logistic(margin))) and its
/// derivative w.r.t. the margin s_i - s_j, which is logistic(margin) - p_teacher.
/// Endpoints p = 0 or 1 keep only the surviving term (0 ln 0 = 0).
template <typename Scalar>
Scalar binary_kl(Scalar p_teacher, Scalar margin, Scalar* dmargin = nullptr) {
  if (!(p_teacher >= Scalar(0) && p_teacher <= Scalar(1)))
    throw ValidationError("pairwise teacher probability outside [0,1]");
  const Scalar log_ps = -softplus(-margin);  // log P(i > j)
  const Scalar log_qs = -softplus(margin);   // log P(j > i)
  Scalar kl(0);
  if (p_teacher > Scalar(0)) kl += p_teacher * (std::log(p_teacher) - log_ps);
  if (p_teacher < Scalar(1)) kl += (Scalar(1) - p_teacher) * (std::log1p(-p_teacher) - log_qs);
  if (dmargin) *dmargin = logistic(margin) - p_teacher;
  return std::max(kl, Scalar(0));
}

/// Student pairwise preference exp(s_i) / (exp(s_i) + exp(s_j)).
template <typename Scalar>
Scalar pair_preference(Scalar s_i, Scalar s_j) {
  return logistic(s_i - s_j);
}

struct PairTarget {
  Eigen::Index i;  // index into the score vector
  Eigen::Index j;
  double p;        // teacher P(d_i > d_j | q)
};

enum class PairReduction { sum, mean };

/// Sum (or mean) over pairs of binary KL between teacher and student
/// preferences.
template <typename Derived>
ScoreLoss<typename Derived::Scalar> pairwise_kd(const Eigen::MatrixBase<Derived>& scores,
                                                std::span<const PairTarget> pairs,
                                                PairReduction reduction = PairReduction::mean) {
  using Scalar = typename Derived::Scalar;
  ScoreLoss<Scalar> out;
  out.grad = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(scores.size());
  if (pairs.empty()) return out;
  const Scalar weight = reduction == PairReduction::mean ? Scalar(1) / static_cast<Scalar>(pairs.size()) : Scalar(1);
  for (const auto& pr : pairs) {
    if (pr.i < 0 || pr.j < 0 || pr.i >= scores.size() || pr.j >= scores.size())
      throw ValidationError("pairwise_kd: pair references a document outside the scoring set");
    if (pr.i == pr.j) throw ValidationError("pairwise_kd: pair with identical documents");
    Scalar dm;
    out.loss += weight * binary_kl(static_cast<Scalar>(pr.p), scores(pr.i) - scores(pr.j), &dm);
    out.grad(pr.i) += weight * dm;
    out.grad(pr.j) -= weight * dm;
  }
  return out;
}

}  // namespace distillrank
