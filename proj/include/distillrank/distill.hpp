#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distillrank/corpus.hpp"
#include "distillrank/encoder.hpp"
#include "distillrank/objectives.hpp"

namespace distillrank {

/// A pair drawn from a reranked list. Ranks are 1-based positions in that
/// list; `p` is the teacher's P(doc_i > doc_j | q), NaN until scored.
struct SampledPair {
  int rank_i = 0;
  int rank_j = 0;
  std::string doc_i;
  std::string doc_j;
  double p = std::numeric_limits<double>::quiet_NaN();
  bool operator==(const SampledPair&) const = default;
};

struct PairSample {
  std::string query_id;
  std::vector<SampledPair> pairs;
};

/// Number of unordered pairs {i, j} among k ranks with 0 < |i - j| < delta.
std::size_t count_pair_candidates(std::size_t k, std::size_t delta);

/// Uniform sample without replacement of min(budget, candidates) unordered
/// pairs with |i - j| < delta, each given a random direction.
PairSample sample_pairs(const RunList& reranked, std::size_t delta, std::size_t budget, std::uint64_t seed);

struct LossAndGradient {
  double loss = 0.0;
  Gradient grad;
};

using DocRefs = std::span<const Document* const>;

/// -log softmax of s(q, d+) over {d+} and the negatives.
LossAndGradient loss_infonce(const EncoderModel& model, const Query& q, const Document& positive, DocRefs negatives);

/// KL(softmax(teacher / tau) || softmax(s(q, docs))).
LossAndGradient loss_pointwise_kd(const EncoderModel& model, const Query& q, DocRefs docs,
                                  const Eigen::VectorXd& teacher_scores, double tau);

/// Binary KL per sampled pair; pairs must reference documents in `docs`.
LossAndGradient loss_pairwise_kd(const EncoderModel& model, const Query& q, DocRefs docs, const PairSample& sample,
                                 PairReduction reduction = PairReduction::mean);

/// Everything one query contributes to a training step.
struct DistillExample {
  const Query* query = nullptr;
  std::vector<const Document*> ranked;  // pointwise-reranked top-k
  Eigen::VectorXd teacher_scores;       // aligned with `ranked`
  PairSample pairs;                     // teacher probabilities filled in
  const Document* positive = nullptr;   // null: query has no label, skipped by CL
  std::vector<const Document*> negatives;
};

struct LossConfig {
  bool use_cl = true;
  bool use_kd = true;
  bool use_pair = true;
  double lambda_kd = 1.0;
  double lambda_pair = 3.0;
  double tau = 1.0;
  PairReduction reduction = PairReduction::mean;
};

/// total = l_cl + lambda_kd * l_kd + lambda_pair * l_pair, with disabled terms
/// reported as 0. KL terms are averaged over the batch; the contrastive term
/// over queries that have a labeled positive.
struct LossBreakdown {
  double l_cl = 0.0;
  double l_kd = 0.0;
  double l_pair = 0.0;
  double total = 0.0;
  std::size_t cl_queries = 0;
  Gradient grad;
  // Unweighted per-term gradients; filled only on request.
  std::optional<Gradient> grad_cl, grad_kd, grad_pair;
};

LossBreakdown loss_total(const EncoderModel& model, std::span<const DistillExample> batch, const LossConfig& config,
                         bool per_term_gradients = false, std::size_t workers = 1);

}  // namespace distillrank
