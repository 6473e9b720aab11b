#include "distillrank/distill.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "distillrank/hashing.hpp"
#include "distillrank/parallel.hpp"

namespace distillrank {

std::size_t count_pair_candidates(std::size_t k, std::size_t delta) {
  std::size_t total = 0;
  for (std::size_t gap = 1; gap < delta && gap < k; ++gap) total += k - gap;
  return total;
}

PairSample sample_pairs(const RunList& reranked, std::size_t delta, std::size_t budget, std::uint64_t seed) {
  if (delta < 1) throw ValidationError("sample_pairs: delta must be >= 1");
  if (budget < 1) throw ValidationError("sample_pairs: budget must be >= 1");
  PairSample sample{reranked.query_id, {}};
  const auto k = reranked.entries.size();
  if (k < 2) return sample;

  std::vector<std::pair<std::uint32_t, std::uint32_t>> candidates;
  candidates.reserve(count_pair_candidates(k, delta));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k && j - i < delta; ++j)
      candidates.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j));

  Rng rng(seed);
  const auto take = std::min(budget, candidates.size());
  if (take < candidates.size()) {
    for (std::size_t s = 0; s < take; ++s) {
      std::uniform_int_distribution<std::size_t> pick(s, candidates.size() - 1);
      std::swap(candidates[s], candidates[pick(rng)]);
    }
    candidates.resize(take);
  }
  std::bernoulli_distribution flip(0.5);
  sample.pairs.reserve(take);
  for (auto [a, b] : candidates) {
    if (flip(rng)) std::swap(a, b);
    const auto& ea = reranked.entries[a];
    const auto& eb = reranked.entries[b];
    sample.pairs.push_back({ea.rank, eb.rank, ea.doc_id, eb.doc_id});
  }
  return sample;
}

namespace {

Eigen::VectorXd score_docs(const EncoderModel& model, const Representation<double>& q, DocRefs docs) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(docs.size()));
  for (std::size_t i = 0; i < docs.size(); ++i)
    s(static_cast<Eigen::Index>(i)) = similarity(model.mode(), q, encode_doc(model, *docs[i]));
  return s;
}

void backprop(const EncoderModel& model, const Query& q, DocRefs docs, const Eigen::VectorXd& upstream, Gradient& grad) {
  for (std::size_t i = 0; i < docs.size(); ++i)
    accumulate_gradient(model, q, *docs[i], upstream(static_cast<Eigen::Index>(i)), grad);
}

std::vector<PairTarget> pair_targets(const PairSample& sample, DocRefs docs) {
  std::unordered_map<std::string_view, Eigen::Index> position;
  for (std::size_t i = 0; i < docs.size(); ++i) position.emplace(docs[i]->id, static_cast<Eigen::Index>(i));
  std::vector<PairTarget> targets;
  targets.reserve(sample.pairs.size());
  for (const auto& pr : sample.pairs) {
    const auto a = position.find(pr.doc_i), b = position.find(pr.doc_j);
    if (a == position.end() || b == position.end())
      throw ValidationError("pairwise loss: pair (" + pr.doc_i + ", " + pr.doc_j + ") references a document outside the scoring set");
    if (!(pr.p >= 0.0 && pr.p <= 1.0))
      throw ValidationError("pairwise loss: teacher probability for (" + pr.doc_i + ", " + pr.doc_j + ") is not in [0,1]");
    targets.push_back({a->second, b->second, pr.p});
  }
  return targets;
}

}  // namespace

LossAndGradient loss_infonce(const EncoderModel& model, const Query& q, const Document& positive, DocRefs negatives) {
  std::vector<const Document*> candidates{&positive};
  for (const auto* d : negatives) {
    if (d->id == positive.id) throw ValidationError("infonce: positive '" + positive.id + "' listed among negatives");
    candidates.push_back(d);
  }
  const auto qrep = encode_query(model, q);
  const auto scores = score_docs(model, qrep, candidates);
  const auto term = infonce(scores, 0);
  LossAndGradient out{term.loss, Gradient(model)};
  backprop(model, q, candidates, term.grad, out.grad);
  return out;
}

LossAndGradient loss_pointwise_kd(const EncoderModel& model, const Query& q, DocRefs docs,
                                  const Eigen::VectorXd& teacher_scores, double tau) {
  const auto scores = score_docs(model, encode_query(model, q), docs);
  const auto term = pointwise_kd(scores, teacher_scores, tau);
  LossAndGradient out{term.loss, Gradient(model)};
  backprop(model, q, docs, term.grad, out.grad);
  return out;
}

LossAndGradient loss_pairwise_kd(const EncoderModel& model, const Query& q, DocRefs docs, const PairSample& sample,
                                 PairReduction reduction) {
  const auto targets = pair_targets(sample, docs);
  const auto scores = score_docs(model, encode_query(model, q), docs);
  const auto term = pairwise_kd(scores, std::span<const PairTarget>(targets), reduction);
  LossAndGradient out{term.loss, Gradient(model)};
  backprop(model, q, docs, term.grad, out.grad);
  return out;
}

namespace {

struct ExampleResult {
  double cl = 0.0, kd = 0.0, pair = 0.0;
  bool has_cl = false;
  Gradient grad, grad_cl, grad_kd, grad_pair;
};

}  // namespace

LossBreakdown loss_total(const EncoderModel& model, std::span<const DistillExample> batch, const LossConfig& config,
                         bool per_term_gradients, std::size_t workers) {
  if (batch.empty()) throw ValidationError("loss_total: empty batch");
  std::size_t cl_queries = 0;
  if (config.use_cl)
    for (const auto& ex : batch) cl_queries += ex.positive != nullptr;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  const double inv_cl = cl_queries ? 1.0 / static_cast<double>(cl_queries) : 0.0;

  std::vector<ExampleResult> results(batch.size());
  parallel_for(batch.size(), workers, [&](std::size_t b) {
    const auto& ex = batch[b];
    auto& r = results[b];
    r.grad = Gradient(model);
    if (per_term_gradients) r.grad_cl = r.grad_kd = r.grad_pair = Gradient(model);
    const auto qrep = encode_query(model, *ex.query);
    const DocRefs ranked(ex.ranked);

    if ((config.use_kd || config.use_pair) && ex.ranked.size() >= 2) {
      const auto scores = score_docs(model, qrep, ranked);
      Eigen::VectorXd upstream = Eigen::VectorXd::Zero(scores.size());
      if (config.use_kd) {
        const auto kd = pointwise_kd(scores, ex.teacher_scores, config.tau);
        r.kd = kd.loss;
        upstream += (config.lambda_kd * inv_batch) * kd.grad;
        if (per_term_gradients) backprop(model, *ex.query, ranked, inv_batch * kd.grad, r.grad_kd);
      }
      if (config.use_pair) {
        const auto targets = pair_targets(ex.pairs, ranked);
        const auto pair = pairwise_kd(scores, std::span<const PairTarget>(targets), config.reduction);
        r.pair = pair.loss;
        upstream += (config.lambda_pair * inv_batch) * pair.grad;
        if (per_term_gradients) backprop(model, *ex.query, ranked, inv_batch * pair.grad, r.grad_pair);
      }
      backprop(model, *ex.query, ranked, upstream, r.grad);
    }

    if (config.use_cl && ex.positive) {
      std::vector<const Document*> candidates{ex.positive};
      for (const auto* d : ex.negatives) {
        if (d->id == ex.positive->id) throw ValidationError("infonce: positive listed among negatives");
        candidates.push_back(d);
      }
      const auto scores = score_docs(model, qrep, candidates);
      const auto cl = infonce(scores, 0);
      r.cl = cl.loss;
      r.has_cl = true;
      backprop(model, *ex.query, candidates, inv_cl * cl.grad, r.grad);
      if (per_term_gradients) backprop(model, *ex.query, candidates, inv_cl * cl.grad, r.grad_cl);
    }
  });

  LossBreakdown out;
  out.cl_queries = cl_queries;
  out.grad = Gradient(model);
  if (per_term_gradients) out.grad_cl = out.grad_kd = out.grad_pair = Gradient(model);
  for (const auto& r : results) {
    out.l_cl += inv_cl * r.cl;
    out.l_kd += inv_batch * r.kd;
    out.l_pair += inv_batch * r.pair;
    out.grad += r.grad;
    if (per_term_gradients) {
      *out.grad_cl += r.grad_cl;
      *out.grad_kd += r.grad_kd;
      *out.grad_pair += r.grad_pair;
    }
  }
  out.total = (config.use_cl ? out.l_cl : 0.0) + (config.use_kd ? config.lambda_kd * out.l_kd : 0.0) +
              (config.use_pair ? config.lambda_pair * out.l_pair : 0.0);
  return out;
}

}  // namespace distillrank
