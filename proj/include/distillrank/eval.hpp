#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "distillrank/corpus.hpp"
#include "distillrank/distill.hpp"

namespace distillrank {

// Per-query metrics. A document is relevant when its grade is >= 1. Each
// returns nullopt when the query has no relevant document; such queries are
// left out of means.
std::optional<double> mrr_at_k(const RunList& run, const Judgments& qrels, std::size_t k);
std::optional<double> recall_at_k(const RunList& run, const Judgments& qrels, std::size_t k);
std::optional<double> success_at_k(const RunList& run, const Judgments& qrels, std::size_t k);
/// Gain 2^grade - 1, discount 1 / log2(rank + 1), normalized by the ideal DCG
/// over all judged documents of the query.
std::optional<double> ndcg_at_k(const RunList& run, const Judgments& qrels, std::size_t k);

enum class MetricKind { mrr, recall, ndcg, success };

struct MetricSpec {
  MetricKind kind;
  std::size_t k;
  std::string name() const;
  bool operator==(const MetricSpec&) const = default;
};

/// Parses "mrr@10", "recall@1000", "ndcg@10", "success@5".
MetricSpec parse_metric(std::string_view text);

double evaluate_metric(const MetricSpec& metric, const RunList& run, const Judgments& qrels, bool& included);

struct MetricReport {
  std::vector<MetricSpec> metrics;
  std::vector<std::string> query_ids;       // evaluated queries
  std::vector<std::vector<double>> values;  // values[query][metric]
  std::vector<double> means;
  std::size_t excluded = 0;                 // queries without relevant documents

  std::size_t query_count() const { return query_ids.size(); }
  double mean(const MetricSpec& metric) const;
  std::string to_text(bool per_query = false) const;
  std::string to_json() const;
};

MetricReport evaluate(std::span<const RunList> runs, const Judgments& qrels, std::span<const MetricSpec> metrics);

struct DisagreementCount {
  std::size_t disagreements = 0;
  std::size_t counted = 0;  // pairs with teacher probability != 0.5
  double rate() const;
};

/// A pair disagrees when the pointwise order (lower rank preferred) and the
/// teacher (p > 0.5 prefers doc_i) point in opposite directions. Pairs with
/// p == 0.5 are skipped. Probabilities must already be filled in.
DisagreementCount count_disagreements(const PairSample& sample);

/// Rate over all pairs of all samples; throws when no pair is counted.
double pairwise_disagreement(std::span<const PairSample> samples);
double pairwise_disagreement(const PairSample& sample);

}  // namespace distillrank
