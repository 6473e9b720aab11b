#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "distillrank/corpus.hpp"

namespace distillrank {

/// Parameters of the topic-mixture corpus generator.
///
/// Every term belongs to one of `num_topics` topics and carries a latent
/// vector near its topic centroid. Documents and queries draw most tokens
/// from a primary topic, some from a secondary one, and the rest uniformly.
/// True relevance is the scaled inner product of the mean latent vectors of
/// the two token bags.
struct SyntheticSpec {
  std::size_t vocab_size = 1000;
  std::size_t num_docs = 1000;
  std::size_t num_queries = 100;
  std::size_t num_dev_queries = 0;
  std::size_t num_topics = 20;
  std::size_t latent_dim = 16;
  std::size_t doc_length = 30;
  std::size_t query_length = 6;
  double topic_focus = 0.7;      // share of tokens from the primary topic
  double term_spread = 0.5;      // per-term deviation from the topic centroid
  double relevance_scale = 4.0;
  double noise_scale = 0.0;      // label noise added before thresholding
  double positive_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Ground-truth relevance oracle: scale * <mean latent(q), mean latent(d)>.
/// Depends only on token bags, so it can score raw text as well.
class TrueRelevance {
 public:
  TrueRelevance() = default;
  /// `term_latents` rows are aligned with `vocab`.
  TrueRelevance(Eigen::MatrixXd term_latents, double scale);

  double score(const Query& q, const Document& d) const;
  double score_tokens(std::span<const TermId> query_tokens, std::span<const TermId> doc_tokens) const;
  Eigen::VectorXd latent(std::span<const TermId> tokens) const;

  double scale() const { return scale_; }
  const Eigen::MatrixXd& term_latents() const { return latents_; }
  std::uint64_t fingerprint() const;

  void save(const std::filesystem::path& path, const Vocabulary& vocab) const;
  /// Aligns stored term vectors to `vocab`; terms absent from the file get a
  /// zero latent vector.
  static TrueRelevance load(const std::filesystem::path& path, const Vocabulary& vocab);

 private:
  Eigen::MatrixXd latents_;
  double scale_ = 1.0;
};

struct SyntheticData {
  Corpus corpus;
  Judgments qrels;      // training queries
  Judgments dev_qrels;  // held-out queries
  TrueRelevance truth;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

/// Writes corpus files, `qrels.txt`, `dev_qrels.txt` and `truth.json`.
void save_synthetic(const SyntheticData& data, const std::filesystem::path& dir);
SyntheticData load_synthetic(const std::filesystem::path& dir);

}  // namespace distillrank
