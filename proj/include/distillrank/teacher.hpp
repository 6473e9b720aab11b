#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "distillrank/corpus.hpp"
#include "distillrank/distill.hpp"
#include "distillrank/hashing.hpp"
#include "distillrank/synthetic.hpp"

namespace distillrank {

/// s_point(q, d): an absolute relevance score.
class PointwiseTeacher {
 public:
  virtual ~PointwiseTeacher() = default;
  virtual double score(const Query& q, const Document& d) const = 0;
  virtual std::uint64_t fingerprint() const = 0;
};

/// P(d_i > d_j | q), always in [0, 1].
class PairwiseTeacher {
 public:
  virtual ~PairwiseTeacher() = default;
  virtual double prefer(const Query& q, const Document& d_i, const Document& d_j) const = 0;
  virtual std::uint64_t fingerprint() const = 0;
};

/// Oracle teacher backed by TrueRelevance.
///
///   score(q, d)       = rel(q, d) + sigma * eps(q, d)
///   prefer(q, di, dj) = logistic(beta * (rel(q, di) - rel(q, dj)) + sigma * eps(q, di, dj))
///
/// The noise eps is a standard normal drawn from a stream keyed by the
/// argument ids, so results do not depend on call order.
class SyntheticTeacher final : public PointwiseTeacher, public PairwiseTeacher {
 public:
  SyntheticTeacher(const TrueRelevance& truth, double sigma, double beta, std::uint64_t seed);

  double score(const Query& q, const Document& d) const override;
  double prefer(const Query& q, const Document& d_i, const Document& d_j) const override;
  std::uint64_t fingerprint() const override { return fingerprint_; }

  double sigma() const { return sigma_; }
  double beta() const { return beta_; }

 private:
  const TrueRelevance* truth_;
  double sigma_;
  double beta_;
  std::uint64_t seed_;
  std::uint64_t fingerprint_;
};

/// Averages prefer(i, j) and 1 - prefer(j, i).
class SymmetrizedPairwise final : public PairwiseTeacher {
 public:
  explicit SymmetrizedPairwise(const PairwiseTeacher& inner) : inner_(&inner) {}
  double prefer(const Query& q, const Document& d_i, const Document& d_j) const override;
  std::uint64_t fingerprint() const override;

 private:
  const PairwiseTeacher* inner_;
};

/// Pointwise teacher from a fixed function; used for reranking by existing
/// scores and in tests.
class FunctionPointwise final : public PointwiseTeacher {
 public:
  using Fn = std::function<double(const Query&, const Document&)>;
  FunctionPointwise(Fn fn, std::uint64_t fingerprint) : fn_(std::move(fn)), fingerprint_(fingerprint) {}
  double score(const Query& q, const Document& d) const override { return fn_(q, d); }
  std::uint64_t fingerprint() const override { return fingerprint_; }

 private:
  Fn fn_;
  std::uint64_t fingerprint_;
};

// --- classification-based pairwise teacher ---------------------------------

struct Triplet {
  const Query* query;
  const Document* doc_i;
  const Document* doc_j;
  int label;  // 1 iff doc_i is more relevant than doc_j
};

/// Logistic regression over joint (q, d_i, d_j) features: the three count
/// vectors concatenated, followed by the elementwise products q*d_i and q*d_j.
class PairwiseClassifier final : public PairwiseTeacher {
 public:
  using SparseRow = std::vector<std::pair<std::size_t, double>>;

  explicit PairwiseClassifier(std::size_t vocab_size);

  double raw_score(const Query& q, const Document& d_i, const Document& d_j) const;
  double prefer(const Query& q, const Document& d_i, const Document& d_j) const override;
  std::uint64_t fingerprint() const override;

  SparseRow features(const Query& q, const Document& d_i, const Document& d_j) const;
  std::size_t num_features() const { return static_cast<std::size_t>(weights_.size()); }

  Eigen::VectorXd& weights() { return weights_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  double& bias() { return bias_; }
  double bias() const { return bias_; }

 private:
  std::size_t vocab_;
  Eigen::VectorXd weights_;
  double bias_ = 0.0;
};

/// Mean binary cross-entropy and its gradient (weights, then bias as the last
/// entry) over a triplet set.
struct BceEvaluation {
  double loss = 0.0;
  Eigen::VectorXd grad;
};
BceEvaluation bce(const PairwiseClassifier& classifier, std::span<const Triplet> triplets);

/// Step size 4 / max ||x||^2 (bias included), which bounds the curvature of the
/// mean logistic loss and makes full-batch descent monotone.
double safe_step_size(const PairwiseClassifier& classifier, std::span<const Triplet> triplets);

/// Full-batch gradient descent; returns the training loss before each step and
/// after the last one. `learning_rate <= 0` selects safe_step_size.
std::vector<double> train_pairwise_classifier(PairwiseClassifier& classifier, std::span<const Triplet> triplets,
                                              std::size_t steps, double learning_rate = 0.0);

// --- instruction-based teachers --------------------------------------------

std::string prompt_pointwise(std::string_view query, std::string_view document);
std::string prompt_pairwise(std::string_view query, std::string_view doc_a, std::string_view doc_b);

struct PointwisePromptFields {
  std::string query, document;
};
struct PairwisePromptFields {
  std::string query, doc_a, doc_b;
};
std::optional<PointwisePromptFields> parse_pointwise_prompt(std::string_view prompt);
std::optional<PairwisePromptFields> parse_pairwise_prompt(std::string_view prompt);

struct LlmRequest {
  std::string prompt;
  std::array<std::string, 2> options;  // token selecting d_i, token selecting d_j
};

struct LlmResponse {
  std::array<double, 2> mass{};  // probability mass on each option token
};

/// Text -> option-token probability contract. Implementations must be safe to
/// call concurrently and throw TransportError for retryable failures.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual LlmResponse complete(const LlmRequest& request) const = 0;
  virtual std::uint64_t fingerprint() const = 0;
};

struct LlmAdapterOptions {
  double temperature = 1.0;
  std::size_t max_attempts = 3;
  std::array<std::string, 2> options{"A", "B"};
};

/// P(d_i > d_j | q) as the mass on the option selecting d_i, renormalized over
/// the two options after applying the temperature.
double llm_adapter_prefer(const LlmClient& client, std::string_view query, std::string_view doc_i,
                          std::string_view doc_j, const LlmAdapterOptions& options = {});

class LlmPairwiseTeacher final : public PairwiseTeacher {
 public:
  LlmPairwiseTeacher(const LlmClient& client, LlmAdapterOptions options = {}) : client_(&client), options_(options) {}
  double prefer(const Query& q, const Document& d_i, const Document& d_j) const override;
  std::uint64_t fingerprint() const override;

 private:
  const LlmClient* client_;
  LlmAdapterOptions options_;
};

/// Deterministic mock that reads the query and both documents back out of the
/// pairwise prompt and answers with logistic(beta * relevance gap).
class TruthMockClient final : public LlmClient {
 public:
  TruthMockClient(const TrueRelevance& truth, const Vocabulary& vocab, double beta);
  LlmResponse complete(const LlmRequest& request) const override;
  std::uint64_t fingerprint() const override;

 private:
  std::vector<TermId> lookup(std::string_view text) const;
  const TrueRelevance* truth_;
  const Vocabulary* vocab_;
  double beta_;
};

/// Replays recorded responses from a JSONL file of
/// {"prompt": ..., "mass": [a, b]} records.
class FileMockClient final : public LlmClient {
 public:
  explicit FileMockClient(const std::filesystem::path& path);
  LlmResponse complete(const LlmRequest& request) const override;
  std::uint64_t fingerprint() const override { return fingerprint_; }
  std::size_t size() const { return responses_.size(); }

 private:
  std::unordered_map<std::string, LlmResponse> responses_;
  std::uint64_t fingerprint_ = 0;
};

// --- caching -----------------------------------------------------------------

/// Thread-safe memo table keyed by (query_id, doc ids). Inserting an existing
/// key keeps the first value. Can be persisted as sorted JSONL.
class TeacherCache {
 public:
  explicit TeacherCache(std::uint64_t teacher_fingerprint) : fingerprint_(teacher_fingerprint) {}

  template <typename Fn>
  double get_or_compute(const std::string& key, Fn&& compute) {
    {
      std::lock_guard lock(mutex_);
      if (auto it = values_.find(key); it != values_.end()) {
        ++hits_;
        return it->second;
      }
    }
    const double value = compute();
    std::lock_guard lock(mutex_);
    return values_.emplace(key, value).first->second;
  }

  std::uint64_t teacher_fingerprint() const { return fingerprint_; }
  std::size_t size() const;
  std::size_t hits() const;

  /// `<dir>/teacher-<fingerprint>.jsonl`
  std::filesystem::path file_in(const std::filesystem::path& dir) const;
  void load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::uint64_t fingerprint_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, double> values_;
  std::size_t hits_ = 0;
};

class CachedPointwise final : public PointwiseTeacher {
 public:
  explicit CachedPointwise(const PointwiseTeacher& inner)
      : inner_(&inner), cache_(Fnv1a().str("pointwise").value(inner.fingerprint()).digest()) {}
  double score(const Query& q, const Document& d) const override;
  std::uint64_t fingerprint() const override { return inner_->fingerprint(); }
  TeacherCache& cache() const { return cache_; }

 private:
  const PointwiseTeacher* inner_;
  mutable TeacherCache cache_;
};

class CachedPairwise final : public PairwiseTeacher {
 public:
  explicit CachedPairwise(const PairwiseTeacher& inner)
      : inner_(&inner), cache_(Fnv1a().str("pairwise").value(inner.fingerprint()).digest()) {}
  double prefer(const Query& q, const Document& d_i, const Document& d_j) const override;
  std::uint64_t fingerprint() const override { return inner_->fingerprint(); }
  TeacherCache& cache() const { return cache_; }

 private:
  const PairwiseTeacher* inner_;
  mutable TeacherCache cache_;
};

// --- teacher score tables ------------------------------------------------------

/// Distillation targets for one query: pointwise scores over the reranked
/// top-k (in reranked order) and pairwise probabilities for the sampled pairs.
struct QueryTeacherScores {
  std::string query_id;
  std::vector<std::pair<std::string, double>> pointwise;
  std::vector<SampledPair> pairwise;
};

/// Scores `run` with the pointwise teacher and re-sorts it by teacher score
/// (descending, ties by doc_id); ranks are rewritten 1..n and scores replaced.
RunList rerank(const RunList& run, const Corpus& corpus, const PointwiseTeacher& teacher);

/// Fills in the teacher probability of every pair.
void score_pairs(PairSample& sample, const Corpus& corpus, const PairwiseTeacher& teacher);

/// One JSON object per line: {"query_id", "pointwise": {doc: score}, "pairwise": [{"i", "j", "p"}]}.
void save_teacher_scores(const std::filesystem::path& path, const std::vector<QueryTeacherScores>& scores);
std::vector<QueryTeacherScores> load_teacher_scores(const std::filesystem::path& path);
std::string teacher_scores_line(const QueryTeacherScores& scores);

}  // namespace distillrank
