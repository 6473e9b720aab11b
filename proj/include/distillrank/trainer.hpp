#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "distillrank/corpus.hpp"
#include "distillrank/distill.hpp"
#include "distillrank/encoder.hpp"
#include "distillrank/eval.hpp"
#include "distillrank/index.hpp"
#include "distillrank/teacher.hpp"

namespace distillrank {

struct DistillConfig {
  std::size_t k = 100;           // retrieval depth for distillation
  std::size_t delta = 10;        // pairs only among ranks closer than delta
  std::size_t pairs = 50;        // pair budget per query
  double tau = 1.0;
  double lambda_kd = 1.0;
  double lambda_pair = 3.0;
  std::size_t batch_size = 32;
  std::size_t candidates = 64;   // |{d+} u negatives| for the contrastive term
  double learning_rate = 0.5;
  double momentum = 0.0;
  std::size_t steps = 500;       // optimizer steps per iteration
  std::size_t iterations = 2;
  bool use_cl = true;
  bool use_kd = true;
  bool use_pair = true;
  bool zero_shot = false;        // drop the contrastive term, never read labels
  PairReduction pair_loss_reduction = PairReduction::mean;
  bool symmetrize_pairs = false;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t eval_k = 100;      // dev retrieval depth

  void validate() const;
  LossConfig loss_config() const;
};

struct Teachers {
  const PointwiseTeacher* pointwise = nullptr;
  const PairwiseTeacher* pairwise = nullptr;
};

/// Retrieval and teacher outputs for one iteration, all produced from the
/// model whose fingerprint is `start_fingerprint`.
struct IterationState {
  std::size_t iteration = 1;
  std::uint64_t start_fingerprint = 0;
  Index index;
  std::vector<RunList> retrieved;         // per training query, student order
  std::vector<RunList> reranked;          // pointwise-teacher order
  std::vector<PairSample> pair_samples;   // with teacher probabilities
  std::vector<QueryTeacherScores> teacher_scores;
};

/// Builds (or reuses, when `prebuilt` matches the model) the index, retrieves
/// top-k for every training query, reranks with the pointwise teacher, samples
/// pairs from the reranked list and scores them with the pairwise teacher.
IterationState prepare_iteration(const EncoderModel& model, const Corpus& corpus, const Teachers& teachers,
                                 const DistillConfig& config, std::size_t iteration = 1,
                                 const Index* prebuilt = nullptr);

struct StepLog {
  std::size_t step = 0;
  double l_cl = 0.0, l_kd = 0.0, l_pair = 0.0, total = 0.0;
  std::string to_json() const;
};

/// Runs `config.steps` SGD updates over shuffled batches of training queries.
/// `qrels` supplies contrastive positives; it is never touched in zero-shot
/// mode or when the contrastive term is disabled. When `diagnostics_dir` is
/// set, a non-finite loss dumps the offending batch there before throwing.
std::vector<StepLog> train_iteration(EncoderModel& model, const IterationState& state, const Corpus& corpus,
                                     const Judgments* qrels, const DistillConfig& config,
                                     const std::optional<std::filesystem::path>& diagnostics_dir = std::nullopt);

struct IterationReport {
  std::size_t iteration = 0;              // 0 = initial model
  std::uint64_t model_fingerprint = 0;
  std::uint64_t index_fingerprint = 0;    // index the iteration trained on
  std::optional<MetricReport> dev;
  std::string to_json() const;
};

/// Dev metrics reported per iteration.
std::vector<MetricSpec> default_dev_metrics();

struct RunOptions {
  std::optional<std::filesystem::path> output_dir;  // iter<N>.{ckpt,index,scores.jsonl,log.jsonl}
  std::optional<std::filesystem::path> cache_dir;   // persisted teacher caches
  const Judgments* dev_qrels = nullptr;
  std::ostream* progress = nullptr;
};

struct TrainingResult {
  EncoderModel model;
  std::vector<IterationReport> reports;  // reports[0] is the initial model
};

/// Iterative distillation: prepare -> train -> refresh, `config.iterations` times.
TrainingResult run_iterative(EncoderModel model, const Corpus& corpus, const Teachers& teachers,
                             const Judgments* qrels, const DistillConfig& config, const RunOptions& options = {});

MetricReport evaluate_model(const EncoderModel& model, const Corpus& corpus, std::span<const Query> queries,
                            const Judgments& qrels, std::span<const MetricSpec> metrics, std::size_t k,
                            std::size_t workers = 1, const Index* prebuilt = nullptr);

}  // namespace distillrank
