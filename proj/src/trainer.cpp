#include "distillrank/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "distillrank/error.hpp"
#include "distillrank/hashing.hpp"
#include "distillrank/parallel.hpp"

namespace fs = std::filesystem;

namespace distillrank {

namespace {

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string iter_file(std::size_t iteration, const char* suffix) {
  return "iter" + std::to_string(iteration) + suffix;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw Error("write failed: " + path.string());
}

/// Per-query data that stays fixed for a whole iteration.
struct QueryPlan {
  const Query* query = nullptr;
  std::vector<const Document*> ranked;
  Eigen::VectorXd teacher_scores;
  const PairSample* pairs = nullptr;
  std::vector<const Document*> positives;     // empty unless the contrastive term is on
  std::unordered_set<std::string> relevant;   // ids of `positives`
};

std::vector<QueryPlan> plan_queries(const IterationState& state, const Corpus& corpus, const Judgments* qrels,
                                    bool read_labels) {
  const auto& queries = corpus.queries();
  std::vector<QueryPlan> plans(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto& p = plans[i];
    p.query = &queries[i];
    const auto& rr = state.reranked[i];
    p.ranked.reserve(rr.entries.size());
    p.teacher_scores.resize(static_cast<Eigen::Index>(rr.entries.size()));
    for (std::size_t r = 0; r < rr.entries.size(); ++r) {
      p.ranked.push_back(&corpus.doc(rr.entries[r].doc_id));
      p.teacher_scores[static_cast<Eigen::Index>(r)] = rr.entries[r].score;
    }
    p.pairs = &state.pair_samples[i];
    if (read_labels) {
      for (const auto& id : qrels->relevant(p.query->id)) {
        if (!corpus.find_doc(id)) continue;
        p.positives.push_back(&corpus.doc(id));
        p.relevant.insert(id);
      }
    }
  }
  return plans;
}

void dump_diagnostics(const fs::path& dir, const IterationState& state, std::size_t step,
                      const std::vector<DistillExample>& batch, const LossBreakdown* loss, const std::string& what) {
  fs::create_directories(dir);
  nlohmann::ordered_json j;
  j["iteration"] = state.iteration;
  j["step"] = step;
  j["model"] = hex(state.start_fingerprint);
  j["error"] = what;
  if (loss) {
    // Non-finite doubles are not valid JSON numbers; store them as text.
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(std::to_string(v)); };
    j["l_cl"] = num(loss->l_cl);
    j["l_kd"] = num(loss->l_kd);
    j["l_pair"] = num(loss->l_pair);
    j["total"] = num(loss->total);
  }
  auto& queries = j["queries"] = nlohmann::ordered_json::array();
  for (const auto& ex : batch) {
    nlohmann::ordered_json q;
    q["query_id"] = ex.query->id;
    q["positive"] = ex.positive ? nlohmann::ordered_json(ex.positive->id) : nlohmann::ordered_json(nullptr);
    q["ranked"] = ex.ranked.size();
    q["negatives"] = ex.negatives.size();
    queries.push_back(std::move(q));
  }
  const auto path = dir / ("diagnostic-iter" + std::to_string(state.iteration) + "-step" + std::to_string(step) + ".json");
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

}  // namespace

void DistillConfig::validate() const {
  if (k < 1) throw ValidationError("k must be >= 1");
  if (use_kd && k < 2) throw ValidationError("pointwise distillation needs k >= 2");
  if (delta < 1) throw ValidationError("delta must be >= 1");
  if (pairs < 1) throw ValidationError("pairs must be >= 1");
  if (!(tau > 0.0)) throw ValidationError("tau must be > 0");
  if (!(lambda_kd >= 0.0) || !(lambda_pair >= 0.0)) throw ValidationError("loss weights must be >= 0");
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (candidates < 2) throw ValidationError("candidates must be >= 2");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must be in [0, 1)");
  if (iterations < 1) throw ValidationError("iterations must be >= 1");
  if (workers < 1) throw ValidationError("workers must be >= 1");
  if (eval_k < 1) throw ValidationError("eval k must be >= 1");
  const auto lc = loss_config();
  if (!lc.use_cl && !lc.use_kd && !lc.use_pair) throw ValidationError("no loss term enabled");
}

LossConfig DistillConfig::loss_config() const {
  LossConfig c;
  c.use_cl = use_cl && !zero_shot;
  c.use_kd = use_kd;
  c.use_pair = use_pair;
  c.lambda_kd = lambda_kd;
  c.lambda_pair = lambda_pair;
  c.tau = tau;
  c.reduction = pair_loss_reduction;
  return c;
}

IterationState prepare_iteration(const EncoderModel& model, const Corpus& corpus, const Teachers& teachers,
                                 const DistillConfig& config, std::size_t iteration, const Index* prebuilt) {
  config.validate();
  if (!teachers.pointwise || !teachers.pairwise) throw ValidationError("both teachers are required");
  IterationState state;
  state.iteration = iteration;
  state.start_fingerprint = model.fingerprint();
  if (prebuilt && prebuilt->fingerprint() == state.start_fingerprint && prebuilt->mode() == model.mode() &&
      prebuilt->size() == corpus.docs().size())
    state.index = *prebuilt;
  else
    state.index = build_index(model, corpus, config.workers);

  const auto& queries = corpus.queries();
  state.retrieved = retrieve_all(state.index, model, queries, config.k, config.workers);
  const auto n = queries.size();
  state.reranked.resize(n);
  state.pair_samples.resize(n);
  state.teacher_scores.resize(n);
  parallel_for(n, config.workers, [&](std::size_t i) {
    const auto& q = queries[i];
    state.reranked[i] = rerank(state.retrieved[i], corpus, *teachers.pointwise);
    auto& sample = state.pair_samples[i];
    sample = sample_pairs(state.reranked[i], config.delta, config.pairs,
                          derive_seed(config.seed, "pairs", static_cast<std::uint64_t>(iteration), q.id));
    score_pairs(sample, corpus, *teachers.pairwise);
    auto& ts = state.teacher_scores[i];
    ts.query_id = q.id;
    for (const auto& e : state.reranked[i].entries) ts.pointwise.emplace_back(e.doc_id, e.score);
    ts.pairwise = sample.pairs;
  });
  return state;
}

std::string StepLog::to_json() const {
  return nlohmann::ordered_json{{"step", step}, {"l_cl", l_cl}, {"l_kd", l_kd}, {"l_pair", l_pair}, {"total", total}}.dump();
}

std::vector<StepLog> train_iteration(EncoderModel& model, const IterationState& state, const Corpus& corpus,
                                     const Judgments* qrels, const DistillConfig& config,
                                     const std::optional<fs::path>& diagnostics_dir) {
  config.validate();
  if (model.fingerprint() != state.start_fingerprint)
    throw StaleIndexError("iteration " + std::to_string(state.iteration) +
                          " state was prepared from a different model; re-run prepare_iteration");
  const auto& queries = corpus.queries();
  if (state.reranked.size() != queries.size() || state.pair_samples.size() != queries.size())
    throw ValidationError("iteration state does not match the corpus queries");
  const auto loss_cfg = config.loss_config();
  if (loss_cfg.use_cl && !qrels) throw ValidationError("contrastive training needs judgments");
  if (queries.empty()) throw ValidationError("no training queries");

  const auto plans = plan_queries(state, corpus, qrels, loss_cfg.use_cl);

  Gradient velocity(model);
  std::vector<StepLog> log;
  log.reserve(config.steps);
  std::vector<std::size_t> order(queries.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  const auto iter = static_cast<std::uint64_t>(state.iteration);

  for (std::size_t step = 1; step <= config.steps; ++step) {
    if (cursor >= order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      Rng rng(derive_seed(config.seed, "shuffle", iter, epoch++));
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const auto end = std::min(order.size(), cursor + config.batch_size);
    std::vector<DistillExample> batch;
    batch.reserve(end - cursor);
    for (std::size_t b = cursor; b < end; ++b) {
      const auto& plan = plans[order[b]];
      DistillExample ex;
      ex.query = plan.query;
      ex.ranked = plan.ranked;
      ex.teacher_scores = plan.teacher_scores;
      ex.pairs = *plan.pairs;
      if (!plan.positives.empty()) {
        Rng rng(derive_seed(config.seed, "positive", iter, static_cast<std::uint64_t>(step), plan.query->id));
        std::uniform_int_distribution<std::size_t> pick(0, plan.positives.size() - 1);
        ex.positive = plan.positives[pick(rng)];
      }
      batch.push_back(std::move(ex));
    }
    cursor = end;

    if (loss_cfg.use_cl) {
      // Negatives: other queries' positives, then a uniform sample of the
      // remaining reranked list, skipping anything judged relevant.
      const std::size_t limit = config.candidates - 1;
      for (std::size_t a = 0; a < batch.size(); ++a) {
        auto& ex = batch[a];
        if (!ex.positive) continue;
        const auto& plan = plans[order[cursor - batch.size() + a]];
        std::unordered_set<const Document*> seen{ex.positive};
        auto usable = [&](const Document* d) { return !plan.relevant.count(d->id) && seen.insert(d).second; };
        for (std::size_t b = 0; b < batch.size() && ex.negatives.size() < limit; ++b)
          if (b != a && batch[b].positive && usable(batch[b].positive)) ex.negatives.push_back(batch[b].positive);
        std::vector<const Document*> pool;
        for (const auto* d : ex.ranked)
          if (usable(d)) pool.push_back(d);
        const auto room = limit - ex.negatives.size();
        if (pool.size() > room) {
          Rng rng(derive_seed(config.seed, "negatives", iter, static_cast<std::uint64_t>(step), plan.query->id));
          std::vector<std::size_t> pick(pool.size());
          std::iota(pick.begin(), pick.end(), std::size_t{0});
          for (std::size_t i = 0; i < room; ++i) {
            std::uniform_int_distribution<std::size_t> u(i, pick.size() - 1);
            std::swap(pick[i], pick[u(rng)]);
          }
          pick.resize(room);
          std::sort(pick.begin(), pick.end());
          for (auto i : pick) ex.negatives.push_back(pool[i]);
        } else {
          ex.negatives.insert(ex.negatives.end(), pool.begin(), pool.end());
        }
      }
    }

    LossBreakdown loss;
    try {
      loss = loss_total(model, batch, loss_cfg, false, config.workers);
    } catch (const NumericalError& e) {
      if (diagnostics_dir) dump_diagnostics(*diagnostics_dir, state, step, batch, nullptr, e.what());
      throw;
    }
    if (!std::isfinite(loss.total) || !loss.grad.all_finite()) {
      const std::string what = "non-finite loss at iteration " + std::to_string(state.iteration) + " step " +
                               std::to_string(step);
      if (diagnostics_dir) dump_diagnostics(*diagnostics_dir, state, step, batch, &loss, what);
      throw NumericalError(what);
    }

    velocity.query = config.momentum * velocity.query + loss.grad.query;
    model.query_table() -= config.learning_rate * velocity.query;
    if (!model.shared()) {
      velocity.doc = config.momentum * velocity.doc + loss.grad.doc;
      model.doc_table() -= config.learning_rate * velocity.doc;
    }
    if (!model.all_finite()) {
      const std::string what = "parameters became non-finite at iteration " + std::to_string(state.iteration) +
                               " step " + std::to_string(step);
      if (diagnostics_dir) dump_diagnostics(*diagnostics_dir, state, step, batch, &loss, what);
      throw NumericalError(what);
    }
    log.push_back(StepLog{step, loss.l_cl, loss.l_kd, loss.l_pair, loss.total});
  }
  return log;
}

std::string IterationReport::to_json() const {
  nlohmann::ordered_json j;
  j["iteration"] = iteration;
  j["model"] = hex(model_fingerprint);
  j["index"] = hex(index_fingerprint);
  if (dev) {
    j["queries"] = dev->query_count();
    for (std::size_t m = 0; m < dev->metrics.size(); ++m) j[dev->metrics[m].name()] = dev->means[m];
  }
  return j.dump();
}

std::vector<MetricSpec> default_dev_metrics() {
  return {{MetricKind::mrr, 10}, {MetricKind::recall, 100}, {MetricKind::ndcg, 10}};
}

MetricReport evaluate_model(const EncoderModel& model, const Corpus& corpus, std::span<const Query> queries,
                            const Judgments& qrels, std::span<const MetricSpec> metrics, std::size_t k,
                            std::size_t workers, const Index* prebuilt) {
  Index built;
  const Index* index = prebuilt;
  if (!index || index->fingerprint() != model.fingerprint()) {
    built = build_index(model, corpus, workers);
    index = &built;
  }
  const auto runs = retrieve_all(*index, model, queries, k, workers);
  return evaluate(runs, qrels, metrics);
}

TrainingResult run_iterative(EncoderModel model, const Corpus& corpus, const Teachers& teachers,
                             const Judgments* qrels, const DistillConfig& config, const RunOptions& options) {
  config.validate();
  if (!teachers.pointwise || !teachers.pairwise) throw ValidationError("both teachers are required");
  if (config.zero_shot) qrels = nullptr;

  std::optional<SymmetrizedPairwise> symmetric;
  const PairwiseTeacher* pairwise = teachers.pairwise;
  if (config.symmetrize_pairs) pairwise = &symmetric.emplace(*pairwise);
  CachedPointwise cached_point(*teachers.pointwise);
  CachedPairwise cached_pair(*pairwise);
  if (options.cache_dir) {
    fs::create_directories(*options.cache_dir);
    for (TeacherCache* c : {&cached_point.cache(), &cached_pair.cache()}) {
      const auto path = c->file_in(*options.cache_dir);
      if (fs::exists(path)) c->load(path);
    }
  }
  auto save_caches = [&] {
    if (!options.cache_dir) return;
    cached_point.cache().save(cached_point.cache().file_in(*options.cache_dir));
    cached_pair.cache().save(cached_pair.cache().file_in(*options.cache_dir));
  };
  const Teachers cached{&cached_point, &cached_pair};

  if (options.output_dir) fs::create_directories(*options.output_dir);
  const auto metrics = default_dev_metrics();
  const bool has_dev = options.dev_qrels && !corpus.dev_queries().empty();
  std::vector<std::string> metric_lines;

  TrainingResult result{std::move(model), {}};
  Index current = build_index(result.model, corpus, config.workers);
  auto report_for = [&](std::size_t iteration, std::uint64_t index_fp) {
    IterationReport r;
    r.iteration = iteration;
    r.model_fingerprint = result.model.fingerprint();
    r.index_fingerprint = index_fp;
    if (has_dev)
      r.dev = evaluate_model(result.model, corpus, corpus.dev_queries(), *options.dev_qrels, metrics, config.eval_k,
                             config.workers, &current);
    if (options.progress) *options.progress << r.to_json() << '\n';
    metric_lines.push_back(r.to_json());
    result.reports.push_back(std::move(r));
  };
  report_for(0, current.fingerprint());
  if (options.output_dir) save_checkpoint(result.model, *options.output_dir / iter_file(0, ".ckpt"));

  for (std::size_t n = 1; n <= config.iterations; ++n) {
    IterationState state;
    try {
      state = prepare_iteration(result.model, corpus, cached, config, n, &current);
    } catch (...) {
      save_caches();
      throw;
    }
    save_caches();
    if (options.output_dir) {
      save_teacher_scores(*options.output_dir / iter_file(n, ".scores.jsonl"), state.teacher_scores);
      save_index(state.index, *options.output_dir / iter_file(n, ".index"));
    }
    const auto log = train_iteration(result.model, state, corpus, qrels, config, options.output_dir);
    if (options.output_dir) {
      std::vector<std::string> lines;
      lines.reserve(log.size());
      for (const auto& s : log) lines.push_back(s.to_json());
      write_lines(*options.output_dir / iter_file(n, ".log.jsonl"), lines);
      save_checkpoint(result.model, *options.output_dir / iter_file(n, ".ckpt"));
    }
    current = build_index(result.model, corpus, config.workers);
    report_for(n, state.index.fingerprint());
  }
  if (options.output_dir) write_lines(*options.output_dir / "metrics.jsonl", metric_lines);
  return result;
}

}  // namespace distillrank
