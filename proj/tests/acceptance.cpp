// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>

#include "distillrank/eval.hpp"
#include "distillrank/synthetic.hpp"
#include "distillrank/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace distillrank;
using namespace testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const SimilarityMode kModes[] = {SimilarityMode::dot, SimilarityMode::cosine, SimilarityMode::maxsim};
const char* mode_name(SimilarityMode m) {
  return m == SimilarityMode::dot ? "dot" : m == SimilarityMode::cosine ? "cosine" : "maxsim";
}

// --- 1 ------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto start = std::chrono::steady_clock::now();
  const char* loss_names[] = {"infonce", "kd", "pair", "total"};
  bool ok = true;
  std::string detail;
  std::size_t coords = 0;
  for (auto mode : kModes) {
    FdResult per_loss[4];
    for (int inst = 0; inst < 20; ++inst) {
      const auto seed = static_cast<std::uint64_t>(1000 * static_cast<int>(mode) + inst);
      const auto c = random_corpus(seed, 40, 10, 30, 8, 3);
      std::mt19937_64 rng(seed);
      auto m = random_model(c.vocabulary().size(), mode, seed, 6, inst % 2 == 0, 1.0);
      const auto batch = random_batch(c, rng, 3);
      std::set<TermId> touched;
      for (const auto& ex : batch) {
        touched.insert(ex.query->tokens.begin(), ex.query->tokens.end());
        for (const auto* d : ex.ranked) touched.insert(d->tokens.begin(), d->tokens.end());
        touched.insert(ex.positive->tokens.begin(), ex.positive->tokens.end());
        for (const auto* d : ex.negatives) touched.insert(d->tokens.begin(), d->tokens.end());
      }
      const std::vector<TermId> rows(touched.begin(), touched.end());
      const auto& ex = batch[0];
      const DocRefs ranked(ex.ranked), negs(ex.negatives);
      const LossConfig cfg;
      const std::function<LossAndGradient()> fns[] = {
          [&] { return loss_infonce(m, *ex.query, *ex.positive, negs); },
          [&] { return loss_pointwise_kd(m, *ex.query, ranked, ex.teacher_scores, 1.0); },
          [&] { return loss_pairwise_kd(m, *ex.query, ranked, ex.pairs); },
          [&] {
            auto t = loss_total(m, batch, cfg);
            return LossAndGradient{t.total, std::move(t.grad)};
          }};
      for (int l = 0; l < 4; ++l) {
        const auto analytic = fns[l]();
        const auto r = finite_difference_check(m, [&] { return fns[l]().loss; }, analytic.grad, 100, rng, rows);
        per_loss[l].checked += r.checked;
        per_loss[l].failed += r.failed;
        per_loss[l].worst = std::max(per_loss[l].worst, r.worst);
      }
    }
    for (int l = 0; l < 4; ++l) {
      coords += per_loss[l].checked;
      ok &= per_loss[l].failed == 0 && per_loss[l].checked >= 2000;
      detail += fmt("%s/%s worst %.1e; ", mode_name(mode), loss_names[l], per_loss[l].worst);
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ok &= secs < 60.0;
  return {ok, fmt("%zu coordinates, %.1fs; ", coords, secs) + detail};
}

// --- 2 ------------------------------------------------------------------------

Outcome kl_invariants() {
  std::mt19937_64 rng(2);
  std::size_t negative = 0, equal_fail = 0, shift_fail = 0;
  double worst_equal = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng() % 30);
    const double scale = std::uniform_real_distribution<double>(0.01, 20.0)(rng);
    std::normal_distribution<double> g(0.0, scale);
    const Eigen::VectorXd t = Eigen::VectorXd::NullaryExpr(n, [&] { return g(rng); });
    const Eigen::VectorXd s = Eigen::VectorXd::NullaryExpr(n, [&] { return g(rng); });
    const double tau = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
    negative += pointwise_kd(s, t, tau).loss < 0.0;
    const double same = pointwise_kd(t, t, 1.0).loss;
    const double p = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const double margin = g(rng);
    negative += binary_kl(p, margin) < 0.0;
    const double same_pair = binary_kl(logistic(margin), margin);
    worst_equal = std::max({worst_equal, same, same_pair});
    equal_fail += !(same < 1e-12) + !(same_pair < 1e-12);

    // Dyadic scores and shifts, so the shifted values are exact.
    const double si = std::ldexp(static_cast<double>(static_cast<int>(rng() % 4097) - 2048), -6);
    const double sj = std::ldexp(static_cast<double>(static_cast<int>(rng() % 4097) - 2048), -6);
    const double c = std::ldexp(static_cast<double>(static_cast<int>(rng() % 65537) - 32768), -4);
    shift_fail += pair_preference(si, sj) != pair_preference(si + c, sj + c);
    shift_fail += binary_kl(p, si - sj) != binary_kl(p, (si + c) - (sj + c));
  }
  return {negative == 0 && equal_fail == 0 && shift_fail == 0,
          fmt("negative %zu, equal-input violations %zu (worst %.1e), shift mismatches %zu", negative, equal_fail,
              worst_equal, shift_fail)};
}

// --- 3 ------------------------------------------------------------------------

RunList ranked_list(std::size_t k) {
  std::vector<std::pair<std::string, double>> scored;
  for (std::size_t i = 0; i < k; ++i) scored.emplace_back(id('d', i), -static_cast<double>(i));
  return make_run("q", scored);
}

Outcome pair_sampler() {
  std::mt19937_64 rng(3);
  std::size_t bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + rng() % 200, delta = 1 + rng() % 50, budget = 1 + rng() % 100;
    std::size_t enumerated = 0;
    for (std::size_t i = 1; i <= k; ++i)
      for (std::size_t j = 1; j <= k; ++j) enumerated += i < j && j - i < delta;
    bad += count_pair_candidates(k, delta) != enumerated;
    const auto s = sample_pairs(ranked_list(k), delta, budget, rng());
    bad += s.pairs.size() != std::min(budget, enumerated);
    for (const auto& p : s.pairs)
      bad += p.rank_i == p.rank_j || static_cast<std::size_t>(std::abs(p.rank_i - p.rank_j)) >= delta;
  }
  const auto standard = sample_pairs(ranked_list(100), 10, 50, 42).pairs.size();
  return {bad == 0 && standard == 50, fmt("violations %zu over 1000 configurations; k=100 delta=10 budget=50 drew %zu", bad, standard)};
}

// --- 4 ------------------------------------------------------------------------

Outcome metric_oracles() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(4);
  std::size_t instances = 0, mismatches = 0;
  double worst = 0.0;
  while (instances < 1000) {
    const auto in = oracles::random_instance(rng);
    if (oracles::relevant_total(in.grades) == 0) continue;
    ++instances;
    const std::size_t k = 1 + rng() % 50;
    const double diffs[] = {*mrr_at_k(in.run, in.qrels, k) - oracles::mrr(in.run, in.grades, k),
                            *recall_at_k(in.run, in.qrels, k) - oracles::recall(in.run, in.grades, k),
                            *ndcg_at_k(in.run, in.qrels, k) - oracles::ndcg(in.run, in.grades, k),
                            *success_at_k(in.run, in.qrels, k) - oracles::success(in.run, in.grades, k)};
    for (double d : diffs) {
      worst = std::max(worst, std::abs(d));
      mismatches += !(std::abs(d) <= 1e-9);
    }
  }
  // Round trip: runs -> file -> runs -> file.
  std::size_t roundtrip_fail = 0;
  const auto dir = temp_dir("acceptance-trec");
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<RunList> runs;
    std::normal_distribution<double> g(0.0, 100.0);
    for (int q = 0; q < 5; ++q) {
      std::vector<std::pair<std::string, double>> scored;
      for (int i = 0; i < 100; ++i) scored.emplace_back(id('d', static_cast<std::size_t>(i)), g(rng));
      runs.push_back(make_run(id('q', static_cast<std::size_t>(q)), scored));
    }
    save_run(dir / "a.trec", runs);
    const auto back = load_run(dir / "a.trec");
    save_run(dir / "b.trec", back);
    roundtrip_fail += !(back == runs) || read_file(dir / "a.trec") != read_file(dir / "b.trec");
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {mismatches == 0 && roundtrip_fail == 0 && secs < 60.0,
          fmt("%zu instances, worst |diff| %.1e, round-trip failures %zu, %.1fs", instances, worst, roundtrip_fail, secs)};
}

// --- 5-8: the synthetic distillation task ---------------------------------------

struct Task {
  SyntheticData data;
  SyntheticTeacher teacher;
  EncoderModel init;
  DistillConfig base;
  MetricSpec mrr10 = parse_metric("mrr@10");

  Task() : data(make()), teacher(data.truth, 0.0, 1.0, 3), init(make_model(data.corpus)) {
    base.learning_rate = 0.5;
    base.steps = 200;
    base.iterations = 3;
    base.workers = 1;
  }

  static SyntheticData make() {
    SyntheticSpec spec;
    spec.vocab_size = 1000;
    spec.num_docs = 5000;
    spec.num_queries = 500;
    spec.num_dev_queries = 100;
    // A handful of positives per query and a sharp relevance signal, so the
    // task does not saturate for every loss configuration.
    spec.positive_fraction = 0.001;
    spec.relevance_scale = 12.0;
    spec.seed = 1;
    return generate_synthetic(spec);
  }

  static EncoderModel make_model(const Corpus& c) {
    EncoderOptions o;
    o.dim = 32;
    o.seed = 5;
    return EncoderModel(c.vocabulary().size(), o);
  }

  DistillConfig config(bool cl, bool kd, bool pair) const {
    auto c = base;
    c.use_cl = cl;
    c.use_kd = kd;
    c.use_pair = pair;
    return c;
  }

  TrainingResult train(const DistillConfig& cfg, const Judgments* qrels) const {
    RunOptions ro;
    ro.dev_qrels = &data.dev_qrels;
    return run_iterative(init, data.corpus, {&teacher, &teacher}, qrels, cfg, ro);
  }

  double dev_mrr(const EncoderModel& m) const {
    return evaluate_model(m, data.corpus, data.corpus.dev_queries(), data.dev_qrels, std::span(&mrr10, 1), 100)
        .mean(mrr10);
  }
};

double final_mrr(const TrainingResult& r, const MetricSpec& m) { return r.reports.back().dev->mean(m); }

Outcome distillation_efficacy(const Task& task, EncoderModel& distilled) {
  const auto start = std::chrono::steady_clock::now();
  const auto both = task.train(task.config(false, true, true), &task.data.qrels);
  const auto kd = task.train(task.config(false, true, false), &task.data.qrels);
  const auto cl = task.train(task.config(true, false, false), &task.data.qrels);
  distilled = both.model;
  const double m_both = final_mrr(both, task.mrr10), m_kd = final_mrr(kd, task.mrr10), m_cl = final_mrr(cl, task.mrr10);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {m_both >= 0.85 && m_both - m_kd >= 0.01 && m_kd > m_cl && secs < 600.0,
          fmt("dev MRR@10: kd+pair %.4f, kd %.4f, cl %.4f (init %.4f); %.1fs", m_both, m_kd, m_cl,
              task.dev_mrr(task.init), secs)};
}

Outcome iterative_training(const Task& task) {
  auto cfg = task.config(false, true, true);
  cfg.iterations = 2;
  const auto r = task.train(cfg, &task.data.qrels);
  const double it1 = r.reports[1].dev->mean(task.mrr10), it2 = r.reports[2].dev->mean(task.mrr10);
  const bool refreshed = r.reports[1].index_fingerprint != r.reports[2].index_fingerprint &&
                         r.reports[2].index_fingerprint == r.reports[1].model_fingerprint;
  return {it2 >= it1 - 0.01 && refreshed,
          fmt("iteration 1 %.4f, iteration 2 %.4f; index fingerprints %016llx -> %016llx", it1, it2,
              static_cast<unsigned long long>(r.reports[1].index_fingerprint),
              static_cast<unsigned long long>(r.reports[2].index_fingerprint))};
}

Outcome zero_shot(Task& task) {
  auto cfg = task.base;
  cfg.zero_shot = true;
  task.data.qrels.reset_reads();
  const auto r = task.train(cfg, &task.data.qrels);
  const auto reads = task.data.qrels.reads();
  const double before = r.reports[0].dev->mean(task.mrr10), after = final_mrr(r, task.mrr10);
  return {reads == 0 && after - before >= 0.3,
          fmt("label reads %zu; dev MRR@10 %.4f -> %.4f (+%.4f)", reads, before, after, after - before)};
}

Outcome disagreement(const Task& task, const EncoderModel& model) {
  const auto& corpus = task.data.corpus;
  const auto index = build_index(model, corpus);
  const auto retrieved = retrieve_all(index, model, corpus.queries(), 100);
  const SyntheticTeacher pairwise(task.data.truth, 0.0, 1.0, 0);
  const double sigmas[] = {0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0};
  std::string scanned;
  for (double sigma : sigmas) {
    const SyntheticTeacher pointwise(task.data.truth, sigma, 1.0, 17);
    std::vector<PairSample> samples;
    for (std::size_t i = 0; i < retrieved.size(); ++i) {
      const auto reranked = rerank(retrieved[i], corpus, pointwise);
      auto s = sample_pairs(reranked, 10, 50, derive_seed(8, "pairs", i));
      score_pairs(s, corpus, pairwise);
      samples.push_back(std::move(s));
    }
    const double rate = pairwise_disagreement(samples);
    scanned += fmt("%.2f->%.3f ", sigma, rate);
    if (rate < 0.25 || rate > 0.40) continue;

    // Recount from scratch: teacher scores decide the pointwise order (ties
    // by doc id, as in reranking), the noiseless teacher decides the truth.
    std::size_t against = 0, decided = 0;
    for (const auto& s : samples) {
      const auto& q = *corpus.find_query(s.query_id);
      for (const auto& p : s.pairs) {
        const auto& di = corpus.doc(p.doc_i);
        const auto& dj = corpus.doc(p.doc_j);
        const double pp = pairwise.prefer(q, di, dj);
        if (pp == 0.5) continue;
        ++decided;
        const double si = pointwise.score(q, di), sj = pointwise.score(q, dj);
        const bool point_i = si > sj || (si == sj && p.doc_i < p.doc_j);
        against += point_i != (pp > 0.5);
      }
    }
    const double recount = static_cast<double>(against) / static_cast<double>(decided);
    return {std::abs(rate - recount) <= 0.02,
            fmt("sigma %.2f: reported %.4f, recount %.4f over %zu pairs (scan: %s)", sigma, rate, recount, decided,
                scanned.c_str())};
  }
  return {false, "no sigma gave a rate in [0.25, 0.40]: " + scanned};
}

// --- 9 ------------------------------------------------------------------------

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != "config.resolved")
      files[fs::relative(e.path(), root).string()] = read_file(e.path());
  return files;
}

Outcome determinism() {
  const auto dir = temp_dir("acceptance-determinism");
  const std::string cli = std::string("\"") + DISTILLRANK_CLI + "\"";
  if (shell(cli + " gen-data --out \"" + (dir / "data").string() + "\" --docs 1000 --queries 100 --dev-queries 20 --seed 9 >/dev/null 2>&1") != 0)
    return {false, "gen-data failed"};
  auto train = [&](const std::string& name, int workers) {
    const auto out = dir / name;
    return shell("DISTILLRANK_CACHE_DIR=\"" + (out / "cache").string() + "\" " + cli + " train --data \"" +
                 (dir / "data").string() + "\" --out \"" + out.string() +
                 "\" --seed 4 --steps 60 --iterations 2 --teacher-sigma 0.5 --pair-sigma 0.5 --workers " +
                 std::to_string(workers) + " >/dev/null 2>&1");
  };
  if (train("a", 1) || train("b", 1) || train("c", 4)) return {false, "train failed"};
  const auto a = tree(dir / "a"), b = tree(dir / "b"), c = tree(dir / "c");
  std::size_t ckpt = 0, cache = 0, logs = 0;
  for (const auto& [name, _] : a) {
    ckpt += name.ends_with(".ckpt");
    cache += name.starts_with("cache");
    logs += name.ends_with(".log.jsonl");
  }
  const bool complete = ckpt >= 3 && cache >= 2 && logs >= 2;
  return {complete && a == b && a == c,
          fmt("%zu files (%zu checkpoints, %zu cache files, %zu logs); repeat %s, workers 4 %s", a.size(), ckpt, cache, logs,
              a == b ? "identical" : "DIFFERENT", a == c ? "identical" : "DIFFERENT")};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int n, const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %d %-22s %s  %s\n", n, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  };
  report(1, "gradient-suite", gradient_suite);
  report(2, "kl-invariants", kl_invariants);
  report(3, "pair-sampler", pair_sampler);
  report(4, "metric-oracles", metric_oracles);
  Task task;
  EncoderModel distilled = task.init;
  report(5, "distillation-efficacy", [&] { return distillation_efficacy(task, distilled); });
  report(6, "iterative-training", [&] { return iterative_training(task); });
  report(7, "zero-shot", [&] { return zero_shot(task); });
  report(8, "disagreement", [&] { return disagreement(task, distilled); });
  report(9, "determinism", determinism);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures ? 1 : 0;
}
