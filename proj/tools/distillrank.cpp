// distillrank command-line entry point.
//
//   distillrank gen-data     --out DIR [synthetic corpus flags]
//   distillrank train        --data DIR --out DIR [training flags]
//   distillrank retrieve     --data DIR --checkpoint FILE --out RUN
//   distillrank rerank       --data DIR --run RUN --out RUN
//   distillrank sample-pairs --run RUN --out FILE [--data DIR to score pairs]
//   distillrank evaluate     --run RUN --qrels FILE --metric ndcg@10 ...
//   distillrank disagreement --scores FILE
//
// Every option can also come from `--config FILE` (flat key=value lines, key
// named like the flag without dashes); flags on the command line win. The
// resolved configuration is echoed to stderr in the same format.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "distillrank/corpus.hpp"
#include "distillrank/distill.hpp"
#include "distillrank/encoder.hpp"
#include "distillrank/error.hpp"
#include "distillrank/eval.hpp"
#include "distillrank/hashing.hpp"
#include "distillrank/index.hpp"
#include "distillrank/synthetic.hpp"
#include "distillrank/teacher.hpp"
#include "distillrank/trainer.hpp"

namespace fs = std::filesystem;
using namespace distillrank;

namespace {

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const std::string& v) { return v; }
template <typename T>
  requires std::is_integral_v<T>
std::string format_value(T v) {
  return std::to_string(v);
}
std::string format_value(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

/// Registers options on a subcommand and remembers how to print them back.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {}

  template <typename T>
  CLI::Option* add(const std::string& name, T& var, const std::string& help) {
    echo_.emplace_back(name, [&var] { return format_value(var); });
    return app_->add_option("--" + name, var, help)->capture_default_str();
  }
  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    echo_.emplace_back(name, [&var] { return format_value(var); });
    return app_->add_flag("--" + name + ",!--no-" + name, var, help);
  }

  std::string resolved() const {
    std::string out;
    for (const auto& [name, get] : echo_) {
      const auto v = get();
      if (!v.empty()) out += name + "=" + v + "\n";
    }
    return out;
  }
  CLI::App* app() const { return app_; }

 private:
  CLI::App* app_;
  std::vector<std::pair<std::string, std::function<std::string()>>> echo_;
};

/// `key=value` lines become `--key=value` arguments; `#` starts a comment.
std::vector<std::string> config_arguments(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::vector<std::string> args;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config " + path.string() + ": expected key=value", lineno);
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty() || key == "config") throw ParseError("config " + path.string() + ": bad key", lineno);
    if (key == "metric") {
      // Lists are written comma-separated.
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) args.push_back("--metric=" + trim(item));
    } else {
      args.push_back("--" + key + "=" + value);
    }
  }
  return args;
}

struct CorpusFlags {
  std::size_t docs = 1000, queries = 100, dev_queries = 20, vocab = 1000, topics = 20, latent_dim = 16;
  std::size_t doc_length = 30, query_length = 6;
  double topic_focus = 0.7, term_spread = 0.5, relevance_scale = 4.0, noise = 0.0, positive_fraction = 0.1;
};

struct TeacherFlags {
  double sigma = 0.0;        // pointwise noise
  double pair_sigma = 0.0;   // pairwise noise
  double beta = 1.0;
  std::uint64_t seed = 0;
  std::string pair_teacher = "synthetic";
  std::string pair_teacher_file;
  double llm_temperature = 1.0;
  std::size_t llm_attempts = 3;
};

/// Teachers built from a data directory's truth file; owns everything the
/// teacher pointers refer to.
struct TeacherSet {
  std::unique_ptr<SyntheticTeacher> pointwise;
  std::unique_ptr<SyntheticTeacher> synthetic_pairwise;
  std::unique_ptr<FileMockClient> client;
  std::unique_ptr<LlmPairwiseTeacher> llm_pairwise;

  const PairwiseTeacher& pairwise() const {
    if (llm_pairwise) return *llm_pairwise;
    return *synthetic_pairwise;
  }
};

TeacherSet make_teachers(const TrueRelevance& truth, const TeacherFlags& f) {
  TeacherSet t;
  t.pointwise = std::make_unique<SyntheticTeacher>(truth, f.sigma, f.beta, f.seed);
  if (f.pair_teacher == "synthetic") {
    t.synthetic_pairwise = std::make_unique<SyntheticTeacher>(truth, f.pair_sigma, f.beta, f.seed);
  } else if (f.pair_teacher == "file") {
    if (f.pair_teacher_file.empty()) throw ValidationError("--pair-teacher file needs --pair-teacher-file");
    t.client = std::make_unique<FileMockClient>(f.pair_teacher_file);
    LlmAdapterOptions opt;
    opt.temperature = f.llm_temperature;
    opt.max_attempts = f.llm_attempts;
    t.llm_pairwise = std::make_unique<LlmPairwiseTeacher>(*t.client, opt);
  } else {
    throw ValidationError("unknown pair teacher '" + f.pair_teacher + "' (synthetic or file)");
  }
  return t;
}

void add_teacher_flags(Options& o, TeacherFlags& f) {
  o.add("teacher-sigma", f.sigma, "pointwise teacher noise");
  o.add("pair-sigma", f.pair_sigma, "pairwise teacher noise");
  o.add("teacher-beta", f.beta, "pairwise teacher sharpness");
  o.add("teacher-seed", f.seed, "teacher noise seed");
  o.add("pair-teacher", f.pair_teacher, "synthetic or file")->check(CLI::IsMember({"synthetic", "file"}));
  o.add("pair-teacher-file", f.pair_teacher_file, "recorded LLM responses (JSONL)");
  o.add("llm-temperature", f.llm_temperature, "temperature applied to option-token log-probabilities");
  o.add("llm-attempts", f.llm_attempts, "attempts per pairwise prompt");
}

std::optional<fs::path> cache_dir_from_env() {
  if (const char* dir = std::getenv("DISTILLRANK_CACHE_DIR"); dir && *dir) return fs::path(dir);
  return std::nullopt;
}

const std::vector<Query>& split_queries(const Corpus& corpus, const std::string& split) {
  if (split == "train") return corpus.queries();
  if (split == "dev") return corpus.dev_queries();
  throw ValidationError("unknown split '" + split + "' (train or dev)");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense retriever training by pointwise and pairwise reranker distillation", "distillrank"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string config_path;
  std::size_t workers = 1;
  std::uint64_t seed = 0;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic corpus with judgments and ground truth");
  Options gen_o(gen);
  CorpusFlags cf;
  std::string gen_out;
  gen_o.add("out", gen_out, "output directory")->required();
  gen_o.add("seed", seed, "generator seed");
  gen_o.add("docs", cf.docs, "number of documents");
  gen_o.add("queries", cf.queries, "training queries");
  gen_o.add("dev-queries", cf.dev_queries, "held-out queries");
  gen_o.add("vocab", cf.vocab, "vocabulary size");
  gen_o.add("topics", cf.topics, "latent topics");
  gen_o.add("latent-dim", cf.latent_dim, "latent dimension");
  gen_o.add("doc-length", cf.doc_length, "tokens per document");
  gen_o.add("query-length", cf.query_length, "tokens per query");
  gen_o.add("topic-focus", cf.topic_focus, "share of tokens from the primary topic");
  gen_o.add("term-spread", cf.term_spread, "term deviation from topic centroid");
  gen_o.add("relevance-scale", cf.relevance_scale, "scale of the true relevance score");
  gen_o.add("noise", cf.noise, "label noise before thresholding");
  gen_o.add("positive-fraction", cf.positive_fraction, "share of documents judged relevant per query");

  // train
  auto* train = app.add_subcommand("train", "iterative distillation training");
  Options train_o(train);
  DistillConfig dc;
  TeacherFlags tf;
  std::string data_dir, train_out, similarity = "dot", reduction = "mean", init_checkpoint;
  std::size_t dim = 32;
  bool shared = true;
  train_o.add("data", data_dir, "data directory (corpus, qrels, truth)")->required();
  train_o.add("out", train_out, "output directory")->required();
  train_o.add("seed", seed, "master seed");
  train_o.add("k", dc.k, "retrieval depth");
  train_o.add("delta", dc.delta, "maximum rank distance of sampled pairs (exclusive)");
  train_o.add("pairs", dc.pairs, "pairs per query");
  train_o.add("tau", dc.tau, "teacher softmax temperature");
  train_o.add("lambda-kd", dc.lambda_kd, "weight of the pointwise distillation loss");
  train_o.add("lambda-pair", dc.lambda_pair, "weight of the pairwise distillation loss");
  train_o.add("iterations", dc.iterations, "retrieve/rerank/train iterations");
  train_o.add("steps", dc.steps, "optimizer steps per iteration");
  train_o.add("batch-size", dc.batch_size, "queries per step");
  train_o.add("candidates", dc.candidates, "contrastive candidates per query");
  train_o.add("lr", dc.learning_rate, "learning rate");
  train_o.add("momentum", dc.momentum, "SGD momentum");
  train_o.flag("loss-cl", dc.use_cl, "contrastive term");
  train_o.flag("loss-kd", dc.use_kd, "pointwise distillation term");
  train_o.flag("loss-pair", dc.use_pair, "pairwise distillation term");
  train_o.flag("zero-shot", dc.zero_shot, "drop the contrastive term and never read training labels");
  train_o.add("pair-loss-reduction", reduction, "mean or sum over pairs")->check(CLI::IsMember({"mean", "sum"}));
  train_o.flag("symmetrize-pairs", dc.symmetrize_pairs, "average prefer(i,j) and 1-prefer(j,i)");
  train_o.add("eval-k", dc.eval_k, "dev retrieval depth");
  train_o.add("similarity", similarity, "dot, cosine or maxsim")->check(CLI::IsMember({"dot", "cosine", "maxsim"}));
  train_o.add("dim", dim, "embedding dimension");
  train_o.flag("shared", shared, "share one embedding table between queries and documents");
  train_o.add("init", init_checkpoint, "start from this checkpoint instead of a seeded initialization");
  train_o.add("workers", workers, "worker threads");
  add_teacher_flags(train_o, tf);

  // retrieve
  auto* ret = app.add_subcommand("retrieve", "top-k retrieval with a checkpoint");
  Options ret_o(ret);
  std::string ret_ckpt, ret_out, ret_index, split = "dev";
  std::size_t ret_k = 100;
  ret_o.add("data", data_dir, "corpus directory")->required();
  ret_o.add("checkpoint", ret_ckpt, "model checkpoint")->required();
  ret_o.add("out", ret_out, "output run file")->required();
  ret_o.add("index", ret_index, "saved index to use (must match the checkpoint)");
  ret_o.add("split", split, "train or dev")->check(CLI::IsMember({"train", "dev"}));
  ret_o.add("k", ret_k, "documents per query");
  ret_o.add("workers", workers, "worker threads");

  // rerank
  auto* rr = app.add_subcommand("rerank", "rerank a run with the pointwise teacher");
  Options rr_o(rr);
  std::string rr_run, rr_out, rr_mode = "pointwise";
  TeacherFlags rr_tf;
  rr_o.add("data", data_dir, "data directory (corpus, truth)")->required();
  rr_o.add("run", rr_run, "input run file")->required();
  rr_o.add("out", rr_out, "output run file")->required();
  rr_o.add("mode", rr_mode, "reranking mode")->check(CLI::IsMember({"pointwise"}));
  rr_o.add("workers", workers, "worker threads");
  add_teacher_flags(rr_o, rr_tf);

  // sample-pairs
  auto* sp = app.add_subcommand("sample-pairs", "sample rank-constrained pairs from a reranked run");
  Options sp_o(sp);
  std::string sp_run, sp_out, sp_data;
  std::size_t sp_delta = 10, sp_pairs = 50;
  TeacherFlags sp_tf;
  sp_o.add("run", sp_run, "reranked run file")->required();
  sp_o.add("out", sp_out, "output scores file (JSONL)")->required();
  sp_o.add("data", sp_data, "data directory; when given, pairs are scored by the pairwise teacher");
  sp_o.add("seed", seed, "sampling seed");
  sp_o.add("delta", sp_delta, "maximum rank distance (exclusive)");
  sp_o.add("pairs", sp_pairs, "pairs per query");
  sp_o.add("workers", workers, "worker threads");
  add_teacher_flags(sp_o, sp_tf);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score a run against judgments");
  Options ev_o(ev);
  std::string ev_run, ev_qrels;
  std::vector<std::string> ev_metrics;
  bool ev_per_query = false, ev_json = false;
  ev_o.add("run", ev_run, "run file")->required();
  ev_o.add("qrels", ev_qrels, "judgments file")->required();
  ev_o.add("metric", ev_metrics, "metric such as mrr@10, recall@100, ndcg@10, success@5")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  ev_o.flag("per-query", ev_per_query, "print per-query values");
  ev_o.flag("json", ev_json, "print JSON instead of a table");

  // disagreement
  auto* dis = app.add_subcommand("disagreement", "pointwise/pairwise disagreement rate over scored pairs");
  Options dis_o(dis);
  std::string dis_scores;
  dis_o.add("scores", dis_scores, "teacher scores file (JSONL)")->required();

  const std::vector<Options*> all_options{&gen_o, &train_o, &ret_o, &rr_o, &sp_o, &ev_o, &dis_o};
  for (auto* o : all_options) o->app()->add_option("--config", config_path, "key=value configuration file");

  // Config values are spliced in right after the subcommand so that explicit
  // flags, which come later, take precedence.
  std::vector<std::string> args(argv + 1, argv + argc);
  if (!args.empty() && args[0].rfind("-", 0) != 0 && !app.get_subcommand_no_throw(args[0])) {
    std::cerr << "error: unknown subcommand '" << args[0] << "'\n\n" << app.help();
    return 2;
  }
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
      if (path.empty()) continue;
      if (args.empty() || args[0].rfind("-", 0) == 0) break;
      const auto extra = config_arguments(path);
      args.insert(args.begin() + 1, extra.begin(), extra.end());
      break;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const Options* active = nullptr;
  for (auto* o : all_options)
    if (o->app()->parsed()) active = o;
  const auto resolved = active->resolved();
  std::cerr << "# resolved config (" << active->app()->get_name() << ")\n" << resolved;

  try {
    if (gen->parsed()) {
      SyntheticSpec spec;
      spec.num_docs = cf.docs;
      spec.num_queries = cf.queries;
      spec.num_dev_queries = cf.dev_queries;
      spec.vocab_size = cf.vocab;
      spec.num_topics = cf.topics;
      spec.latent_dim = cf.latent_dim;
      spec.doc_length = cf.doc_length;
      spec.query_length = cf.query_length;
      spec.topic_focus = cf.topic_focus;
      spec.term_spread = cf.term_spread;
      spec.relevance_scale = cf.relevance_scale;
      spec.noise_scale = cf.noise;
      spec.positive_fraction = cf.positive_fraction;
      spec.seed = seed;
      const auto data = generate_synthetic(spec);
      save_synthetic(data, gen_out);
      write_text(fs::path(gen_out) / "config.resolved", resolved);
      std::cout << "wrote " << data.corpus.docs().size() << " documents, " << data.corpus.queries().size()
                << " training and " << data.corpus.dev_queries().size() << " dev queries to " << gen_out << "\n";
    } else if (train->parsed()) {
      dc.seed = seed;
      dc.workers = workers;
      dc.pair_loss_reduction = reduction == "sum" ? PairReduction::sum : PairReduction::mean;
      dc.validate();
      const fs::path dir(data_dir);
      const auto corpus = load_corpus(dir);
      const auto truth = TrueRelevance::load(dir / "truth.json", corpus.vocabulary());
      // Training labels are only loaded when the contrastive term needs them.
      std::optional<Judgments> qrels;
      if (dc.loss_config().use_cl) {
        qrels = load_qrels(dir / "qrels.txt");
        qrels->validate(corpus);
      }
      std::optional<Judgments> dev_qrels;
      if (fs::exists(dir / "dev_qrels.txt")) dev_qrels = load_qrels(dir / "dev_qrels.txt");

      EncoderModel model;
      if (!init_checkpoint.empty()) {
        model = load_checkpoint(init_checkpoint);
      } else {
        EncoderOptions eo;
        eo.mode = parse_similarity(similarity);
        eo.dim = static_cast<Eigen::Index>(dim);
        eo.shared = shared;
        eo.seed = derive_seed(seed, "init");
        model = EncoderModel(corpus.vocabulary().size(), eo);
      }
      const auto teachers = make_teachers(truth, tf);
      fs::create_directories(train_out);
      write_text(fs::path(train_out) / "config.resolved", resolved);
      RunOptions ro;
      ro.output_dir = fs::path(train_out);
      ro.cache_dir = cache_dir_from_env();
      ro.dev_qrels = dev_qrels ? &*dev_qrels : nullptr;
      ro.progress = &std::cout;
      const auto result =
          run_iterative(model, corpus, {teachers.pointwise.get(), &teachers.pairwise()}, qrels ? &*qrels : nullptr, dc, ro);
      save_checkpoint(result.model, fs::path(train_out) / "final.ckpt");
    } else if (ret->parsed()) {
      const auto corpus = load_corpus(data_dir);
      const auto model = load_checkpoint(ret_ckpt);
      const auto index = ret_index.empty() ? build_index(model, corpus, workers) : load_index(ret_index);
      const auto runs = retrieve_all(index, model, split_queries(corpus, split), ret_k, workers);
      save_run(ret_out, runs);
      std::cout << "wrote " << runs.size() << " queries to " << ret_out << "\n";
    } else if (rr->parsed()) {
      const fs::path dir(data_dir);
      const auto corpus = load_corpus(dir);
      const auto truth = TrueRelevance::load(dir / "truth.json", corpus.vocabulary());
      const auto teachers = make_teachers(truth, rr_tf);
      const auto runs = load_run(rr_run);
      std::vector<RunList> out(runs.size());
      for (std::size_t i = 0; i < runs.size(); ++i) out[i] = rerank(runs[i], corpus, *teachers.pointwise);
      save_run(rr_out, out);
      std::cout << "reranked " << out.size() << " queries into " << rr_out << "\n";
    } else if (sp->parsed()) {
      const auto runs = load_run(sp_run);
      std::optional<Corpus> corpus;
      std::optional<TrueRelevance> truth;
      std::optional<TeacherSet> teachers;
      if (!sp_data.empty()) {
        corpus = load_corpus(sp_data);
        truth = TrueRelevance::load(fs::path(sp_data) / "truth.json", corpus->vocabulary());
        teachers = make_teachers(*truth, sp_tf);
      }
      std::vector<QueryTeacherScores> scores;
      for (const auto& run : runs) {
        auto sample = sample_pairs(run, sp_delta, sp_pairs, derive_seed(seed, "pairs", run.query_id));
        if (teachers) score_pairs(sample, *corpus, teachers->pairwise());
        QueryTeacherScores s;
        s.query_id = run.query_id;
        for (const auto& e : run.entries) s.pointwise.emplace_back(e.doc_id, e.score);
        s.pairwise = std::move(sample.pairs);
        scores.push_back(std::move(s));
      }
      save_teacher_scores(sp_out, scores);
      std::cout << "sampled pairs for " << scores.size() << " queries into " << sp_out << "\n";
    } else if (ev->parsed()) {
      std::vector<MetricSpec> metrics;
      for (const auto& m : ev_metrics) metrics.push_back(parse_metric(m));
      const auto runs = load_run(ev_run);
      const auto qrels = load_qrels(ev_qrels);
      const auto report = evaluate(runs, qrels, metrics);
      std::cout << (ev_json ? report.to_json() + "\n" : report.to_text(ev_per_query));
    } else if (dis->parsed()) {
      const auto scores = load_teacher_scores(dis_scores);
      DisagreementCount total;
      for (const auto& s : scores) {
        const auto c = count_disagreements(PairSample{s.query_id, s.pairwise});
        total.disagreements += c.disagreements;
        total.counted += c.counted;
      }
      std::printf("pairs %zu\ndisagreements %zu\nrate %.6f\n", total.counted, total.disagreements, total.rate());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
