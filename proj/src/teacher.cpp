#include "distillrank/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include <json.hpp>

#include "distillrank/hashing.hpp"
#include "distillrank/objectives.hpp"

namespace distillrank {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// --- synthetic ---------------------------------------------------------------

namespace {

// logistic(z) for z >= 0 and 1 - logistic(-z) otherwise. Both 1 - p steps are
// exact for p in [0.5, 1], so f(z) + f(-z) == 1 holds bitwise.
double mirrored_logistic(double z) {
  return z >= 0.0 ? logistic(z) : 1.0 - logistic(-z);
}

}  // namespace

SyntheticTeacher::SyntheticTeacher(const TrueRelevance& truth, double sigma, double beta, std::uint64_t seed)
    : truth_(&truth), sigma_(sigma), beta_(beta), seed_(seed) {
  if (!(sigma >= 0.0)) throw ValidationError("synthetic teacher: sigma must be >= 0");
  if (!(beta > 0.0)) throw ValidationError("synthetic teacher: beta must be > 0");
  fingerprint_ = Fnv1a().str("synthetic").value(truth.fingerprint()).value(sigma).value(beta).value(seed).digest();
}

double SyntheticTeacher::score(const Query& q, const Document& d) const {
  double s = truth_->score(q, d);
  if (sigma_ > 0.0) s += sigma_ * keyed_normal(derive_seed(seed_, "point", q.id, d.id));
  return s;
}

double SyntheticTeacher::prefer(const Query& q, const Document& d_i, const Document& d_j) const {
  double z = beta_ * (truth_->score(q, d_i) - truth_->score(q, d_j));
  if (sigma_ > 0.0) z += sigma_ * keyed_normal(derive_seed(seed_, "pair", q.id, d_i.id, d_j.id));
  return mirrored_logistic(z);
}

double SymmetrizedPairwise::prefer(const Query& q, const Document& d_i, const Document& d_j) const {
  return 0.5 * (inner_->prefer(q, d_i, d_j) + (1.0 - inner_->prefer(q, d_j, d_i)));
}

std::uint64_t SymmetrizedPairwise::fingerprint() const {
  return Fnv1a().str("symmetrized").value(inner_->fingerprint()).digest();
}

// --- classifier ----------------------------------------------------------------

PairwiseClassifier::PairwiseClassifier(std::size_t vocab_size)
    : vocab_(vocab_size), weights_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(5 * vocab_size))) {}

PairwiseClassifier::SparseRow PairwiseClassifier::features(const Query& q, const Document& d_i,
                                                           const Document& d_j) const {
  SparseRow row;
  auto add_counts = [&](const SparseFeatures& f, std::size_t block) {
    for (const auto& tc : f) {
      if (tc.term >= vocab_) throw ValidationError("classifier: term outside vocabulary");
      row.emplace_back(block * vocab_ + tc.term, static_cast<double>(tc.count));
    }
  };
  // Both feature lists are sorted by term id; merge to find shared terms.
  auto add_products = [&](const SparseFeatures& a, const SparseFeatures& b, std::size_t block) {
    auto ia = a.begin(), ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
      if (ia->term < ib->term) {
        ++ia;
      } else if (ib->term < ia->term) {
        ++ib;
      } else {
        row.emplace_back(block * vocab_ + ia->term, static_cast<double>(ia->count) * ib->count);
        ++ia;
        ++ib;
      }
    }
  };
  add_counts(q.features, 0);
  add_counts(d_i.features, 1);
  add_counts(d_j.features, 2);
  add_products(q.features, d_i.features, 3);
  add_products(q.features, d_j.features, 4);
  return row;
}

double PairwiseClassifier::raw_score(const Query& q, const Document& d_i, const Document& d_j) const {
  double z = bias_;
  for (const auto& [idx, x] : features(q, d_i, d_j)) z += weights_(static_cast<Eigen::Index>(idx)) * x;
  return z;
}

double PairwiseClassifier::prefer(const Query& q, const Document& d_i, const Document& d_j) const {
  return logistic(raw_score(q, d_i, d_j));
}

std::uint64_t PairwiseClassifier::fingerprint() const {
  return Fnv1a()
      .str("classifier")
      .bytes(weights_.data(), sizeof(double) * static_cast<std::size_t>(weights_.size()))
      .value(bias_)
      .digest();
}

BceEvaluation bce(const PairwiseClassifier& classifier, std::span<const Triplet> triplets) {
  if (triplets.empty()) throw ValidationError("bce: empty triplet set");
  const auto n = static_cast<Eigen::Index>(classifier.num_features());
  BceEvaluation out{0.0, Eigen::VectorXd::Zero(n + 1)};
  const double inv = 1.0 / static_cast<double>(triplets.size());
  for (const auto& t : triplets) {
    if (t.label != 0 && t.label != 1) throw ValidationError("bce: labels must be 0 or 1");
    const auto row = classifier.features(*t.query, *t.doc_i, *t.doc_j);
    double z = classifier.bias();
    for (const auto& [idx, x] : row) z += classifier.weights()(static_cast<Eigen::Index>(idx)) * x;
    // -[y log s(z) + (1 - y) log(1 - s(z))]
    out.loss += inv * (t.label ? softplus(-z) : softplus(z));
    const double dz = inv * (logistic(z) - t.label);
    for (const auto& [idx, x] : row) out.grad(static_cast<Eigen::Index>(idx)) += dz * x;
    out.grad(n) += dz;
  }
  return out;
}

double safe_step_size(const PairwiseClassifier& classifier, std::span<const Triplet> triplets) {
  double max_sq = 1.0;  // bias feature
  for (const auto& t : triplets) {
    double sq = 1.0;
    for (const auto& [_, x] : classifier.features(*t.query, *t.doc_i, *t.doc_j)) sq += x * x;
    max_sq = std::max(max_sq, sq);
  }
  return 4.0 / max_sq;
}

std::vector<double> train_pairwise_classifier(PairwiseClassifier& classifier, std::span<const Triplet> triplets,
                                              std::size_t steps, double learning_rate) {
  if (triplets.empty()) throw ValidationError("train_pairwise_classifier: empty triplet set");
  for (const auto& t : triplets)
    if (t.label != 0 && t.label != 1) throw ValidationError("train_pairwise_classifier: labels must be 0 or 1");
  const double lr = learning_rate > 0.0 ? learning_rate : safe_step_size(classifier, triplets);
  const auto n = static_cast<Eigen::Index>(classifier.num_features());
  std::vector<double> history;
  history.reserve(steps + 1);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto eval = bce(classifier, triplets);
    history.push_back(eval.loss);
    classifier.weights() -= lr * eval.grad.head(n);
    classifier.bias() -= lr * eval.grad(n);
  }
  history.push_back(bce(classifier, triplets).loss);
  return history;
}

// --- prompts -------------------------------------------------------------------

namespace {

constexpr std::string_view kPointwiseHead = "Is the document relevant to the query (Yes or No)?\nQuery: ";
constexpr std::string_view kPointwiseDoc = " \nDocument: ";
constexpr std::string_view kPairwiseHead = "Which document is more relevant to the query?\nAnswer only 'A' or 'B'. \nQuery: ";
constexpr std::string_view kPairwiseDocA = " \nDocument A: ";
constexpr std::string_view kPairwiseDocB = "\nDocument B: ";

}  // namespace

std::string prompt_pointwise(std::string_view query, std::string_view document) {
  std::string out(kPointwiseHead);
  out.append(query).append(kPointwiseDoc).append(document);
  return out;
}

std::string prompt_pairwise(std::string_view query, std::string_view doc_a, std::string_view doc_b) {
  std::string out(kPairwiseHead);
  out.append(query).append(kPairwiseDocA).append(doc_a).append(kPairwiseDocB).append(doc_b);
  return out;
}

std::optional<PointwisePromptFields> parse_pointwise_prompt(std::string_view prompt) {
  if (!prompt.starts_with(kPointwiseHead)) return std::nullopt;
  prompt.remove_prefix(kPointwiseHead.size());
  const auto sep = prompt.find(kPointwiseDoc);
  if (sep == std::string_view::npos) return std::nullopt;
  return PointwisePromptFields{std::string(prompt.substr(0, sep)),
                               std::string(prompt.substr(sep + kPointwiseDoc.size()))};
}

std::optional<PairwisePromptFields> parse_pairwise_prompt(std::string_view prompt) {
  if (!prompt.starts_with(kPairwiseHead)) return std::nullopt;
  prompt.remove_prefix(kPairwiseHead.size());
  const auto a = prompt.find(kPairwiseDocA);
  if (a == std::string_view::npos) return std::nullopt;
  const auto rest = prompt.substr(a + kPairwiseDocA.size());
  const auto b = rest.find(kPairwiseDocB);
  if (b == std::string_view::npos) return std::nullopt;
  return PairwisePromptFields{std::string(prompt.substr(0, a)), std::string(rest.substr(0, b)),
                              std::string(rest.substr(b + kPairwiseDocB.size()))};
}

// --- LLM adapter ---------------------------------------------------------------

double llm_adapter_prefer(const LlmClient& client, std::string_view query, std::string_view doc_i,
                          std::string_view doc_j, const LlmAdapterOptions& options) {
  if (!(options.temperature > 0.0)) throw ValidationError("llm adapter: temperature must be positive");
  const LlmRequest request{prompt_pairwise(query, doc_i, doc_j), options.options};
  const auto attempts = std::max<std::size_t>(1, options.max_attempts);
  LlmResponse response;
  for (std::size_t attempt = 1;; ++attempt) {
    try {
      response = client.complete(request);
      break;
    } catch (const TransportError& e) {
      if (attempt >= attempts)
        throw TransportError("llm client failed after " + std::to_string(attempts) + " attempts: " + e.what());
    }
  }
  const auto [a, b] = response.mass;
  if (!std::isfinite(a) || !std::isfinite(b) || a < 0.0 || b < 0.0)
    throw DegenerateResponseError("llm response has invalid option mass");
  if (a == 0.0 && b == 0.0) throw DegenerateResponseError("llm response puts zero mass on both options");
  if (b == 0.0) return 1.0;
  if (a == 0.0) return 0.0;
  if (options.temperature == 1.0) return a / (a + b);
  return logistic((std::log(a) - std::log(b)) / options.temperature);
}

double LlmPairwiseTeacher::prefer(const Query& q, const Document& d_i, const Document& d_j) const {
  return llm_adapter_prefer(*client_, q.text, d_i.text, d_j.text, options_);
}

std::uint64_t LlmPairwiseTeacher::fingerprint() const {
  Fnv1a h;
  h.str("llm").value(client_->fingerprint()).value(options_.temperature);
  for (const auto& o : options_.options) h.str(o);
  return h.digest();
}

TruthMockClient::TruthMockClient(const TrueRelevance& truth, const Vocabulary& vocab, double beta)
    : truth_(&truth), vocab_(&vocab), beta_(beta) {}

std::vector<TermId> TruthMockClient::lookup(std::string_view text) const {
  std::vector<TermId> ids;
  for (const auto& tok : tokenize(text)) {
    const auto id = vocab_->find(tok);
    if (!id) throw ValidationError("truth mock: unknown term '" + tok + "'");
    ids.push_back(*id);
  }
  return ids;
}

LlmResponse TruthMockClient::complete(const LlmRequest& request) const {
  const auto fields = parse_pairwise_prompt(request.prompt);
  if (!fields) throw ValidationError("truth mock: not a pairwise prompt");
  const auto q = lookup(fields->query);
  const double gap = truth_->score_tokens(q, lookup(fields->doc_a)) - truth_->score_tokens(q, lookup(fields->doc_b));
  const double p = logistic(beta_ * gap);
  return LlmResponse{{p, 1.0 - p}};
}

std::uint64_t TruthMockClient::fingerprint() const {
  return Fnv1a().str("truth-mock").value(truth_->fingerprint()).value(beta_).digest();
}

FileMockClient::FileMockClient(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Fnv1a h;
  h.str("file-mock");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    h.str(line);
    try {
      const auto obj = json::parse(line);
      const auto& mass = obj.at("mass");
      if (!mass.is_array() || mass.size() != 2) throw ParseError("mock response: 'mass' must have two entries", lineno);
      responses_[obj.at("prompt").get<std::string>()] = LlmResponse{{mass[0].get<double>(), mass[1].get<double>()}};
    } catch (const json::exception& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), lineno);
    }
  }
  fingerprint_ = h.digest();
}

LlmResponse FileMockClient::complete(const LlmRequest& request) const {
  const auto it = responses_.find(request.prompt);
  if (it == responses_.end()) throw Error("file mock: no recorded response for prompt");
  return it->second;
}

// --- caching -------------------------------------------------------------------

std::size_t TeacherCache::size() const {
  std::lock_guard lock(mutex_);
  return values_.size();
}

std::size_t TeacherCache::hits() const {
  std::lock_guard lock(mutex_);
  return hits_;
}

fs::path TeacherCache::file_in(const fs::path& dir) const {
  char name[64];
  std::snprintf(name, sizeof name, "teacher-%016llx.jsonl", static_cast<unsigned long long>(fingerprint_));
  return dir / name;
}

void TeacherCache::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return;
  std::string line;
  std::size_t lineno = 0;
  std::lock_guard lock(mutex_);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto obj = json::parse(line);
      values_.emplace(obj.at("k").get<std::string>(), obj.at("v").get<double>());
    } catch (const json::exception& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), lineno);
    }
  }
}

void TeacherCache::save(const fs::path& path) const {
  std::map<std::string, double> sorted;
  {
    std::lock_guard lock(mutex_);
    sorted.insert(values_.begin(), values_.end());
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& [k, v] : sorted) out << json{{"k", k}, {"v", v}}.dump() << '\n';
}

double CachedPointwise::score(const Query& q, const Document& d) const {
  return cache_.get_or_compute(q.id + '\t' + d.id, [&] { return inner_->score(q, d); });
}

double CachedPairwise::prefer(const Query& q, const Document& d_i, const Document& d_j) const {
  return cache_.get_or_compute(q.id + '\t' + d_i.id + '\t' + d_j.id, [&] { return inner_->prefer(q, d_i, d_j); });
}

// --- score tables ----------------------------------------------------------------

RunList rerank(const RunList& run, const Corpus& corpus, const PointwiseTeacher& teacher) {
  const Query* q = corpus.find_query(run.query_id);
  if (!q) throw ValidationError("rerank: unknown query '" + run.query_id + "'");
  std::vector<std::pair<std::string, double>> scored;
  scored.reserve(run.entries.size());
  for (const auto& e : run.entries) {
    const auto idx = corpus.find_doc(e.doc_id);
    if (!idx) throw ValidationError("rerank: document '" + e.doc_id + "' is not in the corpus");
    scored.emplace_back(e.doc_id, teacher.score(*q, corpus.docs()[*idx]));
  }
  return make_run(run.query_id, std::move(scored));
}

void score_pairs(PairSample& sample, const Corpus& corpus, const PairwiseTeacher& teacher) {
  const Query* q = corpus.find_query(sample.query_id);
  if (!q) throw ValidationError("score_pairs: unknown query '" + sample.query_id + "'");
  for (auto& pr : sample.pairs) {
    const double p = teacher.prefer(*q, corpus.doc(pr.doc_i), corpus.doc(pr.doc_j));
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("pairwise teacher returned a value outside [0,1]");
    pr.p = p;
  }
}

std::string teacher_scores_line(const QueryTeacherScores& scores) {
  ordered_json pointwise = ordered_json::object();
  for (const auto& [doc, s] : scores.pointwise) pointwise[doc] = s;
  ordered_json pairwise = ordered_json::array();
  for (const auto& pr : scores.pairwise) pairwise.push_back(ordered_json{{"i", pr.doc_i}, {"j", pr.doc_j}, {"p", pr.p}});
  return ordered_json{{"query_id", scores.query_id}, {"pointwise", pointwise}, {"pairwise", pairwise}}.dump();
}

void save_teacher_scores(const fs::path& path, const std::vector<QueryTeacherScores>& scores) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& s : scores) out << teacher_scores_line(s) << '\n';
}

std::vector<QueryTeacherScores> load_teacher_scores(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<QueryTeacherScores> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto obj = ordered_json::parse(line);
      QueryTeacherScores s;
      s.query_id = obj.at("query_id").get<std::string>();
      std::map<std::string, int, std::less<>> rank_of;
      for (const auto& [doc, v] : obj.at("pointwise").items()) {
        s.pointwise.emplace_back(doc, v.get<double>());
        rank_of.emplace(doc, static_cast<int>(s.pointwise.size()));
      }
      for (const auto& pr : obj.at("pairwise")) {
        SampledPair p;
        p.doc_i = pr.at("i").get<std::string>();
        p.doc_j = pr.at("j").get<std::string>();
        const auto& prob = pr.at("p");
        p.p = prob.is_null() ? std::numeric_limits<double>::quiet_NaN() : prob.get<double>();
        const auto a = rank_of.find(p.doc_i), b = rank_of.find(p.doc_j);
        if (a == rank_of.end() || b == rank_of.end())
          throw ParseError("teacher scores: pair references a document without a pointwise score", lineno);
        p.rank_i = a->second;
        p.rank_j = b->second;
        s.pairwise.push_back(std::move(p));
      }
      out.push_back(std::move(s));
    } catch (const ordered_json::exception& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), lineno);
    }
  }
  return out;
}

}  // namespace distillrank
