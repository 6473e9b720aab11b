#include "distillrank/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "distillrank/error.hpp"
#include "distillrank/hashing.hpp"

namespace distillrank {

namespace fs = std::filesystem;
using nlohmann::json;

void SyntheticSpec::validate() const {
  if (num_docs == 0) throw ValidationError("synthetic spec: num_docs must be positive");
  if (num_queries == 0) throw ValidationError("synthetic spec: num_queries must be positive");
  if (vocab_size == 0 || num_topics == 0 || latent_dim == 0)
    throw ValidationError("synthetic spec: vocab_size, num_topics and latent_dim must be positive");
  if (num_topics > vocab_size) throw ValidationError("synthetic spec: more topics than terms");
  if (doc_length == 0 || query_length == 0) throw ValidationError("synthetic spec: lengths must be positive");
  if (!(topic_focus >= 0.0 && topic_focus <= 1.0)) throw ValidationError("synthetic spec: topic_focus outside [0,1]");
  if (!(positive_fraction > 0.0 && positive_fraction <= 1.0))
    throw ValidationError("synthetic spec: positive_fraction outside (0,1]");
  if (!(noise_scale >= 0.0) || !(term_spread >= 0.0) || !(relevance_scale > 0.0))
    throw ValidationError("synthetic spec: noise_scale/term_spread must be >= 0, relevance_scale > 0");
}

// --- TrueRelevance ----------------------------------------------------------

TrueRelevance::TrueRelevance(Eigen::MatrixXd term_latents, double scale)
    : latents_(std::move(term_latents)), scale_(scale) {}

Eigen::VectorXd TrueRelevance::latent(std::span<const TermId> tokens) const {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(latents_.cols());
  if (tokens.empty()) return mean;
  for (const TermId t : tokens) {
    if (t >= latents_.rows()) throw ValidationError("true relevance: term id " + std::to_string(t) + " is unknown");
    mean += latents_.row(t).transpose();
  }
  return mean / static_cast<double>(tokens.size());
}

double TrueRelevance::score_tokens(std::span<const TermId> query_tokens,
                                   std::span<const TermId> doc_tokens) const {
  return scale_ * latent(query_tokens).dot(latent(doc_tokens));
}

double TrueRelevance::score(const Query& q, const Document& d) const { return score_tokens(q.tokens, d.tokens); }

std::uint64_t TrueRelevance::fingerprint() const {
  Fnv1a h;
  h.value(scale_).value(static_cast<std::int64_t>(latents_.rows())).value(static_cast<std::int64_t>(latents_.cols()));
  h.bytes(latents_.data(), sizeof(double) * static_cast<std::size_t>(latents_.size()));
  return h.digest();
}

void TrueRelevance::save(const fs::path& path, const Vocabulary& vocab) const {
  json terms = json::object();
  for (std::size_t t = 0; t < vocab.size(); ++t) {
    std::vector<double> row(latents_.cols());
    for (Eigen::Index c = 0; c < latents_.cols(); ++c) row[c] = latents_(static_cast<Eigen::Index>(t), c);
    terms[vocab.term(static_cast<TermId>(t))] = row;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << json{{"scale", scale_}, {"latent_dim", latents_.cols()}, {"terms", terms}}.dump() << '\n';
}

TrueRelevance TrueRelevance::load(const fs::path& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.filename().string() + ": " + e.what());
  }
  const auto dim = doc.at("latent_dim").get<Eigen::Index>();
  Eigen::MatrixXd latents = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(vocab.size()), dim);
  for (const auto& [term, row] : doc.at("terms").items()) {
    const auto id = vocab.find(term);
    if (!id) continue;
    if (static_cast<Eigen::Index>(row.size()) != dim) throw ParseError("truth: latent row has wrong dimension");
    for (Eigen::Index c = 0; c < dim; ++c) latents(*id, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return TrueRelevance(std::move(latents), doc.at("scale").get<double>());
}

// --- generator --------------------------------------------------------------

namespace {

std::string term_word(std::size_t i) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  constexpr std::size_t base = consonants.size() * vowels.size();
  auto syllable = [&](std::size_t s) {
    return std::string{consonants[s / vowels.size()], vowels[s % vowels.size()]};
  };
  std::string word = syllable(i % base) + syllable((i / base) % base);
  if (i >= base * base) word += syllable((i / (base * base)) % base) + std::to_string(i / (base * base * base));
  return word;
}

std::string padded(std::string_view prefix, std::size_t i, std::size_t n) {
  const auto width = std::to_string(n).size();
  auto digits = std::to_string(i + 1);
  return std::string(prefix) + std::string(width - std::min(width, digits.size()), '0') + digits;
}

struct TopicModel {
  std::vector<std::vector<std::size_t>> topic_terms;
  Eigen::MatrixXd term_latents;  // generator term index x latent_dim
};

TopicModel make_topics(const SyntheticSpec& spec, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto dim = static_cast<Eigen::Index>(spec.latent_dim);
  Eigen::MatrixXd centroids(static_cast<Eigen::Index>(spec.num_topics), dim);
  for (Eigen::Index k = 0; k < centroids.rows(); ++k) {
    for (Eigen::Index c = 0; c < dim; ++c) centroids(k, c) = normal(rng);
    centroids.row(k).normalize();
  }
  TopicModel model;
  model.topic_terms.resize(spec.num_topics);
  model.term_latents.resize(static_cast<Eigen::Index>(spec.vocab_size), dim);
  const double spread = spec.term_spread / std::sqrt(static_cast<double>(spec.latent_dim));
  for (std::size_t t = 0; t < spec.vocab_size; ++t) {
    const auto topic = t % spec.num_topics;
    model.topic_terms[topic].push_back(t);
    for (Eigen::Index c = 0; c < dim; ++c)
      model.term_latents(static_cast<Eigen::Index>(t), c) = centroids(static_cast<Eigen::Index>(topic), c) + spread * normal(rng);
  }
  return model;
}

std::string sample_text(const SyntheticSpec& spec, const TopicModel& topics, std::size_t length, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick_topic(0, spec.num_topics - 1);
  std::uniform_int_distribution<std::size_t> pick_term(0, spec.vocab_size - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto primary = pick_topic(rng);
  auto secondary = pick_topic(rng);
  if (spec.num_topics > 1)
    while (secondary == primary) secondary = pick_topic(rng);
  const double secondary_cut = spec.topic_focus + 0.5 * (1.0 - spec.topic_focus);

  std::string text;
  for (std::size_t i = 0; i < length; ++i) {
    const double u = unit(rng);
    std::size_t term;
    if (u < secondary_cut) {
      const auto& pool = topics.topic_terms[u < spec.topic_focus ? primary : secondary];
      term = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    } else {
      term = pick_term(rng);
    }
    if (!text.empty()) text += ' ';
    text += term_word(term);
  }
  return text;
}

Judgments threshold_judgments(const SyntheticSpec& spec, const std::vector<Query>& queries, const Corpus& corpus,
                              const TrueRelevance& truth) {
  const auto& docs = corpus.docs();
  Eigen::MatrixXd doc_latents(static_cast<Eigen::Index>(docs.size()), truth.term_latents().cols());
  for (std::size_t i = 0; i < docs.size(); ++i)
    doc_latents.row(static_cast<Eigen::Index>(i)) = truth.latent(docs[i].tokens).transpose();

  const auto positives = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(spec.positive_fraction * static_cast<double>(docs.size()) - 1e-9)));
  Judgments judgments;
  std::vector<std::size_t> order(docs.size());
  for (const auto& q : queries) {
    const Eigen::VectorXd scores = truth.scale() * (doc_latents * truth.latent(q.tokens));
    std::vector<double> noisy(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
      noisy[i] = scores(static_cast<Eigen::Index>(i));
      if (spec.noise_scale > 0.0)
        noisy[i] += spec.noise_scale * keyed_normal(derive_seed(spec.seed, "label", q.id, docs[i].id));
    }
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(positives), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (noisy[a] != noisy[b]) return noisy[a] > noisy[b];
                        return docs[a].id < docs[b].id;
                      });
    for (std::size_t r = 0; r < positives; ++r) judgments.set(q.id, docs[order[r]].id, 1);
  }
  return judgments;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "synthetic"));
  const auto topics = make_topics(spec, rng);

  std::vector<TextRecord> docs, queries, dev;
  docs.reserve(spec.num_docs);
  for (std::size_t i = 0; i < spec.num_docs; ++i)
    docs.push_back({padded("d", i, spec.num_docs), sample_text(spec, topics, spec.doc_length, rng)});
  for (std::size_t i = 0; i < spec.num_queries; ++i)
    queries.push_back({padded("q", i, spec.num_queries), sample_text(spec, topics, spec.query_length, rng)});
  for (std::size_t i = 0; i < spec.num_dev_queries; ++i)
    dev.push_back({padded("dev", i, spec.num_dev_queries), sample_text(spec, topics, spec.query_length, rng)});

  SyntheticData data{Corpus::from_records(docs, queries, dev), {}, {}, {}};
  const auto& vocab = data.corpus.vocabulary();
  Eigen::MatrixXd latents(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(spec.latent_dim));
  // Corpus vocabulary is sorted by string; map back to generator term ids.
  std::unordered_map<std::string, std::size_t> generator_id;
  for (std::size_t t = 0; t < spec.vocab_size; ++t) generator_id.emplace(term_word(t), t);
  for (std::size_t t = 0; t < vocab.size(); ++t)
    latents.row(static_cast<Eigen::Index>(t)) =
        topics.term_latents.row(static_cast<Eigen::Index>(generator_id.at(vocab.term(static_cast<TermId>(t)))));
  data.truth = TrueRelevance(std::move(latents), spec.relevance_scale);

  data.qrels = threshold_judgments(spec, data.corpus.queries(), data.corpus, data.truth);
  data.dev_qrels = threshold_judgments(spec, data.corpus.dev_queries(), data.corpus, data.truth);
  return data;
}

void save_synthetic(const SyntheticData& data, const fs::path& dir) {
  save_corpus(data.corpus, dir);
  save_qrels(data.qrels, dir / "qrels.txt");
  if (!data.corpus.dev_queries().empty()) save_qrels(data.dev_qrels, dir / "dev_qrels.txt");
  data.truth.save(dir / "truth.json", data.corpus.vocabulary());
}

SyntheticData load_synthetic(const fs::path& dir) {
  SyntheticData data{load_corpus(dir), {}, {}, {}};
  data.qrels = load_qrels(dir / "qrels.txt");
  if (fs::exists(dir / "dev_qrels.txt")) data.dev_qrels = load_qrels(dir / "dev_qrels.txt");
  data.qrels.validate(data.corpus);
  data.dev_qrels.validate(data.corpus);
  data.truth = TrueRelevance::load(dir / "truth.json", data.corpus.vocabulary());
  return data;
}

}  // namespace distillrank
