#pragma once

// Shared fixtures for the test binaries: small corpora, random models and a
// central finite-difference checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "distillrank/corpus.hpp"
#include "distillrank/distill.hpp"
#include "distillrank/encoder.hpp"

namespace testing {

using namespace distillrank;

inline std::string word(std::size_t i) { return "w" + std::to_string(i); }

/// Text of `length` words drawn uniformly from a `vocab`-word lexicon.
inline std::string random_text(std::mt19937_64& rng, std::size_t vocab, std::size_t length) {
  std::uniform_int_distribution<std::size_t> pick(0, vocab - 1);
  std::string text;
  for (std::size_t i = 0; i < length; ++i) text += (i ? " " : "") + word(pick(rng));
  return text;
}

inline std::string id(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%04zu", prefix, i);
  return buf;
}

/// Every lexicon word appears in document 0 so vocabulary size is exactly `vocab`.
inline Corpus random_corpus(std::uint64_t seed, std::size_t docs, std::size_t queries, std::size_t vocab = 50,
                            std::size_t doc_len = 12, std::size_t query_len = 4, std::size_t dev_queries = 0) {
  std::mt19937_64 rng(seed);
  std::vector<TextRecord> d, q, dq;
  for (std::size_t i = 0; i < docs; ++i) d.push_back({id('d', i), random_text(rng, vocab, doc_len)});
  std::string all;
  for (std::size_t i = 0; i < vocab; ++i) all += word(i) + " ";
  d[0].text = all;
  for (std::size_t i = 0; i < queries; ++i) q.push_back({id('q', i), random_text(rng, vocab, query_len)});
  for (std::size_t i = 0; i < dev_queries; ++i) dq.push_back({id('v', i), random_text(rng, vocab, query_len)});
  return Corpus::from_records(d, q, dq);
}

inline EncoderModel random_model(std::size_t vocab, SimilarityMode mode, std::uint64_t seed, Eigen::Index dim = 8,
                                 bool shared = true, double scale = 4.0) {
  EncoderOptions o;
  o.mode = mode;
  o.dim = dim;
  o.shared = shared;
  o.seed = seed;
  EncoderModel m(vocab, o);
  // Larger than the default initialization so scores are O(1) and gradients
  // are well away from zero.
  m.query_table() *= scale;
  if (!shared) m.doc_table() *= scale;
  return m;
}

struct FdResult {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst = 0.0;
};

/// Relative error with an absolute floor. Central differences at h = 1e-5
/// carry about 1e-12 of roundoff, which the floor absorbs where the gradient is zero.
inline double rel_error(double a, double b, double floor = 1e-7) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Compares an analytic gradient with central differences of `loss` on
/// `coords` random coordinates drawn from the rows in `rows` (falls back to all
/// rows when empty). Each coordinate is a (side, row, col) entry.
inline FdResult finite_difference_check(EncoderModel& model, const std::function<double()>& loss,
                                        const Gradient& analytic, std::size_t coords, std::mt19937_64& rng,
                                        const std::vector<TermId>& rows = {}, double h = 1e-5, double tol = 1e-4) {
  FdResult r;
  std::uniform_int_distribution<Eigen::Index> col(0, model.dim() - 1);
  std::uniform_int_distribution<int> side_pick(0, model.shared() ? 0 : 1);
  for (std::size_t c = 0; c < coords; ++c) {
    const Side side = side_pick(rng) == 0 ? Side::query : Side::doc;
    auto& table = side == Side::query ? model.query_table() : model.doc_table();
    Eigen::Index row;
    if (rows.empty()) {
      row = std::uniform_int_distribution<Eigen::Index>(0, table.rows() - 1)(rng);
    } else {
      row = rows[std::uniform_int_distribution<std::size_t>(0, rows.size() - 1)(rng)];
    }
    const auto k = col(rng);
    const double saved = table(row, k);
    table(row, k) = saved + h;
    const double up = loss();
    table(row, k) = saved - h;
    const double down = loss();
    table(row, k) = saved;
    const double numeric = (up - down) / (2 * h);
    const auto& g = side == Side::query || model.shared() ? analytic.query : analytic.doc;
    const double err = rel_error(g(row, k), numeric);
    r.worst = std::max(r.worst, err);
    ++r.checked;
    if (!(err < tol)) ++r.failed;
  }
  return r;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

/// Fresh directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("distillrank-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Distinct term ids used by a query and a document.
template <typename A, typename B>
std::vector<TermId> touched_rows(const A& a, const B& b) {
  std::set<TermId> s(a.tokens.begin(), a.tokens.end());
  s.insert(b.tokens.begin(), b.tokens.end());
  return {s.begin(), s.end()};
}

/// Random training examples over `corpus`: `ranked` distinct documents per
/// query with normal teacher scores, `pairs` random pairs with uniform
/// probabilities, and a positive plus `negatives` negatives disjoint from it.
inline std::vector<DistillExample> random_batch(const Corpus& corpus, std::mt19937_64& rng, std::size_t size,
                                                std::size_t ranked = 6, std::size_t pairs = 5,
                                                std::size_t negatives = 4, double teacher_scale = 2.0) {
  std::vector<DistillExample> batch;
  std::normal_distribution<double> g(0.0, teacher_scale);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t b = 0; b < size; ++b) {
    DistillExample ex;
    ex.query = &corpus.queries()[rng() % corpus.queries().size()];
    std::vector<std::size_t> order(corpus.docs().size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t next = 0;
    for (; next < ranked; ++next) ex.ranked.push_back(&corpus.docs()[order[next]]);
    ex.teacher_scores = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(ranked), [&] { return g(rng); });
    ex.pairs.query_id = ex.query->id;
    for (std::size_t p = 0; p < pairs; ++p) {
      const auto i = rng() % ranked;
      const auto j = (i + 1 + rng() % (ranked - 1)) % ranked;
      ex.pairs.pairs.push_back({static_cast<int>(i + 1), static_cast<int>(j + 1), ex.ranked[i]->id, ex.ranked[j]->id, u(rng)});
    }
    ex.positive = &corpus.docs()[order[next++]];
    for (std::size_t n = 0; n < negatives; ++n) ex.negatives.push_back(&corpus.docs()[order[next++]]);
    batch.push_back(std::move(ex));
  }
  return batch;
}

}  // namespace testing
