#pragma once

// Naive reference metrics written from the textbook definitions, with no code
// shared with the library, and a random instance generator for comparing them.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "distillrank/corpus.hpp"

namespace oracles {

using distillrank::Judgments;
using distillrank::RunList;

struct Instance {
  RunList run;
  Judgments qrels;
  std::map<std::string, int> grades;  // same labels, plain map
};

/// A run over `n` documents with random scores (including ties) and random
/// graded judgments that may include documents the run never retrieves.
inline Instance random_instance(std::mt19937_64& rng) {
  Instance in;
  const int n = 1 + static_cast<int>(rng() % 40);
  const int pool = n + static_cast<int>(rng() % 10);
  std::vector<std::pair<std::string, double>> scored;
  for (int i = 0; i < n; ++i) scored.emplace_back("d" + std::to_string(i), static_cast<double>(rng() % 20));
  in.run = distillrank::make_run("q", scored);
  const double density = std::uniform_real_distribution<double>(0.0, 0.4)(rng);
  for (int i = 0; i < pool; ++i) {
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) >= density) continue;
    const int g = static_cast<int>(rng() % 4);  // grade 0 is a judged non-relevant doc
    in.qrels.set("q", "d" + std::to_string(i), g);
    in.grades["d" + std::to_string(i)] = g;
  }
  return in;
}

inline int grade_of(const std::map<std::string, int>& grades, const std::string& doc) {
  auto it = grades.find(doc);
  return it == grades.end() ? 0 : it->second;
}

inline int relevant_total(const std::map<std::string, int>& grades) {
  int n = 0;
  for (const auto& [_, g] : grades) n += g > 0;
  return n;
}

inline double mrr(const RunList& run, const std::map<std::string, int>& grades, std::size_t k) {
  for (std::size_t r = 0; r < run.entries.size(); ++r) {
    if (r >= k) break;
    if (grade_of(grades, run.entries[r].doc_id) > 0) return 1.0 / (r + 1.0);
  }
  return 0.0;
}

inline double recall(const RunList& run, const std::map<std::string, int>& grades, std::size_t k) {
  int hits = 0;
  for (std::size_t r = 0; r < run.entries.size() && r < k; ++r) hits += grade_of(grades, run.entries[r].doc_id) > 0;
  return static_cast<double>(hits) / relevant_total(grades);
}

inline double success(const RunList& run, const std::map<std::string, int>& grades, std::size_t k) {
  return mrr(run, grades, k) > 0.0 ? 1.0 : 0.0;
}

inline double ndcg(const RunList& run, const std::map<std::string, int>& grades, std::size_t k) {
  double dcg = 0.0;
  for (std::size_t r = 0; r < run.entries.size() && r < k; ++r)
    dcg += (std::pow(2.0, grade_of(grades, run.entries[r].doc_id)) - 1.0) / (std::log(r + 2.0) / std::log(2.0));
  // Ideal: selection of the remaining best grade at each position.
  std::vector<int> left;
  for (const auto& [_, g] : grades) left.push_back(g);
  double idcg = 0.0;
  for (std::size_t r = 0; r < k && !left.empty(); ++r) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < left.size(); ++i)
      if (left[i] > left[best]) best = i;
    idcg += (std::pow(2.0, left[best]) - 1.0) / (std::log(r + 2.0) / std::log(2.0));
    left.erase(left.begin() + static_cast<long>(best));
  }
  return dcg / idcg;
}

}  // namespace oracles
