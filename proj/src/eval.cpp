#include "distillrank/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include <json.hpp>

#include "distillrank/error.hpp"

namespace distillrank {

namespace {

/// Grades of the run's top-k documents, in rank order.
std::vector<int> top_grades(const RunList& run, const std::map<std::string, int, std::less<>>& judged, std::size_t k) {
  std::vector<int> grades;
  const auto n = std::min(k, run.entries.size());
  grades.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto it = judged.find(run.entries[r].doc_id);
    grades.push_back(it == judged.end() ? 0 : it->second);
  }
  return grades;
}

std::size_t relevant_count(const std::map<std::string, int, std::less<>>& judged) {
  return static_cast<std::size_t>(std::count_if(judged.begin(), judged.end(), [](const auto& e) { return e.second >= 1; }));
}

void check_k(std::size_t k) {
  if (k < 1) throw ValidationError("metric cutoff k must be >= 1");
}

}  // namespace

std::optional<double> mrr_at_k(const RunList& run, const Judgments& qrels, std::size_t k) {
  check_k(k);
  const auto* judged = qrels.judged(run.query_id);
  if (!judged || relevant_count(*judged) == 0) return std::nullopt;
  const auto grades = top_grades(run, *judged, k);
  for (std::size_t r = 0; r < grades.size(); ++r)
    if (grades[r] >= 1) return 1.0 / static_cast<double>(r + 1);
  return 0.0;
}

std::optional<double> recall_at_k(const RunList& run, const Judgments& qrels, std::size_t k) {
  check_k(k);
  const auto* judged = qrels.judged(run.query_id);
  if (!judged) return std::nullopt;
  const auto total = relevant_count(*judged);
  if (total == 0) return std::nullopt;
  const auto grades = top_grades(run, *judged, k);
  const auto hit = std::count_if(grades.begin(), grades.end(), [](int g) { return g >= 1; });
  return static_cast<double>(hit) / static_cast<double>(total);
}

std::optional<double> success_at_k(const RunList& run, const Judgments& qrels, std::size_t k) {
  check_k(k);
  const auto* judged = qrels.judged(run.query_id);
  if (!judged || relevant_count(*judged) == 0) return std::nullopt;
  const auto grades = top_grades(run, *judged, k);
  return std::any_of(grades.begin(), grades.end(), [](int g) { return g >= 1; }) ? 1.0 : 0.0;
}

std::optional<double> ndcg_at_k(const RunList& run, const Judgments& qrels, std::size_t k) {
  check_k(k);
  const auto* judged = qrels.judged(run.query_id);
  if (!judged) return std::nullopt;
  auto dcg = [k](const std::vector<int>& grades) {
    double total = 0.0;
    for (std::size_t r = 0; r < grades.size() && r < k; ++r)
      total += (std::exp2(static_cast<double>(grades[r])) - 1.0) / std::log2(static_cast<double>(r) + 2.0);
    return total;
  };
  std::vector<int> ideal;
  for (const auto& [_, g] : *judged) ideal.push_back(g);
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal);
  if (!(idcg > 0.0)) return std::nullopt;
  return dcg(top_grades(run, *judged, k)) / idcg;
}

std::string MetricSpec::name() const {
  const char* base = "";
  switch (kind) {
    case MetricKind::mrr:
      base = "mrr";
      break;
    case MetricKind::recall:
      base = "recall";
      break;
    case MetricKind::ndcg:
      base = "ndcg";
      break;
    case MetricKind::success:
      base = "success";
      break;
  }
  return std::string(base) + "@" + std::to_string(k);
}

MetricSpec parse_metric(std::string_view text) {
  const auto at = text.find('@');
  if (at == std::string_view::npos) throw ValidationError("metric '" + std::string(text) + "' must look like name@k");
  const auto name = text.substr(0, at);
  const std::string kstr(text.substr(at + 1));
  std::size_t used = 0;
  long k = 0;
  try {
    k = std::stol(kstr, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used != kstr.size() || kstr.empty() || k < 1)
    throw ValidationError("metric '" + std::string(text) + "': cutoff must be a positive integer");
  MetricSpec spec{MetricKind::mrr, static_cast<std::size_t>(k)};
  if (name == "mrr") spec.kind = MetricKind::mrr;
  else if (name == "recall") spec.kind = MetricKind::recall;
  else if (name == "ndcg") spec.kind = MetricKind::ndcg;
  else if (name == "success") spec.kind = MetricKind::success;
  else throw ValidationError("unknown metric '" + std::string(name) + "'");
  return spec;
}

double evaluate_metric(const MetricSpec& metric, const RunList& run, const Judgments& qrels, bool& included) {
  std::optional<double> v;
  switch (metric.kind) {
    case MetricKind::mrr:
      v = mrr_at_k(run, qrels, metric.k);
      break;
    case MetricKind::recall:
      v = recall_at_k(run, qrels, metric.k);
      break;
    case MetricKind::ndcg:
      v = ndcg_at_k(run, qrels, metric.k);
      break;
    case MetricKind::success:
      v = success_at_k(run, qrels, metric.k);
      break;
  }
  included = v.has_value();
  return v.value_or(0.0);
}

MetricReport evaluate(std::span<const RunList> runs, const Judgments& qrels, std::span<const MetricSpec> metrics) {
  MetricReport report;
  report.metrics.assign(metrics.begin(), metrics.end());
  report.means.assign(metrics.size(), 0.0);
  for (const auto& run : runs) {
    // Inclusion is decided once per query: at least one relevant document.
    if (qrels.relevant(run.query_id).empty()) {
      ++report.excluded;
      continue;
    }
    std::vector<double> row;
    row.reserve(metrics.size());
    for (const auto& m : metrics) {
      bool included = false;
      row.push_back(evaluate_metric(m, run, qrels, included));
    }
    report.query_ids.push_back(run.query_id);
    report.values.push_back(std::move(row));
  }
  if (!report.values.empty()) {
    for (std::size_t m = 0; m < metrics.size(); ++m) {
      double sum = 0.0;
      for (const auto& row : report.values) sum += row[m];
      report.means[m] = sum / static_cast<double>(report.values.size());
    }
  }
  return report;
}

double MetricReport::mean(const MetricSpec& metric) const {
  const auto it = std::find(metrics.begin(), metrics.end(), metric);
  if (it == metrics.end()) throw ValidationError("metric " + metric.name() + " not in report");
  return means[static_cast<std::size_t>(it - metrics.begin())];
}

std::string MetricReport::to_text(bool per_query) const {
  std::string out;
  char buf[128];
  std::size_t width = 8;  // fits "excluded"
  for (const auto& m : metrics) width = std::max(width, m.name().size());
  if (per_query)
    for (const auto& q : query_ids) width = std::max(width, q.size());
  auto line = [&](const std::string& label, const std::string& name, double v) {
    std::snprintf(buf, sizeof buf, "%-*s  %-*s  %.4f\n", static_cast<int>(width), name.c_str(), static_cast<int>(width),
                  label.c_str(), v);
    out += buf;
  };
  if (per_query)
    for (std::size_t q = 0; q < query_ids.size(); ++q)
      for (std::size_t m = 0; m < metrics.size(); ++m) line(query_ids[q], metrics[m].name(), values[q][m]);
  for (std::size_t m = 0; m < metrics.size(); ++m) line("all", metrics[m].name(), means[m]);
  std::snprintf(buf, sizeof buf, "%-*s  %-*s  %zu\n", static_cast<int>(width), "queries", static_cast<int>(width), "all",
                query_count());
  out += buf;
  std::snprintf(buf, sizeof buf, "%-*s  %-*s  %zu\n", static_cast<int>(width), "excluded", static_cast<int>(width), "all",
                excluded);
  out += buf;
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json mean_obj = nlohmann::ordered_json::object();
  for (std::size_t m = 0; m < metrics.size(); ++m) mean_obj[metrics[m].name()] = means[m];
  nlohmann::ordered_json per_query = nlohmann::ordered_json::object();
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    nlohmann::ordered_json row = nlohmann::ordered_json::object();
    for (std::size_t m = 0; m < metrics.size(); ++m) row[metrics[m].name()] = values[q][m];
    per_query[query_ids[q]] = row;
  }
  return nlohmann::ordered_json{{"queries", query_count()}, {"excluded", excluded}, {"mean", mean_obj}, {"per_query", per_query}}
      .dump();
}

double DisagreementCount::rate() const {
  if (counted == 0) throw ValidationError("disagreement rate undefined: no pairs with a decided teacher preference");
  return static_cast<double>(disagreements) / static_cast<double>(counted);
}

DisagreementCount count_disagreements(const PairSample& sample) {
  DisagreementCount c;
  for (const auto& pr : sample.pairs) {
    if (!(pr.p >= 0.0 && pr.p <= 1.0)) throw ValidationError("disagreement: pair has no teacher probability");
    if (pr.p == 0.5) continue;
    ++c.counted;
    const bool pointwise_prefers_i = pr.rank_i < pr.rank_j;
    const bool teacher_prefers_i = pr.p > 0.5;
    c.disagreements += pointwise_prefers_i != teacher_prefers_i;
  }
  return c;
}

double pairwise_disagreement(std::span<const PairSample> samples) {
  DisagreementCount total;
  for (const auto& s : samples) {
    const auto c = count_disagreements(s);
    total.disagreements += c.disagreements;
    total.counted += c.counted;
  }
  return total.rate();
}

double pairwise_disagreement(const PairSample& sample) { return pairwise_disagreement(std::span(&sample, 1)); }

}  // namespace distillrank
