#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace distillrank {

using TermId = std::uint32_t;

struct TermCount {
  TermId term;
  std::uint32_t count;
  bool operator==(const TermCount&) const = default;
};

/// Sparse term-count vector, sorted by term id, no zero entries.
using SparseFeatures = std::vector<TermCount>;

/// Lowercases ASCII and splits on runs of non-alphanumeric bytes.
std::vector<std::string> tokenize(std::string_view text);

struct TextRecord {
  std::string id;
  std::string text;
  bool operator==(const TextRecord&) const = default;
};

struct Document {
  std::string id;
  std::string text;
  std::vector<TermId> tokens;
  SparseFeatures features;
};

struct Query {
  std::string id;
  std::string text;
  std::vector<TermId> tokens;
  SparseFeatures features;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  /// Builds the term table from sorted unique terms.
  explicit Vocabulary(std::vector<std::string> terms);

  std::size_t size() const { return terms_.size(); }
  const std::string& term(TermId id) const { return terms_.at(id); }
  std::optional<TermId> find(std::string_view term) const;
  const std::vector<std::string>& terms() const { return terms_; }

 private:
  std::vector<std::string> terms_;
  std::unordered_map<std::string, TermId> index_;
};

/// Documents plus training and (optional) held-out queries over one
/// vocabulary. Immutable once built.
class Corpus {
 public:
  static Corpus from_records(const std::vector<TextRecord>& docs,
                             const std::vector<TextRecord>& queries,
                             const std::vector<TextRecord>& dev_queries = {});

  const std::vector<Document>& docs() const { return docs_; }
  const std::vector<Query>& queries() const { return queries_; }
  const std::vector<Query>& dev_queries() const { return dev_queries_; }
  const Vocabulary& vocabulary() const { return vocab_; }

  std::optional<std::size_t> find_doc(std::string_view id) const;
  const Document& doc(std::string_view id) const;
  /// Looks up a query in either split.
  const Query* find_query(std::string_view id) const;

  std::vector<TextRecord> doc_records() const;
  std::vector<TextRecord> query_records() const;
  std::vector<TextRecord> dev_query_records() const;

 private:
  Vocabulary vocab_;
  std::vector<Document> docs_;
  std::vector<Query> queries_;
  std::vector<Query> dev_queries_;
  std::unordered_map<std::string, std::size_t> doc_index_;
  std::unordered_map<std::string, std::pair<int, std::size_t>> query_index_;
};

/// Reads `docs.jsonl`, `queries.jsonl` and, when present, `dev_queries.jsonl`.
Corpus load_corpus(const std::filesystem::path& dir);
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

std::vector<TextRecord> read_jsonl_records(const std::filesystem::path& path);
void write_jsonl_records(const std::filesystem::path& path, const std::vector<TextRecord>& records);

/// Graded relevance labels. Every read goes through an access counter so
/// callers can assert that a code path never consults labels.
class Judgments {
 public:
  Judgments() = default;
  Judgments(const Judgments& other);
  Judgments& operator=(const Judgments& other);

  void set(const std::string& query_id, const std::string& doc_id, int grade);

  int grade(std::string_view query_id, std::string_view doc_id) const;
  /// Docs with grade >= 1, in doc_id order.
  std::vector<std::string> relevant(std::string_view query_id) const;
  /// All judged docs of a query (any grade); null when the query is unjudged.
  const std::map<std::string, int, std::less<>>* judged(std::string_view query_id) const;
  std::vector<std::string> query_ids() const;
  std::size_t size() const;

  std::size_t reads() const { return reads_.load(); }
  void reset_reads() { reads_ = 0; }

  void validate(const Corpus& corpus) const;

 private:
  std::map<std::string, std::map<std::string, int, std::less<>>, std::less<>> labels_;
  mutable std::atomic<std::size_t> reads_{0};
};

Judgments load_qrels(const std::filesystem::path& path);
void save_qrels(const Judgments& judgments, const std::filesystem::path& path);

struct RunEntry {
  std::string doc_id;
  int rank = 0;
  double score = 0.0;
  bool operator==(const RunEntry&) const = default;
};

/// Ranked list for one query. Ranks are 1..n, scores non-increasing.
struct RunList {
  std::string query_id;
  std::vector<RunEntry> entries;

  void validate() const;
  bool operator==(const RunList&) const = default;
};

/// Builds a RunList from (doc_id, score) sorted by score descending, ties by
/// doc_id ascending; ranks are assigned 1..n.
RunList make_run(std::string query_id, std::vector<std::pair<std::string, double>> scored);

/// TREC six-column format; queries keep their first-appearance order.
std::vector<RunList> load_run(const std::filesystem::path& path);
std::vector<RunList> parse_run(std::string_view content);
void save_run(const std::filesystem::path& path, const std::vector<RunList>& runs,
              std::string_view tag = "distillrank");
std::string format_run(const std::vector<RunList>& runs, std::string_view tag = "distillrank");

}  // namespace distillrank
