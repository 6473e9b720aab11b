#include "distillrank/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "distillrank/error.hpp"

namespace distillrank {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocabulary::Vocabulary(std::vector<std::string> terms) : terms_(std::move(terms)) {
  std::sort(terms_.begin(), terms_.end());
  terms_.erase(std::unique(terms_.begin(), terms_.end()), terms_.end());
  index_.reserve(terms_.size());
  for (std::size_t i = 0; i < terms_.size(); ++i) index_.emplace(terms_[i], static_cast<TermId>(i));
}

std::optional<TermId> Vocabulary::find(std::string_view term) const {
  const auto it = index_.find(std::string(term));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

namespace {

template <typename Item>
Item make_item(const TextRecord& record, const Vocabulary& vocab) {
  Item item;
  item.id = record.id;
  item.text = record.text;
  for (const auto& tok : tokenize(record.text)) item.tokens.push_back(*vocab.find(tok));
  std::map<TermId, std::uint32_t> counts;
  for (const TermId t : item.tokens) ++counts[t];
  item.features.reserve(counts.size());
  for (const auto& [term, count] : counts) item.features.push_back({term, count});
  return item;
}

}  // namespace

Corpus Corpus::from_records(const std::vector<TextRecord>& docs,
                            const std::vector<TextRecord>& queries,
                            const std::vector<TextRecord>& dev_queries) {
  std::set<std::string> terms;
  for (const auto* set : {&docs, &queries, &dev_queries})
    for (const auto& r : *set)
      for (auto& t : tokenize(r.text)) terms.insert(std::move(t));

  Corpus corpus;
  corpus.vocab_ = Vocabulary(std::vector<std::string>(terms.begin(), terms.end()));

  corpus.docs_.reserve(docs.size());
  for (const auto& r : docs) {
    if (corpus.doc_index_.count(r.id)) throw ValidationError("duplicate doc_id '" + r.id + "'");
    auto doc = make_item<Document>(r, corpus.vocab_);
    if (doc.tokens.empty()) throw ValidationError("document '" + r.id + "' has no tokens");
    corpus.doc_index_.emplace(r.id, corpus.docs_.size());
    corpus.docs_.push_back(std::move(doc));
  }
  auto add_queries = [&](const std::vector<TextRecord>& records, std::vector<Query>& out, int split) {
    out.reserve(records.size());
    for (const auto& r : records) {
      if (corpus.query_index_.count(r.id)) throw ValidationError("duplicate query_id '" + r.id + "'");
      corpus.query_index_.emplace(r.id, std::pair{split, out.size()});
      out.push_back(make_item<Query>(r, corpus.vocab_));
    }
  };
  add_queries(queries, corpus.queries_, 0);
  add_queries(dev_queries, corpus.dev_queries_, 1);
  return corpus;
}

std::optional<std::size_t> Corpus::find_doc(std::string_view id) const {
  const auto it = doc_index_.find(std::string(id));
  if (it == doc_index_.end()) return std::nullopt;
  return it->second;
}

const Document& Corpus::doc(std::string_view id) const {
  const auto idx = find_doc(id);
  if (!idx) throw ValidationError("unknown doc_id '" + std::string(id) + "'");
  return docs_[*idx];
}

const Query* Corpus::find_query(std::string_view id) const {
  const auto it = query_index_.find(std::string(id));
  if (it == query_index_.end()) return nullptr;
  const auto [split, idx] = it->second;
  return split == 0 ? &queries_[idx] : &dev_queries_[idx];
}

namespace {

template <typename Items>
std::vector<TextRecord> records_of(const Items& items) {
  std::vector<TextRecord> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back({item.id, item.text});
  return out;
}

}  // namespace

std::vector<TextRecord> Corpus::doc_records() const { return records_of(docs_); }
std::vector<TextRecord> Corpus::query_records() const { return records_of(queries_); }
std::vector<TextRecord> Corpus::dev_query_records() const { return records_of(dev_queries_); }

std::vector<TextRecord> read_jsonl_records(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<TextRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.filename().string() + ": " + e.what(), lineno);
    }
    if (!obj.is_object() || !obj.contains("id") || !obj.contains("text") || !obj["id"].is_string() ||
        !obj["text"].is_string())
      throw ParseError(path.filename().string() + ": expected object with string 'id' and 'text'", lineno);
    records.push_back({obj["id"].get<std::string>(), obj["text"].get<std::string>()});
  }
  return records;
}

void write_jsonl_records(const fs::path& path, const std::vector<TextRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << json{{"id", r.id}, {"text", r.text}}.dump() << '\n';
}

Corpus load_corpus(const fs::path& dir) {
  const auto dev = dir / "dev_queries.jsonl";
  return Corpus::from_records(read_jsonl_records(dir / "docs.jsonl"), read_jsonl_records(dir / "queries.jsonl"),
                              fs::exists(dev) ? read_jsonl_records(dev) : std::vector<TextRecord>{});
}

void save_corpus(const Corpus& corpus, const fs::path& dir) {
  fs::create_directories(dir);
  write_jsonl_records(dir / "docs.jsonl", corpus.doc_records());
  write_jsonl_records(dir / "queries.jsonl", corpus.query_records());
  if (!corpus.dev_queries().empty()) write_jsonl_records(dir / "dev_queries.jsonl", corpus.dev_query_records());
}

// --- Judgments -------------------------------------------------------------

Judgments::Judgments(const Judgments& other) : labels_(other.labels_) {}

Judgments& Judgments::operator=(const Judgments& other) {
  labels_ = other.labels_;
  reads_ = 0;
  return *this;
}

void Judgments::set(const std::string& query_id, const std::string& doc_id, int grade) {
  if (grade < 0) throw ValidationError("negative grade for (" + query_id + ", " + doc_id + ")");
  labels_[query_id][doc_id] = grade;
}

int Judgments::grade(std::string_view query_id, std::string_view doc_id) const {
  ++reads_;
  const auto q = labels_.find(query_id);
  if (q == labels_.end()) return 0;
  const auto d = q->second.find(doc_id);
  return d == q->second.end() ? 0 : d->second;
}

std::vector<std::string> Judgments::relevant(std::string_view query_id) const {
  ++reads_;
  std::vector<std::string> out;
  const auto q = labels_.find(query_id);
  if (q == labels_.end()) return out;
  for (const auto& [doc, g] : q->second)
    if (g >= 1) out.push_back(doc);
  return out;
}

const std::map<std::string, int, std::less<>>* Judgments::judged(std::string_view query_id) const {
  ++reads_;
  const auto q = labels_.find(query_id);
  return q == labels_.end() ? nullptr : &q->second;
}

std::vector<std::string> Judgments::query_ids() const {
  ++reads_;
  std::vector<std::string> out;
  for (const auto& [q, _] : labels_) out.push_back(q);
  return out;
}

std::size_t Judgments::size() const {
  std::size_t n = 0;
  for (const auto& [_, docs] : labels_) n += docs.size();
  return n;
}

void Judgments::validate(const Corpus& corpus) const {
  for (const auto& [q, docs] : labels_) {
    if (!corpus.find_query(q)) throw ValidationError("judgment references unknown query '" + q + "'");
    for (const auto& [d, _] : docs)
      if (!corpus.find_doc(d)) throw ValidationError("judgment references unknown doc '" + d + "'");
  }
}

Judgments load_qrels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Judgments judgments;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::string qid, iter, did, extra;
    long grade = 0;
    if (!(fields >> qid)) continue;
    if (!(fields >> iter >> did >> grade) || (fields >> extra))
      throw ParseError(path.filename().string() + ": expected 'query_id 0 doc_id grade'", lineno);
    if (grade < 0) throw ParseError(path.filename().string() + ": negative grade", lineno);
    judgments.set(qid, did, static_cast<int>(grade));
  }
  return judgments;
}

void save_qrels(const Judgments& judgments, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& q : judgments.query_ids())
    for (const auto& [d, g] : *judgments.judged(q)) out << q << " 0 " << d << ' ' << g << '\n';
}

// --- Runs -------------------------------------------------------------------

void RunList::validate() const {
  std::set<std::string_view> seen;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.rank != static_cast<int>(i) + 1)
      throw ValidationError("query '" + query_id + "': ranks are not contiguous from 1 (found rank " +
                            std::to_string(e.rank) + " at position " + std::to_string(i + 1) + ")");
    if (i > 0 && e.score > entries[i - 1].score)
      throw ValidationError("query '" + query_id + "': scores increase at rank " + std::to_string(e.rank));
    if (!seen.insert(e.doc_id).second)
      throw ValidationError("query '" + query_id + "': duplicate doc_id '" + e.doc_id + "'");
  }
}

RunList make_run(std::string query_id, std::vector<std::pair<std::string, double>> scored) {
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  RunList run{std::move(query_id), {}};
  run.entries.reserve(scored.size());
  int rank = 0;
  for (auto& [doc, score] : scored) run.entries.push_back({std::move(doc), ++rank, score});
  return run;
}

std::vector<RunList> parse_run(std::string_view content) {
  std::vector<RunList> runs;
  std::unordered_map<std::string, std::size_t> position;
  std::istringstream in{std::string(content)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream fields(line);
    std::string qid, q0, did, rank_str, score_str, tag, extra;
    if (!(fields >> qid)) continue;
    if (!(fields >> q0 >> did >> rank_str >> score_str >> tag) || (fields >> extra))
      throw ParseError("run file: expected six columns", lineno);
    RunEntry entry;
    entry.doc_id = did;
    try {
      std::size_t used = 0;
      entry.rank = std::stoi(rank_str, &used);
      if (used != rank_str.size()) throw std::invalid_argument("rank");
      entry.score = std::stod(score_str, &used);
      if (used != score_str.size()) throw std::invalid_argument("score");
    } catch (const std::logic_error&) {
      throw ParseError("run file: bad rank or score", lineno);
    }
    auto [it, inserted] = position.emplace(qid, runs.size());
    if (inserted) runs.push_back({qid, {}});
    runs[it->second].entries.push_back(std::move(entry));
  }
  for (auto& run : runs) {
    std::stable_sort(run.entries.begin(), run.entries.end(),
                     [](const RunEntry& a, const RunEntry& b) { return a.rank < b.rank; });
    run.validate();
  }
  return runs;
}

std::vector<RunList> load_run(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run(buf.str());
}

std::string format_run(const std::vector<RunList>& runs, std::string_view tag) {
  std::string out;
  char score[64];
  for (const auto& run : runs) {
    for (const auto& e : run.entries) {
      // Shortest representation that parses back to the same double.
      *std::to_chars(score, score + sizeof score - 1, e.score).ptr = '\0';
      out += run.query_id;
      out += " Q0 ";
      out += e.doc_id;
      out += ' ';
      out += std::to_string(e.rank);
      out += ' ';
      out += score;
      out += ' ';
      out += tag;
      out += '\n';
    }
  }
  return out;
}

void save_run(const fs::path& path, const std::vector<RunList>& runs, std::string_view tag) {
  for (const auto& run : runs) run.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << format_run(runs, tag);
}

}  // namespace distillrank
