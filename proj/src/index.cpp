#include "distillrank/index.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>

#include "distillrank/parallel.hpp"

namespace distillrank {

namespace {

constexpr std::array<char, 4> kIndexMagic{'D', 'R', 'I', 'X'};
constexpr std::uint32_t kIndexVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError("index file truncated");
  return v;
}

}  // namespace

Index::Index(SimilarityMode mode, std::uint64_t fingerprint, std::vector<std::string> doc_ids,
             std::vector<Matrix> representations)
    : mode_(mode), fingerprint_(fingerprint), doc_ids_(std::move(doc_ids)) {
  if (doc_ids_.empty()) throw ValidationError("index: corpus is empty");
  if (representations.size() != doc_ids_.size()) throw ValidationError("index: one representation per document");
  if (mode_ == SimilarityMode::maxsim) {
    tokens_ = std::move(representations);
  } else {
    pooled_.resize(static_cast<Eigen::Index>(doc_ids_.size()), representations.front().cols());
    for (std::size_t i = 0; i < representations.size(); ++i) {
      if (representations[i].rows() != 1 || representations[i].cols() != pooled_.cols())
        throw ValidationError("index: pooled representation has wrong shape");
      pooled_.row(static_cast<Eigen::Index>(i)) = representations[i].row(0);
    }
  }
  std::vector<std::uint32_t> by_id(doc_ids_.size());
  std::iota(by_id.begin(), by_id.end(), 0u);
  std::sort(by_id.begin(), by_id.end(), [&](auto a, auto b) { return doc_ids_[a] < doc_ids_[b]; });
  id_order_.resize(doc_ids_.size());
  for (std::size_t pos = 0; pos < by_id.size(); ++pos) id_order_[by_id[pos]] = static_cast<std::uint32_t>(pos);
}

Eigen::VectorXd Index::score_all(const Representation<double>& query) const {
  Eigen::VectorXd scores(static_cast<Eigen::Index>(size()));
  if (mode_ == SimilarityMode::maxsim) {
    Representation<double> doc;
    for (std::size_t i = 0; i < size(); ++i) {
      doc.vectors = tokens_[i];
      scores(static_cast<Eigen::Index>(i)) = similarity(mode_, query, doc);
    }
    return scores;
  }
  if (query.vectors.rows() != 1 || query.vectors.cols() != pooled_.cols())
    throw ValidationError("index: query representation has wrong shape");
  for (Eigen::Index i = 0; i < pooled_.rows(); ++i) scores(i) = query.vectors.row(0).dot(pooled_.row(i));
  return scores;
}

Index build_index(const EncoderModel& model, const Corpus& corpus, std::size_t workers) {
  const auto& docs = corpus.docs();
  if (docs.empty()) throw ValidationError("build_index: corpus is empty");
  std::vector<Index::Matrix> reps(docs.size());
  parallel_for(docs.size(), workers, [&](std::size_t i) { reps[i] = encode_doc(model, docs[i]).vectors; });
  std::vector<std::string> ids;
  ids.reserve(docs.size());
  for (const auto& d : docs) ids.push_back(d.id);
  return Index(model.mode(), model.fingerprint(), std::move(ids), std::move(reps));
}

RunList retrieve(const Index& index, const EncoderModel& model, const Query& query, std::size_t k) {
  if (k == 0) throw ValidationError("retrieve: k must be >= 1");
  if (index.fingerprint() != model.fingerprint() || index.mode() != model.mode())
    throw StaleIndexError("index fingerprint does not match the model; rebuild the index");
  const auto scores = index.score_all(encode_query(model, query));
  const auto& order = index.id_order();
  std::vector<std::uint32_t> ranked(index.size());
  std::iota(ranked.begin(), ranked.end(), 0u);
  const auto take = std::min(k, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      if (scores(a) != scores(b)) return scores(a) > scores(b);
                      return order[a] < order[b];
                    });
  RunList run{query.id, {}};
  run.entries.reserve(take);
  for (std::size_t r = 0; r < take; ++r)
    run.entries.push_back({index.doc_ids()[ranked[r]], static_cast<int>(r + 1), scores(ranked[r])});
  return run;
}

std::vector<RunList> retrieve_all(const Index& index, const EncoderModel& model, std::span<const Query> queries,
                                  std::size_t k, std::size_t workers) {
  std::vector<RunList> runs(queries.size());
  parallel_for(queries.size(), workers, [&](std::size_t i) { runs[i] = retrieve(index, model, queries[i], k); });
  return runs;
}

void save_index(const Index& index, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kIndexMagic.data(), kIndexMagic.size());
  put(out, kIndexVersion);
  put(out, static_cast<std::uint32_t>(index.mode()));
  const auto dim = index.mode() == SimilarityMode::maxsim ? index.token_matrices().front().cols() : index.pooled().cols();
  put(out, static_cast<std::uint64_t>(dim));
  put(out, static_cast<std::uint64_t>(index.size()));
  put(out, index.fingerprint());
  for (const auto& id : index.doc_ids()) {
    put(out, static_cast<std::uint32_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
  }
  auto write = [&](const Index::Matrix& m) {
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  };
  if (index.mode() == SimilarityMode::maxsim) {
    for (const auto& m : index.token_matrices()) {
      put(out, static_cast<std::uint32_t>(m.rows()));
      write(m);
    }
  } else {
    write(index.pooled());
  }
  if (!out) throw Error("failed writing " + path.string());
}

Index load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kIndexMagic) throw ParseError("not an index file");
  if (get<std::uint32_t>(in) != kIndexVersion) throw ParseError("unsupported index version");
  const auto mode_raw = get<std::uint32_t>(in);
  if (mode_raw > static_cast<std::uint32_t>(SimilarityMode::maxsim)) throw ParseError("index: bad similarity mode");
  const auto mode = static_cast<SimilarityMode>(mode_raw);
  const auto dim = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  const auto n = get<std::uint64_t>(in);
  const auto fingerprint = get<std::uint64_t>(in);
  std::vector<std::string> ids(n);
  for (auto& id : ids) {
    id.resize(get<std::uint32_t>(in));
    if (!in.read(id.data(), static_cast<std::streamsize>(id.size()))) throw ParseError("index file truncated");
  }
  auto read = [&](Eigen::Index rows) {
    Index::Matrix m(rows, dim);
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size())))
      throw ParseError("index file truncated");
    return m;
  };
  std::vector<Index::Matrix> reps;
  reps.reserve(n);
  if (mode == SimilarityMode::maxsim) {
    for (std::uint64_t i = 0; i < n; ++i) reps.push_back(read(get<std::uint32_t>(in)));
  } else {
    const auto all = read(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < all.rows(); ++i) reps.emplace_back(all.row(i));
  }
  return Index(mode, fingerprint, std::move(ids), std::move(reps));
}

}  // namespace distillrank
