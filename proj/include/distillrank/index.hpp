#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "distillrank/corpus.hpp"
#include "distillrank/encoder.hpp"

namespace distillrank {

/// Exact (brute-force) index over every document of a corpus, tagged with the
/// fingerprint of the model that encoded it.
class Index {
 public:
  using Matrix = EncoderModel::Matrix;

  Index() = default;
  Index(SimilarityMode mode, std::uint64_t fingerprint, std::vector<std::string> doc_ids,
        std::vector<Matrix> representations);

  std::size_t size() const { return doc_ids_.size(); }
  SimilarityMode mode() const { return mode_; }
  std::uint64_t fingerprint() const { return fingerprint_; }
  const std::vector<std::string>& doc_ids() const { return doc_ids_; }
  /// One row per document for pooled modes.
  const Matrix& pooled() const { return pooled_; }
  /// Per-document token matrices (maxsim only).
  const std::vector<Matrix>& token_matrices() const { return tokens_; }

  /// Similarity of a query representation against every indexed document.
  Eigen::VectorXd score_all(const Representation<double>& query) const;

  /// Position of each document in doc_id order, used for tie-breaking.
  const std::vector<std::uint32_t>& id_order() const { return id_order_; }

  friend bool operator==(const Index&, const Index&) = default;

 private:
  SimilarityMode mode_ = SimilarityMode::dot;
  std::uint64_t fingerprint_ = 0;
  std::vector<std::string> doc_ids_;
  Matrix pooled_;
  std::vector<Matrix> tokens_;
  std::vector<std::uint32_t> id_order_;
};

Index build_index(const EncoderModel& model, const Corpus& corpus, std::size_t workers = 1);

/// Top min(k, |corpus|) documents by similarity descending, ties by doc_id.
/// Throws StaleIndexError if `model` is not the model that built `index`.
RunList retrieve(const Index& index, const EncoderModel& model, const Query& query, std::size_t k);

std::vector<RunList> retrieve_all(const Index& index, const EncoderModel& model, std::span<const Query> queries,
                                  std::size_t k, std::size_t workers = 1);

/// Same header layout as checkpoints, followed by the doc_id table and the
/// encoded representations.
void save_index(const Index& index, const std::filesystem::path& path);
Index load_index(const std::filesystem::path& path);

}  // namespace distillrank
