#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "distillrank/corpus.hpp"
#include "distillrank/error.hpp"
#include "distillrank/hashing.hpp"

namespace distillrank {

enum class SimilarityMode : std::uint32_t { dot = 0, cosine = 1, maxsim = 2 };

std::string_view to_string(SimilarityMode mode);
SimilarityMode parse_similarity(std::string_view name);

struct EncoderOptions {
  SimilarityMode mode = SimilarityMode::dot;
  Eigen::Index dim = 32;
  bool shared = true;  // one embedding table for both sides
  std::uint64_t seed = 0;
};

enum class Side { query, doc };

/// Dual encoder over term-count features: an embedding table per side (or a
/// single shared one). Pooled modes sum rows weighted by term counts; maxsim
/// keeps one row per token.
template <typename Scalar>
class BasicEncoderModel {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  BasicEncoderModel() = default;

  /// Entries drawn i.i.d. uniform in [-0.5, 0.5] / sqrt(dim).
  BasicEncoderModel(std::size_t vocab_size, EncoderOptions options) : options_(options) {
    if (options.dim <= 0) throw ValidationError("encoder dim must be positive");
    if (vocab_size == 0) throw ValidationError("encoder vocabulary is empty");
    Rng rng(options.seed);
    std::uniform_real_distribution<double> unit(-0.5, 0.5);
    const double scale = 1.0 / std::sqrt(static_cast<double>(options.dim));
    auto init = [&](Matrix& table) {
      table.resize(static_cast<Eigen::Index>(vocab_size), options.dim);
      for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = static_cast<Scalar>(unit(rng) * scale);
    };
    init(query_);
    if (!options.shared) init(doc_);
  }

  BasicEncoderModel(EncoderOptions options, Matrix query_table, Matrix doc_table = {})
      : options_(options), query_(std::move(query_table)), doc_(std::move(doc_table)) {
    options_.dim = query_.cols();
    if (options_.shared != (doc_.size() == 0)) throw ValidationError("encoder: shared flag disagrees with tables");
    if (!options_.shared && (doc_.rows() != query_.rows() || doc_.cols() != query_.cols()))
      throw ValidationError("encoder: query and doc tables differ in shape");
  }

  const EncoderOptions& options() const { return options_; }
  SimilarityMode mode() const { return options_.mode; }
  Eigen::Index dim() const { return options_.dim; }
  std::size_t vocab_size() const { return static_cast<std::size_t>(query_.rows()); }
  bool shared() const { return options_.shared; }

  Matrix& table(Side side) { return side == Side::doc && !options_.shared ? doc_ : query_; }
  const Matrix& table(Side side) const { return side == Side::doc && !options_.shared ? doc_ : query_; }
  Matrix& query_table() { return query_; }
  const Matrix& query_table() const { return query_; }
  Matrix& doc_table() { return table(Side::doc); }
  const Matrix& doc_table() const { return table(Side::doc); }

  /// Hash of mode, shape and every parameter bit.
  std::uint64_t fingerprint() const {
    Fnv1a h;
    h.value(static_cast<std::uint32_t>(options_.mode)).value(static_cast<std::int64_t>(options_.dim));
    h.value(static_cast<std::uint8_t>(options_.shared)).value(static_cast<std::int64_t>(query_.rows()));
    h.bytes(query_.data(), sizeof(Scalar) * static_cast<std::size_t>(query_.size()));
    h.bytes(doc_.data(), sizeof(Scalar) * static_cast<std::size_t>(doc_.size()));
    return h.digest();
  }

  bool all_finite() const { return query_.allFinite() && doc_.allFinite(); }

  friend bool operator==(const BasicEncoderModel& a, const BasicEncoderModel& b) {
    return a.options_.mode == b.options_.mode && a.options_.shared == b.options_.shared &&
           a.options_.seed == b.options_.seed && a.query_ == b.query_ && a.doc_ == b.doc_;
  }

 private:
  EncoderOptions options_;
  Matrix query_;
  Matrix doc_;  // empty when shared
};

using EncoderModel = BasicEncoderModel<double>;

/// One row for pooled modes, one row per token for maxsim.
template <typename Scalar>
struct Representation {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> vectors;
};

/// Parameter-shaped accumulator. `count` tracks how many contributions were
/// added since the last reset.
template <typename Scalar>
struct BasicGradient {
  using Matrix = typename BasicEncoderModel<Scalar>::Matrix;

  Matrix query;
  Matrix doc;  // empty when the model shares tables
  std::size_t count = 0;

  BasicGradient() = default;
  explicit BasicGradient(const BasicEncoderModel<Scalar>& model)
      : query(Matrix::Zero(model.query_table().rows(), model.dim())),
        doc(model.shared() ? Matrix() : Matrix::Zero(model.query_table().rows(), model.dim())) {}

  Matrix& table(Side side) { return side == Side::doc && doc.size() ? doc : query; }

  void reset() {
    query.setZero();
    doc.setZero();
    count = 0;
  }

  BasicGradient& operator+=(const BasicGradient& other) {
    query += other.query;
    doc += other.doc;
    count += other.count;
    return *this;
  }

  /// this += weight * other
  void add_scaled(const BasicGradient& other, Scalar weight) {
    query += weight * other.query;
    doc += weight * other.doc;
    count += other.count;
  }

  bool all_finite() const { return query.allFinite() && doc.allFinite(); }
  bool is_zero() const { return query.isZero(0) && doc.isZero(0); }
};

using Gradient = BasicGradient<double>;

namespace detail {

template <typename Scalar, typename Item>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> pool(const typename BasicEncoderModel<Scalar>::Matrix& table,
                                               const Item& item) {
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> v = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>::Zero(table.cols());
  for (const auto& tc : item.features) {
    if (tc.term >= table.rows()) throw ValidationError("term id outside encoder vocabulary in '" + item.id + "'");
    v.noalias() += static_cast<Scalar>(tc.count) * table.row(tc.term);
  }
  return v;
}

template <typename Scalar, typename Item>
Representation<Scalar> encode(const BasicEncoderModel<Scalar>& model, const Item& item, Side side) {
  if (item.features.empty()) throw ValidationError("cannot encode '" + item.id + "': no features");
  const auto& table = model.table(side);
  Representation<Scalar> rep;
  if (model.mode() == SimilarityMode::maxsim) {
    rep.vectors.resize(static_cast<Eigen::Index>(item.tokens.size()), model.dim());
    for (std::size_t i = 0; i < item.tokens.size(); ++i) {
      if (item.tokens[i] >= table.rows()) throw ValidationError("term id outside encoder vocabulary in '" + item.id + "'");
      rep.vectors.row(static_cast<Eigen::Index>(i)) = table.row(item.tokens[i]);
    }
    return rep;
  }
  rep.vectors = pool<Scalar>(table, item);
  if (model.mode() == SimilarityMode::cosine) {
    const Scalar norm = rep.vectors.norm();
    if (!(norm > Scalar(0))) throw NumericalError("cosine encoding of '" + item.id + "' has zero norm");
    rep.vectors /= norm;
  }
  return rep;
}

/// Index of the doc token maximizing the dot product with `q`; lowest index on ties.
template <typename Scalar, typename QRow, typename DocMatrix>
Eigen::Index argmax_token(const QRow& q, const DocMatrix& doc, Scalar& best) {
  Eigen::Index arg = 0;
  best = q.dot(doc.row(0));
  for (Eigen::Index b = 1; b < doc.rows(); ++b) {
    const Scalar s = q.dot(doc.row(b));
    if (s > best) {
      best = s;
      arg = b;
    }
  }
  return arg;
}

}  // namespace detail

template <typename Scalar>
Representation<Scalar> encode_query(const BasicEncoderModel<Scalar>& model, const Query& query) {
  return detail::encode(model, query, Side::query);
}

template <typename Scalar>
Representation<Scalar> encode_doc(const BasicEncoderModel<Scalar>& model, const Document& doc) {
  return detail::encode(model, doc, Side::doc);
}

/// dot: inner product; cosine: inner product of unit vectors; maxsim: sum over
/// query tokens of the best token-level dot product against the document.
template <typename Scalar>
Scalar similarity(SimilarityMode mode, const Representation<Scalar>& q, const Representation<Scalar>& d) {
  if (q.vectors.cols() != d.vectors.cols())
    throw ValidationError("similarity: dimension mismatch (" + std::to_string(q.vectors.cols()) + " vs " +
                          std::to_string(d.vectors.cols()) + ")");
  if (mode != SimilarityMode::maxsim) {
    if (q.vectors.rows() != 1 || d.vectors.rows() != 1)
      throw ValidationError("similarity: pooled modes expect single-vector representations");
    return q.vectors.row(0).dot(d.vectors.row(0));
  }
  if (q.vectors.rows() == 0 || d.vectors.rows() == 0) throw ValidationError("maxsim: empty token matrix");
  Scalar total(0);
  for (Eigen::Index a = 0; a < q.vectors.rows(); ++a) {
    Scalar best;
    detail::argmax_token(q.vectors.row(a), d.vectors, best);
    total += best;
  }
  return total;
}

template <typename Scalar>
Scalar similarity(const BasicEncoderModel<Scalar>& model, const Query& q, const Document& d) {
  return similarity(model.mode(), encode_query(model, q), encode_doc(model, d));
}

/// grad += upstream * d s(q, d) / d theta.
template <typename Scalar>
void accumulate_gradient(const BasicEncoderModel<Scalar>& model, const Query& q, const Document& d, Scalar upstream,
                         BasicGradient<Scalar>& grad) {
  using std::isfinite;
  if (!isfinite(upstream)) throw NumericalError("backward: non-finite upstream gradient");
  ++grad.count;
  if (upstream == Scalar(0)) return;
  auto& gq = grad.table(Side::query);
  auto& gd = grad.table(Side::doc);

  switch (model.mode()) {
    case SimilarityMode::dot: {
      const auto qv = detail::pool<Scalar>(model.query_table(), q);
      const auto dv = detail::pool<Scalar>(model.doc_table(), d);
      for (const auto& tc : q.features) gq.row(tc.term) += (upstream * static_cast<Scalar>(tc.count)) * dv;
      for (const auto& tc : d.features) gd.row(tc.term) += (upstream * static_cast<Scalar>(tc.count)) * qv;
      return;
    }
    case SimilarityMode::cosine: {
      const auto qv = detail::pool<Scalar>(model.query_table(), q);
      const auto dv = detail::pool<Scalar>(model.doc_table(), d);
      const Scalar qn = qv.norm(), dn = dv.norm();
      if (!(qn > Scalar(0)) || !(dn > Scalar(0))) throw NumericalError("cosine backward: zero-norm encoding");
      const auto qh = (qv / qn).eval();
      const auto dh = (dv / dn).eval();
      const Scalar s = qh.dot(dh);
      const auto dq = ((dh - s * qh) / qn).eval();
      const auto dd = ((qh - s * dh) / dn).eval();
      for (const auto& tc : q.features) gq.row(tc.term) += (upstream * static_cast<Scalar>(tc.count)) * dq;
      for (const auto& tc : d.features) gd.row(tc.term) += (upstream * static_cast<Scalar>(tc.count)) * dd;
      return;
    }
    case SimilarityMode::maxsim: {
      const auto qr = encode_query(model, q);
      const auto dr = encode_doc(model, d);
      for (Eigen::Index a = 0; a < qr.vectors.rows(); ++a) {
        Scalar best;
        const auto b = detail::argmax_token(qr.vectors.row(a), dr.vectors, best);
        gq.row(q.tokens[static_cast<std::size_t>(a)]) += upstream * dr.vectors.row(b);
        gd.row(d.tokens[static_cast<std::size_t>(b)]) += upstream * qr.vectors.row(a);
      }
      return;
    }
  }
}

template <typename Scalar>
BasicGradient<Scalar> backward(const BasicEncoderModel<Scalar>& model, const Query& q, const Document& d,
                               Scalar upstream) {
  BasicGradient<Scalar> grad(model);
  accumulate_gradient(model, q, d, upstream, grad);
  return grad;
}

/// Binary checkpoint: magic, version, mode, dim, vocab size, shared flag, seed,
/// then row-major query table and (unless shared) doc table.
void save_checkpoint(const EncoderModel& model, const std::filesystem::path& path);
EncoderModel load_checkpoint(const std::filesystem::path& path);

}  // namespace distillrank
