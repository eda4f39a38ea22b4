// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#include "cpvq/codebook.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace cpvq {

namespace {

double dist_sq(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = a[i] - b[i];
    d += r * r;
  }
  return d;
}

void require_finite(std::span<const double> v, const char* op) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(op) + ": non-finite input");
}

QuantizationResult nearest_in_range(std::span<const double> encoding, const Codebook& book, std::size_t begin,
                                    std::size_t end) {
  if (encoding.size() != book.dim())
    throw std::invalid_argument("quantize: encoding length " + std::to_string(encoding.size()) +
                                " does not match codebook dim " + std::to_string(book.dim()));
  require_finite(encoding, "quantize");
  std::size_t best = begin;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = begin; k < end; ++k) {
    const double d = dist_sq(encoding, book.row(k));
    if (d < best_d) best_d = d, best = k;
  }
  const auto row = book.row(best);
  return {best, std::vector<double>(row.begin(), row.end())};
}

QuantizationResult lookup_in_range(std::span<const double> feature, const Codebook& book, std::size_t begin,
                                   std::size_t end, bool normalized) {
  if (feature.size() != kFeatureDim)
    throw std::invalid_argument("inverse_lookup: feature must have length " + std::to_string(kFeatureDim));
  require_finite(feature, "inverse_lookup");
  std::size_t best = begin;
  double best_s = -std::numeric_limits<double>::infinity();
  for (std::size_t k = begin; k < end; ++k) {
    const auto row = book.row(k);
    double dot = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < kFeatureDim; ++i) {
      dot += feature[i] * row[i];
      norm += row[i] * row[i];
    }
    // The feature norm is shared by every candidate, so only the codevector
    // side needs dividing out for the cosine ranking.
    const double s = normalized ? (norm > 0.0 ? dot / std::sqrt(norm) : 0.0) : dot;
    if (s > best_s) best_s = s, best = k;
  }
  const auto row = book.row(best);
  return {best, std::vector<double>(row.begin(), row.end())};
}

}  // namespace

Codebook::Codebook(int num_classes, int per_class, std::size_t dim, Rng& rng, double decay, double eps_reinit)
    : num_classes_(num_classes), per_class_(per_class), dim_(dim), decay_(decay), eps_reinit_(eps_reinit) {
  validate();
  const double bound = 1.0 / per_class;
  std::vector<double> rows(size() * dim);
  for (auto& v : rows) v = rng.uniform(-bound, bound);
  vectors_ = Tensor::from({size(), dim}, std::move(rows), true);
  usage_.assign(size(), 0.0);
}

Codebook::Codebook(int num_classes, int per_class, std::size_t dim, std::vector<double> rows, double decay,
                   double eps_reinit)
    : num_classes_(num_classes), per_class_(per_class), dim_(dim), decay_(decay), eps_reinit_(eps_reinit) {
  validate();
  if (rows.size() != size() * dim) throw std::invalid_argument("Codebook: row data does not match size x dim");
  vectors_ = Tensor::from({size(), dim}, std::move(rows), true);
  usage_.assign(size(), 0.0);
}

void Codebook::validate() const {
  if (num_classes_ < 1 || per_class_ < 1 || dim_ == 0)
    throw std::invalid_argument("Codebook: class count, codes per class and dim must be positive");
  if (!(decay_ >= 0.0 && decay_ < 1.0)) throw std::invalid_argument("Codebook: decay must lie in [0, 1)");
}

std::span<const double> Codebook::row(std::size_t k) const {
  if (k >= size()) throw std::out_of_range("Codebook::row: index " + std::to_string(k) + " out of range");
  return vectors_.data().subspan(k * dim_, dim_);
}

int Codebook::class_of(std::size_t k) const {
  if (k >= size()) throw std::out_of_range("Codebook::class_of: index " + std::to_string(k) + " out of range");
  return static_cast<int>(k / static_cast<std::size_t>(per_class_));
}

std::size_t Codebook::class_begin(int class_id) const {
  if (class_id < 0 || class_id >= num_classes_)
    throw std::out_of_range("Codebook: class " + std::to_string(class_id) + " out of range");
  return static_cast<std::size_t>(class_id) * static_cast<std::size_t>(per_class_);
}

std::size_t Codebook::class_end(int class_id) const { return class_begin(class_id) + static_cast<std::size_t>(per_class_); }

double Codebook::active_fraction() const {
  const double threshold = 1.0 / (2.0 * static_cast<double>(size()));
  std::size_t active = 0;
  for (double u : usage_) active += u >= threshold;
  return static_cast<double>(active) / static_cast<double>(size());
}

int indicator(const Codebook& book, int class_id, std::size_t k) {
  const std::size_t begin = book.class_begin(class_id);
  if (k >= book.size()) throw std::out_of_range("indicator: code index " + std::to_string(k) + " out of range");
  return k >= begin && k < begin + static_cast<std::size_t>(book.per_class()) ? 1 : 0;
}

QuantizationResult quantize(std::span<const double> encoding, const Codebook& book) {
  return nearest_in_range(encoding, book, 0, book.size());
}

QuantizationResult quantize_class(std::span<const double> encoding, const Codebook& book, int class_id) {
  return nearest_in_range(encoding, book, book.class_begin(class_id), book.class_end(class_id));
}

Tensor straight_through(const Tensor& encoding, const Tensor& z_q) {
  if (encoding.shape() != z_q.shape())
    throw std::invalid_argument("straight_through: shape mismatch " + shape_str(encoding.shape()) + " vs " +
                                shape_str(z_q.shape()));
  std::vector<double> values(z_q.data().begin(), z_q.data().end());
  return record_op(OpKind::custom, {encoding}, encoding.shape(), std::move(values),
                   [](std::span<const double> g, std::span<const double>, std::span<std::vector<double>*> gin) {
                     if (!gin[0]) return;
                     for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
                   });
}

VqLoss vq_loss_terms(const Tensor& encoding, const Tensor& z_q) {
  if (encoding.shape() != z_q.shape() || encoding.rank() != 2)
    throw std::invalid_argument("vq_loss_terms: shape mismatch " + shape_str(encoding.shape()) + " vs " +
                                shape_str(z_q.shape()));
  const double per_item = 1.0 / static_cast<double>(encoding.dim(0));
  VqLoss loss;
  loss.codebook = scale(sum_all(square(sub(stop_gradient(encoding), z_q))), per_item);
  loss.commitment = scale(sum_all(square(sub(encoding, stop_gradient(z_q)))), per_item);
  return loss;
}

QuantizedBatch quantize_batch(const Tensor& encodings, const Codebook& book, const std::vector<int>* classes) {
  if (encodings.rank() != 2 || encodings.dim(1) != book.dim())
    throw std::invalid_argument("quantize_batch: expected (B, " + std::to_string(book.dim()) + ") encodings, got " +
                                shape_str(encodings.shape()));
  const std::size_t batch = encodings.dim(0);
  if (classes && classes->size() != batch) throw std::invalid_argument("quantize_batch: one class per row required");
  QuantizedBatch out;
  out.indices.resize(batch);
  std::vector<double> one_hot(batch * book.size(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto enc = encodings.data().subspan(b * book.dim(), book.dim());
    out.indices[b] = classes ? quantize_class(enc, book, (*classes)[b]).index : quantize(enc, book).index;
    one_hot[b * book.size() + out.indices[b]] = 1.0;
  }
  // Row selection as a product, so the codebook receives its gradient
  // through matmul.
  out.z_q = matmul(Tensor::from({batch, book.size()}, std::move(one_hot)), book.vectors());
  out.straight_through = straight_through(encodings, out.z_q);
  out.loss = vq_loss_terms(encodings, out.z_q);
  return out;
}

std::vector<std::size_t> update_usage(Codebook& book, std::span<const std::size_t> assignments, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("update_usage: batch size must be positive");
  std::vector<std::size_t> counts(book.size(), 0);
  for (std::size_t k : assignments) {
    if (k >= book.size()) throw std::out_of_range("update_usage: assignment out of range");
    ++counts[k];
  }
  const double gain = (1.0 - book.decay()) / static_cast<double>(batch_size);
  auto& usage = book.usage();
  for (std::size_t k = 0; k < usage.size(); ++k) usage[k] = book.decay() * usage[k] + gain * static_cast<double>(counts[k]);
  return counts;
}

std::vector<std::optional<std::size_t>> select_anchors(const Codebook& book, std::span<const double> encodings,
                                                       std::size_t batch_size, const std::vector<int>* classes) {
  if (batch_size == 0 || encodings.size() != batch_size * book.dim())
    throw std::invalid_argument("select_anchors: encodings must be a nonempty (B, dim) block");
  if (classes && classes->size() != batch_size) throw std::invalid_argument("select_anchors: one class per row required");
  std::vector<std::optional<std::size_t>> anchors(book.size());
  for (std::size_t k = 0; k < book.size(); ++k) {
    const int c = book.class_of(k);
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < batch_size; ++b) {
      if (classes && (*classes)[b] != c) continue;
      const double d = dist_sq(encodings.subspan(b * book.dim(), book.dim()), book.row(k));
      if (d < best_d) best_d = d, anchors[k] = b;
    }
  }
  return anchors;
}

double reinit_alpha(const Codebook& book, std::size_t k) {
  return std::exp(-10.0 * book.usage().at(k) * book.per_class() / (1.0 - book.decay()) - book.eps_reinit());
}

void reinit_step(Codebook& book, std::span<const std::optional<std::size_t>> anchors, std::span<const double> encodings) {
  if (anchors.size() != book.size()) throw std::invalid_argument("reinit_step: one anchor slot per codevector required");
  auto rows = book.vectors().mutable_data();
  const std::size_t dim = book.dim();
  for (std::size_t k = 0; k < book.size(); ++k) {
    if (!anchors[k]) continue;
    const double alpha = reinit_alpha(book, k);
    const std::size_t b = *anchors[k];
    if ((b + 1) * dim > encodings.size()) throw std::out_of_range("reinit_step: anchor row out of range");
    for (std::size_t i = 0; i < dim; ++i) {
      double& e = rows[k * dim + i];
      e = (1.0 - alpha) * e + alpha * encodings[b * dim + i];
    }
  }
}

std::vector<double> truncate_feature(std::span<const double> z_q) {
  if (z_q.size() < kFeatureDim)
    throw std::invalid_argument("truncate_feature: input of length " + std::to_string(z_q.size()) + " is shorter than " +
                                std::to_string(kFeatureDim));
  return {z_q.begin(), z_q.begin() + kFeatureDim};
}

QuantizationResult inverse_lookup(std::span<const double> feature, const Codebook& book, int class_id, bool normalized) {
  return lookup_in_range(feature, book, book.class_begin(class_id), book.class_end(class_id), normalized);
}

QuantizationResult inverse_lookup_any(std::span<const double> feature, const Codebook& book, bool normalized) {
  return lookup_in_range(feature, book, 0, book.size(), normalized);
}

}  // namespace cpvq
