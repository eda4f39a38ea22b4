// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "cpvq/rng.hpp"
#include "cpvq/tensor.hpp"

namespace cpvq {

/// Length of the quantized-latent prefix handed to the flow model.
inline constexpr std::size_t kFeatureDim = 32;

/// Class ids are 0-based: codevector k belongs to class k / per_class.
class Codebook {
 public:
  Codebook() = default;
  /// Rows drawn i.i.d. uniform in [-1/per_class, 1/per_class]; usage starts at 0.
  Codebook(int num_classes, int per_class, std::size_t dim, Rng& rng, double decay = 0.99, double eps_reinit = 1e-3);
  /// Wraps explicit rows, e.g. loaded from a bundle or built by a test.
  Codebook(int num_classes, int per_class, std::size_t dim, std::vector<double> rows, double decay = 0.99,
           double eps_reinit = 1e-3);

  int num_classes() const { return num_classes_; }
  int per_class() const { return per_class_; }
  std::size_t size() const { return static_cast<std::size_t>(num_classes_) * static_cast<std::size_t>(per_class_); }
  std::size_t dim() const { return dim_; }
  double decay() const { return decay_; }
  double eps_reinit() const { return eps_reinit_; }

  /// Learnable (size, dim) matrix.
  Tensor& vectors() { return vectors_; }
  const Tensor& vectors() const { return vectors_; }
  std::span<const double> row(std::size_t k) const;

  std::vector<double>& usage() { return usage_; }
  const std::vector<double>& usage() const { return usage_; }

  int class_of(std::size_t k) const;
  std::size_t class_begin(int class_id) const;
  std::size_t class_end(int class_id) const;

  /// Fraction of codevectors whose running usage is at least 1/(2 size()),
  /// half of what each would hold under perfectly uniform assignment.
  double active_fraction() const;

 private:
  void validate() const;

  int num_classes_ = 0;
  int per_class_ = 0;
  std::size_t dim_ = 0;
  double decay_ = 0.99;
  double eps_reinit_ = 1e-3;
  Tensor vectors_;
  std::vector<double> usage_;
};

/// 1 iff codevector k lies in the block of class c. Throws on out-of-range input.
int indicator(const Codebook& book, int class_id, std::size_t k);

struct QuantizationResult {
  std::size_t index = 0;
  std::vector<double> z_q;
};

/// Nearest codevector over the whole book; ties go to the lowest index.
QuantizationResult quantize(std::span<const double> encoding, const Codebook& book);
/// Nearest codevector inside the block of `class_id`. The search is restricted
/// to the block rather than comparing against zeroed out-of-class rows.
QuantizationResult quantize_class(std::span<const double> encoding, const Codebook& book, int class_id);

/// Forward returns z_q exactly; backward hands the incoming gradient to
/// `encoding` unchanged and nothing to z_q.
Tensor straight_through(const Tensor& encoding, const Tensor& z_q);

struct VqLoss {
  Tensor codebook;    ///< mean_b ||sg(encoding) - z_q||^2
  Tensor commitment;  ///< mean_b ||encoding - sg(z_q)||^2
};
VqLoss vq_loss_terms(const Tensor& encoding, const Tensor& z_q);

struct QuantizedBatch {
  std::vector<std::size_t> indices;
  Tensor z_q;               ///< (B, dim); differentiable w.r.t. the codebook rows
  Tensor straight_through;  ///< (B, dim); differentiable w.r.t. the encoding
  VqLoss loss;
};

/// Quantizes each row of `encodings` (B, dim). With `classes`, row b is
/// restricted to the block of classes[b]; without, the whole book is searched.
QuantizedBatch quantize_batch(const Tensor& encodings, const Codebook& book, const std::vector<int>* classes);

/// U <- decay U + ((1 - decay)/B) u with u the per-code assignment counts.
/// Returns u.
std::vector<std::size_t> update_usage(Codebook& book, std::span<const std::size_t> assignments, std::size_t batch_size);

/// For each codevector, the batch row nearest to it among rows of the same
/// class (all rows when `classes` is null); nullopt when no row is eligible.
std::vector<std::optional<std::size_t>> select_anchors(const Codebook& book, std::span<const double> encodings,
                                                       std::size_t batch_size, const std::vector<int>* classes);

/// alpha_k = exp(-10 U_k per_class / (1 - decay) - eps).
double reinit_alpha(const Codebook& book, std::size_t k);

/// e_k <- (1 - alpha_k) e_k + alpha_k anchor_k for every code with an anchor.
void reinit_step(Codebook& book, std::span<const std::optional<std::size_t>> anchors, std::span<const double> encodings);

/// First kFeatureDim entries. Throws when the input is shorter.
std::vector<double> truncate_feature(std::span<const double> z_q);

/// argmax over the block of `class_id` of dot(F, prefix(e_k)); with
/// `normalized`, both sides are L2-normalized first (cosine similarity).
QuantizationResult inverse_lookup(std::span<const double> feature, const Codebook& book, int class_id,
                                  bool normalized = false);
/// Same search over the whole book, for models trained without partitions.
QuantizationResult inverse_lookup_any(std::span<const double> feature, const Codebook& book, bool normalized = false);

}  // namespace cpvq
