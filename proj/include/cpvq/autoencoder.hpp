// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cpvq/codebook.hpp"
#include "cpvq/geometry.hpp"
#include "cpvq/nn.hpp"

namespace cpvq {

/// Ablation variants: V1 Gaussian VAE, V2 plain VQ, V3 class-partitioned
/// VQ, V4 class-partitioned VQ with running-average reinitialization.
enum class Variant { v1 = 1, v2, v3, v4 };

Variant parse_variant(std::string_view name);
std::string variant_name(Variant v);
inline bool uses_codebook(Variant v) { return v != Variant::v1; }
inline bool partitioned(Variant v) { return v == Variant::v3 || v == Variant::v4; }
inline bool uses_rau(Variant v) { return v == Variant::v4; }

struct AutoencoderConfig {
  std::size_t points = 512;
  std::size_t latent_dim = 128;
  int num_classes = kShapeKindCount;
  int per_class = 64;
  double lambda_cd = 10.0;
  double learning_rate = 1e-3;
  std::size_t batch = 32;
  std::size_t steps = 20000;
  double decay = 0.99;
  double eps_reinit = 1e-3;
  double kl_weight = 1e-3;
  std::uint64_t seed = 0;
};

/// PointNet-style encoder (shared 3-64-128-256 MLP, max over points, head to
/// latent_dim) and MLP decoder (latent_dim-256-512-3N, tanh), plus the
/// codebook for VQ variants or a log-variance head for V1.
class PointAutoencoder {
 public:
  PointAutoencoder() = default;
  PointAutoencoder(const AutoencoderConfig& config, Variant variant);

  const AutoencoderConfig& config() const { return config_; }
  Variant variant() const { return variant_; }

  /// (B, N, 3) -> (B, latent_dim). For V1 this is the posterior mean.
  Tensor encode(const Tensor& clouds) const;
  /// (B, N, 3) -> log-variance (B, latent_dim); V1 only.
  Tensor encode_logvar(const Tensor& clouds) const;
  /// (B, latent_dim) -> (B, N, 3), coordinates in [-1, 1].
  Tensor decode(const Tensor& latents) const;

  std::vector<double> encode(const PointCloud& cloud) const;
  PointCloud decode(std::span<const double> latent, int class_id = 0) const;

  /// Quantized latent of one cloud: nearest codevector in its class block
  /// for partitioned variants, over the whole book otherwise, and the
  /// posterior mean for V1.
  QuantizationResult quantize_latent(std::span<const double> encoding, int class_id) const;
  /// Full latent for a generated feature: inverse look-up for VQ variants;
  /// for V1 the feature followed by the training mean of the remaining entries.
  QuantizationResult lookup_feature(std::span<const double> feature, int class_id, bool normalized = false) const;

  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }

  std::vector<double>& latent_tail_mean() { return tail_mean_; }
  const std::vector<double>& latent_tail_mean() const { return tail_mean_; }

  /// Set once training finishes or weights are loaded.
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  /// Every learnable tensor, codebook rows last.
  std::vector<NamedTensor> parameters() const;

 private:
  Tensor trunk(const Tensor& clouds) const;

  AutoencoderConfig config_;
  Variant variant_ = Variant::v4;
  Linear enc1_, enc2_, enc3_, head_, logvar_head_;
  Linear dec1_, dec2_, dec3_;
  Codebook codebook_;
  std::vector<double> tail_mean_;
  bool trained_ = false;
};

struct AutoencoderEpoch {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double chamfer = 0.0;
  double codebook_loss = 0.0;
  double commitment_loss = 0.0;
  double kl = 0.0;
  double active_fraction = 0.0;
};

struct AutoencoderTraining {
  PointAutoencoder model;
  std::vector<AutoencoderEpoch> history;
};

/// Minimizes lambda_cd CD + codebook + commitment (VQ variants) or
/// lambda_cd CD + kl_weight KL (V1) with Adam. After each optimizer step the
/// usage statistics are updated; V4 then reinitializes codevectors toward
/// same-class batch encodings. An epoch is ceil(|dataset| / batch) steps.
AutoencoderTraining train_cpvqvae(std::span<const PointCloud> dataset, const AutoencoderConfig& config, Variant variant,
                                  const std::function<void(const AutoencoderEpoch&)>& on_epoch = {});

struct LatentRecord {
  int class_id = 0;
  std::size_t code_index = 0;
  std::vector<double> feature;  // kFeatureDim entries
};

/// Truncated quantized latent of every cloud, in input order.
std::vector<LatentRecord> build_latent_dataset(const PointAutoencoder& model, std::span<const PointCloud> clouds);

/// Mean Chamfer between each cloud and its decoded quantized latent.
double round_trip_chamfer(const PointAutoencoder& model, std::span<const PointCloud> clouds);

}  // namespace cpvq
