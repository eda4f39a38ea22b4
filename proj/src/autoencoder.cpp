// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#include "cpvq/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

namespace cpvq {

Variant parse_variant(std::string_view name) {
  if (name == "V1" || name == "v1") return Variant::v1;
  if (name == "V2" || name == "v2") return Variant::v2;
  if (name == "V3" || name == "v3") return Variant::v3;
  if (name == "V4" || name == "v4") return Variant::v4;
  throw std::invalid_argument("unknown variant '" + std::string(name) + "' (expected V1, V2, V3 or V4)");
}

std::string variant_name(Variant v) { return "V" + std::to_string(static_cast<int>(v)); }

PointAutoencoder::PointAutoencoder(const AutoencoderConfig& config, Variant variant)
    : config_(config), variant_(variant) {
  if (config.points == 0) throw std::invalid_argument("autoencoder: point count must be positive");
  if (config.latent_dim < kFeatureDim)
    throw std::invalid_argument("autoencoder: latent_dim must be at least " + std::to_string(kFeatureDim));
  Rng rng(mix_seed(config.seed, 1));
  enc1_ = Linear(3, 64, rng);
  enc2_ = Linear(64, 128, rng);
  enc3_ = Linear(128, 256, rng);
  head_ = Linear(256, config.latent_dim, rng);
  if (variant == Variant::v1) logvar_head_ = Linear(256, config.latent_dim, rng);
  dec1_ = Linear(config.latent_dim, 256, rng);
  dec2_ = Linear(256, 512, rng);
  dec3_ = Linear(512, config.points * 3, rng);
  if (uses_codebook(variant))
    codebook_ = Codebook(config.num_classes, config.per_class, config.latent_dim, rng, config.decay, config.eps_reinit);
  else
    tail_mean_.assign(config.latent_dim - kFeatureDim, 0.0);
}

Tensor PointAutoencoder::trunk(const Tensor& clouds) const {
  if (clouds.rank() != 3 || clouds.dim(2) != 3 || clouds.dim(1) != config_.points)
    throw std::invalid_argument("encode: expected (B, " + std::to_string(config_.points) + ", 3) clouds, got " +
                                shape_str(clouds.shape()));
  const std::size_t batch = clouds.dim(0), n = clouds.dim(1);
  Tensor h = reshape(clouds, {batch * n, 3});
  h = enc1_.relu(h);
  h = enc2_.relu(h);
  h = enc3_.relu(h);
  return max_axis(reshape(h, {batch, n, 256}), 1);
}

Tensor PointAutoencoder::encode(const Tensor& clouds) const { return head_(trunk(clouds)); }

Tensor PointAutoencoder::encode_logvar(const Tensor& clouds) const {
  if (variant_ != Variant::v1) throw std::logic_error("encode_logvar: only the VAE variant has a variance head");
  return logvar_head_(trunk(clouds));
}

Tensor PointAutoencoder::decode(const Tensor& latents) const {
  if (latents.rank() != 2 || latents.dim(1) != config_.latent_dim)
    throw std::invalid_argument("decode: expected (B, " + std::to_string(config_.latent_dim) + ") latents, got " +
                                shape_str(latents.shape()));
  for (double v : latents.data())
    if (!std::isfinite(v)) throw std::invalid_argument("decode: non-finite latent");
  Tensor y = dec1_.relu(latents);
  y = dec2_.relu(y);
  y = tanh(dec3_(y));
  return reshape(y, {latents.dim(0), config_.points, 3});
}

std::vector<double> PointAutoencoder::encode(const PointCloud& cloud) const {
  if (cloud.size() != config_.points)
    throw std::invalid_argument("encode: cloud has " + std::to_string(cloud.size()) + " points, expected " +
                                std::to_string(config_.points));
  NoGradGuard no_grad;
  const Tensor z = encode(to_tensor(std::span<const PointCloud>(&cloud, 1)));
  return {z.data().begin(), z.data().end()};
}

PointCloud PointAutoencoder::decode(std::span<const double> latent, int class_id) const {
  NoGradGuard no_grad;
  const Tensor y = decode(Tensor::from({1, latent.size()}, std::vector<double>(latent.begin(), latent.end())));
  return cloud_from(y.data(), class_id);
}

QuantizationResult PointAutoencoder::quantize_latent(std::span<const double> encoding, int class_id) const {
  if (variant_ == Variant::v1) return {0, std::vector<double>(encoding.begin(), encoding.end())};
  return partitioned(variant_) ? quantize_class(encoding, codebook_, class_id) : quantize(encoding, codebook_);
}

QuantizationResult PointAutoencoder::lookup_feature(std::span<const double> feature, int class_id,
                                                    bool normalized) const {
  if (variant_ == Variant::v1) {
    if (feature.size() != kFeatureDim)
      throw std::invalid_argument("lookup_feature: feature must have length " + std::to_string(kFeatureDim));
    std::vector<double> z(feature.begin(), feature.end());
    z.insert(z.end(), tail_mean_.begin(), tail_mean_.end());
    return {0, std::move(z)};
  }
  return partitioned(variant_) ? inverse_lookup(feature, codebook_, class_id, normalized)
                               : inverse_lookup_any(feature, codebook_, normalized);
}

std::vector<NamedTensor> PointAutoencoder::parameters() const {
  std::vector<NamedTensor> out;
  enc1_.collect("encoder.0", out);
  enc2_.collect("encoder.1", out);
  enc3_.collect("encoder.2", out);
  head_.collect("encoder.head", out);
  if (variant_ == Variant::v1) logvar_head_.collect("encoder.logvar", out);
  dec1_.collect("decoder.0", out);
  dec2_.collect("decoder.1", out);
  dec3_.collect("decoder.2", out);
  if (uses_codebook(variant_)) out.emplace_back("codebook.vectors", codebook_.vectors());
  return out;
}

namespace {

void require_all_classes(std::span<const PointCloud> dataset, const AutoencoderConfig& config) {
  if (dataset.empty()) throw std::invalid_argument("train_cpvqvae: empty dataset");
  std::set<int> seen;
  for (const auto& c : dataset) {
    if (c.class_id < 0 || c.class_id >= config.num_classes)
      throw std::invalid_argument("train_cpvqvae: class id " + std::to_string(c.class_id) + " out of range");
    if (c.size() != config.points)
      throw std::invalid_argument("train_cpvqvae: cloud with " + std::to_string(c.size()) + " points, expected " +
                                  std::to_string(config.points));
    seen.insert(c.class_id);
  }
  if (static_cast<int>(seen.size()) != config.num_classes)
    throw std::invalid_argument("train_cpvqvae: dataset is missing " +
                                std::to_string(config.num_classes - static_cast<int>(seen.size())) + " class(es)");
}

}  // namespace

AutoencoderTraining train_cpvqvae(std::span<const PointCloud> dataset, const AutoencoderConfig& config, Variant variant,
                                  const std::function<void(const AutoencoderEpoch&)>& on_epoch) {
  require_all_classes(dataset, config);
  if (config.batch == 0) throw std::invalid_argument("train_cpvqvae: batch must be positive");
  AutoencoderTraining out{PointAutoencoder(config, variant), {}};
  auto& model = out.model;
  const auto named = model.parameters();
  std::vector<Tensor> params = tensors_of(named);
  AdamState adam;
  Rng batch_rng(mix_seed(config.seed, 2));
  Rng noise_rng(mix_seed(config.seed, 3));

  const std::size_t steps_per_epoch = (dataset.size() + config.batch - 1) / config.batch;
  AutoencoderEpoch acc;
  std::size_t in_epoch = 0;

  std::vector<PointCloud> batch(config.batch);
  std::vector<int> classes(config.batch);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (std::size_t b = 0; b < config.batch; ++b) {
      batch[b] = dataset[batch_rng.index(dataset.size())];
      classes[b] = batch[b].class_id;
    }
    const Tensor target = to_tensor(batch);
    const Tensor enc = model.encode(target);

    Tensor loss;
    double cd_value = 0.0;
    QuantizedBatch q;
    if (uses_codebook(variant)) {
      q = quantize_batch(enc, model.codebook(), partitioned(variant) ? &classes : nullptr);
      const Tensor cd = chamfer_loss(model.decode(q.straight_through), target);
      cd_value = cd.item();
      loss = add(add(scale(cd, config.lambda_cd), q.loss.codebook), q.loss.commitment);
      acc.codebook_loss += q.loss.codebook.item();
      acc.commitment_loss += q.loss.commitment.item();
    } else {
      const Tensor logvar = model.encode_logvar(target);
      std::vector<double> eps(enc.numel());
      for (auto& e : eps) e = noise_rng.normal();
      const Tensor z = add(enc, mul(exp(scale(logvar, 0.5)), Tensor::from(enc.shape(), std::move(eps))));
      const Tensor cd = chamfer_loss(model.decode(z), target);
      cd_value = cd.item();
      // KL(N(mu, sigma^2) || N(0, I)), summed over latent entries, batch mean.
      const Tensor ones = Tensor::full(enc.shape(), 1.0);
      const Tensor kl = scale(sum_all(sub(add(square(enc), exp(logvar)), add(logvar, ones))),
                              0.5 / static_cast<double>(config.batch));
      loss = add(scale(cd, config.lambda_cd), scale(kl, config.kl_weight));
      acc.kl += kl.item();
    }
    acc.loss += loss.item();
    acc.chamfer += cd_value;

    backward(loss);
    for (auto& p : params)
      if (!p.has_grad()) p.zero_grad();
    adam_step(params, config.learning_rate, adam);

    if (uses_codebook(variant)) {
      auto& book = model.codebook();
      update_usage(book, q.indices, config.batch);
      if (uses_rau(variant)) {
        const auto anchors = select_anchors(book, enc.data(), config.batch, &classes);
        reinit_step(book, anchors, enc.data());
      }
    }

    if (++in_epoch == steps_per_epoch || step == config.steps) {
      const double inv = 1.0 / static_cast<double>(in_epoch);
      acc.loss *= inv;
      acc.chamfer *= inv;
      acc.codebook_loss *= inv;
      acc.commitment_loss *= inv;
      acc.kl *= inv;
      acc.epoch = out.history.size() + 1;
      acc.step = step;
      acc.active_fraction = uses_codebook(variant) ? model.codebook().active_fraction() : 0.0;
      out.history.push_back(acc);
      if (on_epoch) on_epoch(acc);
      acc = {};
      in_epoch = 0;
    }
  }

  if (variant == Variant::v1) {
    auto& tail = model.latent_tail_mean();
    std::fill(tail.begin(), tail.end(), 0.0);
    for (const auto& cloud : dataset) {
      const auto mu = model.encode(cloud);
      for (std::size_t i = 0; i < tail.size(); ++i) tail[i] += mu[kFeatureDim + i];
    }
    for (auto& v : tail) v /= static_cast<double>(dataset.size());
  }
  model.mark_trained();
  return out;
}

std::vector<LatentRecord> build_latent_dataset(const PointAutoencoder& model, std::span<const PointCloud> clouds) {
  if (!model.trained()) throw std::logic_error("build_latent_dataset: model has not been trained or loaded");
  std::vector<LatentRecord> out;
  out.reserve(clouds.size());
  for (const auto& cloud : clouds) {
    const auto q = model.quantize_latent(model.encode(cloud), cloud.class_id);
    out.push_back({cloud.class_id, q.index, truncate_feature(q.z_q)});
  }
  return out;
}

double round_trip_chamfer(const PointAutoencoder& model, std::span<const PointCloud> clouds) {
  if (clouds.empty()) throw std::invalid_argument("round_trip_chamfer: no clouds");
  double total = 0.0;
  for (const auto& cloud : clouds) {
    const auto q = model.quantize_latent(model.encode(cloud), cloud.class_id);
    total += chamfer_distance(model.decode(q.z_q, cloud.class_id), cloud);
  }
  return total / static_cast<double>(clouds.size());
}

}  // namespace cpvq
