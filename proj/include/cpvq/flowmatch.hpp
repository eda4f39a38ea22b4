// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cpvq/geometry.hpp"
#include "cpvq/nn.hpp"

namespace cpvq {

enum class Attribute { translation = 0, rotation, size, klass, feature };
inline constexpr int kAttributeCount = 5;

/// Column offsets of one object row x = (T; R; S; C; F). The last class is
/// the "empty" padding class.
struct TupleLayout {
  std::size_t num_classes = kShapeKindCount + 1;
  std::size_t feature_dim = 32;

  std::size_t offset(Attribute a) const;
  std::size_t width(Attribute a) const;
  std::size_t dim() const { return 3 + 2 + 3 + num_classes + feature_dim; }
  int empty_class() const { return static_cast<int>(num_classes) - 1; }
};

/// Per-attribute loss weights, indexed by Attribute.
using AttributeWeights = std::array<double, kAttributeCount>;

/// Expands per-attribute weights to one weight per column.
std::vector<double> column_weights(const TupleLayout& layout, const AttributeWeights& weights);

/// Maps scene units to the network's working range and back: translation
/// and size are divided by scene_scale, features multiplied by feature_scale.
struct TupleScaling {
  double scene_scale = 1.0;
  double feature_scale = 1.0;
};

struct SceneObject {
  int class_id = 0;
  BoundingBox box;
  std::vector<double> feature;
};

/// Builds the (rows, dim) scene matrix; rows past the object count are
/// padding rows of the empty class with zero T, S, F and R = (1, 0).
std::vector<double> encode_scene(std::span<const SceneObject> objects, std::size_t rows, const TupleLayout& layout,
                                 const TupleScaling& scaling);

/// Row-wise decoding of a sampled scene: argmax class (ties to the lowest
/// index), empty rows dropped, rotation normalized, size clamped to 1e-3.
std::vector<SceneObject> finalize_objects(std::span<const double> x_hat, std::size_t rows, const TupleLayout& layout,
                                          const TupleScaling& scaling);

/// (1 - t) x0 + t x1. Throws when t lies outside [0, 1].
std::vector<double> interpolate(std::span<const double> x0, std::span<const double> x1, double t);

struct VelocityNetConfig {
  std::size_t rows = 8;          // objects per scene (M)
  std::size_t dim = 46;          // row width (D_x)
  std::size_t cond_dim = 2;      // conditioning width (D_fp)
  std::size_t hidden = 256;
  std::size_t time_features = 16;
};

/// Set network over scene rows. Each row sees (x_t, t, sinusoidal(t), f_p),
/// passes a hidden layer, is joined with the scene mean of that layer, then
/// two more hidden layers and a linear head. Row-permutation equivariant.
class VelocityNet {
 public:
  VelocityNet() = default;
  VelocityNet(const VelocityNetConfig& config, std::uint64_t seed);

  const VelocityNetConfig& config() const { return config_; }

  /// x: (B, rows, dim); t: B times; cond: (B, cond_dim). Returns (B, rows, dim).
  Tensor operator()(const Tensor& x, std::span<const double> t, const Tensor& cond) const;

  std::vector<NamedTensor> parameters() const;

 private:
  VelocityNetConfig config_;
  Linear in_, mix_, hidden_, out_;
};

/// 16 features: sin and cos of t * 2^k * pi for k = 0..7.
std::vector<double> time_embedding(double t, std::size_t features);

/// Velocity field evaluated by the sampler: (x (B, rows, dim), t) -> v.
using VelocityField = std::function<Tensor(const Tensor& x, double t)>;

/// Sum over columns of w_j (v_j - (x1_j - x0_j))^2, summed over rows and
/// averaged over the batch; x_t is built from the per-sample times.
Tensor fm_loss(const VelocityNet& net, const Tensor& x0, const Tensor& x1, std::span<const double> t, const Tensor& cond,
               std::span<const double> column_weight);

struct FlowTrainConfig {
  std::size_t batch = 32;
  std::size_t steps = 10000;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// Fills x1 with batch * rows * dim target values and cond with
/// batch * cond_dim values.
using FlowBatchSource = std::function<void(Rng& rng, std::size_t batch, std::vector<double>& x1, std::vector<double>& cond)>;

struct FlowTraining {
  VelocityNet net;
  std::vector<double> loss_history;  // one entry per step
};

/// Adam on fm_loss with x0 ~ N(0, I) and t ~ U(0, 1) drawn fresh per sample and step.
FlowTraining train_flow(const FlowBatchSource& source, const VelocityNetConfig& net_config,
                        const FlowTrainConfig& train_config, std::span<const double> column_weight,
                        const std::function<void(std::size_t step, double loss)>& on_step = {});

/// Explicit Euler from t = 0 to 1 in `steps` uniform steps, starting at x0.
Tensor euler_integrate(const VelocityField& field, const Tensor& x0, std::size_t steps);

/// Samples scenes for each conditioning row of `cond` (S, cond_dim). Scene s
/// starts from N(0, I) noise drawn from a stream keyed by (seed, s), so its
/// starting point does not depend on how many others are sampled with it.
Tensor sample_scenes(const VelocityNet& net, const Tensor& cond, std::size_t steps, std::uint64_t seed);

/// x0 noise for scene `index` under `seed`, shape (rows, dim).
std::vector<double> scene_noise(const VelocityNetConfig& config, std::uint64_t seed, std::size_t index);

}  // namespace cpvq
