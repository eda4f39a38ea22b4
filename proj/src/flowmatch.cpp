// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#include "cpvq/flowmatch.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace cpvq {

std::size_t TupleLayout::offset(Attribute a) const {
  switch (a) {
    case Attribute::translation: return 0;
    case Attribute::rotation: return 3;
    case Attribute::size: return 5;
    case Attribute::klass: return 8;
    case Attribute::feature: return 8 + num_classes;
  }
  throw std::invalid_argument("TupleLayout: unknown attribute");
}

std::size_t TupleLayout::width(Attribute a) const {
  switch (a) {
    case Attribute::translation: return 3;
    case Attribute::rotation: return 2;
    case Attribute::size: return 3;
    case Attribute::klass: return num_classes;
    case Attribute::feature: return feature_dim;
  }
  throw std::invalid_argument("TupleLayout: unknown attribute");
}

std::vector<double> column_weights(const TupleLayout& layout, const AttributeWeights& weights) {
  std::vector<double> w(layout.dim());
  for (int a = 0; a < kAttributeCount; ++a) {
    const auto attr = static_cast<Attribute>(a);
    std::fill_n(w.begin() + static_cast<std::ptrdiff_t>(layout.offset(attr)), layout.width(attr), weights[a]);
  }
  return w;
}

std::vector<double> encode_scene(std::span<const SceneObject> objects, std::size_t rows, const TupleLayout& layout,
                                 const TupleScaling& scaling) {
  if (objects.size() > rows)
    throw std::invalid_argument("encode_scene: " + std::to_string(objects.size()) + " objects exceed " +
                                std::to_string(rows) + " rows");
  const std::size_t d = layout.dim();
  std::vector<double> x(rows * d, 0.0);
  const std::size_t t0 = layout.offset(Attribute::translation), r0 = layout.offset(Attribute::rotation),
                    s0 = layout.offset(Attribute::size), c0 = layout.offset(Attribute::klass),
                    f0 = layout.offset(Attribute::feature);
  for (std::size_t m = 0; m < rows; ++m) {
    double* row = x.data() + m * d;
    if (m >= objects.size()) {
      row[r0] = 1.0;
      row[c0 + static_cast<std::size_t>(layout.empty_class())] = 1.0;
      continue;
    }
    const auto& obj = objects[m];
    if (obj.class_id < 0 || obj.class_id >= layout.empty_class())
      throw std::invalid_argument("encode_scene: class id " + std::to_string(obj.class_id) + " out of range");
    if (obj.feature.size() != layout.feature_dim) throw std::invalid_argument("encode_scene: feature width mismatch");
    for (int k = 0; k < 3; ++k) {
      row[t0 + k] = obj.box.translation[k] / scaling.scene_scale;
      row[s0 + k] = obj.box.size[k] / scaling.scene_scale;
    }
    row[r0] = obj.box.rotation[0];
    row[r0 + 1] = obj.box.rotation[1];
    row[c0 + static_cast<std::size_t>(obj.class_id)] = 1.0;
    for (std::size_t i = 0; i < layout.feature_dim; ++i) row[f0 + i] = obj.feature[i] * scaling.feature_scale;
  }
  return x;
}

std::vector<SceneObject> finalize_objects(std::span<const double> x_hat, std::size_t rows, const TupleLayout& layout,
                                          const TupleScaling& scaling) {
  const std::size_t d = layout.dim();
  if (x_hat.size() != rows * d) throw std::invalid_argument("finalize_objects: scene matrix size mismatch");
  const std::size_t t0 = layout.offset(Attribute::translation), r0 = layout.offset(Attribute::rotation),
                    s0 = layout.offset(Attribute::size), c0 = layout.offset(Attribute::klass),
                    f0 = layout.offset(Attribute::feature);
  std::vector<SceneObject> out;
  for (std::size_t m = 0; m < rows; ++m) {
    const double* row = x_hat.data() + m * d;
    const auto* c_begin = row + c0;
    const int cls = static_cast<int>(std::max_element(c_begin, c_begin + layout.num_classes) - c_begin);
    if (cls == layout.empty_class()) continue;
    SceneObject obj;
    obj.class_id = cls;
    for (int k = 0; k < 3; ++k) {
      obj.box.translation[k] = row[t0 + k] * scaling.scene_scale;
      obj.box.size[k] = std::max(row[s0 + k] * scaling.scene_scale, 1e-3);
    }
    obj.box.rotation = normalize_rotation({row[r0], row[r0 + 1]});
    obj.feature.resize(layout.feature_dim);
    for (std::size_t i = 0; i < layout.feature_dim; ++i) obj.feature[i] = row[f0 + i] / scaling.feature_scale;
    out.push_back(std::move(obj));
  }
  return out;
}

std::vector<double> interpolate(std::span<const double> x0, std::span<const double> x1, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("interpolate: t must lie in [0, 1]");
  if (x0.size() != x1.size()) throw std::invalid_argument("interpolate: size mismatch");
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * x0[i] + t * x1[i];
  return out;
}

std::vector<double> time_embedding(double t, std::size_t features) {
  std::vector<double> e(features);
  const std::size_t half = features / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double w = std::numbers::pi * std::ldexp(1.0, static_cast<int>(k));
    e[k] = std::sin(w * t);
    e[half + k] = std::cos(w * t);
  }
  return e;
}

VelocityNet::VelocityNet(const VelocityNetConfig& config, std::uint64_t seed) : config_(config) {
  if (config.rows == 0 || config.dim == 0 || config.hidden == 0)
    throw std::invalid_argument("VelocityNet: rows, dim and hidden must be positive");
  Rng rng(mix_seed(seed, 20));
  const std::size_t in = config.dim + 1 + config.time_features + config.cond_dim;
  in_ = Linear(in, config.hidden, rng);
  mix_ = Linear(2 * config.hidden, config.hidden, rng);
  hidden_ = Linear(config.hidden, config.hidden, rng);
  out_ = Linear(config.hidden, config.dim, rng);
}

Tensor VelocityNet::operator()(const Tensor& x, std::span<const double> t, const Tensor& cond) const {
  const auto& c = config_;
  if (x.rank() != 3 || x.dim(1) != c.rows || x.dim(2) != c.dim)
    throw std::invalid_argument("VelocityNet: expected (B, " + std::to_string(c.rows) + ", " + std::to_string(c.dim) +
                                ") input, got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0);
  if (t.size() != batch) throw std::invalid_argument("VelocityNet: one time per scene required");
  if (cond.numel() != batch * c.cond_dim) throw std::invalid_argument("VelocityNet: conditioning size mismatch");

  const std::size_t extra = 1 + c.time_features + c.cond_dim;
  std::vector<double> side(batch * c.rows * extra);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto emb = time_embedding(t[b], c.time_features);
    for (std::size_t m = 0; m < c.rows; ++m) {
      double* dst = side.data() + (b * c.rows + m) * extra;
      dst[0] = t[b];
      std::copy(emb.begin(), emb.end(), dst + 1);
      for (std::size_t j = 0; j < c.cond_dim; ++j) dst[1 + c.time_features + j] = cond.at(b * c.cond_dim + j);
    }
  }
  const Tensor features = Tensor::from({batch * c.rows, extra}, std::move(side));
  const Tensor input = concat({reshape(x, {batch * c.rows, c.dim}), features}, 1);

  const Tensor h1 = in_.relu(input);
  const Tensor context = mean_axis(reshape(h1, {batch, c.rows, c.hidden}), 1);
  const Tensor spread =
      reshape(broadcast(reshape(context, {batch, 1, c.hidden}), {batch, c.rows, c.hidden}), {batch * c.rows, c.hidden});
  const Tensor h2 = mix_.relu(concat({h1, spread}, 1));
  const Tensor h3 = hidden_.relu(h2);
  return reshape(out_(h3), {batch, c.rows, c.dim});
}

std::vector<NamedTensor> VelocityNet::parameters() const {
  std::vector<NamedTensor> out;
  in_.collect("velocity.in", out);
  mix_.collect("velocity.mix", out);
  hidden_.collect("velocity.hidden", out);
  out_.collect("velocity.out", out);
  return out;
}

Tensor fm_loss(const VelocityNet& net, const Tensor& x0, const Tensor& x1, std::span<const double> t, const Tensor& cond,
               std::span<const double> column_weight) {
  if (x0.shape() != x1.shape() || x0.rank() != 3)
    throw std::invalid_argument("fm_loss: shape mismatch " + shape_str(x0.shape()) + " vs " + shape_str(x1.shape()));
  const std::size_t batch = x0.dim(0), per_scene = x0.dim(1) * x0.dim(2), dim = x0.dim(2);
  if (t.size() != batch) throw std::invalid_argument("fm_loss: one time per scene required");
  if (column_weight.size() != dim) throw std::invalid_argument("fm_loss: one weight per column required");
  std::vector<double> xt(x0.numel()), target(x0.numel()), weights(x0.numel());
  const auto a = x0.data(), b = x1.data();
  for (std::size_t s = 0; s < batch; ++s) {
    if (!(t[s] >= 0.0 && t[s] <= 1.0)) throw std::invalid_argument("fm_loss: t must lie in [0, 1]");
    for (std::size_t i = s * per_scene; i < (s + 1) * per_scene; ++i) {
      xt[i] = (1.0 - t[s]) * a[i] + t[s] * b[i];
      target[i] = b[i] - a[i];
      weights[i] = column_weight[i % dim];
    }
  }
  const Tensor pred = net(Tensor::from(x0.shape(), std::move(xt)), t, cond);
  const Tensor residual = sub(pred, Tensor::from(x0.shape(), std::move(target)));
  const Tensor weighted = mul(square(residual), Tensor::from(x0.shape(), std::move(weights)));
  return scale(sum_all(weighted), 1.0 / static_cast<double>(batch));
}

FlowTraining train_flow(const FlowBatchSource& source, const VelocityNetConfig& net_config,
                        const FlowTrainConfig& train_config, std::span<const double> column_weight,
                        const std::function<void(std::size_t, double)>& on_step) {
  if (train_config.batch == 0) throw std::invalid_argument("train_flow: batch must be positive");
  FlowTraining out{VelocityNet(net_config, train_config.seed), {}};
  auto params = tensors_of(out.net.parameters());
  AdamState adam;
  Rng rng(mix_seed(train_config.seed, 21));
  const std::size_t batch = train_config.batch;
  const Shape shape{batch, net_config.rows, net_config.dim};
  std::vector<double> x1, cond, x0(shape_numel(shape)), t(batch);
  out.loss_history.reserve(train_config.steps);
  for (std::size_t step = 1; step <= train_config.steps; ++step) {
    x1.clear();
    cond.clear();
    source(rng, batch, x1, cond);
    if (x1.size() != x0.size() || cond.size() != batch * net_config.cond_dim)
      throw std::invalid_argument("train_flow: batch source returned the wrong number of values");
    for (auto& v : x0) v = rng.normal();
    for (auto& v : t) v = rng.uniform();
    const Tensor loss = fm_loss(out.net, Tensor::from(shape, x0), Tensor::from(shape, x1), t,
                                Tensor::from({batch, net_config.cond_dim}, cond), column_weight);
    backward(loss);
    for (auto& p : params)
      if (!p.has_grad()) p.zero_grad();
    adam_step(params, train_config.learning_rate, adam);
    out.loss_history.push_back(loss.item());
    if (on_step) on_step(step, loss.item());
  }
  return out;
}

Tensor euler_integrate(const VelocityField& field, const Tensor& x0, std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("euler_integrate: at least one step required");
  NoGradGuard no_grad;
  std::vector<double> x(x0.data().begin(), x0.data().end());
  const double h = 1.0 / static_cast<double>(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * h;
    const Tensor v = field(Tensor::from(x0.shape(), x), t);
    if (v.numel() != x.size()) throw std::invalid_argument("euler_integrate: field changed the state size");
    const auto vd = v.data();
    for (std::size_t k = 0; k < x.size(); ++k) x[k] += h * vd[k];
  }
  return Tensor::from(x0.shape(), std::move(x));
}

std::vector<double> scene_noise(const VelocityNetConfig& config, std::uint64_t seed, std::size_t index) {
  Rng rng(mix_seed(seed, 0x5a3e0000ull + index));
  std::vector<double> x(config.rows * config.dim);
  for (auto& v : x) v = rng.normal();
  return x;
}

Tensor sample_scenes(const VelocityNet& net, const Tensor& cond, std::size_t steps, std::uint64_t seed) {
  const auto& c = net.config();
  if (cond.rank() != 2 || cond.dim(1) != c.cond_dim)
    throw std::invalid_argument("sample_scenes: conditioning must be (S, " + std::to_string(c.cond_dim) + ")");
  const std::size_t scenes = cond.dim(0);
  std::vector<double> x0;
  x0.reserve(scenes * c.rows * c.dim);
  for (std::size_t s = 0; s < scenes; ++s) {
    const auto noise = scene_noise(c, seed, s);
    x0.insert(x0.end(), noise.begin(), noise.end());
  }
  const VelocityField field = [&](const Tensor& x, double t) {
    const std::vector<double> times(scenes, t);
    return net(x, times, cond);
  };
  return euler_integrate(field, Tensor::from({scenes, c.rows, c.dim}, std::move(x0)), steps);
}

}  // namespace cpvq
