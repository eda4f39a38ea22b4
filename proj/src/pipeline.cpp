// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#include "cpvq/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>

#include "cpvq/io.hpp"
#include "cpvq/ply.hpp"

namespace cpvq {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string format(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list copy;
  va_copy(copy, args);
  const int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  std::string out(static_cast<std::size_t>(n), '\0');
  std::vsnprintf(out.data(), out.size() + 1, fmt, args);
  va_end(args);
  return out;
}

/// Runs body(i) for i in [0, n) on up to hardware_concurrency threads. Each
/// worker records no gradients. The first exception is rethrown.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    NoGradGuard guard;
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      NoGradGuard guard;
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

json class_names() {
  json names = json::array();
  for (int c = 0; c < kShapeKindCount; ++c) names.push_back(std::string(shape_name(c)));
  return names;
}

json config_json(const Config& config) {
  json j = json::object();
  for (const auto& [k, v] : config.entries()) j[k] = v;
  return j;
}

void copy_blob(const ModelBundle& bundle, const std::string& name, Tensor& target) {
  const Blob& b = bundle.blob(name);
  if (b.shape != target.shape())
    throw std::runtime_error("bundle: blob '" + name + "' has shape " + shape_str(b.shape) + ", expected " +
                             shape_str(target.shape()));
  std::copy(b.values.begin(), b.values.end(), target.mutable_data().begin());
}

void expect_kind(const ModelBundle& bundle, const std::string& kind) {
  const auto it = bundle.metadata.find("kind");
  if (it == bundle.metadata.end() || *it != kind) throw std::runtime_error("bundle: expected a '" + kind + "' bundle");
}

std::string history_csv(const std::vector<AutoencoderEpoch>& history) {
  std::string out = "epoch,step,loss,chamfer,codebook_loss,commitment_loss,kl,active_fraction\n";
  for (const auto& e : history)
    out += format("%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.step, e.loss, e.chamfer,
                  e.codebook_loss, e.commitment_loss, e.kl, e.active_fraction);
  return out;
}

std::vector<GeneratedScene> decode_samples(const PointAutoencoder& autoencoder, const FlowModel& flow,
                                           std::span<const FloorPlan> floors, const Tensor& samples,
                                           bool normalized_lookup) {
  const std::size_t rows = flow.net.config().rows, dim = flow.net.config().dim;
  const auto values = samples.data();
  std::vector<GeneratedScene> out(floors.size());
  parallel_for(floors.size(), [&](std::size_t s) {
    GeneratedScene& scene = out[s];
    scene.record.scene_id = format("scene_%05zu", s);
    scene.record.floor = floors[s];
    const auto objects = finalize_objects(values.subspan(s * rows * dim, rows * dim), rows, flow.layout, flow.scaling);
    for (const auto& obj : objects) {
      const auto q = autoencoder.lookup_feature(obj.feature, obj.class_id, normalized_lookup);
      ObjectRecord rec;
      rec.class_id = obj.class_id;
      rec.box = obj.box;
      rec.feature = obj.feature;
      if (uses_codebook(autoencoder.variant())) rec.codebook_index = q.index;
      scene.record.objects.push_back(std::move(rec));
      scene.canonical.push_back(autoencoder.decode(q.z_q, obj.class_id));
    }
  });
  return out;
}

Tensor conditioning(std::span<const FloorPlan> floors, const FlowModel& flow) {
  std::vector<double> cond;
  cond.reserve(floors.size() * 2);
  for (const auto& f : floors) {
    const auto c = f.conditioning(flow.scaling.scene_scale);
    cond.insert(cond.end(), c.begin(), c.end());
  }
  return Tensor::from({floors.size(), 2}, std::move(cond));
}

Tensor sample_tensor(const FlowModel& flow, std::span<const FloorPlan> floors, std::size_t steps, std::uint64_t seed) {
  if (flow.net.config().cond_dim != 2) throw std::invalid_argument("flow model must condition on the floor extents");
  NoGradGuard guard;
  return sample_scenes(flow.net, conditioning(floors, flow), steps, seed);
}

}  // namespace

AutoencoderConfig autoencoder_config(const Config& config) {
  AutoencoderConfig c;
  c.points = config.count("points");
  c.latent_dim = config.count("latent_dim");
  c.num_classes = kShapeKindCount;
  c.per_class = static_cast<int>(config.count("codes_per_class"));
  c.lambda_cd = config.number("lambda_cd");
  c.learning_rate = config.number("ae_lr");
  c.batch = config.count("ae_batch");
  c.steps = config.count("ae_steps");
  c.decay = config.number("usage_decay");
  c.eps_reinit = config.number("reinit_eps");
  c.kl_weight = config.number("kl_weight");
  c.seed = config.seed("seed");
  return c;
}

VelocityNetConfig velocity_config(const Config& config) {
  VelocityNetConfig c;
  c.rows = config.count("max_objects");
  c.dim = TupleLayout{}.dim();
  c.cond_dim = 2;
  c.hidden = config.count("fm_hidden");
  return c;
}

FlowTrainConfig flow_train_config(const Config& config) {
  FlowTrainConfig c;
  c.batch = config.count("fm_batch");
  c.steps = config.count("fm_steps");
  c.learning_rate = config.number("fm_lr");
  c.seed = config.seed("seed");
  return c;
}

AttributeWeights attribute_weights(const Config& config) {
  return {config.number("lambda_T"), config.number("lambda_R"), config.number("lambda_S"), config.number("lambda_C"),
          config.number("lambda_F")};
}

ModelBundle autoencoder_bundle(const PointAutoencoder& model, const Config& config) {
  if (!model.trained()) throw std::logic_error("autoencoder_bundle: model is untrained");
  const auto& c = model.config();
  ModelBundle b;
  b.metadata["kind"] = "cpvqvae";
  b.metadata["variant"] = variant_name(model.variant());
  b.metadata["config"] = config_json(config);
  b.metadata["class_names"] = class_names();
  b.metadata["seeds"] = {{"train", c.seed}};
  b.metadata["dims"] = {{"points", c.points},         {"latent_dim", c.latent_dim}, {"num_classes", c.num_classes},
                        {"per_class", c.per_class},   {"feature_dim", kFeatureDim}, {"batch", c.batch},
                        {"steps", c.steps}};
  b.metadata["hyper"] = {{"lambda_cd", c.lambda_cd}, {"learning_rate", c.learning_rate}, {"decay", c.decay},
                         {"eps_reinit", c.eps_reinit}, {"kl_weight", c.kl_weight}};
  for (const auto& [name, t] : model.parameters()) b.add(name, t);
  if (uses_codebook(model.variant())) {
    const auto& u = model.codebook().usage();
    b.add("codebook.usage", {u.size()}, u);
  } else {
    const auto& tail = model.latent_tail_mean();
    b.add("latent.tail_mean", {tail.size()}, tail);
  }
  return b;
}

PointAutoencoder autoencoder_from_bundle(const ModelBundle& bundle) {
  expect_kind(bundle, "cpvqvae");
  const auto& dims = bundle.metadata.at("dims");
  const auto& hyper = bundle.metadata.at("hyper");
  AutoencoderConfig c;
  c.points = dims.at("points").get<std::size_t>();
  c.latent_dim = dims.at("latent_dim").get<std::size_t>();
  c.num_classes = dims.at("num_classes").get<int>();
  c.per_class = dims.at("per_class").get<int>();
  c.batch = dims.at("batch").get<std::size_t>();
  c.steps = dims.at("steps").get<std::size_t>();
  c.lambda_cd = hyper.at("lambda_cd").get<double>();
  c.learning_rate = hyper.at("learning_rate").get<double>();
  c.decay = hyper.at("decay").get<double>();
  c.eps_reinit = hyper.at("eps_reinit").get<double>();
  c.kl_weight = hyper.at("kl_weight").get<double>();
  c.seed = bundle.metadata.at("seeds").at("train").get<std::uint64_t>();
  PointAutoencoder model(c, parse_variant(bundle.metadata.at("variant").get<std::string>()));
  for (auto& [name, t] : model.parameters()) copy_blob(bundle, name, t);
  if (uses_codebook(model.variant())) {
    const Blob& u = bundle.blob("codebook.usage");
    if (u.values.size() != model.codebook().size()) throw std::runtime_error("bundle: codebook.usage length mismatch");
    model.codebook().usage() = u.values;
  } else {
    const Blob& tail = bundle.blob("latent.tail_mean");
    if (tail.values.size() != model.latent_tail_mean().size())
      throw std::runtime_error("bundle: latent.tail_mean length mismatch");
    model.latent_tail_mean() = tail.values;
  }
  model.mark_trained();
  return model;
}

ModelBundle flow_bundle(const FlowModel& model, const Config& config) {
  const auto& n = model.net.config();
  ModelBundle b;
  b.metadata["kind"] = "lfmm";
  b.metadata["config"] = config_json(config);
  b.metadata["class_names"] = class_names();
  b.metadata["seeds"] = {{"train", config.seed("seed")}};
  b.metadata["dims"] = {{"rows", n.rows},         {"dim", n.dim},
                        {"cond_dim", n.cond_dim}, {"hidden", n.hidden},
                        {"time_features", n.time_features}, {"num_classes", model.layout.num_classes},
                        {"feature_dim", model.layout.feature_dim}};
  b.metadata["scaling"] = {{"scene_scale", model.scaling.scene_scale}, {"feature_scale", model.scaling.feature_scale}};
  for (const auto& [name, t] : model.net.parameters()) b.add(name, t);
  return b;
}

FlowModel flow_from_bundle(const ModelBundle& bundle) {
  expect_kind(bundle, "lfmm");
  const auto& dims = bundle.metadata.at("dims");
  VelocityNetConfig n;
  n.rows = dims.at("rows").get<std::size_t>();
  n.dim = dims.at("dim").get<std::size_t>();
  n.cond_dim = dims.at("cond_dim").get<std::size_t>();
  n.hidden = dims.at("hidden").get<std::size_t>();
  n.time_features = dims.at("time_features").get<std::size_t>();
  FlowModel model;
  model.layout.num_classes = dims.at("num_classes").get<std::size_t>();
  model.layout.feature_dim = dims.at("feature_dim").get<std::size_t>();
  if (model.layout.dim() != n.dim) throw std::runtime_error("bundle: tuple layout disagrees with the network width");
  model.scaling.scene_scale = bundle.metadata.at("scaling").at("scene_scale").get<double>();
  model.scaling.feature_scale = bundle.metadata.at("scaling").at("feature_scale").get<double>();
  model.net = VelocityNet(n, 0);
  for (auto& [name, t] : model.net.parameters()) copy_blob(bundle, name, t);
  return model;
}

SceneDataset run_gen_data(const Config& config, const fs::path& out) {
  const auto dcfg = DatasetConfig::from(config);
  auto data = gen_dataset(dcfg.scenes, config.seed("seed"), dcfg);
  if (!out.empty()) save_dataset(data, out);
  return data;
}

AutoencoderTraining run_train_cpvqvae(const SceneDataset& data, const Config& config, Variant variant,
                                      const fs::path& out) {
  const auto cfg = autoencoder_config(config);
  const auto clouds = object_clouds(data.train, cfg.points);
  auto result = train_cpvqvae(clouds, cfg, variant);
  if (!out.empty()) {
    autoencoder_bundle(result.model, config).save(out / files::kAutoencoderBundle);
    write_file_atomic(out / files::kAutoencoderHistory, history_csv(result.history));
  }
  return result;
}

std::vector<std::vector<SceneObject>> latent_scenes(const std::vector<SceneRecord>& scenes,
                                                    const PointAutoencoder& model) {
  const auto clouds = object_clouds(scenes, model.config().points);
  const auto latents = build_latent_dataset(model, clouds);
  std::vector<std::vector<SceneObject>> out;
  out.reserve(scenes.size());
  std::size_t next = 0;
  for (const auto& scene : scenes) {
    std::vector<SceneObject> objs;
    for (const auto& rec : scene.objects) objs.push_back({rec.class_id, rec.box, latents[next++].feature});
    std::sort(objs.begin(), objs.end(), [](const SceneObject& a, const SceneObject& b) {
      if (a.class_id != b.class_id) return a.class_id < b.class_id;
      if (a.box.translation[0] != b.box.translation[0]) return a.box.translation[0] < b.box.translation[0];
      return a.box.translation[2] < b.box.translation[2];
    });
    out.push_back(std::move(objs));
  }
  return out;
}

std::vector<double> moving_average(std::span<const double> values, std::size_t window) {
  if (window == 0) throw std::invalid_argument("moving_average: window must be positive");
  std::vector<double> out(values.size());
  double run = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    run += values[i];
    if (i >= window) run -= values[i - window];
    out[i] = run / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

FlowTrainingRun run_train_lfmm(const SceneDataset& data, const PointAutoencoder& autoencoder, const Config& config,
                               const fs::path& out) {
  if (!autoencoder.trained()) throw std::logic_error("run_train_lfmm: the autoencoder is untrained");
  if (data.train.empty()) throw std::invalid_argument("run_train_lfmm: empty training split");
  const auto scenes = latent_scenes(data.train, autoencoder);
  const auto net_cfg = velocity_config(config);

  FlowModel model;
  model.scaling.scene_scale = config.number("scene_scale");
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : scenes)
    for (const auto& o : s)
      for (double v : o.feature) {
        sum += v;
        sum_sq += v * v;
        ++n;
      }
  const double mean = sum / static_cast<double>(std::max<std::size_t>(n, 1));
  const double sd = std::sqrt(std::max(sum_sq / static_cast<double>(std::max<std::size_t>(n, 1)) - mean * mean, 0.0));
  model.scaling.feature_scale = sd > 1e-12 ? 1.0 / sd : 1.0;

  const std::size_t block = net_cfg.rows * net_cfg.dim;
  std::vector<double> matrices, conds;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i].size() > net_cfg.rows)
      throw std::invalid_argument("run_train_lfmm: scene " + data.train[i].scene_id + " exceeds max_objects");
    const auto m = encode_scene(scenes[i], net_cfg.rows, model.layout, model.scaling);
    matrices.insert(matrices.end(), m.begin(), m.end());
    const auto c = data.train[i].floor.conditioning(model.scaling.scene_scale);
    conds.insert(conds.end(), c.begin(), c.end());
  }
  const FlowBatchSource source = [&](Rng& rng, std::size_t batch, std::vector<double>& x1, std::vector<double>& cond) {
    x1.resize(batch * block);
    cond.resize(batch * 2);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t k = rng.index(scenes.size());
      std::copy_n(matrices.begin() + static_cast<std::ptrdiff_t>(k * block), block,
                  x1.begin() + static_cast<std::ptrdiff_t>(b * block));
      cond[2 * b] = conds[2 * k];
      cond[2 * b + 1] = conds[2 * k + 1];
    }
  };
  const auto weights = column_weights(model.layout, attribute_weights(config));
  auto trained = train_flow(source, net_cfg, flow_train_config(config), weights);
  model.net = std::move(trained.net);

  FlowTrainingRun run{std::move(model), std::move(trained.loss_history)};
  if (!out.empty()) {
    flow_bundle(run.model, config).save(out / files::kFlowBundle);
    const auto avg = moving_average(run.loss_history, 100);
    std::string csv = "step,loss,moving_average_100\n";
    for (std::size_t i = 0; i < run.loss_history.size(); ++i)
      csv += format("%zu,%.17g,%.17g\n", i + 1, run.loss_history[i], avg[i]);
    write_file_atomic(out / files::kFlowHistory, csv);
  }
  return run;
}

std::vector<FloorPlan> floor_plans(const std::vector<SceneRecord>& scenes, std::size_t count) {
  if (scenes.empty()) throw std::invalid_argument("floor_plans: no scenes to take floor plans from");
  std::vector<FloorPlan> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(scenes[i % scenes.size()].floor);
  return out;
}

std::vector<GeneratedScene> generate_scenes(const PointAutoencoder& autoencoder, const FlowModel& flow,
                                            std::span<const FloorPlan> floors, std::size_t steps, std::uint64_t seed,
                                            bool normalized_lookup) {
  if (!autoencoder.trained()) throw std::logic_error("generate_scenes: the autoencoder is untrained");
  return decode_samples(autoencoder, flow, floors, sample_tensor(flow, floors, steps, seed), normalized_lookup);
}

std::vector<SceneRecord> records_of(const std::vector<GeneratedScene>& scenes) {
  std::vector<SceneRecord> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(s.record);
  return out;
}

std::vector<GeneratedScene> run_sample(const PointAutoencoder& autoencoder, const FlowModel& flow,
                                       std::span<const FloorPlan> floors, const Config& config, const fs::path& out) {
  auto scenes = generate_scenes(autoencoder, flow, floors, config.count("sample_steps"), config.seed("seed"),
                                config.flag("lookup_normalized"));
  write_file_atomic(out / files::kSampledScenes, scenes_to_json(records_of(scenes)));
  if (config.flag("write_ply")) {
    for (const auto& scene : scenes) {
      const fs::path dir = out / files::kSceneDir / scene.record.scene_id;
      PointCloud assembled;
      for (std::size_t k = 0; k < scene.canonical.size(); ++k) {
        const auto placed = apply_bbox(scene.canonical[k], scene.record.objects[k].box);
        write_ply(dir / format("object_%02zu.ply", k), placed);
        assembled.points.insert(assembled.points.end(), placed.points.begin(), placed.points.end());
      }
      write_ply(out / files::kSceneDir / (scene.record.scene_id + ".ply"), assembled);
    }
  }
  return scenes;
}

PointCloud object_cloud(const ObjectRecord& object, const PointAutoencoder& autoencoder) {
  if (object.codebook_index && uses_codebook(autoencoder.variant())) {
    if (*object.codebook_index >= autoencoder.codebook().size())
      throw std::out_of_range("object_cloud: codebook_index out of range");
    return autoencoder.decode(autoencoder.codebook().row(*object.codebook_index), object.class_id);
  }
  if (!object.feature.empty())
    return autoencoder.decode(autoencoder.lookup_feature(object.feature, object.class_id).z_q, object.class_id);
  return generate_shape(object.class_id, object.shape_seed, autoencoder.config().points);
}

EvalOptions EvalOptions::from(const Config& config) {
  EvalOptions o;
  o.prototype_points = config.count("prototype_points");
  o.bank_per_class = config.count("eval_bank_per_class");
  o.normalized_lookup = config.flag("lookup_normalized");
  return o;
}

EvalReport evaluate(const std::vector<SceneRecord>& generated, const std::vector<SceneRecord>& test,
                    const PointAutoencoder& autoencoder, const EvalOptions& options) {
  std::vector<const ObjectRecord*> objects;
  for (const auto& s : generated)
    for (const auto& o : s.objects) objects.push_back(&o);
  if (objects.empty()) throw std::invalid_argument("evaluate: the generated scenes contain no objects");
  const std::size_t points = autoencoder.config().points;

  // Reference bank: test objects of each class, at the model's resolution.
  struct Reference {
    PointCloud cloud;
    ShapeParams params;
  };
  std::vector<std::vector<Reference>> bank(kShapeKindCount);
  for (const auto& s : test)
    for (const auto& o : s.objects) {
      auto& slot = bank.at(static_cast<std::size_t>(o.class_id));
      if (options.bank_per_class != 0 && slot.size() >= options.bank_per_class) continue;
      slot.push_back({generate_shape(o.class_id, o.shape_seed, points), jittered_params(o.class_id, o.shape_seed)});
    }
  for (int c = 0; c < kShapeKindCount; ++c)
    if (bank[c].empty()) bank[c].push_back({prototype_shape(c, points), prototype_params(c)});

  std::vector<PointCloud> prototypes;
  for (int c = 0; c < kShapeKindCount; ++c) prototypes.push_back(prototype_shape(c, options.prototype_points));

  std::vector<double> cd(objects.size()), p2m(objects.size());
  std::vector<int> consistent(objects.size());
  parallel_for(objects.size(), [&](std::size_t i) {
    const ObjectRecord& obj = *objects[i];
    if (obj.class_id < 0 || obj.class_id >= kShapeKindCount) throw std::out_of_range("evaluate: class id out of range");
    const PointCloud cloud = object_cloud(obj, autoencoder);
    const auto& refs = bank[static_cast<std::size_t>(obj.class_id)];
    std::size_t best = 0;
    double best_cd = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < refs.size(); ++r) {
      const double d = chamfer_distance(cloud, refs[r].cloud);
      if (d < best_cd) {
        best_cd = d;
        best = r;
      }
    }
    cd[i] = best_cd;
    p2m[i] = point2mesh_distance(cloud, shape_mesh(refs[best].params));
    int nearest = 0;
    double nearest_cd = std::numeric_limits<double>::infinity();
    for (int c = 0; c < kShapeKindCount; ++c) {
      const double d = chamfer_distance(cloud, prototypes[static_cast<std::size_t>(c)]);
      if (d < nearest_cd) {
        nearest_cd = d;
        nearest = c;
      }
    }
    consistent[i] = nearest == obj.class_id ? 1 : 0;
  });

  EvalReport r;
  r.scenes = generated.size();
  r.objects = objects.size();
  for (std::size_t i = 0; i < objects.size(); ++i) {
    r.chamfer += cd[i];
    r.point2mesh += p2m[i];
    r.class_consistency += consistent[i];
  }
  const double n = static_cast<double>(objects.size());
  r.chamfer /= n;
  r.point2mesh /= n;
  r.class_consistency /= n;
  r.generated_histogram = class_histogram(generated);
  r.data_histogram = class_histogram(test);
  r.ckl = categorical_kl(r.generated_histogram, r.data_histogram);
  r.utilization = uses_codebook(autoencoder.variant()) ? autoencoder.codebook().active_fraction() : 0.0;
  return r;
}

std::string EvalReport::csv() const {
  std::string out = "scenes,objects,cd_x1e3,p2m_x1e3,ckl_x1e2,class_consistency,utilization\n";
  out += format("%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", scenes, objects, chamfer * 1e3, point2mesh * 1e3, ckl * 1e2,
                class_consistency, utilization);
  return out;
}

std::string EvalReport::summary() const {
  std::string out;
  out += format("scenes             %zu\n", scenes);
  out += format("objects            %zu\n", objects);
  out += format("CD x1e3            %.4f\n", chamfer * 1e3);
  out += format("P2M x1e3           %.4f\n", point2mesh * 1e3);
  out += format("CKL x1e2           %.4f\n", ckl * 1e2);
  out += format("class consistency  %.2f%%\n", class_consistency * 100.0);
  out += format("utilization        %.2f%%\n", utilization * 100.0);
  out += "class      generated  data\n";
  for (std::size_t c = 0; c < generated_histogram.size(); ++c)
    out += format("%-10s %9.0f  %4.0f\n", std::string(shape_name(static_cast<int>(c))).c_str(), generated_histogram[c],
                  data_histogram[c]);
  return out;
}

EvalReport run_eval(const std::vector<SceneRecord>& generated, const std::vector<SceneRecord>& test,
                    const PointAutoencoder& autoencoder, const Config& config, const fs::path& out) {
  const auto report = evaluate(generated, test, autoencoder, EvalOptions::from(config));
  if (!out.empty()) {
    write_file_atomic(out / files::kMetricsCsv, report.csv());
    write_file_atomic(out / files::kMetricsSummary, report.summary());
  }
  return report;
}

std::vector<SweepRow> step_sweep(const PointAutoencoder& autoencoder, const FlowModel& flow,
                                 std::span<const FloorPlan> floors, const std::vector<SceneRecord>& test,
                                 std::span<const std::size_t> steps, std::uint64_t seed, const EvalOptions& options) {
  std::vector<SweepRow> out;
  for (std::size_t n : steps) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor x = sample_tensor(flow, floors, n, seed);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto scenes = decode_samples(autoencoder, flow, floors, x, options.normalized_lookup);
    const auto report = evaluate(records_of(scenes), test, autoencoder, options);
    out.push_back({n, seconds, report.ckl, report.class_consistency});
  }
  return out;
}

AblationResult run_ablate(const SceneDataset& data, const Config& config, std::span<const Variant> variants,
                          const fs::path& out) {
  if (variants.empty()) throw std::invalid_argument("run_ablate: no variants requested");
  const auto options = EvalOptions::from(config);
  const auto floors = floor_plans(data.test, config.count("sample_scenes"));
  const auto test_clouds = object_clouds(data.test, config.count("points"));
  const std::uint64_t seed = config.seed("seed");

  AblationResult result;
  std::optional<PointAutoencoder> last_ae;
  std::optional<FlowModel> last_flow;
  for (Variant v : variants) {
    const fs::path dir = out.empty() ? fs::path() : out / variant_name(v);
    const auto t0 = std::chrono::steady_clock::now();
    auto ae = run_train_cpvqvae(data, config, v, dir);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    auto flow = run_train_lfmm(data, ae.model, config, dir);
    const auto scenes =
        generate_scenes(ae.model, flow.model, floors, config.count("sample_steps"), seed, options.normalized_lookup);
    AblationRow row;
    row.variant = v;
    row.active_fraction = uses_codebook(v) ? ae.model.codebook().active_fraction() : 0.0;
    row.test_round_trip = round_trip_chamfer(ae.model, test_clouds);
    row.train_seconds = seconds;
    row.report = evaluate(records_of(scenes), data.test, ae.model, options);
    result.variants.push_back(std::move(row));
    last_ae = std::move(ae.model);
    last_flow = std::move(flow.model);
  }

  std::vector<std::size_t> steps;
  for (double s : config.numbers("sweep_steps")) {
    if (s < 1 || s != std::floor(s)) throw std::invalid_argument("sweep_steps must be positive integers");
    steps.push_back(static_cast<std::size_t>(s));
  }
  result.sweep = step_sweep(*last_ae, *last_flow, floors, data.test, steps, seed, options);

  if (!out.empty()) {
    std::string csv =
        "variant,active_fraction,test_round_trip_cd_x1e3,train_seconds,cd_x1e3,p2m_x1e3,ckl_x1e2,class_consistency\n";
    for (const auto& r : result.variants)
      csv += format("%s,%.17g,%.17g,%.3f,%.17g,%.17g,%.17g,%.17g\n", variant_name(r.variant).c_str(), r.active_fraction,
                    r.test_round_trip * 1e3, r.train_seconds, r.report.chamfer * 1e3, r.report.point2mesh * 1e3,
                    r.report.ckl * 1e2, r.report.class_consistency);
    write_file_atomic(out / files::kAblationCsv, csv);
    std::string sweep = "steps,seconds,ckl_x1e2,class_consistency\n";
    for (const auto& r : result.sweep)
      sweep += format("%zu,%.6f,%.17g,%.17g\n", r.steps, r.seconds, r.ckl * 1e2, r.class_consistency);
    write_file_atomic(out / files::kSweepCsv, sweep);
  }
  return result;
}

}  // namespace cpvq
