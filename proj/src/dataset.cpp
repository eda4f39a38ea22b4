// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#include "cpvq/dataset.hpp"

#include <json.hpp>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "cpvq/io.hpp"

namespace cpvq {

using nlohmann::json;

DatasetConfig DatasetConfig::from(const Config& c) {
  DatasetConfig d;
  d.scenes = c.count("scenes");
  d.test_fraction = c.number("test_fraction");
  d.min_objects = c.count("min_objects");
  d.max_objects = c.count("max_objects");
  d.class_prior = c.numbers("class_prior");
  d.floor_min = c.number("floor_min");
  d.floor_max = c.number("floor_max");
  d.object_size_min = c.number("object_size_min");
  d.object_size_max = c.number("object_size_max");
  d.placement_attempts = c.count("placement_attempts");
  return d;
}

std::array<double, 2> footprint_half_extents(const BoundingBox& box) {
  const double c = std::abs(box.rotation[0]), s = std::abs(box.rotation[1]);
  return {c * box.size[0] + s * box.size[2], s * box.size[0] + c * box.size[2]};
}

bool footprints_overlap(const BoundingBox& a, const BoundingBox& b) {
  const auto ea = footprint_half_extents(a), eb = footprint_half_extents(b);
  return std::abs(a.translation[0] - b.translation[0]) < ea[0] + eb[0] &&
         std::abs(a.translation[2] - b.translation[2]) < ea[1] + eb[1];
}

namespace {

void validate(const DatasetConfig& c) {
  if (c.min_objects < 1 || c.min_objects > c.max_objects)
    throw std::invalid_argument("gen_dataset: need 1 <= min_objects <= max_objects");
  if (c.class_prior.size() != static_cast<std::size_t>(kShapeKindCount))
    throw std::invalid_argument("gen_dataset: class_prior needs one weight per shape class");
  double total = 0.0;
  for (double w : c.class_prior) {
    if (w < 0.0) throw std::invalid_argument("gen_dataset: negative class prior weight");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("gen_dataset: class prior sums to zero");
  if (!(c.floor_min > 0.0 && c.floor_min <= c.floor_max)) throw std::invalid_argument("gen_dataset: bad floor range");
  if (!(c.object_size_min > 0.0 && c.object_size_min <= c.object_size_max))
    throw std::invalid_argument("gen_dataset: bad object size range");
  if (!(c.test_fraction >= 0.0 && c.test_fraction < 1.0))
    throw std::invalid_argument("gen_dataset: test_fraction must lie in [0, 1)");
}

int draw_class(Rng& rng, const std::vector<double>& prior) {
  double total = 0.0;
  for (double w : prior) total += w;
  double u = rng.uniform() * total;
  for (std::size_t k = 0; k < prior.size(); ++k) {
    if (u < prior[k]) return static_cast<int>(k);
    u -= prior[k];
  }
  for (std::size_t k = prior.size(); k-- > 0;)
    if (prior[k] > 0.0) return static_cast<int>(k);
  return 0;
}

/// One layout draw: up to `target` objects, each with placement_attempts
/// tries; objects that never fit are skipped.
std::vector<ObjectRecord> draw_layout(Rng& rng, const FloorPlan& floor, const DatasetConfig& c) {
  const std::size_t target = c.min_objects + rng.index(c.max_objects - c.min_objects + 1);
  std::vector<ObjectRecord> objects;
  for (std::size_t n = 0; n < target; ++n) {
    ObjectRecord obj;
    obj.class_id = draw_class(rng, c.class_prior);
    obj.shape_seed = rng.next_u64();
    const double base = rng.uniform(c.object_size_min, c.object_size_max);
    for (auto& s : obj.box.size) s = base * rng.uniform(0.8, 1.2);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    obj.box.rotation = {std::cos(angle), std::sin(angle)};
    const auto half = footprint_half_extents(obj.box);
    const double room_x = floor.half_width - half[0], room_z = floor.half_depth - half[1];
    for (std::size_t attempt = 0; attempt < c.placement_attempts && room_x > 0.0 && room_z > 0.0; ++attempt) {
      obj.box.translation = {floor.center[0] + rng.uniform(-room_x, room_x), obj.box.size[1],
                             floor.center[1] + rng.uniform(-room_z, room_z)};
      bool clear = true;
      for (const auto& other : objects)
        if (footprints_overlap(obj.box, other.box)) {
          clear = false;
          break;
        }
      if (clear) {
        objects.push_back(std::move(obj));
        break;
      }
    }
  }
  return objects;
}

/// Layouts that end below min_objects are redrawn, at most
/// placement_attempts times.
SceneRecord make_scene(std::size_t index, std::uint64_t seed, const DatasetConfig& c) {
  Rng rng(mix_seed(seed, 0xd47a0000ull + index));
  SceneRecord scene;
  scene.scene_id = "scene_" + std::to_string(index);
  scene.floor.half_width = rng.uniform(c.floor_min, c.floor_max);
  scene.floor.half_depth = rng.uniform(c.floor_min, c.floor_max);
  for (std::size_t draw = 0; draw < c.placement_attempts; ++draw) {
    scene.objects = draw_layout(rng, scene.floor, c);
    if (scene.objects.size() >= c.min_objects) return scene;
  }
  throw std::runtime_error("gen_dataset: could not place " + std::to_string(c.min_objects) + " objects in " +
                           scene.scene_id + " within " + std::to_string(c.placement_attempts) + " attempts");
}

json box_json(const ObjectRecord& o) {
  json j;
  j["class"] = std::string(shape_name(o.class_id));
  j["T"] = o.box.translation;
  j["R"] = o.box.rotation;
  j["S"] = o.box.size;
  j["shape_seed"] = o.shape_seed;
  if (!o.feature.empty()) j["F"] = o.feature;
  if (o.codebook_index) j["codebook_index"] = *o.codebook_index;
  return j;
}

int class_from_name(const std::string& name) {
  for (int c = 0; c < kShapeKindCount; ++c)
    if (shape_name(c) == name) return c;
  throw std::invalid_argument("scene json: unknown class '" + name + "'");
}

json scene_json(const SceneRecord& s) {
  json j;
  j["scene_id"] = s.scene_id;
  j["floor_plan"] = {{"w", s.floor.half_width}, {"d", s.floor.half_depth}, {"center", s.floor.center}};
  j["objects"] = json::array();
  for (const auto& o : s.objects) j["objects"].push_back(box_json(o));
  return j;
}

SceneRecord scene_from(const json& j) {
  SceneRecord s;
  s.scene_id = j.at("scene_id").get<std::string>();
  const auto& fp = j.at("floor_plan");
  s.floor.half_width = fp.at("w").get<double>();
  s.floor.half_depth = fp.at("d").get<double>();
  s.floor.center = fp.at("center").get<std::array<double, 2>>();
  for (const auto& o : j.at("objects")) {
    ObjectRecord r;
    r.class_id = class_from_name(o.at("class").get<std::string>());
    r.box.translation = o.at("T").get<Point3>();
    r.box.rotation = o.at("R").get<std::array<double, 2>>();
    r.box.size = o.at("S").get<Point3>();
    if (o.contains("shape_seed")) r.shape_seed = o.at("shape_seed").get<std::uint64_t>();
    if (o.contains("F")) r.feature = o.at("F").get<std::vector<double>>();
    if (o.contains("codebook_index")) r.codebook_index = o.at("codebook_index").get<std::size_t>();
    s.objects.push_back(std::move(r));
  }
  return s;
}

}  // namespace

SceneDataset gen_dataset(std::size_t n_scenes, std::uint64_t seed, const DatasetConfig& config) {
  if (n_scenes == 0) throw std::invalid_argument("gen_dataset: n_scenes must be at least 1");
  validate(config);
  const auto n_test = static_cast<std::size_t>(std::llround(config.test_fraction * static_cast<double>(n_scenes)));
  SceneDataset data;
  for (std::size_t i = 0; i < n_scenes; ++i) {
    auto scene = make_scene(i, seed, config);
    (i < n_scenes - n_test ? data.train : data.test).push_back(std::move(scene));
  }
  return data;
}

std::vector<double> class_histogram(const std::vector<SceneRecord>& scenes, int num_classes) {
  std::vector<double> h(static_cast<std::size_t>(num_classes), 0.0);
  for (const auto& s : scenes)
    for (const auto& o : s.objects) h.at(static_cast<std::size_t>(o.class_id)) += 1.0;
  return h;
}

std::vector<PointCloud> object_clouds(const std::vector<SceneRecord>& scenes, std::size_t points) {
  std::vector<PointCloud> out;
  for (const auto& s : scenes)
    for (const auto& o : s.objects) out.push_back(generate_shape(o.class_id, o.shape_seed, points));
  return out;
}

std::string scene_to_json(const SceneRecord& scene) { return scene_json(scene).dump(2) + "\n"; }

SceneRecord scene_from_json(const std::string& text) { return scene_from(json::parse(text)); }

std::string scenes_to_json(const std::vector<SceneRecord>& scenes) {
  json j = json::array();
  for (const auto& s : scenes) j.push_back(scene_json(s));
  return j.dump(1) + "\n";
}

std::vector<SceneRecord> scenes_from_json(const std::string& text) {
  std::vector<SceneRecord> out;
  for (const auto& j : json::parse(text)) out.push_back(scene_from(j));
  return out;
}

void save_dataset(const SceneDataset& data, const std::filesystem::path& dir) {
  write_file_atomic(dir / "train.json", scenes_to_json(data.train));
  write_file_atomic(dir / "test.json", scenes_to_json(data.test));
}

SceneDataset load_dataset(const std::filesystem::path& dir) {
  return {scenes_from_json(read_file(dir / "train.json")), scenes_from_json(read_file(dir / "test.json"))};
}

}  // namespace cpvq
