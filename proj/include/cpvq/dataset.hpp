// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cpvq/config.hpp"
#include "cpvq/geometry.hpp"

namespace cpvq {

struct ObjectRecord {
  int class_id = 0;
  BoundingBox box;
  std::uint64_t shape_seed = 0;  ///< canonical cloud is generate_shape(class_id, shape_seed, N_P)
  std::vector<double> feature;   ///< optional latent prefix
  std::optional<std::size_t> codebook_index;
};

struct SceneRecord {
  std::string scene_id;
  FloorPlan floor;
  std::vector<ObjectRecord> objects;
};

struct SceneDataset {
  std::vector<SceneRecord> train;
  std::vector<SceneRecord> test;
};

struct DatasetConfig {
  std::size_t scenes = 1000;
  double test_fraction = 0.2;
  std::size_t min_objects = 2;
  std::size_t max_objects = 8;
  std::vector<double> class_prior{0.2, 0.2, 0.2, 0.2, 0.2};
  double floor_min = 2.0;
  double floor_max = 4.0;
  double object_size_min = 0.3;
  double object_size_max = 0.8;
  std::size_t placement_attempts = 1000;

  static DatasetConfig from(const Config& config);
};

/// Floor-plane (x-z) half-widths of an object's footprint after rotation.
std::array<double, 2> footprint_half_extents(const BoundingBox& box);
bool footprints_overlap(const BoundingBox& a, const BoundingBox& b);

/// Scenes with class-prior objects placed by rejection sampling: each object
/// gets up to placement_attempts tries to land inside the floor without
/// overlapping earlier footprints, and is skipped otherwise. A layout left
/// with fewer than min_objects is redrawn, up to placement_attempts times,
/// before this throws. Objects rest on the floor (T_y = S_y).
SceneDataset gen_dataset(std::size_t n_scenes, std::uint64_t seed, const DatasetConfig& config);

/// Class histogram (one bin per shape class) over every object.
std::vector<double> class_histogram(const std::vector<SceneRecord>& scenes, int num_classes = kShapeKindCount);

/// Canonical clouds of every object, scene by scene.
std::vector<PointCloud> object_clouds(const std::vector<SceneRecord>& scenes, std::size_t points);

std::string scene_to_json(const SceneRecord& scene);
SceneRecord scene_from_json(const std::string& text);
std::string scenes_to_json(const std::vector<SceneRecord>& scenes);
std::vector<SceneRecord> scenes_from_json(const std::string& text);

/// train.json and test.json inside `dir`.
void save_dataset(const SceneDataset& data, const std::filesystem::path& dir);
SceneDataset load_dataset(const std::filesystem::path& dir);

}  // namespace cpvq
