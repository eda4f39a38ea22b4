// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cpvq/autoencoder.hpp"
#include "cpvq/bundle.hpp"
#include "cpvq/config.hpp"
#include "cpvq/dataset.hpp"
#include "cpvq/flowmatch.hpp"

namespace cpvq {

namespace files {
inline constexpr const char* kAutoencoderBundle = "cpvqvae.bundle";
inline constexpr const char* kAutoencoderHistory = "cpvqvae_history.csv";
inline constexpr const char* kFlowBundle = "lfmm.bundle";
inline constexpr const char* kFlowHistory = "lfmm_loss.csv";
inline constexpr const char* kSampledScenes = "scenes.json";
inline constexpr const char* kSceneDir = "scenes";
inline constexpr const char* kMetricsCsv = "metrics.csv";
inline constexpr const char* kMetricsSummary = "summary.txt";
inline constexpr const char* kAblationCsv = "ablation.csv";
inline constexpr const char* kSweepCsv = "sweep.csv";
}  // namespace files

AutoencoderConfig autoencoder_config(const Config& config);
VelocityNetConfig velocity_config(const Config& config);
FlowTrainConfig flow_train_config(const Config& config);
AttributeWeights attribute_weights(const Config& config);

/// Trained latent flow model together with the tuple layout and scaling it
/// was trained under.
struct FlowModel {
  VelocityNet net;
  TupleLayout layout;
  TupleScaling scaling;
};

ModelBundle autoencoder_bundle(const PointAutoencoder& model, const Config& config);
PointAutoencoder autoencoder_from_bundle(const ModelBundle& bundle);
ModelBundle flow_bundle(const FlowModel& model, const Config& config);
FlowModel flow_from_bundle(const ModelBundle& bundle);

/// Generates the dataset and writes train.json / test.json into `out`.
SceneDataset run_gen_data(const Config& config, const std::filesystem::path& out);

/// Trains on the canonical clouds of every training object. Writes the
/// bundle and per-epoch history CSV when `out` is non-empty.
AutoencoderTraining run_train_cpvqvae(const SceneDataset& data, const Config& config, Variant variant,
                                      const std::filesystem::path& out);

/// Flow-model training input: each scene's objects carry the truncated
/// quantized latent of their canonical cloud and are ordered by class id,
/// then translation x, then z.
std::vector<std::vector<SceneObject>> latent_scenes(const std::vector<SceneRecord>& scenes,
                                                    const PointAutoencoder& model);

struct FlowTrainingRun {
  FlowModel model;
  std::vector<double> loss_history;
};

/// Trailing moving average with window `window` (shorter at the start).
std::vector<double> moving_average(std::span<const double> values, std::size_t window);

/// Throws std::logic_error when `autoencoder` is untrained.
FlowTrainingRun run_train_lfmm(const SceneDataset& data, const PointAutoencoder& autoencoder, const Config& config,
                               const std::filesystem::path& out);

struct GeneratedScene {
  SceneRecord record;                  ///< objects carry F and, for VQ models, codebook_index
  std::vector<PointCloud> canonical;   ///< decoded cloud of each object in its unit frame
};

/// Floor plans of `scenes`, cycled to `count` entries.
std::vector<FloorPlan> floor_plans(const std::vector<SceneRecord>& scenes, std::size_t count);

/// Sample, finalize, look up, decode. Scene i uses noise keyed by (seed, i).
std::vector<GeneratedScene> generate_scenes(const PointAutoencoder& autoencoder, const FlowModel& flow,
                                            std::span<const FloorPlan> floors, std::size_t steps, std::uint64_t seed,
                                            bool normalized_lookup = false);

/// generate_scenes plus output: scenes.json and, when write_ply is set,
/// scenes/<id>/object_<k>.ply and scenes/<id>.ply with placed points.
std::vector<GeneratedScene> run_sample(const PointAutoencoder& autoencoder, const FlowModel& flow,
                                       std::span<const FloorPlan> floors, const Config& config,
                                       const std::filesystem::path& out);

/// The canonical cloud an evaluated object stands for: the decoded codevector
/// when codebook_index is set, the decoded looked-up feature when only F is
/// set, and the ground-truth shape otherwise.
PointCloud object_cloud(const ObjectRecord& object, const PointAutoencoder& autoencoder);

struct EvalOptions {
  std::size_t prototype_points = 2048;
  std::size_t bank_per_class = 16;  ///< 0 keeps every test object
  bool normalized_lookup = false;

  static EvalOptions from(const Config& config);
};

struct EvalReport {
  std::size_t scenes = 0;
  std::size_t objects = 0;
  double chamfer = 0.0;        ///< mean CD to the nearest same-class reference
  double point2mesh = 0.0;     ///< mean P2M to that reference's mesh
  double ckl = 0.0;            ///< KL(generated classes || test classes)
  double class_consistency = 0.0;
  double utilization = 0.0;    ///< active codevector fraction; 0 for V1
  std::vector<double> generated_histogram;
  std::vector<double> data_histogram;

  /// CD and P2M are reported x10^3 and CKL x10^2.
  std::string csv() const;
  std::string summary() const;
};

/// Throws std::invalid_argument when `generated` has no objects.
EvalReport evaluate(const std::vector<SceneRecord>& generated, const std::vector<SceneRecord>& test,
                    const PointAutoencoder& autoencoder, const EvalOptions& options);

EvalReport run_eval(const std::vector<SceneRecord>& generated, const std::vector<SceneRecord>& test,
                    const PointAutoencoder& autoencoder, const Config& config, const std::filesystem::path& out);

std::vector<SceneRecord> records_of(const std::vector<GeneratedScene>& scenes);

struct AblationRow {
  Variant variant = Variant::v4;
  double active_fraction = 0.0;
  double test_round_trip = 0.0;
  double train_seconds = 0.0;
  EvalReport report;
};

struct SweepRow {
  std::size_t steps = 0;
  double seconds = 0.0;  ///< ODE integration only
  double ckl = 0.0;
  double class_consistency = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> variants;
  std::vector<SweepRow> sweep;
};

/// Euler-step sweep: times sample_scenes for each step count, then decodes
/// and evaluates the resulting scenes.
std::vector<SweepRow> step_sweep(const PointAutoencoder& autoencoder, const FlowModel& flow,
                                 std::span<const FloorPlan> floors, const std::vector<SceneRecord>& test,
                                 std::span<const std::size_t> steps, std::uint64_t seed, const EvalOptions& options);

/// Trains and evaluates the full pipeline for every variant in `variants`,
/// then runs the step sweep on the last one. Writes ablation.csv and sweep.csv.
AblationResult run_ablate(const SceneDataset& data, const Config& config, std::span<const Variant> variants,
                          const std::filesystem::path& out);

}  // namespace cpvq
