// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "cpvq/rng.hpp"
#include "cpvq/tensor.hpp"

namespace cpvq {

using Point3 = std::array<double, 3>;

/// Procedural shape classes. Class ids are 0-based indices into this list.
enum class ShapeKind : int { box = 0, sphere, cylinder, cone, torus };
inline constexpr int kShapeKindCount = 5;

std::string_view shape_name(int class_id);

struct PointCloud {
  std::vector<Point3> points;
  int class_id = 0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct TriangleMesh {
  std::vector<Point3> vertices;
  std::vector<std::array<std::uint32_t, 3>> faces;
};

/// Object placement: size is per-axis half-extent, rotation is
/// (cos g, sin g) about the vertical +y axis.
struct BoundingBox {
  Point3 translation{0.0, 0.0, 0.0};
  std::array<double, 2> rotation{1.0, 0.0};
  Point3 size{1.0, 1.0, 1.0};
};

/// Axis-aligned rectangular floor in the x-z plane.
struct FloorPlan {
  double half_width = 1.0;
  double half_depth = 1.0;
  std::array<double, 2> center{0.0, 0.0};

  /// Conditioning vector fed to the velocity network.
  std::array<double, 2> conditioning(double scene_scale) const {
    return {half_width / scene_scale, half_depth / scene_scale};
  }
};

/// Dimensions of one procedural shape instance.
///   box:      half-extents (x, y, z)
///   sphere:   radius in dims[0]
///   cylinder: radius, half-height
///   cone:     base radius, half-height (apex on +y)
///   torus:    major radius, minor radius (ring in the x-z plane)
struct ShapeParams {
  int class_id = 0;
  std::array<double, 3> dims{1.0, 1.0, 1.0};
};

/// Per-class parameter jitter drawn from `seed`. Every result fits inside
/// the unit cube with its largest half-extent in [0.9, 1].
ShapeParams jittered_params(int class_id, std::uint64_t seed);
/// Mid-range parameters of a class.
ShapeParams prototype_params(int class_id);

/// Samples `n` points uniformly by area on the analytic surface.
PointCloud sample_surface(const ShapeParams& params, std::size_t n, Rng& rng);
/// Jittered canonical shape; bitwise deterministic in (class_id, seed, n).
PointCloud generate_shape(int class_id, std::uint64_t seed, std::size_t n);
PointCloud prototype_shape(int class_id, std::size_t n, std::uint64_t sample_seed = 0);

/// Tessellation of the analytic surface with all vertices on it.
TriangleMesh shape_mesh(const ShapeParams& params, int segments = 32);

/// Mean squared nearest-neighbour distance from a to b plus from b to a.
double chamfer_distance(const PointCloud& a, const PointCloud& b);
double chamfer_distance(std::span<const Point3> a, std::span<const Point3> b);

/// Squared distance from p to the closest point of triangle (a, b, c).
double point_triangle_distance_sq(const Point3& p, const Point3& a, const Point3& b, const Point3& c);
/// Mean over points of the squared distance to the nearest triangle.
double point2mesh_distance(const PointCloud& points, const TriangleMesh& mesh);

/// Scale per axis, rotate about +y, then translate.
PointCloud apply_bbox(const PointCloud& canonical, const BoundingBox& box);
PointCloud invert_bbox(const PointCloud& placed, const BoundingBox& box);
std::array<double, 2> normalize_rotation(std::array<double, 2> r);

/// KL(generated || data) over class frequencies, each smoothed by 1e-6.
double categorical_kl(std::span<const double> generated_counts, std::span<const double> data_counts);

/// Batched differentiable Chamfer loss: pred (B, N, 3), target (B, M, 3);
/// returns the batch mean of chamfer_distance. Ties go to the lowest index.
Tensor chamfer_loss(const Tensor& pred, const Tensor& target);

Tensor to_tensor(std::span<const PointCloud> clouds);
PointCloud cloud_from(std::span<const double> xyz, int class_id = 0);

}  // namespace cpvq
