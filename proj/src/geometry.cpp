// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#include "cpvq/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace cpvq {

namespace {

constexpr double kPi = std::numbers::pi;

void require_class(int class_id) {
  if (class_id < 0 || class_id >= kShapeKindCount)
    throw std::invalid_argument("unknown shape class " + std::to_string(class_id));
}

double dist_sq(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

Point3 sub3(const Point3& a, const Point3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
double dot3(const Point3& a, const Point3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

// Mean over a of the squared distance to the nearest point of b.
double one_sided(std::span<const Point3> a, std::span<const Point3> b) {
  double total = 0.0;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) best = std::min(best, dist_sq(p, q));
    total += best;
  }
  return total / static_cast<double>(a.size());
}

// Two ratios in [lo, 1] scaled so the larger one becomes `extent`.
std::array<double, 2> ratio_pair(Rng& rng, double lo, double extent) {
  const double a = rng.uniform(lo, 1.0);
  const double b = rng.uniform(lo, 1.0);
  const double m = std::max(a, b);
  return {extent * a / m, extent * b / m};
}

Point3 on_ring(double radius, double angle, double y) {
  return {radius * std::cos(angle), y, radius * std::sin(angle)};
}

}  // namespace

std::string_view shape_name(int class_id) {
  static constexpr std::array<std::string_view, kShapeKindCount> names{"box", "sphere", "cylinder", "cone", "torus"};
  require_class(class_id);
  return names[static_cast<std::size_t>(class_id)];
}

ShapeParams jittered_params(int class_id, std::uint64_t seed) {
  require_class(class_id);
  Rng rng(mix_seed(seed, 0x5eed0000u + static_cast<std::uint64_t>(class_id)));
  const double extent = rng.uniform(0.9, 1.0);
  ShapeParams p{class_id, {}};
  switch (static_cast<ShapeKind>(class_id)) {
    case ShapeKind::box: {
      std::array<double, 3> u{rng.uniform(0.85, 1.0), rng.uniform(0.85, 1.0), rng.uniform(0.85, 1.0)};
      const double m = std::max({u[0], u[1], u[2]});
      p.dims = {extent * u[0] / m, extent * u[1] / m, extent * u[2] / m};
      break;
    }
    case ShapeKind::sphere:
      p.dims = {extent, extent, extent};
      break;
    case ShapeKind::cylinder:
      // Tall and slender.
      p.dims = {extent * rng.uniform(0.5, 0.65), extent, 0.0};
      break;
    case ShapeKind::cone: {
      const auto rh = ratio_pair(rng, 0.8, extent);
      p.dims = {rh[0], rh[1], 0.0};
      break;
    }
    case ShapeKind::torus: {
      const double ratio = rng.uniform(0.28, 0.36);
      const double major = extent / (1.0 + ratio);
      p.dims = {major, ratio * major, 0.0};
      break;
    }
  }
  return p;
}

ShapeParams prototype_params(int class_id) {
  require_class(class_id);
  switch (static_cast<ShapeKind>(class_id)) {
    case ShapeKind::box: return {class_id, {0.95, 0.95, 0.95}};
    case ShapeKind::sphere: return {class_id, {0.95, 0.95, 0.95}};
    case ShapeKind::cylinder: return {class_id, {0.95 * 0.575, 0.95, 0.0}};
    case ShapeKind::cone: return {class_id, {0.95, 0.95, 0.0}};
    case ShapeKind::torus: {
      const double ratio = 0.32;
      const double major = 0.95 / (1.0 + ratio);
      return {class_id, {major, ratio * major, 0.0}};
    }
  }
  return {};
}

PointCloud sample_surface(const ShapeParams& params, std::size_t n, Rng& rng) {
  require_class(params.class_id);
  PointCloud cloud;
  cloud.class_id = params.class_id;
  cloud.points.reserve(n);
  const auto& d = params.dims;
  switch (static_cast<ShapeKind>(params.class_id)) {
    case ShapeKind::box: {
      // Face pairs normal to x, y, z weighted by area.
      const std::array<double, 3> area{d[1] * d[2], d[0] * d[2], d[0] * d[1]};
      const double total = area[0] + area[1] + area[2];
      for (std::size_t i = 0; i < n; ++i) {
        const double pick = rng.uniform() * total;
        const int axis = pick < area[0] ? 0 : (pick < area[0] + area[1] ? 1 : 2);
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        Point3 p{};
        for (int k = 0; k < 3; ++k) p[k] = k == axis ? sign * d[k] : rng.uniform(-d[k], d[k]);
        cloud.points.push_back(p);
      }
      break;
    }
    case ShapeKind::sphere: {
      for (std::size_t i = 0; i < n; ++i) {
        Point3 v{};
        double norm = 0.0;
        while (norm < 1e-12) {
          v = {rng.normal(), rng.normal(), rng.normal()};
          norm = std::sqrt(dot3(v, v));
        }
        cloud.points.push_back({d[0] * v[0] / norm, d[0] * v[1] / norm, d[0] * v[2] / norm});
      }
      break;
    }
    case ShapeKind::cylinder: {
      const double r = d[0], h = d[1];
      const double side = 2.0 * kPi * r * 2.0 * h;
      const double caps = 2.0 * kPi * r * r;
      for (std::size_t i = 0; i < n; ++i) {
        const double angle = rng.uniform(0.0, 2.0 * kPi);
        if (rng.uniform() * (side + caps) < side) {
          cloud.points.push_back(on_ring(r, angle, rng.uniform(-h, h)));
        } else {
          const double y = rng.uniform() < 0.5 ? -h : h;
          cloud.points.push_back(on_ring(r * std::sqrt(rng.uniform()), angle, y));
        }
      }
      break;
    }
    case ShapeKind::cone: {
      const double r = d[0], h = d[1];
      const double slant = std::sqrt(r * r + 4.0 * h * h);
      const double side = kPi * r * slant;
      const double base = kPi * r * r;
      for (std::size_t i = 0; i < n; ++i) {
        const double angle = rng.uniform(0.0, 2.0 * kPi);
        const double v = std::sqrt(rng.uniform());
        if (rng.uniform() * (side + base) < side) {
          cloud.points.push_back(on_ring(r * v, angle, h - 2.0 * h * v));
        } else {
          cloud.points.push_back(on_ring(r * v, angle, -h));
        }
      }
      break;
    }
    case ShapeKind::torus: {
      const double major = d[0], minor = d[1];
      for (std::size_t i = 0; i < n; ++i) {
        double tube = 0.0;
        // Area element is proportional to (R + r cos(tube)).
        for (;;) {
          tube = rng.uniform(0.0, 2.0 * kPi);
          if (rng.uniform() * (major + minor) <= major + minor * std::cos(tube)) break;
        }
        const double around = rng.uniform(0.0, 2.0 * kPi);
        cloud.points.push_back(on_ring(major + minor * std::cos(tube), around, minor * std::sin(tube)));
      }
      break;
    }
  }
  return cloud;
}

PointCloud generate_shape(int class_id, std::uint64_t seed, std::size_t n) {
  const auto params = jittered_params(class_id, seed);
  Rng rng(mix_seed(seed, 0xc10d0000u + static_cast<std::uint64_t>(class_id)));
  return sample_surface(params, n, rng);
}

PointCloud prototype_shape(int class_id, std::size_t n, std::uint64_t sample_seed) {
  Rng rng(mix_seed(sample_seed, 0x9707u + static_cast<std::uint64_t>(class_id)));
  return sample_surface(prototype_params(class_id), n, rng);
}

TriangleMesh shape_mesh(const ShapeParams& params, int segments) {
  require_class(params.class_id);
  if (segments < 3) throw std::invalid_argument("shape_mesh: need at least 3 segments");
  TriangleMesh mesh;
  auto& v = mesh.vertices;
  auto& f = mesh.faces;
  const auto seg = static_cast<std::uint32_t>(segments);
  const auto& d = params.dims;
  auto ring_angle = [&](std::uint32_t i) { return 2.0 * kPi * i / seg; };

  switch (static_cast<ShapeKind>(params.class_id)) {
    case ShapeKind::box: {
      for (int i = 0; i < 8; ++i)
        v.push_back({(i & 1) ? d[0] : -d[0], (i & 2) ? d[1] : -d[1], (i & 4) ? d[2] : -d[2]});
      f = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
           {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
      break;
    }
    case ShapeKind::sphere: {
      const std::uint32_t stacks = std::max<std::uint32_t>(2, seg / 2);
      v.push_back({0.0, d[0], 0.0});
      for (std::uint32_t s = 1; s < stacks; ++s) {
        const double polar = kPi * s / stacks;
        for (std::uint32_t i = 0; i < seg; ++i)
          v.push_back(on_ring(d[0] * std::sin(polar), ring_angle(i), d[0] * std::cos(polar)));
      }
      v.push_back({0.0, -d[0], 0.0});
      const auto bottom = static_cast<std::uint32_t>(v.size() - 1);
      auto at = [&](std::uint32_t s, std::uint32_t i) { return 1 + (s - 1) * seg + i % seg; };
      for (std::uint32_t i = 0; i < seg; ++i) f.push_back({0, at(1, i + 1), at(1, i)});
      for (std::uint32_t s = 1; s + 1 < stacks; ++s)
        for (std::uint32_t i = 0; i < seg; ++i) {
          f.push_back({at(s, i), at(s, i + 1), at(s + 1, i)});
          f.push_back({at(s, i + 1), at(s + 1, i + 1), at(s + 1, i)});
        }
      for (std::uint32_t i = 0; i < seg; ++i) f.push_back({bottom, at(stacks - 1, i), at(stacks - 1, i + 1)});
      break;
    }
    case ShapeKind::cylinder: {
      const double r = d[0], h = d[1];
      for (std::uint32_t i = 0; i < seg; ++i) v.push_back(on_ring(r, ring_angle(i), h));
      for (std::uint32_t i = 0; i < seg; ++i) v.push_back(on_ring(r, ring_angle(i), -h));
      v.push_back({0.0, h, 0.0});
      v.push_back({0.0, -h, 0.0});
      const std::uint32_t top_c = 2 * seg, bot_c = 2 * seg + 1;
      for (std::uint32_t i = 0; i < seg; ++i) {
        const std::uint32_t j = (i + 1) % seg;
        f.push_back({i, j, seg + i});
        f.push_back({j, seg + j, seg + i});
        f.push_back({top_c, j, i});
        f.push_back({bot_c, seg + i, seg + j});
      }
      break;
    }
    case ShapeKind::cone: {
      const double r = d[0], h = d[1];
      for (std::uint32_t i = 0; i < seg; ++i) v.push_back(on_ring(r, ring_angle(i), -h));
      v.push_back({0.0, h, 0.0});
      v.push_back({0.0, -h, 0.0});
      const std::uint32_t apex = seg, base_c = seg + 1;
      for (std::uint32_t i = 0; i < seg; ++i) {
        const std::uint32_t j = (i + 1) % seg;
        f.push_back({apex, j, i});
        f.push_back({base_c, i, j});
      }
      break;
    }
    case ShapeKind::torus: {
      const double major = d[0], minor = d[1];
      const std::uint32_t tube = std::max<std::uint32_t>(3, seg / 2);
      for (std::uint32_t i = 0; i < seg; ++i)
        for (std::uint32_t t = 0; t < tube; ++t) {
          const double a = 2.0 * kPi * t / tube;
          v.push_back(on_ring(major + minor * std::cos(a), ring_angle(i), minor * std::sin(a)));
        }
      auto at = [&](std::uint32_t i, std::uint32_t t) { return (i % seg) * tube + t % tube; };
      for (std::uint32_t i = 0; i < seg; ++i)
        for (std::uint32_t t = 0; t < tube; ++t) {
          f.push_back({at(i, t), at(i + 1, t), at(i, t + 1)});
          f.push_back({at(i + 1, t), at(i + 1, t + 1), at(i, t + 1)});
        }
      break;
    }
  }
  return mesh;
}

double chamfer_distance(std::span<const Point3> a, std::span<const Point3> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer_distance: empty point cloud");
  return one_sided(a, b) + one_sided(b, a);
}

double chamfer_distance(const PointCloud& a, const PointCloud& b) { return chamfer_distance(a.points, b.points); }

double point_triangle_distance_sq(const Point3& p, const Point3& a, const Point3& b, const Point3& c) {
  // Voronoi-region walk over the triangle's vertices, edges, and face.
  const Point3 ab = sub3(b, a), ac = sub3(c, a), ap = sub3(p, a);
  const double d1 = dot3(ab, ap), d2 = dot3(ac, ap);
  if (d1 <= 0.0 && d2 <= 0.0) return dist_sq(p, a);

  const Point3 bp = sub3(p, b);
  const double d3 = dot3(ab, bp), d4 = dot3(ac, bp);
  if (d3 >= 0.0 && d4 <= d3) return dist_sq(p, b);

  auto at = [&](double s, double t) {
    return Point3{a[0] + s * ab[0] + t * ac[0], a[1] + s * ab[1] + t * ac[1], a[2] + s * ab[2] + t * ac[2]};
  };

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return dist_sq(p, at(d1 / (d1 - d3), 0.0));

  const Point3 cp = sub3(p, c);
  const double d5 = dot3(ab, cp), d6 = dot3(ac, cp);
  if (d6 >= 0.0 && d5 <= d6) return dist_sq(p, c);

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return dist_sq(p, at(0.0, d2 / (d2 - d6)));

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    const Point3 q{b[0] + w * (c[0] - b[0]), b[1] + w * (c[1] - b[1]), b[2] + w * (c[2] - b[2])};
    return dist_sq(p, q);
  }

  const double denom = 1.0 / (va + vb + vc);
  return dist_sq(p, at(vb * denom, vc * denom));
}

double point2mesh_distance(const PointCloud& points, const TriangleMesh& mesh) {
  if (points.empty() || mesh.faces.empty()) throw std::invalid_argument("point2mesh_distance: empty input");
  double total = 0.0;
  for (const auto& p : points.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& tri : mesh.faces)
      best = std::min(best, point_triangle_distance_sq(p, mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                                       mesh.vertices[tri[2]]));
    total += best;
  }
  return total / static_cast<double>(points.size());
}

std::array<double, 2> normalize_rotation(std::array<double, 2> r) {
  const double norm = std::hypot(r[0], r[1]);
  if (norm > 1e-8) return {r[0] / norm, r[1] / norm};
  return {1.0, 0.0};
}

namespace {

void require_unit_rotation(const BoundingBox& box) {
  const double n2 = box.rotation[0] * box.rotation[0] + box.rotation[1] * box.rotation[1];
  if (std::abs(n2 - 1.0) > 1e-6)
    throw std::invalid_argument("bounding box rotation is not normalized; apply normalize_rotation first");
}

}  // namespace

PointCloud apply_bbox(const PointCloud& canonical, const BoundingBox& box) {
  require_unit_rotation(box);
  const double c = box.rotation[0], s = box.rotation[1];
  PointCloud out;
  out.class_id = canonical.class_id;
  out.points.reserve(canonical.size());
  for (const auto& p : canonical.points) {
    const double x = p[0] * box.size[0], y = p[1] * box.size[1], z = p[2] * box.size[2];
    out.points.push_back({c * x + s * z + box.translation[0], y + box.translation[1], -s * x + c * z + box.translation[2]});
  }
  return out;
}

PointCloud invert_bbox(const PointCloud& placed, const BoundingBox& box) {
  require_unit_rotation(box);
  const double c = box.rotation[0], s = box.rotation[1];
  PointCloud out;
  out.class_id = placed.class_id;
  out.points.reserve(placed.size());
  for (const auto& p : placed.points) {
    const double x = p[0] - box.translation[0], y = p[1] - box.translation[1], z = p[2] - box.translation[2];
    out.points.push_back({(c * x - s * z) / box.size[0], y / box.size[1], (s * x + c * z) / box.size[2]});
  }
  return out;
}

double categorical_kl(std::span<const double> generated_counts, std::span<const double> data_counts) {
  constexpr double kSmoothing = 1e-6;
  if (generated_counts.size() != data_counts.size() || generated_counts.empty())
    throw std::invalid_argument("categorical_kl: histograms must have the same nonzero length");
  auto smoothed = [&](std::span<const double> h) {
    double total = 0.0;
    for (double v : h) {
      if (v < 0.0) throw std::invalid_argument("categorical_kl: negative count");
      total += v;
    }
    if (total <= 0.0) throw std::invalid_argument("categorical_kl: all-zero histogram");
    std::vector<double> p(h.size());
    double norm = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) norm += p[i] = h[i] / total + kSmoothing;
    for (double& v : p) v /= norm;
    return p;
  };
  const auto p = smoothed(generated_counts);
  const auto q = smoothed(data_counts);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return std::max(kl, 0.0);
}

Tensor chamfer_loss(const Tensor& pred, const Tensor& target) {
  if (pred.rank() != 3 || target.rank() != 3 || pred.dim(2) != 3 || target.dim(2) != 3 ||
      pred.dim(0) != target.dim(0))
    throw std::invalid_argument("chamfer_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                                shape_str(target.shape()));
  const std::size_t batch = pred.dim(0), n = pred.dim(1), m = target.dim(1);
  if (batch == 0 || n == 0 || m == 0) throw std::invalid_argument("chamfer_loss: empty point cloud");

  const auto a = pred.data(), b = target.data();
  std::vector<std::uint32_t> nn_ab(batch * n), nn_ba(batch * m);
  double total = 0.0;
  for (std::size_t s = 0; s < batch; ++s) {
    const double* pa = a.data() + s * n * 3;
    const double* pb = b.data() + s * m * 3;
    // Squared distances for this pair of clouds; both directions read it.
    std::vector<double> d(n * m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double dx = pa[3 * i] - pb[3 * j], dy = pa[3 * i + 1] - pb[3 * j + 1], dz = pa[3 * i + 2] - pb[3 * j + 2];
        d[i * m + j] = dx * dx + dy * dy + dz * dz;
      }
    double forward = 0.0, reverse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < m; ++j)
        if (d[i * m + j] < d[i * m + best]) best = j;
      nn_ab[s * n + i] = static_cast<std::uint32_t>(best);
      forward += d[i * m + best];
    }
    for (std::size_t j = 0; j < m; ++j) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (d[i * m + j] < d[best * m + j]) best = i;
      nn_ba[s * m + j] = static_cast<std::uint32_t>(best);
      reverse += d[best * m + j];
    }
    total += forward / static_cast<double>(n) + reverse / static_cast<double>(m);
  }
  total /= static_cast<double>(batch);

  return record_op(
      OpKind::custom, {pred, target}, {}, {total},
      [pred, target, batch, n, m, nn_ab = std::move(nn_ab), nn_ba = std::move(nn_ba)](
          std::span<const double> g, std::span<const double>, std::span<std::vector<double>*> gin) {
        const auto a = pred.data(), b = target.data();
        const double wa = 2.0 * g[0] / (static_cast<double>(batch) * static_cast<double>(n));
        const double wb = 2.0 * g[0] / (static_cast<double>(batch) * static_cast<double>(m));
        for (std::size_t s = 0; s < batch; ++s) {
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t ia = (s * n + i) * 3, jb = (s * m + nn_ab[s * n + i]) * 3;
            for (int k = 0; k < 3; ++k) {
              const double diff = a[ia + k] - b[jb + k];
              if (gin[0]) (*gin[0])[ia + k] += wa * diff;
              if (gin[1]) (*gin[1])[jb + k] -= wa * diff;
            }
          }
          for (std::size_t j = 0; j < m; ++j) {
            const std::size_t jb = (s * m + j) * 3, ia = (s * n + nn_ba[s * m + j]) * 3;
            for (int k = 0; k < 3; ++k) {
              const double diff = b[jb + k] - a[ia + k];
              if (gin[1]) (*gin[1])[jb + k] += wb * diff;
              if (gin[0]) (*gin[0])[ia + k] -= wb * diff;
            }
          }
        }
      });
}

Tensor to_tensor(std::span<const PointCloud> clouds) {
  if (clouds.empty()) throw std::invalid_argument("to_tensor: no clouds");
  const std::size_t n = clouds.front().size();
  std::vector<double> values;
  values.reserve(clouds.size() * n * 3);
  for (const auto& c : clouds) {
    if (c.size() != n) throw std::invalid_argument("to_tensor: clouds differ in point count");
    for (const auto& p : c.points) values.insert(values.end(), p.begin(), p.end());
  }
  return Tensor::from({clouds.size(), n, 3}, std::move(values));
}

PointCloud cloud_from(std::span<const double> xyz, int class_id) {
  if (xyz.size() % 3 != 0) throw std::invalid_argument("cloud_from: length is not a multiple of 3");
  PointCloud cloud;
  cloud.class_id = class_id;
  cloud.points.reserve(xyz.size() / 3);
  for (std::size_t i = 0; i < xyz.size(); i += 3) cloud.points.push_back({xyz[i], xyz[i + 1], xyz[i + 2]});
  return cloud;
}

}  // namespace cpvq
