// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

// Brute-force reference implementations for the geometry metrics.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "cpvq/geometry.hpp"

namespace cpvq::testing {

inline double brute_chamfer(std::span<const Point3> a, std::span<const Point3> b) {
  auto one_way = [](std::span<const Point3> from, std::span<const Point3> to) {
    double total = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
        best = std::min(best, dx * dx + dy * dy + dz * dz);
      }
      total += best;
    }
    return total / static_cast<double>(from.size());
  };
  return one_way(a, b) + one_way(b, a);
}

inline double segment_distance_sq(const Point3& p, const Point3& a, const Point3& b) {
  Point3 ab{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  Point3 ap{p[0] - a[0], p[1] - a[1], p[2] - a[2]};
  const double len = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
  double t = len > 0.0 ? (ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double d = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double r = ap[i] - t * ab[i];
    d += r * r;
  }
  return d;
}

/// Plane projection with a barycentric inside test; outside the triangle
/// the closest point lies on an edge.
inline double projection_triangle_distance_sq(const Point3& p, const Point3& a, const Point3& b, const Point3& c) {
  const Point3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const Point3 v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const Point3 w{p[0] - a[0], p[1] - a[1], p[2] - a[2]};
  const double uu = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
  const double vv = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
  const double uv = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
  const double wu = w[0] * u[0] + w[1] * u[1] + w[2] * u[2];
  const double wv = w[0] * v[0] + w[1] * v[1] + w[2] * v[2];
  const double det = uu * vv - uv * uv;
  const double s = (vv * wu - uv * wv) / det;
  const double t = (uu * wv - uv * wu) / det;
  if (s >= 0.0 && t >= 0.0 && s + t <= 1.0) {
    double d = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double r = w[i] - s * u[i] - t * v[i];
      d += r * r;
    }
    return d;
  }
  return std::min({segment_distance_sq(p, a, b), segment_distance_sq(p, b, c), segment_distance_sq(p, c, a)});
}

inline double brute_point2mesh(std::span<const Point3> points, const TriangleMesh& mesh) {
  double total = 0.0;
  for (const auto& p : points) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& f : mesh.faces)
      best = std::min(best, projection_triangle_distance_sq(p, mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]));
    total += best;
  }
  return total / static_cast<double>(points.size());
}

/// Axis-aligned box mesh with half-extents h, 12 triangles.
inline TriangleMesh cube_mesh(const Point3& h) {
  TriangleMesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.push_back({(i & 1) ? h[0] : -h[0], (i & 2) ? h[1] : -h[1], (i & 4) ? h[2] : -h[2]});
  m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
             {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

}  // namespace cpvq::testing
