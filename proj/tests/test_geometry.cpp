// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "cpvq/geometry.hpp"
#include "cpvq/ply.hpp"
#include "support/geometry_oracles.hpp"
#include "support/gradcheck.hpp"

using namespace cpvq;
namespace t = cpvq::testing;

namespace {

PointCloud random_cloud(Rng& rng, std::size_t n) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
  return c;
}

}  // namespace

TEST_CASE("generate_shape is deterministic") {
  const auto a = generate_shape(static_cast<int>(ShapeKind::sphere), 7, 512);
  const auto b = generate_shape(static_cast<int>(ShapeKind::sphere), 7, 512);
  REQUIRE(a.size() == 512);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.points[i] == b.points[i]);
  CHECK_THROWS_AS(generate_shape(kShapeKindCount, 0, 8), std::invalid_argument);
  CHECK_THROWS_AS(generate_shape(-1, 0, 8), std::invalid_argument);
}

TEST_CASE("box points lie on the box surface") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto params = jittered_params(0, seed);
    const auto cloud = generate_shape(0, seed, 256);
    for (const auto& p : cloud.points) {
      double face_gap = 1e9;
      for (int k = 0; k < 3; ++k) {
        CHECK(std::abs(p[k]) <= params.dims[k] + 1e-12);
        face_gap = std::min(face_gap, params.dims[k] - std::abs(p[k]));
      }
      CHECK(face_gap < 1e-6);
    }
  }
}

TEST_CASE("sphere points lie at the jittered radius") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double r = jittered_params(1, seed).dims[0];
    for (const auto& p : generate_shape(1, seed, 256).points)
      CHECK(std::abs(std::hypot(p[0], p[1], p[2]) - r) < 1e-6);
  }
}

TEST_CASE("canonical clouds fit inside the unit cube") {
  for (int c = 0; c < kShapeKindCount; ++c)
    for (std::uint64_t seed = 0; seed < 20; ++seed)
      for (const auto& p : generate_shape(c, seed, 128).points)
        for (double v : p) CHECK(std::abs(v) <= 1.0 + 1e-6);
}

TEST_CASE("the configured paper-scale point count is accepted") {
  CHECK(generate_shape(4, 1, 2025).size() == 2025);
}

TEST_CASE("chamfer basics") {
  Rng rng(1);
  const auto p = random_cloud(rng, 64);
  CHECK(chamfer_distance(p, p) == 0.0);
  PointCloud a{{{0, 0, 0}}}, b{{{1, 0, 0}}};
  CHECK(chamfer_distance(a, b) == doctest::Approx(2.0));
  CHECK_THROWS_AS(chamfer_distance(a, PointCloud{}), std::invalid_argument);

  auto permuted = p;
  for (std::size_t i = permuted.size(); i > 1; --i) std::swap(permuted.points[i - 1], permuted.points[rng.index(i)]);
  CHECK(chamfer_distance(p, permuted) == 0.0);
  const auto q = random_cloud(rng, 40);
  CHECK(chamfer_distance(p, q) == chamfer_distance(q, p));
  CHECK(chamfer_distance(p, q) > 0.0);
}

TEST_CASE("chamfer matches the brute-force double loop") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_cloud(rng, 64), b = random_cloud(rng, 64);
    CHECK(std::abs(chamfer_distance(a, b) - t::brute_chamfer(a.points, b.points)) < 1e-12);
  }
}

TEST_CASE("point-triangle distance matches projection oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 2000; ++trial) {
    Point3 tri[3], p;
    for (auto& v : tri) v = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    p = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    CHECK(std::abs(point_triangle_distance_sq(p, tri[0], tri[1], tri[2]) -
                   t::projection_triangle_distance_sq(p, tri[0], tri[1], tri[2])) < 1e-12);
  }
}

TEST_CASE("point2mesh examples and oracle") {
  TriangleMesh square;
  square.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  square.faces = {{0, 1, 2}, {0, 2, 3}};
  CHECK(point2mesh_distance(PointCloud{{{0, 0, 1}}}, square) == doctest::Approx(1.0));
  CHECK_THROWS_AS(point2mesh_distance(PointCloud{}, square), std::invalid_argument);
  CHECK_THROWS_AS(point2mesh_distance(PointCloud{{{0, 0, 1}}}, TriangleMesh{}), std::invalid_argument);

  Rng rng(4);
  const auto cube = t::cube_mesh({0.7, 0.9, 0.5});
  for (int trial = 0; trial < 100; ++trial) {
    const auto pts = random_cloud(rng, 32);
    CHECK(std::abs(point2mesh_distance(pts, cube) - t::brute_point2mesh(pts.points, cube)) < 1e-12);
  }
}

TEST_CASE("points on mesh triangles have zero point2mesh distance") {
  Rng rng(5);
  for (int c = 0; c < kShapeKindCount; ++c) {
    const auto mesh = shape_mesh(jittered_params(c, 11), 16);
    for (const auto& f : mesh.faces) {
      for (auto idx : f) REQUIRE(idx < mesh.vertices.size());
    }
    PointCloud on;
    for (int i = 0; i < 200; ++i) {
      const auto& f = mesh.faces[rng.index(mesh.faces.size())];
      double u = rng.uniform(), v = rng.uniform();
      if (u + v > 1.0) u = 1.0 - u, v = 1.0 - v;
      Point3 p;
      for (int k = 0; k < 3; ++k)
        p[k] = mesh.vertices[f[0]][k] + u * (mesh.vertices[f[1]][k] - mesh.vertices[f[0]][k]) +
               v * (mesh.vertices[f[2]][k] - mesh.vertices[f[0]][k]);
      on.points.push_back(p);
    }
    CAPTURE(c);
    CHECK(point2mesh_distance(on, mesh) < 1e-10);
  }
}

TEST_CASE("generated meshes have no degenerate faces") {
  for (int c = 0; c < kShapeKindCount; ++c) {
    const auto mesh = shape_mesh(prototype_params(c), 24);
    for (const auto& f : mesh.faces) {
      const auto &a = mesh.vertices[f[0]], &b = mesh.vertices[f[1]], &d = mesh.vertices[f[2]];
      const Point3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]}, v{d[0] - a[0], d[1] - a[1], d[2] - a[2]};
      const double cx = u[1] * v[2] - u[2] * v[1], cy = u[2] * v[0] - u[0] * v[2], cz = u[0] * v[1] - u[1] * v[0];
      CHECK(std::sqrt(cx * cx + cy * cy + cz * cz) > 1e-9);
    }
  }
}

TEST_CASE("apply_bbox transforms") {
  PointCloud unit{{{1, 0, 0}, {0.2, -0.4, 0.9}}};
  const auto same = apply_bbox(unit, BoundingBox{});
  CHECK(same.points == unit.points);

  BoundingBox quarter;
  quarter.rotation = {0.0, 1.0};
  const auto turned = apply_bbox(PointCloud{{{1, 0, 0}}}, quarter);
  // Right-handed rotation by g about +y: [[c, 0, s], [0, 1, 0], [-s, 0, c]].
  const double g = std::numbers::pi / 2;
  const double r[3][3] = {{std::cos(g), 0, std::sin(g)}, {0, 1, 0}, {-std::sin(g), 0, std::cos(g)}};
  const Point3 expected{r[0][0], r[1][0], r[2][0]};
  for (int k = 0; k < 3; ++k) CHECK(turned.points[0][k] == doctest::Approx(expected[k]).epsilon(1e-12));
  CHECK(turned.points[0][2] == doctest::Approx(-1.0));

  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    BoundingBox box;
    box.translation = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    box.rotation = normalize_rotation({rng.uniform(-1, 1), rng.uniform(-1, 1)});
    box.size = {rng.uniform(0.1, 2), rng.uniform(0.1, 2), rng.uniform(0.1, 2)};
    const auto pts = random_cloud(rng, 20);
    const auto placed = apply_bbox(pts, box);
    CHECK(placed.size() == pts.size());
    const auto back = invert_bbox(placed, box);
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (int k = 0; k < 3; ++k) CHECK(std::abs(back.points[i][k] - pts.points[i][k]) < 1e-9);
    // Pointwise map, so permuting inputs permutes outputs.
    auto rev = pts;
    std::reverse(rev.points.begin(), rev.points.end());
    const auto placed_rev = apply_bbox(rev, box);
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK(placed_rev.points[i] == placed.points[pts.size() - 1 - i]);
  }

  BoundingBox bad;
  bad.rotation = {2.0, 0.0};
  CHECK_THROWS_AS(apply_bbox(unit, bad), std::invalid_argument);
}

TEST_CASE("normalize_rotation") {
  auto r = normalize_rotation({3, 4});
  CHECK(r[0] == doctest::Approx(0.6));
  CHECK(r[1] == doctest::Approx(0.8));
  CHECK(normalize_rotation({1, 0}) == std::array<double, 2>{1, 0});
  CHECK(normalize_rotation({0, 0}) == std::array<double, 2>{1, 0});
}

TEST_CASE("categorical_kl") {
  const std::vector<double> h{3, 1, 4, 1, 5};
  CHECK(std::abs(categorical_kl(h, h)) < 1e-9);
  // Hand-evaluated smoothed formula for p=(1,0), q=(.5,.5).
  const double e = 1e-6;
  const double p0 = (1 + e) / (1 + 2 * e), p1 = e / (1 + 2 * e), q = 0.5;
  const double expected = p0 * std::log(p0 / q) + p1 * std::log(p1 / q);
  CHECK(categorical_kl(std::vector<double>{1, 0}, std::vector<double>{1, 1}) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(std::log(2.0)).epsilon(1e-4));
  CHECK_THROWS_AS(categorical_kl(std::vector<double>{0, 0}, std::vector<double>{1, 1}), std::invalid_argument);

  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(6), b(6);
    for (auto& v : a) v = std::floor(rng.uniform(0, 10));
    for (auto& v : b) v = std::floor(rng.uniform(0, 10));
    a[0] += 1;
    b[0] += 1;
    CHECK(categorical_kl(a, b) >= 0.0);
  }
}

TEST_CASE("shape classes are separable by chamfer to the prototypes") {
  std::vector<PointCloud> protos;
  for (int c = 0; c < kShapeKindCount; ++c) protos.push_back(prototype_shape(c, 2048));
  for (int c = 0; c < kShapeKindCount; ++c)
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
      const auto cloud = generate_shape(c, seed, 512);
      const double own = chamfer_distance(cloud, protos[c]);
      for (int d = 0; d < kShapeKindCount; ++d) {
        if (d == c) continue;
        CAPTURE(c);
        CAPTURE(d);
        CAPTURE(seed);
        CHECK(own < chamfer_distance(cloud, protos[d]));
      }
    }
}

TEST_CASE("chamfer loss value and gradient") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = random_cloud(rng, 24), b = random_cloud(rng, 20), c = random_cloud(rng, 24), d = random_cloud(rng, 20);
    std::vector<PointCloud> pa{a, c}, pb{b, d};
    auto pred = to_tensor(pa), target = to_tensor(pb);
    pred.set_requires_grad(true);
    target.set_requires_grad(true);
    const double expected = 0.5 * (t::brute_chamfer(a.points, b.points) + t::brute_chamfer(c.points, d.points));
    CHECK(std::abs(chamfer_loss(pred, target).item() - expected) < 1e-12);
    // Random clouds: nearest neighbours are unique with margins far above
    // the 1e-5 step, so no tie is crossed.
    const double err = t::gradcheck([](const std::vector<Tensor>& in) { return chamfer_loss(in[0], in[1]); },
                                    {pred, target}, trial);
    CHECK(err < 1e-3);
  }
}

TEST_CASE("ply round trip") {
  const auto mesh = shape_mesh(prototype_params(4), 8);
  std::stringstream buf;
  write_ply(buf, mesh);
  CHECK(buf.str().rfind("ply\nformat ascii 1.0\n", 0) == 0);
  const auto back = read_ply(buf);
  CHECK(back.vertices == mesh.vertices);
  CHECK(back.faces == mesh.faces);

  const auto cloud = generate_shape(2, 3, 50);
  std::stringstream cbuf;
  write_ply(cbuf, cloud);
  CHECK(read_ply(cbuf).vertices == cloud.points);
}
