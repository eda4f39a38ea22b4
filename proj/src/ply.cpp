// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#include "cpvq/ply.hpp"

#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "cpvq/io.hpp"

namespace cpvq {

namespace {

void write_header(std::ostream& out, std::size_t vertices, std::size_t faces) {
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << vertices << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  if (faces > 0) out << "element face " << faces << "\nproperty list uchar int vertex_indices\n";
  out << "end_header\n";
}

void write_vertices(std::ostream& out, const std::vector<Point3>& points) {
  out << std::setprecision(17);
  for (const auto& p : points) out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
}

}  // namespace

void write_ply(std::ostream& out, const PointCloud& cloud) {
  write_header(out, cloud.size(), 0);
  write_vertices(out, cloud.points);
}

void write_ply(std::ostream& out, const TriangleMesh& mesh) {
  write_header(out, mesh.vertices.size(), mesh.faces.size());
  write_vertices(out, mesh.vertices);
  for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ostringstream out;
  write_ply(out, cloud);
  write_file_atomic(path, out.str());
}

void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ostringstream out;
  write_ply(out, mesh);
  write_file_atomic(path, out.str());
}

TriangleMesh read_ply(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw std::runtime_error("read_ply: missing 'ply' magic");
  if (!std::getline(in, line) || line != "format ascii 1.0") throw std::runtime_error("read_ply: only ascii 1.0 is supported");
  std::size_t vertices = 0, faces = 0;
  while (std::getline(in, line) && line != "end_header") {
    std::istringstream fields(line);
    std::string keyword, element;
    fields >> keyword;
    if (keyword != "element") continue;
    std::size_t count = 0;
    fields >> element >> count;
    if (element == "vertex") vertices = count;
    else if (element == "face") faces = count;
  }
  if (line != "end_header") throw std::runtime_error("read_ply: truncated header");
  TriangleMesh mesh;
  mesh.vertices.resize(vertices);
  for (auto& v : mesh.vertices)
    if (!(in >> v[0] >> v[1] >> v[2])) throw std::runtime_error("read_ply: truncated vertex list");
  mesh.faces.resize(faces);
  for (auto& f : mesh.faces) {
    int n = 0;
    if (!(in >> n >> f[0] >> f[1] >> f[2]) || n != 3) throw std::runtime_error("read_ply: only triangle faces are supported");
  }
  return mesh;
}

TriangleMesh read_ply(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return read_ply(in);
}

}  // namespace cpvq
