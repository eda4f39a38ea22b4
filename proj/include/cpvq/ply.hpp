// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>

#include "cpvq/geometry.hpp"

namespace cpvq {

// ASCII PLY. Output starts with "ply\nformat ascii 1.0\n" and uses 17
// significant digits so coordinates survive a round trip exactly.
void write_ply(std::ostream& out, const PointCloud& cloud);
void write_ply(std::ostream& out, const TriangleMesh& mesh);
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);
void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh);

/// Reads vertices (and faces, if present) from an ASCII PLY written above.
TriangleMesh read_ply(std::istream& in);
TriangleMesh read_ply(const std::filesystem::path& path);

}  // namespace cpvq
