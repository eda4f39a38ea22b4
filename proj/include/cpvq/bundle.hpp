// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "cpvq/tensor.hpp"

namespace cpvq {

struct Blob {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

/// Binary layout:
///   "CPVQ1\n"
///   u64 little-endian length of the metadata JSON, then the JSON text
///   each blob's values as little-endian f64, in the order listed under
///   metadata["blobs"] (name, shape, count).
/// metadata["content_hash"] is the hex SHA-1 of "blob <bytes>\0" followed by
/// the concatenated blob bytes, checked on load.
struct ModelBundle {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<Blob> blobs;

  void add(std::string name, const Tensor& t);
  void add(std::string name, Shape shape, std::vector<double> values);
  const Blob& blob(const std::string& name) const;
  bool has(const std::string& name) const;

  std::string serialize() const;
  static ModelBundle deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static ModelBundle load(const std::filesystem::path& path);
};

std::string content_hash(const std::vector<Blob>& blobs);

}  // namespace cpvq
