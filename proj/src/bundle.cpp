// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#include "cpvq/bundle.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <memory>
#include <stdexcept>

#include "cpvq/io.hpp"

namespace cpvq {

namespace {

constexpr std::string_view kMagic = "CPVQ1\n";

static_assert(std::endian::native == std::endian::little, "bundle I/O assumes a little-endian host");

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string content_hash(const std::vector<Blob>& blobs) {
  std::size_t bytes = 0;
  for (const auto& b : blobs) bytes += b.values.size() * sizeof(double);
  const std::string header = "blob " + std::to_string(bytes) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1) throw std::runtime_error("content_hash: SHA-1 unavailable");
  EVP_DigestUpdate(ctx.get(), header.data(), header.size());
  for (const auto& b : blobs) EVP_DigestUpdate(ctx.get(), b.values.data(), b.values.size() * sizeof(double));
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

void ModelBundle::add(std::string name, const Tensor& t) {
  add(std::move(name), t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
}

void ModelBundle::add(std::string name, Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size()) throw std::invalid_argument("ModelBundle::add: '" + name + "' shape/data mismatch");
  if (has(name)) throw std::invalid_argument("ModelBundle::add: duplicate blob '" + name + "'");
  blobs.push_back({std::move(name), std::move(shape), std::move(values)});
}

bool ModelBundle::has(const std::string& name) const {
  for (const auto& b : blobs)
    if (b.name == name) return true;
  return false;
}

const Blob& ModelBundle::blob(const std::string& name) const {
  for (const auto& b : blobs)
    if (b.name == name) return b;
  throw std::out_of_range("ModelBundle: no blob named '" + name + "'");
}

std::string ModelBundle::serialize() const {
  nlohmann::json meta = metadata;
  meta["blobs"] = nlohmann::json::array();
  for (const auto& b : blobs) meta["blobs"].push_back({{"name", b.name}, {"shape", b.shape}, {"count", b.values.size()}});
  meta["content_hash"] = content_hash(blobs);
  const std::string text = meta.dump();
  std::string out(kMagic);
  append_u64(out, text.size());
  out += text;
  for (const auto& b : blobs) out.append(reinterpret_cast<const char*>(b.values.data()), b.values.size() * sizeof(double));
  return out;
}

ModelBundle ModelBundle::deserialize(const std::string& bytes) {
  if (bytes.size() < kMagic.size() + 8 || bytes.compare(0, kMagic.size(), kMagic) != 0)
    throw std::runtime_error("bundle: missing CPVQ1 magic");
  const std::uint64_t len = read_u64(bytes, kMagic.size());
  std::size_t pos = kMagic.size() + 8;
  if (len > bytes.size() - pos) throw std::runtime_error("bundle: truncated metadata");
  ModelBundle out;
  out.metadata = nlohmann::json::parse(bytes.substr(pos, len));
  pos += len;
  for (const auto& entry : out.metadata.at("blobs")) {
    Blob b;
    b.name = entry.at("name").get<std::string>();
    b.shape = entry.at("shape").get<Shape>();
    const auto count = entry.at("count").get<std::size_t>();
    if (shape_numel(b.shape) != count) throw std::runtime_error("bundle: blob '" + b.name + "' shape disagrees with count");
    if (count * sizeof(double) > bytes.size() - pos) throw std::runtime_error("bundle: blob '" + b.name + "' is truncated");
    b.values.resize(count);
    std::memcpy(b.values.data(), bytes.data() + pos, count * sizeof(double));
    pos += count * sizeof(double);
    out.blobs.push_back(std::move(b));
  }
  if (pos != bytes.size()) throw std::runtime_error("bundle: trailing bytes after the last blob");
  if (out.metadata.at("content_hash").get<std::string>() != content_hash(out.blobs))
    throw std::runtime_error("bundle: content hash mismatch");
  out.metadata.erase("blobs");
  out.metadata.erase("content_hash");
  return out;
}

void ModelBundle::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

ModelBundle ModelBundle::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace cpvq
