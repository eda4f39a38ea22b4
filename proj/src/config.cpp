// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#include "cpvq/config.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

#include "cpvq/io.hpp"

namespace cpvq {

const std::vector<ConfigKey>& known_config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "0", "base seed; dataset, training and sampling streams derive from it"},
      {"scenes", "1000", "scenes generated by gen-data"},
      {"test_fraction", "0.2", "share of scenes placed in the test split"},
      {"min_objects", "2", "fewest objects per generated scene"},
      {"max_objects", "8", "most objects per scene (rows M of the scene matrix)"},
      {"class_prior", "0.2,0.2,0.2,0.2,0.2", "categorical prior over box,sphere,cylinder,cone,torus"},
      {"floor_min", "2.0", "smallest floor half-extent"},
      {"floor_max", "4.0", "largest floor half-extent"},
      {"object_size_min", "0.3", "smallest object half-extent"},
      {"object_size_max", "0.8", "largest object half-extent"},
      {"placement_attempts", "1000", "rejection-sampling attempts per object"},
      {"points", "512", "points per object cloud (N_P)"},
      {"latent_dim", "128", "codevector and encoder output width (D_K)"},
      {"codes_per_class", "64", "codevectors per class block (N_q)"},
      {"lambda_cd", "10", "Chamfer weight in the autoencoder loss"},
      {"ae_lr", "0.001", "autoencoder Adam learning rate"},
      {"ae_batch", "32", "autoencoder batch size"},
      {"ae_steps", "20000", "autoencoder optimizer steps"},
      {"usage_decay", "0.99", "running-average decay of codevector usage"},
      {"reinit_eps", "0.001", "offset in the reinitialization exponent"},
      {"kl_weight", "0.001", "KL weight of the V1 baseline"},
      {"variant", "V4", "autoencoder variant: V1 VAE, V2 VQ, V3 VQ+CP, V4 VQ+CP+RAU"},
      {"fm_hidden", "256", "velocity network hidden width"},
      {"fm_batch", "32", "flow-matching batch size (scenes)"},
      {"fm_steps", "10000", "flow-matching optimizer steps"},
      {"fm_lr", "0.001", "flow-matching Adam learning rate"},
      {"lambda_T", "1", "translation loss weight"},
      {"lambda_R", "1", "rotation loss weight"},
      {"lambda_S", "1", "size loss weight"},
      {"lambda_C", "1", "class loss weight"},
      {"lambda_F", "1", "feature loss weight"},
      {"scene_scale", "4.0", "divisor applied to translations, sizes and floor extents"},
      {"sample_steps", "100", "Euler steps when sampling"},
      {"sample_scenes", "200", "scenes drawn by the sample command"},
      {"lookup_normalized", "false", "rank codevectors by cosine instead of dot product"},
      {"write_ply", "true", "write per-object and per-scene PLY files when sampling"},
      {"prototype_points", "2048", "points per class prototype in the consistency check"},
      {"eval_bank_per_class", "16", "cap on reference shapes per class (0 keeps every test object)"},
      {"sweep_steps", "10,100,1000", "Euler step counts of the ablation sweep"},
  };
  return keys;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("config: '" + key + "' is not a number: " + text);
  return v;
}

}  // namespace

Config::Config() {
  for (const auto& k : known_config_keys()) values_[std::string(k.name)] = std::string(k.default_value);
}

Config Config::parse(std::string_view text) {
  Config cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) { return parse(read_file(path)); }

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  it->second = value;
}

const std::string& Config::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  return it->second;
}

double Config::number(const std::string& key) const { return to_double(key, raw(key)); }

std::size_t Config::count(const std::string& key) const {
  const auto& text = raw(key);
  std::size_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw std::invalid_argument("config: '" + key + "' is not a non-negative integer: " + text);
  return v;
}

std::uint64_t Config::seed(const std::string& key) const { return static_cast<std::uint64_t>(count(key)); }

bool Config::flag(const std::string& key) const {
  const auto& v = raw(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: '" + key + "' is not a boolean: " + v);
}

std::vector<double> Config::numbers(const std::string& key) const {
  std::vector<double> out;
  std::istringstream in(raw(key));
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(to_double(key, trim(item)));
  return out;
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace cpvq
