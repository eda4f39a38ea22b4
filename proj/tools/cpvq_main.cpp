// Copyright 2026 The CPVQ Scene Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cpvq/io.hpp"
#include "cpvq/pipeline.hpp"
#include "cpvq/runtime.hpp"

namespace fs = std::filesystem;
using namespace cpvq;

namespace {

struct CommonOptions {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out = ".";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--seed", o.seed, "random seed for this stage (overrides the config)");
  cmd->add_option("--config", o.config_path, "flat key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "output directory")->capture_default_str();
  cmd->add_option("--set", o.overrides, "extra key=value override, repeatable");
}

Config resolve(const CommonOptions& o) {
  Config cfg = o.config_path.empty() ? Config() : Config::load(o.config_path);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.set("seed", std::to_string(*o.seed));
  return cfg;
}

void save_config(const Config& cfg, const fs::path& out, const std::string& stage) {
  write_file_atomic(out / (stage + ".config"), cfg.dump());
}

std::vector<Variant> parse_variants(const std::string& list) {
  std::vector<Variant> out;
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(parse_variant(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  configure_allocator();
  CLI::App app{"Class-partitioned VQ autoencoder and latent flow matching for synthetic scene generation"};
  app.require_subcommand(1);

  CommonOptions gen_o, ae_o, fm_o, sample_o, eval_o, ablate_o;
  std::string data_dir = "data", variant = "V4", ae_bundle, fm_bundle, scenes_file, variants = "V1,V2,V3,V4";
  std::optional<std::size_t> steps, n_scenes;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic scene dataset (train.json, test.json)");
  add_common(gen, gen_o);
  gen->add_option("--scenes", n_scenes, "number of scenes (overrides the config)");

  auto* train_ae = app.add_subcommand("train-cpvqvae", "train the point-cloud autoencoder");
  add_common(train_ae, ae_o);
  train_ae->add_option("--data", data_dir, "dataset directory")->capture_default_str();
  train_ae->add_option("--variant", variant, "V1 | V2 | V3 | V4")->capture_default_str();
  train_ae->add_option("--steps", steps, "optimizer steps (overrides ae_steps)");

  auto* train_fm = app.add_subcommand("train-lfmm", "train the latent flow-matching model");
  add_common(train_fm, fm_o);
  train_fm->add_option("--data", data_dir, "dataset directory")->capture_default_str();
  train_fm->add_option("--cpvqvae", ae_bundle, "autoencoder bundle")->required()->check(CLI::ExistingFile);
  train_fm->add_option("--steps", steps, "optimizer steps (overrides fm_steps)");

  auto* sample = app.add_subcommand("sample", "sample scenes and decode their objects");
  add_common(sample, sample_o);
  sample->add_option("--data", data_dir, "dataset directory supplying floor plans (test split)")->capture_default_str();
  sample->add_option("--cpvqvae", ae_bundle, "autoencoder bundle")->required()->check(CLI::ExistingFile);
  sample->add_option("--lfmm", fm_bundle, "flow-model bundle")->required()->check(CLI::ExistingFile);
  sample->add_option("--steps", steps, "Euler steps (overrides sample_steps)");
  sample->add_option("--scenes", n_scenes, "number of scenes (overrides sample_scenes)");

  auto* eval = app.add_subcommand("eval", "score generated scenes against the test split");
  add_common(eval, eval_o);
  eval->add_option("--data", data_dir, "dataset directory")->capture_default_str();
  eval->add_option("--cpvqvae", ae_bundle, "autoencoder bundle")->required()->check(CLI::ExistingFile);
  eval->add_option("--scenes-file", scenes_file, "scenes.json written by sample")->required()->check(CLI::ExistingFile);

  auto* ablate = app.add_subcommand("ablate", "variant ablation plus Euler-step sweep");
  add_common(ablate, ablate_o);
  ablate->add_option("--data", data_dir, "dataset directory")->capture_default_str();
  ablate->add_option("--variant", variants, "comma-separated variants")->capture_default_str();
  ablate->add_option("--steps", steps, "autoencoder optimizer steps (overrides ae_steps)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      Config cfg = resolve(gen_o);
      if (n_scenes) cfg.set("scenes", std::to_string(*n_scenes));
      const auto data = run_gen_data(cfg, gen_o.out);
      save_config(cfg, gen_o.out, "gen-data");
      std::printf("wrote %zu train and %zu test scenes to %s\n", data.train.size(), data.test.size(),
                  gen_o.out.c_str());
    } else if (train_ae->parsed()) {
      Config cfg = resolve(ae_o);
      if (steps) cfg.set("ae_steps", std::to_string(*steps));
      const Variant v = parse_variant(variant);
      cfg.set("variant", variant_name(v));
      const auto data = load_dataset(data_dir);
      const auto result = run_train_cpvqvae(data, cfg, v, ae_o.out);
      save_config(cfg, ae_o.out, "train-cpvqvae");
      const auto& last = result.history.back();
      std::printf("%s: %zu steps, loss %.6f, chamfer %.6f, active codevectors %.1f%%\n", variant_name(v).c_str(),
                  last.step, last.loss, last.chamfer, last.active_fraction * 100.0);
    } else if (train_fm->parsed()) {
      Config cfg = resolve(fm_o);
      if (steps) cfg.set("fm_steps", std::to_string(*steps));
      const auto data = load_dataset(data_dir);
      const auto ae = autoencoder_from_bundle(ModelBundle::load(ae_bundle));
      const auto run = run_train_lfmm(data, ae, cfg, fm_o.out);
      save_config(cfg, fm_o.out, "train-lfmm");
      const auto avg = moving_average(run.loss_history, 100);
      std::printf("trained %zu steps, final 100-step mean loss %.6f\n", run.loss_history.size(),
                  avg.empty() ? 0.0 : avg.back());
    } else if (sample->parsed()) {
      Config cfg = resolve(sample_o);
      if (steps) cfg.set("sample_steps", std::to_string(*steps));
      if (n_scenes) cfg.set("sample_scenes", std::to_string(*n_scenes));
      const auto data = load_dataset(data_dir);
      const auto ae = autoencoder_from_bundle(ModelBundle::load(ae_bundle));
      const auto flow = flow_from_bundle(ModelBundle::load(fm_bundle));
      const auto floors = floor_plans(data.test, cfg.count("sample_scenes"));
      const auto scenes = run_sample(ae, flow, floors, cfg, sample_o.out);
      save_config(cfg, sample_o.out, "sample");
      std::size_t objects = 0;
      for (const auto& s : scenes) objects += s.record.objects.size();
      std::printf("sampled %zu scenes with %zu objects into %s\n", scenes.size(), objects, sample_o.out.c_str());
    } else if (eval->parsed()) {
      const Config cfg = resolve(eval_o);
      const auto data = load_dataset(data_dir);
      const auto ae = autoencoder_from_bundle(ModelBundle::load(ae_bundle));
      const auto generated = scenes_from_json(read_file(scenes_file));
      const auto report = run_eval(generated, data.test, ae, cfg, eval_o.out);
      std::cout << report.summary();
    } else if (ablate->parsed()) {
      Config cfg = resolve(ablate_o);
      if (steps) cfg.set("ae_steps", std::to_string(*steps));
      const auto data = load_dataset(data_dir);
      const auto list = parse_variants(variants);
      const auto result = run_ablate(data, cfg, list, ablate_o.out);
      save_config(cfg, ablate_o.out, "ablate");
      std::printf("variant  active%%  test-CD x1e3  CD x1e3  P2M x1e3  CKL x1e2  consistency\n");
      for (const auto& r : result.variants)
        std::printf("%-7s  %6.1f  %12.3f  %7.3f  %8.3f  %8.3f  %10.1f%%\n", variant_name(r.variant).c_str(),
                    r.active_fraction * 100.0, r.test_round_trip * 1e3, r.report.chamfer * 1e3,
                    r.report.point2mesh * 1e3, r.report.ckl * 1e2, r.report.class_consistency * 100.0);
      std::printf("\nsteps  seconds   CKL x1e2  consistency\n");
      for (const auto& r : result.sweep)
        std::printf("%5zu  %7.3f  %9.3f  %10.1f%%\n", r.steps, r.seconds, r.ckl * 1e2, r.class_consistency * 100.0);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
