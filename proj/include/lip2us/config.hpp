#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lip2us/dataset.hpp"
#include "lip2us/flow.hpp"
#include "lip2us/metrics.hpp"
#include "lip2us/model.hpp"
#include "lip2us/synth.hpp"

namespace lip2us {

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct TrainOptions {
  std::size_t batch_size = 32;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  // false draws the seed from the system entropy source instead.
  bool deterministic = true;
};

// Everything one run needs. File grammar is TOML; see README for the keys.
struct RunConfig {
  std::filesystem::path data_dir = "data";
  std::string manifest = "manifest.txt";
  SynthSpec synth;
  SplitFractions split;
  TrainOptions train;
  FlowOptions flow;
  ModelConfig model;
  ContourOptions contour;
  std::filesystem::path out_dir = "run";

  void validate() const;
  std::filesystem::path manifest_path() const { return data_dir / manifest; }
  DatasetOptions dataset_options() const;
};

/// Parses TOML text; unknown sections or keys raise ConfigError. Overrides
/// are "dotted.key=value" strings applied after parsing; the value is read as
/// a TOML value and falls back to a bare string.
RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {},
                       const std::string& source = "config");

/// "default" (or an empty path) yields the built-in defaults.
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

/// Resolved configuration as TOML; parse_config(to_toml(c)) reproduces c.
std::string to_toml(const RunConfig& config);

}  // namespace lip2us
