#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "spides/flow_matching.hpp"
#include "spides/score_matching.hpp"
#include "spides/sparse_bayes.hpp"

namespace spides {

struct DataConfig {
  std::size_t dim = 1;
  double t_start = 0.0;
  double t_end = 1.0;
  std::size_t snapshots = 11;
  std::size_t samples = 2000;
  double step = 1e-3;
  double p0_mean = 0.0;
  double p0_std = 1.0;
  std::string drift = "4*x - 1*x^3";
  std::string diffusion = "1";
  unsigned workers = 1;
  std::uint64_t seed = 1;

  // Evenly spaced snapshot times from t_start to t_end.
  std::vector<double> times() const;
};

struct OtConfig {
  bool minibatch = false;
  std::size_t minibatch_size = 256;
  std::uint64_t seed = 2;
};

struct LibraryConfig {
  std::string drift_basis = "1,x,x^2,x^3,x^4,x^5,sin(x),cos(x)";
  std::string drift_known;
  std::string diffusion_basis = "1,x,x^2";
  std::string diffusion_known;
};

struct IdentifyConfig {
  FitConfig fit;
  double threshold = 0.1;
  bool joint = false;
  std::size_t quantile_draws = 1000;
};

struct EvaluateConfig {
  double flow_step = 0.01;
  double sde_step = 1e-3;
  std::size_t bins = 60;
  unsigned workers = 1;
  std::uint64_t seed = 6;
};

// Output file names, resolved against the output directory.
struct IoConfig {
  std::string dataset = "snapshots.txt";
  std::string flow_model = "flow_model.txt";
  std::string score_model = "score_model.txt";
  std::string flow_loss = "flow_loss.csv";
  std::string score_loss = "score_loss.csv";
  std::string identify_loss = "identify_loss.csv";
  std::string report = "report.txt";
  std::string coefficients = "coefficients.csv";
  std::string metrics = "metrics.csv";
  std::string density_observed = "density_observed.csv";
  std::string density_flow = "density_flow.csv";
  std::string density_sde = "density_sde.csv";
};

struct PipelineConfig {
  DataConfig data;
  OtConfig ot;
  CfmConfig flow{.seed = 3};
  ScoreConfig score{.seed = 4};
  LibraryConfig library;
  IdentifyConfig identify;
  EvaluateConfig evaluate;
  IoConfig io;

  BasisLibrary basis() const;
  void validate() const;
};

// Flat "section.key = value" lines with '#' comments. Unknown keys, bad
// values and failed validation raise ConfigError naming the key. The seed
// override (when set) replaces every *.seed key.
PipelineConfig parse_config(const std::string& text, const std::string* seed_override = nullptr);
// Reads the file and applies SPIDES_SEED from the environment.
PipelineConfig load_config(const std::filesystem::path& path);

}  // namespace spides
