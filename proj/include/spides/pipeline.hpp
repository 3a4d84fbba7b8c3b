#pragma once

#include <filesystem>
#include <ostream>
#include <vector>

#include "spides/config.hpp"

namespace spides {

// Samples p0, simulates the configured SDE and keeps unpaired snapshots.
SnapshotDataset generate_dataset(const DataConfig& data);

std::vector<TransportPlan> couple(const SnapshotDataset& dataset, const OtConfig& ot);

struct EvaluationRow {
  double t = 0.0;
  double w2_flow = 0.0;
  double w2_sde = 0.0;
};

struct Evaluation {
  std::vector<EvaluationRow> rows;
  // Per snapshot, pushed and simulated samples started from the first snapshot.
  std::vector<PointCloud> flow_samples;
  std::vector<PointCloud> sde_samples;
};

// Squared 2-Wasserstein distance of each observed snapshot to the flow
// push-forward and to an Euler-Maruyama run of `sde`, both from snapshot 0.
Evaluation evaluate_models(const SnapshotDataset& dataset, const StateFunction& flow, const ItoSde& sde,
                           const EvaluateConfig& config);

// "t,x,weight" histogram on the first coordinate; weight is a density.
std::string format_density(const std::vector<double>& times, const std::vector<PointCloud>& samples, double lo,
                           double hi, std::size_t bins);

void write_loss_trace(const std::filesystem::path& path, const std::vector<double>& trace);

// Subcommands; output paths are resolved against `out`. Progress goes to `log`.
void cmd_generate(const PipelineConfig& config, const std::filesystem::path& out, std::ostream& log);
void cmd_train_flow(const PipelineConfig& config, const std::filesystem::path& out, std::ostream& log);
void cmd_train_score(const PipelineConfig& config, const std::filesystem::path& out, std::ostream& log);
void cmd_identify(const PipelineConfig& config, const std::filesystem::path& out, std::ostream& log);
void cmd_evaluate(const PipelineConfig& config, const std::filesystem::path& out, std::ostream& log);
void cmd_run_all(const PipelineConfig& config, const std::filesystem::path& out, std::ostream& log);

}  // namespace spides
