#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "spides/neural.hpp"
#include "spides/rng.hpp"
#include "spides/snapshots.hpp"

namespace spides {

struct ScoreConfig {
  std::size_t batch_size = 512;
  std::size_t epochs = 3000;
  double learning_rate = 1e-2;
  // Final learning rate as a fraction of the initial one; 1 keeps it constant.
  double lr_decay = 1e-3;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{64, 64};
};

struct ScoreModel {
  NeuralField field;

  StateFunction as_function() const;
};

// Uniform snapshot, then a uniform sample within it; t is the snapshot time.
FieldBatch draw_score_batch(const SnapshotDataset& dataset, std::size_t count, Rng& rng);

// Mean over the batch of tr(d s / d x) + |s|^2 / 2, with the exact trace.
double sm_loss(const NeuralField& model, const FieldBatch& batch);
double sm_loss_gradient(const NeuralField& model, const FieldBatch& batch, std::span<double> grad);

struct ScoreTraining {
  ScoreModel model;
  std::vector<double> loss_trace;
};

// One time-conditioned network fitted to all snapshots jointly.
ScoreTraining train_score(const SnapshotDataset& dataset, const ScoreConfig& config);

}  // namespace spides
