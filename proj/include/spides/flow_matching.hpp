#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "spides/neural.hpp"
#include "spides/rng.hpp"
#include "spides/snapshots.hpp"
#include "spides/transport.hpp"

namespace spides {

struct CfmConfig {
  double sigma = 0.05;
  std::size_t batch_size = 512;
  std::size_t epochs = 3000;
  double learning_rate = 1e-3;
  // Final learning rate as a fraction of the initial one; 1 keeps it constant.
  double lr_decay = 1.0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> hidden{64, 64};
};

struct FlowModel {
  NeuralField field;

  StateFunction as_function() const;
};

// x_t = ((t - t_a) x_b + (t_b - t) x_a) / (t_b - t_a) + sigma * noise.
// Requires t_a <= t < t_b.
std::vector<double> sample_conditional(std::span<const double> x_a, std::span<const double> x_b,
                                       double t_a, double t_b, double t, double sigma,
                                       std::span<const double> noise);

// (x_b - x_a) / (t_b - t_a).
std::vector<double> conditional_velocity(std::span<const double> x_a, std::span<const double> x_b,
                                         double t_a, double t_b);

// Regression tuples: position x_t at time t and the conditional velocity of
// its coupled pair on interval k.
struct CfmBatch {
  std::vector<std::size_t> interval;
  std::vector<double> t;
  PointCloud source;
  PointCloud target;
  PointCloud position;
  PointCloud velocity;

  std::size_t size() const { return t.size(); }
};

// One plan per adjacent snapshot pair, solved on full snapshots (chunk == 0)
// or on random chunks of `chunk` points.
std::vector<TransportPlan> couple_snapshots(const SnapshotDataset& dataset, std::size_t chunk,
                                            std::uint64_t seed);

// Draws t uniformly over [t_first, t_last) (so intervals are picked in
// proportion to their length), a pair from that interval's plan, and a
// Gaussian perturbation of the interpolant. The dataset must outlive the
// sampler; plans are copied.
class CfmSampler {
 public:
  CfmSampler(const SnapshotDataset& dataset, const std::vector<TransportPlan>& plans, double sigma);
  CfmBatch draw(std::size_t count, Rng& rng) const;

 private:
  const SnapshotDataset* dataset_;
  std::vector<double> times_;
  std::vector<PairSampler> samplers_;
  double sigma_;
};

// Mean of |f(x_t, t) - v|^2 over the batch.
double cfm_loss(const StateFunction& model, const CfmBatch& batch);
double cfm_loss(const NeuralField& model, const CfmBatch& batch);
// Same loss; grad receives its gradient with respect to the parameters.
double cfm_loss_gradient(const NeuralField& model, const CfmBatch& batch, std::span<double> grad);

struct FlowTraining {
  FlowModel model;
  std::vector<double> loss_trace;
};

// Adam on freshly drawn CFM batches, one step per epoch. Throws
// DivergenceError on a non-finite loss.
FlowTraining train_flow(const SnapshotDataset& dataset, const std::vector<TransportPlan>& plans,
                        const CfmConfig& config);

// Classical RK4 for dx/dt = f(x, t) with uniform steps no larger than `step`.
PointCloud integrate_flow(const StateFunction& field, const PointCloud& x0, double t0, double t1,
                          double step);

}  // namespace spides
