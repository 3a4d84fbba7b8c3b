#include "spides/score_matching.hpp"

#include <cmath>
#include <stdexcept>

#include "spides/errors.hpp"

namespace spides {

StateFunction ScoreModel::as_function() const {
  return [this](std::span<const double> x, double t, std::span<double> out) { field.forward(x, t, out); };
}

FieldBatch draw_score_batch(const SnapshotDataset& dataset, std::size_t count, Rng& rng) {
  FieldBatch batch{PointCloud(dataset.dim()), {}};
  batch.x.reserve(count);
  batch.t.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    const Snapshot& s = dataset[rng.index(dataset.size())];
    batch.x.push_back(s.samples.row(rng.index(s.samples.size())));
    batch.t.push_back(s.time);
  }
  return batch;
}

namespace {

double sample_sm(std::span<const double> out, std::span<const double> jac, std::span<double> d_out,
                 std::span<double> d_jac, double scale) {
  const std::size_t d = out.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    loss += jac[i * d + i] + 0.5 * out[i] * out[i];
    d_out[i] = out[i] * scale;
    if (!d_jac.empty()) d_jac[i * d + i] = scale;
  }
  return loss * scale;
}

}  // namespace

double sm_loss(const NeuralField& model, const FieldBatch& batch) {
  FieldTape tape;
  const std::size_t d = model.state_dim();
  std::vector<double> d_out(d);
  double total = 0.0;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    tape.evaluate(model, batch.x.row(n), batch.t[n], true);
    total += sample_sm(tape.output(), tape.jacobian(), d_out, {}, 1.0);
  }
  return total / static_cast<double>(batch.size());
}

double sm_loss_gradient(const NeuralField& model, const FieldBatch& batch, std::span<double> grad) {
  const double scale = 1.0 / static_cast<double>(batch.size());
  return grad_params(
      model, batch,
      [scale](std::size_t, std::span<const double> out, std::span<const double> jac, std::span<double> d_out,
              std::span<double> d_jac) { return sample_sm(out, jac, d_out, d_jac, scale); },
      true, grad);
}

ScoreTraining train_score(const SnapshotDataset& dataset, const ScoreConfig& config) {
  if (config.batch_size == 0) throw std::invalid_argument("train_score: batch_size must be positive");
  ScoreTraining result{
      ScoreModel{NeuralField::initialized(dataset.dim(), config.hidden, derive_seed(config.seed, 0))}, {}};
  NeuralField& net = result.model.field;
  AdamState adam(net.parameter_count(), AdamConfig{config.learning_rate});
  std::vector<double> grad(net.parameter_count());
  Rng rng(derive_seed(config.seed, 1));
  result.loss_trace.reserve(config.epochs);
  double last_finite = 0.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const FieldBatch batch = draw_score_batch(dataset, config.batch_size, rng);
    const double loss = sm_loss_gradient(net, batch, grad);
    if (!std::isfinite(loss)) {
      throw DivergenceError("train_score: non-finite loss at epoch " + std::to_string(epoch) + " (batch of " +
                                std::to_string(batch.size()) + " samples), last finite loss " +
                                format_real(last_finite),
                            last_finite);
    }
    last_finite = loss;
    result.loss_trace.push_back(loss);
    adam.set_learning_rate(scheduled_rate(config.learning_rate, config.lr_decay, epoch, config.epochs));
    adam.step(net.parameters(), grad);
  }
  return result;
}

}  // namespace spides
