#include "spides/flow_matching.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "spides/errors.hpp"

namespace spides {

StateFunction FlowModel::as_function() const {
  return [this](std::span<const double> x, double t, std::span<double> out) { field.forward(x, t, out); };
}

std::vector<double> sample_conditional(std::span<const double> x_a, std::span<const double> x_b,
                                       double t_a, double t_b, double t, double sigma,
                                       std::span<const double> noise) {
  if (!(t >= t_a && t < t_b)) throw std::invalid_argument("sample_conditional: t outside [t_a, t_b)");
  const double span = t_b - t_a;
  std::vector<double> out(x_a.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = ((t - t_a) * x_b[j] + (t_b - t) * x_a[j]) / span + sigma * noise[j];
  }
  return out;
}

std::vector<double> conditional_velocity(std::span<const double> x_a, std::span<const double> x_b,
                                         double t_a, double t_b) {
  if (!(t_b > t_a)) throw std::invalid_argument("conditional_velocity: t_b must exceed t_a");
  std::vector<double> out(x_a.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = (x_b[j] - x_a[j]) / (t_b - t_a);
  return out;
}

std::vector<TransportPlan> couple_snapshots(const SnapshotDataset& dataset, std::size_t chunk,
                                            std::uint64_t seed) {
  std::vector<TransportPlan> plans;
  plans.reserve(dataset.size() - 1);
  for (std::size_t k = 0; k + 1 < dataset.size(); ++k) {
    const auto& a = dataset[k].samples;
    const auto& b = dataset[k + 1].samples;
    const std::uint64_t s = derive_seed(seed, k);
    plans.push_back(chunk == 0 ? solve_ot(a, b, OtOptions{true, s}) : solve_ot_minibatch(a, b, chunk, s));
  }
  return plans;
}

CfmSampler::CfmSampler(const SnapshotDataset& dataset, const std::vector<TransportPlan>& plans,
                       double sigma)
    : dataset_(&dataset), times_(dataset.times()), sigma_(sigma) {
  if (plans.size() + 1 != dataset.size()) {
    throw std::invalid_argument("CfmSampler: need one plan per adjacent snapshot interval");
  }
  if (!(sigma >= 0.0)) throw std::invalid_argument("CfmSampler: sigma must be nonnegative");
  samplers_.reserve(plans.size());
  for (const auto& p : plans) samplers_.emplace_back(p);
}

CfmBatch CfmSampler::draw(std::size_t count, Rng& rng) const {
  const std::size_t d = dataset_->dim();
  CfmBatch batch;
  batch.source = PointCloud(d, count);
  batch.target = PointCloud(d, count);
  batch.position = PointCloud(d, count);
  batch.velocity = PointCloud(d, count);
  batch.interval.resize(count);
  batch.t.resize(count);
  std::vector<double> noise(d);
  const double t_first = times_.front(), t_last = times_.back();
  for (std::size_t n = 0; n < count; ++n) {
    double t = rng.uniform(t_first, t_last);
    auto it = std::upper_bound(times_.begin(), times_.end(), t);
    std::size_t k = static_cast<std::size_t>(it - times_.begin());
    k = std::clamp<std::size_t>(k, 1, times_.size() - 1) - 1;
    t = std::clamp(t, times_[k], std::nextafter(times_[k + 1], times_[k]));
    const auto& pair = samplers_[k].draw(rng);
    const auto xa = (*dataset_)[k].samples.row(pair.source);
    const auto xb = (*dataset_)[k + 1].samples.row(pair.target);
    for (auto& z : noise) z = rng.normal();
    const auto xt = sample_conditional(xa, xb, times_[k], times_[k + 1], t, sigma_, noise);
    const auto v = conditional_velocity(xa, xb, times_[k], times_[k + 1]);
    batch.interval[n] = k;
    batch.t[n] = t;
    std::copy(xa.begin(), xa.end(), batch.source.row(n).begin());
    std::copy(xb.begin(), xb.end(), batch.target.row(n).begin());
    std::copy(xt.begin(), xt.end(), batch.position.row(n).begin());
    std::copy(v.begin(), v.end(), batch.velocity.row(n).begin());
  }
  return batch;
}

double cfm_loss(const StateFunction& model, const CfmBatch& batch) {
  const std::size_t d = batch.position.dim();
  std::vector<double> out(d);
  double total = 0.0;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    model(batch.position.row(n), batch.t[n], out);
    const auto v = batch.velocity.row(n);
    for (std::size_t j = 0; j < d; ++j) total += (out[j] - v[j]) * (out[j] - v[j]);
  }
  return total / static_cast<double>(batch.size());
}

double cfm_loss(const NeuralField& model, const CfmBatch& batch) {
  return cfm_loss([&model](std::span<const double> x, double t, std::span<double> out) { model.forward(x, t, out); },
                  batch);
}

double cfm_loss_gradient(const NeuralField& model, const CfmBatch& batch, std::span<double> grad) {
  const double scale = 1.0 / static_cast<double>(batch.size());
  const FieldBatch inputs{batch.position, batch.t};
  return grad_params(
      model, inputs,
      [&](std::size_t n, std::span<const double> out, std::span<const double>, std::span<double> d_out,
          std::span<double>) {
        const auto v = batch.velocity.row(n);
        double loss = 0.0;
        for (std::size_t j = 0; j < out.size(); ++j) {
          const double r = out[j] - v[j];
          loss += r * r;
          d_out[j] = 2.0 * r * scale;
        }
        return loss * scale;
      },
      false, grad);
}

FlowTraining train_flow(const SnapshotDataset& dataset, const std::vector<TransportPlan>& plans,
                        const CfmConfig& config) {
  if (config.batch_size == 0) throw std::invalid_argument("train_flow: batch_size must be positive");
  const CfmSampler sampler(dataset, plans, config.sigma);
  FlowTraining result{FlowModel{NeuralField::initialized(dataset.dim(), config.hidden, derive_seed(config.seed, 0))},
                      {}};
  NeuralField& net = result.model.field;
  AdamState adam(net.parameter_count(), AdamConfig{config.learning_rate});
  std::vector<double> grad(net.parameter_count());
  Rng rng(derive_seed(config.seed, 1));
  result.loss_trace.reserve(config.epochs);
  double last_finite = 0.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const CfmBatch batch = sampler.draw(config.batch_size, rng);
    const double loss = cfm_loss_gradient(net, batch, grad);
    if (!std::isfinite(loss)) {
      throw DivergenceError("train_flow: non-finite loss at epoch " + std::to_string(epoch) + " (batch of " +
                                std::to_string(batch.size()) + " tuples), last finite loss " +
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

PointCloud integrate_flow(const StateFunction& field, const PointCloud& x0, double t0, double t1,
                          double step) {
  if (!(step > 0.0)) throw std::invalid_argument("integrate_flow: step must be positive");
  PointCloud x = x0;
  if (t1 == t0) return x;
  const auto steps = static_cast<std::size_t>(std::ceil(std::abs(t1 - t0) / step - 1e-9));
  const double h = (t1 - t0) / static_cast<double>(std::max<std::size_t>(steps, 1));
  const std::size_t d = x.dim();
  std::vector<double> k1(d), k2(d), k3(d), k4(d), tmp(d);
  for (std::size_t p = 0; p < x.size(); ++p) {
    auto state = x.row(p);
    double t = t0;
    for (std::size_t s = 0; s < std::max<std::size_t>(steps, 1); ++s) {
      field(state, t, k1);
      for (std::size_t j = 0; j < d; ++j) tmp[j] = state[j] + 0.5 * h * k1[j];
      field(tmp, t + 0.5 * h, k2);
      for (std::size_t j = 0; j < d; ++j) tmp[j] = state[j] + 0.5 * h * k2[j];
      field(tmp, t + 0.5 * h, k3);
      for (std::size_t j = 0; j < d; ++j) tmp[j] = state[j] + h * k3[j];
      field(tmp, t + h, k4);
      for (std::size_t j = 0; j < d; ++j) {
        state[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        if (!std::isfinite(state[j])) {
          throw DivergenceError("integrate_flow: non-finite state for point " + std::to_string(p) +
                                    " at t=" + format_real(t + h),
                                0.0);
        }
      }
      t = t0 + static_cast<double>(s + 1) * h;
    }
  }
  return x;
}

}  // namespace spides
