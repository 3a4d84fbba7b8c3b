#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "spides/snapshots.hpp"

namespace spides {

// Fully connected tanh network mapping (x, t) in R^{d+1} to R^d. The output
// layer is affine. Parameters live in one flat vector; layer l stores its
// fan_out x fan_in weight matrix (row-major) followed by its bias.
class NeuralField {
 public:
  struct Layer {
    std::size_t fan_in = 0;
    std::size_t fan_out = 0;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
  };

  // All parameters zero.
  NeuralField(std::size_t state_dim, std::vector<std::size_t> hidden);
  // Weights and biases uniform in +-1/sqrt(fan_in).
  static NeuralField initialized(std::size_t state_dim, std::vector<std::size_t> hidden,
                                 std::uint64_t seed);

  std::size_t state_dim() const { return state_dim_; }
  std::size_t input_dim() const { return state_dim_ + 1; }
  std::size_t output_dim() const { return state_dim_; }
  const std::vector<std::size_t>& hidden() const { return hidden_; }
  // input_dim, hidden..., output_dim
  std::vector<std::size_t> widths() const;
  const std::vector<Layer>& layers() const { return layers_; }

  std::size_t parameter_count() const { return parameters_.size(); }
  std::span<const double> parameters() const { return parameters_; }
  std::span<double> parameters() { return parameters_; }

  void forward(std::span<const double> x, double t, std::span<double> out) const;
  std::vector<double> forward(std::span<const double> x, double t) const;
  // sum_i d out_i / d x_i (state block only, not time).
  double input_jacobian_trace(std::span<const double> x, double t) const;

 private:
  std::size_t state_dim_;
  std::vector<std::size_t> hidden_;
  std::vector<Layer> layers_;
  std::vector<double> parameters_;
};

// Forward pass that records what reverse mode needs. With tangents enabled it
// also propagates the d state directions, giving the d x d input Jacobian
// J[i * d + j] = d out_i / d x_j, and backpropagation then differentiates
// losses that depend on J.
class FieldTape {
 public:
  void evaluate(const NeuralField& net, std::span<const double> x, double t, bool with_jacobian);

  std::span<const double> output() const { return output_; }
  std::span<const double> jacobian() const { return jacobian_; }
  double trace() const;

  // Adds d loss / d params to grad given d loss / d output and (when the
  // tape holds tangents) d loss / d J. d_jacobian may be empty.
  void backpropagate(const NeuralField& net, std::span<const double> d_output,
                     std::span<const double> d_jacobian, std::span<double> grad);

 private:
  bool tangents_ = false;
  std::size_t d_ = 0;
  // Per layer l: input activation, input tangents (d x fan_in), pre-activation
  // tangents (d x fan_out), post-activation values.
  std::vector<std::vector<double>> inputs_, input_tangents_, pre_tangents_, activations_;
  std::vector<double> output_, jacobian_;
  std::vector<double> g_, g_next_, gt_, gt_next_;
};

struct FieldBatch {
  PointCloud x;
  std::vector<double> t;

  std::size_t size() const { return t.size(); }
};

// Per-sample loss: given the output (and the Jacobian when requested) return
// the loss contribution and fill its partials. d_jacobian is empty when the
// Jacobian was not requested.
using SampleLoss = std::function<double(std::size_t index, std::span<const double> output,
                                        std::span<const double> jacobian, std::span<double> d_output,
                                        std::span<double> d_jacobian)>;

// Reverse-mode gradient of sum_i loss_i over a batch, accumulated in batch
// order. grad is overwritten; returns the summed loss.
double grad_params(const NeuralField& net, const FieldBatch& batch, const SampleLoss& loss,
                   bool with_jacobian, std::span<double> grad);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Exponential schedule from lr at epoch 0 to lr * decay at the last epoch.
double scheduled_rate(double lr, double decay, std::size_t epoch, std::size_t epochs);

// Bias-corrected Adam.
class AdamState {
 public:
  AdamState(std::size_t size, AdamConfig config = {});

  void step(std::span<double> params, std::span<const double> grads);
  void set_learning_rate(double lr) { config_.learning_rate = lr; }

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::vector<double> m_, v_;
  std::size_t steps_ = 0;
};

enum class ModelKind { Flow, Score };

std::string to_string(ModelKind kind);

struct StoredModel {
  ModelKind kind;
  NeuralField field;
};

// Text format:
//   # spides-model v1 kind=<flow|score> d=<d>
//   <comma-separated layer widths>
//   one parameter per line, 17 significant digits
std::string format_model(ModelKind kind, const NeuralField& net);
void write_model(const std::filesystem::path& path, ModelKind kind, const NeuralField& net);
StoredModel parse_model(const std::string& text);
StoredModel read_model(const std::filesystem::path& path);

}  // namespace spides
