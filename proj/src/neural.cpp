#include "spides/neural.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "spides/errors.hpp"
#include "spides/rng.hpp"

namespace spides {

NeuralField::NeuralField(std::size_t state_dim, std::vector<std::size_t> hidden)
    : state_dim_(state_dim), hidden_(std::move(hidden)) {
  if (state_dim_ == 0) throw std::invalid_argument("NeuralField: state dimension must be positive");
  std::size_t offset = 0;
  std::size_t fan_in = input_dim();
  auto add_layer = [&](std::size_t fan_out) {
    if (fan_out == 0) throw std::invalid_argument("NeuralField: zero layer width");
    Layer layer{fan_in, fan_out, offset, offset + fan_in * fan_out};
    offset = layer.bias_offset + fan_out;
    layers_.push_back(layer);
    fan_in = fan_out;
  };
  for (std::size_t w : hidden_) add_layer(w);
  add_layer(output_dim());
  parameters_.assign(offset, 0.0);
}

NeuralField NeuralField::initialized(std::size_t state_dim, std::vector<std::size_t> hidden,
                                     std::uint64_t seed) {
  NeuralField net(state_dim, std::move(hidden));
  Rng rng(seed);
  for (const auto& layer : net.layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.fan_in));
    const std::size_t end = layer.bias_offset + layer.fan_out;
    for (std::size_t k = layer.weight_offset; k < end; ++k) net.parameters_[k] = rng.uniform(-bound, bound);
  }
  return net;
}

std::vector<std::size_t> NeuralField::widths() const {
  std::vector<std::size_t> w{input_dim()};
  w.insert(w.end(), hidden_.begin(), hidden_.end());
  w.push_back(output_dim());
  return w;
}

void NeuralField::forward(std::span<const double> x, double t, std::span<double> out) const {
  std::vector<double> h(x.begin(), x.end());
  h.push_back(t);
  std::vector<double> z;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const double* w = parameters_.data() + layer.weight_offset;
    const double* b = parameters_.data() + layer.bias_offset;
    z.assign(layer.fan_out, 0.0);
    for (std::size_t o = 0; o < layer.fan_out; ++o) {
      double acc = b[o];
      const double* wr = w + o * layer.fan_in;
      for (std::size_t i = 0; i < layer.fan_in; ++i) acc += wr[i] * h[i];
      z[o] = l + 1 < layers_.size() ? std::tanh(acc) : acc;
    }
    h.swap(z);
  }
  std::copy(h.begin(), h.end(), out.begin());
}

std::vector<double> NeuralField::forward(std::span<const double> x, double t) const {
  std::vector<double> out(output_dim());
  forward(x, t, out);
  return out;
}

double NeuralField::input_jacobian_trace(std::span<const double> x, double t) const {
  FieldTape tape;
  tape.evaluate(*this, x, t, true);
  return tape.trace();
}

void FieldTape::evaluate(const NeuralField& net, std::span<const double> x, double t,
                         bool with_jacobian) {
  const auto& layers = net.layers();
  const auto params = net.parameters();
  const std::size_t L = layers.size();
  d_ = net.state_dim();
  tangents_ = with_jacobian;
  const std::size_t k_count = tangents_ ? d_ : 0;

  inputs_.resize(L);
  input_tangents_.resize(L);
  pre_tangents_.resize(L);
  activations_.resize(L);

  inputs_[0].assign(x.begin(), x.end());
  inputs_[0].push_back(t);
  input_tangents_[0].assign(k_count * net.input_dim(), 0.0);
  for (std::size_t k = 0; k < k_count; ++k) input_tangents_[0][k * net.input_dim() + k] = 1.0;

  for (std::size_t l = 0; l < L; ++l) {
    const auto& layer = layers[l];
    const double* w = params.data() + layer.weight_offset;
    const double* b = params.data() + layer.bias_offset;
    const bool hidden = l + 1 < L;
    const auto& h = inputs_[l];
    const auto& ht = input_tangents_[l];
    auto& a = activations_[l];
    auto& zt = pre_tangents_[l];
    a.resize(layer.fan_out);
    zt.assign(k_count * layer.fan_out, 0.0);
    for (std::size_t o = 0; o < layer.fan_out; ++o) {
      const double* wr = w + o * layer.fan_in;
      double acc = b[o];
      for (std::size_t i = 0; i < layer.fan_in; ++i) acc += wr[i] * h[i];
      a[o] = hidden ? std::tanh(acc) : acc;
      for (std::size_t k = 0; k < k_count; ++k) {
        const double* hk = ht.data() + k * layer.fan_in;
        double dot = 0.0;
        for (std::size_t i = 0; i < layer.fan_in; ++i) dot += wr[i] * hk[i];
        zt[k * layer.fan_out + o] = dot;
      }
    }
    if (hidden) {
      inputs_[l + 1] = a;
      auto& next_t = input_tangents_[l + 1];
      next_t.resize(k_count * layer.fan_out);
      for (std::size_t k = 0; k < k_count; ++k) {
        for (std::size_t o = 0; o < layer.fan_out; ++o) {
          next_t[k * layer.fan_out + o] = (1.0 - a[o] * a[o]) * zt[k * layer.fan_out + o];
        }
      }
    }
  }
  output_ = activations_[L - 1];
  jacobian_.assign(k_count * d_, 0.0);
  const auto& zt = pre_tangents_[L - 1];
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t i = 0; i < d_; ++i) jacobian_[i * d_ + k] = zt[k * d_ + i];
  }
}

double FieldTape::trace() const {
  double tr = 0.0;
  for (std::size_t i = 0; i < d_; ++i) tr += jacobian_[i * d_ + i];
  return tr;
}

void FieldTape::backpropagate(const NeuralField& net, std::span<const double> d_output,
                              std::span<const double> d_jacobian, std::span<double> grad) {
  const auto& layers = net.layers();
  const auto params = net.parameters();
  const std::size_t L = layers.size();
  const bool use_tangents = tangents_ && !d_jacobian.empty();
  const std::size_t k_count = use_tangents ? d_ : 0;

  // g_: adjoint of the current layer's output; gt_: adjoints of its tangents.
  g_.assign(d_output.begin(), d_output.end());
  gt_.assign(k_count * d_, 0.0);
  for (std::size_t k = 0; k < k_count; ++k) {
    for (std::size_t i = 0; i < d_; ++i) gt_[k * d_ + i] = d_jacobian[i * d_ + k];
  }

  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = layers[l];
    const double* w = params.data() + layer.weight_offset;
    double* gw = grad.data() + layer.weight_offset;
    double* gb = grad.data() + layer.bias_offset;
    const std::size_t fo = layer.fan_out, fi = layer.fan_in;

    if (l + 1 < L) {
      // Through tanh: a = tanh(z), da/dz = s = 1 - a^2, d2a/dz2 = -2 a s.
      const auto& a = activations_[l];
      const auto& zt = pre_tangents_[l];
      for (std::size_t o = 0; o < fo; ++o) {
        const double s = 1.0 - a[o] * a[o];
        double gz = g_[o] * s;
        for (std::size_t k = 0; k < k_count; ++k) {
          gz += gt_[k * fo + o] * (-2.0 * a[o] * s) * zt[k * fo + o];
          gt_[k * fo + o] *= s;
        }
        g_[o] = gz;
      }
    }

    const auto& h = inputs_[l];
    const auto& ht = input_tangents_[l];
    g_next_.assign(fi, 0.0);
    gt_next_.assign(k_count * fi, 0.0);
    for (std::size_t o = 0; o < fo; ++o) {
      const double* wr = w + o * fi;
      double* gwr = gw + o * fi;
      const double go = g_[o];
      gb[o] += go;
      for (std::size_t i = 0; i < fi; ++i) {
        gwr[i] += go * h[i];
        g_next_[i] += wr[i] * go;
      }
      for (std::size_t k = 0; k < k_count; ++k) {
        const double gto = gt_[k * fo + o];
        if (gto == 0.0) continue;
        const double* hk = ht.data() + k * fi;
        double* gnk = gt_next_.data() + k * fi;
        for (std::size_t i = 0; i < fi; ++i) {
          gwr[i] += gto * hk[i];
          gnk[i] += wr[i] * gto;
        }
      }
    }
    g_.swap(g_next_);
    gt_.swap(gt_next_);
  }
}

double grad_params(const NeuralField& net, const FieldBatch& batch, const SampleLoss& loss,
                   bool with_jacobian, std::span<double> grad) {
  if (grad.size() != net.parameter_count()) throw std::invalid_argument("grad_params: gradient size");
  std::fill(grad.begin(), grad.end(), 0.0);
  const std::size_t d = net.state_dim();
  FieldTape tape;
  std::vector<double> d_out(d), d_jac(with_jacobian ? d * d : 0);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    tape.evaluate(net, batch.x.row(i), batch.t[i], with_jacobian);
    std::fill(d_out.begin(), d_out.end(), 0.0);
    std::fill(d_jac.begin(), d_jac.end(), 0.0);
    total += loss(i, tape.output(), tape.jacobian(), d_out, d_jac);
    tape.backpropagate(net, d_out, d_jac, grad);
  }
  return total;
}

double scheduled_rate(double lr, double decay, std::size_t epoch, std::size_t epochs) {
  if (decay == 1.0 || epochs < 2) return lr;
  return lr * std::pow(decay, static_cast<double>(epoch) / static_cast<double>(epochs - 1));
}

AdamState::AdamState(std::size_t size, AdamConfig config)
    : config_(config), m_(size, 0.0), v_(size, 0.0) {}

void AdamState::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("AdamState::step: length mismatch");
  }
  ++steps_;
  const double n = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, n);
  const double c2 = 1.0 - std::pow(config_.beta2, n);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grads[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grads[i] * grads[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
  }
}

std::string to_string(ModelKind kind) { return kind == ModelKind::Flow ? "flow" : "score"; }

std::string format_model(ModelKind kind, const NeuralField& net) {
  std::string out = "# spides-model v1 kind=" + to_string(kind) + " d=" + std::to_string(net.state_dim()) + "\n";
  const auto widths = net.widths();
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(widths[i]);
  }
  out += '\n';
  for (double p : net.parameters()) out += format_real(p) + "\n";
  return out;
}

void write_model(const std::filesystem::path& path, ModelKind kind, const NeuralField& net) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  file << format_model(kind, net);
  if (!file) throw IoError("failed writing " + path.string());
}

namespace {

std::size_t parse_size(std::string_view token, std::size_t line) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw FormatError("cannot parse integer '" + std::string(token) + "'", line);
  }
  return value;
}

}  // namespace

StoredModel parse_model(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("# spides-model v1 kind=", 0) != 0) {
    throw FormatError("missing '# spides-model v1' header", 1);
  }
  const std::string rest = line.substr(std::string("# spides-model v1 kind=").size());
  const auto space = rest.find(' ');
  if (space == std::string::npos || rest.compare(space, 3, " d=") != 0) {
    throw FormatError("malformed model header", 1);
  }
  const std::string kind_tag = rest.substr(0, space);
  ModelKind kind;
  if (kind_tag == "flow") {
    kind = ModelKind::Flow;
  } else if (kind_tag == "score") {
    kind = ModelKind::Score;
  } else {
    throw FormatError("unknown model kind '" + kind_tag + "'", 1);
  }
  const std::size_t d = parse_size(std::string_view(rest).substr(space + 3), 1);

  if (!std::getline(in, line)) throw FormatError("missing layer widths", 2);
  std::vector<std::size_t> widths;
  std::string_view sv(line);
  while (true) {
    const auto comma = sv.find(',');
    widths.push_back(parse_size(sv.substr(0, comma), 2));
    if (comma == std::string_view::npos) break;
    sv.remove_prefix(comma + 1);
  }
  if (widths.size() < 2 || widths.front() != d + 1 || widths.back() != d) {
    throw FormatError("layer widths do not match d=" + std::to_string(d), 2);
  }
  NeuralField net(d, std::vector<std::size_t>(widths.begin() + 1, widths.end() - 1));
  auto params = net.parameters();
  std::size_t number = 2;
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!std::getline(in, line)) throw FormatError("too few parameters", number + 1);
    ++number;
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), value);
    if (ec != std::errc() || ptr != line.data() + line.size() || !std::isfinite(value)) {
      throw FormatError("invalid parameter '" + line + "'", number);
    }
    params[k] = value;
  }
  if (std::getline(in, line)) throw FormatError("unexpected trailing content", number + 1);
  return {kind, std::move(net)};
}

StoredModel read_model(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ValidationError("cannot open model " + path.string());
  std::ostringstream buffer;
  buffer << file.rdbuf();
  return parse_model(buffer.str());
}

}  // namespace spides
