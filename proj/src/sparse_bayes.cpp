#include "spides/sparse_bayes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "spides/errors.hpp"
#include "spides/rng.hpp"

namespace spides {

std::vector<double> HorseshoePosterior::unconstrained() const {
  std::vector<double> eta;
  eta.reserve(parameter_count());
  auto put = [&eta](const VariationalFactor& f) {
    eta.push_back(f.mu);
    eta.push_back(std::log(f.sigma));
  };
  put(global_a);
  put(global_b);
  for (std::size_t i = 0; i < coefficient_count(); ++i) {
    put(alpha[i]);
    put(beta[i]);
    put(theta_tilde[i]);
  }
  return eta;
}

void HorseshoePosterior::set_unconstrained(std::span<const double> eta) {
  if (eta.size() != parameter_count()) throw std::invalid_argument("set_unconstrained: length mismatch");
  std::size_t k = 0;
  auto take = [&](VariationalFactor& f) {
    f.mu = eta[k];
    f.sigma = std::exp(eta[k + 1]);
    k += 2;
  };
  take(global_a);
  take(global_b);
  for (std::size_t i = 0; i < coefficient_count(); ++i) {
    take(alpha[i]);
    take(beta[i]);
    take(theta_tilde[i]);
  }
}

void HorseshoePosterior::validate() const {
  const std::size_t k = coefficient_count();
  if (alpha.size() != k || beta.size() != k) throw std::invalid_argument("HorseshoePosterior: ragged factors");
  if (!(tau0 > 0.0)) throw std::invalid_argument("HorseshoePosterior: tau0 must be positive");
  auto check = [](const VariationalFactor& f) {
    if (!(f.sigma > 0.0) || !std::isfinite(f.sigma) || !std::isfinite(f.mu)) {
      throw std::invalid_argument("HorseshoePosterior: sigma must be positive and finite");
    }
  };
  check(global_a);
  check(global_b);
  for (std::size_t i = 0; i < k; ++i) {
    check(alpha[i]);
    check(beta[i]);
    check(theta_tilde[i]);
  }
}

HorseshoePosterior initial_posterior(std::size_t coefficients, double tau0, const PosteriorInit& init) {
  HorseshoePosterior post;
  post.tau0 = tau0;
  const VariationalFactor scale{init.scale_mu, init.scale_sigma};
  post.global_a = scale;
  post.global_b = scale;
  post.alpha.assign(coefficients, scale);
  post.beta.assign(coefficients, scale);
  post.theta_tilde.assign(coefficients, VariationalFactor{init.theta_mu, init.theta_sigma});
  post.validate();
  return post;
}

std::vector<double> sample_theta(const HorseshoePosterior& post, std::span<const double> noise) {
  if (noise.size() != post.noise_count()) throw std::invalid_argument("sample_theta: noise length mismatch");
  const double global = post.global_a.mu + post.global_a.sigma * noise[0] + post.global_b.mu +
                        post.global_b.sigma * noise[1];
  std::vector<double> theta(post.coefficient_count());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double* e = noise.data() + 2 + 3 * i;
    const double log_scale = global + post.alpha[i].mu + post.alpha[i].sigma * e[0] + post.beta[i].mu +
                             post.beta[i].sigma * e[1];
    const double tilde = post.theta_tilde[i].mu + post.theta_tilde[i].sigma * e[2];
    theta[i] = tilde * std::exp(0.5 * log_scale);
  }
  return theta;
}

std::vector<double> posterior_median(const HorseshoePosterior& post) {
  std::vector<double> theta(post.coefficient_count());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double log_scale = post.global_a.mu + post.global_b.mu + post.alpha[i].mu + post.beta[i].mu;
    theta[i] = post.theta_tilde[i].mu * std::exp(0.5 * log_scale);
  }
  return theta;
}

double kl_scale_term(double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("kl_scale_term: sigma must be positive");
  return std::exp(0.5 * sigma * sigma - mu) - 0.5 * (2.0 * std::log(sigma) - mu + std::numbers::ln2 + 1.0);
}

double kl_normal_term(double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("kl_normal_term: sigma must be positive");
  return -0.5 * (2.0 * std::log(sigma) - mu * mu - sigma * sigma + 1.0);
}

double kl_global_b_term(const HorseshoePosterior& post, const KlOptions& options) {
  const auto& b = post.global_b;
  if (!options.sb_uses_sa_sigma) return kl_scale_term(b.mu, b.sigma);
  if (!(post.global_a.sigma > 0.0) || !(b.sigma > 0.0)) {
    throw std::invalid_argument("kl_global_b_term: sigma must be positive");
  }
  return std::exp(0.5 * b.sigma * b.sigma - b.mu) -
         0.5 * (2.0 * std::log(post.global_a.sigma) - b.mu + std::numbers::ln2 + 1.0);
}

double kl_divergence(const HorseshoePosterior& post, const KlOptions& options) {
  double kl = kl_global_b_term(post, options);
  for (std::size_t i = 0; i < post.coefficient_count(); ++i) {
    kl += kl_scale_term(post.alpha[i].mu, post.alpha[i].sigma);
    kl += kl_scale_term(post.beta[i].mu, post.beta[i].sigma);
    kl += kl_normal_term(post.theta_tilde[i].mu, post.theta_tilde[i].sigma);
  }
  return kl;
}

namespace {

// Adds d KL / d eta (unconstrained coordinates) scaled by `weight`.
void add_kl_gradient(const HorseshoePosterior& post, const KlOptions& options, double weight, std::span<double> grad) {
  auto scale_grad = [&](const VariationalFactor& f, std::size_t at) {
    const double e = std::exp(0.5 * f.sigma * f.sigma - f.mu);
    grad[at] += weight * (0.5 - e);
    grad[at + 1] += weight * (f.sigma * f.sigma * e - 1.0);
  };
  if (options.sb_uses_sa_sigma) {
    const auto& b = post.global_b;
    const double e = std::exp(0.5 * b.sigma * b.sigma - b.mu);
    grad[2] += weight * (0.5 - e);
    grad[3] += weight * (b.sigma * b.sigma * e);
    grad[1] += weight * -1.0;
  } else {
    scale_grad(post.global_b, 2);
  }
  for (std::size_t i = 0; i < post.coefficient_count(); ++i) {
    const std::size_t at = 4 + 6 * i;
    scale_grad(post.alpha[i], at);
    scale_grad(post.beta[i], at + 2);
    const auto& q = post.theta_tilde[i];
    grad[at + 4] += weight * q.mu;
    grad[at + 5] += weight * (q.sigma * q.sigma - 1.0);
  }
}

// Residual at one point; optionally accumulates weight * d|r|^2/d theta into
// g_theta and weight * d|r|^2/d flow into g_flow. Returns |r|^2.
double residual_norm(const BasisLibrary& lib, std::span<const double> theta, const ResidualPoint& p,
                     double weight, std::span<double> g_theta, std::span<double> g_flow) {
  const std::size_t d = lib.dim(), m = lib.drift_size(), n = lib.diffusion_size();
  const std::size_t diff_off = d * m;
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double drift = p.known_drift[i];
    for (std::size_t k = 0; k < m; ++k) drift += theta[k * d + i] * p.drift_basis[k];
    double g = p.known_diffusion[i];
    double dg = p.known_slope[i];
    for (std::size_t k = 0; k < n; ++k) {
      const double c = theta[diff_off + k * d + i];
      g += c * p.diffusion_basis[k];
      dg += c * p.diffusion_slope[i * n + k];
    }
    const double s = p.score[i];
    const double r = drift - g * dg - 0.5 * g * g * s - p.flow[i];
    total += r * r;
    if (!g_theta.empty()) {
      const double a = 2.0 * r * weight;
      for (std::size_t k = 0; k < m; ++k) g_theta[k * d + i] += a * p.drift_basis[k];
      for (std::size_t k = 0; k < n; ++k) {
        const double psi = p.diffusion_basis[k];
        const double dr = -(psi * dg + g * p.diffusion_slope[i * n + k]) - g * psi * s;
        g_theta[diff_off + k * d + i] += a * dr;
      }
    }
    if (!g_flow.empty()) g_flow[i] += -2.0 * r * weight;
  }
  return total;
}

// Chain rule from d/d theta (one draw) into d/d eta.
void add_theta_chain(const HorseshoePosterior& post, std::span<const double> noise, std::span<const double> theta,
                     std::span<const double> g_theta, std::span<double> grad) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = g_theta[i];
    if (g == 0.0) continue;
    const double* e = noise.data() + 2 + 3 * i;
    const double half = 0.5 * theta[i] * g;
    const std::size_t at = 4 + 6 * i;
    grad[0] += half;
    grad[1] += half * post.global_a.sigma * noise[0];
    grad[2] += half;
    grad[3] += half * post.global_b.sigma * noise[1];
    grad[at] += half;
    grad[at + 1] += half * post.alpha[i].sigma * e[0];
    grad[at + 2] += half;
    grad[at + 3] += half * post.beta[i].sigma * e[1];
    // theta_i = tilde_i * E_i with E_i = theta_i / tilde_i; evaluate E_i directly
    // so tilde_i == 0 is harmless.
    const double log_scale = post.global_a.mu + post.global_a.sigma * noise[0] + post.global_b.mu +
                             post.global_b.sigma * noise[1] + post.alpha[i].mu + post.alpha[i].sigma * e[0] +
                             post.beta[i].mu + post.beta[i].sigma * e[1];
    const double scale = std::exp(0.5 * log_scale);
    grad[at + 4] += g * scale;
    grad[at + 5] += g * scale * post.theta_tilde[i].sigma * e[2];
  }
}

double sparsity_core(const HorseshoePosterior& post, const BasisLibrary& library,
                     std::span<const ResidualPoint* const> points, const std::vector<std::vector<double>>& noise,
                     double lambda_kl, const KlOptions& kl, std::span<double> grad,
                     std::vector<std::vector<double>>* flow_adjoint) {
  if (noise.empty()) throw std::invalid_argument("sparsity_loss: need at least one Monte Carlo draw");
  if (points.empty()) throw std::invalid_argument("sparsity_loss: empty batch");
  const bool want_grad = !grad.empty();
  if (want_grad) {
    if (grad.size() != post.parameter_count()) throw std::invalid_argument("sparsity_loss: gradient size");
    std::fill(grad.begin(), grad.end(), 0.0);
  }
  if (flow_adjoint) flow_adjoint->assign(points.size(), std::vector<double>(library.dim(), 0.0));
  const double weight = 1.0 / static_cast<double>(noise.size() * points.size());
  std::vector<double> g_theta(post.coefficient_count());
  double data_term = 0.0;
  for (const auto& eps : noise) {
    const auto theta = sample_theta(post, eps);
    std::fill(g_theta.begin(), g_theta.end(), 0.0);
    for (std::size_t b = 0; b < points.size(); ++b) {
      std::span<double> gf;
      if (flow_adjoint) gf = (*flow_adjoint)[b];
      data_term += weight * residual_norm(library, theta, *points[b], weight, want_grad ? std::span<double>(g_theta)
                                                                                        : std::span<double>(),
                                          gf);
    }
    if (want_grad) add_theta_chain(post, eps, theta, g_theta, grad);
  }
  double loss = data_term;
  if (lambda_kl != 0.0) {
    loss += lambda_kl * kl_divergence(post, kl);
    if (want_grad) add_kl_gradient(post, kl, lambda_kl, grad);
  }
  return loss;
}

std::vector<std::vector<double>> draw_noise(const HorseshoePosterior& post, std::size_t draws, Rng& rng) {
  std::vector<std::vector<double>> noise(draws, std::vector<double>(post.noise_count()));
  for (auto& v : noise) {
    for (auto& z : v) z = rng.normal();
  }
  return noise;
}

}  // namespace

ResidualPoint make_residual_point(const BasisLibrary& library, std::span<const double> x, double t,
                                  std::span<const double> flow, std::span<const double> score) {
  const std::size_t d = library.dim(), m = library.drift_size(), n = library.diffusion_size();
  ResidualPoint p;
  p.x.assign(x.begin(), x.end());
  p.t = t;
  p.flow.assign(flow.begin(), flow.end());
  p.score.assign(score.begin(), score.end());
  p.drift_basis.resize(m);
  p.diffusion_basis.resize(n);
  p.diffusion_slope.resize(d * n);
  p.known_drift.resize(d);
  p.known_diffusion.resize(d);
  p.known_slope.resize(d);
  library.eval_drift_basis(x, t, p.drift_basis);
  library.eval_diffusion_basis(x, t, p.diffusion_basis);
  for (std::size_t i = 0; i < d; ++i) {
    library.eval_diffusion_derivative(x, t, i, std::span<double>(p.diffusion_slope).subspan(i * n, n));
  }
  library.known_drift_eval(x, t, p.known_drift);
  library.known_diffusion_eval(x, t, p.known_diffusion);
  library.known_diffusion_derivative(x, t, p.known_slope);
  return p;
}

void residual(const BasisLibrary& library, std::span<const double> theta, const ResidualPoint& point,
              std::span<double> out) {
  if (theta.size() != library.coefficient_count()) throw std::invalid_argument("residual: theta length");
  if (out.size() != library.dim()) throw std::invalid_argument("residual: output length");
  // d|r|^2 / d f_i = -2 r_i.
  std::fill(out.begin(), out.end(), 0.0);
  residual_norm(library, theta, point, -0.5, {}, out);
}

std::vector<double> residual(const BasisLibrary& library, std::span<const double> theta, std::span<const double> x,
                             double t, const StateFunction& score, const StateFunction& flow) {
  const std::size_t d = library.dim();
  std::vector<double> f(d), s(d), r(d);
  flow(x, t, f);
  score(x, t, s);
  residual(library, theta, make_residual_point(library, x, t, f, s), r);
  return r;
}

std::vector<ResidualPoint> prepare_points(const SnapshotDataset& dataset, const StateFunction& flow,
                                          const StateFunction& score, const BasisLibrary& library) {
  if (dataset.dim() != library.dim()) throw std::invalid_argument("prepare_points: dimension mismatch");
  std::vector<ResidualPoint> points;
  points.reserve(dataset.total_samples());
  std::vector<double> f(dataset.dim()), s(dataset.dim());
  for (const auto& snap : dataset.snapshots()) {
    for (std::size_t j = 0; j < snap.samples.size(); ++j) {
      const auto x = snap.samples.row(j);
      flow(x, snap.time, f);
      score(x, snap.time, s);
      points.push_back(make_residual_point(library, x, snap.time, f, s));
    }
  }
  return points;
}

double sparsity_loss(const HorseshoePosterior& posterior, const BasisLibrary& library,
                     std::span<const ResidualPoint* const> points, const std::vector<std::vector<double>>& noise,
                     double lambda_kl, const KlOptions& kl, std::span<double> grad) {
  return sparsity_core(posterior, library, points, noise, lambda_kl, kl, grad, nullptr);
}

double sparsity_loss(const HorseshoePosterior& posterior, const BasisLibrary& library,
                     std::span<const ResidualPoint> points, double lambda_kl, std::size_t mc_draws,
                     std::uint64_t seed, const KlOptions& kl) {
  if (mc_draws == 0) throw std::invalid_argument("sparsity_loss: mc_draws must be at least 1");
  Rng rng(seed);
  const auto noise = draw_noise(posterior, mc_draws, rng);
  std::vector<const ResidualPoint*> ptrs;
  ptrs.reserve(points.size());
  for (const auto& p : points) ptrs.push_back(&p);
  return sparsity_core(posterior, library, ptrs, noise, lambda_kl, kl, {}, nullptr);
}

namespace {

void check_fit_config(const FitConfig& config) {
  if (config.mc_draws == 0) throw std::invalid_argument("fit: mc_draws must be at least 1");
  if (config.batch_size == 0) throw std::invalid_argument("fit: batch_size must be positive");
}

DivergenceError fit_divergence(std::size_t epoch, double last) {
  return DivergenceError("identify: non-finite loss at epoch " + std::to_string(epoch) + ", last finite loss " +
                             format_real(last),
                         last);
}

}  // namespace

FitResult fit(std::span<const ResidualPoint> points, const BasisLibrary& library, const FitConfig& config) {
  check_fit_config(config);
  if (points.empty()) throw std::invalid_argument("fit: no points");
  FitResult result{initial_posterior(library.coefficient_count(), config.tau0, config.init), {}};
  auto eta = result.posterior.unconstrained();
  std::vector<double> grad(eta.size());
  AdamState adam(eta.size(), AdamConfig{config.learning_rate});
  Rng rng(derive_seed(config.seed, 7));
  std::vector<const ResidualPoint*> batch(config.batch_size);
  result.loss_trace.reserve(config.epochs);
  double last = 0.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (auto& p : batch) p = &points[rng.index(points.size())];
    const auto noise = draw_noise(result.posterior, config.mc_draws, rng);
    double loss = sparsity_core(result.posterior, library, batch, noise, config.lambda_kl, config.kl, grad, nullptr);
    loss *= config.lambda_sparsity;
    if (!std::isfinite(loss)) throw fit_divergence(epoch, last);
    last = loss;
    result.loss_trace.push_back(loss);
    for (auto& g : grad) g *= config.lambda_sparsity;
    adam.set_learning_rate(scheduled_rate(config.learning_rate, config.lr_decay, epoch, config.epochs));
    adam.step(eta, grad);
    result.posterior.set_unconstrained(eta);
  }
  return result;
}

FitResult fit(const SnapshotDataset& dataset, const StateFunction& flow, const StateFunction& score,
              const BasisLibrary& library, const FitConfig& config) {
  const auto points = prepare_points(dataset, flow, score, library);
  return fit(points, library, config);
}

FitResult fit_joint(const SnapshotDataset& dataset, const std::vector<TransportPlan>& plans, FlowModel& flow,
                    const CfmConfig& cfm, const StateFunction& score, const BasisLibrary& library,
                    const FitConfig& config) {
  check_fit_config(config);
  auto points = prepare_points(dataset, flow.as_function(), score, library);
  const CfmSampler sampler(dataset, plans, cfm.sigma);
  NeuralField& net = flow.field;

  FitResult result{initial_posterior(library.coefficient_count(), config.tau0, config.init), {}};
  auto eta = result.posterior.unconstrained();
  std::vector<double> grad_eta(eta.size());
  std::vector<double> grad_phi(net.parameter_count()), grad_tmp(net.parameter_count());
  AdamState adam_eta(eta.size(), AdamConfig{config.learning_rate});
  AdamState adam_phi(net.parameter_count(), AdamConfig{cfm.learning_rate});
  Rng rng(derive_seed(config.seed, 7));
  Rng cfm_rng(derive_seed(config.seed, 8));
  std::vector<ResidualPoint> batch_points(config.batch_size);
  std::vector<const ResidualPoint*> batch(config.batch_size);
  std::vector<std::vector<double>> flow_adjoint;
  FieldTape tape;
  double last = 0.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      batch_points[b] = points[rng.index(points.size())];
      net.forward(batch_points[b].x, batch_points[b].t, batch_points[b].flow);
      batch[b] = &batch_points[b];
    }
    const auto noise = draw_noise(result.posterior, config.mc_draws, rng);
    const double sparsity = sparsity_core(result.posterior, library, batch, noise, config.lambda_kl, config.kl,
                                          grad_eta, &flow_adjoint);
    const CfmBatch cfm_batch = sampler.draw(cfm.batch_size, cfm_rng);
    const double derivative = cfm_loss_gradient(net, cfm_batch, grad_phi);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      tape.evaluate(net, batch_points[b].x, batch_points[b].t, false);
      for (auto& a : flow_adjoint[b]) a *= config.lambda_sparsity;
      tape.backpropagate(net, flow_adjoint[b], {}, grad_phi);
    }
    const double loss = derivative + config.lambda_sparsity * sparsity;
    if (!std::isfinite(loss)) throw fit_divergence(epoch, last);
    last = loss;
    result.loss_trace.push_back(loss);
    for (auto& g : grad_eta) g *= config.lambda_sparsity;
    adam_eta.set_learning_rate(scheduled_rate(config.learning_rate, config.lr_decay, epoch, config.epochs));
    adam_phi.set_learning_rate(scheduled_rate(cfm.learning_rate, cfm.lr_decay, epoch, config.epochs));
    adam_eta.step(eta, grad_eta);
    adam_phi.step(net.parameters(), grad_phi);
    result.posterior.set_unconstrained(eta);
  }
  return result;
}

std::vector<CoefficientSummary> DiscoveredSde::retained() const {
  std::vector<CoefficientSummary> out;
  for (const auto& c : coefficients) {
    if (c.retained) out.push_back(c);
  }
  return out;
}

namespace {

std::size_t theta_index(const BasisLibrary& lib, const std::string& role, std::size_t dim, std::size_t term) {
  const std::size_t d = lib.dim();
  if (role == "drift") return term * d + (dim - 1);
  return d * lib.drift_size() + term * d + (dim - 1);
}

double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// "(a·x − b·x^3)" style rendering of sum_k coef_k * tag_k.
std::string render_sum(const std::vector<std::pair<double, std::string>>& parts) {
  if (parts.empty()) return "0";
  std::string out;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& [c, tag] = parts[k];
    const bool negative = c < 0.0;
    if (k == 0) {
      if (negative) out += "−";
    } else {
      out += negative ? " − " : " + ";
    }
    out += fixed2(std::abs(c));
    if (tag != "1") out += "·" + tag;
  }
  return parts.size() > 1 ? "(" + out + ")" : out;
}

void merge_part(std::vector<std::pair<double, std::string>>& parts, double c, const std::string& tag) {
  for (auto& p : parts) {
    if (p.second == tag) {
      p.first += c;
      return;
    }
  }
  parts.emplace_back(c, tag);
}

}  // namespace

std::vector<double> DiscoveredSde::theta(const BasisLibrary& library) const {
  std::vector<double> out(library.coefficient_count(), 0.0);
  for (const auto& c : coefficients) {
    if (!c.retained) continue;
    const auto& terms = c.role == "drift" ? library.drift_terms() : library.diffusion_terms();
    for (std::size_t k = 0; k < terms.size(); ++k) {
      if (terms[k].tag() == c.term) out[theta_index(library, c.role, c.dim, k)] = c.median;
    }
  }
  return out;
}

std::string render_equation(const BasisLibrary& library, std::span<const double> theta) {
  const std::size_t d = library.dim();
  std::string out;
  for (std::size_t i = 0; i < d; ++i) {
    std::vector<std::pair<double, std::string>> drift, diffusion;
    for (const auto& [c, term] : library.known_drift()[i].terms()) merge_part(drift, c, term.tag());
    for (std::size_t k = 0; k < library.drift_size(); ++k) {
      const double c = theta[theta_index(library, "drift", i + 1, k)];
      if (c != 0.0) merge_part(drift, c, library.drift_terms()[k].tag());
    }
    for (const auto& [c, term] : library.known_diffusion()[i].terms()) merge_part(diffusion, c, term.tag());
    for (std::size_t k = 0; k < library.diffusion_size(); ++k) {
      const double c = theta[theta_index(library, "diffusion", i + 1, k)];
      if (c != 0.0) merge_part(diffusion, c, library.diffusion_terms()[k].tag());
    }
    const std::string suffix = d == 1 ? "" : std::to_string(i + 1);
    if (i) out += '\n';
    out += "dx" + suffix + " = " + render_sum(drift) + " dt + " + render_sum(diffusion) + " dβ" + suffix;
  }
  return out;
}

DiscoveredSde extract_equation(const HorseshoePosterior& posterior, const BasisLibrary& library, double threshold,
                               std::size_t quantile_draws, std::uint64_t seed) {
  if (!(threshold >= 0.0)) throw std::invalid_argument("extract_equation: threshold must be nonnegative");
  if (posterior.coefficient_count() != library.coefficient_count()) {
    throw std::invalid_argument("extract_equation: posterior does not match the library");
  }
  const std::size_t d = library.dim();
  const auto median = posterior_median(posterior);
  std::vector<std::vector<double>> draws(median.size());
  Rng rng(seed);
  std::vector<double> noise(posterior.noise_count());
  for (std::size_t s = 0; s < std::max<std::size_t>(quantile_draws, 1); ++s) {
    for (auto& z : noise) z = rng.normal();
    const auto theta = sample_theta(posterior, noise);
    for (std::size_t i = 0; i < theta.size(); ++i) draws[i].push_back(theta[i]);
  }

  DiscoveredSde sde;
  sde.threshold = threshold;
  std::vector<double> kept(median.size(), 0.0);
  auto summarize = [&](const std::string& role, std::size_t dim, std::size_t k, const Term& term, double sign) {
    const std::size_t idx = theta_index(library, role, dim, k);
    CoefficientSummary c;
    c.role = role;
    c.dim = dim;
    c.term = term.tag();
    c.median = sign * median[idx];
    const double lo = quantile(draws[idx], 0.1), hi = quantile(draws[idx], 0.9);
    c.q10 = sign > 0 ? lo : -hi;
    c.q90 = sign > 0 ? hi : -lo;
    c.retained = std::abs(median[idx]) >= threshold;
    if (c.retained) kept[idx] = c.median;
    sde.coefficients.push_back(c);
  };
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t k = 0; k < library.drift_size(); ++k) summarize("drift", i + 1, k, library.drift_terms()[k], 1.0);
  }
  for (std::size_t i = 0; i < d; ++i) {
    // Sign of the row: G and -G give the same law when nothing is known.
    double sign = 1.0;
    if (library.known_diffusion()[i].empty()) {
      double lead = 0.0;
      for (std::size_t k = 0; k < library.diffusion_size(); ++k) {
        const double v = median[theta_index(library, "diffusion", i + 1, k)];
        if (std::abs(v) < threshold) continue;
        if (library.diffusion_terms()[k].is_constant()) {
          lead = v;
          break;
        }
        if (std::abs(v) > std::abs(lead)) lead = v;
      }
      if (lead < 0.0) sign = -1.0;
    }
    for (std::size_t k = 0; k < library.diffusion_size(); ++k) {
      summarize("diffusion", i + 1, k, library.diffusion_terms()[k], sign);
    }
  }
  sde.equation = render_equation(library, kept);
  return sde;
}

std::string format_report(const DiscoveredSde& sde) {
  std::ostringstream out;
  out << "Discovered equation:\n" << sde.equation << "\n\n";
  out << "Pruning threshold: " << sde.threshold << "\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-4s %-10s %14s %14s %14s  %s\n", "role", "dim", "term", "median", "q10",
                "q90", "retained");
  out << line;
  for (const auto& c : sde.coefficients) {
    std::snprintf(line, sizeof line, "%-10s %-4zu %-10s %14.6g %14.6g %14.6g  %s\n", c.role.c_str(), c.dim,
                  c.term.c_str(), c.median, c.q10, c.q90, c.retained ? "yes" : "no");
    out << line;
  }
  return out.str();
}

std::string format_coefficients_csv(const DiscoveredSde& sde) {
  std::string out = "role,dim,term,median,q10,q90,retained\n";
  for (const auto& c : sde.coefficients) {
    out += c.role + "," + std::to_string(c.dim) + "," + c.term + "," + format_real(c.median) + "," +
           format_real(c.q10) + "," + format_real(c.q90) + "," + (c.retained ? "1" : "0") + "\n";
  }
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  file << text;
  if (!file) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_report(const std::filesystem::path& path, const DiscoveredSde& sde) { write_text(path, format_report(sde)); }

void write_coefficients_csv(const std::filesystem::path& path, const DiscoveredSde& sde) {
  write_text(path, format_coefficients_csv(sde));
}

std::vector<double> read_coefficients_csv(const std::filesystem::path& path, const BasisLibrary& library) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ValidationError("cannot open coefficients " + path.string());
  std::string line;
  std::size_t number = 1;
  if (!std::getline(file, line) || line != "role,dim,term,median,q10,q90,retained") {
    throw FormatError("missing coefficient CSV header", 1);
  }
  DiscoveredSde sde;
  while (std::getline(file, line)) {
    ++number;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream row(line);
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() != 7) throw FormatError("expected 7 columns", number);
    CoefficientSummary c;
    c.role = fields[0];
    if (c.role != "drift" && c.role != "diffusion") throw FormatError("unknown role '" + c.role + "'", number);
    auto num = [&](const std::string& s) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        throw FormatError("invalid number '" + s + "'", number);
      }
      return v;
    };
    const double dim = num(fields[1]);
    if (dim < 1 || dim > static_cast<double>(library.dim()) || dim != std::floor(dim)) {
      throw FormatError("dimension out of range", number);
    }
    c.dim = static_cast<std::size_t>(dim);
    c.term = Term::parse(fields[2], library.dim()).tag();
    c.median = num(fields[3]);
    c.retained = fields[6] == "1";
    if (!c.retained && fields[6] != "0") throw FormatError("retained flag must be 0 or 1", number);
    const auto& terms = c.role == "drift" ? library.drift_terms() : library.diffusion_terms();
    if (std::none_of(terms.begin(), terms.end(), [&](const Term& t) { return t.tag() == c.term; })) {
      throw FormatError("term '" + c.term + "' is not in the configured library", number);
    }
    sde.coefficients.push_back(c);
  }
  return sde.theta(library);
}

}  // namespace spides
