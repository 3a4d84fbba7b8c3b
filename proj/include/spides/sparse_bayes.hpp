#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "spides/flow_matching.hpp"
#include "spides/library.hpp"
#include "spides/neural.hpp"
#include "spides/snapshots.hpp"

namespace spides {

// Mean and standard deviation of one variational factor: log-normal for the
// scales, normal for theta-tilde.
struct VariationalFactor {
  double mu = 0.0;
  double sigma = 1.0;
};

// Mean-field posterior over the horseshoe decomposition
//   theta_i = theta_tilde_i * sqrt(s_a * s_b * alpha_i * beta_i).
struct HorseshoePosterior {
  VariationalFactor global_a;
  VariationalFactor global_b;
  std::vector<VariationalFactor> alpha;
  std::vector<VariationalFactor> beta;
  std::vector<VariationalFactor> theta_tilde;
  double tau0 = 1e-5;

  std::size_t coefficient_count() const { return theta_tilde.size(); }
  // 2 reals per factor: 4 + 6 * coefficients.
  std::size_t parameter_count() const { return 4 + 6 * coefficient_count(); }
  // Noise vector length: one draw per factor, 2 + 3 * coefficients.
  std::size_t noise_count() const { return 2 + 3 * coefficient_count(); }

  // Optimisation coordinates (mu, log sigma) per factor, ordered s_a, s_b,
  // then (alpha_i, beta_i, theta_tilde_i) for each coefficient.
  std::vector<double> unconstrained() const;
  void set_unconstrained(std::span<const double> eta);

  void validate() const;
};

struct PosteriorInit {
  double theta_mu = 0.0;
  double theta_sigma = 0.1;
  double scale_mu = -1.0;
  double scale_sigma = 0.1;
};

HorseshoePosterior initial_posterior(std::size_t coefficients, double tau0, const PosteriorInit& init = {});

// Reparameterised draw. Noise layout matches noise_count(): [e_sa, e_sb,
// (e_alpha_i, e_beta_i, e_theta_i)...].
std::vector<double> sample_theta(const HorseshoePosterior& posterior, std::span<const double> noise);

// mu_theta_i * exp((mu_sa + mu_sb + mu_alpha_i + mu_beta_i) / 2).
std::vector<double> posterior_median(const HorseshoePosterior& posterior);

struct KlOptions {
  // The closed form printed for D(q(s_b) || p(s_b)) contains log sigma_{s_a};
  // by default it is read as log sigma_{s_b}. Setting this reproduces the
  // printed variant.
  bool sb_uses_sa_sigma = false;
};

// exp(sigma^2 / 2 - mu) - (2 log sigma - mu + log 2 + 1) / 2, the form shared
// by the s_b, alpha_i and beta_i terms.
double kl_scale_term(double mu, double sigma);
// -(2 log sigma - mu^2 - sigma^2 + 1) / 2, the theta-tilde term.
double kl_normal_term(double mu, double sigma);
double kl_global_b_term(const HorseshoePosterior& posterior, const KlOptions& options = {});
// D(q(s_b)) + D(q(alpha)) + D(q(beta)) + D(q(theta_tilde)); no s_a term.
double kl_divergence(const HorseshoePosterior& posterior, const KlOptions& options = {});

// Everything the residual needs at one (x, t), with the frozen flow and
// score already evaluated.
struct ResidualPoint {
  std::vector<double> x;
  double t = 0.0;
  std::vector<double> flow;
  std::vector<double> score;
  std::vector<double> drift_basis;      // m
  std::vector<double> diffusion_basis;  // n
  std::vector<double> diffusion_slope;  // d x n: d psi_k / d x_i at [i * n + k]
  std::vector<double> known_drift;      // d
  std::vector<double> known_diffusion;  // d
  std::vector<double> known_slope;      // d: d G_0,ii / d x_i
};

ResidualPoint make_residual_point(const BasisLibrary& library, std::span<const double> x, double t,
                                  std::span<const double> flow, std::span<const double> score);

// F_theta - (1/2) div(G G^T) - (1/2) G G^T s - f.
void residual(const BasisLibrary& library, std::span<const double> theta, const ResidualPoint& point,
              std::span<double> out);
std::vector<double> residual(const BasisLibrary& library, std::span<const double> theta,
                             std::span<const double> x, double t, const StateFunction& score,
                             const StateFunction& flow);

// Precomputes residual points for every sample of every snapshot.
std::vector<ResidualPoint> prepare_points(const SnapshotDataset& dataset, const StateFunction& flow,
                                          const StateFunction& score, const BasisLibrary& library);

// Monte Carlo estimate over the given noise draws and points of
// mean |r|^2 + lambda_kl * KL. When grad is non-empty it receives the
// gradient with respect to posterior.unconstrained().
double sparsity_loss(const HorseshoePosterior& posterior, const BasisLibrary& library,
                     std::span<const ResidualPoint* const> points, const std::vector<std::vector<double>>& noise,
                     double lambda_kl, const KlOptions& kl, std::span<double> grad = {});

// Same with `mc_draws` standard-normal noise vectors drawn from `seed`.
double sparsity_loss(const HorseshoePosterior& posterior, const BasisLibrary& library,
                     std::span<const ResidualPoint> points, double lambda_kl, std::size_t mc_draws,
                     std::uint64_t seed, const KlOptions& kl = {});

struct FitConfig {
  double lambda_kl = 1e-4;
  double lambda_sparsity = 1.0;
  double tau0 = 1e-5;
  double learning_rate = 1e-2;
  // Final learning rate as a fraction of the initial one; 1 keeps it constant.
  double lr_decay = 1.0;
  std::size_t epochs = 5000;
  std::size_t mc_draws = 8;
  std::size_t batch_size = 512;
  std::uint64_t seed = 0;
  KlOptions kl;
  PosteriorInit init;
};

struct FitResult {
  HorseshoePosterior posterior;
  std::vector<double> loss_trace;
};

// Adam over the variational parameters with frozen flow and score.
FitResult fit(std::span<const ResidualPoint> points, const BasisLibrary& library, const FitConfig& config);
FitResult fit(const SnapshotDataset& dataset, const StateFunction& flow, const StateFunction& score,
              const BasisLibrary& library, const FitConfig& config);

// Joint variant: the flow network is also updated, on the CFM loss plus
// lambda_sparsity times the residual term.
FitResult fit_joint(const SnapshotDataset& dataset, const std::vector<TransportPlan>& plans, FlowModel& flow,
                    const CfmConfig& cfm, const StateFunction& score, const BasisLibrary& library,
                    const FitConfig& config);

struct CoefficientSummary {
  std::string role;  // "drift" or "diffusion"
  std::size_t dim = 1;  // 1-based
  std::string term;
  double median = 0.0;
  double q10 = 0.0;
  double q90 = 0.0;
  bool retained = false;
};

struct DiscoveredSde {
  std::vector<CoefficientSummary> coefficients;  // every library term, library order
  double threshold = 0.0;
  std::string equation;

  std::vector<CoefficientSummary> retained() const;
  // Medians of retained terms in the library's theta layout, zero elsewhere.
  std::vector<double> theta(const BasisLibrary& library) const;
};

// Medians below `threshold` in magnitude are dropped. Quantiles come from
// `quantile_draws` posterior samples. Diffusion rows without a known part are
// sign-normalised so the leading retained coefficient is positive.
DiscoveredSde extract_equation(const HorseshoePosterior& posterior, const BasisLibrary& library, double threshold,
                               std::size_t quantile_draws = 1000, std::uint64_t seed = 0);

// e.g. "dx = (4.00·x − 1.00·x^3) dt + 1.00 dβ"
std::string render_equation(const BasisLibrary& library, std::span<const double> theta);

std::string format_report(const DiscoveredSde& sde);
std::string format_coefficients_csv(const DiscoveredSde& sde);
void write_report(const std::filesystem::path& path, const DiscoveredSde& sde);
void write_coefficients_csv(const std::filesystem::path& path, const DiscoveredSde& sde);
// Reads the CSV back and rebuilds the retained coefficient vector for `library`.
std::vector<double> read_coefficients_csv(const std::filesystem::path& path, const BasisLibrary& library);

}  // namespace spides
