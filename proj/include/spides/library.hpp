#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "spides/snapshots.hpp"

namespace spides {

// One candidate basis function of (x, t): a monomial prod_j x_j^p_j * t^q, or
// sin / cos of a single state coordinate or of t.
class Term {
 public:
  enum class Kind { Monomial, Sin, Cos };

  // Tags: "1", "x" / "x^3" (d = 1), "x2", "x1*x2", "x1^2*t", "t^2",
  // "sin(x)", "cos(x2)", "sin(t)". States are 1-based.
  static Term parse(std::string_view tag, std::size_t dim);
  static Term constant(std::size_t dim);

  Kind kind() const { return kind_; }
  const std::string& tag() const { return tag_; }
  bool is_constant() const;

  double value(std::span<const double> x, double t) const;
  // Analytic partial derivative with respect to state coordinate j (0-based).
  double derivative(std::span<const double> x, double t, std::size_t j) const;

 private:
  Term(Kind kind, std::vector<unsigned> powers, std::size_t dim);
  void build_tag();

  Kind kind_;
  // Monomial: one exponent per state then the time exponent.
  // Sin/Cos: powers[v] == 1 marks the argument variable (v == dim is t).
  std::vector<unsigned> powers_;
  std::size_t dim_;
  std::string tag_;
};

// sum_k c_k * term_k, e.g. "4*x - 1*x^3" or "1". Empty or "0" is zero.
class LinearExpression {
 public:
  LinearExpression() = default;
  static LinearExpression parse(std::string_view text, std::size_t dim);

  void add(double coefficient, Term term);
  bool empty() const { return terms_.empty(); }
  const std::vector<std::pair<double, Term>>& terms() const { return terms_; }

  double value(std::span<const double> x, double t) const;
  double derivative(std::span<const double> x, double t, std::size_t j) const;

 private:
  std::vector<std::pair<double, Term>> terms_;
};

// Column-major d x k matrix, so data() is vec(.) with columns stacked.
class CoefficientMatrix {
 public:
  CoefficientMatrix() = default;
  CoefficientMatrix(std::size_t rows, std::size_t cols, std::vector<double> data = {});

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t i, std::size_t j) const { return data_[j * rows_ + i]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[j * rows_ + i]; }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Drift basis phi_drift (m terms), diffusion basis phi_diffusion (n
// terms) and the known parts F_0 (per-dimension drift) and G_0 (diagonal).
// Coefficient vector layout: theta = [vec(theta_drift) ; vec(theta_diffusion)]
// with theta_drift d x m and theta_diffusion d x n.
class BasisLibrary {
 public:
  BasisLibrary(std::size_t dim, std::vector<Term> drift, std::vector<Term> diffusion,
               std::vector<LinearExpression> known_drift = {},
               std::vector<LinearExpression> known_diffusion = {});

  // Comma-separated term lists. Known parts use per_dimension syntax.
  static BasisLibrary parse(std::size_t dim, std::string_view drift_basis, std::string_view diffusion_basis,
                            std::string_view known_drift = "", std::string_view known_diffusion = "");
  // Drift [1, x, x^2, x^3, x^4, x^5, sin(x), cos(x)], diffusion [1, x, x^2].
  static BasisLibrary benchmark();

  std::size_t dim() const { return dim_; }
  std::size_t drift_size() const { return drift_.size(); }
  std::size_t diffusion_size() const { return diffusion_.size(); }
  std::size_t coefficient_count() const { return dim_ * (drift_.size() + diffusion_.size()); }
  const std::vector<Term>& drift_terms() const { return drift_; }
  const std::vector<Term>& diffusion_terms() const { return diffusion_; }
  const std::vector<LinearExpression>& known_drift() const { return known_drift_; }
  const std::vector<LinearExpression>& known_diffusion() const { return known_diffusion_; }

  void eval_drift_basis(std::span<const double> x, double t, std::span<double> out) const;
  void eval_diffusion_basis(std::span<const double> x, double t, std::span<double> out) const;
  // d phi_diffusion / d x_j for every term.
  void eval_diffusion_derivative(std::span<const double> x, double t, std::size_t j,
                                 std::span<double> out) const;

  void known_drift_eval(std::span<const double> x, double t, std::span<double> out) const;
  void known_diffusion_eval(std::span<const double> x, double t, std::span<double> out) const;
  // d G_0,ii / d x_i.
  void known_diffusion_derivative(std::span<const double> x, double t, std::span<double> out) const;

  // F_0 + theta_drift * phi_drift.
  void drift_eval(const CoefficientMatrix& theta_drift, std::span<const double> x, double t,
                  std::span<double> out) const;
  // Diagonal of G_0 + diag(theta_diffusion * phi_diffusion).
  void diffusion_eval(const CoefficientMatrix& theta_diffusion, std::span<const double> x, double t,
                      std::span<double> out) const;
  // Component i: d(G_ii^2)/dx_i = 2 G_ii dG_ii/dx_i.
  void divergence_ggt(const CoefficientMatrix& theta_diffusion, std::span<const double> x, double t,
                      std::span<double> out) const;

  CoefficientMatrix drift_block(std::span<const double> theta) const;
  CoefficientMatrix diffusion_block(std::span<const double> theta) const;

 private:
  void check_shape(const CoefficientMatrix& m, std::size_t cols, const char* what) const;

  std::size_t dim_;
  std::vector<Term> drift_, diffusion_;
  std::vector<LinearExpression> known_drift_, known_diffusion_;
};

// SDE with the library's drift and diagonal diffusion for a coefficient vector.
ItoSde make_sde(const BasisLibrary& library, std::vector<double> theta);

// ';'-separated expressions, one per dimension; a single expression is
// reused for every dimension. Empty text gives zero in every dimension.
std::vector<LinearExpression> parse_per_dimension(std::string_view text, std::size_t dim);

// SDE whose i-th drift / diffusion entries are drift[i] / diffusion[i].
ItoSde make_sde(std::size_t dim, std::vector<LinearExpression> drift, std::vector<LinearExpression> diffusion);

}  // namespace spides
