#include "spides/library.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

namespace spides {

namespace {

std::string trim(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c != ' ' && c != '\t') out += c;
  }
  return out;
}

std::size_t parse_variable(std::string_view v, std::size_t dim) {
  if (v == "t") return dim;
  if (v == "x") {
    if (dim != 1) throw std::invalid_argument("term variable 'x' is ambiguous for d > 1; use x1..xd");
    return 0;
  }
  if (v.size() >= 2 && v[0] == 'x') {
    std::size_t index = 0;
    auto [ptr, ec] = std::from_chars(v.data() + 1, v.data() + v.size(), index);
    if (ec == std::errc() && ptr == v.data() + v.size() && index >= 1 && index <= dim) return index - 1;
  }
  throw std::invalid_argument("unknown term variable '" + std::string(v) + "'");
}

std::string variable_name(std::size_t v, std::size_t dim) {
  if (v == dim) return "t";
  return dim == 1 ? "x" : "x" + std::to_string(v + 1);
}

double ipow(double base, unsigned p) {
  double r = 1.0;
  for (unsigned k = 0; k < p; ++k) r *= base;
  return r;
}

}  // namespace

Term::Term(Kind kind, std::vector<unsigned> powers, std::size_t dim)
    : kind_(kind), powers_(std::move(powers)), dim_(dim) {
  build_tag();
}

Term Term::constant(std::size_t dim) { return Term(Kind::Monomial, std::vector<unsigned>(dim + 1, 0), dim); }

Term Term::parse(std::string_view raw, std::size_t dim) {
  const std::string tag = trim(raw);
  if (tag.empty()) throw std::invalid_argument("empty term tag");
  for (const char* fn : {"sin(", "cos("}) {
    if (tag.rfind(fn, 0) == 0) {
      if (tag.back() != ')') throw std::invalid_argument("malformed term '" + tag + "'");
      const std::size_t v = parse_variable(std::string_view(tag).substr(4, tag.size() - 5), dim);
      std::vector<unsigned> powers(dim + 1, 0);
      powers[v] = 1;
      return Term(fn[0] == 's' ? Kind::Sin : Kind::Cos, std::move(powers), dim);
    }
  }
  std::vector<unsigned> powers(dim + 1, 0);
  if (tag == "1") return Term(Kind::Monomial, std::move(powers), dim);
  std::string_view rest(tag);
  while (true) {
    const auto star = rest.find('*');
    std::string_view factor = rest.substr(0, star);
    unsigned p = 1;
    const auto caret = factor.find('^');
    if (caret != std::string_view::npos) {
      const auto digits = factor.substr(caret + 1);
      auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), p);
      if (ec != std::errc() || ptr != digits.data() + digits.size() || p == 0) {
        throw std::invalid_argument("malformed exponent in term '" + tag + "'");
      }
      factor = factor.substr(0, caret);
    }
    powers[parse_variable(factor, dim)] += p;
    if (star == std::string_view::npos) break;
    rest.remove_prefix(star + 1);
  }
  return Term(Kind::Monomial, std::move(powers), dim);
}

void Term::build_tag() {
  if (kind_ != Kind::Monomial) {
    std::size_t v = 0;
    while (powers_[v] == 0) ++v;
    tag_ = std::string(kind_ == Kind::Sin ? "sin(" : "cos(") + variable_name(v, dim_) + ")";
    return;
  }
  tag_.clear();
  for (std::size_t v = 0; v <= dim_; ++v) {
    if (powers_[v] == 0) continue;
    if (!tag_.empty()) tag_ += '*';
    tag_ += variable_name(v, dim_);
    if (powers_[v] > 1) tag_ += "^" + std::to_string(powers_[v]);
  }
  if (tag_.empty()) tag_ = "1";
}

bool Term::is_constant() const {
  if (kind_ != Kind::Monomial) return false;
  for (unsigned p : powers_) {
    if (p) return false;
  }
  return true;
}

double Term::value(std::span<const double> x, double t) const {
  if (kind_ != Kind::Monomial) {
    std::size_t v = 0;
    while (powers_[v] == 0) ++v;
    const double arg = v == dim_ ? t : x[v];
    return kind_ == Kind::Sin ? std::sin(arg) : std::cos(arg);
  }
  double r = ipow(t, powers_[dim_]);
  for (std::size_t j = 0; j < dim_; ++j) r *= ipow(x[j], powers_[j]);
  return r;
}

double Term::derivative(std::span<const double> x, double t, std::size_t j) const {
  if (powers_[j] == 0) return 0.0;
  if (kind_ == Kind::Sin) return std::cos(x[j]);
  if (kind_ == Kind::Cos) return -std::sin(x[j]);
  double r = static_cast<double>(powers_[j]) * ipow(x[j], powers_[j] - 1) * ipow(t, powers_[dim_]);
  for (std::size_t k = 0; k < dim_; ++k) {
    if (k != j) r *= ipow(x[k], powers_[k]);
  }
  return r;
}

void LinearExpression::add(double coefficient, Term term) { terms_.emplace_back(coefficient, std::move(term)); }

LinearExpression LinearExpression::parse(std::string_view raw, std::size_t dim) {
  const std::string text = trim(raw);
  LinearExpression expr;
  if (text.empty()) return expr;
  // Split into signed summands at top-level '+' / '-' that are not part of
  // an exponent like 1e-3.
  std::vector<std::string> summands;
  std::string current;
  int depth = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '(') ++depth;
    if (c == ')') --depth;
    const bool sign = (c == '+' || c == '-') && depth == 0 && i > 0;
    const char prev = i > 0 ? text[i - 1] : '\0';
    const bool in_number_exponent =
        (prev == 'e' || prev == 'E') && i >= 2 && (std::isdigit(static_cast<unsigned char>(text[i - 2])) || text[i - 2] == '.');
    if (sign && !in_number_exponent && prev != '*' && prev != '^') {
      summands.push_back(current);
      current.clear();
    }
    current += c;
  }
  summands.push_back(current);

  for (std::string s : summands) {
    double sign = 1.0;
    if (!s.empty() && (s[0] == '+' || s[0] == '-')) {
      if (s[0] == '-') sign = -1.0;
      s.erase(0, 1);
    }
    if (s.empty()) throw std::invalid_argument("malformed expression '" + text + "'");
    double coefficient = 1.0;
    std::string_view rest(s);
    if (std::isdigit(static_cast<unsigned char>(s[0])) || s[0] == '.') {
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), coefficient);
      if (ec != std::errc()) throw std::invalid_argument("malformed coefficient in '" + text + "'");
      rest = std::string_view(ptr, static_cast<std::size_t>(s.data() + s.size() - ptr));
      if (!rest.empty()) {
        if (rest[0] != '*') throw std::invalid_argument("expected '*' after coefficient in '" + text + "'");
        rest.remove_prefix(1);
      }
    }
    const Term term = rest.empty() ? Term::constant(dim) : Term::parse(rest, dim);
    if (coefficient != 0.0) expr.add(sign * coefficient, term);
  }
  return expr;
}

double LinearExpression::value(std::span<const double> x, double t) const {
  double r = 0.0;
  for (const auto& [c, term] : terms_) r += c * term.value(x, t);
  return r;
}

double LinearExpression::derivative(std::span<const double> x, double t, std::size_t j) const {
  double r = 0.0;
  for (const auto& [c, term] : terms_) r += c * term.derivative(x, t, j);
  return r;
}

CoefficientMatrix::CoefficientMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.empty()) data_.assign(rows * cols, 0.0);
  if (data_.size() != rows * cols) throw std::invalid_argument("CoefficientMatrix: data size mismatch");
}

std::vector<LinearExpression> parse_per_dimension(std::string_view text, std::size_t dim) {
  std::vector<LinearExpression> out;
  std::size_t start = 0;
  while (true) {
    const auto semi = text.find(';', start);
    out.push_back(LinearExpression::parse(text.substr(start, semi - start), dim));
    if (semi == std::string_view::npos) break;
    start = semi + 1;
  }
  if (out.size() == 1) out.resize(dim, out.front());
  if (out.size() != dim) {
    throw std::invalid_argument("expected 1 or " + std::to_string(dim) + " ';'-separated expressions");
  }
  return out;
}

BasisLibrary::BasisLibrary(std::size_t dim, std::vector<Term> drift, std::vector<Term> diffusion,
                           std::vector<LinearExpression> known_drift,
                           std::vector<LinearExpression> known_diffusion)
    : dim_(dim), drift_(std::move(drift)), diffusion_(std::move(diffusion)),
      known_drift_(std::move(known_drift)), known_diffusion_(std::move(known_diffusion)) {
  if (dim_ == 0) throw std::invalid_argument("BasisLibrary: dimension must be positive");
  if (known_drift_.empty()) known_drift_.resize(dim_);
  if (known_diffusion_.empty()) known_diffusion_.resize(dim_);
  if (known_drift_.size() != dim_ || known_diffusion_.size() != dim_) {
    throw std::invalid_argument("BasisLibrary: known parts need one expression per dimension");
  }
}

BasisLibrary BasisLibrary::parse(std::size_t dim, std::string_view drift_basis, std::string_view diffusion_basis,
                                 std::string_view known_drift, std::string_view known_diffusion) {
  auto terms = [dim](std::string_view list) {
    std::vector<Term> out;
    if (trim(list).empty()) return out;
    std::size_t start = 0;
    int depth = 0;
    for (std::size_t i = 0; i <= list.size(); ++i) {
      if (i < list.size() && list[i] == '(') ++depth;
      if (i < list.size() && list[i] == ')') --depth;
      if (i == list.size() || (list[i] == ',' && depth == 0)) {
        out.push_back(Term::parse(list.substr(start, i - start), dim));
        start = i + 1;
      }
    }
    return out;
  };
  return BasisLibrary(dim, terms(drift_basis), terms(diffusion_basis), parse_per_dimension(known_drift, dim),
                      parse_per_dimension(known_diffusion, dim));
}

BasisLibrary BasisLibrary::benchmark() {
  return parse(1, "1,x,x^2,x^3,x^4,x^5,sin(x),cos(x)", "1,x,x^2");
}

void BasisLibrary::eval_drift_basis(std::span<const double> x, double t, std::span<double> out) const {
  for (std::size_t k = 0; k < drift_.size(); ++k) out[k] = drift_[k].value(x, t);
}

void BasisLibrary::eval_diffusion_basis(std::span<const double> x, double t, std::span<double> out) const {
  for (std::size_t k = 0; k < diffusion_.size(); ++k) out[k] = diffusion_[k].value(x, t);
}

void BasisLibrary::eval_diffusion_derivative(std::span<const double> x, double t, std::size_t j,
                                             std::span<double> out) const {
  for (std::size_t k = 0; k < diffusion_.size(); ++k) out[k] = diffusion_[k].derivative(x, t, j);
}

void BasisLibrary::known_drift_eval(std::span<const double> x, double t, std::span<double> out) const {
  for (std::size_t i = 0; i < dim_; ++i) out[i] = known_drift_[i].value(x, t);
}

void BasisLibrary::known_diffusion_eval(std::span<const double> x, double t, std::span<double> out) const {
  for (std::size_t i = 0; i < dim_; ++i) out[i] = known_diffusion_[i].value(x, t);
}

void BasisLibrary::known_diffusion_derivative(std::span<const double> x, double t, std::span<double> out) const {
  for (std::size_t i = 0; i < dim_; ++i) out[i] = known_diffusion_[i].derivative(x, t, i);
}

void BasisLibrary::check_shape(const CoefficientMatrix& m, std::size_t cols, const char* what) const {
  if (m.rows() != dim_ || m.cols() != cols) {
    throw std::invalid_argument(std::string(what) + ": coefficient matrix is " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()) + ", expected " + std::to_string(dim_) + "x" +
                                std::to_string(cols));
  }
}

void BasisLibrary::drift_eval(const CoefficientMatrix& theta, std::span<const double> x, double t,
                              std::span<double> out) const {
  check_shape(theta, drift_.size(), "drift_eval");
  std::vector<double> phi(drift_.size());
  eval_drift_basis(x, t, phi);
  known_drift_eval(x, t, out);
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t k = 0; k < phi.size(); ++k) out[i] += theta(i, k) * phi[k];
  }
}

void BasisLibrary::diffusion_eval(const CoefficientMatrix& theta, std::span<const double> x, double t,
                                  std::span<double> out) const {
  check_shape(theta, diffusion_.size(), "diffusion_eval");
  std::vector<double> psi(diffusion_.size());
  eval_diffusion_basis(x, t, psi);
  known_diffusion_eval(x, t, out);
  for (std::size_t i = 0; i < dim_; ++i) {
    for (std::size_t k = 0; k < psi.size(); ++k) out[i] += theta(i, k) * psi[k];
  }
}

void BasisLibrary::divergence_ggt(const CoefficientMatrix& theta, std::span<const double> x, double t,
                                  std::span<double> out) const {
  std::vector<double> g(dim_), dg(dim_), dpsi(diffusion_.size());
  diffusion_eval(theta, x, t, g);
  known_diffusion_derivative(x, t, dg);
  for (std::size_t i = 0; i < dim_; ++i) {
    eval_diffusion_derivative(x, t, i, dpsi);
    for (std::size_t k = 0; k < dpsi.size(); ++k) dg[i] += theta(i, k) * dpsi[k];
    out[i] = 2.0 * g[i] * dg[i];
  }
}

CoefficientMatrix BasisLibrary::drift_block(std::span<const double> theta) const {
  if (theta.size() != coefficient_count()) throw std::invalid_argument("drift_block: theta length");
  const std::size_t len = dim_ * drift_.size();
  return CoefficientMatrix(dim_, drift_.size(), std::vector<double>(theta.begin(), theta.begin() + len));
}

CoefficientMatrix BasisLibrary::diffusion_block(std::span<const double> theta) const {
  if (theta.size() != coefficient_count()) throw std::invalid_argument("diffusion_block: theta length");
  const std::size_t off = dim_ * drift_.size();
  return CoefficientMatrix(dim_, diffusion_.size(), std::vector<double>(theta.begin() + off, theta.end()));
}

ItoSde make_sde(const BasisLibrary& library, std::vector<double> theta) {
  auto drift = std::make_shared<CoefficientMatrix>(library.drift_block(theta));
  auto diffusion = std::make_shared<CoefficientMatrix>(library.diffusion_block(theta));
  auto lib = std::make_shared<BasisLibrary>(library);
  ItoSde sde;
  sde.dim = library.dim();
  sde.drift = [lib, drift](std::span<const double> x, double t, std::span<double> out) {
    lib->drift_eval(*drift, x, t, out);
  };
  sde.diffusion = [lib, diffusion](std::span<const double> x, double t, std::span<double> out) {
    lib->diffusion_eval(*diffusion, x, t, out);
  };
  return sde;
}

ItoSde make_sde(std::size_t dim, std::vector<LinearExpression> drift, std::vector<LinearExpression> diffusion) {
  if (drift.size() != dim || diffusion.size() != dim) throw std::invalid_argument("make_sde: one expression per dimension");
  ItoSde sde;
  sde.dim = dim;
  sde.drift = [drift = std::move(drift)](std::span<const double> x, double t, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = drift[i].value(x, t);
  };
  sde.diffusion = [diffusion = std::move(diffusion)](std::span<const double> x, double t, std::span<double> out) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = diffusion[i].value(x, t);
  };
  return sde;
}

}  // namespace spides
