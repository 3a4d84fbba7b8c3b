#include <doctest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "spides/library.hpp"
#include "spides/rng.hpp"

using namespace spides;

namespace {

std::vector<double> drift_basis(const BasisLibrary& lib, double x, double t = 0) {
  std::vector<double> out(lib.drift_size());
  const std::vector<double> v{x};
  lib.eval_drift_basis(v, t, out);
  return out;
}

double drift1(const BasisLibrary& lib, const CoefficientMatrix& th, double x) {
  std::vector<double> out(1);
  const std::vector<double> v{x};
  lib.drift_eval(th, v, 0.0, out);
  return out[0];
}

double diffusion1(const BasisLibrary& lib, const CoefficientMatrix& th, double x) {
  std::vector<double> out(1);
  const std::vector<double> v{x};
  lib.diffusion_eval(th, v, 0.0, out);
  return out[0];
}

double div1(const BasisLibrary& lib, const CoefficientMatrix& th, double x) {
  std::vector<double> out(1);
  const std::vector<double> v{x};
  lib.divergence_ggt(th, v, 0.0, out);
  return out[0];
}

// Hand-written expressions for each tag, independent of the term parser.
struct Reference {
  const char* tag;
  std::function<double(const std::vector<double>&, double)> f;
};

std::vector<Reference> references_2d() {
  return {
      {"1", [](const auto&, double) { return 1.0; }},
      {"x1", [](const auto& x, double) { return x[0]; }},
      {"x2^3", [](const auto& x, double) { return x[1] * x[1] * x[1]; }},
      {"x1*x2", [](const auto& x, double) { return x[0] * x[1]; }},
      {"x1^2*t", [](const auto& x, double t) { return x[0] * x[0] * t; }},
      {"t^2", [](const auto&, double t) { return t * t; }},
      {"sin(x1)", [](const auto& x, double) { return std::sin(x[0]); }},
      {"cos(x2)", [](const auto& x, double) { return std::cos(x[1]); }},
      {"sin(t)", [](const auto&, double t) { return std::sin(t); }},
      {"cos(t)", [](const auto&, double t) { return std::cos(t); }},
  };
}

}  // namespace

TEST_CASE("monomial basis values") {
  const auto lib = BasisLibrary::parse(1, "1,x,x^2,x^3", "1");
  const auto v = drift_basis(lib, 2.0);
  CHECK(v == std::vector<double>{1, 2, 4, 8});
}

TEST_CASE("trigonometric terms at zero") {
  const auto lib = BasisLibrary::parse(1, "sin(x),cos(x)", "1");
  const auto v = drift_basis(lib, 0.0);
  CHECK(v[0] == 0.0);
  CHECK(v[1] == 1.0);
}

TEST_CASE("term values match hand-written expressions at random points") {
  Rng rng(11);
  for (const auto& ref : references_2d()) {
    const Term term = Term::parse(ref.tag, 2);
    for (int k = 0; k < 50; ++k) {
      const std::vector<double> x{3 * rng.normal(), 3 * rng.normal()};
      const double t = rng.uniform();
      CHECK(term.value(x, t) == doctest::Approx(ref.f(x, t)).epsilon(1e-14));
    }
  }
}

TEST_CASE("analytic derivatives agree with central differences") {
  Rng rng(12);
  const double h = 1e-5;
  std::vector<Term> terms;
  for (const auto& ref : references_2d()) terms.push_back(Term::parse(ref.tag, 2));
  for (const char* tag : {"x1^5", "x1^4*x2^2", "x2*t^3"}) terms.push_back(Term::parse(tag, 2));
  for (const auto& term : terms) {
    for (int k = 0; k < 100; ++k) {
      std::vector<double> x{2 * rng.normal(), 2 * rng.normal()};
      const double t = rng.uniform();
      for (std::size_t j = 0; j < 2; ++j) {
        const double a = term.derivative(x, t, j);
        auto xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        const double fd = (term.value(xp, t) - term.value(xm, t)) / (2 * h);
        INFO(term.tag(), " j=", j);
        CHECK(std::abs(a - fd) <= 1e-6 * (1 + std::abs(a)));
      }
    }
  }
}

TEST_CASE("benchmark drift evaluates the double well") {
  const auto lib = BasisLibrary::parse(1, "1,x,x^2,x^3", "1");
  const CoefficientMatrix th(1, 4, {0, 4, 0, -1});
  CHECK(drift1(lib, th, 1.0) == 3.0);
  CHECK(drift1(lib, th, 2.0) == 0.0);
}

TEST_CASE("zero coefficients give the known parts") {
  const auto lib = BasisLibrary::parse(1, "1,x,x^2", "1,x", "0.5*x - 2*sin(x)", "1");
  const CoefficientMatrix zero_drift(1, 3, {0, 0, 0});
  const CoefficientMatrix zero_diff(1, 2, {0, 0});
  for (double x : {-1.5, 0.0, 0.7, 3.0}) {
    CHECK(drift1(lib, zero_drift, x) == doctest::Approx(0.5 * x - 2 * std::sin(x)).epsilon(1e-15));
    CHECK(diffusion1(lib, zero_diff, x) == 1.0);
  }
}

TEST_CASE("diffusion combinations") {
  const auto lib = BasisLibrary::parse(1, "1", "1,x");
  CHECK(diffusion1(lib, CoefficientMatrix(1, 2, {1, 0}), 0.3) == 1.0);
  CHECK(diffusion1(lib, CoefficientMatrix(1, 2, {0, 1}), 0.3) == 0.3);
}

TEST_CASE("divergence of G squared") {
  SUBCASE("constant diffusion gives zero") {
    const auto lib = BasisLibrary::parse(1, "1", "1", "", "2");
    CHECK(div1(lib, CoefficientMatrix(1, 1, {0.7}), 1.3) == 0.0);
  }
  SUBCASE("G = x") {
    const auto lib = BasisLibrary::parse(1, "1", "x");
    CHECK(div1(lib, CoefficientMatrix(1, 1, {1}), 3.0) == doctest::Approx(6.0).epsilon(1e-14));
  }
  SUBCASE("G = sin x") {
    const auto lib = BasisLibrary::parse(1, "1", "sin(x)");
    CHECK(div1(lib, CoefficientMatrix(1, 1, {1}), std::numbers::pi / 4) == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("divergence agrees with a finite difference of G squared") {
  const auto lib = BasisLibrary::parse(1, "1", "1,x,x^2", "", "0.5*cos(x)");
  const CoefficientMatrix th(1, 3, {0.3, -0.8, 0.25});
  Rng rng(13);
  for (int k = 0; k < 50; ++k) {
    const double x = 2 * rng.normal(), h = 1e-5;
    const double g2p = std::pow(diffusion1(lib, th, x + h), 2), g2m = std::pow(diffusion1(lib, th, x - h), 2);
    const double a = div1(lib, th, x);
    CHECK(std::abs(a - (g2p - g2m) / (2 * h)) <= 1e-6 * (1 + std::abs(a)));
  }
}

TEST_CASE("drift is affine in the coefficients") {
  const auto lib = BasisLibrary::benchmark();
  Rng rng(14);
  for (int k = 0; k < 20; ++k) {
    CoefficientMatrix a(1, lib.drift_size()), b(1, lib.drift_size()), s(1, lib.drift_size());
    for (std::size_t j = 0; j < lib.drift_size(); ++j) {
      a(0, j) = rng.normal();
      b(0, j) = rng.normal();
      s(0, j) = a(0, j) + b(0, j);
    }
    const double x = 1.5 * rng.normal();
    CHECK(drift1(lib, s, x) == doctest::Approx(drift1(lib, a, x) + drift1(lib, b, x)).epsilon(1e-12));
  }
}

TEST_CASE("constant diffusion terms have zero divergence in several dimensions") {
  const auto lib = BasisLibrary::parse(3, "1,x1", "1,t,sin(t)");
  Rng rng(15);
  CoefficientMatrix th(3, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) th(i, j) = rng.normal();
  std::vector<double> out(3);
  const std::vector<double> x{0.4, -1.2, 2.0};
  lib.divergence_ggt(th, x, 0.6, out);
  CHECK(out == std::vector<double>{0, 0, 0});
}

TEST_CASE("benchmark library layout") {
  const auto lib = BasisLibrary::benchmark();
  CHECK(lib.drift_size() == 8);
  CHECK(lib.diffusion_size() == 3);
  CHECK(lib.coefficient_count() == 11);
  CHECK(lib.drift_terms()[6].tag() == "sin(x)");
  std::vector<double> theta(11);
  theta[1] = 4;
  theta[8] = 1;
  CHECK(lib.drift_block(theta)(0, 1) == 4.0);
  CHECK(lib.diffusion_block(theta)(0, 0) == 1.0);
}

TEST_CASE("shape mismatches fail") {
  const auto lib = BasisLibrary::parse(1, "1,x,x^2,x^3", "1");
  std::vector<double> out(1);
  const std::vector<double> x{1.0};
  CHECK_THROWS_AS(lib.drift_eval(CoefficientMatrix(1, 3), x, 0.0, out), std::invalid_argument);
  CHECK_THROWS_AS(lib.diffusion_eval(CoefficientMatrix(2, 1), x, 0.0, out), std::invalid_argument);
  CHECK_THROWS_AS(lib.divergence_ggt(CoefficientMatrix(1, 2), x, 0.0, out), std::invalid_argument);
  CHECK_THROWS_AS(lib.drift_block(std::vector<double>(4)), std::invalid_argument);
}

TEST_CASE("malformed tags and expressions are rejected") {
  CHECK_THROWS_AS(Term::parse("", 1), std::invalid_argument);
  CHECK_THROWS_AS(Term::parse("y", 1), std::invalid_argument);
  CHECK_THROWS_AS(Term::parse("x", 2), std::invalid_argument);
  CHECK_THROWS_AS(Term::parse("x3", 2), std::invalid_argument);
  CHECK_THROWS_AS(Term::parse("sin(x", 1), std::invalid_argument);
  CHECK_THROWS_AS(Term::parse("x^a", 1), std::invalid_argument);
  CHECK_THROWS_AS(LinearExpression::parse("4 x", 1), std::invalid_argument);
  CHECK_THROWS_AS(parse_per_dimension("x1;x2;x1", 2), std::invalid_argument);
}

TEST_CASE("expressions parse signs and implicit coefficients") {
  const auto e = LinearExpression::parse("4*x - 1*x^3", 1);
  REQUIRE(e.terms().size() == 2);
  const std::vector<double> x{1.5};
  CHECK(e.value(x, 0) == doctest::Approx(1.5 * (4 - 2.25)).epsilon(1e-15));
  CHECK(e.derivative(x, 0, 0) == doctest::Approx(4 - 3 * 2.25).epsilon(1e-15));
  CHECK(LinearExpression::parse("0", 1).empty());
  CHECK(LinearExpression::parse("", 1).empty());
}
