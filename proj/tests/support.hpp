#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace spides::testing {

// Largest relative deviation between an analytic gradient and central
// differences of `loss` with step h. Coordinates whose gradient magnitude is
// below `floor` are compared absolutely against floor.
inline double fd_relative_error(const std::function<double(std::span<const double>)>& loss,
                                std::vector<double> params, std::span<const double> analytic, double h = 1e-5,
                                double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = loss(params);
    params[i] = keep - h;
    const double down = loss(params);
    params[i] = keep;
    const double fd = (up - down) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(analytic[i]), floor});
    worst = std::max(worst, std::abs(fd - analytic[i]) / scale);
  }
  return worst;
}

// Finite-volume solution of the 1D Fokker-Planck equation
//   dp/dt = -d/dx (F p) + (g^2 / 2) d^2p/dx^2
// from N(mean, std^2), with zero-flux walls at +-half_width. Log-densities are
// kept at every multiple of `record_every` in time, so score(x, t) is only
// valid at those times.
class FokkerPlanck1d {
 public:
  FokkerPlanck1d(std::function<double(double)> drift, double g, double mean, double std, double t_end,
                 double record_every, double half_width = 5.0, std::size_t cells = 2001, double dt = 1e-5)
      : lo_(-half_width), h_(2 * half_width / static_cast<double>(cells - 1)), every_(record_every) {
    std::vector<double> p(cells), flux(cells + 1, 0.0);
    for (std::size_t i = 0; i < cells; ++i) {
      const double z = (lo_ + i * h_ - mean) / std;
      p[i] = std::exp(-0.5 * z * z);
    }
    record(p);
    const auto steps = static_cast<long>(std::lround(t_end / dt));
    const auto stride = static_cast<long>(std::lround(record_every / dt));
    const double d = 0.5 * g * g;
    std::vector<double> face(cells - 1);
    for (std::size_t i = 0; i + 1 < cells; ++i) face[i] = drift(lo_ + (i + 0.5) * h_);
    for (long s = 1; s <= steps; ++s) {
      for (std::size_t i = 0; i + 1 < cells; ++i)
        flux[i + 1] = face[i] * 0.5 * (p[i] + p[i + 1]) - d * (p[i + 1] - p[i]) / h_;
      for (std::size_t i = 0; i < cells; ++i) p[i] -= dt * (flux[i + 1] - flux[i]) / h_;
      if (s % stride == 0) record(p);
    }
  }

  // d log p / dx, interpolated between cell-centred differences.
  double score(double x, double t) const {
    const auto& l = log_p_.at(static_cast<std::size_t>(std::lround(t / every_)));
    const double u = (x - lo_) / h_;
    const auto n = static_cast<long>(l.size());
    const long i = std::clamp(static_cast<long>(std::floor(u)), 1L, n - 3);
    const double a = u - i;
    const double g0 = (l[i + 1] - l[i - 1]) / (2 * h_), g1 = (l[i + 2] - l[i]) / (2 * h_);
    return (1 - a) * g0 + a * g1;
  }

 private:
  void record(const std::vector<double>& p) {
    std::vector<double> l(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) l[i] = std::log(std::max(p[i], 1e-300));
    log_p_.push_back(std::move(l));
  }

  double lo_, h_, every_;
  std::vector<std::vector<double>> log_p_;
};

}  // namespace spides::testing
