#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "spides/errors.hpp"
#include "spides/library.hpp"
#include "spides/rng.hpp"
#include "spides/snapshots.hpp"

using namespace spides;

namespace {

ItoSde constant_sde(double drift, double diffusion) {
  return {1, [drift](std::span<const double>, double, std::span<double> out) { out[0] = drift; },
          [diffusion](std::span<const double>, double, std::span<double> out) { out[0] = diffusion; }};
}

ItoSde double_well() {
  return make_sde(1, parse_per_dimension("4*x - 1*x^3", 1), parse_per_dimension("1", 1));
}

PointCloud standard_normal(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud cloud(1, n);
  for (auto& v : cloud.values()) v = rng.normal();
  return cloud;
}

std::vector<double> sorted_column(const TrajectoryBundle& b, std::size_t k) {
  std::vector<double> v;
  for (std::size_t p = 0; p < b.particles(); ++p) v.push_back(b.state(k, p)[0]);
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("zero dynamics keep paths at their initial values") {
  PointCloud initial(2, std::vector<double>{1.5, -2.0, 0.25, 3.0});
  ItoSde sde{2, [](std::span<const double>, double, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); },
             [](std::span<const double>, double, std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); }};
  const auto b = euler_maruyama(sde, initial, {.t_end = 0.5, .step = 0.01, .seed = 3});
  for (std::size_t k = 0; k < b.time_points(); ++k) {
    for (std::size_t p = 0; p < 2; ++p) {
      CHECK(b.state(k, p)[0] == initial.row(p)[0]);
      CHECK(b.state(k, p)[1] == initial.row(p)[1]);
    }
  }
}

TEST_CASE("linear decay matches the exponential") {
  ItoSde sde{1, [](std::span<const double> x, double, std::span<double> out) { out[0] = -x[0]; },
             [](std::span<const double>, double, std::span<double> out) { out[0] = 0.0; }};
  const auto b = euler_maruyama(sde, PointCloud(1, std::vector<double>{1.0}), {.t_end = 1.0, .step = 1e-3});
  CHECK(std::abs(b.state(b.time_points() - 1, 0)[0] - std::exp(-1.0)) < 2e-3);
}

TEST_CASE("constant drift advances linearly") {
  const auto b = euler_maruyama(constant_sde(0.75, 0.0), PointCloud(1, std::vector<double>{2.0}),
                                {.t_end = 2.0, .step = 0.01});
  const double end = b.state(b.time_points() - 1, 0)[0];
  CHECK(std::abs(end - (2.0 + 0.75 * 2.0)) <= 200 * 4 * std::numeric_limits<double>::epsilon() * 4.0);
}

TEST_CASE("record stride keeps every k-th grid point") {
  const auto full = euler_maruyama(double_well(), standard_normal(20, 1), {.t_end = 0.2, .step = 0.01, .seed = 9});
  const auto strided = euler_maruyama(double_well(), standard_normal(20, 1),
                                      {.t_end = 0.2, .step = 0.01, .seed = 9, .record_stride = 5});
  REQUIRE(strided.time_points() == 5);
  CHECK(strided.spacing() == doctest::Approx(0.05));
  for (std::size_t k = 0; k < strided.time_points(); ++k) {
    for (std::size_t p = 0; p < 20; ++p) CHECK(strided.state(k, p)[0] == full.state(5 * k, p)[0]);
  }
}

TEST_CASE("simulation is bit-identical across runs and worker counts") {
  const auto x0 = standard_normal(257, 4);
  const auto a = euler_maruyama(double_well(), x0, {.t_end = 0.3, .step = 1e-3, .seed = 11, .workers = 1});
  const auto b = euler_maruyama(double_well(), x0, {.t_end = 0.3, .step = 1e-3, .seed = 11, .workers = 1});
  const auto c = euler_maruyama(double_well(), x0, {.t_end = 0.3, .step = 1e-3, .seed = 11, .workers = 4});
  for (std::size_t k = 0; k < a.time_points(); k += 37) {
    for (std::size_t p = 0; p < a.particles(); ++p) {
      CHECK(a.state(k, p)[0] == b.state(k, p)[0]);
      CHECK(a.state(k, p)[0] == c.state(k, p)[0]);
    }
  }
}

TEST_CASE("increments have the Euler-Maruyama moments") {
  // One step from x = 0 with F = 0.5, G = 2: mean 0.5 dt, variance 4 dt.
  const double dt = 0.01;
  PointCloud x0(1, 20000);
  const auto b = euler_maruyama(constant_sde(0.5, 2.0), x0, {.t_end = dt, .step = dt, .seed = 5});
  double mean = 0, sq = 0;
  for (std::size_t p = 0; p < 20000; ++p) {
    const double v = b.state(1, p)[0];
    mean += v;
    sq += v * v;
  }
  mean /= 20000;
  const double var = sq / 20000 - mean * mean;
  CHECK(std::abs(mean - 0.5 * dt) < 4 * std::sqrt(4 * dt / 20000));
  CHECK(std::abs(var / (4 * dt) - 1.0) < 0.05);
}

TEST_CASE("non-finite state names the particle and time") {
  ItoSde blowup{1, [](std::span<const double> x, double, std::span<double> out) { out[0] = x[0] * x[0] * 1e3; },
                [](std::span<const double>, double, std::span<double> out) { out[0] = 0.0; }};
  PointCloud x0(1, std::vector<double>{0.0, 5.0});
  try {
    euler_maruyama(blowup, x0, {.t_end = 1.0, .step = 0.01});
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("particle 1") != std::string::npos);
    CHECK(msg.find("t=") != std::string::npos);
  }
}

TEST_CASE("invalid simulation options are rejected") {
  const auto x0 = standard_normal(3, 1);
  CHECK_THROWS_AS(euler_maruyama(double_well(), x0, {.t_end = 1.0, .step = 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(euler_maruyama(double_well(), x0, {.t_end = -1.0, .step = 0.1}), std::invalid_argument);
  CHECK_THROWS_AS(euler_maruyama(double_well(), PointCloud(1), {.t_end = 1.0, .step = 0.1}), std::invalid_argument);
  CHECK_THROWS_AS(euler_maruyama(double_well(), x0, {.t_end = 1.0, .step = 0.3}), std::invalid_argument);
}

TEST_CASE("long-horizon double well settles in both wells") {
  const auto b = euler_maruyama(double_well(), standard_normal(10000, 8),
                                {.t_end = 20.0, .step = 1e-3, .seed = 2, .record_stride = 20000});
  std::vector<int> hist(60, 0);
  for (std::size_t p = 0; p < b.particles(); ++p) {
    const double x = b.state(b.time_points() - 1, p)[0];
    const int i = static_cast<int>(std::floor((x + 3.0) / 0.1));
    if (i >= 0 && i < 60) ++hist[static_cast<std::size_t>(i)];
  }
  auto mode_in = [&](int lo, int hi) {
    int best = lo;
    for (int i = lo; i < hi; ++i) {
      if (hist[static_cast<std::size_t>(i)] > hist[static_cast<std::size_t>(best)]) best = i;
    }
    return -3.0 + 0.1 * (best + 0.5);
  };
  CHECK(std::abs(mode_in(0, 30) + 2.0) < 0.2);
  CHECK(std::abs(mode_in(30, 60) - 2.0) < 0.2);
}

TEST_CASE("marginalize keeps path values of a deterministic particle") {
  // A snapshot needs two samples, so the particle is duplicated.
  ItoSde drift_only{1, [](std::span<const double> x, double, std::span<double> out) { out[0] = x[0] * (4 - x[0] * x[0]); },
                    [](std::span<const double>, double, std::span<double> out) { out[0] = 0.0; }};
  const auto b = euler_maruyama(drift_only, PointCloud(1, std::vector<double>{0.3, 0.3}),
                                {.t_end = 0.1, .step = 0.01, .seed = 1});
  std::vector<double> times;
  for (std::size_t k = 0; k < b.time_points(); ++k) times.push_back(b.time(k));
  const auto ds = marginalize(b, times, 4);
  REQUIRE(ds.size() == b.time_points());
  for (std::size_t k = 0; k < ds.size(); ++k) {
    CHECK(ds[k].time == times[k]);
    CHECK(ds[k].samples.row(0)[0] == b.state(k, 0)[0]);
    CHECK(ds[k].samples.row(1)[0] == b.state(k, 0)[0]);
  }
}

TEST_CASE("marginalize of two constant paths gives the 2-set at every time") {
  const auto b = euler_maruyama(constant_sde(0.0, 0.0), PointCloud(1, std::vector<double>{-1.0, 4.0}),
                                {.t_end = 1.0, .step = 0.1});
  std::vector<double> times{0.0, 0.3, 0.7, 1.0};
  const auto ds = marginalize(b, times, 77);
  for (const auto& s : ds.snapshots()) {
    std::vector<double> v{s.samples.row(0)[0], s.samples.row(1)[0]};
    std::sort(v.begin(), v.end());
    CHECK(v == std::vector<double>{-1.0, 4.0});
  }
}

TEST_CASE("marginalize preserves multisets and breaks particle identity") {
  const auto b = euler_maruyama(double_well(), standard_normal(1000, 3),
                                {.t_end = 1.0, .step = 1e-3, .seed = 6, .record_stride = 100});
  std::vector<double> times{0.0, 0.5, 1.0};
  const auto ds = marginalize(b, times, 12);
  for (std::size_t i = 0; i < times.size(); ++i) {
    const std::size_t k = static_cast<std::size_t>(std::llround(times[i] / b.spacing()));
    std::vector<double> got;
    for (std::size_t p = 0; p < 1000; ++p) got.push_back(ds[i].samples.row(p)[0]);
    std::vector<double> raw;
    for (std::size_t p = 0; p < 1000; ++p) raw.push_back(b.state(k, p)[0]);
    CHECK(got != raw);
    std::sort(got.begin(), got.end());
    CHECK(got == sorted_column(b, k));
  }
  // Mean at t = 1 against the bundle's Monte Carlo mean.
  double m_ds = 0, m_b = 0, sq = 0;
  for (std::size_t p = 0; p < 1000; ++p) {
    m_ds += ds[2].samples.row(p)[0];
    m_b += b.state(b.time_points() - 1, p)[0];
    sq += std::pow(b.state(b.time_points() - 1, p)[0], 2);
  }
  m_ds /= 1000;
  m_b /= 1000;
  const double se = std::sqrt((sq / 1000 - m_b * m_b) / 1000);
  CHECK(std::abs(m_ds - m_b) <= 3 * se);
}

TEST_CASE("marginalize rejects times outside the simulated range") {
  const auto b = euler_maruyama(double_well(), standard_normal(4, 3), {.t_end = 0.5, .step = 0.1});
  std::vector<double> times{0.0, 0.7};
  CHECK_THROWS_AS(marginalize(b, times, 1), std::invalid_argument);
}

TEST_CASE("dataset invariants") {
  CHECK_THROWS_AS(SnapshotDataset(1, {{0.0, PointCloud(1, std::vector<double>{1, 2})}}), ValidationError);
  CHECK_THROWS_AS(SnapshotDataset(1, {{0.5, PointCloud(1, std::vector<double>{1, 2})},
                                      {0.5, PointCloud(1, std::vector<double>{1, 2})}}),
                  ValidationError);
  CHECK_THROWS_AS(SnapshotDataset(1, {{0.0, PointCloud(1, std::vector<double>{1})},
                                      {0.5, PointCloud(1, std::vector<double>{1, 2})}}),
                  ValidationError);
  CHECK_THROWS_AS(SnapshotDataset(1, {{0.0, PointCloud(1, std::vector<double>{1, NAN})},
                                      {0.5, PointCloud(1, std::vector<double>{1, 2})}}),
                  ValidationError);
  CHECK_THROWS_AS(SnapshotDataset(2, {{0.0, PointCloud(1, std::vector<double>{1, 2})},
                                      {0.5, PointCloud(1, std::vector<double>{1, 2})}}),
                  ValidationError);
}

TEST_CASE("dataset text round trip is exact") {
  Rng rng(21);
  std::vector<Snapshot> snaps;
  for (int k = 0; k < 3; ++k) {
    PointCloud c(2);
    for (int i = 0; i < 5; ++i) {
      const double p[2] = {rng.normal() * 1e3, rng.uniform() / 7.0};
      c.push_back(p);
    }
    snaps.push_back({0.1 * k + 1.0 / 3.0, c});
  }
  const SnapshotDataset ds(2, snaps);
  const auto path = std::filesystem::temp_directory_path() / "spides_ds_roundtrip.txt";
  write_dataset(ds, path);
  const auto back = read_dataset(path);
  CHECK(back == ds);
  const std::string text = format_dataset(ds);
  CHECK(text.rfind("# spides-snapshots v1 d=2\n# t=", 0) == 0);
  CHECK(text.find(" \n") == std::string::npos);
  CHECK(text.back() == '\n');
  std::filesystem::remove(path);
}

TEST_CASE("format_real parses back exactly") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) {
    CHECK(std::stod(format_real(v)) == v);
  }
}

TEST_CASE("malformed dataset files report the line") {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_dataset(text);
    } catch (const FormatError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("# spides-snapshots v1 d=2\n# t=0\n1,2\n3\n# t=1\n1,2\n3,4\n") == 4);
  CHECK(line_of("# spides-snapshots v2 d=1\n") == 1);
  CHECK(line_of("# spides-snapshots v1 d=1\n# t=0\n1\nnan\n") == 4);
  CHECK(line_of("# spides-snapshots v1 d=1\n# t=0\n1\n2\n# t=1\n3\nabc\n") == 7);
  CHECK(line_of("# spides-snapshots v1 d=1\n1\n") == 2);
  try {
    parse_dataset("# spides-snapshots v1 d=1\n# t=0\n1\n2\n# t=1\n");
    FAIL("expected failure");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("snapshot with fewer than 2 samples") != std::string::npos);
  }
}

TEST_CASE("missing dataset file is a validation error") {
  CHECK_THROWS_AS(read_dataset("/nonexistent/spides/none.txt"), ValidationError);
}
