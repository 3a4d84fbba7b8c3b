#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace spides {

// Row-major set of d-dimensional points.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::size_t dim) : dim_(dim) {}
  PointCloud(std::size_t dim, std::vector<double> values);
  PointCloud(std::size_t dim, std::size_t count) : dim_(dim), values_(dim * count, 0.0) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return dim_ == 0 ? 0 : values_.size() / dim_; }
  bool empty() const { return values_.empty(); }

  std::span<const double> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::span<double> row(std::size_t i) { return {values_.data() + i * dim_, dim_}; }
  void push_back(std::span<const double> point);
  void reserve(std::size_t count) { values_.reserve(count * dim_); }

  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  bool operator==(const PointCloud&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

struct Snapshot {
  double time = 0.0;
  PointCloud samples;

  bool operator==(const Snapshot&) const = default;
};

// N timestamped empirical marginals. The constructor enforces: at least two
// snapshots, strictly increasing times, at least two samples per snapshot,
// matching dimension and finite values.
class SnapshotDataset {
 public:
  SnapshotDataset(std::size_t dim, std::vector<Snapshot> snapshots);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return snapshots_.size(); }
  const Snapshot& operator[](std::size_t i) const { return snapshots_[i]; }
  const std::vector<Snapshot>& snapshots() const { return snapshots_; }
  std::vector<double> times() const;
  std::size_t total_samples() const;

  bool operator==(const SnapshotDataset&) const = default;

 private:
  std::size_t dim_;
  std::vector<Snapshot> snapshots_;
};

// Simulated paths on a uniform grid: state(k, p) is particle p at times()[k].
class TrajectoryBundle {
 public:
  TrajectoryBundle(std::size_t dim, std::size_t particles, double spacing, std::size_t points);

  std::size_t dim() const { return dim_; }
  std::size_t particles() const { return particles_; }
  std::size_t time_points() const { return points_; }
  double spacing() const { return spacing_; }
  double time(std::size_t k) const { return static_cast<double>(k) * spacing_; }
  double end_time() const { return time(points_ - 1); }

  std::span<const double> state(std::size_t k, std::size_t p) const {
    return {values_.data() + (k * particles_ + p) * dim_, dim_};
  }
  std::span<double> state(std::size_t k, std::size_t p) {
    return {values_.data() + (k * particles_ + p) * dim_, dim_};
  }

 private:
  std::size_t dim_;
  std::size_t particles_;
  double spacing_;
  std::size_t points_;
  std::vector<double> values_;
};

// Drift F(x, t) into a d-vector; diagonal diffusion G(x, t) into d entries.
using StateFunction = std::function<void(std::span<const double> x, double t, std::span<double> out)>;

struct ItoSde {
  std::size_t dim = 1;
  StateFunction drift;
  StateFunction diffusion;
};

struct SimulationOptions {
  double t_end = 1.0;
  double step = 1e-3;
  std::uint64_t seed = 0;
  // Keep every k-th grid point (the final state is always on the kept grid).
  std::size_t record_stride = 1;
  unsigned workers = 1;
};

// Euler-Maruyama: x_{k+1} = x_k + F dt + G sqrt(dt) z_k. Noise for particle p,
// step k, component j is counter_normal(seed, p, k*d + j), so the output does
// not depend on the worker count. t_end must be an integer multiple of step
// (and of step * record_stride).
TrajectoryBundle euler_maruyama(const ItoSde& sde, const PointCloud& initial,
                                const SimulationOptions& options);

// One snapshot per requested time; each snapshot's sample order is shuffled
// independently so particle identity does not survive across snapshots.
SnapshotDataset marginalize(const TrajectoryBundle& trajectories, std::span<const double> times,
                            std::uint64_t shuffle_seed);

// Text format:
//   # spides-snapshots v1 d=<dim>
//   # t=<time>
//   <x1>,<x2>,...
void write_dataset(const SnapshotDataset& dataset, const std::filesystem::path& path);
std::string format_dataset(const SnapshotDataset& dataset);
SnapshotDataset read_dataset(const std::filesystem::path& path);
SnapshotDataset parse_dataset(const std::string& text);

// %.17g; parses back to the identical double.
std::string format_real(double value);

}  // namespace spides
