#include "spides/snapshots.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "spides/errors.hpp"
#include "spides/rng.hpp"

namespace spides {

PointCloud::PointCloud(std::size_t dim, std::vector<double> values)
    : dim_(dim), values_(std::move(values)) {
  if (dim_ == 0 || values_.size() % dim_ != 0) {
    throw std::invalid_argument("PointCloud: value count is not a multiple of dim");
  }
}

void PointCloud::push_back(std::span<const double> point) {
  if (point.size() != dim_) throw std::invalid_argument("PointCloud: dimension mismatch");
  values_.insert(values_.end(), point.begin(), point.end());
}

SnapshotDataset::SnapshotDataset(std::size_t dim, std::vector<Snapshot> snapshots)
    : dim_(dim), snapshots_(std::move(snapshots)) {
  if (dim_ == 0) throw ValidationError("dataset dimension must be positive");
  if (snapshots_.size() < 2) throw ValidationError("dataset needs at least 2 snapshots");
  for (std::size_t i = 0; i < snapshots_.size(); ++i) {
    const Snapshot& s = snapshots_[i];
    if (!std::isfinite(s.time)) throw ValidationError("snapshot time is not finite");
    if (i > 0 && !(s.time > snapshots_[i - 1].time)) {
      throw ValidationError("snapshot times must be strictly increasing");
    }
    if (s.samples.dim() != dim_) throw ValidationError("snapshot dimension mismatch");
    if (s.samples.size() < 2) throw ValidationError("snapshot with fewer than 2 samples");
    for (double v : s.samples.values()) {
      if (!std::isfinite(v)) throw ValidationError("snapshot contains a non-finite value");
    }
  }
}

std::vector<double> SnapshotDataset::times() const {
  std::vector<double> out;
  out.reserve(snapshots_.size());
  for (const auto& s : snapshots_) out.push_back(s.time);
  return out;
}

std::size_t SnapshotDataset::total_samples() const {
  std::size_t n = 0;
  for (const auto& s : snapshots_) n += s.samples.size();
  return n;
}

TrajectoryBundle::TrajectoryBundle(std::size_t dim, std::size_t particles, double spacing,
                                   std::size_t points)
    : dim_(dim), particles_(particles), spacing_(spacing), points_(points),
      values_(dim * particles * points, 0.0) {}

namespace {

std::size_t integer_ratio(double numerator, double denominator, const char* what) {
  const double ratio = numerator / denominator;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-6 * rounded) {
    throw std::invalid_argument(std::string("euler_maruyama: ") + what);
  }
  return static_cast<std::size_t>(rounded);
}

}  // namespace

TrajectoryBundle euler_maruyama(const ItoSde& sde, const PointCloud& initial,
                                const SimulationOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("euler_maruyama: step must be positive");
  if (!(options.t_end > 0.0)) throw std::invalid_argument("euler_maruyama: t_end must be positive");
  if (initial.empty()) throw std::invalid_argument("euler_maruyama: no initial states");
  if (initial.dim() != sde.dim) throw std::invalid_argument("euler_maruyama: dimension mismatch");
  if (options.record_stride == 0) throw std::invalid_argument("euler_maruyama: zero stride");

  const std::size_t steps = integer_ratio(options.t_end, options.step, "t_end is not a multiple of step");
  if (steps % options.record_stride != 0) {
    throw std::invalid_argument("euler_maruyama: step count is not a multiple of record_stride");
  }
  const std::size_t dim = sde.dim;
  const std::size_t particles = initial.size();
  const std::size_t points = steps / options.record_stride + 1;
  TrajectoryBundle bundle(dim, particles, options.step * static_cast<double>(options.record_stride),
                          points);

  const double sqrt_step = std::sqrt(options.step);
  std::vector<std::string> failures(particles);

  auto run_particle = [&](std::size_t p) {
    std::vector<double> x(initial.row(p).begin(), initial.row(p).end());
    std::vector<double> drift(dim), diffusion(dim);
    auto record = [&](std::size_t k) { std::copy(x.begin(), x.end(), bundle.state(k, p).begin()); };
    record(0);
    for (std::size_t k = 0; k < steps; ++k) {
      const double t = static_cast<double>(k) * options.step;
      sde.drift(x, t, drift);
      sde.diffusion(x, t, diffusion);
      for (std::size_t j = 0; j < dim; ++j) {
        const double z = counter_normal(options.seed, p, k * dim + j);
        x[j] += drift[j] * options.step + diffusion[j] * sqrt_step * z;
      }
      for (double v : x) {
        if (!std::isfinite(v)) {
          failures[p] = "euler_maruyama: non-finite state for particle " + std::to_string(p) +
                        " at t=" + format_real(t + options.step);
          return;
        }
      }
      if ((k + 1) % options.record_stride == 0) record((k + 1) / options.record_stride);
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(options.workers, particles));
  if (workers == 1) {
    for (std::size_t p = 0; p < particles; ++p) run_particle(p);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t p = w; p < particles; p += workers) run_particle(p);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& f : failures) {
    if (!f.empty()) throw DivergenceError(f, 0.0);
  }
  return bundle;
}

SnapshotDataset marginalize(const TrajectoryBundle& trajectories, std::span<const double> times,
                            std::uint64_t shuffle_seed) {
  const double spacing = trajectories.spacing();
  const double tolerance = 1e-9 * std::max(1.0, trajectories.end_time());
  std::vector<Snapshot> snapshots;
  snapshots.reserve(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double t = times[i];
    if (!(t >= -tolerance && t <= trajectories.end_time() + tolerance)) {
      throw std::invalid_argument("marginalize: time " + format_real(t) + " outside simulated range");
    }
    const auto k = static_cast<std::size_t>(std::llround(std::max(0.0, t) / spacing));
    const std::size_t index = std::min(k, trajectories.time_points() - 1);

    std::vector<std::size_t> order(trajectories.particles());
    for (std::size_t p = 0; p < order.size(); ++p) order[p] = p;
    Rng rng(derive_seed(shuffle_seed, i));
    for (std::size_t p = order.size(); p > 1; --p) std::swap(order[p - 1], order[rng.index(p)]);

    PointCloud samples(trajectories.dim());
    samples.reserve(order.size());
    for (std::size_t p : order) samples.push_back(trajectories.state(index, p));
    snapshots.push_back({t, std::move(samples)});
  }
  return SnapshotDataset(trajectories.dim(), std::move(snapshots));
}

std::string format_real(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.17g", value);
  return buffer;
}

std::string format_dataset(const SnapshotDataset& dataset) {
  std::string out = "# spides-snapshots v1 d=" + std::to_string(dataset.dim()) + "\n";
  for (const auto& snapshot : dataset.snapshots()) {
    out += "# t=" + format_real(snapshot.time) + "\n";
    for (std::size_t i = 0; i < snapshot.samples.size(); ++i) {
      const auto row = snapshot.samples.row(i);
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (j) out += ',';
        out += format_real(row[j]);
      }
      out += '\n';
    }
  }
  return out;
}

void write_dataset(const SnapshotDataset& dataset, const std::filesystem::path& path) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  file << format_dataset(dataset);
  if (!file) throw IoError("failed writing " + path.string());
}

namespace {

double parse_real(std::string_view token, std::size_t line) {
  double value = 0.0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw FormatError("cannot parse real '" + std::string(token) + "'", line);
  }
  if (!std::isfinite(value)) throw FormatError("non-finite value '" + std::string(token) + "'", line);
  return value;
}

}  // namespace

SnapshotDataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;

  if (!std::getline(in, line)) throw FormatError("empty file", 1);
  ++number;
  const std::string prefix = "# spides-snapshots v1 d=";
  if (line.rfind(prefix, 0) != 0) throw FormatError("missing '# spides-snapshots v1 d=<dim>' header", number);
  std::size_t dim = 0;
  {
    const std::string rest = line.substr(prefix.size());
    auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), dim);
    if (ec != std::errc() || ptr != rest.data() + rest.size() || dim == 0) {
      throw FormatError("malformed dimension in header", number);
    }
  }

  std::vector<Snapshot> snapshots;
  std::vector<std::size_t> block_lines;
  std::vector<double> row(dim);
  while (std::getline(in, line)) {
    ++number;
    if (line.rfind("# t=", 0) == 0) {
      const double t = parse_real(std::string_view(line).substr(4), number);
      if (!snapshots.empty() && !(t > snapshots.back().time)) {
        throw FormatError("snapshot times must be strictly increasing", number);
      }
      snapshots.push_back({t, PointCloud(dim)});
      block_lines.push_back(number);
      continue;
    }
    if (line.empty()) throw FormatError("empty line", number);
    if (snapshots.empty()) throw FormatError("sample row before the first '# t=' block", number);
    std::string_view rest(line);
    std::size_t count = 0;
    while (true) {
      const auto comma = rest.find(',');
      const auto token = rest.substr(0, comma);
      if (count >= dim) throw FormatError("row has more than d=" + std::to_string(dim) + " values", number);
      row[count++] = parse_real(token, number);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (count != dim) {
      throw FormatError("row has " + std::to_string(count) + " values, expected d=" + std::to_string(dim),
                        number);
    }
    snapshots.back().samples.push_back(row);
  }
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    if (snapshots[i].samples.size() < 2) {
      throw FormatError("snapshot with fewer than 2 samples", block_lines[i]);
    }
  }
  if (snapshots.size() < 2) throw FormatError("dataset needs at least 2 snapshots", number);
  return SnapshotDataset(dim, std::move(snapshots));
}

SnapshotDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ValidationError("cannot open dataset " + path.string());
  std::ostringstream buffer;
  buffer << file.rdbuf();
  return parse_dataset(buffer.str());
}

}  // namespace spides
