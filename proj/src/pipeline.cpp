#include "spides/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "spides/errors.hpp"
#include "spides/rng.hpp"

namespace spides {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  file << text;
  if (!file) throw IoError("failed writing " + path.string());
}

// Six significant digits, for progress messages only.
std::string brief(double value) {
  std::ostringstream s;
  s << value;
  return s.str();
}

void ensure_dir(const std::filesystem::path& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
}

NeuralField load_field(const std::filesystem::path& path, ModelKind kind, std::size_t dim) {
  StoredModel m = read_model(path);
  if (m.kind != kind) throw ValidationError(path.string() + ": expected a " + to_string(kind) + " model");
  if (m.field.state_dim() != dim) throw ValidationError(path.string() + ": model dimension does not match the dataset");
  return std::move(m.field);
}

SnapshotDataset load_dataset(const PipelineConfig& config, const std::filesystem::path& out) {
  SnapshotDataset ds = read_dataset(out / config.io.dataset);
  if (ds.dim() != config.data.dim) throw ValidationError("dataset dimension does not match data.dim");
  return ds;
}

}  // namespace

SnapshotDataset generate_dataset(const DataConfig& data) {
  Rng rng(derive_seed(data.seed, 0));
  PointCloud initial(data.dim, data.samples);
  for (auto& v : initial.values()) v = data.p0_mean + data.p0_std * rng.normal();
  const auto drift = parse_per_dimension(data.drift, data.dim);
  const auto diffusion = parse_per_dimension(data.diffusion, data.dim);
  ItoSde sde = make_sde(data.dim, drift, diffusion);
  // Simulate on [0, t_end]; the snapshot grid is a strided subset.
  const auto times = data.times();
  const double spacing = times[1] - times[0];
  SimulationOptions sim;
  sim.t_end = data.t_end;
  sim.step = data.step;
  sim.seed = derive_seed(data.seed, 1);
  // Record only snapshot times when t_start sits on the snapshot grid.
  const double offset = data.t_start / spacing;
  sim.record_stride = std::abs(offset - std::round(offset)) <= 1e-9
                          ? static_cast<std::size_t>(std::llround(spacing / data.step))
                          : 1;
  sim.workers = data.workers;
  const TrajectoryBundle bundle = euler_maruyama(sde, initial, sim);
  return marginalize(bundle, times, derive_seed(data.seed, 2));
}

std::vector<TransportPlan> couple(const SnapshotDataset& dataset, const OtConfig& ot) {
  return couple_snapshots(dataset, ot.minibatch ? ot.minibatch_size : 0, ot.seed);
}

Evaluation evaluate_models(const SnapshotDataset& dataset, const StateFunction& flow, const ItoSde& sde,
                           const EvaluateConfig& config) {
  Evaluation ev;
  const auto& start = dataset[0];
  const double t0 = start.time;
  const double t_last = dataset[dataset.size() - 1].time;

  PointCloud current = start.samples;
  double t_prev = t0;
  for (const auto& snap : dataset.snapshots()) {
    if (snap.time > t_prev) current = integrate_flow(flow, current, t_prev, snap.time, config.flow_step);
    t_prev = snap.time;
    ev.flow_samples.push_back(current);
  }

  // Shift time so the simulator's clock starts at the first snapshot.
  ItoSde shifted = sde;
  shifted.drift = [f = sde.drift, t0](std::span<const double> x, double t, std::span<double> out) { f(x, t + t0, out); };
  shifted.diffusion = [g = sde.diffusion, t0](std::span<const double> x, double t, std::span<double> out) {
    g(x, t + t0, out);
  };
  SimulationOptions sim;
  const double steps = std::ceil((t_last - t0) / config.sde_step - 1e-9);
  sim.step = config.sde_step;
  sim.t_end = steps * config.sde_step;
  sim.seed = derive_seed(config.seed, 1);
  sim.workers = config.workers;
  const TrajectoryBundle paths = euler_maruyama(shifted, start.samples, sim);
  for (const auto& snap : dataset.snapshots()) {
    const auto k = static_cast<std::size_t>(std::llround((snap.time - t0) / config.sde_step));
    PointCloud cloud(dataset.dim());
    cloud.reserve(paths.particles());
    for (std::size_t p = 0; p < paths.particles(); ++p) cloud.push_back(paths.state(std::min(k, paths.time_points() - 1), p));
    ev.sde_samples.push_back(std::move(cloud));
  }

  const OtOptions ot{.monotone_1d = true, .resample_seed = derive_seed(config.seed, 2)};
  for (std::size_t k = 0; k < dataset.size(); ++k) {
    ev.rows.push_back({dataset[k].time, squared_w2(ev.flow_samples[k], dataset[k].samples, ot),
                       squared_w2(ev.sde_samples[k], dataset[k].samples, ot)});
  }
  return ev;
}

std::string format_density(const std::vector<double>& times, const std::vector<PointCloud>& samples, double lo,
                           double hi, std::size_t bins) {
  std::string out = "t,x,weight\n";
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<double> counts(bins);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    std::fill(counts.begin(), counts.end(), 0.0);
    const auto& cloud = samples[k];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const double x = cloud.row(i)[0];
      if (!(x >= lo && x <= hi)) continue;
      const auto b = std::min(bins - 1, static_cast<std::size_t>((x - lo) / width));
      counts[b] += 1.0;
    }
    const double norm = 1.0 / (static_cast<double>(cloud.size()) * width);
    for (std::size_t b = 0; b < bins; ++b) {
      out += format_real(times[k]) + "," + format_real(lo + (static_cast<double>(b) + 0.5) * width) + "," +
             format_real(counts[b] * norm) + "\n";
    }
  }
  return out;
}

void write_loss_trace(const std::filesystem::path& path, const std::vector<double>& trace) {
  std::string text = "epoch,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) text += std::to_string(i + 1) + "," + format_real(trace[i]) + "\n";
  write_text(path, text);
}

void cmd_generate(const PipelineConfig& config, const std::filesystem::path& out, std::ostream& log) {
  ensure_dir(out);
  const SnapshotDataset ds = generate_dataset(config.data);
  write_dataset(ds, out / config.io.dataset);
  for (const auto& snap : ds.snapshots()) {
    log << "t=" << brief(snap.time) << " samples=" << snap.samples.size() << "\n";
  }
  log << "wrote " << (out / config.io.dataset).string() << "\n";
}

void cmd_train_flow(const PipelineConfig& config, const std::filesystem::path& out, std::ostream& log) {
  ensure_dir(out);
  const SnapshotDataset ds = load_dataset(config, out);
  const auto plans = couple(ds, config.ot);
  const FlowTraining trained = train_flow(ds, plans, config.flow);
  write_model(out / config.io.flow_model, ModelKind::Flow, trained.model.field);
  write_loss_trace(out / config.io.flow_loss, trained.loss_trace);
  log << "flow loss: " << brief(trained.loss_trace.front()) << " -> " << brief(trained.loss_trace.back())
      << "\n";
}

void cmd_train_score(const PipelineConfig& config, const std::filesystem::path& out, std::ostream& log) {
  ensure_dir(out);
  const SnapshotDataset ds = load_dataset(config, out);
  const ScoreTraining trained = train_score(ds, config.score);
  write_model(out / config.io.score_model, ModelKind::Score, trained.model.field);
  write_loss_trace(out / config.io.score_loss, trained.loss_trace);
  log << "score loss: " << brief(trained.loss_trace.front()) << " -> "
      << brief(trained.loss_trace.back()) << "\n";
}

void cmd_identify(const PipelineConfig& config, const std::filesystem::path& out, std::ostream& log) {
  ensure_dir(out);
  const SnapshotDataset ds = load_dataset(config, out);
  FlowModel flow{load_field(out / config.io.flow_model, ModelKind::Flow, ds.dim())};
  const ScoreModel score{load_field(out / config.io.score_model, ModelKind::Score, ds.dim())};
  const BasisLibrary lib = config.basis();
  const FitResult result = config.identify.joint
                               ? fit_joint(ds, couple(ds, config.ot), flow, config.flow, score.as_function(), lib,
                                           config.identify.fit)
                               : fit(ds, flow.as_function(), score.as_function(), lib, config.identify.fit);
  const DiscoveredSde sde = extract_equation(result.posterior, lib, config.identify.threshold,
                                             config.identify.quantile_draws,
                                             derive_seed(config.identify.fit.seed, 9));
  write_report(out / config.io.report, sde);
  write_coefficients_csv(out / config.io.coefficients, sde);
  write_loss_trace(out / config.io.identify_loss, result.loss_trace);
  log << sde.equation << "\n";
}

void cmd_evaluate(const PipelineConfig& config, const std::filesystem::path& out, std::ostream& log) {
  ensure_dir(out);
  const SnapshotDataset ds = load_dataset(config, out);
  const FlowModel flow{load_field(out / config.io.flow_model, ModelKind::Flow, ds.dim())};
  const BasisLibrary lib = config.basis();
  const auto theta = read_coefficients_csv(out / config.io.coefficients, lib);
  const ItoSde sde = make_sde(lib, theta);
  const Evaluation ev = evaluate_models(ds, flow.as_function(), sde, config.evaluate);

  std::string metrics = "t,w2_flow,w2_sde\n";
  for (const auto& r : ev.rows) {
    metrics += format_real(r.t) + "," + format_real(r.w2_flow) + "," + format_real(r.w2_sde) + "\n";
    log << "t=" << brief(r.t) << " w2_flow=" << brief(r.w2_flow) << " w2_sde=" << brief(r.w2_sde)
        << "\n";
  }
  write_text(out / config.io.metrics, metrics);

  std::vector<PointCloud> observed;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& snap : ds.snapshots()) {
    observed.push_back(snap.samples);
    for (std::size_t i = 0; i < snap.samples.size(); ++i) {
      lo = std::min(lo, snap.samples.row(i)[0]);
      hi = std::max(hi, snap.samples.row(i)[0]);
    }
  }
  const double pad = 0.1 * (hi - lo) + 1e-12;
  lo -= pad;
  hi += pad;
  const auto times = ds.times();
  write_text(out / config.io.density_observed, format_density(times, observed, lo, hi, config.evaluate.bins));
  write_text(out / config.io.density_flow, format_density(times, ev.flow_samples, lo, hi, config.evaluate.bins));
  write_text(out / config.io.density_sde, format_density(times, ev.sde_samples, lo, hi, config.evaluate.bins));
}

void cmd_run_all(const PipelineConfig& config, const std::filesystem::path& out, std::ostream& log) {
  cmd_generate(config, out, log);
  cmd_train_flow(config, out, log);
  cmd_train_score(config, out, log);
  cmd_identify(config, out, log);
  cmd_evaluate(config, out, log);
}

}  // namespace spides
