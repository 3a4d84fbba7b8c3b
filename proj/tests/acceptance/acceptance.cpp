// One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support.hpp"
#include "spides/config.hpp"
#include "spides/flow_matching.hpp"
#include "spides/library.hpp"
#include "spides/pipeline.hpp"
#include "spides/rng.hpp"
#include "spides/score_matching.hpp"
#include "spides/sparse_bayes.hpp"
#include "spides/transport.hpp"

using namespace spides;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

double median_of(const DiscoveredSde& sde, const std::string& role, const std::string& term) {
  for (const auto& c : sde.coefficients)
    if (c.role == role && c.term == term) return c.median;
  return std::numeric_limits<double>::quiet_NaN();
}

bool is_truth_term(const CoefficientSummary& c) {
  return (c.role == "drift" && (c.term == "x" || c.term == "x^3")) || (c.role == "diffusion" && c.term == "1");
}

std::string join(const std::set<std::string>& s) {
  std::string out;
  for (const auto& t : s) out += (out.empty() ? "" : " ") + t;
  return "{" + out + "}";
}

// Gaussian path N(0, v_k) moment-matched to each benchmark snapshot, with
// score -x / v_k and the flow F - s/2 that makes the true coefficients exact.
Verdict oracle_identification() {
  const auto start = Clock::now();
  const auto ds = generate_dataset(DataConfig{});
  const auto lib = BasisLibrary::benchmark();
  Rng rng(41);
  std::vector<ResidualPoint> points;
  for (const auto& snap : ds.snapshots()) {
    const auto& v = snap.samples.values();
    double var = 0;
    for (double x : v) var += x * x;
    var /= static_cast<double>(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) {
      const std::vector<double> x{std::sqrt(var) * rng.normal()};
      const std::vector<double> s{-x[0] / var};
      const std::vector<double> f{x[0] * (4 - x[0] * x[0]) - 0.5 * s[0]};
      points.push_back(make_residual_point(lib, x, snap.time, f, s));
    }
  }
  FitConfig cfg;
  cfg.seed = 5;
  const auto sde = extract_equation(fit(points, lib, cfg).posterior, lib, 0.1, 1000, 1);
  const double a = median_of(sde, "drift", "x"), b = median_of(sde, "drift", "x^3");
  const double g = median_of(sde, "diffusion", "1");
  double other = 0;
  for (const auto& c : sde.coefficients)
    if (!is_truth_term(c)) other = std::max(other, std::abs(c.median));
  const double elapsed = seconds_since(start);
  const bool ok = std::abs(a - 4) <= 0.08 && std::abs(b + 1) <= 0.02 && std::abs(g - 1) <= 0.02 && other < 0.02 &&
                  elapsed < 60;
  return {ok, fmt("%s; x %.4f, x^3 %.4f, diffusion %.4f, largest other |median| %.4f, %.1f s",
                  sde.equation.c_str(), a, b, g, other, elapsed)};
}

PipelineConfig default_config() { return parse_config("", nullptr); }

Verdict end_to_end(const fs::path& dir) {
  const auto start = Clock::now();
  const auto config = default_config();
  std::ostringstream log;
  cmd_generate(config, dir, log);
  cmd_train_flow(config, dir, log);
  cmd_train_score(config, dir, log);
  cmd_identify(config, dir, log);
  const double elapsed = seconds_since(start);
  const auto lib = config.basis();
  const auto theta = read_coefficients_csv(dir / config.io.coefficients, lib);
  // Retained set and medians straight from the CSV the pipeline wrote.
  std::set<std::string> kept;
  for (std::size_t k = 0; k < lib.drift_size(); ++k)
    if (theta[k] != 0.0) kept.insert("drift:" + lib.drift_terms()[k].tag());
  for (std::size_t k = 0; k < lib.diffusion_size(); ++k)
    if (theta[lib.drift_size() + k] != 0.0) kept.insert("diffusion:" + lib.diffusion_terms()[k].tag());
  const std::set<std::string> truth{"drift:x", "drift:x^3", "diffusion:1"};
  const double a = theta[1], b = theta[3], g = theta[lib.drift_size()];
  const bool ok = kept == truth && std::abs(a - 4) <= 0.4 && std::abs(b + 1) <= 0.15 && std::abs(g - 1) <= 0.15 &&
                  elapsed < 15 * 60;
  std::string equation = slurp(dir / config.io.report);
  equation = equation.substr(equation.find('\n') + 1);
  equation = equation.substr(0, equation.find('\n'));
  return {ok, fmt("%s; retained %s, %.1f s", equation.c_str(), join(kept).c_str(), elapsed)};
}

Verdict flow_fidelity(const fs::path& dir) {
  const auto config = default_config();
  const auto ds = read_dataset(dir / config.io.dataset);
  const auto model = read_model(dir / config.io.flow_model);
  const FlowModel flow{model.field};
  const auto still = make_sde(1, parse_per_dimension("0", 1), parse_per_dimension("0", 1));
  const auto ev = evaluate_models(ds, flow.as_function(), still, config.evaluate);
  double worst = 0, worst_t = 0;
  for (const auto& row : ev.rows) {
    if (row.w2_flow > worst) {
      worst = row.w2_flow;
      worst_t = row.t;
    }
  }
  return {worst <= 0.05, fmt("max squared W2 %.4f at t = %.1f", worst, worst_t)};
}

Verdict score_fidelity() {
  Rng rng(8);
  PointCloud a(1, 100000), b(1, 100000);
  for (auto& v : a.values()) v = 1.0 + 0.5 * rng.normal();
  for (auto& v : b.values()) v = 1.0 + 0.5 * rng.normal();
  const SnapshotDataset ds(1, {{0.0, a}, {1.0, b}});
  ScoreConfig cfg;
  cfg.seed = 2;
  const auto trained = train_score(ds, cfg);
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    const double x = 2.0 * (i + 0.5) / 20.0;
    const double truth = -(x - 1.0) / 0.25;
    for (double t : {0.0, 1.0}) {
      const std::vector<double> v{x};
      worst = std::max(worst, std::abs(trained.model.field.forward(v, t)[0] - truth) / std::abs(truth));
    }
  }
  return {worst <= 0.10, fmt("worst relative error %.4f over 20 points in mu +- 2 sigma", worst)};
}

Verdict ot_exactness() {
  Rng rng(17);
  int bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(6);
    PointCloud a(1, n), b(1, n);
    for (auto& v : a.values()) v = 2 * rng.normal();
    for (auto& v : b.values()) v = 2 * rng.normal();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    const double w = 1.0 / static_cast<double>(n);
    do {
      double c = 0;
      // Same accumulation as the plan cost: weight 1/n, source order.
      for (std::size_t i = 0; i < n; ++i) {
        const double d = a.row(i)[0] - b.row(perm[i])[0];
        c += w * (d * d);
      }
      best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const auto plan = solve_ot(a, b);
    bool monotone = true;
    for (const auto& p : plan.pairs)
      for (const auto& q : plan.pairs)
        if (a.row(p.source)[0] < a.row(q.source)[0] && b.row(p.target)[0] > b.row(q.target)[0]) monotone = false;
    if (plan.total_cost != best || !monotone) ++bad;
  }
  return {bad == 0, fmt("%d of 200 instances differ from the permutation minimum or are not monotone", bad)};
}

double cfm_gradient_error() {
  auto net = NeuralField::initialized(1, {6, 5}, 6);
  Rng rng(7);
  PointCloud a(1, 30), b(1, 30);
  for (auto& v : a.values()) v = rng.normal();
  for (auto& v : b.values()) v = 1.0 + rng.normal();
  const SnapshotDataset ds(1, {{0.0, a}, {1.0, b}});
  const auto plans = couple_snapshots(ds, 0, 0);
  const CfmSampler sampler(ds, plans, 0.05);
  const auto batch = sampler.draw(16, rng);
  std::vector<double> grad(net.parameter_count());
  cfm_loss_gradient(net, batch, grad);
  const std::vector<double> p0(net.parameters().begin(), net.parameters().end());
  return spides::testing::fd_relative_error(
      [&](std::span<const double> p) {
        NeuralField m = net;
        std::copy(p.begin(), p.end(), m.parameters().begin());
        return cfm_loss(m, batch);
      },
      p0, grad);
}

double sm_gradient_error() {
  auto net = NeuralField::initialized(2, {6, 5}, 3);
  Rng rng(4);
  FieldBatch batch{PointCloud(2, 12), std::vector<double>(12)};
  for (auto& v : batch.x.values()) v = rng.normal();
  for (auto& t : batch.t) t = rng.uniform();
  std::vector<double> grad(net.parameter_count());
  sm_loss_gradient(net, batch, grad);
  const std::vector<double> p0(net.parameters().begin(), net.parameters().end());
  return spides::testing::fd_relative_error(
      [&](std::span<const double> p) {
        NeuralField m = net;
        std::copy(p.begin(), p.end(), m.parameters().begin());
        return sm_loss(m, batch);
      },
      p0, grad);
}

double sparsity_gradient_error() {
  const auto lib = BasisLibrary::parse(1, "1,x,x^2,sin(x)", "1,x", "0.3*x", "0.2");
  Rng rng(9);
  std::vector<ResidualPoint> pts;
  for (int k = 0; k < 12; ++k) {
    const std::vector<double> x{1.5 * rng.normal()}, s{rng.normal()}, f{rng.normal()};
    pts.push_back(make_residual_point(lib, x, rng.uniform(), f, s));
  }
  std::vector<const ResidualPoint*> refs;
  for (const auto& p : pts) refs.push_back(&p);
  auto post = initial_posterior(6, 1e-5, {.theta_mu = 0.4, .theta_sigma = 0.2, .scale_mu = -0.3, .scale_sigma = 0.3});
  auto eta = post.unconstrained();
  for (auto& v : eta) v += 0.3 * rng.normal();
  post.set_unconstrained(eta);
  std::vector<std::vector<double>> noise(3, std::vector<double>(post.noise_count()));
  for (auto& n : noise)
    for (auto& e : n) e = rng.normal();
  std::vector<double> grad(post.parameter_count());
  sparsity_loss(post, lib, refs, noise, 0.05, {}, grad);
  return spides::testing::fd_relative_error(
      [&](std::span<const double> p) {
        auto q = post;
        q.set_unconstrained(p);
        return sparsity_loss(q, lib, refs, noise, 0.05, {});
      },
      eta, grad);
}

Verdict gradient_suite() {
  const double cfm = cfm_gradient_error(), sm = sm_gradient_error(), sp = sparsity_gradient_error();
  return {cfm <= 1e-4 && sm <= 1e-4 && sp <= 1e-4,
          fmt("max relative error: CFM %.2e, SM %.2e, sparsity %.2e", cfm, sm, sp)};
}

Verdict kl_closed_forms() {
  const double hand = std::exp(0.5) - 0.5 * (std::log(2.0) + 1.0);
  const double scale = kl_scale_term(0.0, 1.0), normal = kl_normal_term(0.0, 1.0);
  auto post = initial_posterior(1, 1e-5, {.theta_mu = 0.0, .theta_sigma = 1.0, .scale_mu = 0.0, .scale_sigma = 1.0});
  const double sb = kl_global_b_term(post);
  const double total = kl_divergence(post);
  const double err = std::max({std::abs(scale - hand), std::abs(normal), std::abs(sb - hand),
                               std::abs(total - 3 * hand), std::abs(hand - 0.80215) > 5e-6 ? 1.0 : 0.0});
  return {err <= 1e-10, fmt("scale form %.10f (hand %.10f), theta-tilde form %.1e, max deviation %.1e", scale, hand,
                            normal, err)};
}

Verdict determinism(const fs::path& dir) {
  const char* text =
      "data.snapshots = 3\ndata.samples = 200\nflow.hidden = 16\nflow.epochs = 200\nscore.hidden = 16\n"
      "score.epochs = 200\nidentify.epochs = 200\nidentify.batch = 64\nevaluate.bins = 20\n";
  const auto config = parse_config(text, nullptr);
  std::ostringstream log;
  for (const char* run : {"one", "two"}) {
    fs::remove_all(dir / run);
    cmd_run_all(config, dir / run, log);
  }
  std::size_t files = 0, differ = 0;
  for (const auto& entry : fs::directory_iterator(dir / "one")) {
    ++files;
    if (slurp(entry.path()) != slurp(dir / "two" / entry.path().filename())) ++differ;
  }
  return {files == 12 && differ == 0, fmt("%zu output files, %zu differ between runs", files, differ)};
}

// Stationary density of dx = x(4 - x^2) dt + dB is proportional to
// exp(4x^2 - x^4 / 2), with modes at +-2.
Verdict stationary_modes() {
  Rng rng(3);
  PointCloud x0(1, 10000);
  for (auto& v : x0.values()) v = rng.normal();
  const auto sde = make_sde(1, parse_per_dimension("4*x - 1*x^3", 1), parse_per_dimension("1", 1));
  const auto b = euler_maruyama(sde, x0, {.t_end = 20.0, .step = 1e-3, .seed = 4, .record_stride = 20000});
  std::vector<int> hist(60, 0);
  for (std::size_t p = 0; p < b.particles(); ++p) {
    const int i = static_cast<int>(std::floor((b.state(b.time_points() - 1, p)[0] + 3.0) / 0.1));
    if (i >= 0 && i < 60) ++hist[static_cast<std::size_t>(i)];
  }
  auto mode = [&](int lo, int hi) {
    const auto it = std::max_element(hist.begin() + lo, hist.begin() + hi);
    return -3.0 + 0.1 * (static_cast<double>(it - hist.begin()) + 0.5);
  };
  const double left = mode(0, 30), right = mode(30, 60);
  return {std::abs(left + 2) < 0.2 && std::abs(right - 2) < 0.2, fmt("modes at %.2f and %.2f", left, right)};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "spides_acceptance";
  fs::remove_all(work);
  fs::create_directories(work / "benchmark");

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"oracle-stage identification", oracle_identification},
      {"end-to-end benchmark", [&] { return end_to_end(work / "benchmark"); }},
      {"flow fidelity", [&] { return flow_fidelity(work / "benchmark"); }},
      {"score fidelity", score_fidelity},
      {"OT exactness", ot_exactness},
      {"gradient suite", gradient_suite},
      {"KL closed forms", kl_closed_forms},
      {"determinism", [&] { return determinism(work); }},
      {"stationary double-well modes", stationary_modes},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
