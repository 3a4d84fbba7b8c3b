#include "spides/transport.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "spides/rng.hpp"

namespace spides {

namespace {

double squared_distance(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double d = x[j] - y[j];
    s += d * d;
  }
  return s;
}

std::vector<std::size_t> monotone_matching(const PointCloud& a, const PointCloud& b) {
  const std::size_t n = a.size();
  std::vector<std::size_t> ia(n), ib(n);
  std::iota(ia.begin(), ia.end(), 0);
  std::iota(ib.begin(), ib.end(), 0);
  auto by_value = [](const PointCloud& c) {
    return [&c](std::size_t i, std::size_t j) {
      return c.row(i)[0] < c.row(j)[0] || (c.row(i)[0] == c.row(j)[0] && i < j);
    };
  };
  std::sort(ia.begin(), ia.end(), by_value(a));
  std::sort(ib.begin(), ib.end(), by_value(b));
  std::vector<std::size_t> match(n);
  for (std::size_t k = 0; k < n; ++k) match[ia[k]] = ib[k];
  return match;
}

std::vector<std::size_t> subsample(std::size_t from, std::size_t to, std::uint64_t seed) {
  std::vector<std::size_t> idx(from);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t k = 0; k < to; ++k) std::swap(idx[k], idx[k + rng.index(from - k)]);
  idx.resize(to);
  std::sort(idx.begin(), idx.end());
  return idx;
}

PointCloud select_rows(const PointCloud& c, std::span<const std::size_t> rows) {
  PointCloud out(c.dim());
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(c.row(r));
  return out;
}

TransportPlan permutation_plan(const PointCloud& a, const PointCloud& b, const OtOptions& options) {
  const std::size_t n = a.size();
  std::vector<std::size_t> match;
  if (a.dim() == 1 && options.monotone_1d) {
    match = monotone_matching(a, b);
  } else {
    std::vector<double> cost(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = squared_distance(a.row(i), b.row(j));
    }
    match = solve_assignment(cost, n);
  }
  TransportPlan plan;
  plan.pairs.reserve(n);
  const double w = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) plan.pairs.push_back({i, match[i], w});
  plan.total_cost = plan_cost(plan, a, b);
  return plan;
}

}  // namespace

std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t n) {
  if (cost.size() != n * n) throw std::invalid_argument("solve_assignment: cost matrix size");
  constexpr double inf = std::numeric_limits<double>::infinity();
  constexpr std::size_t none = std::numeric_limits<std::size_t>::max();

  // Row potentials u, column potentials v; 1-based internally with column 0
  // acting as the virtual source of each augmenting search.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), dist(n + 1);
  std::vector<std::size_t> row_of(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);

  for (std::size_t i = 1; i <= n; ++i) {
    row_of[0] = i;
    std::size_t j0 = 0;
    std::fill(dist.begin(), dist.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = row_of[j0];
      const double* crow = cost.data() + (i0 - 1) * n;
      double delta = inf;
      std::size_t j1 = none;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double reduced = crow[j - 1] - u[i0] - v[j];
        if (reduced < dist[j]) {
          dist[j] = reduced;
          way[j] = j0;
        }
        if (dist[j] < delta) {
          delta = dist[j];
          j1 = j;
        }
      }
      if (j1 == none) throw std::runtime_error("solve_assignment: non-finite costs");
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[row_of[j]] += delta;
          v[j] -= delta;
        } else {
          dist[j] -= delta;
        }
      }
      j0 = j1;
    } while (row_of[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      row_of[j0] = row_of[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[row_of[j] - 1] = j - 1;
  return assignment;
}

double plan_cost(const TransportPlan& plan, const PointCloud& a, const PointCloud& b) {
  double total = 0.0;
  for (const auto& p : plan.pairs) total += p.weight * squared_distance(a.row(p.source), b.row(p.target));
  return total;
}

TransportPlan solve_ot(const PointCloud& a, const PointCloud& b, const OtOptions& options) {
  if (a.empty() || b.empty()) throw std::invalid_argument("solve_ot: empty point set");
  if (a.dim() != b.dim()) throw std::invalid_argument("solve_ot: dimension mismatch");
  if (a.size() == b.size()) return permutation_plan(a, b, options);

  const bool shrink_a = a.size() > b.size();
  const std::size_t n = std::min(a.size(), b.size());
  const auto kept = subsample(std::max(a.size(), b.size()), n, options.resample_seed);
  const PointCloud reduced = select_rows(shrink_a ? a : b, kept);
  TransportPlan plan = shrink_a ? permutation_plan(reduced, b, options) : permutation_plan(a, reduced, options);
  for (auto& p : plan.pairs) {
    if (shrink_a) {
      p.source = kept[p.source];
    } else {
      p.target = kept[p.target];
    }
  }
  std::sort(plan.pairs.begin(), plan.pairs.end(),
            [](const TransportPair& x, const TransportPair& y) { return x.source < y.source; });
  plan.total_cost = plan_cost(plan, a, b);
  return plan;
}

TransportPlan solve_ot_minibatch(const PointCloud& a, const PointCloud& b, std::size_t chunk,
                                 std::uint64_t seed) {
  if (chunk == 0) throw std::invalid_argument("solve_ot_minibatch: zero chunk size");
  if (a.dim() != b.dim()) throw std::invalid_argument("solve_ot: dimension mismatch");
  const std::size_t n = std::min(a.size(), b.size());
  auto ia = subsample(a.size(), n, derive_seed(seed, 1));
  auto ib = subsample(b.size(), n, derive_seed(seed, 2));
  Rng rng(derive_seed(seed, 3));
  for (std::size_t k = n; k > 1; --k) std::swap(ia[k - 1], ia[rng.index(k)]);
  for (std::size_t k = n; k > 1; --k) std::swap(ib[k - 1], ib[rng.index(k)]);

  TransportPlan plan;
  plan.pairs.reserve(n);
  const double w = 1.0 / static_cast<double>(n);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t len = std::min(chunk, n - start);
    const std::span<const std::size_t> ra(ia.data() + start, len), rb(ib.data() + start, len);
    const TransportPlan local = permutation_plan(select_rows(a, ra), select_rows(b, rb), {});
    for (const auto& p : local.pairs) plan.pairs.push_back({ra[p.source], rb[p.target], w});
  }
  std::sort(plan.pairs.begin(), plan.pairs.end(),
            [](const TransportPair& x, const TransportPair& y) { return x.source < y.source; });
  plan.total_cost = plan_cost(plan, a, b);
  return plan;
}

double squared_w2(const PointCloud& a, const PointCloud& b, const OtOptions& options) {
  return solve_ot(a, b, options).total_cost;
}

PairSampler::PairSampler(const TransportPlan& plan) : pairs_(plan.pairs) {
  if (plan.pairs.empty()) throw std::invalid_argument("PairSampler: empty plan");
  cumulative_.reserve(plan.pairs.size());
  double acc = 0.0;
  for (const auto& p : plan.pairs) cumulative_.push_back(acc += p.weight);
}

const TransportPair& PairSampler::draw(Rng& rng) const {
  const double u = rng.uniform() * cumulative_.back();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()),
                                       cumulative_.size() - 1);
  return pairs_[k];
}

std::vector<std::pair<std::vector<double>, std::vector<double>>> sample_pairs(
    const TransportPlan& plan, const PointCloud& a, const PointCloud& b, std::size_t count,
    std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("sample_pairs: count must be at least 1");
  PairSampler sampler(plan);
  Rng rng(seed);
  std::vector<std::pair<std::vector<double>, std::vector<double>>> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto& p = sampler.draw(rng);
    const auto xa = a.row(p.source);
    const auto xb = b.row(p.target);
    out.emplace_back(std::vector<double>(xa.begin(), xa.end()), std::vector<double>(xb.begin(), xb.end()));
  }
  return out;
}

}  // namespace spides
