#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "spides/rng.hpp"
#include "spides/snapshots.hpp"

namespace spides {

struct TransportPair {
  std::size_t source = 0;
  std::size_t target = 0;
  double weight = 0.0;
};

// Discrete coupling between two point sets. total_cost is
// sum(weight * |a_source - b_target|^2), accumulated in pair order.
struct TransportPlan {
  std::vector<TransportPair> pairs;
  double total_cost = 0.0;
};

struct OtOptions {
  // For d = 1 the sorted (monotone) matching is optimal under squared cost;
  // disabling this forces the general assignment solver.
  bool monotone_1d = true;
  // Seed for subsampling the larger set when sizes differ.
  std::uint64_t resample_seed = 0;
};

// Minimum-cost perfect matching on a dense n x n row-major cost matrix
// (shortest augmenting paths with dual potentials). Returns the column
// assigned to each row.
std::vector<std::size_t> solve_assignment(std::span<const double> cost, std::size_t n);

// Exact squared-Euclidean optimal transport between uniform empirical
// measures. Equal sizes give a permutation plan with weights 1/n. When sizes
// differ the larger set is subsampled without replacement down to the smaller
// size and the subsample is matched exactly.
TransportPlan solve_ot(const PointCloud& a, const PointCloud& b, const OtOptions& options = {});

// Splits both sets into random chunks of `chunk` points and solves each chunk
// pair exactly; an approximation for large snapshots.
TransportPlan solve_ot_minibatch(const PointCloud& a, const PointCloud& b, std::size_t chunk,
                                 std::uint64_t seed);

// Squared 2-Wasserstein distance between two empirical measures.
double squared_w2(const PointCloud& a, const PointCloud& b, const OtOptions& options = {});

double plan_cost(const TransportPlan& plan, const PointCloud& a, const PointCloud& b);

// Samples plans by weight with a precomputed cumulative table. Holds its own
// copy of the pairs.
class PairSampler {
 public:
  explicit PairSampler(const TransportPlan& plan);
  const TransportPair& draw(Rng& rng) const;

 private:
  std::vector<TransportPair> pairs_;
  std::vector<double> cumulative_;
};

// I.i.d. draws of (x_a, x_b) with probability proportional to plan weight.
std::vector<std::pair<std::vector<double>, std::vector<double>>> sample_pairs(
    const TransportPlan& plan, const PointCloud& a, const PointCloud& b, std::size_t count,
    std::uint64_t seed);

}  // namespace spides
