#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rng.hpp"

namespace dafe::optim {

using Vec = std::vector<double>;

/// Finite-sum objective f(w) = (1/N) sum_n f_n(w) with a mu-strongly convex
/// regularizer folded into each f_n.
struct FiniteSumProblem {
  virtual ~FiniteSumProblem() = default;
  virtual std::size_t count() const = 0;
  virtual std::size_t dim() const = 0;
  virtual void sample_grad(std::size_t n, const Vec& w, Vec& out) const = 0;
  virtual double value(const Vec& w) const = 0;
  virtual double mu() const = 0;
  /// Exact or high-precision minimizer when available.
  virtual std::optional<Vec> minimizer() const { return std::nullopt; }
};

/// Ridge-regularized least squares
///   f_n(w) = 0.5 (x_n.w - y_n)^2 + (mu/2) ||w||^2
/// with a closed-form minimizer from the normal equations.
struct RidgeLeastSquares : FiniteSumProblem {
  std::size_t n_samples = 0, n_dim = 0;
  Vec x;  // row-major [N, d]
  Vec y;
  double mu_ = 0.0;

  std::size_t count() const override { return n_samples; }
  std::size_t dim() const override { return n_dim; }
  void sample_grad(std::size_t n, const Vec& w, Vec& out) const override;
  double value(const Vec& w) const override;
  double mu() const override { return mu_; }
  std::optional<Vec> minimizer() const override;
};

struct BenchmarkSpec {
  std::size_t n = 1000;
  std::size_t d = 20;
  double mu = 1e-1;
  std::size_t clusters = 100;   // data points arrive in Euclidean clusters
  double cluster_spread = 0.1;  // within-cluster feature noise
  double label_noise = 1.0;     // shared per cluster; keeps the SGD plateau up
  double point_noise = 0.1;     // per-point label noise on top
  std::uint64_t seed = 1;
};

/// Clustered data so Euclidean neighborhoods carry similar gradients: labels
/// inherit most of their noise from the cluster, so sharing a gradient with
/// neighbors is nearly unbiased while distinct samples still disagree.
RidgeLeastSquares make_benchmark_problem(const BenchmarkSpec& spec);

enum class Variant {
  sgd_decreasing,
  sgd_constant,
  saga,
  q_saga,
  svrg,
  n_saga,
};

const char* variant_name(Variant v);
std::optional<Variant> variant_from_name(const std::string& name);

/// k-nearest-neighbor sets under Euclidean distance, self always included,
/// remaining slots by (distance, index) order.
struct NeighborhoodIndex {
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> sets;
};

NeighborhoodIndex build_neighborhoods(const std::vector<Vec>& points, std::size_t k);

struct OptimizerOptions {
  Variant variant = Variant::saga;
  double step_size = 0.0;  // gamma; 0 selects q / (mu N)
  std::size_t q = 1;       // q-SAGA refresh count / SVRG refresh rate
  std::size_t k = 10;      // N-SAGA neighborhood size
  /// Test hook: pins the q-SAGA refresh index instead of drawing it.
  std::optional<std::size_t> forced_refresh_index;
  bool init_full_pass = false;  // fill the memory with one gradient sweep
};

/// Shared iterate + gradient-memory state. memory_mean is maintained
/// incrementally and always equals the arithmetic mean of the table.
struct OptimizerState {
  Vec w;
  std::vector<Vec> memory;  // epsilon_n (beta_n for N-SAGA)
  Vec memory_mean;
  std::size_t iteration = 0;
  std::uint64_t evaluations = 0;  // per-sample gradient computations
  NeighborhoodIndex neighborhoods;

  static OptimizerState create(const FiniteSumProblem& problem,
                               const OptimizerOptions& opts, SeededRng& rng);
};

/// One update at sampled index n; dispatches on opts.variant.
void step(OptimizerState& state, const FiniteSumProblem& problem, std::size_t n,
          const OptimizerOptions& opts, SeededRng& rng);

void step_sgd(OptimizerState& state, const FiniteSumProblem& problem, std::size_t n,
              const OptimizerOptions& opts);
void step_saga(OptimizerState& state, const FiniteSumProblem& problem, std::size_t n,
               const OptimizerOptions& opts);
void step_q_saga(OptimizerState& state, const FiniteSumProblem& problem, std::size_t n,
                 const OptimizerOptions& opts, SeededRng& rng);
void step_svrg(OptimizerState& state, const FiniteSumProblem& problem, std::size_t n,
               const OptimizerOptions& opts, SeededRng& rng);
void step_n_saga(OptimizerState& state, const FiniteSumProblem& problem, std::size_t n,
                 const OptimizerOptions& opts);

struct TracePoint {
  std::uint64_t evaluations = 0;
  double suboptimality = 0.0;
  double wall_seconds = 0.0;
};

struct BenchmarkRun {
  std::vector<TracePoint> trace;
  Vec final_w;
  double final_suboptimality = 0.0;
};

/// Runs `epochs * N` iterations, logging f(w) - f(w*) against the number of
/// data-point evaluations (memory refreshes included).
BenchmarkRun run_benchmark(const FiniteSumProblem& problem, const OptimizerOptions& opts,
                           std::size_t epochs, std::uint64_t seed,
                           std::size_t log_points_per_epoch = 10);

}  // namespace dafe::optim
