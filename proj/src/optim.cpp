#include "optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "error.hpp"
#include "linalg.hpp"

namespace dafe::optim {

void RidgeLeastSquares::sample_grad(std::size_t n, const Vec& w, Vec& out) const {
  out.assign(n_dim, 0.0);
  const double* xn = x.data() + n * n_dim;
  double residual = -y[n];
  for (std::size_t i = 0; i < n_dim; ++i) residual += xn[i] * w[i];
  for (std::size_t i = 0; i < n_dim; ++i) out[i] = residual * xn[i] + mu_ * w[i];
}

double RidgeLeastSquares::value(const Vec& w) const {
  double total = 0.0;
  for (std::size_t n = 0; n < n_samples; ++n) {
    const double* xn = x.data() + n * n_dim;
    double residual = -y[n];
    for (std::size_t i = 0; i < n_dim; ++i) residual += xn[i] * w[i];
    total += 0.5 * residual * residual;
  }
  total /= static_cast<double>(n_samples);
  double reg = 0.0;
  for (double wi : w) reg += wi * wi;
  return total + 0.5 * mu_ * reg;
}

std::optional<Vec> RidgeLeastSquares::minimizer() const {
  // (X^T X / N + mu I) w = X^T y / N
  std::vector<double> a(n_dim * n_dim, 0.0);
  std::vector<double> b(n_dim, 0.0);
  for (std::size_t n = 0; n < n_samples; ++n) {
    const double* xn = x.data() + n * n_dim;
    for (std::size_t i = 0; i < n_dim; ++i) {
      b[i] += xn[i] * y[n];
      for (std::size_t j = i; j < n_dim; ++j) a[i * n_dim + j] += xn[i] * xn[j];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n_samples);
  for (std::size_t i = 0; i < n_dim; ++i) {
    for (std::size_t j = i; j < n_dim; ++j) {
      a[i * n_dim + j] *= inv_n;
      a[j * n_dim + i] = a[i * n_dim + j];
    }
    a[i * n_dim + i] += mu_;
    b[i] *= inv_n;
  }
  return spd_solve(a, n_dim, b);
}

RidgeLeastSquares make_benchmark_problem(const BenchmarkSpec& spec) {
  RidgeLeastSquares p;
  p.n_samples = spec.n;
  p.n_dim = spec.d;
  p.mu_ = spec.mu;
  p.x.resize(spec.n * spec.d);
  p.y.resize(spec.n);
  SeededRng rng(spec.seed, 917);
  const double center_scale = 1.0 / std::sqrt(static_cast<double>(spec.d));
  std::vector<double> centers(spec.clusters * spec.d);
  for (double& c : centers) c = center_scale * rng.next_gaussian();
  std::vector<double> cluster_noise(spec.clusters);
  for (double& c : cluster_noise) c = spec.label_noise * rng.next_gaussian();
  Vec w_true(spec.d);
  for (double& v : w_true) v = rng.next_gaussian();
  for (std::size_t n = 0; n < spec.n; ++n) {
    const std::size_t cl = n % spec.clusters;
    double dotp = 0.0;
    for (std::size_t i = 0; i < spec.d; ++i) {
      double xi = centers[cl * spec.d + i] +
                  spec.cluster_spread * center_scale * rng.next_gaussian();
      p.x[n * spec.d + i] = xi;
      dotp += xi * w_true[i];
    }
    p.y[n] = dotp + cluster_noise[cl] + spec.point_noise * rng.next_gaussian();
  }
  return p;
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::sgd_decreasing: return "sgd";
    case Variant::sgd_constant: return "sgd-const";
    case Variant::saga: return "saga";
    case Variant::q_saga: return "qsaga";
    case Variant::svrg: return "svrg";
    case Variant::n_saga: return "nsaga";
  }
  return "?";
}

std::optional<Variant> variant_from_name(const std::string& name) {
  if (name == "sgd") return Variant::sgd_decreasing;
  if (name == "sgd-const") return Variant::sgd_constant;
  if (name == "saga") return Variant::saga;
  if (name == "qsaga") return Variant::q_saga;
  if (name == "svrg") return Variant::svrg;
  if (name == "nsaga") return Variant::n_saga;
  return std::nullopt;
}

NeighborhoodIndex build_neighborhoods(const std::vector<Vec>& points, std::size_t k) {
  const std::size_t n = points.size();
  if (k == 0 || k > n)
    raise(ErrorCode::parameter, "build_neighborhoods: need 1 <= k <= point count");
  NeighborhoodIndex index;
  index.k = k;
  index.sets.resize(n);
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(n);
  for (std::size_t a = 0; a < n; ++a) {
    dist.clear();
    for (std::size_t b = 0; b < n; ++b) {
      if (b == a) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < points[a].size(); ++i) {
        const double d = points[a][i] - points[b][i];
        s += d * d;
      }
      dist.emplace_back(s, b);
    }
    std::sort(dist.begin(), dist.end());
    std::vector<std::size_t>& set = index.sets[a];
    set.push_back(a);
    for (std::size_t i = 0; i + 1 < k; ++i) set.push_back(dist[i].second);
    std::sort(set.begin(), set.end());
  }
  return index;
}

OptimizerState OptimizerState::create(const FiniteSumProblem& problem,
                                      const OptimizerOptions& opts, SeededRng& rng) {
  (void)rng;
  OptimizerState st;
  st.w.assign(problem.dim(), 0.0);
  st.memory.assign(problem.count(), Vec(problem.dim(), 0.0));
  st.memory_mean.assign(problem.dim(), 0.0);
  if (opts.init_full_pass) {
    Vec g(problem.dim());
    for (std::size_t n = 0; n < problem.count(); ++n) {
      problem.sample_grad(n, st.w, g);
      st.memory[n] = g;
      for (std::size_t i = 0; i < g.size(); ++i) st.memory_mean[i] += g[i];
      ++st.evaluations;
    }
    const double inv = 1.0 / static_cast<double>(problem.count());
    for (double& v : st.memory_mean) v *= inv;
  }
  return st;
}

namespace {

double effective_gamma(const FiniteSumProblem& problem, const OptimizerOptions& opts) {
  if (opts.step_size > 0.0) return opts.step_size;
  return static_cast<double>(opts.q) /
         (problem.mu() * static_cast<double>(problem.count()));
}

// w -= gamma * (g - memory[n] + mean)
void corrected_step(OptimizerState& st, const Vec& g, std::size_t n, double gamma) {
  const Vec& mem = st.memory[n];
  for (std::size_t i = 0; i < st.w.size(); ++i)
    st.w[i] -= gamma * (g[i] - mem[i] + st.memory_mean[i]);
}

// memory[j] <- g with the incremental mean update
void refresh_slot(OptimizerState& st, std::size_t j, const Vec& g) {
  Vec& slot = st.memory[j];
  const double inv_n = 1.0 / static_cast<double>(st.memory.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    st.memory_mean[i] += (g[i] - slot[i]) * inv_n;
    slot[i] = g[i];
  }
}

}  // namespace

void step_sgd(OptimizerState& st, const FiniteSumProblem& problem, std::size_t n,
              const OptimizerOptions& opts) {
  const double gamma0 = effective_gamma(problem, opts);
  double gamma = gamma0;
  if (opts.variant == Variant::sgd_decreasing)
    gamma = gamma0 / (1.0 + static_cast<double>(st.iteration) * problem.mu() * gamma0);
  Vec g(problem.dim());
  problem.sample_grad(n, st.w, g);
  ++st.evaluations;
  for (std::size_t i = 0; i < st.w.size(); ++i) st.w[i] -= gamma * g[i];
  ++st.iteration;
}

void step_saga(OptimizerState& st, const FiniteSumProblem& problem, std::size_t n,
               const OptimizerOptions& opts) {
  const double gamma = effective_gamma(problem, opts);
  Vec g(problem.dim());
  problem.sample_grad(n, st.w, g);
  ++st.evaluations;
  corrected_step(st, g, n, gamma);
  refresh_slot(st, n, g);
  ++st.iteration;
}

namespace {

// Uniform size-q index subset via Floyd's algorithm; every index lands in
// the set with probability exactly q/N.
std::vector<std::size_t> sample_subset(std::size_t n, std::size_t q, SeededRng& rng) {
  std::vector<std::size_t> set;
  set.reserve(q);
  for (std::size_t i = n - q; i < n; ++i) {
    std::size_t j = rng.next_index(i + 1);
    bool present = std::find(set.begin(), set.end(), j) != set.end();
    set.push_back(present ? i : j);
  }
  return set;
}

}  // namespace

void step_q_saga(OptimizerState& st, const FiniteSumProblem& problem, std::size_t n,
                 const OptimizerOptions& opts, SeededRng& rng) {
  if (opts.q < 1 || opts.q > problem.count())
    raise(ErrorCode::parameter, "q-SAGA: need 1 <= q <= N");
  const double gamma = effective_gamma(problem, opts);
  const Vec w_pre = st.w;
  Vec g(problem.dim());
  problem.sample_grad(n, w_pre, g);
  ++st.evaluations;
  corrected_step(st, g, n, gamma);
  // Refresh a random q-subset of slots at the pre-step iterate; the step
  // gradient is reused when its own slot is drawn.
  std::vector<std::size_t> refresh;
  if (opts.forced_refresh_index) {
    if (opts.q != 1)
      raise(ErrorCode::parameter, "q-SAGA: forced refresh index requires q == 1");
    refresh.push_back(*opts.forced_refresh_index);
  } else {
    refresh = sample_subset(problem.count(), opts.q, rng);
  }
  Vec gj(problem.dim());
  for (std::size_t j : refresh) {
    if (j == n) {
      refresh_slot(st, j, g);
    } else {
      problem.sample_grad(j, w_pre, gj);
      ++st.evaluations;
      refresh_slot(st, j, gj);
    }
  }
  ++st.iteration;
}

void step_svrg(OptimizerState& st, const FiniteSumProblem& problem, std::size_t n,
               const OptimizerOptions& opts, SeededRng& rng) {
  const double gamma = effective_gamma(problem, opts);
  const double r = rng.next_double();
  const double rate = static_cast<double>(opts.q) / static_cast<double>(problem.count());
  bool refreshed = false;
  if (r < rate) {
    Vec g(problem.dim());
    std::fill(st.memory_mean.begin(), st.memory_mean.end(), 0.0);
    for (std::size_t j = 0; j < problem.count(); ++j) {
      problem.sample_grad(j, st.w, g);
      ++st.evaluations;
      st.memory[j] = g;
      for (std::size_t i = 0; i < g.size(); ++i) st.memory_mean[i] += g[i];
    }
    const double inv = 1.0 / static_cast<double>(problem.count());
    for (double& v : st.memory_mean) v *= inv;
    refreshed = true;
  }
  Vec g(problem.dim());
  if (refreshed) {
    g = st.memory[n];  // just evaluated at the current iterate
  } else {
    problem.sample_grad(n, st.w, g);
    ++st.evaluations;
  }
  corrected_step(st, g, n, gamma);
  ++st.iteration;
}

void step_n_saga(OptimizerState& st, const FiniteSumProblem& problem, std::size_t n,
                 const OptimizerOptions& opts) {
  if (st.neighborhoods.sets.size() != problem.count())
    raise(ErrorCode::contract, "N-SAGA: neighborhood index not built");
  const double gamma = effective_gamma(problem, opts);
  Vec g(problem.dim());
  problem.sample_grad(n, st.w, g);
  ++st.evaluations;
  corrected_step(st, g, n, gamma);
  // The one computed gradient is shared across the whole neighborhood.
  for (std::size_t j : st.neighborhoods.sets[n]) refresh_slot(st, j, g);
  ++st.iteration;
}

void step(OptimizerState& st, const FiniteSumProblem& problem, std::size_t n,
          const OptimizerOptions& opts, SeededRng& rng) {
  switch (opts.variant) {
    case Variant::sgd_decreasing:
    case Variant::sgd_constant:
      step_sgd(st, problem, n, opts);
      break;
    case Variant::saga:
      step_saga(st, problem, n, opts);
      break;
    case Variant::q_saga:
      step_q_saga(st, problem, n, opts, rng);
      break;
    case Variant::svrg:
      step_svrg(st, problem, n, opts, rng);
      break;
    case Variant::n_saga:
      step_n_saga(st, problem, n, opts);
      break;
  }
}

BenchmarkRun run_benchmark(const FiniteSumProblem& problem, const OptimizerOptions& opts,
                           std::size_t epochs, std::uint64_t seed,
                           std::size_t log_points_per_epoch) {
  const std::size_t n = problem.count();
  SeededRng rng(seed, 31);
  OptimizerState st = OptimizerState::create(problem, opts, rng);
  if (opts.variant == Variant::n_saga) {
    std::vector<Vec> points(n);
    const RidgeLeastSquares* ls = dynamic_cast<const RidgeLeastSquares*>(&problem);
    if (ls == nullptr)
      raise(ErrorCode::contract, "N-SAGA benchmark needs point coordinates");
    for (std::size_t i = 0; i < n; ++i)
      points[i] = Vec(ls->x.begin() + i * ls->n_dim, ls->x.begin() + (i + 1) * ls->n_dim);
    st.neighborhoods = build_neighborhoods(points, opts.k);
  }

  std::optional<Vec> wstar = problem.minimizer();
  if (!wstar) raise(ErrorCode::contract, "benchmark problem must expose its minimizer");
  const double fstar = problem.value(*wstar);

  // Separate streams for index sampling and variant-internal draws so
  // variants that consume extra randomness stay comparable step for step.
  SeededRng rng_idx = rng.fork(101);
  SeededRng rng_var = rng.fork(202);

  const std::size_t total = epochs * n;
  const std::size_t log_every = std::max<std::size_t>(1, n / std::max<std::size_t>(1, log_points_per_epoch));
  BenchmarkRun run;
  const auto t0 = std::chrono::steady_clock::now();
  auto log_point = [&]() {
    TracePoint pt;
    pt.evaluations = st.evaluations;
    pt.suboptimality = problem.value(st.w) - fstar;
    pt.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run.trace.push_back(pt);
  };
  log_point();
  for (std::size_t it = 0; it < total; ++it) {
    const std::size_t idx = static_cast<std::size_t>(rng_idx.next_index(n));
    step(st, problem, idx, opts, rng_var);
    if ((it + 1) % log_every == 0 || it + 1 == total) log_point();
  }
  run.final_w = st.w;
  run.final_suboptimality = problem.value(st.w) - fstar;
  return run;
}

}  // namespace dafe::optim
