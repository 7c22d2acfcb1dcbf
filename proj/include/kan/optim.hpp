#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "kan/model.hpp"
#include "kan/ntk.hpp"
#include "kan/rng.hpp"

namespace kan {
class Rng;

struct TrainConfig {
  double eta = 0.1;
  long steps = 1000;
  int batch = 0;  // b in [1, N]; b == N means plain GD
  std::uint64_t seed = 0;
  double loss_tolerance = 0.0;  // stop early once loss <= tolerance (0 = run all steps)
  int gram_every = 0;           // record sigma_min(G(t)) every k steps (0 = off)
  int chi_every = 0;            // record ||chi(t)|| every k steps (0 = off)
  bool with_replacement = true;

  void validate(std::size_t n_samples) const;
};

/// One row of training telemetry. sigma_min/chi_norm are NaN on steps where
/// the cadence did not sample them; contraction is NaN at t = 0 or when the
/// previous loss was 0.
struct TrajectoryRecord {
  long t = 0;
  double loss = 0.0;
  double drift_a = 0.0;
  double drift_c = 0.0;
  double max_cq = 0.0;
  double contraction = 0.0;
  double sigma_min = 0.0;
  double chi_norm = 0.0;
  bool stopped = false;  // some drift has exceeded its half-radius by this step
};

struct TrainResult {
  KanParams params;
  std::vector<TrajectoryRecord> trajectory;
  long stopping_time = -1;  // first step beyond the half-radii; -1 means "never" (T = infinity)
  bool reached_tolerance = false;
  bool diverged = false;
  long diverged_step = -1;

  bool stopping_time_infinite() const { return stopping_time < 0; }
  const TrajectoryRecord& last() const { return trajectory.back(); }
};

/// A sum-of-squared-residuals objective the trainers can drive: plain
/// regression (Eq.-(3) style) or the physics-informed loss. Residual order is
/// fixed so trajectories are reproducible.
class ResidualProblem {
 public:
  virtual ~ResidualProblem() = default;
  virtual std::size_t residual_count() const = 0;
  /// Residual vector s(theta); the loss is ||s||^2.
  virtual std::vector<double> residuals(const KanParams& params) const = 0;
  /// Residuals plus, when grad is non-null, the full-batch loss gradient
  /// accumulated sample-ascending (one fused pass where the problem allows).
  virtual std::vector<double> residuals_and_gradient(const KanParams& params,
                                                     ParamGrad* grad) const = 0;
  /// Mini-batch gradient; consumes the rng deterministically. s_full carries
  /// the residuals already computed at the same params.
  virtual void minibatch_gradient(const KanParams& params, const std::vector<double>& s_full,
                                  Rng& rng, ParamGrad& grad) const = 0;
  /// True when the configured batch covers every sample exactly once; the
  /// trainer then bypasses sampling entirely and takes the GD path.
  virtual bool full_batch() const = 0;
  /// Columns ds_i/dtheta for Gram and linearization-error instrumentation.
  virtual DerivMatrix assemble(const KanParams& params) const = 0;
};

class RegressionProblem final : public ResidualProblem {
 public:
  RegressionProblem(Dataset data, int batch, bool with_replacement = true);

  std::size_t residual_count() const override { return data_.rows; }
  std::vector<double> residuals(const KanParams& params) const override;
  std::vector<double> residuals_and_gradient(const KanParams& params,
                                             ParamGrad* grad) const override;
  void minibatch_gradient(const KanParams& params, const std::vector<double>& s_full, Rng& rng,
                          ParamGrad& grad) const override;
  bool full_batch() const override { return batch_ == static_cast<int>(data_.rows); }
  DerivMatrix assemble(const KanParams& params) const override;

  const Dataset& data() const { return data_; }

 private:
  Dataset data_;
  int batch_;
  bool with_replacement_;
};

/// (1/N) sum_i (f_i - y_i)^2 == sum_i s_i^2.
double loss(const KanParams& params, const Dataset& data);

/// One vanilla GD step on the regression loss; deterministic. Throws on a
/// non-finite gradient.
KanParams gd_step(const KanParams& params, const Dataset& data, double eta);

/// b indices drawn i.i.d. uniform over [0, N) with replacement (the paper's
/// sampling model; the expectation identities need i.i.d. indices). Without
/// replacement is available behind the flag.
std::vector<std::size_t> sample_batch(std::size_t n, std::size_t b, Rng& rng,
                                      bool with_replacement = true);

/// One SGD step on the mini-batch loss (1/b) sum_{i in batch} (f_i - y_i)^2,
/// accumulated in draw order.
KanParams sgd_step(const KanParams& params, const Dataset& data, double eta,
                   const std::vector<std::size_t>& batch);

/// Full training loop with trajectory instrumentation. Records every field of
/// TrajectoryRecord; stops early at loss <= loss_tolerance; tracks the
/// stopping time T (first step with drift_a > R_a/2 or drift_c > R_c/2 or
/// max_q ||c_q|| > M_c/2). Divergence is reported in the result, never
/// silently clipped.
TrainResult train(const KanParams& start, const ResidualProblem& problem,
                  const TrainConfig& config, const LazyRadii& radii);

/// Regression convenience overload (batch/with_replacement from config).
TrainResult train(const KanParams& start, const Dataset& data, const TrainConfig& config,
                  const LazyRadii& radii);

/// First-order linearization error of one recorded step:
///   chi_i = s_i(t+1) - s_i(t) - <ds_i(t)/da, da> - <ds_i(t)/dc, dc>.
struct ChiResult {
  std::vector<double> chi;
  double norm = 0.0;
};

ChiResult compute_chi(const KanParams& params_t, const KanParams& params_t1, const Dataset& data,
                      const std::vector<double>& residuals_t,
                      const std::vector<double>& residuals_t1);

/// Geometric-mean per-step loss ratio over a recorded series, with the theory
/// ceiling 1 - theory_factor * eta * sigma_min (factor 1/2 for GD, 1 for the
/// SGD expectation bound). Needs >= 10 usable steps above the loss floor.
struct ContractionFit {
  double rho_hat = 0.0;
  double theory_rho = 0.0;
};

ContractionFit fit_contraction(const std::vector<double>& losses, double eta, double sigma_min,
                               double theory_factor = 0.5);

/// Multi-seed SGD expectation study: fixed init, batch seeds derived per run.
/// Reports the unconditional mean loss curve with per-step standard error,
/// the conditional mean over runs that never left the stability region
/// (T = infinity), and the empirical fraction of such runs.
struct ExpectationReport {
  std::vector<double> mean_loss;
  std::vector<double> stderr_loss;
  std::vector<double> mean_loss_t_inf;  // conditional on T = infinity; empty if no such run
  double fraction_t_infinite = 0.0;
  int num_runs = 0;
  int num_diverged = 0;
  double sigma_min_init = 0.0;
  double init_loss = 0.0;
};

ExpectationReport expectation_harness(const KanShape& shape, const Dataset& data,
                                      const TrainConfig& config, int num_runs,
                                      std::uint64_t init_seed);

}  // namespace kan
