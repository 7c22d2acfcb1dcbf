#include "kan/optim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <limits>
#include <stdexcept>
#include <thread>

namespace kan {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sum_sq(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double l2_drift(const std::vector<double>& now, const std::vector<double>& init) {
  double s = 0.0;
  for (std::size_t i = 0; i < now.size(); ++i) {
    const double d = now[i] - init[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double max_unit_c_norm(const KanParams& params) {
  const int m = params.shape().m;
  const int n_d = params.shape().n_d;
  const double* c = params.c().data();
  double best = 0.0;
  for (int q = 0; q < m; ++q) {
    double s = 0.0;
    for (int k = 0; k < n_d; ++k) {
      const double v = c[static_cast<std::size_t>(q) * n_d + k];
      s += v * v;
    }
    best = std::max(best, s);
  }
  return std::sqrt(best);
}
}  // namespace

void TrainConfig::validate(std::size_t n_samples) const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) {
    throw std::invalid_argument("TrainConfig: eta must be finite and >= 0");
  }
  if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
  if (batch < 1 || batch > static_cast<int>(n_samples)) {
    throw std::invalid_argument("TrainConfig: batch must lie in [1, N]");
  }
  if (loss_tolerance < 0.0) throw std::invalid_argument("TrainConfig: negative loss tolerance");
  if (gram_every < 0 || chi_every < 0) {
    throw std::invalid_argument("TrainConfig: cadences must be >= 0");
  }
}

RegressionProblem::RegressionProblem(Dataset data, int batch, bool with_replacement)
    : data_(std::move(data)), batch_(batch), with_replacement_(with_replacement) {
  data_.validate();
  if (batch_ < 1 || batch_ > static_cast<int>(data_.rows)) {
    throw std::invalid_argument("RegressionProblem: batch must lie in [1, N]");
  }
}

std::vector<double> RegressionProblem::residuals(const KanParams& params) const {
  return kan::residuals(params, data_);
}

std::vector<double> RegressionProblem::residuals_and_gradient(const KanParams& params,
                                                              ParamGrad* grad) const {
  std::vector<double> s = kan::residuals(params, data_);
  if (grad) {
    const double sqrt_n = std::sqrt(static_cast<double>(data_.rows));
    grad->a.assign(params.shape().a_size(), 0.0);
    grad->c.assign(params.shape().c_size(), 0.0);
    for (std::size_t i = 0; i < data_.rows; ++i) {
      const double err = s[i] * sqrt_n;  // f_i - y_i
      const double w = 2.0 / static_cast<double>(data_.rows) * err;
      detail::accumulate_weighted_grad(params, data_.row(i), w, grad->a.data(), grad->c.data());
    }
  }
  return s;
}

void RegressionProblem::minibatch_gradient(const KanParams& params,
                                           const std::vector<double>& s_full, Rng& rng,
                                           ParamGrad& grad) const {
  const auto batch = sample_batch(data_.rows, static_cast<std::size_t>(batch_), rng,
                                  with_replacement_);
  const double sqrt_n = std::sqrt(static_cast<double>(data_.rows));
  grad.a.assign(params.shape().a_size(), 0.0);
  grad.c.assign(params.shape().c_size(), 0.0);
  for (const std::size_t i : batch) {
    const double err = s_full[i] * sqrt_n;
    const double w = 2.0 / static_cast<double>(batch_) * err;
    detail::accumulate_weighted_grad(params, data_.row(i), w, grad.a.data(), grad.c.data());
  }
}

DerivMatrix RegressionProblem::assemble(const KanParams& params) const {
  return assemble_D(params, data_);
}

double loss(const KanParams& params, const Dataset& data) {
  return sum_sq(residuals(params, data));
}

KanParams gd_step(const KanParams& params, const Dataset& data, double eta) {
  data.validate();
  // Same accumulation path as sgd_step with the identity batch, so full-batch
  // SGD reproduces GD bit-for-bit.
  ParamGrad grad;
  grad.a.assign(params.shape().a_size(), 0.0);
  grad.c.assign(params.shape().c_size(), 0.0);
  for (std::size_t i = 0; i < data.rows; ++i) {
    const double err = forward(params, data.row(i)) - data.y[i];
    detail::accumulate_weighted_grad(params, data.row(i),
                                     2.0 / static_cast<double>(data.rows) * err, grad.a.data(),
                                     grad.c.data());
  }
  if (!all_finite(grad.a) || !all_finite(grad.c)) {
    throw std::runtime_error("gd_step: non-finite gradient (divergence)");
  }
  KanParams next = params;
  axpy_params(next, eta, grad);
  return next;
}

std::vector<std::size_t> sample_batch(std::size_t n, std::size_t b, Rng& rng,
                                      bool with_replacement) {
  if (b < 1 || b > n) throw std::invalid_argument("sample_batch: b must lie in [1, N]");
  std::vector<std::size_t> out;
  out.reserve(b);
  if (with_replacement) {
    for (std::size_t i = 0; i < b; ++i) out.push_back(rng.index(n));
  } else {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t j = i + rng.index(n - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
  }
  return out;
}

KanParams sgd_step(const KanParams& params, const Dataset& data, double eta,
                   const std::vector<std::size_t>& batch) {
  if (batch.empty()) throw std::invalid_argument("sgd_step: empty batch");
  data.validate();
  ParamGrad grad;
  grad.a.assign(params.shape().a_size(), 0.0);
  grad.c.assign(params.shape().c_size(), 0.0);
  for (const std::size_t i : batch) {
    if (i >= data.rows) throw std::invalid_argument("sgd_step: batch index out of range");
    const double err = forward(params, data.row(i)) - data.y[i];
    detail::accumulate_weighted_grad(params, data.row(i),
                                     2.0 / static_cast<double>(batch.size()) * err, grad.a.data(),
                                     grad.c.data());
  }
  if (!all_finite(grad.a) || !all_finite(grad.c)) {
    throw std::runtime_error("sgd_step: non-finite gradient (divergence)");
  }
  KanParams next = params;
  axpy_params(next, eta, grad);
  return next;
}

namespace {

// chi = s1 - s0 - D^T (theta1 - theta0), columns of D taken at theta0.
ChiResult chi_from_parts(const DerivMatrix& d, const std::vector<double>& delta_a,
                         const std::vector<double>& delta_c, const std::vector<double>& s0,
                         const std::vector<double>& s1) {
  ChiResult out;
  out.chi.resize(d.cols);
  const std::size_t a_size = delta_a.size();
  for (std::size_t i = 0; i < d.cols; ++i) {
    const double* col = d.col(i);
    double lin = 0.0;
    for (std::size_t r = 0; r < a_size; ++r) lin += col[r] * delta_a[r];
    const double* colc = col + a_size;
    for (std::size_t r = 0; r < delta_c.size(); ++r) lin += colc[r] * delta_c[r];
    out.chi[i] = s1[i] - s0[i] - lin;
  }
  out.norm = std::sqrt(sum_sq(out.chi));
  return out;
}

std::vector<double> diff(const std::vector<double>& now, const std::vector<double>& init) {
  std::vector<double> d(now.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = now[i] - init[i];
  return d;
}

}  // namespace

ChiResult compute_chi(const KanParams& params_t, const KanParams& params_t1, const Dataset& data,
                      const std::vector<double>& residuals_t,
                      const std::vector<double>& residuals_t1) {
  if (!params_t.shape().same_architecture(params_t1.shape())) {
    throw std::invalid_argument("compute_chi: snapshot shape mismatch");
  }
  if (residuals_t.size() != data.rows || residuals_t1.size() != data.rows) {
    throw std::invalid_argument("compute_chi: residual length mismatch");
  }
  const DerivMatrix d = assemble_D(params_t, data);
  return chi_from_parts(d, diff(params_t1.a(), params_t.a()), diff(params_t1.c(), params_t.c()),
                        residuals_t, residuals_t1);
}

TrainResult train(const KanParams& start, const ResidualProblem& problem,
                  const TrainConfig& config, const LazyRadii& radii) {
  config.validate(problem.residual_count());

  TrainResult result;
  result.params = start;
  KanParams& params = result.params;
  const std::vector<double> a0 = start.a();
  const std::vector<double> c0 = start.c();

  Rng batch_rng(config.seed);
  const bool full_batch = problem.full_batch();

  // Pending linearization-error bookkeeping: D and s at the step's start.
  bool chi_pending = false;
  DerivMatrix chi_d;
  std::vector<double> chi_s0, chi_theta_a, chi_theta_c;
  long chi_row = -1;

  ParamGrad grad;
  bool grad_ready = full_batch;
  std::vector<double> s = problem.residuals_and_gradient(params, full_batch ? &grad : nullptr);
  for (long t = 0;; ++t) {
    const double loss_t = sum_sq(s);

    TrajectoryRecord rec;
    rec.t = t;
    rec.loss = loss_t;
    rec.drift_a = l2_drift(params.a(), a0);
    rec.drift_c = l2_drift(params.c(), c0);
    rec.max_cq = max_unit_c_norm(params);
    rec.contraction = kNaN;
    if (t > 0) {
      const double prev = result.trajectory.back().loss;
      if (prev > 0.0) rec.contraction = loss_t / prev;
    }
    rec.sigma_min = kNaN;
    if (config.gram_every > 0 && t % config.gram_every == 0) {
      rec.sigma_min = gram(problem.assemble(params)).sigma_min;
    }
    rec.chi_norm = kNaN;
    const bool tripped = rec.drift_a > 0.5 * radii.r_a || rec.drift_c > 0.5 * radii.r_c ||
                         rec.max_cq > 0.5 * radii.m_c;
    if (tripped && result.stopping_time < 0) result.stopping_time = t;
    rec.stopped = result.stopping_time >= 0;
    result.trajectory.push_back(rec);

    if (chi_pending) {
      const auto chi = chi_from_parts(chi_d, diff(params.a(), chi_theta_a),
                                      diff(params.c(), chi_theta_c), chi_s0, s);
      result.trajectory[static_cast<std::size_t>(chi_row)].chi_norm = chi.norm;
      chi_pending = false;
    }

    if (!std::isfinite(loss_t)) {
      result.diverged = true;
      result.diverged_step = t;
      break;
    }
    if (config.loss_tolerance > 0.0 && loss_t <= config.loss_tolerance) {
      result.reached_tolerance = true;
      break;
    }
    if (t >= config.steps) break;

    if (config.chi_every > 0 && t % config.chi_every == 0) {
      chi_d = problem.assemble(params);
      chi_s0 = s;
      chi_theta_a = params.a();
      chi_theta_c = params.c();
      chi_row = t;
      chi_pending = true;
    }

    if (!grad_ready) problem.minibatch_gradient(params, s, batch_rng, grad);
    if (!all_finite(grad.a) || !all_finite(grad.c)) {
      result.diverged = true;
      result.diverged_step = t;
      break;
    }
    axpy_params(params, config.eta, grad);
    grad_ready = full_batch;
    s = problem.residuals_and_gradient(params, full_batch ? &grad : nullptr);
  }
  return result;
}

TrainResult train(const KanParams& start, const Dataset& data, const TrainConfig& config,
                  const LazyRadii& radii) {
  RegressionProblem problem(data, config.batch, config.with_replacement);
  return train(start, problem, config, radii);
}

ContractionFit fit_contraction(const std::vector<double>& losses, double eta, double sigma_min,
                               double theory_factor) {
  constexpr double kFloor = 1e-14;
  std::size_t usable = 0;
  for (double v : losses) {
    if (v > kFloor) ++usable;
  }
  if (usable < 10) {
    throw std::invalid_argument("fit_contraction: need at least 10 steps above the loss floor");
  }
  double log_sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t + 1 < losses.size(); ++t) {
    if (losses[t] > kFloor && losses[t + 1] > kFloor) {
      log_sum += std::log(losses[t + 1] / losses[t]);
      ++count;
    }
  }
  if (count == 0) {
    throw std::invalid_argument("fit_contraction: no consecutive pairs above the loss floor");
  }
  ContractionFit fit;
  fit.rho_hat = std::exp(log_sum / static_cast<double>(count));
  fit.theory_rho = 1.0 - theory_factor * eta * sigma_min;
  return fit;
}

ExpectationReport expectation_harness(const KanShape& shape, const Dataset& data,
                                      const TrainConfig& config, int num_runs,
                                      std::uint64_t init_seed) {
  if (num_runs < 1) throw std::invalid_argument("expectation_harness: num_runs must be >= 1");
  const KanParams start = init_params(shape, init_seed);

  ExpectationReport report;
  report.num_runs = num_runs;
  {
    RegressionProblem problem(data, config.batch, config.with_replacement);
    const auto s0 = problem.residuals(start);
    report.init_loss = sum_sq(s0);
    report.sigma_min_init = gram(problem.assemble(start)).sigma_min;
  }
  const LazyRadii radii = LazyRadii::from_init(shape, report.sigma_min_init, report.init_loss);

  std::vector<TrainResult> results(num_runs);
  const unsigned workers = std::max(1u, std::min(std::thread::hardware_concurrency(), 8u));
  std::atomic<int> next{0};
  std::vector<std::future<void>> futs;
  for (unsigned w = 0; w < workers; ++w) {
    futs.push_back(std::async(std::launch::async, [&] {
      for (int r = next.fetch_add(1); r < num_runs; r = next.fetch_add(1)) {
        TrainConfig run_config = config;
        run_config.seed = derive_seed(config.seed, static_cast<std::uint64_t>(r));
        results[r] = train(start, data, run_config, radii);
      }
    }));
  }
  for (auto& f : futs) f.get();

  std::size_t len = 0;
  for (const auto& r : results) len = std::max(len, r.trajectory.size());
  report.mean_loss.assign(len, 0.0);
  report.stderr_loss.assign(len, 0.0);
  std::vector<double> cond_sum(len, 0.0);
  int n_inf = 0;
  for (const auto& r : results) {
    if (r.diverged) ++report.num_diverged;
    const bool is_inf = r.stopping_time_infinite();
    if (is_inf) ++n_inf;
    for (std::size_t t = 0; t < len; ++t) {
      // A run that stopped early at tolerance holds its final loss.
      const double v =
          t < r.trajectory.size() ? r.trajectory[t].loss : r.trajectory.back().loss;
      report.mean_loss[t] += v;
      if (is_inf) cond_sum[t] += v;
    }
  }
  for (std::size_t t = 0; t < len; ++t) report.mean_loss[t] /= num_runs;
  if (num_runs > 1) {
    for (const auto& r : results) {
      for (std::size_t t = 0; t < len; ++t) {
        const double v =
            t < r.trajectory.size() ? r.trajectory[t].loss : r.trajectory.back().loss;
        const double d = v - report.mean_loss[t];
        report.stderr_loss[t] += d * d;
      }
    }
    for (std::size_t t = 0; t < len; ++t) {
      report.stderr_loss[t] =
          std::sqrt(report.stderr_loss[t] / (num_runs - 1) / static_cast<double>(num_runs));
    }
  }
  report.fraction_t_infinite = static_cast<double>(n_inf) / num_runs;
  if (n_inf > 0) {
    report.mean_loss_t_inf.resize(len);
    for (std::size_t t = 0; t < len; ++t) report.mean_loss_t_inf[t] = cond_sum[t] / n_inf;
  }
  return report;
}

}  // namespace kan
