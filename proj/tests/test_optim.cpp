#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "kan/optim.hpp"
#include "kan/rng.hpp"
#include "oracles.hpp"

using namespace kan;

namespace {
double sum_sq(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}
}  // namespace

TEST_CASE("loss definitions") {
  const KanShape shape = oracle::make_shape(1, 3, 2);
  const KanParams params = init_params(shape, 1);

  Dataset data;
  data.rows = 2;
  data.cols = 1;
  data.x = {0.1, -0.4};
  data.y = {forward(params, data.row(0)), forward(params, data.row(1))};
  CHECK(loss(params, data) == 0.0);

  // Errors {1, -1}: (1 + 1)/2.
  data.y[0] -= 1.0;
  data.y[1] += 1.0;
  CHECK(loss(params, data) == doctest::Approx(1.0).epsilon(1e-12));

  const Dataset random = oracle::random_dataset(6, 1, 50);
  CHECK(loss(params, random) ==
        doctest::Approx(sum_sq(residuals(params, random))).epsilon(1e-12));
}

TEST_CASE("gd_step with zero step size is the identity") {
  const KanShape shape = oracle::make_shape(2, 4, 3);
  const KanParams params = init_params(shape, 2);
  const Dataset data = oracle::random_dataset(5, 2, 51);
  const KanParams next = gd_step(params, data, 0.0);
  CHECK(next.a() == params.a());
  CHECK(next.c() == params.c());
}

TEST_CASE("gd_step contracts a scalar quadratic by exactly 1 - 2 eta") {
  // Constant outer basis, m = 1, N = 1: f = c, loss = (c - y)^2.
  const KanShape shape =
      oracle::make_shape(1, 1, 1, BasisFamily::Monomial, TransformKind::Identity);
  KanParams params(shape);
  params.mutable_a()[0] = 0.3;
  params.mutable_c()[0] = 2.0;
  Dataset data;
  data.rows = 1;
  data.cols = 1;
  data.x = {0.5};
  data.y = {0.75};
  const double eta = 0.2;
  const double err0 = 2.0 - 0.75;
  const KanParams next = gd_step(params, data, eta);
  const double err1 = next.c()[0] - 0.75;
  CHECK(err1 == doctest::Approx((1.0 - 2.0 * eta) * err0).epsilon(1e-14));
  CHECK(next.a()[0] == 0.3);  // frozen: constant basis has zero a-gradient
}

TEST_CASE("full loss gradient matches finite differences") {
  const KanShape shape = oracle::make_shape(2, 4, 3);
  const KanParams params = init_params(shape, 3);
  const Dataset data = oracle::random_dataset(5, 2, 52);
  RegressionProblem problem(data, static_cast<int>(data.rows));
  ParamGrad grad;
  problem.residuals_and_gradient(params, &grad);
  std::vector<double> fd_a, fd_c;
  oracle::fd_param_grad(params, [&](const KanParams& p) { return loss(p, data); }, fd_a, fd_c);
  CHECK(oracle::block_rel_err(grad.a, fd_a) <= 1e-6);
  CHECK(oracle::block_rel_err(grad.c, fd_c) <= 1e-6);
}

TEST_CASE("sample_batch determinism and degenerate case") {
  Rng rng1(9), rng2(9);
  const auto b1 = sample_batch(8, 5, rng1);
  const auto b2 = sample_batch(8, 5, rng2);
  CHECK(b1 == b2);

  Rng rng3(10);
  const auto single = sample_batch(1, 1, rng3);
  REQUIRE(single.size() == 1);
  CHECK(single[0] == 0);

  Rng rng4(11);
  const auto no_repl = sample_batch(6, 6, rng4, false);
  auto sorted = no_repl;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 6; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("sample_batch frequencies are uniform") {
  Rng rng(12);
  std::vector<int> counts(4, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[sample_batch(4, 1, rng)[0]];
  for (int c : counts) {
    CHECK(std::abs(c / static_cast<double>(draws) - 0.25) <= 0.01);
  }
}

TEST_CASE("sgd_step equals gd_step on the enumerated full batch") {
  const KanShape shape = oracle::make_shape(2, 4, 3);
  const KanParams params = init_params(shape, 4);
  const Dataset data = oracle::random_dataset(6, 2, 53);
  std::vector<std::size_t> all(6);
  std::iota(all.begin(), all.end(), 0);
  const KanParams via_sgd = sgd_step(params, data, 0.05, all);
  const KanParams via_gd = gd_step(params, data, 0.05);
  CHECK(via_sgd.a() == via_gd.a());
  CHECK(via_sgd.c() == via_gd.c());
}

TEST_CASE("singleton batches average to the GD direction") {
  const KanShape shape = oracle::make_shape(2, 3, 2);
  const KanParams params = init_params(shape, 5);
  const Dataset data = oracle::random_dataset(4, 2, 54);
  const double eta = 0.1;

  std::vector<double> avg_a(params.a().size(), 0.0), avg_c(params.c().size(), 0.0);
  for (std::size_t i = 0; i < data.rows; ++i) {
    const KanParams stepped = sgd_step(params, data, eta, {i});
    for (std::size_t r = 0; r < avg_a.size(); ++r) {
      avg_a[r] += (stepped.a()[r] - params.a()[r]) / data.rows;
    }
    for (std::size_t r = 0; r < avg_c.size(); ++r) {
      avg_c[r] += (stepped.c()[r] - params.c()[r]) / data.rows;
    }
  }
  const KanParams gd = gd_step(params, data, eta);
  for (std::size_t r = 0; r < avg_a.size(); ++r) {
    CHECK(std::abs(avg_a[r] - (gd.a()[r] - params.a()[r])) <= 1e-12);
  }
  for (std::size_t r = 0; r < avg_c.size(); ++r) {
    CHECK(std::abs(avg_c[r] - (gd.c()[r] - params.c()[r])) <= 1e-12);
  }
}

TEST_CASE("train with zero steps records only the init row") {
  const KanShape shape = oracle::make_shape(2, 4, 3);
  const KanParams params = init_params(shape, 6);
  const Dataset data = oracle::random_dataset(5, 2, 55);
  TrainConfig config;
  config.eta = 0.01;
  config.steps = 0;
  config.batch = 5;
  const TrainResult result = train(params, data, config, LazyRadii::unbounded());
  REQUIRE(result.trajectory.size() == 1);
  CHECK(result.trajectory[0].t == 0);
  CHECK(result.trajectory[0].drift_a == 0.0);
  CHECK(result.trajectory[0].drift_c == 0.0);
  CHECK(result.params.a() == params.a());
  CHECK(result.stopping_time_infinite());
}

TEST_CASE("full-batch SGD trajectory is bitwise identical to GD") {
  const KanShape shape = oracle::make_shape(2, 8, 3);
  const KanParams params = init_params(shape, 7);
  const Dataset data = oracle::random_dataset(6, 2, 56);
  TrainConfig gd_config;
  gd_config.eta = 0.05;
  gd_config.steps = 50;
  gd_config.batch = 6;
  gd_config.seed = 1;
  TrainConfig sgd_config = gd_config;
  sgd_config.seed = 999;  // must be irrelevant in full-batch mode
  const TrainResult a = train(params, data, gd_config, LazyRadii::unbounded());
  const TrainResult b = train(params, data, sgd_config, LazyRadii::unbounded());
  REQUIRE(a.trajectory.size() == b.trajectory.size());
  for (std::size_t t = 0; t < a.trajectory.size(); ++t) {
    CHECK(a.trajectory[t].loss == b.trajectory[t].loss);
  }
  CHECK(a.params.a() == b.params.a());
  CHECK(a.params.c() == b.params.c());
}

TEST_CASE("eta zero is a fixed point of training") {
  const KanShape shape = oracle::make_shape(2, 4, 2);
  const KanParams params = init_params(shape, 8);
  const Dataset data = oracle::random_dataset(4, 2, 57);
  TrainConfig config;
  config.eta = 0.0;
  config.steps = 25;
  config.batch = 2;
  const TrainResult result = train(params, data, config, LazyRadii::unbounded());
  CHECK(result.params.a() == params.a());
  CHECK(result.params.c() == params.c());
  CHECK(result.trajectory.back().loss == result.trajectory.front().loss);
}

TEST_CASE("loss and gradient are invariant under row permutation") {
  const KanShape shape = oracle::make_shape(2, 5, 3);
  const KanParams params = init_params(shape, 9);
  Dataset data = oracle::random_dataset(6, 2, 58);
  const double base_loss = loss(params, data);
  RegressionProblem base_problem(data, 6);
  ParamGrad base_grad;
  base_problem.residuals_and_gradient(params, &base_grad);

  // Rotate the rows.
  Dataset rotated = data;
  for (std::size_t i = 0; i < data.rows; ++i) {
    const std::size_t j = (i + 2) % data.rows;
    for (int c = 0; c < 2; ++c) rotated.x[i * 2 + c] = data.x[j * 2 + c];
    rotated.y[i] = data.y[j];
  }
  CHECK(std::abs(loss(params, rotated) - base_loss) <= 1e-12 * std::max(1.0, base_loss));
  RegressionProblem rot_problem(rotated, 6);
  ParamGrad rot_grad;
  rot_problem.residuals_and_gradient(params, &rot_grad);
  for (std::size_t r = 0; r < base_grad.a.size(); ++r) {
    CHECK(std::abs(base_grad.a[r] - rot_grad.a[r]) <= 1e-12);
  }
}

TEST_CASE("divergence is reported with the offending step") {
  const KanShape shape = oracle::make_shape(1, 4, 3);
  const KanParams params = init_params(shape, 10);
  const Dataset data = oracle::random_dataset(4, 1, 59);
  TrainConfig config;
  config.eta = 1e6;  // far outside the stable regime
  config.steps = 50;
  config.batch = 4;
  const TrainResult result = train(params, data, config, LazyRadii::unbounded());
  CHECK(result.diverged);
  CHECK(result.diverged_step >= 0);
}

TEST_CASE("compute_chi is zero for an unchanged or linear model") {
  const KanShape shape = oracle::make_shape(2, 4, 3);
  const KanParams params = init_params(shape, 11);
  const Dataset data = oracle::random_dataset(4, 2, 60);
  const auto s = residuals(params, data);
  const auto chi0 = compute_chi(params, params, data, s, s);
  CHECK(chi0.norm == 0.0);

  // Purely linear model in theta: constant bases + identity transform.
  const KanShape lin_shape =
      oracle::make_shape(1, 3, 1, BasisFamily::Monomial, TransformKind::Identity);
  const KanParams lin = init_params(lin_shape, 12);
  const Dataset lin_data = oracle::random_dataset(3, 1, 61);
  const KanParams lin_next = gd_step(lin, lin_data, 0.3);
  const auto chi_lin = compute_chi(lin, lin_next, lin_data, residuals(lin, lin_data),
                                   residuals(lin_next, lin_data));
  CHECK(chi_lin.norm <= 1e-12);
}

TEST_CASE("fit_contraction on frozen series") {
  std::vector<double> geometric;
  double v = 1.0;
  for (int t = 0; t < 20; ++t) {
    geometric.push_back(v);
    v *= 0.9;
  }
  const auto fit = fit_contraction(geometric, 0.1, 1.0);
  CHECK(fit.rho_hat == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(fit.theory_rho == doctest::Approx(1.0 - 0.05).epsilon(1e-12));

  const std::vector<double> constant(15, 2.0);
  CHECK(fit_contraction(constant, 0.1, 1.0).rho_hat == doctest::Approx(1.0));

  const std::vector<double> tiny(15, 1e-16);
  CHECK_THROWS_AS(fit_contraction(tiny, 0.1, 1.0), std::invalid_argument);
}

TEST_CASE("expectation harness degenerate cases") {
  const KanShape shape = oracle::make_shape(1, 8, 2);
  const Dataset data = oracle::random_dataset(6, 1, 62);
  TrainConfig config;
  config.eta = 0.01;
  config.steps = 20;
  config.batch = 6;  // full batch: zero variance across runs
  config.seed = 5;

  const auto single = expectation_harness(shape, data, config, 1, 77);
  const KanParams start = init_params(shape, 77);
  const TrainResult direct = train(start, data, config, LazyRadii::unbounded());
  REQUIRE(single.mean_loss.size() == direct.trajectory.size());
  for (std::size_t t = 0; t < single.mean_loss.size(); ++t) {
    CHECK(single.mean_loss[t] == direct.trajectory[t].loss);
  }

  const auto full = expectation_harness(shape, data, config, 10, 77);
  // All runs identical: variance is zero up to mean-accumulation rounding.
  for (double se : full.stderr_loss) CHECK(se <= 1e-14);
  CHECK(full.fraction_t_infinite == 1.0);
}

TEST_CASE("train records contraction and monotone GD descent in-regime") {
  const KanShape shape = oracle::make_shape(2, 64, 3);
  const KanParams params = init_params(shape, 13);
  Dataset data = oracle::random_dataset(8, 2, 63);
  for (std::size_t i = 0; i < data.rows; ++i) {
    data.y[i] = 0.4 * std::sin(data.x[i * 2] + data.x[i * 2 + 1]);
  }
  TrainConfig config;
  config.eta = 0.1 / 3.0;
  config.steps = 200;
  config.batch = 8;
  const TrainResult result = train(params, data, config, LazyRadii::unbounded());
  for (std::size_t t = 1; t < result.trajectory.size(); ++t) {
    CHECK(result.trajectory[t].loss <= result.trajectory[t - 1].loss);
    if (result.trajectory[t - 1].loss > 0.0) {
      CHECK(result.trajectory[t].contraction ==
            doctest::Approx(result.trajectory[t].loss / result.trajectory[t - 1].loss));
    }
  }
  CHECK(result.trajectory.back().drift_a > 0.0);
}
