#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "kan/model.hpp"
#include "kan/rng.hpp"
#include "oracles.hpp"

using namespace kan;

namespace {
KanShape constant_shape() {
  // Monomial with n_d = 1 gives b_1 == 1: the network is linear in c and
  // ignores both a and the input.
  return oracle::make_shape(1, 1, 1, BasisFamily::Monomial, TransformKind::Identity);
}
}  // namespace

TEST_CASE("init_params shape arithmetic and determinism") {
  const KanShape shape = oracle::make_shape(2, 4, 3);
  const KanParams p1 = init_params(shape, 7);
  CHECK(p1.a().size() == 24);
  CHECK(p1.c().size() == 12);
  const KanParams p2 = init_params(shape, 7);
  CHECK(p1.a() == p2.a());
  CHECK(p1.c() == p2.c());
  const KanParams p3 = init_params(shape, 8);
  CHECK(p1.a() != p3.a());
}

TEST_CASE("init_params gaussian moments") {
  const KanShape shape = oracle::make_shape(1, 10000, 2);
  const KanParams params = init_params(shape, 1);
  double sum = 0.0, sum_sq = 0.0;
  std::size_t count = 0;
  for (const auto* vec : {&params.a(), &params.c()}) {
    for (double v : *vec) {
      sum += v;
      sum_sq += v * v;
      ++count;
    }
  }
  const double mean = sum / count;
  const double var = sum_sq / count - mean * mean;
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("forward constant-basis network") {
  KanParams params(constant_shape());
  params.mutable_c()[0] = 2.5;
  params.mutable_a()[0] = -3.0;
  for (double x : {-5.0, 0.0, 0.3, 11.0}) {
    CHECK(forward(params, std::vector<double>{x}) == 2.5);
  }
}

TEST_CASE("forward zero outer layer") {
  const KanShape shape = oracle::make_shape(2, 5, 3);
  KanParams params = init_params(shape, 3);
  for (auto& v : params.mutable_c()) v = 0.0;
  CHECK(forward(params, std::vector<double>{0.4, -0.2}) == 0.0);
}

TEST_CASE("forward matches brute-force re-implementation") {
  const KanShape shape = oracle::make_shape(2, 3, 3);
  const KanParams params = init_params(shape, 19);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<double> x = {2.0 * rng.uniform01() - 1.0, 2.0 * rng.uniform01() - 1.0};
    const double fast = forward(params, x);
    const double slow = oracle::brute_force_forward(params, x);
    CHECK(std::abs(fast - slow) <= 1e-12 * std::max(1.0, std::abs(slow)));
  }
}

TEST_CASE("forward is homogeneous in c") {
  const KanShape shape = oracle::make_shape(2, 6, 3);
  KanParams params = init_params(shape, 21);
  const std::vector<double> x = {0.2, -0.7};
  const double f1 = forward(params, x);
  for (auto& v : params.mutable_c()) v *= 3.5;
  const double f2 = forward(params, x);
  CHECK(std::abs(f2 - 3.5 * f1) <= 1e-12 * std::max(1.0, std::abs(f1)));
}

TEST_CASE("doubling m with zeroed new units scales f by 1/sqrt(2)") {
  const KanShape shape = oracle::make_shape(2, 8, 3);
  const KanParams params = init_params(shape, 33);
  KanShape wide_shape = shape;
  wide_shape.m = 16;
  KanParams wide(wide_shape);
  auto& wa = wide.mutable_a();
  auto& wc = wide.mutable_c();
  std::copy(params.a().begin(), params.a().end(), wa.begin());
  std::copy(params.c().begin(), params.c().end(), wc.begin());
  const std::vector<double> x = {-0.4, 0.9};
  const double f1 = forward(params, x);
  const double f2 = forward(wide, x);
  CHECK(std::abs(f2 - f1 / std::sqrt(2.0)) <= 1e-14 * std::max(1.0, std::abs(f1)));
}

TEST_CASE("residuals definitions") {
  const KanShape shape = oracle::make_shape(1, 3, 2);
  const KanParams params = init_params(shape, 2);

  Dataset data;
  data.rows = 4;
  data.cols = 1;
  data.x = {-0.5, 0.0, 0.25, 0.75};
  data.y.resize(4);
  for (int i = 0; i < 4; ++i) data.y[i] = forward(params, data.row(i));
  // Perfect fit: zero residuals.
  for (double s : residuals(params, data)) CHECK(s == 0.0);

  // N = 1 with error 1:  s = (2 - 1)/sqrt(1).
  Dataset one;
  one.rows = 1;
  one.cols = 1;
  one.x = {0.3};
  one.y = {forward(params, one.row(0)) - 1.0};
  CHECK(residuals(params, one)[0] == doctest::Approx(1.0).epsilon(1e-12));

  // Constant error e on N = 4: ||s|| = |e|.
  const double e = -0.7;
  for (int i = 0; i < 4; ++i) data.y[i] = forward(params, data.row(i)) - e;
  double norm = 0.0;
  for (double s : residuals(params, data)) norm += s * s;
  CHECK(std::sqrt(norm) == doctest::Approx(std::abs(e)).epsilon(1e-12));
}

TEST_CASE("param_grad is zero in a when c is zero") {
  const KanShape shape = oracle::make_shape(2, 4, 3);
  KanParams params = init_params(shape, 4);
  for (auto& v : params.mutable_c()) v = 0.0;
  ForwardCache cache;
  forward(params, std::vector<double>{0.1, 0.2}, &cache);
  const ParamGrad grad = param_grad(params, cache);
  for (double v : grad.a) CHECK(v == 0.0);
}

TEST_CASE("param_grad constant-basis hand case") {
  KanParams params(constant_shape());
  params.mutable_c()[0] = 2.5;
  params.mutable_a()[0] = 0.7;
  ForwardCache cache;
  forward(params, std::vector<double>{0.4}, &cache);
  const ParamGrad grad = param_grad(params, cache);
  CHECK(grad.c[0] == 1.0);  // df/dc = b_1(phi(z)) = 1
  CHECK(grad.a[0] == 0.0);  // constant basis has zero derivative
}

TEST_CASE("param_grad matches finite differences") {
  Rng shape_rng(91);
  for (int trial = 0; trial < 12; ++trial) {
    const int n = 1 + static_cast<int>(shape_rng.index(3));
    const int m = 1 + static_cast<int>(shape_rng.index(6));
    const int n_d = 1 + static_cast<int>(shape_rng.index(4));
    const auto family = trial % 3 == 0   ? BasisFamily::Monomial
                        : trial % 3 == 1 ? BasisFamily::Chebyshev
                                         : BasisFamily::GaussianRbf;
    const auto transform = trial % 2 == 0 ? TransformKind::Tanh : TransformKind::Sigmoid;
    const KanShape shape = oracle::make_shape(n, m, n_d, family, transform);
    const KanParams params = init_params(shape, 1000 + trial);
    std::vector<double> x(n);
    for (auto& v : x) v = 2.0 * shape_rng.uniform01() - 1.0;

    ForwardCache cache;
    forward(params, x, &cache);
    const ParamGrad grad = param_grad(params, cache);
    std::vector<double> fd_a, fd_c;
    oracle::fd_param_grad(params, [&](const KanParams& p) { return forward(p, x); }, fd_a, fd_c);
    CHECK(oracle::block_rel_err(grad.a, fd_a) <= 1e-6);
    CHECK(oracle::block_rel_err(grad.c, fd_c) <= 1e-6);
  }
}

TEST_CASE("stale cache is rejected") {
  const KanShape shape = oracle::make_shape(1, 2, 2);
  KanParams params = init_params(shape, 5);
  ForwardCache cache;
  forward(params, std::vector<double>{0.1}, &cache);
  params.mutable_a()[0] += 0.5;  // bumps the version
  CHECK_THROWS_AS(param_grad(params, cache), std::logic_error);
}

TEST_CASE("input derivatives: zero outer layer, FD match, Hessian symmetry") {
  const KanShape shape = oracle::make_shape(3, 5, 3);
  KanParams zero_c = init_params(shape, 6);
  for (auto& v : zero_c.mutable_c()) v = 0.0;
  const auto id0 = input_derivatives(zero_c, std::vector<double>{0.1, 0.2, -0.3}, 2);
  for (double v : id0.grad) CHECK(v == 0.0);
  for (double v : id0.hess) CHECK(v == 0.0);

  const KanParams params = init_params(shape, 61);
  Rng rng(7);
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<double> x(3);
    for (auto& v : x) v = 2.0 * rng.uniform01() - 1.0;
    const auto id = input_derivatives(params, x, 2);

    // Gradient against central differences of the forward pass.
    std::vector<double> fd_grad(3);
    for (int i = 0; i < 3; ++i) {
      fd_grad[i] = oracle::central_diff(
          [&](double t) {
            std::vector<double> xx = x;
            xx[i] = t;
            return forward(params, xx);
          },
          x[i]);
    }
    CHECK(oracle::block_rel_err(id.grad, fd_grad) <= 1e-5);

    // Hessian row i against central differences of the analytic gradient.
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        const double fd = oracle::central_diff(
            [&](double t) {
              std::vector<double> xx = x;
              xx[j] = t;
              return input_derivatives(params, xx, 1).grad[i];
            },
            x[j]);
        CHECK(std::abs(id.hess[i * 3 + j] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
        CHECK(std::abs(id.hess[i * 3 + j] - id.hess[j * 3 + i]) <= 1e-12);
      }
    }
  }
}

TEST_CASE("operator parameter gradient") {
  const KanShape shape = oracle::make_shape(2, 3, 3);
  const KanParams params = init_params(shape, 77);
  const std::vector<double> x = {0.3, -0.4};

  // D[f] = df/dx1 + f  (h = g = 0, l = -1).
  OperatorCoeffs coeffs;
  coeffs.h.assign(4, 0.0);
  coeffs.g.assign(2, 0.0);
  coeffs.l = -1.0;

  const OperatorEval eval = param_grad_of_operator(params, x.data(), coeffs);
  const double direct = input_derivatives(params, x, 1).grad[0] + forward(params, x);
  CHECK(eval.value == doctest::Approx(direct).epsilon(1e-12));

  std::vector<double> fd_a, fd_c;
  oracle::fd_param_grad(
      params, [&](const KanParams& p) { return operator_value(p, x.data(), coeffs); }, fd_a, fd_c);
  CHECK(oracle::block_rel_err(eval.grad.a, fd_a) <= 1e-5);
  CHECK(oracle::block_rel_err(eval.grad.c, fd_c) <= 1e-5);

  // c = 0 kills the a-block (the operator is linear and f is linear in c).
  KanParams zero_c = params;
  for (auto& v : zero_c.mutable_c()) v = 0.0;
  const OperatorEval eval0 = param_grad_of_operator(zero_c, x.data(), coeffs);
  for (double v : eval0.grad.a) CHECK(v == 0.0);
}

TEST_CASE("operator parameter gradient with full second-order coefficients") {
  const KanShape shape = oracle::make_shape(3, 2, 3);
  const KanParams params = init_params(shape, 78);
  const std::vector<double> x = {0.1, -0.6, 0.5};
  OperatorCoeffs coeffs;
  coeffs.h = {0.0, 0.0, 0.0, 0.0, 0.8, -0.3, 0.0, -0.3, 1.1};
  coeffs.g = {0.0, 0.4, -1.2};
  coeffs.l = 0.6;
  const OperatorEval eval = param_grad_of_operator(params, x.data(), coeffs);
  std::vector<double> fd_a, fd_c;
  oracle::fd_param_grad(
      params, [&](const KanParams& p) { return operator_value(p, x.data(), coeffs); }, fd_a, fd_c);
  CHECK(oracle::block_rel_err(eval.grad.a, fd_a) <= 1e-5);
  CHECK(oracle::block_rel_err(eval.grad.c, fd_c) <= 1e-5);
}

TEST_CASE("checkpoint round trip") {
  const KanShape shape = oracle::make_shape(2, 4, 3);
  const KanParams params = init_params(shape, 91);
  std::stringstream buffer;
  save_params(params, buffer);
  const KanParams back = load_params(shape, buffer);
  CHECK(back.a() == params.a());
  CHECK(back.c() == params.c());
}

TEST_CASE("dataset validation") {
  Dataset data;
  data.rows = 2;
  data.cols = 2;
  data.x = {0.0, 1.0, 2.0, 3.0};
  data.y = {1.0};
  CHECK_THROWS_AS(data.validate(), std::invalid_argument);
  data.y = {1.0, std::nan("")};
  CHECK_THROWS_AS(data.validate(), std::invalid_argument);
}
