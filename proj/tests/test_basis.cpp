#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "kan/basis.hpp"
#include "kan/rng.hpp"
#include "oracles.hpp"

using namespace kan;

TEST_CASE("chebyshev values") {
  const BasisSpec spec = BasisSpec::chebyshev(4);
  CHECK(basis_eval(spec, 1, 0.7, 0) == 1.0);
  // T_3(x) = 4x^3 - 3x, hand-evaluated at 0.5: 0.5 - 1.5.
  CHECK(basis_eval(spec, 4, 0.5, 0) == doctest::Approx(-1.0).epsilon(1e-14));
  // Polynomial extension outside [-1, 1]: T_2(2) = 2*4 - 1.
  CHECK(basis_eval(spec, 3, 2.0, 0) == doctest::Approx(7.0).epsilon(1e-14));
}

TEST_CASE("chebyshev three-term recurrence at random points") {
  const BasisSpec spec = BasisSpec::chebyshev(8);
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const double x = 4.0 * rng.uniform01() - 2.0;
    for (int k = 2; k < 8; ++k) {
      const double lhs = basis_eval(spec, k + 1, x, 0);
      const double rhs = 2.0 * x * basis_eval(spec, k, x, 0) - basis_eval(spec, k - 1, x, 0);
      CHECK(std::abs(lhs - rhs) <= 1e-12 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST_CASE("derivatives match central finite differences for every family") {
  std::vector<BasisSpec> specs = {
      BasisSpec::chebyshev(5),
      BasisSpec::monomial(5),
      BasisSpec::gaussian_rbf(5, 0.8),
      BasisSpec::bspline_uniform(6, 4, -2.5, 2.5),
  };
  Rng rng(17);
  for (const auto& spec : specs) {
    for (int pt = 0; pt < 64; ++pt) {
      double x = 4.0 * rng.uniform01() - 2.0;
      if (spec.family == BasisFamily::BSpline) {
        // Stay away from knots: curvature jumps there by construction.
        bool near = true;
        while (near) {
          near = false;
          for (double t : spec.knots) {
            if (std::abs(x - t) < 1e-3) near = true;
          }
          if (near) x = 4.0 * rng.uniform01() - 2.0;
        }
      }
      for (int k = 1; k <= spec.count; ++k) {
        for (int order = 1; order <= 3; ++order) {
          const double analytic = basis_eval(spec, k, x, order);
          const double fd = oracle::central_diff(
              [&](double t) { return basis_eval(spec, k, t, order - 1); }, x);
          CHECK(std::abs(analytic - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
        }
      }
    }
  }
}

TEST_CASE("gaussian rbf closed form") {
  const BasisSpec spec = BasisSpec::gaussian_rbf(3, {-1.0, 0.0, 1.0}, 0.5);
  const double x = 0.3;
  const double expect = std::exp(-0.5 * (0.3 / 0.5) * (0.3 / 0.5));
  CHECK(basis_eval(spec, 2, x, 0) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("transform values and derivatives at zero") {
  TransformSpec tanh_spec{TransformKind::Tanh};
  TransformSpec sigm_spec{TransformKind::Sigmoid};
  TransformSpec id_spec{TransformKind::Identity};
  CHECK(transform_eval(tanh_spec, 0.0, 0) == 0.0);
  CHECK(transform_eval(tanh_spec, 0.0, 1) == 1.0);
  CHECK(transform_eval(sigm_spec, 0.0, 0) == 0.5);
  CHECK(transform_eval(id_spec, 1.7, 0) == 1.7);
  CHECK(transform_eval(id_spec, 1.7, 2) == 0.0);
  CHECK(tanh_spec.bounded());
  CHECK(!id_spec.bounded());
}

TEST_CASE("transform derivatives match finite differences") {
  Rng rng(23);
  for (TransformKind kind : {TransformKind::Tanh, TransformKind::Sigmoid}) {
    const TransformSpec spec{kind};
    for (int pt = 0; pt < 64; ++pt) {
      const double z = 8.0 * rng.uniform01() - 4.0;
      for (int order = 1; order <= 3; ++order) {
        const double analytic = transform_eval(spec, z, order);
        const double fd = oracle::central_diff(
            [&](double t) { return transform_eval(spec, t, order - 1); }, z);
        CHECK(std::abs(analytic - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("transform derivative bounds on a dense grid") {
  const double tanh_bounds[4] = {1.0, 1.0, 2.0, 16.0};
  const double sigm_bounds[4] = {1.0, 0.25, 0.1, 0.13};
  for (int i = 0; i < 10000; ++i) {
    const double z = -8.0 + 16.0 * i / 9999.0;
    for (int order = 0; order <= 3; ++order) {
      CHECK(std::abs(transform_eval({TransformKind::Tanh}, z, order)) <= tanh_bounds[order]);
      CHECK(std::abs(transform_eval({TransformKind::Sigmoid}, z, order)) <= sigm_bounds[order]);
    }
  }
}

TEST_CASE("boundedness validation") {
  const TransformSpec tanh_spec{TransformKind::Tanh};
  const TransformSpec id_spec{TransformKind::Identity};
  CHECK(validate_boundedness(BasisSpec::chebyshev(4), tanh_spec).ok);
  const auto bad = validate_boundedness(BasisSpec::monomial(4), id_spec);
  CHECK(!bad.ok);
  REQUIRE(bad.warnings.size() == 1);
  CHECK(bad.warnings[0].find("unbounded image") != std::string::npos);
  CHECK(validate_boundedness(BasisSpec::gaussian_rbf(4, 1.0), id_spec).ok);
}

TEST_CASE("evaluation argument errors") {
  const BasisSpec spec = BasisSpec::chebyshev(3);
  CHECK_THROWS_AS(basis_eval(spec, 0, 0.5, 0), std::invalid_argument);
  CHECK_THROWS_AS(basis_eval(spec, 4, 0.5, 0), std::invalid_argument);
  CHECK_THROWS_AS(basis_eval(spec, 1, std::nan(""), 0), std::invalid_argument);
  CHECK_THROWS_AS(basis_eval(spec, 1, 0.5, 4), std::invalid_argument);
  CHECK_THROWS_AS(transform_eval({TransformKind::Tanh}, 0.5, 4), std::invalid_argument);

  BasisSpec bad_rbf;
  bad_rbf.family = BasisFamily::GaussianRbf;
  bad_rbf.count = 2;
  bad_rbf.rbf_width = 0.0;
  bad_rbf.rbf_centers = {0.0, 1.0};
  CHECK_THROWS_AS(bad_rbf.validate(), std::invalid_argument);

  CHECK_THROWS_AS(BasisSpec::bspline(3, {0.0, 1.0, 2.0}, 2), std::invalid_argument);
  CHECK_THROWS_AS(BasisSpec::bspline(2, {0.0, 2.0, 1.0, 3.0}, 2), std::invalid_argument);
}

TEST_CASE("bspline partition of unity and right-limit convention") {
  const BasisSpec spec = BasisSpec::bspline_uniform(7, 4, -1.0, 1.0);
  Rng rng(31);
  for (int pt = 0; pt < 100; ++pt) {
    const double x = -1.0 + 2.0 * rng.uniform01();
    double sum = 0.0;
    for (int k = 1; k <= spec.count; ++k) sum += basis_eval(spec, k, x, 0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Compact support: zero well outside the knot span.
  CHECK(basis_eval(spec, 3, 5.0, 0) == 0.0);
  // Right-limit at an interior knot: value agrees with the limit from above.
  const double knot = spec.knots[5];
  for (int k = 1; k <= spec.count; ++k) {
    const double at = basis_eval(spec, k, knot, 2);
    const double right = basis_eval(spec, k, knot + 1e-9, 2);
    CHECK(std::abs(at - right) <= 1e-5 * std::max(1.0, std::abs(right)));
  }
}
