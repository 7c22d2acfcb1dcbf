#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "kan/basis.hpp"

namespace kan {

/// Architecture of the two-layer network
///   f(x; a, c) = m^{-1/2} sum_q sum_k c_{q,k} b_k(phi(z_q)),
///   z_q = sum_p sum_k1 a_{p,q,k1} b_{k1}(x_p),
/// with one basis count n_d shared by both layers.
struct KanShape {
  int n = 1;    // input dimension
  int m = 1;    // hidden width
  int n_d = 1;  // basis count, both layers
  BasisSpec inner_basis;
  BasisSpec outer_basis;
  TransformSpec transform;

  void validate() const;
  std::size_t a_size() const { return static_cast<std::size_t>(m) * n * n_d; }
  std::size_t c_size() const { return static_cast<std::size_t>(m) * n_d; }
  std::size_t param_count() const { return a_size() + c_size(); }
  bool same_architecture(const KanShape& other) const;
};

/// Trainable tensors a (m x n x n_d, entry a_{p,q,k} at [q][p][k]) and
/// c (m x n_d, entry c_{q,k} at [q][k]), flattened row-major per unit q.
/// Mutation goes through mutable_a()/mutable_c(), which advance a monotone
/// version tag used to invalidate ForwardCache instances.
class KanParams {
 public:
  KanParams() = default;
  explicit KanParams(KanShape shape);

  const KanShape& shape() const { return shape_; }
  const std::vector<double>& a() const { return a_; }
  const std::vector<double>& c() const { return c_; }
  std::vector<double>& mutable_a() { ++version_; return a_; }
  std::vector<double>& mutable_c() { ++version_; return c_; }

  double a_at(int q, int p, int k) const {
    return a_[(static_cast<std::size_t>(q) * shape_.n + p) * shape_.n_d + k];
  }
  double c_at(int q, int k) const { return c_[static_cast<std::size_t>(q) * shape_.n_d + k]; }

  std::uint64_t uid() const { return uid_; }
  std::uint64_t version() const { return version_; }

  /// All entries finite?
  bool finite() const;

 private:
  KanShape shape_;
  std::vector<double> a_;
  std::vector<double> c_;
  std::uint64_t uid_ = 0;
  std::uint64_t version_ = 0;
};

/// Per-input memo of the forward pass: pre-activations z_q, transform
/// derivatives at z_q, inner basis values at x, and the per-unit outer sums.
/// Valid only for the (params, x) pair that produced it; checked by tag.
struct ForwardCache {
  std::uint64_t params_uid = 0;
  std::uint64_t params_version = 0;
  std::vector<double> x;
  std::vector<double> z;                   // m
  std::vector<double> phi0, phi1, phi2;    // phi(z_q) and derivatives
  std::vector<double> inner_vals;          // n * n_d, b^in_k(x_p) at [p][k]
  std::vector<double> unit_sums;           // m, sum_k c_{q,k} b_k(phi(z_q))
  double value = 0.0;

  bool matches(const KanParams& params) const {
    return params_uid == params.uid() && params_version == params.version();
  }
};

struct Dataset {
  std::vector<double> x;  // N x n, row-major
  std::vector<double> y;  // N
  std::size_t rows = 0;
  int cols = 0;

  void validate() const;
  const double* row(std::size_t i) const { return x.data() + i * cols; }
};

struct ParamGrad {
  std::vector<double> a;  // same layout as KanParams::a
  std::vector<double> c;
};

struct InputDerivs {
  std::vector<double> grad;  // n
  std::vector<double> hess;  // n x n row-major, empty when max_order == 1
};

/// Coefficients of the linear second-order operator
///   D[u] = du/dx_1 - sum_{i,j>=2} h_ij d2u/dx_i dx_j
///          - sum_{i>=2} g_i du/dx_i - l u
/// evaluated at one point. h is n x n row-major; only entries with both
/// indices >= 2 (1-based) participate and h must be symmetric in those.
struct OperatorCoeffs {
  std::vector<double> h;  // n x n, row-major
  std::vector<double> g;  // n
  double l = 0.0;
};

struct OperatorEval {
  double value = 0.0;  // D[f](x)
  ParamGrad grad;
};

/// NTK initialization: every entry of a and c i.i.d. standard normal from the
/// seeded stream (a first in storage order, then c). Identical (shape, seed)
/// give bit-identical parameters.
KanParams init_params(const KanShape& shape, std::uint64_t seed);

double forward(const KanParams& params, const double* x, ForwardCache* cache = nullptr);
double forward(const KanParams& params, const std::vector<double>& x, ForwardCache* cache = nullptr);

/// s_i = (f(x_i) - y_i) / sqrt(N); the loss is sum_i s_i^2.
std::vector<double> residuals(const KanParams& params, const Dataset& data);

/// Exact parameter gradient of f at the cache's input:
///   df/da_{p,q,k} = m^{-1/2} [sum_k2 c_{q,k2} (b'_{k2} o phi . phi')(z_q)] b_k(x_p)
///   df/dc_{q,k}   = m^{-1/2} b_k(phi(z_q))
/// Throws std::logic_error if the cache does not match params.
ParamGrad param_grad(const KanParams& params, const ForwardCache& cache);

/// Exact df/dx_i and (for max_order 2) d2f/dx_i dx_j by the chain rule
/// through z_q, phi, b_k.
InputDerivs input_derivatives(const KanParams& params, const double* x, int max_order);
InputDerivs input_derivatives(const KanParams& params, const std::vector<double>& x, int max_order);

/// D[f](x) and its exact parameter gradient. Needs basis and transform
/// derivatives up to order 3.
OperatorEval param_grad_of_operator(const KanParams& params, const double* x,
                                    const OperatorCoeffs& coeffs);

/// D[f](x) alone, one pass, no gradient work.
double operator_value(const KanParams& params, const double* x, const OperatorCoeffs& coeffs);

/// D applied to explicitly supplied value/gradient/Hessian data at one point.
double apply_operator_coeffs(int n, const OperatorCoeffs& coeffs, double value,
                             const double* grad, const double* hess);

/// theta -= eta * grad, advancing the version tag once.
void axpy_params(KanParams& params, double eta, const ParamGrad& grad);

/// Checkpoint format: little-endian doubles, all of a row-major then all of
/// c row-major, preceded by a small text header with the shape.
void save_params(const KanParams& params, std::ostream& out);
KanParams load_params(const KanShape& shape, std::istream& in);

namespace detail {
/// Accumulates weight * df/dtheta(x) into (ga, gc) without materializing the
/// per-sample gradient. Shared by the trainers and the D-matrix assembly.
void accumulate_weighted_grad(const KanParams& params, const double* x, double weight,
                              double* ga, double* gc);
/// Same for weight * d(D[f])/dtheta; also returns D[f](x).
double accumulate_weighted_operator_grad(const KanParams& params, const double* x,
                                         const OperatorCoeffs& coeffs, double weight,
                                         double* ga, double* gc);
}  // namespace detail

}  // namespace kan
