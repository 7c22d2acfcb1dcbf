#pragma once

#include <string>
#include <vector>

namespace kan {

enum class BasisFamily { Chebyshev, Monomial, GaussianRbf, BSpline };

/// Descriptor of a basis family {b_1, ..., b_count}. Chebyshev and Monomial
/// extend polynomially outside [-1, 1]; the RBF family is globally bounded;
/// B-splines are compactly supported on their knot span.
struct BasisSpec {
  BasisFamily family = BasisFamily::Chebyshev;
  int count = 1;

  // GaussianRbf: b_k(x) = exp(-(x - centers[k-1])^2 / (2 width^2))
  std::vector<double> rbf_centers;
  double rbf_width = 1.0;

  // BSpline: Cox-de Boor basis of the given order (degree = order - 1) on a
  // nondecreasing knot vector with knots.size() == count + spline_order.
  std::vector<double> knots;
  int spline_order = 4;

  static BasisSpec chebyshev(int count);
  static BasisSpec monomial(int count);
  static BasisSpec gaussian_rbf(int count, std::vector<double> centers, double width);
  /// Equally spaced centers on [-1, 1].
  static BasisSpec gaussian_rbf(int count, double width = 1.0);
  static BasisSpec bspline(int count, std::vector<double> knots, int order);
  /// Clamped uniform knots spanning [lo, hi].
  static BasisSpec bspline_uniform(int count, int order, double lo = -1.0, double hi = 1.0);

  /// Throws std::invalid_argument on malformed parameters.
  void validate() const;
};

enum class TransformKind { Tanh, Sigmoid, Identity };

struct TransformSpec {
  TransformKind kind = TransformKind::Tanh;

  /// Tanh and Sigmoid are smooth with uniformly bounded derivatives of orders
  /// 0-3; Identity is unbounded.
  bool bounded() const { return kind != TransformKind::Identity; }
};

inline constexpr int kMaxDerivativeOrder = 3;

/// b_k^{(order)}(x) for k in [1, count], order in [0, 3]. Throws on an index
/// out of range, a non-finite input, or an unsupported order.
double basis_eval(const BasisSpec& spec, int k, double x, int order);

/// Evaluates every basis function at once: out[r * count + (k-1)] receives
/// b_k^{(r)}(x) for r in [0, max_order]. This is the hot path; out must hold
/// (max_order + 1) * count doubles.
void basis_eval_all(const BasisSpec& spec, double x, int max_order, double* out);

/// phi^{(order)}(z) via closed-form derivative expressions
/// (e.g. tanh' = 1 - tanh^2).
double transform_eval(const TransformSpec& spec, double z, int order);

/// phi(z) and derivatives up to max_order in one call; out holds
/// max_order + 1 doubles.
void transform_eval_all(const TransformSpec& spec, double z, int max_order, double* out);

/// Advisory check of the boundedness assumption behind the convergence
/// theory: basis derivatives of orders 0-2 must stay bounded on the image of
/// the transform. Never an error; out-of-regime combinations only warn.
struct BoundednessReport {
  bool ok = true;
  std::vector<std::string> warnings;
};

BoundednessReport validate_boundedness(const BasisSpec& basis, const TransformSpec& transform);

std::string to_string(BasisFamily family);
std::string to_string(TransformKind kind);

}  // namespace kan
