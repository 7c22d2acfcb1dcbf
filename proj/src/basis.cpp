#include "kan/basis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace kan {

BasisSpec BasisSpec::chebyshev(int count) {
  BasisSpec s;
  s.family = BasisFamily::Chebyshev;
  s.count = count;
  s.validate();
  return s;
}

BasisSpec BasisSpec::monomial(int count) {
  BasisSpec s;
  s.family = BasisFamily::Monomial;
  s.count = count;
  s.validate();
  return s;
}

BasisSpec BasisSpec::gaussian_rbf(int count, std::vector<double> centers, double width) {
  BasisSpec s;
  s.family = BasisFamily::GaussianRbf;
  s.count = count;
  s.rbf_centers = std::move(centers);
  s.rbf_width = width;
  s.validate();
  return s;
}

BasisSpec BasisSpec::gaussian_rbf(int count, double width) {
  std::vector<double> centers(count);
  for (int k = 0; k < count; ++k) {
    centers[k] = count == 1 ? 0.0 : -1.0 + 2.0 * k / (count - 1);
  }
  return gaussian_rbf(count, std::move(centers), width);
}

BasisSpec BasisSpec::bspline(int count, std::vector<double> knots, int order) {
  BasisSpec s;
  s.family = BasisFamily::BSpline;
  s.count = count;
  s.knots = std::move(knots);
  s.spline_order = order;
  s.validate();
  return s;
}

BasisSpec BasisSpec::bspline_uniform(int count, int order, double lo, double hi) {
  if (count < order) {
    throw std::invalid_argument("bspline_uniform: count must be >= order");
  }
  // Clamped: `order` copies of each endpoint, uniform interior knots.
  std::vector<double> knots;
  const int interior = count - order;
  for (int i = 0; i < order; ++i) knots.push_back(lo);
  for (int i = 1; i <= interior; ++i) {
    knots.push_back(lo + (hi - lo) * i / (interior + 1));
  }
  for (int i = 0; i < order; ++i) knots.push_back(hi);
  return bspline(count, std::move(knots), order);
}

void BasisSpec::validate() const {
  if (count < 1) throw std::invalid_argument("BasisSpec: count must be >= 1");
  switch (family) {
    case BasisFamily::Chebyshev:
    case BasisFamily::Monomial:
      break;
    case BasisFamily::GaussianRbf:
      if (rbf_width <= 0.0) throw std::invalid_argument("BasisSpec: RBF width must be > 0");
      if (static_cast<int>(rbf_centers.size()) != count) {
        throw std::invalid_argument("BasisSpec: RBF needs one center per basis function");
      }
      break;
    case BasisFamily::BSpline: {
#ifdef KAN_DISABLE_BSPLINE
      throw std::invalid_argument("BasisSpec: B-spline family disabled in this build");
#endif
      if (spline_order < 1) throw std::invalid_argument("BasisSpec: spline order must be >= 1");
      if (static_cast<int>(knots.size()) != count + spline_order) {
        throw std::invalid_argument("BasisSpec: need knots.size() == count + order");
      }
      if (!std::is_sorted(knots.begin(), knots.end())) {
        throw std::invalid_argument("BasisSpec: knots must be nondecreasing");
      }
      if (knots.front() == knots.back()) {
        throw std::invalid_argument("BasisSpec: degenerate knot span");
      }
      break;
    }
  }
}

namespace {

// Chebyshev T_0..T_{count-1} with derivative recurrences:
//   T_{k+1}^{(r)} = 2x T_k^{(r)} + 2r T_k^{(r-1)} - T_{k-1}^{(r)}
void chebyshev_all(int count, double x, int max_order, double* out) {
  for (int r = 0; r <= max_order; ++r) {
    out[r * count + 0] = (r == 0) ? 1.0 : 0.0;
    if (count > 1) {
      out[r * count + 1] = (r == 0) ? x : (r == 1 ? 1.0 : 0.0);
    }
  }
  for (int k = 1; k + 1 < count; ++k) {
    for (int r = 0; r <= max_order; ++r) {
      double v = 2.0 * x * out[r * count + k] - out[r * count + k - 1];
      if (r > 0) v += 2.0 * r * out[(r - 1) * count + k];
      out[r * count + k + 1] = v;
    }
  }
}

void monomial_all(int count, double x, int max_order, double* out) {
  for (int k = 0; k < count; ++k) {
    // b_{k+1}(x) = x^k
    double coeff = 1.0;
    for (int r = 0; r <= max_order; ++r) {
      const int e = k - r;
      if (e < 0) {
        out[r * count + k] = 0.0;
      } else {
        out[r * count + k] = coeff * std::pow(x, e);
      }
      coeff *= static_cast<double>(k - r);
    }
  }
}

void rbf_all(const BasisSpec& spec, double x, int max_order, double* out) {
  const int count = spec.count;
  const double w = spec.rbf_width;
  for (int k = 0; k < count; ++k) {
    const double t = (x - spec.rbf_centers[k]) / w;
    const double e = std::exp(-0.5 * t * t);
    out[k] = e;
    if (max_order >= 1) out[count + k] = -t / w * e;
    if (max_order >= 2) out[2 * count + k] = (t * t - 1.0) / (w * w) * e;
    if (max_order >= 3) out[3 * count + k] = t * (3.0 - t * t) / (w * w * w) * e;
  }
}

// Cox-de Boor with the right-limit convention: order-1 splines are indicators
// of [t_i, t_{i+1}), so values and derivatives at a knot are right limits.
void bspline_all(const BasisSpec& spec, double x, int max_order, double* out) {
  const int count = spec.count;
  const int order = spec.spline_order;
  const auto& t = spec.knots;
  const int nb1 = count + order - 1;  // number of order-1 splines

  // lvl[r][i] = d^r B_{i,ord} for the current order `ord`.
  std::vector<std::vector<double>> lvl(max_order + 1, std::vector<double>(nb1, 0.0));
  for (int i = 0; i < nb1; ++i) {
    lvl[0][i] = (t[i] <= x && x < t[i + 1]) ? 1.0 : 0.0;
  }

  std::vector<std::vector<double>> next(max_order + 1);
  for (int ord = 2; ord <= order; ++ord) {
    const int nb = count + order - ord;
    for (int r = 0; r <= max_order; ++r) next[r].assign(nb, 0.0);
    for (int i = 0; i < nb; ++i) {
      const double d1 = t[i + ord - 1] - t[i];
      const double d2 = t[i + ord] - t[i + 1];
      const double w1 = d1 > 0.0 ? (x - t[i]) / d1 : 0.0;
      const double w2 = d2 > 0.0 ? (t[i + ord] - x) / d2 : 0.0;
      next[0][i] = w1 * lvl[0][i] + w2 * lvl[0][i + 1];
      for (int r = 1; r <= max_order; ++r) {
        const double a = d1 > 0.0 ? lvl[r - 1][i] / d1 : 0.0;
        const double b = d2 > 0.0 ? lvl[r - 1][i + 1] / d2 : 0.0;
        next[r][i] = (ord - 1) * (a - b);
      }
    }
    lvl.swap(next);
  }
  for (int r = 0; r <= max_order; ++r) {
    for (int k = 0; k < count; ++k) out[r * count + k] = lvl[r][k];
  }
}

void check_eval_args(const BasisSpec& spec, double x, int order) {
  if (!std::isfinite(x)) throw std::invalid_argument("basis_eval: non-finite input");
  if (order < 0 || order > kMaxDerivativeOrder) {
    throw std::invalid_argument("basis_eval: derivative order must be in [0, 3]");
  }
  spec.validate();
}

}  // namespace

void basis_eval_all(const BasisSpec& spec, double x, int max_order, double* out) {
  switch (spec.family) {
    case BasisFamily::Chebyshev:
      chebyshev_all(spec.count, x, max_order, out);
      return;
    case BasisFamily::Monomial:
      monomial_all(spec.count, x, max_order, out);
      return;
    case BasisFamily::GaussianRbf:
      rbf_all(spec, x, max_order, out);
      return;
    case BasisFamily::BSpline:
      bspline_all(spec, x, max_order, out);
      return;
  }
  throw std::logic_error("basis_eval_all: unknown family");
}

double basis_eval(const BasisSpec& spec, int k, double x, int order) {
  check_eval_args(spec, x, order);
  if (k < 1 || k > spec.count) throw std::invalid_argument("basis_eval: index out of range");
  std::vector<double> buf((order + 1) * spec.count);
  basis_eval_all(spec, x, order, buf.data());
  return buf[order * spec.count + (k - 1)];
}

void transform_eval_all(const TransformSpec& spec, double z, int max_order, double* out) {
  switch (spec.kind) {
    case TransformKind::Tanh: {
      const double y = std::tanh(z);
      const double s = 1.0 - y * y;  // sech^2
      out[0] = y;
      if (max_order >= 1) out[1] = s;
      if (max_order >= 2) out[2] = -2.0 * y * s;
      if (max_order >= 3) out[3] = s * (6.0 * y * y - 2.0);
      return;
    }
    case TransformKind::Sigmoid: {
      const double y = 1.0 / (1.0 + std::exp(-z));
      const double d1 = y * (1.0 - y);
      out[0] = y;
      if (max_order >= 1) out[1] = d1;
      if (max_order >= 2) out[2] = d1 * (1.0 - 2.0 * y);
      if (max_order >= 3) out[3] = d1 * (1.0 - 2.0 * y) * (1.0 - 2.0 * y) - 2.0 * d1 * d1;
      return;
    }
    case TransformKind::Identity: {
      out[0] = z;
      if (max_order >= 1) out[1] = 1.0;
      if (max_order >= 2) out[2] = 0.0;
      if (max_order >= 3) out[3] = 0.0;
      return;
    }
  }
  throw std::logic_error("transform_eval_all: unknown kind");
}

double transform_eval(const TransformSpec& spec, double z, int order) {
  if (!std::isfinite(z)) throw std::invalid_argument("transform_eval: non-finite input");
  if (order < 0 || order > kMaxDerivativeOrder) {
    throw std::invalid_argument("transform_eval: derivative order must be in [0, 3]");
  }
  double buf[kMaxDerivativeOrder + 1];
  transform_eval_all(spec, z, order, buf);
  return buf[order];
}

BoundednessReport validate_boundedness(const BasisSpec& basis, const TransformSpec& transform) {
  basis.validate();
  BoundednessReport report;
  const bool basis_bounded_everywhere =
      basis.family == BasisFamily::GaussianRbf || basis.family == BasisFamily::BSpline;
  if (!transform.bounded() && !basis_bounded_everywhere) {
    report.ok = false;
    report.warnings.push_back(
        "unbounded image: " + to_string(basis.family) +
        " basis with the identity transform grows without bound; the convergence "
        "theory assumes basis derivatives bounded on the transform image");
  }
  return report;
}

std::string to_string(BasisFamily family) {
  switch (family) {
    case BasisFamily::Chebyshev: return "chebyshev";
    case BasisFamily::Monomial: return "monomial";
    case BasisFamily::GaussianRbf: return "gaussian_rbf";
    case BasisFamily::BSpline: return "bspline";
  }
  return "?";
}

std::string to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::Tanh: return "tanh";
    case TransformKind::Sigmoid: return "sigmoid";
    case TransformKind::Identity: return "identity";
  }
  return "?";
}

}  // namespace kan
