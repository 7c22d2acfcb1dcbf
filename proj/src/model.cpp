#include "kan/model.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "kan/rng.hpp"

namespace kan {

namespace {
std::atomic<std::uint64_t> g_next_uid{1};

void check_finite_input(const double* x, int n) {
  for (int p = 0; p < n; ++p) {
    if (!std::isfinite(x[p])) throw std::invalid_argument("non-finite input coordinate");
  }
}
}  // namespace

void KanShape::validate() const {
  if (n < 1 || m < 1 || n_d < 1) {
    throw std::invalid_argument("KanShape: n, m, n_d must all be >= 1");
  }
  if (inner_basis.count != n_d || outer_basis.count != n_d) {
    throw std::invalid_argument("KanShape: both basis counts must equal n_d");
  }
  inner_basis.validate();
  outer_basis.validate();
}

bool KanShape::same_architecture(const KanShape& other) const {
  return n == other.n && m == other.m && n_d == other.n_d;
}

KanParams::KanParams(KanShape shape) : shape_(std::move(shape)) {
  shape_.validate();
  a_.assign(shape_.a_size(), 0.0);
  c_.assign(shape_.c_size(), 0.0);
  uid_ = g_next_uid.fetch_add(1, std::memory_order_relaxed);
}

bool KanParams::finite() const {
  for (double v : a_) {
    if (!std::isfinite(v)) return false;
  }
  for (double v : c_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Dataset::validate() const {
  if (rows < 1) throw std::invalid_argument("Dataset: need at least one sample");
  if (cols < 1) throw std::invalid_argument("Dataset: need at least one feature");
  if (x.size() != rows * static_cast<std::size_t>(cols) || y.size() != rows) {
    throw std::invalid_argument("Dataset: shape mismatch between X and y");
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite feature");
  }
  for (double v : y) {
    if (!std::isfinite(v)) throw std::invalid_argument("Dataset: non-finite target");
  }
}

KanParams init_params(const KanShape& shape, std::uint64_t seed) {
  KanParams params(shape);
  Rng rng(seed);
  for (double& v : params.mutable_a()) v = rng.gaussian();
  for (double& v : params.mutable_c()) v = rng.gaussian();
  return params;
}

double forward(const KanParams& params, const double* x, ForwardCache* cache) {
  const KanShape& shape = params.shape();
  const int n = shape.n, m = shape.m, n_d = shape.n_d;
  check_finite_input(x, n);

  // Inner basis values b^in_k(x_p), order 0, laid out [p][k].
  std::vector<double> inner(static_cast<std::size_t>(n) * n_d);
  {
    std::vector<double> buf(n_d);
    for (int p = 0; p < n; ++p) {
      basis_eval_all(shape.inner_basis, x[p], 0, buf.data());
      std::memcpy(inner.data() + static_cast<std::size_t>(p) * n_d, buf.data(),
                  sizeof(double) * n_d);
    }
  }

  if (cache) {
    cache->params_uid = params.uid();
    cache->params_version = params.version();
    cache->x.assign(x, x + n);
    cache->z.resize(m);
    cache->phi0.resize(m);
    cache->phi1.resize(m);
    cache->phi2.resize(m);
    cache->unit_sums.resize(m);
    cache->inner_vals = inner;
  }

  const double* a = params.a().data();
  const double* c = params.c().data();
  const std::size_t per_q = static_cast<std::size_t>(n) * n_d;
  std::vector<double> outer(n_d);
  double phi[kMaxDerivativeOrder + 1];

  // Fixed summation order: (p, k1) row-major inside each unit, units ascending.
  double total = 0.0;
  for (int q = 0; q < m; ++q) {
    const double* aq = a + q * per_q;
    double z = 0.0;
    for (std::size_t j = 0; j < per_q; ++j) z += aq[j] * inner[j];
    transform_eval_all(shape.transform, z, cache ? 2 : 0, phi);
    basis_eval_all(shape.outer_basis, phi[0], 0, outer.data());
    const double* cq = c + static_cast<std::size_t>(q) * n_d;
    double unit = 0.0;
    for (int k = 0; k < n_d; ++k) unit += cq[k] * outer[k];
    if (cache) {
      cache->z[q] = z;
      cache->phi0[q] = phi[0];
      cache->phi1[q] = phi[1];
      cache->phi2[q] = phi[2];
      cache->unit_sums[q] = unit;
    }
    total += unit;
  }
  const double value = total / std::sqrt(static_cast<double>(m));
  if (cache) cache->value = value;
  return value;
}

double forward(const KanParams& params, const std::vector<double>& x, ForwardCache* cache) {
  if (static_cast<int>(x.size()) != params.shape().n) {
    throw std::invalid_argument("forward: input dimension mismatch");
  }
  return forward(params, x.data(), cache);
}

std::vector<double> residuals(const KanParams& params, const Dataset& data) {
  data.validate();
  if (data.cols != params.shape().n) {
    throw std::invalid_argument("residuals: dataset dimension mismatch");
  }
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(data.rows));
  std::vector<double> s(data.rows);
  for (std::size_t i = 0; i < data.rows; ++i) {
    s[i] = (forward(params, data.row(i)) - data.y[i]) * inv_sqrt_n;
  }
  return s;
}

ParamGrad param_grad(const KanParams& params, const ForwardCache& cache) {
  if (!cache.matches(params)) {
    throw std::logic_error("param_grad: stale forward cache for these parameters");
  }
  const KanShape& shape = params.shape();
  const int n = shape.n, m = shape.m, n_d = shape.n_d;
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
  const std::size_t per_q = static_cast<std::size_t>(n) * n_d;

  ParamGrad grad;
  grad.a.assign(shape.a_size(), 0.0);
  grad.c.assign(shape.c_size(), 0.0);

  std::vector<double> outer(2 * n_d);
  const double* c = params.c().data();
  for (int q = 0; q < m; ++q) {
    basis_eval_all(shape.outer_basis, cache.phi0[q], 1, outer.data());
    const double* cq = c + static_cast<std::size_t>(q) * n_d;
    double weighted_deriv = 0.0;  // sum_k2 c_{q,k2} b'_{k2}(phi(z_q))
    for (int k = 0; k < n_d; ++k) weighted_deriv += cq[k] * outer[n_d + k];
    const double wq = weighted_deriv * cache.phi1[q] * inv_sqrt_m;
    double* gaq = grad.a.data() + q * per_q;
    for (std::size_t j = 0; j < per_q; ++j) gaq[j] = wq * cache.inner_vals[j];
    double* gcq = grad.c.data() + static_cast<std::size_t>(q) * n_d;
    for (int k = 0; k < n_d; ++k) gcq[k] = inv_sqrt_m * outer[k];
  }
  return grad;
}

InputDerivs input_derivatives(const KanParams& params, const double* x, int max_order) {
  if (max_order < 1 || max_order > 2) {
    throw std::invalid_argument("input_derivatives: max_order must be 1 or 2");
  }
  const KanShape& shape = params.shape();
  const int n = shape.n, m = shape.m, n_d = shape.n_d;
  check_finite_input(x, n);
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));

  // Inner basis orders 0..2, [order][p][k].
  std::vector<double> inner(3 * static_cast<std::size_t>(n) * n_d);
  {
    std::vector<double> buf(3 * n_d);
    for (int p = 0; p < n; ++p) {
      basis_eval_all(shape.inner_basis, x[p], 2, buf.data());
      for (int r = 0; r < 3; ++r) {
        std::memcpy(inner.data() + (static_cast<std::size_t>(r) * n + p) * n_d,
                    buf.data() + static_cast<std::size_t>(r) * n_d, sizeof(double) * n_d);
      }
    }
  }
  const double* inner0 = inner.data();
  const double* inner1 = inner.data() + static_cast<std::size_t>(n) * n_d;
  const double* inner2 = inner.data() + 2 * static_cast<std::size_t>(n) * n_d;

  InputDerivs out;
  out.grad.assign(n, 0.0);
  if (max_order == 2) out.hess.assign(static_cast<std::size_t>(n) * n, 0.0);

  const double* a = params.a().data();
  const double* c = params.c().data();
  const std::size_t per_q = static_cast<std::size_t>(n) * n_d;
  std::vector<double> outer(3 * n_d);
  std::vector<double> dz(n), ddz(n);
  double phi[kMaxDerivativeOrder + 1];

  for (int q = 0; q < m; ++q) {
    const double* aq = a + q * per_q;
    double z = 0.0;
    for (std::size_t j = 0; j < per_q; ++j) z += aq[j] * inner0[j];
    transform_eval_all(shape.transform, z, 2, phi);
    basis_eval_all(shape.outer_basis, phi[0], 2, outer.data());

    const double* cq = c + static_cast<std::size_t>(q) * n_d;
    double sum_d1 = 0.0, sum_d2 = 0.0;
    for (int k = 0; k < n_d; ++k) {
      sum_d1 += cq[k] * outer[n_d + k];
      sum_d2 += cq[k] * outer[2 * n_d + k];
    }
    for (int p = 0; p < n; ++p) {
      double d = 0.0, dd = 0.0;
      const std::size_t off = static_cast<std::size_t>(p) * n_d;
      for (int k = 0; k < n_d; ++k) {
        d += aq[off + k] * inner1[off + k];
        dd += aq[off + k] * inner2[off + k];
      }
      dz[p] = d;
      ddz[p] = dd;
    }

    const double w = sum_d1 * phi[1];                          // first-order chain weight
    const double pw = sum_d2 * phi[1] * phi[1] + sum_d1 * phi[2];  // second-order chain weight
    for (int p = 0; p < n; ++p) out.grad[p] += inv_sqrt_m * w * dz[p];
    if (max_order == 2) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          double h = pw * dz[i] * dz[j];
          if (i == j) h += w * ddz[i];
          out.hess[static_cast<std::size_t>(i) * n + j] += inv_sqrt_m * h;
        }
      }
    }
  }
  return out;
}

InputDerivs input_derivatives(const KanParams& params, const std::vector<double>& x,
                              int max_order) {
  if (static_cast<int>(x.size()) != params.shape().n) {
    throw std::invalid_argument("input_derivatives: input dimension mismatch");
  }
  return input_derivatives(params, x.data(), max_order);
}

namespace detail {

void accumulate_weighted_grad(const KanParams& params, const double* x, double weight,
                              double* ga, double* gc) {
  const KanShape& shape = params.shape();
  const int n = shape.n, m = shape.m, n_d = shape.n_d;
  const double scale = weight / std::sqrt(static_cast<double>(m));
  const std::size_t per_q = static_cast<std::size_t>(n) * n_d;

  std::vector<double> inner(per_q);
  {
    std::vector<double> buf(n_d);
    for (int p = 0; p < n; ++p) {
      basis_eval_all(shape.inner_basis, x[p], 0, buf.data());
      std::memcpy(inner.data() + static_cast<std::size_t>(p) * n_d, buf.data(),
                  sizeof(double) * n_d);
    }
  }

  const double* a = params.a().data();
  const double* c = params.c().data();
  std::vector<double> outer(2 * n_d);
  double phi[kMaxDerivativeOrder + 1];
  for (int q = 0; q < m; ++q) {
    const double* aq = a + q * per_q;
    double z = 0.0;
    for (std::size_t j = 0; j < per_q; ++j) z += aq[j] * inner[j];
    transform_eval_all(shape.transform, z, 1, phi);
    basis_eval_all(shape.outer_basis, phi[0], 1, outer.data());
    const double* cq = c + static_cast<std::size_t>(q) * n_d;
    double weighted_deriv = 0.0;
    for (int k = 0; k < n_d; ++k) weighted_deriv += cq[k] * outer[n_d + k];
    const double wq = weighted_deriv * phi[1] * scale;
    double* gaq = ga + q * per_q;
    for (std::size_t j = 0; j < per_q; ++j) gaq[j] += wq * inner[j];
    double* gcq = gc + static_cast<std::size_t>(q) * n_d;
    for (int k = 0; k < n_d; ++k) gcq[k] += scale * outer[k];
  }
}

double accumulate_weighted_operator_grad(const KanParams& params, const double* x,
                                         const OperatorCoeffs& coeffs, double weight,
                                         double* ga, double* gc) {
  const KanShape& shape = params.shape();
  const int n = shape.n, m = shape.m, n_d = shape.n_d;
  if (static_cast<int>(coeffs.g.size()) != n ||
      static_cast<int>(coeffs.h.size()) != n * n) {
    throw std::invalid_argument("operator gradient: coefficient dimension mismatch");
  }
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
  const double scale = weight * inv_sqrt_m;
  const std::size_t per_q = static_cast<std::size_t>(n) * n_d;

  // Inner basis orders 0..2.
  std::vector<double> inner(3 * per_q);
  {
    std::vector<double> buf(3 * n_d);
    for (int p = 0; p < n; ++p) {
      basis_eval_all(shape.inner_basis, x[p], 2, buf.data());
      for (int r = 0; r < 3; ++r) {
        std::memcpy(inner.data() + r * per_q + static_cast<std::size_t>(p) * n_d,
                    buf.data() + static_cast<std::size_t>(r) * n_d, sizeof(double) * n_d);
      }
    }
  }
  const double* inner0 = inner.data();
  const double* inner1 = inner.data() + per_q;
  const double* inner2 = inner.data() + 2 * per_q;

  const double* a = params.a().data();
  const double* c = params.c().data();
  const double* h = coeffs.h.data();
  const double* g = coeffs.g.data();
  const double l = coeffs.l;

  std::vector<double> outer(4 * n_d);
  std::vector<double> dz(n), ddz(n), ddir(n), hrow(n);
  double phi[kMaxDerivativeOrder + 1];
  double op_value = 0.0;

  for (int q = 0; q < m; ++q) {
    const double* aq = a + q * per_q;
    double z = 0.0;
    for (std::size_t j = 0; j < per_q; ++j) z += aq[j] * inner0[j];
    transform_eval_all(shape.transform, z, 3, phi);
    basis_eval_all(shape.outer_basis, phi[0], 3, outer.data());

    const double* cq = c + static_cast<std::size_t>(q) * n_d;
    double f_q = 0.0, A = 0.0, B = 0.0, C = 0.0;
    for (int k = 0; k < n_d; ++k) {
      f_q += cq[k] * outer[k];
      A += cq[k] * outer[n_d + k];
      B += cq[k] * outer[2 * n_d + k];
      C += cq[k] * outer[3 * n_d + k];
    }
    for (int p = 0; p < n; ++p) {
      double d = 0.0, dd = 0.0;
      const std::size_t off = static_cast<std::size_t>(p) * n_d;
      for (int k = 0; k < n_d; ++k) {
        d += aq[off + k] * inner1[off + k];
        dd += aq[off + k] * inner2[off + k];
      }
      dz[p] = d;
      ddz[p] = dd;
    }

    const double W = A * phi[1];
    const double P = B * phi[1] * phi[1] + A * phi[2];
    const double P3 = C * phi[1] * phi[1] * phi[1] + 3.0 * B * phi[1] * phi[2] + A * phi[3];

    // Operator pieces built from the spatial coordinates (index >= 1, 0-based).
    double hquad = 0.0, htrace = 0.0, gdir = 0.0;
    for (int i = 1; i < n; ++i) {
      double hr = 0.0;
      for (int j = 1; j < n; ++j) hr += h[static_cast<std::size_t>(i) * n + j] * dz[j];
      hrow[i] = hr;
      hquad += hr * dz[i];
      htrace += h[static_cast<std::size_t>(i) * n + i] * ddz[i];
      gdir += g[i] * dz[i];
    }
    const double alpha = dz[0] - htrace - gdir;
    op_value += W * alpha - P * hquad - l * f_q;

    // d(D[f]_q)/dz flows through every z-dependent factor.
    const double dz_coeff = P * alpha - P3 * hquad - l * W;
    double* gaq = ga + q * per_q;
    for (int p = 0; p < n; ++p) {
      double via_dz;   // d(D[f]_q)/d(dz[p])
      double via_ddz;  // d(D[f]_q)/d(ddz[p])
      if (p == 0) {
        via_dz = W;
        via_ddz = 0.0;
      } else {
        via_dz = -W * g[p] - 2.0 * P * hrow[p];
        via_ddz = -W * h[static_cast<std::size_t>(p) * n + p];
      }
      const std::size_t off = static_cast<std::size_t>(p) * n_d;
      for (int k = 0; k < n_d; ++k) {
        gaq[off + k] += scale * (dz_coeff * inner0[off + k] + via_dz * inner1[off + k] +
                                 via_ddz * inner2[off + k]);
      }
    }
    double* gcq = gc + static_cast<std::size_t>(q) * n_d;
    for (int k = 0; k < n_d; ++k) {
      const double dW = outer[n_d + k] * phi[1];
      const double dP = outer[2 * n_d + k] * phi[1] * phi[1] + outer[n_d + k] * phi[2];
      gcq[k] += scale * (dW * alpha - dP * hquad - l * outer[k]);
    }
  }
  return op_value * inv_sqrt_m;
}

}  // namespace detail

double apply_operator_coeffs(int n, const OperatorCoeffs& coeffs, double value,
                             const double* grad, const double* hess) {
  if (static_cast<int>(coeffs.g.size()) != n || static_cast<int>(coeffs.h.size()) != n * n) {
    throw std::invalid_argument("apply_operator_coeffs: coefficient dimension mismatch");
  }
  double out = grad[0];
  for (int i = 1; i < n; ++i) {
    for (int j = 1; j < n; ++j) {
      out -= coeffs.h[static_cast<std::size_t>(i) * n + j] * hess[static_cast<std::size_t>(i) * n + j];
    }
    out -= coeffs.g[i] * grad[i];
  }
  out -= coeffs.l * value;
  return out;
}

double operator_value(const KanParams& params, const double* x, const OperatorCoeffs& coeffs) {
  const KanShape& shape = params.shape();
  const int n = shape.n, m = shape.m, n_d = shape.n_d;
  check_finite_input(x, n);
  if (static_cast<int>(coeffs.g.size()) != n || static_cast<int>(coeffs.h.size()) != n * n) {
    throw std::invalid_argument("operator_value: coefficient dimension mismatch");
  }
  const std::size_t per_q = static_cast<std::size_t>(n) * n_d;

  std::vector<double> inner(3 * per_q);
  {
    std::vector<double> buf(3 * n_d);
    for (int p = 0; p < n; ++p) {
      basis_eval_all(shape.inner_basis, x[p], 2, buf.data());
      for (int r = 0; r < 3; ++r) {
        std::memcpy(inner.data() + r * per_q + static_cast<std::size_t>(p) * n_d,
                    buf.data() + static_cast<std::size_t>(r) * n_d, sizeof(double) * n_d);
      }
    }
  }
  const double* inner0 = inner.data();
  const double* inner1 = inner.data() + per_q;
  const double* inner2 = inner.data() + 2 * per_q;

  const double* a = params.a().data();
  const double* c = params.c().data();
  const double* h = coeffs.h.data();
  const double* g = coeffs.g.data();
  std::vector<double> outer(3 * n_d);
  std::vector<double> dz(n), ddz(n);
  double phi[kMaxDerivativeOrder + 1];
  double total = 0.0;

  for (int q = 0; q < m; ++q) {
    const double* aq = a + q * per_q;
    double z = 0.0;
    for (std::size_t j = 0; j < per_q; ++j) z += aq[j] * inner0[j];
    transform_eval_all(shape.transform, z, 2, phi);
    basis_eval_all(shape.outer_basis, phi[0], 2, outer.data());
    const double* cq = c + static_cast<std::size_t>(q) * n_d;
    double f_q = 0.0, A = 0.0, B = 0.0;
    for (int k = 0; k < n_d; ++k) {
      f_q += cq[k] * outer[k];
      A += cq[k] * outer[n_d + k];
      B += cq[k] * outer[2 * n_d + k];
    }
    for (int p = 0; p < n; ++p) {
      double d = 0.0, dd = 0.0;
      const std::size_t off = static_cast<std::size_t>(p) * n_d;
      for (int k = 0; k < n_d; ++k) {
        d += aq[off + k] * inner1[off + k];
        dd += aq[off + k] * inner2[off + k];
      }
      dz[p] = d;
      ddz[p] = dd;
    }
    const double W = A * phi[1];
    const double P = B * phi[1] * phi[1] + A * phi[2];
    double hquad = 0.0, htrace = 0.0, gdir = 0.0;
    for (int i = 1; i < n; ++i) {
      double hr = 0.0;
      for (int j = 1; j < n; ++j) hr += h[static_cast<std::size_t>(i) * n + j] * dz[j];
      hquad += hr * dz[i];
      htrace += h[static_cast<std::size_t>(i) * n + i] * ddz[i];
      gdir += g[i] * dz[i];
    }
    total += W * (dz[0] - htrace - gdir) - P * hquad - coeffs.l * f_q;
  }
  return total / std::sqrt(static_cast<double>(m));
}

OperatorEval param_grad_of_operator(const KanParams& params, const double* x,
                                    const OperatorCoeffs& coeffs) {
  check_finite_input(x, params.shape().n);
  OperatorEval out;
  out.grad.a.assign(params.shape().a_size(), 0.0);
  out.grad.c.assign(params.shape().c_size(), 0.0);
  out.value = detail::accumulate_weighted_operator_grad(params, x, coeffs, 1.0,
                                                        out.grad.a.data(), out.grad.c.data());
  return out;
}

void axpy_params(KanParams& params, double eta, const ParamGrad& grad) {
  if (grad.a.size() != params.a().size() || grad.c.size() != params.c().size()) {
    throw std::invalid_argument("axpy_params: gradient shape mismatch");
  }
  auto& a = params.mutable_a();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= eta * grad.a[i];
  auto& c = params.mutable_c();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= eta * grad.c[i];
}

void save_params(const KanParams& params, std::ostream& out) {
  const KanShape& s = params.shape();
  out << "kanparams 1 " << s.n << " " << s.m << " " << s.n_d << "\n";
  out.write(reinterpret_cast<const char*>(params.a().data()),
            static_cast<std::streamsize>(sizeof(double) * params.a().size()));
  out.write(reinterpret_cast<const char*>(params.c().data()),
            static_cast<std::streamsize>(sizeof(double) * params.c().size()));
}

KanParams load_params(const KanShape& shape, std::istream& in) {
  std::string magic;
  int fmt = 0, n = 0, m = 0, n_d = 0;
  in >> magic >> fmt >> n >> m >> n_d;
  if (!in || magic != "kanparams" || fmt != 1) {
    throw std::runtime_error("load_params: not a parameter checkpoint");
  }
  if (n != shape.n || m != shape.m || n_d != shape.n_d) {
    throw std::runtime_error("load_params: checkpoint shape mismatch");
  }
  in.get();  // newline after the header
  KanParams params(shape);
  in.read(reinterpret_cast<char*>(params.mutable_a().data()),
          static_cast<std::streamsize>(sizeof(double) * shape.a_size()));
  in.read(reinterpret_cast<char*>(params.mutable_c().data()),
          static_cast<std::streamsize>(sizeof(double) * shape.c_size()));
  if (!in) throw std::runtime_error("load_params: truncated checkpoint");
  return params;
}

}  // namespace kan
