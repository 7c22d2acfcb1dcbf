#include "kan/pinn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "kan/rng.hpp"

namespace kan {

void PdeProblem::validate() const {
  if (n < 1) throw std::invalid_argument("PdeProblem: dimension must be >= 1");
  if (!h || !g || !l || !v || !ubar) {
    throw std::invalid_argument("PdeProblem: all coefficient fields must be set");
  }
  interior.validate();
  boundary.validate();
  if (interior.cols != n || boundary.cols != n) {
    throw std::invalid_argument("PdeProblem: sample dimension mismatch");
  }
  // h must be symmetric wherever it is evaluated.
  std::vector<double> hbuf(static_cast<std::size_t>(n) * n);
  for (std::size_t i = 0; i < interior.rows; ++i) {
    h(interior.row(i), hbuf.data());
    for (int r = 1; r < n; ++r) {
      for (int c = r + 1; c < n; ++c) {
        if (std::abs(hbuf[static_cast<std::size_t>(r) * n + c] -
                     hbuf[static_cast<std::size_t>(c) * n + r]) > 1e-12) {
          throw std::invalid_argument("PdeProblem: h is not symmetric at a sample point");
        }
      }
    }
  }
}

OperatorCoeffs PdeProblem::coeffs_at(const double* x) const {
  OperatorCoeffs coeffs;
  coeffs.h.assign(static_cast<std::size_t>(n) * n, 0.0);
  coeffs.g.assign(n, 0.0);
  h(x, coeffs.h.data());
  g(x, coeffs.g.data());
  coeffs.l = l(x);
  return coeffs;
}

PinnBatchConfig::PinnBatchConfig(int b1_, int b2_, std::size_t n1, std::size_t n2)
    : b1(b1_), b2(b2_) {
  if (b1 < 1 || b1 > static_cast<int>(n1) || b2 < 1 || b2 > static_cast<int>(n2)) {
    throw std::invalid_argument("PinnBatchConfig: batch sizes must lie in [1, N]");
  }
  if (static_cast<std::size_t>(b1) * n2 != static_cast<std::size_t>(b2) * n1) {
    throw std::invalid_argument("PinnBatchConfig: b1/N1 must equal b2/N2 exactly");
  }
}

double apply_operator(const PdeProblem& problem, const SmoothFunction& u, const double* x) {
  const int n = problem.n;
  const OperatorCoeffs coeffs = problem.coeffs_at(x);
  std::vector<double> grad(n), hess(static_cast<std::size_t>(n) * n);
  u.gradient(x, grad.data());
  u.hessian(x, hess.data());
  return apply_operator_coeffs(n, coeffs, u.value(x), grad.data(), hess.data());
}

double pde_loss(const KanParams& params, const PdeProblem& problem) {
  problem.validate();
  if (params.shape().n != problem.n) throw std::invalid_argument("pde_loss: dimension mismatch");
  double interior_term = 0.0;
  for (std::size_t i = 0; i < problem.n1(); ++i) {
    const double* x = problem.interior.row(i);
    const double f = forward(params, x);
    const InputDerivs id = input_derivatives(params, x, 2);
    const double d = apply_operator_coeffs(problem.n, problem.coeffs_at(x), f, id.grad.data(),
                                           id.hess.data());
    const double e = d - problem.interior.y[i];
    interior_term += e * e;
  }
  double boundary_term = 0.0;
  for (std::size_t i = 0; i < problem.n2(); ++i) {
    const double e = forward(params, problem.boundary.row(i)) - problem.boundary.y[i];
    boundary_term += e * e;
  }
  return interior_term / static_cast<double>(problem.n1()) +
         boundary_term / static_cast<double>(problem.n2());
}

double pde_loss_callable(const SmoothFunction& u, const PdeProblem& problem) {
  problem.validate();
  double interior_term = 0.0;
  for (std::size_t i = 0; i < problem.n1(); ++i) {
    const double e = apply_operator(problem, u, problem.interior.row(i)) - problem.interior.y[i];
    interior_term += e * e;
  }
  double boundary_term = 0.0;
  for (std::size_t i = 0; i < problem.n2(); ++i) {
    const double e = u.value(problem.boundary.row(i)) - problem.boundary.y[i];
    boundary_term += e * e;
  }
  return interior_term / static_cast<double>(problem.n1()) +
         boundary_term / static_cast<double>(problem.n2());
}

ParamGrad pde_loss_grad(const KanParams& params, const PdeProblem& problem) {
  problem.validate();
  if (params.shape().n != problem.n) {
    throw std::invalid_argument("pde_loss_grad: dimension mismatch");
  }
  ParamGrad grad;
  grad.a.assign(params.shape().a_size(), 0.0);
  grad.c.assign(params.shape().c_size(), 0.0);
  for (std::size_t i = 0; i < problem.n1(); ++i) {
    const double* x = problem.interior.row(i);
    const OperatorCoeffs coeffs = problem.coeffs_at(x);
    const double e = operator_value(params, x, coeffs) - problem.interior.y[i];
    detail::accumulate_weighted_operator_grad(params, x, coeffs,
                                              2.0 / static_cast<double>(problem.n1()) * e,
                                              grad.a.data(), grad.c.data());
  }
  for (std::size_t i = 0; i < problem.n2(); ++i) {
    const double* x = problem.boundary.row(i);
    const double e = forward(params, x) - problem.boundary.y[i];
    detail::accumulate_weighted_grad(params, x, 2.0 / static_cast<double>(problem.n2()) * e,
                                     grad.a.data(), grad.c.data());
  }
  return grad;
}

PdeMinibatchSample pde_minibatch_loss(const KanParams& params, const PdeProblem& problem,
                                      const PinnBatchConfig& batch, Rng& rng) {
  problem.validate();
  PdeMinibatchSample out;
  out.interior_idx = sample_batch(problem.n1(), static_cast<std::size_t>(batch.b1), rng);
  out.boundary_idx = sample_batch(problem.n2(), static_cast<std::size_t>(batch.b2), rng);
  double interior_term = 0.0;
  for (const std::size_t i : out.interior_idx) {
    const double* x = problem.interior.row(i);
    const double d = operator_value(params, x, problem.coeffs_at(x));
    const double e = d - problem.interior.y[i];
    interior_term += e * e;
  }
  double boundary_term = 0.0;
  for (const std::size_t i : out.boundary_idx) {
    const double e = forward(params, problem.boundary.row(i)) - problem.boundary.y[i];
    boundary_term += e * e;
  }
  out.value = interior_term / batch.b1 + boundary_term / batch.b2;
  return out;
}

namespace {

SmoothFunction heat1d_exact() {
  SmoothFunction u;
  u.value = [](const double* x) { return std::exp(-x[0]) * std::sin(M_PI * x[1]); };
  u.gradient = [](const double* x, double* g) {
    g[0] = -std::exp(-x[0]) * std::sin(M_PI * x[1]);
    g[1] = M_PI * std::exp(-x[0]) * std::cos(M_PI * x[1]);
  };
  u.hessian = [](const double* x, double* h) {
    const double e = std::exp(-x[0]);
    h[0] = e * std::sin(M_PI * x[1]);
    h[1] = h[2] = -M_PI * e * std::cos(M_PI * x[1]);
    h[3] = -M_PI * M_PI * e * std::sin(M_PI * x[1]);
  };
  return u;
}

SmoothFunction advection1d_exact() {
  SmoothFunction u;
  u.value = [](const double* x) { return std::sin(M_PI * (x[1] - x[0])); };
  u.gradient = [](const double* x, double* g) {
    const double c = M_PI * std::cos(M_PI * (x[1] - x[0]));
    g[0] = -c;
    g[1] = c;
  };
  u.hessian = [](const double* x, double* h) {
    const double s = M_PI * M_PI * std::sin(M_PI * (x[1] - x[0]));
    h[0] = -s;
    h[1] = h[2] = s;
    h[3] = -s;
  };
  return u;
}

}  // namespace

PdeProblem make_manufactured_problem(const std::string& kind, std::size_t n1, std::size_t n2,
                                     std::uint64_t seed) {
  if (n1 < 1 || n2 < 1) {
    throw std::invalid_argument("make_manufactured_problem: need N1, N2 >= 1");
  }
  PdeProblem problem;
  problem.n = 2;
  problem.kind = kind;
  problem.seed = seed;
  if (kind == "heat1d") {
    problem.exact = heat1d_exact();
    problem.h = [](const double*, double* h) {
      h[0] = h[1] = h[2] = 0.0;
      h[3] = 1.0 / (M_PI * M_PI);
    };
    problem.g = [](const double*, double* g) { g[0] = g[1] = 0.0; };
  } else if (kind == "advection1d") {
    problem.exact = advection1d_exact();
    problem.h = [](const double*, double* h) { h[0] = h[1] = h[2] = h[3] = 0.0; };
    problem.g = [](const double*, double* g) {
      g[0] = 0.0;
      g[1] = -1.0;
    };
  } else {
    throw std::invalid_argument("make_manufactured_problem: unsupported kind '" + kind + "'");
  }
  problem.l = [](const double*) { return 0.0; };
  // Homogeneous construction: the exact solution has zero operator residual.
  problem.v = [](const double*) { return 0.0; };
  const SmoothFunction exact = problem.exact;
  problem.ubar = [exact](const double* x) { return exact.value(x); };

  Rng rng(seed);
  problem.interior.rows = n1;
  problem.interior.cols = 2;
  problem.interior.x.resize(n1 * 2);
  problem.interior.y.resize(n1);
  for (std::size_t i = 0; i < n1; ++i) {
    problem.interior.x[2 * i] = rng.uniform01();
    problem.interior.x[2 * i + 1] = rng.uniform01();
    problem.interior.y[i] = problem.v(problem.interior.row(i));
  }
  problem.boundary.rows = n2;
  problem.boundary.cols = 2;
  problem.boundary.x.resize(n2 * 2);
  problem.boundary.y.resize(n2);
  for (std::size_t i = 0; i < n2; ++i) {
    // Perimeter-uniform over the four edges of [0,1]^2; the t = 0 face
    // (initial condition) counts as boundary.
    const double s = 4.0 * rng.uniform01();
    const int side = std::min(3, static_cast<int>(s));
    const double pos = s - side;
    double t = 0.0, xi = 0.0;
    switch (side) {
      case 0: t = 0.0; xi = pos; break;
      case 1: t = pos; xi = 1.0; break;
      case 2: t = 1.0; xi = 1.0 - pos; break;
      default: t = 1.0 - pos; xi = 0.0; break;
    }
    problem.boundary.x[2 * i] = t;
    problem.boundary.x[2 * i + 1] = xi;
    problem.boundary.y[i] = problem.ubar(problem.boundary.row(i));
  }
  problem.validate();
  return problem;
}

PdeResidualProblem::PdeResidualProblem(PdeProblem problem, PinnBatchConfig batch,
                                       bool with_replacement)
    : problem_(std::move(problem)), batch_(batch), with_replacement_(with_replacement) {
  problem_.validate();
  interior_coeffs_.reserve(problem_.n1());
  for (std::size_t i = 0; i < problem_.n1(); ++i) {
    interior_coeffs_.push_back(problem_.coeffs_at(problem_.interior.row(i)));
  }
}

bool PdeResidualProblem::full_batch() const {
  return batch_.b1 == static_cast<int>(problem_.n1()) &&
         batch_.b2 == static_cast<int>(problem_.n2());
}

std::vector<double> PdeResidualProblem::residuals(const KanParams& params) const {
  const std::size_t n1 = problem_.n1(), n2 = problem_.n2();
  const double inv1 = 1.0 / std::sqrt(static_cast<double>(n1));
  const double inv2 = 1.0 / std::sqrt(static_cast<double>(n2));
  std::vector<double> s(n1 + n2);
  for (std::size_t i = 0; i < n1; ++i) {
    const double d = operator_value(params, problem_.interior.row(i), interior_coeffs_[i]);
    s[i] = (d - problem_.interior.y[i]) * inv1;
  }
  for (std::size_t i = 0; i < n2; ++i) {
    s[n1 + i] = (forward(params, problem_.boundary.row(i)) - problem_.boundary.y[i]) * inv2;
  }
  return s;
}

std::vector<double> PdeResidualProblem::residuals_and_gradient(const KanParams& params,
                                                               ParamGrad* grad) const {
  if (!grad) return residuals(params);
  const std::size_t n1 = problem_.n1(), n2 = problem_.n2();
  const double inv1 = 1.0 / std::sqrt(static_cast<double>(n1));
  const double inv2 = 1.0 / std::sqrt(static_cast<double>(n2));
  std::vector<double> s(n1 + n2);
  grad->a.assign(params.shape().a_size(), 0.0);
  grad->c.assign(params.shape().c_size(), 0.0);

  // One operator pass per interior sample: the unweighted gradient lands in a
  // scratch block, the residual weight is applied while merging.
  ParamGrad scratch;
  for (std::size_t i = 0; i < n1; ++i) {
    scratch.a.assign(params.shape().a_size(), 0.0);
    scratch.c.assign(params.shape().c_size(), 0.0);
    const double d = detail::accumulate_weighted_operator_grad(
        params, problem_.interior.row(i), interior_coeffs_[i], 1.0, scratch.a.data(),
        scratch.c.data());
    const double e = d - problem_.interior.y[i];
    s[i] = e * inv1;
    const double w = 2.0 / static_cast<double>(n1) * e;
    for (std::size_t r = 0; r < scratch.a.size(); ++r) grad->a[r] += w * scratch.a[r];
    for (std::size_t r = 0; r < scratch.c.size(); ++r) grad->c[r] += w * scratch.c[r];
  }
  for (std::size_t i = 0; i < n2; ++i) {
    const double* x = problem_.boundary.row(i);
    const double e = forward(params, x) - problem_.boundary.y[i];
    s[n1 + i] = e * inv2;
    detail::accumulate_weighted_grad(params, x, 2.0 / static_cast<double>(n2) * e,
                                     grad->a.data(), grad->c.data());
  }
  return s;
}

void PdeResidualProblem::minibatch_gradient(const KanParams& params,
                                            const std::vector<double>& s_full, Rng& rng,
                                            ParamGrad& grad) const {
  const std::size_t n1 = problem_.n1(), n2 = problem_.n2();
  const double sqrt1 = std::sqrt(static_cast<double>(n1));
  const double sqrt2 = std::sqrt(static_cast<double>(n2));
  const auto interior_idx =
      sample_batch(n1, static_cast<std::size_t>(batch_.b1), rng, with_replacement_);
  const auto boundary_idx =
      sample_batch(n2, static_cast<std::size_t>(batch_.b2), rng, with_replacement_);
  grad.a.assign(params.shape().a_size(), 0.0);
  grad.c.assign(params.shape().c_size(), 0.0);
  for (const std::size_t i : interior_idx) {
    const double e = s_full[i] * sqrt1;
    detail::accumulate_weighted_operator_grad(params, problem_.interior.row(i),
                                              interior_coeffs_[i], 2.0 / batch_.b1 * e,
                                              grad.a.data(), grad.c.data());
  }
  for (const std::size_t i : boundary_idx) {
    const double e = s_full[n1 + i] * sqrt2;
    detail::accumulate_weighted_grad(params, problem_.boundary.row(i), 2.0 / batch_.b2 * e,
                                     grad.a.data(), grad.c.data());
  }
}

DerivMatrix PdeResidualProblem::assemble(const KanParams& params) const {
  const std::size_t n1 = problem_.n1(), n2 = problem_.n2();
  const KanShape& shape = params.shape();
  DerivMatrix d;
  d.rows = shape.param_count();
  d.cols = n1 + n2;
  d.data.assign(d.rows * d.cols, 0.0);
  const double inv1 = 1.0 / std::sqrt(static_cast<double>(n1));
  const double inv2 = 1.0 / std::sqrt(static_cast<double>(n2));
  for (std::size_t i = 0; i < n1; ++i) {
    double* col = d.col(i);
    detail::accumulate_weighted_operator_grad(params, problem_.interior.row(i),
                                              interior_coeffs_[i], inv1, col,
                                              col + shape.a_size());
  }
  for (std::size_t i = 0; i < n2; ++i) {
    double* col = d.col(n1 + i);
    detail::accumulate_weighted_grad(params, problem_.boundary.row(i), inv2, col,
                                     col + shape.a_size());
  }
  return d;
}

GramReport pinn_gram_blocked(const KanParams& params, const PdeResidualProblem& rp) {
  const PdeProblem& problem = rp.problem();
  const KanShape& shape = params.shape();
  const int n = shape.n, m = shape.m, n_d = shape.n_d;
  const std::size_t n1 = problem.n1(), n2 = problem.n2();
  const std::size_t total = n1 + n2;
  const std::size_t per_q = static_cast<std::size_t>(n) * n_d;
  const std::size_t slice = per_q + n_d;
  const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(m));
  const double inv1 = 1.0 / std::sqrt(static_cast<double>(n1));
  const double inv2 = 1.0 / std::sqrt(static_cast<double>(n2));

  // Inner basis tables per sample, orders 0..2.
  std::vector<double> inner(total * 3 * per_q);
  std::vector<double> buf(3 * n_d);
  for (std::size_t i = 0; i < total; ++i) {
    const double* x = i < n1 ? problem.interior.row(i) : problem.boundary.row(i - n1);
    for (int p = 0; p < n; ++p) {
      basis_eval_all(shape.inner_basis, x[p], 2, buf.data());
      for (int r = 0; r < 3; ++r) {
        std::memcpy(inner.data() + (i * 3 + r) * per_q + static_cast<std::size_t>(p) * n_d,
                    buf.data() + static_cast<std::size_t>(r) * n_d, sizeof(double) * n_d);
      }
    }
  }
  std::vector<OperatorCoeffs> coeffs;
  coeffs.reserve(n1);
  for (std::size_t i = 0; i < n1; ++i) coeffs.push_back(problem.coeffs_at(problem.interior.row(i)));

  std::vector<double> g_acc(total * total, 0.0);
  std::vector<double> slices(total * slice);
  std::vector<double> outer(4 * n_d);
  std::vector<double> dz(n), ddz(n), hrow(n);
  double phi[kMaxDerivativeOrder + 1];
  const double* a = params.a().data();
  const double* c = params.c().data();

  for (int q = 0; q < m; ++q) {
    const double* aq = a + static_cast<std::size_t>(q) * per_q;
    const double* cq = c + static_cast<std::size_t>(q) * n_d;
    for (std::size_t i = 0; i < total; ++i) {
      const double* inner0 = inner.data() + (i * 3 + 0) * per_q;
      const double* inner1 = inner.data() + (i * 3 + 1) * per_q;
      const double* inner2 = inner.data() + (i * 3 + 2) * per_q;
      double* out = slices.data() + i * slice;
      double z = 0.0;
      for (std::size_t r = 0; r < per_q; ++r) z += aq[r] * inner0[r];

      if (i >= n1) {  // boundary sample: plain value gradient
        transform_eval_all(shape.transform, z, 1, phi);
        basis_eval_all(shape.outer_basis, phi[0], 1, outer.data());
        double wd = 0.0;
        for (int k = 0; k < n_d; ++k) wd += cq[k] * outer[n_d + k];
        const double scale = inv2 * inv_sqrt_m;
        const double wq = wd * phi[1] * scale;
        for (std::size_t r = 0; r < per_q; ++r) out[r] = wq * inner0[r];
        for (int k = 0; k < n_d; ++k) out[per_q + k] = scale * outer[k];
        continue;
      }

      transform_eval_all(shape.transform, z, 3, phi);
      basis_eval_all(shape.outer_basis, phi[0], 3, outer.data());
      double A = 0.0, B = 0.0, C = 0.0;
      for (int k = 0; k < n_d; ++k) {
        A += cq[k] * outer[n_d + k];
        B += cq[k] * outer[2 * n_d + k];
        C += cq[k] * outer[3 * n_d + k];
      }
      for (int p = 0; p < n; ++p) {
        double d1 = 0.0, d2 = 0.0;
        const std::size_t off = static_cast<std::size_t>(p) * n_d;
        for (int k = 0; k < n_d; ++k) {
          d1 += aq[off + k] * inner1[off + k];
          d2 += aq[off + k] * inner2[off + k];
        }
        dz[p] = d1;
        ddz[p] = d2;
      }
      const double W = A * phi[1];
      const double P = B * phi[1] * phi[1] + A * phi[2];
      const double P3 = C * phi[1] * phi[1] * phi[1] + 3.0 * B * phi[1] * phi[2] + A * phi[3];
      const auto& cf = coeffs[i];
      const double* hm = cf.h.data();
      double hquad = 0.0, htrace = 0.0, gdir = 0.0;
      for (int r = 1; r < n; ++r) {
        double hr = 0.0;
        for (int s2 = 1; s2 < n; ++s2) hr += hm[static_cast<std::size_t>(r) * n + s2] * dz[s2];
        hrow[r] = hr;
        hquad += hr * dz[r];
        htrace += hm[static_cast<std::size_t>(r) * n + r] * ddz[r];
        gdir += cf.g[r] * dz[r];
      }
      const double alpha = dz[0] - htrace - gdir;
      const double dz_coeff = P * alpha - P3 * hquad - cf.l * W;
      const double scale = inv1 * inv_sqrt_m;
      for (int p = 0; p < n; ++p) {
        double via_dz, via_ddz;
        if (p == 0) {
          via_dz = W;
          via_ddz = 0.0;
        } else {
          via_dz = -W * cf.g[p] - 2.0 * P * hrow[p];
          via_ddz = -W * hm[static_cast<std::size_t>(p) * n + p];
        }
        const std::size_t off = static_cast<std::size_t>(p) * n_d;
        for (int k = 0; k < n_d; ++k) {
          out[off + k] = scale * (dz_coeff * inner0[off + k] + via_dz * inner1[off + k] +
                                  via_ddz * inner2[off + k]);
        }
      }
      for (int k = 0; k < n_d; ++k) {
        const double dW = outer[n_d + k] * phi[1];
        const double dP = outer[2 * n_d + k] * phi[1] * phi[1] + outer[n_d + k] * phi[2];
        out[per_q + k] = scale * (dW * alpha - dP * hquad - cf.l * outer[k]);
      }
    }
    for (std::size_t i = 0; i < total; ++i) {
      const double* si = slices.data() + i * slice;
      for (std::size_t j = i; j < total; ++j) {
        const double* sj = slices.data() + j * slice;
        double dot = 0.0;
        for (std::size_t r = 0; r < slice; ++r) dot += si[r] * sj[r];
        g_acc[i * total + j] += dot;
      }
    }
  }

  GramReport report;
  report.n = total;
  report.g.assign(total * total, 0.0);
  for (std::size_t i = 0; i < total; ++i) {
    for (std::size_t j = i; j < total; ++j) {
      report.g[i * total + j] = g_acc[i * total + j];
      report.g[j * total + i] = g_acc[i * total + j];
    }
  }
  report.eigenvalues = sym_eig(report.n, report.g.data());
  report.sigma_min = report.eigenvalues.front();
  report.sigma_max = report.eigenvalues.back();
  return report;
}

}  // namespace kan
