#include "kan/ntk.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <future>
#include <limits>
#include <stdexcept>
#include <thread>

namespace kan {

namespace {
constexpr std::size_t kDenseEigLimit = 1024;

double frobenius(std::size_t n, const double* m) {
  double s = 0.0;
  for (std::size_t i = 0; i < n * n; ++i) s += m[i] * m[i];
  return std::sqrt(s);
}

double offdiag_sq(std::size_t n, const std::vector<double>& a) {
  double s = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = p + 1; q < n; ++q) {
      s += 2.0 * a[p * n + q] * a[p * n + q];
    }
  }
  return s;
}
}  // namespace

std::vector<double> sym_eig(std::size_t n, const double* m) {
  if (n == 0) return {};
  if (n > kDenseEigLimit) {
    throw std::invalid_argument("sym_eig: dimension beyond the dense limit");
  }
  for (std::size_t i = 0; i < n * n; ++i) {
    if (!std::isfinite(m[i])) throw std::invalid_argument("sym_eig: non-finite entry");
  }
  double asym = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      asym = std::max(asym, std::abs(m[i * n + j] - m[j * n + i]));
    }
  }
  if (asym > 1e-9) {
    throw std::invalid_argument("sym_eig: matrix is not symmetric within tolerance");
  }

  std::vector<double> a(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      a[i * n + j] = 0.5 * (m[i * n + j] + m[j * n + i]);
    }
  }

  const double norm = frobenius(n, a.data());
  const double target = 1e-12 * norm;
  const double target_sq = target * target;

  for (int sweep = 0; sweep < 100 && offdiag_sq(n, a) > target_sq; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double app = a[p * n + p];
        const double aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t r = 0; r < n; ++r) {
          const double arp = a[r * n + p];
          const double arq = a[r * n + q];
          a[r * n + p] = c * arp - s * arq;
          a[r * n + q] = s * arp + c * arq;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double apr = a[p * n + r];
          const double aqr = a[q * n + r];
          a[p * n + r] = c * apr - s * aqr;
          a[q * n + r] = s * apr + c * aqr;
        }
      }
    }
  }
  if (offdiag_sq(n, a) > target_sq && norm > 0.0) {
    throw std::runtime_error("sym_eig: Jacobi sweeps failed to converge");
  }

  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a[i * n + i];
  std::sort(eig.begin(), eig.end());
  return eig;
}

std::vector<double> sym_eig(const GramReport& report) { return sym_eig(report.n, report.g.data()); }

DerivMatrix assemble_D(const KanParams& params, const Dataset& data) {
  data.validate();
  const KanShape& shape = params.shape();
  if (data.cols != shape.n) throw std::invalid_argument("assemble_D: dimension mismatch");

  DerivMatrix d;
  d.rows = shape.param_count();
  d.cols = data.rows;
  d.data.assign(d.rows * d.cols, 0.0);
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(data.rows));
  for (std::size_t i = 0; i < data.rows; ++i) {
    double* col = d.col(i);
    detail::accumulate_weighted_grad(params, data.row(i), inv_sqrt_n, col,
                                     col + shape.a_size());
  }
  return d;
}

GramReport gram(const DerivMatrix& d) {
  for (double v : d.data) {
    if (!std::isfinite(v)) throw std::invalid_argument("gram: non-finite derivative entry");
  }
  GramReport report;
  report.n = d.cols;
  report.g.assign(d.cols * d.cols, 0.0);
  for (std::size_t i = 0; i < d.cols; ++i) {
    const double* ci = d.col(i);
    for (std::size_t j = i; j < d.cols; ++j) {
      const double* cj = d.col(j);
      double s = 0.0;
      for (std::size_t r = 0; r < d.rows; ++r) s += ci[r] * cj[r];
      report.g[i * d.cols + j] = s;
      report.g[j * d.cols + i] = s;
    }
  }
  report.eigenvalues = sym_eig(report.n, report.g.data());
  report.sigma_min = report.eigenvalues.front();
  report.sigma_max = report.eigenvalues.back();
  return report;
}

GramReport gram_closed_form(const KanParams& params, const Dataset& data) {
  data.validate();
  const KanShape& shape = params.shape();
  if (data.cols != shape.n) {
    throw std::invalid_argument("gram_closed_form: dimension mismatch");
  }
  const std::size_t n_samples = data.rows;
  const int n = shape.n, m = shape.m, n_d = shape.n_d;
  const std::size_t per_q = static_cast<std::size_t>(n) * n_d;

  // Inner basis values per sample and the sample-pair inner products
  // B_ij = sum_{p,k} b_k(x_i,p) b_k(x_j,p), which do not depend on q.
  std::vector<double> inner(n_samples * per_q);
  std::vector<double> buf(n_d);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double* xi = data.row(i);
    for (int p = 0; p < n; ++p) {
      basis_eval_all(shape.inner_basis, xi[p], 0, buf.data());
      std::memcpy(inner.data() + i * per_q + static_cast<std::size_t>(p) * n_d, buf.data(),
                  sizeof(double) * n_d);
    }
  }
  std::vector<double> b_pair(n_samples * n_samples, 0.0);
  for (std::size_t i = 0; i < n_samples; ++i) {
    for (std::size_t j = i; j < n_samples; ++j) {
      double s = 0.0;
      const double* bi = inner.data() + i * per_q;
      const double* bj = inner.data() + j * per_q;
      for (std::size_t r = 0; r < per_q; ++r) s += bi[r] * bj[r];
      b_pair[i * n_samples + j] = s;
      b_pair[j * n_samples + i] = s;
    }
  }

  std::vector<double> s_acc(n_samples * n_samples, 0.0);
  std::vector<double> q_acc(n_samples * n_samples, 0.0);
  std::vector<double> w(n_samples);
  std::vector<double> outer_vals(n_samples * n_d);
  std::vector<double> outer(2 * n_d);
  double phi[kMaxDerivativeOrder + 1];
  const double* a = params.a().data();
  const double* c = params.c().data();

  for (int q = 0; q < m; ++q) {
    const double* aq = a + static_cast<std::size_t>(q) * per_q;
    const double* cq = c + static_cast<std::size_t>(q) * n_d;
    for (std::size_t i = 0; i < n_samples; ++i) {
      const double* bi = inner.data() + i * per_q;
      double z = 0.0;
      for (std::size_t r = 0; r < per_q; ++r) z += aq[r] * bi[r];
      transform_eval_all(shape.transform, z, 1, phi);
      basis_eval_all(shape.outer_basis, phi[0], 1, outer.data());
      double wd = 0.0;
      for (int k = 0; k < n_d; ++k) wd += cq[k] * outer[n_d + k];
      w[i] = wd * phi[1];
      std::memcpy(outer_vals.data() + i * n_d, outer.data(), sizeof(double) * n_d);
    }
    for (std::size_t i = 0; i < n_samples; ++i) {
      for (std::size_t j = i; j < n_samples; ++j) {
        s_acc[i * n_samples + j] += w[i] * w[j];
        double qsum = 0.0;
        const double* oi = outer_vals.data() + i * n_d;
        const double* oj = outer_vals.data() + j * n_d;
        for (int k = 0; k < n_d; ++k) qsum += oi[k] * oj[k];
        q_acc[i * n_samples + j] += qsum;
      }
    }
  }

  GramReport report;
  report.n = n_samples;
  report.g.assign(n_samples * n_samples, 0.0);
  const double scale = 1.0 / (static_cast<double>(m) * static_cast<double>(n_samples));
  for (std::size_t i = 0; i < n_samples; ++i) {
    for (std::size_t j = i; j < n_samples; ++j) {
      const double v =
          scale * (b_pair[i * n_samples + j] * s_acc[i * n_samples + j] + q_acc[i * n_samples + j]);
      report.g[i * n_samples + j] = v;
      report.g[j * n_samples + i] = v;
    }
  }
  report.eigenvalues = sym_eig(report.n, report.g.data());
  report.sigma_min = report.eigenvalues.front();
  report.sigma_max = report.eigenvalues.back();
  return report;
}

double GramMeanEstimate::stderr_spectral() const {
  if (report.n == 0) return 0.0;
  const auto eig = sym_eig(report.n, stderr_entries.data());
  return std::max(std::abs(eig.front()), std::abs(eig.back()));
}

GramMeanEstimate estimate_G_infinity(const KanShape& shape, const Dataset& data, int num_seeds,
                                     std::uint64_t base_seed) {
  if (num_seeds < 1) throw std::invalid_argument("estimate_G_infinity: num_seeds must be >= 1");
  data.validate();

  std::vector<GramReport> reports(num_seeds);
  const unsigned workers = std::max(1u, std::min(std::thread::hardware_concurrency(), 8u));
  std::vector<std::future<void>> futs;
  std::atomic<int> next{0};
  for (unsigned wkr = 0; wkr < workers; ++wkr) {
    futs.push_back(std::async(std::launch::async, [&] {
      for (int s = next.fetch_add(1); s < num_seeds; s = next.fetch_add(1)) {
        const KanParams params = init_params(shape, base_seed + static_cast<std::uint64_t>(s));
        reports[s] = gram(assemble_D(params, data));
      }
    }));
  }
  for (auto& f : futs) f.get();

  const std::size_t n = reports.front().n;
  GramMeanEstimate out;
  out.num_seeds = num_seeds;
  out.report.n = n;
  out.report.g.assign(n * n, 0.0);
  out.stderr_entries.assign(n * n, 0.0);
  for (int s = 0; s < num_seeds; ++s) {
    for (std::size_t i = 0; i < n * n; ++i) out.report.g[i] += reports[s].g[i];
  }
  for (std::size_t i = 0; i < n * n; ++i) out.report.g[i] /= num_seeds;
  if (num_seeds > 1) {
    for (int s = 0; s < num_seeds; ++s) {
      for (std::size_t i = 0; i < n * n; ++i) {
        const double d = reports[s].g[i] - out.report.g[i];
        out.stderr_entries[i] += d * d;
      }
    }
    for (std::size_t i = 0; i < n * n; ++i) {
      out.stderr_entries[i] =
          std::sqrt(out.stderr_entries[i] / (num_seeds - 1) / static_cast<double>(num_seeds));
    }
  }
  out.report.eigenvalues = sym_eig(n, out.report.g.data());
  out.report.sigma_min = out.report.eigenvalues.front();
  out.report.sigma_max = out.report.eigenvalues.back();
  return out;
}

DistinctnessReport distinctness_check(const Dataset& data) {
  data.validate();
  DistinctnessReport report;
  for (std::size_t i = 0; i < data.rows; ++i) {
    for (std::size_t j = i + 1; j < data.rows; ++j) {
      if (std::memcmp(data.row(i), data.row(j), sizeof(double) * data.cols) == 0) {
        report.duplicates.emplace_back(i + 1, j + 1);
      }
    }
  }
  report.distinct = report.duplicates.empty();
  return report;
}

double gram_deviation(const GramReport& g_t, const GramReport& g_ref) {
  if (g_t.n != g_ref.n) throw std::invalid_argument("gram_deviation: dimension mismatch");
  std::vector<double> diff(g_t.n * g_t.n);
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = g_t.g[i] - g_ref.g[i];
  const auto eig = sym_eig(g_t.n, diff.data());
  if (eig.empty()) return 0.0;
  return std::max(std::abs(eig.front()), std::abs(eig.back()));
}

LazyRadii LazyRadii::from_init(const KanShape& shape, double sigma_min, double init_loss,
                               double delta) {
  LazyRadii radii;
  if (!(sigma_min > 0.0)) {
    return unbounded();  // theory regime void; stopping time is uninformative
  }
  const double n_d = shape.n_d;
  const double n = shape.n;
  const double m = shape.m;
  // The init draw itself must sit inside half the per-unit ceiling: the
  // chi-squared tail bound on max_q ||c_q(0)|| is sqrt(n_d) + sqrt(log(m/d)),
  // so the ceiling carries a factor 2 on top of it.
  radii.m_c = 2.0 * (std::sqrt(n_d) + std::sqrt(std::log(m / delta)));
  // Drift ceilings. Two regimes, take whichever is larger:
  //  - the Gram sensitivity radius sigma*sqrt(m)/(n_d^{5/2} n^{3/2} M_c^2),
  //    which is the binding one once m is astronomically large;
  //  - the lazy-training drift bound ~ sqrt(n_d) ||s(0)|| / sigma, inflated
  //    by 4 so in-regime runs sit well below the half-radius trigger while
  //    divergent runs still trip it quickly.
  const double sensitivity =
      sigma_min * std::sqrt(m) / (std::pow(n_d, 2.5) * std::pow(n, 1.5) * radii.m_c * radii.m_c);
  const double drift_bound = 4.0 * std::sqrt(n_d) * std::sqrt(std::max(init_loss, 0.0)) / sigma_min;
  radii.r_a = std::max(sensitivity, drift_bound);
  radii.r_c = radii.r_a;
  return radii;
}

LazyRadii LazyRadii::unbounded() {
  LazyRadii radii;
  radii.r_a = radii.r_c = radii.m_c = std::numeric_limits<double>::infinity();
  return radii;
}

}  // namespace kan
