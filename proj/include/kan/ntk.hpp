#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "kan/model.hpp"

namespace kan {

/// Per-sample derivative matrix D, P x N with P = m*n*n_d + m*n_d. Column j
/// stacks (ds_j/da, ds_j/dc). Stored column-major so each sample's gradient
/// is contiguous.
struct DerivMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double* col(std::size_t j) { return data.data() + j * rows; }
  const double* col(std::size_t j) const { return data.data() + j * rows; }
};

/// Symmetric Gram matrix G = D^T D with its spectrum.
struct GramReport {
  std::size_t n = 0;
  std::vector<double> g;            // n x n row-major
  std::vector<double> eigenvalues;  // ascending
  double sigma_min = 0.0;
  double sigma_max = 0.0;

  double at(std::size_t i, std::size_t j) const { return g[i * n + j]; }
};

/// Eigenvalues of the symmetrized (M + M^T)/2 by cyclic Jacobi rotations,
/// sorted ascending. Off-diagonal Frobenius norm at convergence is at most
/// 1e-12 * ||M||_F. Throws if M is non-symmetric beyond 1e-9 max-norm, has
/// non-finite entries, or the dimension exceeds the dense limit (~512).
std::vector<double> sym_eig(std::size_t n, const double* m);
std::vector<double> sym_eig(const GramReport& report);

DerivMatrix assemble_D(const KanParams& params, const Dataset& data);

GramReport gram(const DerivMatrix& d);

/// Same Gram matrix from the closed-form per-unit sums G_ij = S_ij + Q_ij,
/// accumulated per hidden unit without materializing D. Independent
/// computational route used to cross-check assemble_D + gram.
GramReport gram_closed_form(const KanParams& params, const Dataset& data);

/// Monte-Carlo estimate of the expected Gram matrix over the initialization:
/// elementwise mean over num_seeds independent draws (seeds base_seed,
/// base_seed+1, ...), with the elementwise standard error of the mean.
struct GramMeanEstimate {
  GramReport report;
  std::vector<double> stderr_entries;  // n x n row-major
  int num_seeds = 0;

  /// Spectral-norm scale of the entrywise standard-error matrix; the
  /// perturbation budget for statements about sigma_min of the estimate.
  double stderr_spectral() const;
};

GramMeanEstimate estimate_G_infinity(const KanShape& shape, const Dataset& data, int num_seeds,
                                     std::uint64_t base_seed);

/// Exact row-equality scan (no tolerance); pairs are 1-based.
struct DistinctnessReport {
  bool distinct = true;
  std::vector<std::pair<std::size_t, std::size_t>> duplicates;
};

DistinctnessReport distinctness_check(const Dataset& data);

/// Spectral norm of G_t - G_ref (largest |eigenvalue| via sym_eig).
double gram_deviation(const GramReport& g_t, const GramReport& g_ref);

/// Stability thresholds for the lazy-training stopping time, in the shape the
/// theory prescribes:
///   M_c  ~ sqrt(n_d) + sqrt(log(m/delta))   (per-unit outer norm ceiling)
///   R_a, R_c                                 (parameter drift ceilings)
/// The stopping time trips when a measured quantity exceeds half its radius.
/// Constants are diagnostic calibration, not theory claims; see from_init.
struct LazyRadii {
  double r_a = 0.0;
  double r_c = 0.0;
  double m_c = 0.0;
  // Latest measured values, filled by the trainer.
  double drift_a = 0.0;
  double drift_c = 0.0;
  double max_cq = 0.0;

  /// Thresholds computed from the measured initialization: sigma_min of G(0)
  /// and the initial loss. delta defaults to 0.01.
  static LazyRadii from_init(const KanShape& shape, double sigma_min, double init_loss,
                             double delta = 0.01);
  /// No-op radii: the stopping time never trips.
  static LazyRadii unbounded();
};

}  // namespace kan
