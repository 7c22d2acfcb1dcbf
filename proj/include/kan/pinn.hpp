#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kan/model.hpp"
#include "kan/optim.hpp"

namespace kan {

/// Value, gradient, and Hessian of a twice-differentiable function; the form
/// the differential operator consumes.
struct SmoothFunction {
  std::function<double(const double* x)> value;
  std::function<void(const double* x, double* grad)> gradient;  // n entries
  std::function<void(const double* x, double* hess)> hessian;   // n x n row-major
};

/// Linear second-order PDE problem on a box: coefficient fields of
///   D[u] = du/dx_1 - sum_{i,j>=2} h_ij d2u/dx_idx_j - sum_{i>=2} g_i du/dx_i - l u
/// (coordinate 1 is time), interior samples with source targets, boundary
/// samples with value targets.
struct PdeProblem {
  int n = 2;
  std::function<void(const double* x, double* h_out)> h;  // fills n x n, symmetric in i,j >= 2
  std::function<void(const double* x, double* g_out)> g;  // fills n entries
  std::function<double(const double* x)> l;
  std::function<double(const double* x)> v;     // interior source
  std::function<double(const double* x)> ubar;  // boundary data

  Dataset interior;  // N1 x n, y_i = v(x_i)
  Dataset boundary;  // N2 x n, y_i = ubar(x_i)

  // Set by make_manufactured_problem; value may be empty for custom problems.
  SmoothFunction exact;
  std::string kind;
  std::uint64_t seed = 0;

  void validate() const;
  OperatorCoeffs coeffs_at(const double* x) const;
  std::size_t n1() const { return interior.rows; }
  std::size_t n2() const { return boundary.rows; }
};

/// Interior/boundary batch sizes. The expectation identities behind the SGD
/// analysis need b1/N1 == b2/N2 exactly; construction enforces it.
struct PinnBatchConfig {
  int b1 = 1;
  int b2 = 1;

  PinnBatchConfig(int b1_, int b2_, std::size_t n1, std::size_t n2);
};

/// D[u](x) for an explicit twice-differentiable u.
double apply_operator(const PdeProblem& problem, const SmoothFunction& u, const double* x);

/// (1/N1) sum (D[f](x_i) - v_i)^2 + (1/N2) sum (f(xbar_i) - u_i)^2, with the
/// operator applied to the network's exact input derivatives.
double pde_loss(const KanParams& params, const PdeProblem& problem);

/// Same loss with an explicit callable in place of the network (manufactured
/// solutions plug in here).
double pde_loss_callable(const SmoothFunction& u, const PdeProblem& problem);

/// Exact loss gradient: operator parameter-gradients on interior samples,
/// plain parameter-gradients on boundary samples, interior first.
ParamGrad pde_loss_grad(const KanParams& params, const PdeProblem& problem);

struct PdeMinibatchSample {
  double value = 0.0;
  std::vector<std::size_t> interior_idx;
  std::vector<std::size_t> boundary_idx;
};

/// Mini-batch loss (1/b1) sum_I (...)^2 + (1/b2) sum_Ibar (...)^2 with both
/// index sets i.i.d. uniform with replacement; interior indices drawn first.
PdeMinibatchSample pde_minibatch_loss(const KanParams& params, const PdeProblem& problem,
                                      const PinnBatchConfig& batch, Rng& rng);

/// Manufactured problems with analytically zero interior residual:
///   heat1d:      u = exp(-t) sin(pi xi) on [0,1]^2, h_22 = 1/pi^2
///   advection1d: u = sin(pi (xi - t)) on [0,1]^2, g_2 = -1
/// Interior points uniform in the open box; boundary points uniform on the
/// full box boundary (the t = 0 face counts as boundary). Targets come from
/// the exact solution.
PdeProblem make_manufactured_problem(const std::string& kind, std::size_t n1, std::size_t n2,
                                     std::uint64_t seed);

/// The physics-informed objective as a trainable residual problem: residuals
/// are interior operator mismatches then boundary value mismatches, each
/// block normalized by sqrt of its sample count (Appendix-C column order).
class PdeResidualProblem final : public ResidualProblem {
 public:
  PdeResidualProblem(PdeProblem problem, PinnBatchConfig batch, bool with_replacement = true);

  std::size_t residual_count() const override { return problem_.n1() + problem_.n2(); }
  std::vector<double> residuals(const KanParams& params) const override;
  std::vector<double> residuals_and_gradient(const KanParams& params,
                                             ParamGrad* grad) const override;
  void minibatch_gradient(const KanParams& params, const std::vector<double>& s_full, Rng& rng,
                          ParamGrad& grad) const override;
  bool full_batch() const override;
  DerivMatrix assemble(const KanParams& params) const override;

  const PdeProblem& problem() const { return problem_; }
  const PinnBatchConfig& batch() const { return batch_; }

 private:
  PdeProblem problem_;
  PinnBatchConfig batch_;
  bool with_replacement_;
  std::vector<OperatorCoeffs> interior_coeffs_;  // frozen at construction
};

/// The PINN Gram matrix assembled by per-unit blocked inner products, never
/// materializing D; cross-checks the explicit-column route at desk scale.
GramReport pinn_gram_blocked(const KanParams& params, const PdeResidualProblem& problem);

}  // namespace kan
