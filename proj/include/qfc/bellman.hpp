// Copyright 2026 The qfc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "qfc/ensemble.hpp"
#include "qfc/filtering.hpp"
#include "qfc/io.hpp"
#include "qfc/lqg.hpp"
#include "qfc/master.hpp"

// Dynamic-programming checks: HJB residuals for the quadratic LQG value,
// finite-difference derivatives of state functionals, the counting-case
// Pontryagin Hamiltonian and Bellman residual, and Monte Carlo policy costs.

namespace qfc {

// ---------------------------------------------------------------------------
// Quadratic value S(t, x, Σ) = xᵀΩ(t)x + Tr[Ω(t)Σ] + α(t).

struct QuadraticValue {
  TimeGrid grid;
  std::vector<RealMatrix> omega;
  std::vector<double> alpha;
  /// dΩ/dt and dα/dt from the ODE right sides at the solved path.
  std::vector<RealMatrix> omega_rate;
  std::vector<double> alpha_rate;

  std::size_t index(double t) const {
    const double r = t / grid.dt;
    const double k = std::round(r);
    if (k < 0.0 || k > static_cast<double>(grid.steps) || std::abs(r - k) > 1e-9 * std::max(1.0, r))
      throw Error(ErrorKind::GridMismatch, "time " + format_double(t) + " is not on the value grid");
    return static_cast<std::size_t>(k);
  }

  double operator()(double t, const RealVector& x, const RealMatrix& sigma) const {
    const std::size_t k = index(t);
    return x.dot(omega[k] * x) + (omega[k] * sigma).trace() + alpha[k];
  }

  /// Same value with Ω shifted by eps·I and the rates left unchanged.
  QuadraticValue perturbed(double eps) const {
    QuadraticValue out = *this;
    for (auto& o : out.omega) o += eps * RealMatrix::Identity(o.rows(), o.cols());
    return out;
  }
};

inline QuadraticValue build_quadratic_value(const LinearModel& model, const CostSpec& cost, const MatrixPath& sigma,
                                            const MatrixPath& omega) {
  require_same_grid(sigma, omega);
  QuadraticValue v;
  v.grid = omega.grid;
  v.omega = omega.values;
  v.alpha = alpha_path(model, cost, sigma, omega);
  for (std::size_t k = 0; k < omega.values.size(); ++k) {
    v.omega_rate.push_back(control_riccati_rhs(model, cost, omega[k]));
    v.alpha_rate.push_back(-alpha_rate(model, cost, sigma[k], omega[k]));
  }
  return v;
}

/// u = ½ C_fᵀ ∇ₓS + E_f x̂ for a gradient column ∇ₓS.
inline RealVector optimal_control_quadratic(const RealVector& grad, const LinearModel& model, const CostSpec& cost,
                                            const RealVector& xhat) {
  return 0.5 * model.C_f.transpose() * grad + cost.E_f * xhat;
}

/// Same with ∇ₓS = 2Ω(t)x̂.
inline RealVector optimal_control_quadratic(const QuadraticValue& v, double t, const LinearModel& model,
                                            const CostSpec& cost, const RealVector& xhat) {
  return optimal_control_quadratic(2.0 * v.omega[v.index(t)] * xhat, model, cost, xhat);
}

/// −∂S/∂t minus the minimized generator-plus-cost at (t, x, Σ):
///   ∇ₓS·(−Ax − C_f u*) + |u* − E_f x|² + xᵀHx + Tr[(H + E_fᵀE_f)Σ]
///   + Tr[Ω Σ̇(Σ)] + ½Tr[∇ₓ²S K Kᵀ],
/// with Σ̇ the filter Riccati right side and K = ΣB_eᵀ + F_e. Vanishes on
/// the covariance path the value was built from.
inline double hjb_residual_lqg(const QuadraticValue& v, const LinearModel& model, const CostSpec& cost, double t,
                               const RealVector& x, const RealMatrix& sigma) {
  const std::size_t k = v.index(t);
  const RealMatrix& omega = v.omega[k];
  const double dSdt = x.dot(v.omega_rate[k] * x) + (v.omega_rate[k] * sigma).trace() + v.alpha_rate[k];

  const RealVector grad = 2.0 * omega * x;
  const RealVector u = optimal_control_quadratic(grad, model, cost, x);
  const RealMatrix K = kalman_gain(model, sigma);
  const double drift = grad.dot(-model.A * x - model.C_f * u);
  const double running = running_cost(cost, x, u, sigma);
  const double cov_drift = (omega * filter_riccati_rhs(model, sigma)).trace();
  const double diffusion = 0.5 * (2.0 * omega * K * K.transpose()).trace();
  return -dSdt - (drift + running + cov_drift + diffusion);
}

struct ResidualPoint {
  double t = 0.0;
  std::size_t id = 0;
  double residual = 0.0;
};

inline std::string residual_sweep_csv(const std::vector<ResidualPoint>& points) {
  CsvWriter csv({"t", "point", "residual"});
  for (const auto& p : points) csv.row({p.t, static_cast<double>(p.id), p.residual});
  return csv.str();
}

// ---------------------------------------------------------------------------
// State functionals.

/// Functional S(t, ς). Evaluated on Hermitian unit-trace matrices, which
/// includes the small excursions outside the state cone that finite
/// differences make near pure states.
struct StateFunctional {
  std::function<double(double, const Matrix&)> evaluate;
  /// Admissible controls for the Hamiltonian supremum.
  std::vector<RealVector> controls;
};

/// Generalized Gell-Mann basis of traceless Hermitian n×n matrices,
/// normalized to tr[τ_a τ_b] = 2δ_ab.
inline std::vector<Matrix> gell_mann_basis(Eigen::Index n) {
  std::vector<Matrix> out;
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index k = j + 1; k < n; ++k) {
      Matrix s = Matrix::Zero(n, n), a = Matrix::Zero(n, n);
      s(j, k) = s(k, j) = 1.0;
      a(j, k) = -kI;
      a(k, j) = kI;
      out.push_back(std::move(s));
      out.push_back(std::move(a));
    }
  for (Eigen::Index l = 1; l < n; ++l) {
    Matrix d = Matrix::Zero(n, n);
    const double c = std::sqrt(2.0 / static_cast<double>(l * (l + 1)));
    for (Eigen::Index j = 0; j < l; ++j) d(j, j) = c;
    d(l, l) = -c * static_cast<double>(l);
    out.push_back(std::move(d));
  }
  return out;
}

namespace detail {

inline double checked(double v) {
  if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "functional returned a non-finite value");
  return v;
}

}  // namespace detail

/// Traceless representative of the gradient under the trace pairing, by
/// central differences along the Gell-Mann directions. Error O(h²).
inline Matrix frechet_gradient(const std::function<double(const Matrix&)>& f, const Matrix& rho, double h = 1e-4) {
  if (!(h >= 1e-6 && h <= 1e-3)) throw Error(ErrorKind::InvalidArgument, "difference step must lie in [1e-6, 1e-3]");
  require_square(rho, "gradient point");
  Matrix grad = Matrix::Zero(rho.rows(), rho.cols());
  for (const Matrix& tau : gell_mann_basis(rho.rows())) {
    const double d = (detail::checked(f(rho + h * tau)) - detail::checked(f(rho - h * tau))) / (2.0 * h);
    grad += (0.5 * d) * tau;
  }
  return hermitian_part(grad);
}

inline Matrix frechet_gradient(const StateFunctional& F, double t, const Matrix& rho, double h = 1e-4) {
  return frechet_gradient([&](const Matrix& r) { return F.evaluate(t, r); }, rho, h);
}

/// Second directional derivative ⟨δ⊗δ, ∇⊗∇f⟩ by the three-point rule. Error
/// O(h²‖δ‖⁴) plus O(ε/h²) rounding.
inline double hessian_contraction(const std::function<double(const Matrix&)>& f, const Matrix& rho,
                                  const Matrix& delta, double h = 1e-3) {
  const double fp = detail::checked(f(rho + h * delta));
  const double f0 = detail::checked(f(rho));
  const double fm = detail::checked(f(rho - h * delta));
  return (fp - 2.0 * f0 + fm) / (h * h);
}

// ---------------------------------------------------------------------------
// Pontryagin Hamiltonian.

/// Cost operator č(u).
using ControlCost = std::function<Matrix(const RealVector&)>;
/// Controlled generator λ_u applied to an operator.
using ControlledGenerator = std::function<Matrix(const RealVector&, const Matrix&)>;

/// λ_u of a filter model: the Lindblad generator after coherent control on
/// the feedback channels.
inline ControlledGenerator controlled_generator(const FilterModel& m) {
  return [m](const RealVector& u, const Matrix& x) -> Matrix {
    if (m.feedback.empty()) return lindblad_apply(m.coupling, x);
    return lindblad_apply(coherent_control_apply(m.coupling, u, m.feedback, m.estimation()), x);
  };
}

inline ControlCost zero_control_cost(Eigen::Index dim) {
  return [dim](const RealVector&) -> Matrix { return Matrix::Zero(dim, dim); };
}

struct HamiltonianValue {
  double value = 0.0;
  std::size_t argmax = 0;
};

/// sup over u ∈ U of ⟨λ_u[q̌], p̌⟩ − ⟨ϱ − q̌, č(u)⟩; ties go to the lowest
/// index. An empty ϱ means ϱ = 0.
inline HamiltonianValue pontryagin_hamiltonian(const Matrix& q, const Matrix& p, const ControlCost& cost,
                                               const ControlledGenerator& generator,
                                               const std::vector<RealVector>& controls, const Matrix& rho_stationary = {}) {
  if (controls.empty()) throw Error(ErrorKind::InvalidArgument, "control set is empty");
  require_same_dim(q, p, "Hamiltonian arguments");
  const Matrix base = rho_stationary.size() == 0 ? Matrix(Matrix::Zero(q.rows(), q.cols())) : rho_stationary;
  require_same_dim(q, base, "stationary element");
  HamiltonianValue best{-std::numeric_limits<double>::infinity(), 0};
  for (std::size_t i = 0; i < controls.size(); ++i) {
    const double gain = trace_product(generator(controls[i], q), p).real();
    const double lagrangian = trace_product(base - q, cost(controls[i])).real();
    const double v = detail::checked(gain - lagrangian);
    if (v > best.value) best = {v, i};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Counting Bellman residual.

/// Weight of the Feller term ½ Σ ν △S, with △S = 2(S(α) − S − ⟨δ, ∇S⟩).
inline constexpr double kFellerFactor = 0.5;

struct CountingBellmanOptions {
  double h = 1e-4;   ///< state difference step
  double ht = 1e-4;  ///< time difference step
  ControlCost cost;  ///< č(u); zero when empty
  Matrix rho_stationary;
  double feller_factor = kFellerFactor;
};

struct CountingResidual {
  double residual = 0.0;
  double time_derivative = 0.0;  ///< ∂S/∂t
  double hamiltonian = 0.0;      ///< H(q̌(ς), ∇S)
  double feller = 0.0;           ///< factor · Σ ν △S
  std::size_t argmax = 0;
  Matrix gradient;
};

/// −∂S/∂t + H(ϱ − ς, ∇S) − factor · Σ_i ν_i △ⁱS at (t, ς). Channels with
/// ν below the zero-intensity threshold contribute nothing.
inline CountingResidual bellman_residual_counting(const StateFunctional& S, const FilterModel& m, double t,
                                                  const DensityMatrix& rho, const CountingBellmanOptions& opt = {}) {
  m.validate();
  if (!m.diffusive.empty()) throw Error(ErrorKind::InvalidArgument, "counting residual needs counting channels only");
  if (S.controls.empty()) throw Error(ErrorKind::InvalidArgument, "control set is empty");
  const Matrix& r = rho.matrix();
  CountingResidual out;
  out.time_derivative =
      (detail::checked(S.evaluate(t + opt.ht, r)) - detail::checked(S.evaluate(t - opt.ht, r))) / (2.0 * opt.ht);
  out.gradient = frechet_gradient(S, t, r, opt.h);

  const ControlCost cost = opt.cost ? opt.cost : zero_control_cost(rho.dim());
  const Matrix base = opt.rho_stationary.size() == 0 ? Matrix(Matrix::Zero(r.rows(), r.cols())) : opt.rho_stationary;
  const auto ham = pontryagin_hamiltonian(base - r, out.gradient, cost, controlled_generator(m), S.controls, base);
  out.hamiltonian = ham.value;
  out.argmax = ham.argmax;

  const double s0 = detail::checked(S.evaluate(t, r));
  for (std::size_t i : m.counting) {
    const Matrix& l = m.coupling.jump_ops[i];
    const double nu = counting_intensity(r, l);
    if (nu < kZeroIntensity) continue;
    const Matrix jumped = l * r * l.adjoint() / nu;
    const double diff = 2.0 * (detail::checked(S.evaluate(t, jumped)) - s0 -
                               trace_product(jumped - r, out.gradient).real());
    out.feller += nu * diff;
  }
  out.feller *= opt.feller_factor;
  out.residual = -out.time_derivative + out.hamiltonian - out.feller;
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo policy comparison.

/// Policy costs with pairwise differences (policy j minus policy i, i < j)
/// computed trajectory by trajectory on common random numbers.
struct PolicyComparison {
  std::vector<PolicyCost> policies;
  struct Difference {
    std::size_t first, second;
    double mean, stderr_;
  };
  std::vector<Difference> differences;
};

inline PolicyComparison compare_policies(std::vector<PolicyCost> policies) {
  PolicyComparison out;
  for (std::size_t i = 0; i < policies.size(); ++i)
    for (std::size_t j = i + 1; j < policies.size(); ++j) {
      std::vector<double> d(policies[i].costs.size());
      for (std::size_t n = 0; n < d.size(); ++n) d[n] = policies[j].costs[n] - policies[i].costs[n];
      const PolicyCost s = summarize_costs(std::move(d));
      out.differences.push_back({i, j, s.mean, s.stderr_});
    }
  out.policies = std::move(policies);
  return out;
}

inline Json policy_comparison_json(const PolicyComparison& c, const std::vector<std::string>& names) {
  if (names.size() != c.policies.size()) throw Error(ErrorKind::InvalidArgument, "one name per policy required");
  Json out = Json::object();
  Json pol = Json::array();
  for (std::size_t i = 0; i < names.size(); ++i)
    pol.push_back({{"name", names[i]},
                   {"mean", c.policies[i].mean},
                   {"stderr", c.policies[i].stderr_},
                   {"trajectories", c.policies[i].costs.size()}});
  out["policies"] = std::move(pol);
  Json diff = Json::array();
  for (const auto& d : c.differences)
    diff.push_back({{"first", names[d.first]}, {"second", names[d.second]}, {"mean", d.mean}, {"stderr", d.stderr_}});
  out["differences"] = std::move(diff);
  return out;
}

/// LQG policies on the innovation-driven Kalman belief.
inline PolicyComparison policy_cost_mc(const LinearModel& model, const CostSpec& cost, const GaussianBelief& belief0,
                                       const MatrixPath& sigma, const std::vector<BeliefPolicy>& policies,
                                       std::uint64_t seed, const ClosedLoopOptions& opt) {
  return compare_policies(simulate_closed_loop(model, cost, belief0, sigma, policies, seed, opt).policies);
}

/// Running cost ⟨ς, č(u)⟩ and terminal cost ⟨ς, š⟩.
struct DensityCost {
  ControlCost running;
  Matrix terminal;
};

struct PolicyMcOptions {
  std::size_t trajectories = 1000;
  std::size_t threads = 1;
  SimulationOptions simulation;
};

/// Filter trajectories under each feedback law on common random numbers;
/// the running cost uses the left-point rule on the simulation grid.
inline PolicyComparison policy_cost_mc(const FilterModel& m, const std::vector<FeedbackLaw>& laws,
                                       const DensityCost& cost, const DensityMatrix& rho0, double T, double dt,
                                       std::uint64_t seed, const PolicyMcOptions& opt) {
  m.validate();
  if (opt.trajectories == 0) throw Error(ErrorKind::InvalidArgument, "policy comparison needs trajectories");
  require_same_dim(rho0.matrix(), cost.terminal, "terminal cost");
  const TimeGrid grid = TimeGrid::make(T, dt);
  std::vector<std::vector<double>> costs(laws.size(), std::vector<double>(opt.trajectories, 0.0));

  struct Sink {
    const DensityCost* cost;
    double dt;
    double total = 0.0;
    void step(const StepData& s) {
      const Matrix c = cost->running ? cost->running(*s.control)
                                     : Matrix(Matrix::Zero(s.state->dim(), s.state->dim()));
      total += dt * pair(*s.state, c).real();
    }
    void finish(const DensityMatrix& final_state) { total += pair(final_state, cost->terminal).real(); }
  };
  struct Unit {};
  auto work = [&](std::size_t i, Unit&) {
    for (std::size_t p = 0; p < laws.size(); ++p) {
      Sink sink{&cost, grid.dt};
      run_trajectory(m, laws[p], rho0, grid, seed, i, sink, opt.simulation);
      costs[p][i] = sink.total;
    }
  };
  run_ensemble<Unit>(opt.trajectories, opt.threads, [] { return Unit{}; }, work, [](Unit&, const Unit&) {});

  std::vector<PolicyCost> out;
  for (auto& c : costs) out.push_back(summarize_costs(std::move(c)));
  return compare_policies(std::move(out));
}

}  // namespace qfc
