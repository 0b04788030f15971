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

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qfc/ensemble.hpp"
#include "qfc/grid.hpp"
#include "qfc/io.hpp"
#include "qfc/operators.hpp"
#include "qfc/rng.hpp"

// Linear-Gaussian specialization in moment coordinates.
//
// Vectors are columns here. A belief mean x̂ is a column of length m, so a
// row-vector formula x̂Aᵀ reads A x̂ and the control u = x̂Lᵀ reads L x̂.
//
//   dx̂ = −(A x̂ + C_f u) dt + K dŴ,   dŴ = dY − B_e x̂ dt,   K = Σ B_eᵀ + F_e
//   dΣ/dt = G − A_e Σ − Σ A_eᵀ − Σ B_eᵀ B_e Σ,                A_e = A + F_e B_e
//   −dΩ/dt = H − Ω A_f − A_fᵀ Ω − Ω C_f C_fᵀ Ω,                A_f = A + C_f E_f
//   Lᵀ = Ω C_f + E_fᵀ
//
// Shapes: A, G, H, J are m×m; B_e is d_e×m; F_e is m×d_e; C_f is m×d_f;
// E_f is d_f×m.

namespace qfc {

namespace detail {

inline void require_shape(const RealMatrix& x, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  if (x.rows() != rows || x.cols() != cols)
    throw Error(ErrorKind::DimensionMismatch, what + ": expected " + std::to_string(rows) + "x" +
                                                  std::to_string(cols) + ", got " + std::to_string(x.rows()) +
                                                  "x" + std::to_string(x.cols()));
}

inline bool finite(const RealMatrix& x) { return x.allFinite(); }

inline RealMatrix symmetrized(const RealMatrix& x) { return (x + x.transpose()) * 0.5; }

inline double symmetry_defect(const RealMatrix& x) { return max_abs(x - x.transpose()); }

inline double min_sym_eigenvalue(const RealMatrix& x) {
  if (x.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<RealMatrix> es(symmetrized(x), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline void require_psd(const RealMatrix& x, double tol, const std::string& what) {
  if (!finite(x)) throw Error(ErrorKind::NonFinite, what + " has non-finite entries");
  if (symmetry_defect(x) > tol) throw Error(ErrorKind::NotHermitian, what + " not symmetric");
  if (min_sym_eigenvalue(x) < -tol) throw Error(ErrorKind::NotPositive, what + " not positive semidefinite");
}

}  // namespace detail

/// Linear quantum (or classical) model in phase-space coordinates.
struct LinearModel {
  // Quantum inputs; empty Λ blocks and zero J for the coefficient route.
  RealMatrix J;
  Matrix lambda_e, lambda_f;
  RealMatrix minv;
  double hbar = 1.0;

  // Drift and noise coefficients.
  RealMatrix A, B_e, C_f, F_e, E_f, G, H;

  Eigen::Index dim() const noexcept { return A.rows(); }
  Eigen::Index estimation_channels() const noexcept { return B_e.rows(); }
  Eigen::Index feedback_channels() const noexcept { return C_f.cols(); }

  RealMatrix filter_drift() const { return A + F_e * B_e; }

  void validate() const {
    const Eigen::Index m = A.rows();
    if (m == 0) throw Error(ErrorKind::DimensionMismatch, "empty linear model");
    detail::require_shape(A, m, m, "A");
    detail::require_shape(J, m, m, "J");
    detail::require_shape(B_e, B_e.rows(), m, "B_e");
    detail::require_shape(F_e, m, B_e.rows(), "F_e");
    detail::require_shape(C_f, m, C_f.cols(), "C_f");
    detail::require_shape(E_f, C_f.cols(), m, "E_f");
    detail::require_shape(G, m, m, "G");
    detail::require_shape(H, m, m, "H");
    for (const RealMatrix* x : {&A, &J, &B_e, &F_e, &C_f, &E_f, &G, &H})
      if (!detail::finite(*x)) throw Error(ErrorKind::NonFinite, "linear model has non-finite entries");
    if (max_abs(J + J.transpose()) > 1e-12)
      throw Error(ErrorKind::InvalidArgument, "J must be antisymmetric");
    detail::require_psd(G, 1e-10, "G");
    detail::require_psd(H, 1e-10, "H");
  }
};

/// Builds the coefficients from the canonical structure J, the estimation
/// and feedback couplings Λ_e (d_e×m) and Λ_f (d_f×m), the Hamiltonian
/// matrix Minv and ħ. Deterministic: equal inputs give bitwise equal output.
inline LinearModel derive_matrices(const RealMatrix& J, const Matrix& lambda_e, const Matrix& lambda_f,
                                   const RealMatrix& minv, double hbar) {
  const Eigen::Index m = J.rows();
  if (m == 0) throw Error(ErrorKind::DimensionMismatch, "J must be non-empty");
  detail::require_shape(J, m, m, "J");
  detail::require_shape(minv, m, m, "Minv");
  if (lambda_e.cols() != m || lambda_f.cols() != m)
    throw Error(ErrorKind::DimensionMismatch, "coupling matrices need m columns");
  if (!(hbar > 0.0) || !std::isfinite(hbar)) throw Error(ErrorKind::InvalidArgument, "hbar must be positive");
  if (!J.allFinite() || !minv.allFinite() || !all_finite(lambda_e) || !all_finite(lambda_f))
    throw Error(ErrorKind::NonFinite, "linear model inputs have non-finite entries");
  if (max_abs(J + J.transpose()) > 1e-12) throw Error(ErrorKind::InvalidArgument, "J must be antisymmetric");
  if (detail::symmetry_defect(minv) > 1e-12) throw Error(ErrorKind::InvalidArgument, "Minv must be symmetric");

  LinearModel out;
  out.J = J;
  out.lambda_e = lambda_e;
  out.lambda_f = lambda_f;
  out.minv = minv;
  out.hbar = hbar;

  const Matrix gram = lambda_e.transpose() * lambda_e.conjugate() + lambda_f.transpose() * lambda_f.conjugate();
  out.A = ((hbar * gram.imag() + minv) * J).transpose();

  const RealMatrix b_f = 2.0 * lambda_f.real();
  out.B_e = 2.0 * lambda_e.real();
  out.C_f = (b_f * J).transpose();
  out.F_e = (hbar * lambda_e.imag() * J).transpose();
  out.E_f = hbar * lambda_f.imag();

  const RealMatrix c_e = (out.B_e * J).transpose();
  const RealMatrix back_action = (lambda_f.adjoint() * lambda_f).real();
  out.G = detail::symmetrized(0.25 * hbar * hbar * c_e * c_e.transpose() +
                              hbar * hbar * J.transpose() * back_action * J);
  const RealMatrix readout = (lambda_e.adjoint() * lambda_e).real();
  out.H = detail::symmetrized(0.25 * hbar * hbar * b_f.transpose() * b_f + hbar * hbar * readout);
  return out;
}

/// Same as derive_matrices with one d×m coupling matrix whose rows are split
/// into estimation and feedback channels. Every nonzero row must be assigned
/// to exactly one of the two sets.
inline LinearModel derive_matrices(const RealMatrix& J, const Matrix& lambda,
                                   const std::vector<Eigen::Index>& estimation_rows,
                                   const std::vector<Eigen::Index>& feedback_rows, const RealMatrix& minv,
                                   double hbar) {
  std::vector<int> owner(static_cast<std::size_t>(lambda.rows()), 0);
  auto mark = [&](const std::vector<Eigen::Index>& rows, int tag) {
    for (Eigen::Index r : rows) {
      if (r < 0 || r >= lambda.rows()) throw Error(ErrorKind::InvalidArgument, "coupling row out of range");
      int& o = owner[static_cast<std::size_t>(r)];
      if (o != 0) throw Error(ErrorKind::ChannelOverlap, "coupling row " + std::to_string(r) + " assigned twice");
      o = tag;
    }
  };
  mark(estimation_rows, 1);
  mark(feedback_rows, 2);
  for (Eigen::Index r = 0; r < lambda.rows(); ++r)
    if (owner[static_cast<std::size_t>(r)] == 0 && max_abs(lambda.row(r)) > 0.0)
      throw Error(ErrorKind::InvalidArgument, "nonzero coupling row " + std::to_string(r) + " not assigned");

  auto take = [&](const std::vector<Eigen::Index>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), lambda.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = lambda.row(rows[k]);
    return out;
  };
  return derive_matrices(J, take(estimation_rows), take(feedback_rows), minv, hbar);
}

/// Classical route: coefficients supplied directly, J = 0.
inline LinearModel model_from_coefficients(const RealMatrix& A, const RealMatrix& B_e, const RealMatrix& C_f,
                                           const RealMatrix& F_e, const RealMatrix& E_f, const RealMatrix& G,
                                           const RealMatrix& H) {
  LinearModel out;
  out.A = A;
  out.B_e = B_e;
  out.C_f = C_f;
  out.F_e = F_e;
  out.E_f = E_f;
  out.G = G;
  out.H = H;
  out.J = RealMatrix::Zero(A.rows(), A.rows());
  out.minv = RealMatrix::Zero(A.rows(), A.rows());
  out.validate();
  return out;
}

struct HeisenbergReport {
  bool ok = false;
  double min_eig = 0.0;
};

/// Smallest eigenvalue of the Hermitian matrix Σ + (iħ/2)J.
inline HeisenbergReport heisenberg_check(const RealMatrix& sigma, const RealMatrix& J, double hbar) {
  detail::require_shape(J, sigma.rows(), sigma.cols(), "J");
  const Matrix m = sigma.cast<cplx>() + (kI * (0.5 * hbar)) * J.cast<cplx>();
  const double e = min_eigenvalue(hermitian_part(m));
  return {e >= -1e-9, e};
}

/// Gaussian posterior: mean and error covariance.
struct GaussianBelief {
  RealVector mean;
  RealMatrix cov;

  void validate(const LinearModel& model) const {
    const Eigen::Index m = model.dim();
    if (mean.size() != m) throw Error(ErrorKind::DimensionMismatch, "belief mean length");
    detail::require_shape(cov, m, m, "belief covariance");
    if (!mean.allFinite() || !cov.allFinite()) throw Error(ErrorKind::NonFinite, "belief has non-finite entries");
    if (detail::symmetry_defect(cov) > 1e-12) throw Error(ErrorKind::NotHermitian, "covariance not symmetric");
    const auto h = heisenberg_check(cov, model.J, model.hbar);
    if (!h.ok)
      throw Error(ErrorKind::NotPositive, "covariance violates the uncertainty bound (min eig " +
                                              std::to_string(h.min_eig) + ")");
  }
};

/// Quadratic cost: running |u − E_f x|² + xᵀHx, terminal xᵀΩ_T x.
struct CostSpec {
  RealMatrix E_f, H, Omega_T;

  void validate(const LinearModel& model) const {
    const Eigen::Index m = model.dim();
    detail::require_shape(E_f, model.feedback_channels(), m, "cost E_f");
    detail::require_shape(H, m, m, "cost H");
    detail::require_shape(Omega_T, m, m, "Omega_T");
    if (!E_f.allFinite()) throw Error(ErrorKind::NonFinite, "cost E_f has non-finite entries");
    detail::require_psd(H, 1e-10, "cost H");
    detail::require_psd(Omega_T, 1e-10, "Omega_T");
  }
};

/// The model's own output matrix and state cost, with the given terminal cost
/// (zero when omitted).
inline CostSpec default_cost(const LinearModel& model, RealMatrix omega_T = {}) {
  if (omega_T.size() == 0) omega_T = RealMatrix::Zero(model.dim(), model.dim());
  return {model.E_f, model.H, std::move(omega_T)};
}

/// Matrix-valued path on a uniform grid; values[k] belongs to time(k).
struct MatrixPath {
  TimeGrid grid;
  std::vector<RealMatrix> values;

  const RealMatrix& operator[](std::size_t k) const { return values.at(k); }

  /// Columns t, <prefix>_ij for i ≤ j.
  std::string to_csv(const std::string& prefix) const {
    const Eigen::Index m = values.empty() ? 0 : values.front().rows();
    std::vector<std::string> header{"t"};
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = i; j < m; ++j) header.push_back(prefix + "_" + std::to_string(i) + std::to_string(j));
    CsvWriter csv(header);
    for (std::size_t k = 0; k < values.size(); ++k) {
      std::vector<double> row{grid.time(k)};
      for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i; j < m; ++j) row.push_back(values[k](i, j));
      csv.row(row);
    }
    return csv.str();
  }
};

inline RealMatrix filter_riccati_rhs(const LinearModel& model, const RealMatrix& sigma) {
  const RealMatrix a_e = model.filter_drift();
  const RealMatrix sb = sigma * model.B_e.transpose();
  return model.G - a_e * sigma - sigma * a_e.transpose() - sb * sb.transpose();
}

/// dΩ/dt (forward-time derivative) of the control Riccati equation.
inline RealMatrix control_riccati_rhs(const LinearModel& model, const CostSpec& cost, const RealMatrix& omega) {
  const RealMatrix a_f = model.A + model.C_f * cost.E_f;
  const RealMatrix oc = omega * model.C_f;
  return -(cost.H - omega * a_f - a_f.transpose() * omega - oc * oc.transpose());
}

namespace detail {

inline constexpr double kBlowUp = 1e12;

template <class Rhs>
RealMatrix rk4_symmetric(const Rhs& f, const RealMatrix& x, double h) {
  const RealMatrix k1 = f(x);
  const RealMatrix k2 = f(x + (0.5 * h) * k1);
  const RealMatrix k3 = f(x + (0.5 * h) * k2);
  const RealMatrix k4 = f(x + h * k3);
  return symmetrized(x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

inline void check_growth(const RealMatrix& x, std::size_t step, const char* what) {
  if (!x.allFinite() || max_abs(x) > kBlowUp)
    throw Error(ErrorKind::BlowUp, std::string(what) + " exceeds 1e12 at step " + std::to_string(step) +
                                       "; shorten the horizon or check the model");
}

}  // namespace detail

/// Forward RK4 solve of the filtering Riccati equation from an admissible Σ0.
inline MatrixPath filter_riccati_solve(const LinearModel& model, const RealMatrix& sigma0, double T, double dt) {
  model.validate();
  GaussianBelief{RealVector::Zero(model.dim()), sigma0}.validate(model);
  MatrixPath path{TimeGrid::make(T, dt), {}};
  path.values.reserve(path.grid.points());
  path.values.push_back(sigma0);
  auto f = [&](const RealMatrix& s) { return filter_riccati_rhs(model, s); };
  for (std::size_t k = 0; k < path.grid.steps; ++k) {
    path.values.push_back(detail::rk4_symmetric(f, path.values.back(), dt));
    detail::check_growth(path.values.back(), k + 1, "filter covariance");
  }
  return path;
}

/// Backward RK4 solve of the control Riccati equation from Ω(T) = Ω_T.
inline MatrixPath control_riccati_solve(const LinearModel& model, const CostSpec& cost, double T, double dt) {
  model.validate();
  cost.validate(model);
  MatrixPath path{TimeGrid::make(T, dt), {}};
  path.values.assign(path.grid.points(), RealMatrix());
  path.values.back() = cost.Omega_T;
  auto f = [&](const RealMatrix& o) { return control_riccati_rhs(model, cost, o); };
  for (std::size_t k = path.grid.steps; k-- > 0;) {
    path.values[k] = detail::rk4_symmetric(f, path.values[k + 1], -dt);
    detail::check_growth(path.values[k], k, "control matrix");
  }
  return path;
}

/// K = Σ B_eᵀ + F_e.
inline RealMatrix kalman_gain(const LinearModel& model, const RealMatrix& sigma) {
  return sigma * model.B_e.transpose() + model.F_e;
}

/// dŴ = dY − B_e x̂ dt.
inline RealVector innovation(const LinearModel& model, const RealVector& mean, const RealVector& dY, double dt) {
  if (dY.size() != model.estimation_channels()) throw Error(ErrorKind::DimensionMismatch, "measurement length");
  return dY - model.B_e * mean * dt;
}

/// One Euler step of the Kalman mean driven by the measured increment dY.
/// The covariance is taken as Σ_t and passed through unchanged.
inline GaussianBelief kalman_step(const LinearModel& model, const GaussianBelief& belief, const RealMatrix& sigma_t,
                                  const RealVector& u, const RealVector& dY, double dt) {
  const Eigen::Index m = model.dim();
  if (belief.mean.size() != m) throw Error(ErrorKind::DimensionMismatch, "belief mean length");
  detail::require_shape(sigma_t, m, m, "Sigma(t)");
  if (u.size() != model.feedback_channels()) throw Error(ErrorKind::DimensionMismatch, "control length");
  const RealVector dw = innovation(model, belief.mean, dY, dt);
  RealVector next = belief.mean - (model.A * belief.mean + model.C_f * u) * dt + kalman_gain(model, sigma_t) * dw;
  return {std::move(next), sigma_t};
}

/// L = (Ω C_f + E_fᵀ)ᵀ, so that u = L x̂.
inline RealMatrix optimal_gain(const RealMatrix& omega, const LinearModel& model, const CostSpec& cost) {
  return (omega * model.C_f + cost.E_f.transpose()).transpose();
}

/// −dα/dt = Tr[L Σ Lᵀ] + Tr[Ω (G + F_e F_eᵀ)].
inline double alpha_rate(const LinearModel& model, const CostSpec& cost, const RealMatrix& sigma,
                         const RealMatrix& omega) {
  const RealMatrix L = optimal_gain(omega, model, cost);
  const RealMatrix noise = model.G + model.F_e * model.F_e.transpose();
  return (L * sigma * L.transpose()).trace() + (omega * noise).trace();
}

inline void require_same_grid(const MatrixPath& a, const MatrixPath& b) {
  if (!(a.grid == b.grid) || a.values.size() != b.values.size() || a.values.size() != a.grid.points())
    throw Error(ErrorKind::GridMismatch, "covariance and control paths use different grids");
}

/// α(t_k) = ∫_{t_k}^T (−dα/dt) dt by the trapezoidal rule; α(T) = 0.
inline std::vector<double> alpha_path(const LinearModel& model, const CostSpec& cost, const MatrixPath& sigma,
                                      const MatrixPath& omega) {
  require_same_grid(sigma, omega);
  const std::size_t n = sigma.grid.points();
  std::vector<double> rate(n), alpha(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) rate[k] = alpha_rate(model, cost, sigma[k], omega[k]);
  for (std::size_t k = n - 1; k-- > 0;) alpha[k] = alpha[k + 1] + 0.5 * sigma.grid.dt * (rate[k] + rate[k + 1]);
  return alpha;
}

/// Minimal expected cost x0ᵀΩ(0)x0 + Tr[Ω(0)Σ0] + α(0).
inline double min_cost(const LinearModel& model, const CostSpec& cost, const MatrixPath& sigma,
                       const MatrixPath& omega, const RealVector& x0, const RealMatrix& sigma0) {
  require_same_grid(sigma, omega);
  const RealMatrix& o0 = omega[0];
  return x0.dot(o0 * x0) + (o0 * sigma0).trace() + alpha_path(model, cost, sigma, omega).front();
}

// ---------------------------------------------------------------------------
// Closed loop.

/// Feedback from the belief mean: u = policy(step, t, x̂).
using BeliefPolicy = std::function<RealVector(std::size_t, double, const RealVector&)>;

/// u = scale · L(t) x̂ along a solved control path.
inline BeliefPolicy gain_policy(const LinearModel& model, const CostSpec& cost, const MatrixPath& omega,
                                double scale = 1.0) {
  std::vector<RealMatrix> gains;
  gains.reserve(omega.values.size());
  for (const auto& o : omega.values) gains.push_back(scale * optimal_gain(o, model, cost));
  return [gains = std::move(gains)](std::size_t k, double, const RealVector& x) -> RealVector {
    return gains.at(k) * x;
  };
}

inline BeliefPolicy zero_policy(Eigen::Index channels) {
  return [channels](std::size_t, double, const RealVector&) -> RealVector { return RealVector::Zero(channels); };
}

/// Running cost density at one grid point.
inline double running_cost(const CostSpec& cost, const RealVector& x, const RealVector& u, const RealMatrix& sigma) {
  const RealVector track = u - cost.E_f * x;
  return track.squaredNorm() + x.dot(cost.H * x) +
         ((cost.H + cost.E_f.transpose() * cost.E_f) * sigma).trace();
}

inline double terminal_cost(const CostSpec& cost, const RealVector& x, const RealMatrix& sigma) {
  return x.dot(cost.Omega_T * x) + (cost.Omega_T * sigma).trace();
}

struct PolicyCost {
  std::vector<double> costs;  ///< per trajectory, index order
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Sample mean and standard error in index order.
inline PolicyCost summarize_costs(std::vector<double> costs) {
  PolicyCost out;
  const double n = static_cast<double>(costs.size());
  if (costs.empty()) return out;
  double s = 0.0;
  for (double c : costs) s += c;
  out.mean = s / n;
  double v = 0.0;
  for (double c : costs) v += (c - out.mean) * (c - out.mean);
  out.stderr_ = costs.size() > 1 ? std::sqrt(v / (n - 1.0) / n) : 0.0;
  out.costs = std::move(costs);
  return out;
}

struct ClosedLoopOptions {
  std::size_t trajectories = 1000;
  std::size_t threads = 1;
};

struct ClosedLoopResult {
  std::vector<PolicyCost> policies;
  /// Σ dŴ and Σ dŴ² over trajectories, per step and estimation channel.
  std::vector<std::vector<double>> innovation_sum, innovation_sq;
};

/// Simulates the innovation-driven Kalman mean under each policy with common
/// random numbers: trajectory i draws the same innovations for every policy.
inline ClosedLoopResult simulate_closed_loop(const LinearModel& model, const CostSpec& cost,
                                             const GaussianBelief& belief0, const MatrixPath& sigma,
                                             const std::vector<BeliefPolicy>& policies, std::uint64_t seed,
                                             const ClosedLoopOptions& opt) {
  model.validate();
  cost.validate(model);
  belief0.validate(model);
  if (sigma.values.size() != sigma.grid.points()) throw Error(ErrorKind::GridMismatch, "covariance path length");
  if (opt.trajectories == 0) throw Error(ErrorKind::InvalidArgument, "closed loop needs at least one trajectory");
  if (max_abs(sigma[0] - belief0.cov) > 1e-12)
    throw Error(ErrorKind::GridMismatch, "covariance path does not start at the initial belief");

  const TimeGrid grid = sigma.grid;
  const double dt = grid.dt;
  const double sqdt = std::sqrt(dt);
  const auto de = static_cast<std::size_t>(model.estimation_channels());
  const auto df = model.feedback_channels();

  std::vector<RealMatrix> gains(grid.points());
  for (std::size_t k = 0; k < grid.points(); ++k) gains[k] = kalman_gain(model, sigma[k]);

  std::vector<std::vector<double>> costs(policies.size(), std::vector<double>(opt.trajectories, 0.0));
  const Philox rng(seed);

  struct Acc {
    std::vector<std::vector<double>> isum, isq;
  };
  auto make = [&] {
    return Acc{std::vector<std::vector<double>>(grid.steps, std::vector<double>(de, 0.0)),
               std::vector<std::vector<double>>(grid.steps, std::vector<double>(de, 0.0))};
  };
  auto work = [&](std::size_t i, Acc& acc) {
    std::vector<RealVector> dw(grid.steps, RealVector(static_cast<Eigen::Index>(de)));
    for (std::size_t k = 0; k < grid.steps; ++k)
      for (std::size_t c = 0; c < de; ++c) {
        const double w = sqdt * rng.normal(i, k, static_cast<std::uint32_t>(c));
        dw[k](static_cast<Eigen::Index>(c)) = w;
        acc.isum[k][c] += w;
        acc.isq[k][c] += w * w;
      }
    for (std::size_t p = 0; p < policies.size(); ++p) {
      RealVector x = belief0.mean;
      RealVector u = policies[p](0, grid.time(0), x);
      if (u.size() != df) throw Error(ErrorKind::DimensionMismatch, "policy output length");
      double prev = running_cost(cost, x, u, sigma[0]);
      double total = 0.0;
      for (std::size_t k = 0; k < grid.steps; ++k) {
        x = x - (model.A * x + model.C_f * u) * dt + gains[k] * dw[k];
        u = policies[p](k + 1, grid.time(k + 1), x);
        const double next = running_cost(cost, x, u, sigma[k + 1]);
        total += 0.5 * dt * (prev + next);
        prev = next;
      }
      costs[p][i] = total + terminal_cost(cost, x, sigma[grid.steps]);
    }
  };
  auto merge = [](Acc& into, const Acc& from) {
    for (std::size_t k = 0; k < into.isum.size(); ++k)
      for (std::size_t c = 0; c < into.isum[k].size(); ++c) {
        into.isum[k][c] += from.isum[k][c];
        into.isq[k][c] += from.isq[k][c];
      }
  };
  Acc total = run_ensemble<Acc>(opt.trajectories, opt.threads, make, work, merge);

  ClosedLoopResult out;
  for (auto& c : costs) out.policies.push_back(summarize_costs(std::move(c)));
  out.innovation_sum = std::move(total.isum);
  out.innovation_sq = std::move(total.isq);
  return out;
}

/// Closed loop under the optimal gain.
inline PolicyCost simulate_closed_loop(const LinearModel& model, const CostSpec& cost, const GaussianBelief& belief0,
                                       const MatrixPath& sigma, const MatrixPath& omega, std::uint64_t seed,
                                       std::size_t trajectories, std::size_t threads = 1) {
  require_same_grid(sigma, omega);
  auto r = simulate_closed_loop(model, cost, belief0, sigma, {gain_policy(model, cost, omega)}, seed,
                                {trajectories, threads});
  return std::move(r.policies.front());
}

// ---------------------------------------------------------------------------
// Duality.

/// Filtering data (model, Σ0) together with control data (cost).
struct LqgProblem {
  LinearModel model;
  CostSpec cost;
  RealMatrix sigma0;
};

/// J-conjugation exchanging the filtering and control problems:
///   A ↦ JᵀAᵀJ,  B_e ↦ C_fᵀJᵀ,  C_f ↦ JᵀB_eᵀ,  F_e ↦ J E_fᵀ,  E_f ↦ F_eᵀJ,
///   G ↦ J H Jᵀ, H ↦ JᵀG J,     Σ0 ↦ J Ω_T Jᵀ, Ω_T ↦ JᵀΣ0 J,
/// with the control-side data read from the cost. Requires JᵀJ = I, which
/// makes the map an involution.
inline LqgProblem dualize(const LqgProblem& p) {
  const LinearModel& m = p.model;
  const RealMatrix& J = m.J;
  if (J.rows() != m.dim() || max_abs(J.transpose() * J - RealMatrix::Identity(J.rows(), J.cols())) > 1e-12)
    throw Error(ErrorKind::InvalidArgument, "duality needs an orthogonal canonical matrix J");
  const RealMatrix Jt = J.transpose();

  LqgProblem d;
  LinearModel& dm = d.model;
  dm.J = J;
  dm.hbar = m.hbar;
  dm.minv = m.minv;
  dm.A = Jt * m.A.transpose() * J;
  dm.B_e = m.C_f.transpose() * Jt;
  dm.C_f = Jt * m.B_e.transpose();
  dm.F_e = J * p.cost.E_f.transpose();
  dm.E_f = m.F_e.transpose() * J;
  dm.G = J * p.cost.H * Jt;
  dm.H = Jt * m.G * J;
  d.cost = {dm.E_f, dm.H, Jt * p.sigma0 * J};
  d.sigma0 = J * p.cost.Omega_T * Jt;
  return d;
}

struct DualityReport {
  double covariance_gap = 0.0;  ///< max_k ‖J Ω'(t_k) Jᵀ − Σ(T − t_k)‖_max
  double gain_gap = 0.0;        ///< max_k ‖J L'(t_k)ᵀ − K(T − t_k)‖_max
  bool ok = false;
};

/// Solves the filter Riccati of `p` forward and the control Riccati of its
/// dual backward on one grid and compares them through J.
inline DualityReport duality_check(const LqgProblem& p, double T, double dt, double tol = 1e-8) {
  const LqgProblem d = dualize(p);
  const MatrixPath sigma = filter_riccati_solve(p.model, p.sigma0, T, dt);
  const MatrixPath omega = control_riccati_solve(d.model, d.cost, T, dt);
  const RealMatrix& J = p.model.J;
  DualityReport r;
  const std::size_t n = sigma.grid.steps;
  for (std::size_t k = 0; k <= n; ++k) {
    const RealMatrix& s = sigma[n - k];
    r.covariance_gap = std::max(r.covariance_gap, max_abs(J * omega[k] * J.transpose() - s));
    const RealMatrix dual_gain = J * optimal_gain(omega[k], d.model, d.cost).transpose();
    r.gain_gap = std::max(r.gain_gap, max_abs(dual_gain - kalman_gain(p.model, s)));
  }
  r.ok = r.covariance_gap <= tol;
  return r;
}

// ---------------------------------------------------------------------------
// Free particle.

struct FreeParticleParams {
  double alpha = 0.0;    ///< position readout
  double beta = 0.0;     ///< momentum feedback
  double gamma = 0.0;    ///< feedback output on momentum
  double epsilon = 0.0;  ///< estimation back-action on momentum
  double mu = 1.0;       ///< mass
  double hbar = 1.0;
};

/// Scalar coefficients of the componentwise equations.
struct FreeParticleView {
  double lambda, delta, zeta_q, zeta_p, eta_q, eta_p;
};

inline void validate(const FreeParticleParams& p) {
  if (!(p.mu > 0.0) || !std::isfinite(p.mu)) throw Error(ErrorKind::InvalidArgument, "mass must be positive");
  if (!(p.hbar > 0.0) || !std::isfinite(p.hbar)) throw Error(ErrorKind::InvalidArgument, "hbar must be positive");
  for (double v : {p.alpha, p.beta, p.gamma, p.epsilon})
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "free-particle coupling not finite");
}

inline RealMatrix standard_symplectic(Eigen::Index pairs = 1) {
  RealMatrix J = RealMatrix::Zero(2 * pairs, 2 * pairs);
  J.topRightCorner(pairs, pairs).setIdentity();
  J.bottomLeftCorner(pairs, pairs) = -RealMatrix::Identity(pairs, pairs);
  return J;
}

/// Coordinates (q, p): B_e = (α, 0), F_eᵀ = (−ε, 0), C_f = (0, β)ᵀ,
/// E_f = (0, γ).
inline LinearModel free_particle_model(const FreeParticleParams& p) {
  validate(p);
  Matrix le(1, 2), lf(1, 2);
  le << 0.5 * p.alpha, kI * (p.epsilon / p.hbar);
  lf << 0.5 * p.beta, kI * (p.gamma / p.hbar);
  RealMatrix minv = RealMatrix::Zero(2, 2);
  minv(1, 1) = 1.0 / p.mu;
  return derive_matrices(standard_symplectic(), le, lf, minv, p.hbar);
}

inline FreeParticleView free_particle_view(const FreeParticleParams& p) {
  validate(p);
  const double h2 = 0.25 * p.hbar * p.hbar * (p.alpha * p.alpha + p.beta * p.beta);
  return {0.5 * (p.alpha * p.epsilon + p.beta * p.gamma),
          0.5 * (p.alpha * p.epsilon - p.gamma * p.beta),
          p.gamma * p.gamma,
          h2,
          h2,
          p.epsilon * p.epsilon};
}

/// Symmetric 2×2 matrix from (q, qp, p) components and back.
struct Sym2 {
  double q, qp, p;
  static Sym2 of(const RealMatrix& x) { return {x(0, 0), x(0, 1), x(1, 1)}; }
  RealMatrix matrix() const {
    RealMatrix x(2, 2);
    x << q, qp, qp, p;
    return x;
  }
};

/// dσ/dt of the componentwise filter equations.
inline Sym2 free_particle_filter_rhs(const FreeParticleParams& p, const Sym2& s) {
  const auto v = free_particle_view(p);
  const double a2 = p.alpha * p.alpha;
  return {v.zeta_q + 2.0 * (s.qp / p.mu + v.delta * s.q) - a2 * s.q * s.q,
          s.p / p.mu - (v.lambda - v.delta) * s.qp - a2 * s.q * s.qp,
          v.zeta_p - 2.0 * v.lambda * s.p - a2 * s.qp * s.qp};
}

/// The momentum line with the quadratic term written as (α σ_p)², for
/// comparison against the generic flow.
inline double free_particle_filter_rhs_p_alt(const FreeParticleParams& p, const Sym2& s) {
  const auto v = free_particle_view(p);
  return v.zeta_p - 2.0 * v.lambda * s.p - (p.alpha * s.p) * (p.alpha * s.p);
}

/// dω/dt of the componentwise control equations (model's own cost).
inline Sym2 free_particle_control_rhs(const FreeParticleParams& p, const Sym2& w) {
  const auto v = free_particle_view(p);
  const double b2 = p.beta * p.beta;
  const double bg = p.beta * p.gamma;
  return {-(v.eta_q - 2.0 * v.lambda * w.q - b2 * w.qp * w.qp),
          -(w.q / p.mu - (2.0 * v.lambda + bg) * w.qp - b2 * w.qp * w.p),
          -(v.eta_p + 2.0 * w.qp / p.mu - 2.0 * (v.lambda + bg) * w.p - b2 * w.p * w.p)};
}

/// Minimal total cost from componentwise paths under the model's own cost.
inline double free_particle_total_cost(const FreeParticleParams& p, const std::vector<Sym2>& sigma,
                                       const std::vector<Sym2>& omega, double dt, const RealVector& x0,
                                       const Sym2& sigma0) {
  if (sigma.size() != omega.size() || sigma.empty()) throw Error(ErrorKind::GridMismatch, "component paths differ");
  const auto v = free_particle_view(p);
  auto rate = [&](const Sym2& s, const Sym2& w) {
    const double lq = p.beta * w.qp;
    const double lp = p.beta * w.p + p.gamma;
    return v.zeta_q * w.q + v.zeta_p * w.p + p.epsilon * p.epsilon * w.q + lq * lq * s.q + 2.0 * lq * lp * s.qp +
           lp * lp * s.p;
  };
  double integral = 0.0;
  for (std::size_t k = 0; k + 1 < sigma.size(); ++k)
    integral += 0.5 * dt * (rate(sigma[k], omega[k]) + rate(sigma[k + 1], omega[k + 1]));
  const Sym2& w0 = omega.front();
  return w0.q * x0(0) * x0(0) + 2.0 * w0.qp * x0(0) * x0(1) + w0.p * x0(1) * x0(1) + w0.q * sigma0.q +
         2.0 * w0.qp * sigma0.qp + w0.p * sigma0.p + integral;
}

}  // namespace qfc
