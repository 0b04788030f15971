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

#include <unsupported/Eigen/MatrixFunctions>

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "qfc/grid.hpp"
#include "qfc/io.hpp"
#include "qfc/operators.hpp"

namespace qfc {

/// Real part (X + X†)/2 of an operator.
inline Matrix real_part(const Matrix& x) { return hermitian_part(x); }

/// dς/dt = Σ Ľ ς Ľ† − ½{Ľ†Ľ, ς} − (i/ħ)[H, ς].
inline Matrix lindblad_apply(const CouplingSet& c, const Matrix& rho) {
  require_same_dim(c.hamiltonian, rho, "lindblad_apply");
  Matrix out = (-kI / c.hbar) * (c.hamiltonian * rho - rho * c.hamiltonian);
  for (const auto& l : c.jump_ops) {
    const Matrix ldl = l.adjoint() * l;
    out.noalias() += l * rho * l.adjoint();
    out.noalias() -= 0.5 * (ldl * rho + rho * ldl);
  }
  return out;
}

inline Matrix lindblad_apply(const CouplingSet& c, const DensityMatrix& rho) {
  return lindblad_apply(c, rho.matrix());
}

/// Superoperator acting on column-major vec(ς): vec(AςB) = (Bᵀ ⊗ A) vec(ς).
inline Matrix lindblad_superoperator(const CouplingSet& c) {
  const Eigen::Index n = c.dim();
  const Matrix id = Matrix::Identity(n, n);
  auto kron = [n](const Matrix& a, const Matrix& b) {
    Matrix k(n * n, n * n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) k.block(i * n, j * n, n, n) = a(i, j) * b;
    return k;
  };
  Matrix sup = (-kI / c.hbar) * (kron(id, c.hamiltonian) - kron(c.hamiltonian.transpose(), id));
  for (const auto& l : c.jump_ops) {
    const Matrix ldl = l.adjoint() * l;
    sup += kron(l.conjugate(), l) - 0.5 * kron(id, ldl) - 0.5 * kron(ldl.transpose(), id);
  }
  return sup;
}

/// Spectral norm of the generator superoperator; exact up to dim 8, the
/// Frobenius upper bound beyond.
inline double generator_norm(const CouplingSet& c) {
  const Matrix sup = lindblad_superoperator(c);
  if (c.dim() <= 8) {
    Eigen::JacobiSVD<Matrix> svd(sup);
    return svd.singularValues()(0);
  }
  return sup.norm();
}

/// Largest dt accepted by integrate_master without the override.
inline double stability_bound(const CouplingSet& c) {
  const double g = generator_norm(c);
  return g > 0.0 ? 0.1 / g : std::numeric_limits<double>::infinity();
}

struct StatePath {
  TimeGrid grid;
  std::vector<DensityMatrix> states;

  std::string to_csv() const {
    std::vector<std::string> header{"t"};
    const auto cols = matrix_columns(states.empty() ? 0 : states.front().dim());
    header.insert(header.end(), cols.begin(), cols.end());
    CsvWriter csv(header);
    for (std::size_t k = 0; k < states.size(); ++k) {
      std::vector<double> row{grid.time(k)};
      append_matrix(row, states[k].matrix());
      csv.row(row);
    }
    return csv.str();
  }
};

struct MasterOptions {
  double clip_tol = 1e-10;
  /// Accept dt above stability_bound().
  bool allow_large_step = false;
};

/// Classical RK4 with normalize_and_clip after every step.
inline StatePath integrate_master(const CouplingSet& c, const DensityMatrix& rho0, double horizon, double dt,
                                  const MasterOptions& opt = {}) {
  c.validate();
  if (rho0.dim() != c.dim()) throw Error(ErrorKind::DimensionMismatch, "initial state dimension");
  const TimeGrid grid = TimeGrid::make(horizon, dt);
  if (!opt.allow_large_step && dt > stability_bound(c))
    throw Error(ErrorKind::StepTooLarge, "dt " + format_double(dt) + " exceeds stability bound " +
                                              format_double(stability_bound(c)) + "; reduce dt");
  StatePath path{grid, {}};
  path.states.reserve(grid.points());
  path.states.push_back(rho0);
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const Matrix& r = path.states.back().matrix();
    const Matrix k1 = lindblad_apply(c, r);
    const Matrix k2 = lindblad_apply(c, Matrix(r + 0.5 * dt * k1));
    const Matrix k3 = lindblad_apply(c, Matrix(r + 0.5 * dt * k2));
    const Matrix k4 = lindblad_apply(c, Matrix(r + dt * k3));
    const Matrix next = r + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    try {
      path.states.push_back(normalize_and_clip(next, opt.clip_tol));
    } catch (const Error& e) {
      throw Error(e.kind(), std::string("master step ") + std::to_string(k) + ": " + e.what());
    }
  }
  return path;
}

/// Reference solution exp(t·L) vec(ς0); oracle use only.
inline Matrix master_exact(const CouplingSet& c, const Matrix& rho0, double t) {
  const Eigen::Index n = c.dim();
  const Matrix prop = (t * lindblad_superoperator(c)).exp();
  const Eigen::VectorXcd v = prop * Eigen::Map<const Eigen::VectorXcd>(rho0.data(), n * n);
  return Eigen::Map<const Matrix>(v.data(), n, n);
}

/// Real feedback amplitudes u(t), one per control channel (0-based indices).
struct ControlSignal {
  std::vector<std::size_t> channels;
  std::function<RealVector(double)> values;

  RealVector at(double t) const {
    if (!values) return RealVector::Zero(static_cast<Eigen::Index>(channels.size()));
    RealVector u = values(t);
    if (u.size() != static_cast<Eigen::Index>(channels.size()))
      throw Error(ErrorKind::DimensionMismatch, "control signal width differs from channel count");
    return u;
  }
};

inline void require_disjoint(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b,
                             const char* what) {
  for (auto i : a)
    for (auto j : b)
      if (i == j) throw Error(ErrorKind::ChannelOverlap, std::string(what) + ": channel " + std::to_string(i));
}

/// Coherent displacement of the control channels by u:
/// H ← H + Σ u_i Re Ľ_i and Ľ_i ← Ľ_i + (i/ħ) u_i.
/// The net generator carries the Hamiltonian H + 2 Σ u_i Re Ľ_i.
inline CouplingSet coherent_control_apply(const CouplingSet& c, const RealVector& u,
                                          const std::vector<std::size_t>& control_channels,
                                          const std::vector<std::size_t>& estimation_channels = {}) {
  if (u.size() != static_cast<Eigen::Index>(control_channels.size()))
    throw Error(ErrorKind::DimensionMismatch, "one control value per control channel");
  require_disjoint(control_channels, estimation_channels, "control and estimation channels overlap");
  for (std::size_t a = 0; a < control_channels.size(); ++a) {
    if (control_channels[a] >= c.channels())
      throw Error(ErrorKind::InvalidArgument, "control channel out of range");
    for (std::size_t b = a + 1; b < control_channels.size(); ++b)
      if (control_channels[a] == control_channels[b])
        throw Error(ErrorKind::ChannelOverlap, "control channel listed twice");
  }
  CouplingSet out = c;
  const Matrix id = Matrix::Identity(c.dim(), c.dim());
  for (std::size_t a = 0; a < control_channels.size(); ++a) {
    const double ua = u(static_cast<Eigen::Index>(a));
    if (ua == 0.0) continue;
    const std::size_t ch = control_channels[a];
    out.hamiltonian += ua * real_part(c.jump_ops[ch]);
    out.hamiltonian = hermitian_part(out.hamiltonian);
    out.jump_ops[ch] = c.jump_ops[ch] + (kI * ua / c.hbar) * id;
  }
  return out;
}

}  // namespace qfc
