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

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "qfc/error.hpp"

namespace qfc {

using cplx = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using RealMatrix = Eigen::MatrixXd;
using RealVector = Eigen::VectorXd;

inline constexpr cplx kI{0.0, 1.0};

/// Largest absolute entry; 0 for an empty matrix.
template <class Derived>
double max_abs(const Eigen::MatrixBase<Derived>& m) {
  return m.size() == 0 ? 0.0 : static_cast<double>(m.cwiseAbs().maxCoeff());
}

inline bool all_finite(const Matrix& m) {
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    const cplx z = m.data()[k];
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
  }
  return true;
}

inline void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0)
    throw Error(ErrorKind::DimensionMismatch, std::string(what) + " must be square and non-empty");
}

inline void require_same_dim(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorKind::DimensionMismatch,
                std::string(what) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                    " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

inline double hermiticity_defect(const Matrix& m) { return max_abs(m - m.adjoint()); }

inline bool is_hermitian(const Matrix& m, double tol = 1e-12) {
  return m.rows() == m.cols() && hermiticity_defect(m) <= tol;
}

inline bool is_unitary(const Matrix& m, double tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  return max_abs(m.adjoint() * m - Matrix::Identity(m.rows(), m.cols())) <= tol;
}

/// Exact Hermitian part with a real diagonal; idempotent bit-for-bit.
inline Matrix hermitian_part(const Matrix& m) {
  Matrix h = (m + m.adjoint()) * 0.5;
  for (Eigen::Index k = 0; k < h.rows(); ++k) h(k, k) = cplx(h(k, k).real(), 0.0);
  return h;
}

inline Matrix commutator(const Matrix& x, const Matrix& y) {
  require_square(x, "commutator lhs");
  require_same_dim(x, y, "commutator");
  return x * y - y * x;
}

inline Matrix anticommutator(const Matrix& x, const Matrix& y) {
  require_square(x, "anticommutator lhs");
  require_same_dim(x, y, "anticommutator");
  return x * y + y * x;
}

/// tr[a b] without forming the product.
inline cplx trace_product(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows() || a.rows() != b.cols())
    throw Error(ErrorKind::DimensionMismatch, "trace pairing");
  cplx s = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) s += a(i, j) * b(j, i);
  return s;
}

inline double min_eigenvalue(const Matrix& hermitian) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitian, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

inline double trace_norm(const Matrix& hermitian) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(hermitian_part(hermitian), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().sum();
}

class DensityMatrix;
DensityMatrix normalize_and_clip(const Matrix& raw, double clip_tol = 1e-10);

/// Hermitian, positive semidefinite, unit-trace state. Instances only come
/// out of normalize_and_clip or the validating factories below.
class DensityMatrix {
 public:
  static constexpr double kHermitianTol = 1e-12;
  static constexpr double kTraceTol = 1e-9;
  static constexpr double kPositivityTol = 1e-10;

  Eigen::Index dim() const noexcept { return m_.rows(); }
  const Matrix& matrix() const noexcept { return m_; }
  cplx operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

  double purity() const { return trace_product(m_, m_).real(); }
  double population(Eigen::Index k) const { return m_(k, k).real(); }

  /// Validates without repairing.
  static DensityMatrix from_matrix(const Matrix& m) {
    require_square(m, "density matrix");
    if (!all_finite(m)) throw Error(ErrorKind::NonFinite, "density matrix has non-finite entries");
    if (hermiticity_defect(m) > kHermitianTol)
      throw Error(ErrorKind::NotHermitian, "density matrix not Hermitian");
    if (std::abs(m.trace().real() - 1.0) > kTraceTol)
      throw Error(ErrorKind::TraceVanishing, "density matrix trace differs from 1");
    if (min_eigenvalue(hermitian_part(m)) < -kPositivityTol)
      throw Error(ErrorKind::NotPositive, "density matrix has a negative eigenvalue");
    return DensityMatrix(m);
  }

  static DensityMatrix maximally_mixed(Eigen::Index n) {
    return DensityMatrix(Matrix::Identity(n, n) / static_cast<double>(n));
  }

  static DensityMatrix basis(Eigen::Index n, Eigen::Index k) {
    Matrix m = Matrix::Zero(n, n);
    m(k, k) = 1.0;
    return DensityMatrix(std::move(m));
  }

  static DensityMatrix pure(const Eigen::VectorXcd& ket) {
    const double nrm = ket.norm();
    if (nrm < 1e-300) throw Error(ErrorKind::TraceVanishing, "zero state vector");
    const Eigen::VectorXcd v = ket / nrm;
    return normalize_and_clip(v * v.adjoint());
  }

 private:
  explicit DensityMatrix(Matrix m) : m_(std::move(m)) {}
  friend DensityMatrix normalize_and_clip(const Matrix&, double);

  Matrix m_;
};

/// Symmetrizes, zeroes eigenvalues in [-clip_tol, 0) and renormalizes the
/// trace. Repairs only fire above rounding level so that a second
/// application returns the first result bit-for-bit.
inline DensityMatrix normalize_and_clip(const Matrix& raw, double clip_tol) {
  require_square(raw, "normalize_and_clip");
  if (!all_finite(raw)) throw Error(ErrorKind::NonFinite, "state has non-finite entries");
  if (hermiticity_defect(raw) >= 1e-6)
    throw Error(ErrorKind::NotHermitian, "state too far from Hermitian to repair");

  Matrix h = hermitian_part(raw);
  const Eigen::Index n = h.rows();

  Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::EigenvaluesOnly);
  const double lmin = es.eigenvalues().minCoeff();
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (lmin < -clip_tol)
    throw Error(ErrorKind::NotPositive,
                "eigenvalue " + std::to_string(lmin) + " below -clip_tol; reduce dt");
  if (lmin < -1e-14 * scale) {
    es.compute(h, Eigen::ComputeEigenvectors);
    const RealVector clipped = es.eigenvalues().cwiseMax(0.0);
    h = hermitian_part(es.eigenvectors() * clipped.cast<cplx>().asDiagonal() *
                       es.eigenvectors().adjoint());
  }

  const double tr = h.trace().real();
  if (tr < 1e-12) throw Error(ErrorKind::TraceVanishing, "trace " + std::to_string(tr));
  if (std::abs(tr - 1.0) > 1e-14) {
    h /= tr;
    for (Eigen::Index k = 0; k < n; ++k) h(k, k) = cplx(h(k, k).real(), 0.0);
  }
  return DensityMatrix(std::move(h));
}

/// Tracial pairing <state|X> = tr[state X].
inline cplx pair(const DensityMatrix& state, const Matrix& x) {
  if (x.rows() != state.dim() || x.cols() != state.dim())
    throw Error(ErrorKind::DimensionMismatch, "pair: operator and state dimensions differ");
  return trace_product(state.matrix(), x);
}

/// Schrödinger-picture couplings of a Lindblad / filter model. Jump
/// operators are the operators acting on the state (ς ↦ Ľ ς Ľ†).
struct CouplingSet {
  Matrix hamiltonian;
  std::vector<Matrix> jump_ops;
  /// Per-channel unitary scattering; empty means identity on every channel.
  std::vector<Matrix> scattering;
  double hbar = 1.0;

  Eigen::Index dim() const noexcept { return hamiltonian.rows(); }
  std::size_t channels() const noexcept { return jump_ops.size(); }

  Matrix scattering_for(std::size_t i) const {
    return scattering.empty() ? Matrix::Identity(dim(), dim()) : scattering.at(i);
  }

  void validate() const {
    require_square(hamiltonian, "hamiltonian");
    if (!(hbar > 0.0)) throw Error(ErrorKind::InvalidArgument, "hbar must be positive");
    if (!is_hermitian(hamiltonian, 1e-12))
      throw Error(ErrorKind::NotHermitian, "hamiltonian not Hermitian");
    for (const auto& l : jump_ops) require_same_dim(hamiltonian, l, "jump operator");
    if (!scattering.empty()) {
      if (scattering.size() != jump_ops.size())
        throw Error(ErrorKind::DimensionMismatch, "one scattering matrix per channel required");
      for (const auto& s : scattering) {
        require_same_dim(hamiltonian, s, "scattering");
        if (!is_unitary(s, 1e-10)) throw Error(ErrorKind::NotUnitary, "scattering not unitary");
      }
    }
  }
};

namespace pauli {

inline Matrix identity() { return Matrix::Identity(2, 2); }

inline Matrix x() {
  Matrix m(2, 2);
  m << 0.0, 1.0, 1.0, 0.0;
  return m;
}

inline Matrix y() {
  Matrix m(2, 2);
  m << 0.0, -kI, kI, 0.0;
  return m;
}

inline Matrix z() {
  Matrix m(2, 2);
  m << 1.0, 0.0, 0.0, -1.0;
  return m;
}

/// |g><e| with basis order (g, e).
inline Matrix lowering() {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 1) = 1.0;
  return m;
}

inline Matrix raising() { return lowering().adjoint(); }

}  // namespace pauli

}  // namespace qfc
