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

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "qfc/operators.hpp"

namespace qfc {

/// Triangular (2+d)x(2+d) block matrix of dim x dim operator blocks.
/// Block index 0 is "-", 1..d are the field channels, d+1 is "+". Blocks
/// below the diagonal in the group order − < ∘ < + are zero by construction;
/// the d x d channel-channel part is a full block.
class GermMatrix {
 public:
  GermMatrix(Eigen::Index dim, std::size_t channels)
      : dim_(dim), channels_(channels), data_(Matrix::Zero(size(dim, channels), size(dim, channels))) {
    if (dim <= 0 || channels == 0)
      throw Error(ErrorKind::InvalidArgument, "germ needs dim > 0 and at least one channel");
  }

  static GermMatrix zero(Eigen::Index dim, std::size_t channels) { return {dim, channels}; }

  static GermMatrix identity(Eigen::Index dim, std::size_t channels) {
    GermMatrix g(dim, channels);
    g.data_.setIdentity();
    return g;
  }

  /// Basic increment dA_μ^ν: identity in block (mu, nu), zero elsewhere.
  static GermMatrix basic(Eigen::Index dim, std::size_t channels, std::size_t mu, std::size_t nu) {
    GermMatrix g(dim, channels);
    g.set_block(mu, nu, Matrix::Identity(dim, dim));
    return g;
  }

  /// Wiener increment on one channel (1-based): dA_-^i + dA_i^+.
  static GermMatrix wiener(Eigen::Index dim, std::size_t channels, std::size_t channel) {
    GermMatrix g(dim, channels);
    const Matrix id = Matrix::Identity(dim, dim);
    g.set_block(g.minus(), channel, id);
    g.set_block(channel, g.plus(), id);
    return g;
  }

  /// Poisson increment on one channel: dA_i^i + dA_-^i + dA_i^+ + dt.
  static GermMatrix poisson(Eigen::Index dim, std::size_t channels, std::size_t channel) {
    GermMatrix g = wiener(dim, channels, channel);
    const Matrix id = Matrix::Identity(dim, dim);
    g.set_block(channel, channel, id);
    g.set_block(g.minus(), g.plus(), id);
    return g;
  }

  Eigen::Index dim() const noexcept { return dim_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t minus() const noexcept { return 0; }
  std::size_t plus() const noexcept { return channels_ + 1; }
  std::size_t blocks() const noexcept { return channels_ + 2; }

  /// 0 for −, 1 for a channel, 2 for +.
  int group(std::size_t idx) const noexcept { return idx == minus() ? 0 : (idx == plus() ? 2 : 1); }
  bool allowed(std::size_t mu, std::size_t nu) const noexcept { return group(mu) <= group(nu); }

  /// Index reflection -(−, i, +) = (+, i, −).
  std::size_t reflect(std::size_t idx) const noexcept {
    if (idx == minus()) return plus();
    if (idx == plus()) return minus();
    return idx;
  }

  std::string label(std::size_t idx) const {
    if (idx == minus()) return "-";
    if (idx == plus()) return "+";
    return std::to_string(idx);
  }

  Matrix block(std::size_t mu, std::size_t nu) const {
    check_index(mu, nu);
    return data_.block(offset(mu), offset(nu), dim_, dim_);
  }

  void set_block(std::size_t mu, std::size_t nu, const Matrix& value) {
    check_index(mu, nu);
    if (value.rows() != dim_ || value.cols() != dim_)
      throw Error(ErrorKind::DimensionMismatch, "germ block has wrong size");
    if (!allowed(mu, nu) && max_abs(value) != 0.0)
      throw Error(ErrorKind::InvalidArgument, "germ blocks below the diagonal must vanish");
    data_.block(offset(mu), offset(nu), dim_, dim_) = value;
  }

  const Matrix& full() const noexcept { return data_; }

  bool is_triangular() const {
    for (std::size_t mu = 0; mu < blocks(); ++mu)
      for (std::size_t nu = 0; nu < blocks(); ++nu)
        if (!allowed(mu, nu) && max_abs(Matrix(data_.block(offset(mu), offset(nu), dim_, dim_))) != 0.0)
          return false;
    return true;
  }

  /// Only blocks with an identity diagonal at (−,−) and (+,+).
  bool is_transition_normalized(double tol = 0.0) const {
    const Matrix id = Matrix::Identity(dim_, dim_);
    return max_abs(Matrix(block(minus(), minus()) - id)) <= tol &&
           max_abs(Matrix(block(plus(), plus()) - id)) <= tol;
  }

  friend bool operator==(const GermMatrix& a, const GermMatrix& b) {
    return a.dim_ == b.dim_ && a.channels_ == b.channels_ && a.data_ == b.data_;
  }

 private:
  friend GermMatrix involution(const GermMatrix&);
  friend GermMatrix germ_product(const GermMatrix&, const GermMatrix&);

  static Eigen::Index size(Eigen::Index dim, std::size_t channels) {
    return dim * static_cast<Eigen::Index>(channels + 2);
  }
  Eigen::Index offset(std::size_t idx) const { return static_cast<Eigen::Index>(idx) * dim_; }
  void check_index(std::size_t mu, std::size_t nu) const {
    if (mu >= blocks() || nu >= blocks()) throw Error(ErrorKind::InvalidArgument, "germ index out of range");
  }

  Eigen::Index dim_;
  std::size_t channels_;
  Matrix data_;
};

/// K⋆: block (μ,ν) of the result is the adjoint of block (−ν,−μ).
inline GermMatrix involution(const GermMatrix& k) {
  GermMatrix out(k.dim(), k.channels());
  const Eigen::Index n = k.dim();
  for (std::size_t mu = 0; mu < k.blocks(); ++mu)
    for (std::size_t nu = 0; nu < k.blocks(); ++nu)
      if (k.allowed(mu, nu))
        out.data_.block(out.offset(mu), out.offset(nu), n, n) =
          k.data_.block(k.offset(k.reflect(nu)), k.offset(k.reflect(mu)), n, n).adjoint();
  return out;
}

/// Block-matrix product; realizes dA_μ^ι dA_κ^ν = δ_κ^ι dA_μ^ν.
inline GermMatrix germ_product(const GermMatrix& a, const GermMatrix& b) {
  if (a.dim() != b.dim() || a.channels() != b.channels())
    throw Error(ErrorKind::DimensionMismatch, "germ_product operands differ in shape");
  GermMatrix out(a.dim(), a.channels());
  out.data_.noalias() = a.data_ * b.data_;
  return out;
}

/// Residuals of the Hudson–Parthasarathy conditions (Frobenius norms):
/// ‖S†S − I‖, ‖R⁻ + R₊†S‖, ‖2 Re R₊⁻ + R₊†R₊‖.
struct PseudoUnitarityReport {
  bool ok = false;
  std::array<double, 3> residuals{};
  /// ‖S⋆S − 1‖ over the full germ.
  double product_defect = 0.0;
};

inline PseudoUnitarityReport check_pseudo_unitarity(const GermMatrix& s, double tol) {
  if (!s.is_transition_normalized())
    throw Error(ErrorKind::InvalidArgument, "pseudo-unitarity check needs identity (−,−) and (+,+) blocks");
  const Eigen::Index n = s.dim();
  const std::size_t d = s.channels();
  const Eigen::Index dn = n * static_cast<Eigen::Index>(d);

  Matrix scat(dn, dn), r_plus(dn, n), r_minus(n, dn);
  for (std::size_t i = 1; i <= d; ++i) {
    const Eigen::Index oi = static_cast<Eigen::Index>(i - 1) * n;
    r_plus.block(oi, 0, n, n) = s.block(i, s.plus());
    r_minus.block(0, oi, n, n) = s.block(s.minus(), i);
    for (std::size_t k = 1; k <= d; ++k)
      scat.block(oi, static_cast<Eigen::Index>(k - 1) * n, n, n) = s.block(i, k);
  }
  const Matrix drift = s.block(s.minus(), s.plus());

  PseudoUnitarityReport rep;
  rep.residuals[0] = (scat.adjoint() * scat - Matrix::Identity(dn, dn)).norm();
  rep.residuals[1] = (r_minus + r_plus.adjoint() * scat).norm();
  rep.residuals[2] = (drift + drift.adjoint() + r_plus.adjoint() * r_plus).norm();
  rep.product_defect =
      (germ_product(involution(s), s).full() - Matrix::Identity(s.full().rows(), s.full().cols())).norm();
  rep.ok = rep.residuals[0] <= tol && rep.residuals[1] <= tol && rep.residuals[2] <= tol;
  return rep;
}

/// Pseudo-unitary germ of a coupling set: scattering on the (i,i) blocks,
/// Ľ_i on (i,+), −Ľ_i†S_i on (−,i) and −(i/ħ)H − ½ΣĽ†Ľ on (−,+).
inline GermMatrix germ_from_coupling(const CouplingSet& c) {
  c.validate();
  const Eigen::Index n = c.dim();
  const std::size_t d = std::max<std::size_t>(c.channels(), 1);
  GermMatrix g = GermMatrix::identity(n, d);
  if (c.channels() == 0) {
    g.set_block(g.minus(), g.plus(), -kI / c.hbar * c.hamiltonian);
    return g;
  }
  Matrix drift = -kI / c.hbar * c.hamiltonian;
  for (std::size_t i = 0; i < c.channels(); ++i) {
    const Matrix& l = c.jump_ops[i];
    const Matrix s = c.scattering_for(i);
    g.set_block(i + 1, i + 1, s);
    g.set_block(i + 1, g.plus(), l);
    g.set_block(g.minus(), i + 1, -l.adjoint() * s);
    drift -= 0.5 * l.adjoint() * l;
  }
  g.set_block(g.minus(), g.plus(), drift);
  return g;
}

/// Schrödinger-picture generator ς ↦ Σ Ľ ς Ľ† + D ς + ς D† with D the
/// (−,+) block, i.e. −(i/ħ)[H,ς] − ½{ΣĽ†Ľ, ς}.
class LindbladGenerator {
 public:
  LindbladGenerator(Matrix drift, std::vector<Matrix> jumps)
      : drift_(std::move(drift)), jumps_(std::move(jumps)) {}

  Matrix operator()(const Matrix& rho) const {
    if (rho.rows() != drift_.rows() || rho.cols() != drift_.cols())
      throw Error(ErrorKind::DimensionMismatch, "generator applied to state of wrong size");
    Matrix out = drift_ * rho;
    out += rho * drift_.adjoint();
    for (const auto& l : jumps_) out.noalias() += l * rho * l.adjoint();
    return out;
  }

  const Matrix& drift() const noexcept { return drift_; }
  const std::vector<Matrix>& jumps() const noexcept { return jumps_; }

  /// Hamiltonian recovered from the anti-Hermitian part of the drift.
  Matrix hamiltonian(double hbar) const { return hermitian_part(kI * hbar * 0.5 * (drift_ - drift_.adjoint())); }

 private:
  Matrix drift_;
  std::vector<Matrix> jumps_;
};

inline LindbladGenerator lindblad_from_germ(const GermMatrix& s, double tol = 1e-8) {
  const auto rep = check_pseudo_unitarity(s, tol);
  if (!rep.ok)
    throw Error(ErrorKind::PseudoUnitarityViolated,
                "residuals " + std::to_string(rep.residuals[0]) + ", " + std::to_string(rep.residuals[1]) +
                    ", " + std::to_string(rep.residuals[2]));
  std::vector<Matrix> jumps;
  jumps.reserve(s.channels());
  for (std::size_t i = 1; i <= s.channels(); ++i) {
    Matrix l = s.block(i, s.plus());
    if (max_abs(l) != 0.0) jumps.push_back(std::move(l));
  }
  return LindbladGenerator(s.block(s.minus(), s.plus()), std::move(jumps));
}

/// x ↦ s (x ⊗ 1) s⋆, the structure map whose ⋆-multiplicativity is the
/// homomorphism condition.
inline GermMatrix structure_map(const GermMatrix& s, const Matrix& x) {
  if (x.rows() != s.dim() || x.cols() != s.dim())
    throw Error(ErrorKind::DimensionMismatch, "structure_map operand has wrong size");
  GermMatrix amp = GermMatrix::zero(s.dim(), s.channels());
  for (std::size_t k = 0; k < s.blocks(); ++k) amp.set_block(k, k, x);
  return germ_product(germ_product(s, amp), involution(s));
}

/// max ‖σ(x†x) − σ(x)⋆σ(x)‖ and ‖σ(1) − 1‖.
inline double homomorphism_defect(const GermMatrix& s, const Matrix& x) {
  const GermMatrix sx = structure_map(s, x);
  const GermMatrix lhs = structure_map(s, x.adjoint() * x);
  const GermMatrix rhs = germ_product(involution(sx), sx);
  const GermMatrix unit = structure_map(s, Matrix::Identity(s.dim(), s.dim()));
  const double a = max_abs(Matrix(lhs.full() - rhs.full()));
  const double b = max_abs(Matrix(unit.full() - GermMatrix::identity(s.dim(), s.channels()).full()));
  return std::max(a, b);
}

}  // namespace qfc
