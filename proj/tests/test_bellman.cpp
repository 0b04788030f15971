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

#include <gtest/gtest.h>

#include <random>

#include "lqg_fixtures.hpp"
#include "qfc/bellman.hpp"

namespace qfc {
namespace {

using testing::gaussian_matrix;
using testing::random_admissible_covariance;
using testing::random_linear_model;

Matrix diag2(double a, double b) {
  Matrix m = Matrix::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

Matrix traceless(const Matrix& x) {
  return x - (x.trace() / static_cast<double>(x.rows())) * Matrix::Identity(x.rows(), x.cols());
}

Matrix random_hermitian(std::mt19937_64& rng, Eigen::Index n) {
  const Matrix g = gaussian_matrix(rng, n, n).cast<cplx>() + kI * gaussian_matrix(rng, n, n).cast<cplx>();
  return hermitian_part(g);
}

Matrix random_state(std::mt19937_64& rng, Eigen::Index n) {
  const Matrix g = gaussian_matrix(rng, n, n).cast<cplx>() + kI * gaussian_matrix(rng, n, n).cast<cplx>();
  Matrix r = g * g.adjoint();
  return r / r.trace().real();
}

double pairing(const Matrix& rho, const Matrix& x) { return trace_product(rho, x).real(); }

struct LqgFixture {
  LinearModel model;
  CostSpec cost;
  MatrixPath sigma, omega;
  QuadraticValue value;
};

LqgFixture lqg_fixture(const LinearModel& m, const RealMatrix& sigma0, const RealMatrix& omega_T, double T, double dt) {
  LqgFixture f{m, default_cost(m, omega_T), {}, {}, {}};
  f.sigma = filter_riccati_solve(m, sigma0, T, dt);
  f.omega = control_riccati_solve(m, f.cost, T, dt);
  f.value = build_quadratic_value(m, f.cost, f.sigma, f.omega);
  return f;
}

LqgFixture free_particle_fixture() {
  const LinearModel m = free_particle_model({1.0, 1.0, 0.2, 0.3, 1.0, 1.0});
  return lqg_fixture(m, RealMatrix::Identity(2, 2), RealMatrix::Identity(2, 2), 2.0, 1e-3);
}

LqgFixture random_fixture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const LinearModel m = random_linear_model(rng, 2, 2, 1);
  const RealMatrix w = gaussian_matrix(rng, 4, 4, 0.5);
  return lqg_fixture(m, random_admissible_covariance(rng, 2, 1.0, 0.1), w * w.transpose(), 2.0, 1e-3);
}

// --- quadratic value and HJB ----------------------------------------------------

TEST(QuadraticValue, TerminalConditions) {
  const LqgFixture f = free_particle_fixture();
  EXPECT_EQ(f.value.alpha.back(), 0.0);
  for (const auto& o : f.value.omega) EXPECT_LE(detail::symmetry_defect(o), 1e-10);
  RealVector x(2);
  x << 0.4, -0.2;
  EXPECT_NEAR(f.value(2.0, x, f.sigma.values.back()),
              x.dot(f.cost.Omega_T * x) + (f.cost.Omega_T * f.sigma.values.back()).trace(), 1e-15);
  EXPECT_THROW(f.value(0.0005, x, f.sigma.values.back()), Error);
}

TEST(Hjb, ZeroProblemHasZeroResidual) {
  const LinearModel m = model_from_coefficients(RealMatrix::Identity(2, 2), RealMatrix::Ones(1, 2),
                                                RealMatrix::Ones(2, 1), RealMatrix::Zero(2, 1), RealMatrix::Zero(1, 2),
                                                RealMatrix::Zero(2, 2), RealMatrix::Zero(2, 2));
  const LqgFixture f = lqg_fixture(m, RealMatrix::Identity(2, 2), RealMatrix::Zero(2, 2), 1.0, 0.01);
  std::mt19937_64 rng(1);
  for (int k = 0; k < 10; ++k) {
    const RealVector x = gaussian_matrix(rng, 2, 1);
    EXPECT_EQ(hjb_residual_lqg(f.value, m, f.cost, 0.5, x, f.sigma[50]), 0.0);
  }
}

void expect_small_residuals(const LqgFixture& f, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, f.sigma.grid.steps);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t i = pick(rng);
    const RealVector x = gaussian_matrix(rng, f.model.dim(), 1, 2.0);
    worst = std::max(worst, std::abs(hjb_residual_lqg(f.value, f.model, f.cost, f.sigma.grid.time(i), x, f.sigma[i])));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Hjb, RiccatiValueSolvesHjbFreeParticle) { expect_small_residuals(free_particle_fixture(), 2); }

TEST(Hjb, RiccatiValueSolvesHjbRandomModel) { expect_small_residuals(random_fixture(77), 3); }

TEST(Hjb, OffPathCovarianceLeavesGainWeightedGap) {
  // Independent oracle: the residual reduces to Tr[L(Σ(t) − Σ)Lᵀ].
  const LqgFixture f = random_fixture(78);
  std::mt19937_64 rng(4);
  for (int k = 0; k < 10; ++k) {
    const std::size_t i = 100 * static_cast<std::size_t>(k);
    const RealMatrix s = random_admissible_covariance(rng, 2, 1.0, 0.3);
    const RealVector x = gaussian_matrix(rng, 4, 1);
    const RealMatrix L = optimal_gain(f.omega[i], f.model, f.cost);
    const double oracle = (L * (f.sigma[i] - s) * L.transpose()).trace();
    EXPECT_NEAR(hjb_residual_lqg(f.value, f.model, f.cost, f.sigma.grid.time(i), x, s), oracle,
                1e-9 * std::max(1.0, std::abs(oracle)));
  }
}

TEST(Hjb, ResidualIsLinearInOmegaPerturbation) {
  for (const LqgFixture& f : {free_particle_fixture(), random_fixture(79)}) {
    const QuadraticValue a = f.value.perturbed(1e-3), b = f.value.perturbed(1e-4);
    std::mt19937_64 rng(5);
    for (int k = 0; k < 20; ++k) {
      const std::size_t i = 97 * static_cast<std::size_t>(k);
      const RealVector x = gaussian_matrix(rng, f.model.dim(), 1);
      const double t = f.sigma.grid.time(i);
      const double ra = hjb_residual_lqg(a, f.model, f.cost, t, x, f.sigma[i]);
      const double rb = hjb_residual_lqg(b, f.model, f.cost, t, x, f.sigma[i]);
      const double ratio = ra / rb / 10.0;
      EXPECT_GT(ratio, 1.0 / 1.2);
      EXPECT_LT(ratio, 1.2);
    }
  }
}

TEST(Hjb, OptimalControlMatchesGain) {
  const LqgFixture f = random_fixture(80);
  std::mt19937_64 rng(6);
  for (int k = 0; k < 100; ++k) {
    const std::size_t i = 20 * static_cast<std::size_t>(k);
    const RealVector x = gaussian_matrix(rng, 4, 1);
    const RealVector u = optimal_control_quadratic(f.value, f.sigma.grid.time(i), f.model, f.cost, x);
    const RealVector ref = optimal_gain(f.omega[i], f.model, f.cost) * x;
    EXPECT_LE(max_abs(u - ref), 1e-12 * std::max(1.0, max_abs(ref)));
  }
  const RealVector x = RealVector::Ones(4);
  CostSpec no_output = f.cost;
  no_output.E_f.setZero();
  EXPECT_EQ(max_abs(optimal_control_quadratic(RealVector::Zero(4), f.model, no_output, x)), 0.0);
  EXPECT_EQ(optimal_control_quadratic(RealVector::Zero(4), f.model, f.cost, x), f.cost.E_f * x);
}

TEST(Hjb, SweepCsv) {
  const std::string csv = residual_sweep_csv({{0.0, 0, 1e-12}, {0.5, 1, -2e-13}});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "t,point,residual");
}

// --- Fréchet derivatives -------------------------------------------------------

TEST(GellMann, OrthonormalTracelessHermitian) {
  for (Eigen::Index n : {2, 3, 4}) {
    const auto basis = gell_mann_basis(n);
    ASSERT_EQ(static_cast<Eigen::Index>(basis.size()), n * n - 1);
    for (std::size_t a = 0; a < basis.size(); ++a) {
      EXPECT_LE(std::abs(basis[a].trace()), 1e-15);
      EXPECT_TRUE(is_hermitian(basis[a], 0.0));
      for (std::size_t b = 0; b < basis.size(); ++b)
        EXPECT_NEAR(std::abs(trace_product(basis[a], basis[b]) - (a == b ? 2.0 : 0.0)), 0.0, 1e-14);
    }
  }
}

TEST(Frechet, LinearFunctional) {
  std::mt19937_64 rng(7);
  for (Eigen::Index n : {2, 3, 4}) {
    const Matrix X = random_hermitian(rng, n);
    const Matrix rho = random_state(rng, n);
    const Matrix g = frechet_gradient([&](const Matrix& r) { return pairing(r, X); }, rho);
    EXPECT_LE(max_abs(g - traceless(X)), 1e-8);
  }
}

TEST(Frechet, ConstantFunctional) {
  std::mt19937_64 rng(8);
  const Matrix g = frechet_gradient([](const Matrix&) { return 3.25; }, random_state(rng, 3));
  EXPECT_EQ(max_abs(g), 0.0);
}

TEST(Frechet, SquaredFunctionalOnQubit) {
  std::mt19937_64 rng(9);
  const Matrix X = random_hermitian(rng, 2);
  const Matrix rho = random_state(rng, 2);
  auto f = [&](const Matrix& r) { return std::pow(pairing(r, X), 2); };
  const Matrix g = frechet_gradient(f, rho, 1e-4);
  EXPECT_LE(max_abs(g - 2.0 * pairing(rho, X) * traceless(X)), 1e-6);
  EXPECT_LE(max_abs(g - frechet_gradient(f, rho, 5e-5)), 1e-6);
}

TEST(Frechet, ErrorModelForClosedForms) {
  std::mt19937_64 rng(10);
  const Matrix X = random_hermitian(rng, 3);
  const Matrix rho = random_state(rng, 3);
  struct Case {
    std::function<double(const Matrix&)> f;
    Matrix grad;
  };
  const double a = pairing(rho, X);
  const std::vector<Case> cases{
      {[&](const Matrix& r) { return pairing(r, X); }, traceless(X)},
      {[&](const Matrix& r) { return trace_product(r, r).real(); }, traceless(2.0 * rho)},
      {[&](const Matrix& r) { return std::pow(pairing(r, X), 3); }, 3.0 * a * a * traceless(X)},
      {[&](const Matrix& r) { return std::exp(pairing(r, X)); }, std::exp(a) * traceless(X)},
  };
  for (double h : {1e-3, 1e-4}) {
    for (const auto& c : cases) EXPECT_LE(max_abs(frechet_gradient(c.f, rho, h) - c.grad), 10 * h * h + 1e-9);
  }
}

TEST(Frechet, StepRangeAndFiniteness) {
  const Matrix rho = Matrix::Identity(2, 2) / 2.0;
  auto f = [](const Matrix& r) { return r(0, 0).real(); };
  EXPECT_THROW(frechet_gradient(f, rho, 1e-2), Error);
  EXPECT_THROW(frechet_gradient(f, rho, 1e-7), Error);
  EXPECT_THROW(frechet_gradient([](const Matrix&) { return std::nan(""); }, rho), Error);
}

TEST(Frechet, HessianContractionOfPurity) {
  std::mt19937_64 rng(11);
  const Matrix rho = random_state(rng, 3);
  const Matrix delta = traceless(random_hermitian(rng, 3));
  const double h2 = hessian_contraction([](const Matrix& r) { return trace_product(r, r).real(); }, rho, delta);
  EXPECT_NEAR(h2, 2.0 * trace_product(delta, delta).real(), 1e-6);
}

// --- Pontryagin Hamiltonian ------------------------------------------------------

// Qubit with a σ_− channel under coherent control; λ_u is affine in u.
FilterModel controlled_qubit() {
  FilterModel m;
  m.coupling = CouplingSet{0.5 * pauli::z(), {pauli::lowering(), 0.4 * pauli::lowering()}, {}, 1.0};
  m.counting = {0};
  m.feedback = {1};
  return m;
}

std::vector<RealVector> grid_controls(double step, double half_width) {
  std::vector<RealVector> out;
  const int n = static_cast<int>(std::round(half_width / step));
  for (int k = -n; k <= n; ++k) out.push_back(RealVector::Constant(1, k * step));
  return out;
}

TEST(Pontryagin, SingletonIsPlainEvaluation) {
  const FilterModel m = controlled_qubit();
  std::mt19937_64 rng(12);
  const Matrix q = -random_state(rng, 2), p = random_hermitian(rng, 2);
  const ControlledGenerator gen = controlled_generator(m);
  const ControlCost cost = [](const RealVector& u) { return (1.0 + u.squaredNorm()) * pauli::z(); };
  const auto h = pontryagin_hamiltonian(q, p, cost, gen, {RealVector::Zero(1)});
  const double direct = pairing(gen(RealVector::Zero(1), q), p) - pairing(-q, cost(RealVector::Zero(1)));
  EXPECT_EQ(h.value, direct);
  EXPECT_EQ(h.argmax, 0u);
}

TEST(Pontryagin, ZeroMomentumGivesMinusMinimalLagrangian) {
  std::mt19937_64 rng(13);
  const Matrix q = -random_state(rng, 2);
  const ControlCost cost = [](const RealVector& u) { return diag2(1.0 + u(0), 2.0 - u(0) * u(0)); };
  const auto controls = grid_controls(0.25, 1.0);
  const auto h = pontryagin_hamiltonian(q, Matrix::Zero(2, 2), cost, controlled_generator(controlled_qubit()), controls);
  double lmin = std::numeric_limits<double>::infinity();
  for (const auto& u : controls) lmin = std::min(lmin, pairing(-q, cost(u)));
  EXPECT_DOUBLE_EQ(h.value, -lmin);
}

TEST(Pontryagin, QuadraticProgramOnGrid) {
  const FilterModel m = controlled_qubit();
  const ControlledGenerator gen = controlled_generator(m);
  std::mt19937_64 rng(14);
  const Matrix rho = random_state(rng, 2);
  const Matrix q = -rho;
  const Matrix p = random_hermitian(rng, 2);
  const ControlCost cost = [](const RealVector& u) { return u.squaredNorm() * Matrix::Identity(2, 2); };
  // Objective b·u − c·u² + a, read off from three evaluations (λ_u is affine).
  auto objective = [&](double u) {
    const RealVector v = RealVector::Constant(1, u);
    return pairing(gen(v, q), p) - pairing(-q, cost(v));
  };
  const double a = objective(0.0);
  const double c = a - 0.5 * (objective(1.0) + objective(-1.0));
  const double b = 0.5 * (objective(1.0) - objective(-1.0));
  ASSERT_NEAR(c, 1.0, 1e-12);
  const double exact = a + b * b / (4.0 * c);
  double previous = -std::numeric_limits<double>::infinity();
  for (double step : {0.2, 0.1, 0.05, 0.025}) {
    const auto h = pontryagin_hamiltonian(q, p, cost, gen, grid_controls(step, 3.0));
    EXPECT_LE(h.value, exact + 1e-12);
    EXPECT_LE(exact - h.value, c * step * step / 4.0 + 1e-12);
    EXPECT_LE(std::abs(grid_controls(step, 3.0)[h.argmax](0) - b / (2.0 * c)), step / 2.0 + 1e-12);
    EXPECT_GE(h.value, previous);  // nested grids: supremum over a larger set
    previous = h.value;
  }
}

TEST(Pontryagin, TiesGoToLowestIndexAndEmptySetFails) {
  const ControlCost cost = zero_control_cost(2);
  const ControlledGenerator gen = [](const RealVector&, const Matrix& x) { return x; };
  const Matrix q = -Matrix::Identity(2, 2) / 2.0;
  const auto h = pontryagin_hamiltonian(q, Matrix::Identity(2, 2), cost, gen,
                                        {RealVector::Constant(1, 1.0), RealVector::Constant(1, -1.0)});
  EXPECT_EQ(h.argmax, 0u);
  EXPECT_THROW(pontryagin_hamiltonian(q, q, cost, gen, {}), Error);
}

// --- counting Bellman residual --------------------------------------------------

FilterModel damped_counting_qubit() {
  FilterModel m;
  m.coupling = CouplingSet{Matrix::Zero(2, 2), {pauli::lowering()}, {}, 1.0};
  m.counting = {0};
  return m;
}

DensityMatrix ket_state(double a, double b) {
  Eigen::VectorXcd v(2);
  v << a, b;
  return DensityMatrix::pure(v);
}

TEST(CountingBellman, ConstantFunctionalHasZeroResidual) {
  const StateFunctional S{[](double, const Matrix&) { return 2.0; }, {RealVector::Zero(0)}};
  const auto r = bellman_residual_counting(S, damped_counting_qubit(), 0.3, ket_state(0.6, 0.8));
  EXPECT_EQ(r.residual, 0.0);
}

TEST(CountingBellman, ExcitedPopulationTermsByHand) {
  const Matrix Pe = diag2(0.0, 1.0);
  const StateFunctional S{[&](double, const Matrix& r) { return pairing(r, Pe); }, {RealVector::Zero(0)}};
  const DensityMatrix rho = ket_state(0.6, 0.8);
  const auto r = bellman_residual_counting(S, damped_counting_qubit(), 0.0, rho);
  // ∇S = traceless(P_e); H(−ς, ∇S) = ⟨λ[−ς], ∇S⟩ = ρ_ee; △S = 0 for linear S.
  EXPECT_LE(max_abs(r.gradient - traceless(Pe)), 1e-8);
  EXPECT_NEAR(r.time_derivative, 0.0, 1e-12);
  EXPECT_NEAR(r.hamiltonian, rho.population(1), 1e-5);
  EXPECT_NEAR(r.feller, 0.0, 1e-5);
  EXPECT_NEAR(r.residual, rho.population(1), 1e-5);
}

TEST(CountingBellman, DarkStateHasNoFellerTerm) {
  const Matrix Pe = diag2(0.0, 1.0);
  const StateFunctional S{[&](double, const Matrix& r) { return std::pow(pairing(r, Pe), 2) + 1.0; },
                          {RealVector::Zero(0)}};
  const auto r = bellman_residual_counting(S, damped_counting_qubit(), 0.0, DensityMatrix::basis(2, 0));
  EXPECT_EQ(r.feller, 0.0);
  EXPECT_NEAR(r.residual, r.hamiltonian, 0.0);
  EXPECT_NEAR(r.residual, 0.0, 1e-8);
}

TEST(CountingBellman, FellerTermForQuadraticFunctional) {
  std::mt19937_64 rng(15);
  const Matrix X = random_hermitian(rng, 2);
  const StateFunctional S{[&](double, const Matrix& r) { return std::pow(pairing(r, X), 2); }, {RealVector::Zero(0)}};
  const DensityMatrix rho = ket_state(0.6, 0.8);
  const FilterModel m = damped_counting_qubit();
  const auto r = bellman_residual_counting(S, m, 0.0, rho);
  const Matrix l = m.coupling.jump_ops[0];
  const double nu = counting_intensity(rho.matrix(), l);
  const Matrix jumped = l * rho.matrix() * l.adjoint() / nu;
  const double jump_gap = pairing(jumped, X) - pairing(rho.matrix(), X);
  EXPECT_NEAR(r.feller, kFellerFactor * nu * 2.0 * jump_gap * jump_gap, 1e-6);

  CountingBellmanOptions doubled;
  doubled.feller_factor = 1.0;
  EXPECT_NEAR(bellman_residual_counting(S, m, 0.0, rho, doubled).feller, 2.0 * r.feller, 1e-12);
}

TEST(CountingBellman, ExpectedTerminalCostSolvesTheEquation) {
  // S(t, ς) = ⟨e^{(T−t)λ}[ς], š⟩ is the uncontrolled value of a terminal
  // cost; it is linear in ς, so the equation holds with a zero Feller term.
  FilterModel m;
  m.coupling = CouplingSet{0.7 * pauli::x() + 0.2 * pauli::z(), {0.9 * pauli::lowering()}, {}, 1.0};
  m.counting = {0};
  const Matrix terminal = diag2(0.3, 1.0);
  const double T = 2.0;
  const StateFunctional S{[&](double t, const Matrix& r) { return pairing(master_exact(m.coupling, r, T - t), terminal); },
                          {RealVector::Zero(0)}};
  std::mt19937_64 rng(16);
  for (int k = 0; k < 5; ++k) {
    const DensityMatrix rho = DensityMatrix::from_matrix(random_state(rng, 2));
    const auto r = bellman_residual_counting(S, m, 0.4 + 0.3 * k, rho);
    EXPECT_NEAR(r.residual, 0.0, 1e-6);
    EXPECT_GT(std::abs(r.time_derivative), 1e-3);
  }
}

TEST(CountingBellman, RejectsDiffusiveChannels) {
  FilterModel m = damped_counting_qubit();
  m.coupling.jump_ops.push_back(pauli::z());
  m.diffusive = {1};
  const StateFunctional S{[](double, const Matrix&) { return 0.0; }, {RealVector::Zero(0)}};
  EXPECT_THROW(bellman_residual_counting(S, m, 0.0, DensityMatrix::basis(2, 1)), Error);
}

// --- Monte Carlo policy comparison ---------------------------------------------

TEST(PolicyMc, LqgOptimalBeatsZeroControl) {
  const LinearModel m = free_particle_model({1.0, 1.0, 0.0, 0.0, 1.0, 1.0});
  RealMatrix wT = RealMatrix::Identity(2, 2);
  const CostSpec cost = default_cost(m, wT);
  RealVector x(2);
  x << 1.0, 0.0;
  const GaussianBelief b{x, 0.5 * RealMatrix::Identity(2, 2)};
  const MatrixPath s = filter_riccati_solve(m, b.cov, 2.0, 4e-3);
  const MatrixPath o = control_riccati_solve(m, cost, 2.0, 4e-3);
  const auto c = policy_cost_mc(m, cost, b, s, {gain_policy(m, cost, o), zero_policy(1), gain_policy(m, cost, o)}, 21,
                                {2000, 1});
  ASSERT_EQ(c.differences.size(), 3u);
  EXPECT_GT(c.differences[0].mean, 3.0 * c.differences[0].stderr_);
  EXPECT_EQ(c.differences[1].mean, 0.0);
  EXPECT_EQ(c.differences[1].stderr_, 0.0);
  const Json j = policy_comparison_json(c, {"optimal", "zero", "optimal-copy"});
  EXPECT_EQ(j["policies"].size(), 3u);
  EXPECT_EQ(j["differences"][0]["second"], "zero");
}

TEST(PolicyMc, DensityPoliciesOnCommonNoise) {
  FilterModel m;
  m.coupling = CouplingSet{Matrix::Zero(2, 2), {pauli::lowering(), 0.5 * pauli::lowering()}, {}, 1.0};
  m.diffusive = {0};
  m.feedback = {1};
  const DensityCost cost{[](const RealVector& u) { return u.squaredNorm() * Matrix::Identity(2, 2); }, diag2(0.0, 1.0)};
  const FeedbackLaw none = [](double, const DensityMatrix&) -> RealVector { return RealVector::Zero(1); };
  const FeedbackLaw drive = [](double, const DensityMatrix&) -> RealVector { return RealVector::Constant(1, 0.8); };
  PolicyMcOptions opt;
  opt.trajectories = 200;
  const DensityMatrix rho0 = ket_state(0.6, 0.8);
  const auto c = policy_cost_mc(m, {none, drive, none}, cost, rho0, 1.0, 1e-2, 5, opt);
  EXPECT_EQ(c.policies[0].costs, c.policies[2].costs);
  EXPECT_EQ(c.differences[1].mean, 0.0);
  EXPECT_NE(c.differences[0].mean, 0.0);
  // Uncontrolled cost is the excited population; both channels damp, so the
  // mean is e^{−1.25}ρ_ee(0) up to the O(dt) filter bias.
  EXPECT_NEAR(c.policies[0].mean, 0.64 * std::exp(-1.25), 3.0 * c.policies[0].stderr_ + 5e-3);
  opt.threads = 3;
  const auto d = policy_cost_mc(m, {none, drive, none}, cost, rho0, 1.0, 1e-2, 5, opt);
  EXPECT_EQ(c.policies[1].costs, d.policies[1].costs);
}

}  // namespace
}  // namespace qfc
