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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "qfc/ensemble.hpp"
#include "qfc/grid.hpp"
#include "qfc/io.hpp"
#include "qfc/master.hpp"
#include "qfc/operators.hpp"
#include "qfc/rng.hpp"

namespace qfc {

/// Coupling plus the disjoint channel roles (0-based channel indices).
struct FilterModel {
  CouplingSet coupling;
  std::vector<std::size_t> diffusive;
  std::vector<std::size_t> counting;
  std::vector<std::size_t> feedback;

  std::vector<std::size_t> estimation() const {
    std::vector<std::size_t> e = diffusive;
    e.insert(e.end(), counting.begin(), counting.end());
    return e;
  }

  void validate() const {
    coupling.validate();
    for (const auto* set : {&diffusive, &counting, &feedback})
      for (std::size_t a = 0; a < set->size(); ++a) {
        if ((*set)[a] >= coupling.channels())
          throw Error(ErrorKind::InvalidArgument, "channel index " + std::to_string((*set)[a]) + " out of range");
        for (std::size_t b = a + 1; b < set->size(); ++b)
          if ((*set)[a] == (*set)[b]) throw Error(ErrorKind::ChannelOverlap, "channel listed twice");
      }
    require_disjoint(diffusive, counting, "diffusive and counting channels overlap");
    require_disjoint(diffusive, feedback, "diffusive and feedback channels overlap");
    require_disjoint(counting, feedback, "counting and feedback channels overlap");
  }
};

/// δ(ς) = ςĽ† + Ľς − tr[ς(Ľ + Ľ†)] ς; traceless.
inline Matrix diffusive_fluctuation(const Matrix& rho, const Matrix& jump) {
  const double expect = 2.0 * trace_product(rho, jump).real();
  return rho * jump.adjoint() + jump * rho - expect * rho;
}

/// Intensities below this are treated as zero; an event there is an error.
inline constexpr double kZeroIntensity = 1e-14;

/// ν(ς) = tr[Ľ ς Ľ†].
inline double counting_intensity(const Matrix& rho, const Matrix& jump) {
  return std::max(0.0, trace_product(jump.adjoint() * jump, rho).real());
}

/// Euler–Maruyama step ς + λ(ς)dt + Σ δ_i(ς) dŴ_i, then normalize_and_clip.
/// `innovations` holds dŴ_i for the listed channels.
inline DensityMatrix diffusive_step(const DensityMatrix& state, const CouplingSet& c,
                                    const std::vector<std::size_t>& channels, const std::vector<double>& innovations,
                                    double dt, double clip_tol = 1e-10) {
  if (channels.size() != innovations.size())
    throw Error(ErrorKind::DimensionMismatch, "one innovation per diffusive channel");
  if (!(dt > 0.0)) throw Error(ErrorKind::InvalidArgument, "dt must be positive");
  const Matrix& rho = state.matrix();
  Matrix next = rho + dt * lindblad_apply(c, rho);
  for (std::size_t a = 0; a < channels.size(); ++a) {
    if (!std::isfinite(innovations[a])) throw Error(ErrorKind::NonFinite, "innovation increment");
    next += innovations[a] * diffusive_fluctuation(rho, c.jump_ops.at(channels[a]));
  }
  return normalize_and_clip(next, clip_tol);
}

/// ς + λ(ς)dt + Σ (α_i(ς) − ς)(dN_i − ν_i(ς)dt) with α_i(ς) = ĽςĽ†/ν_i.
inline DensityMatrix counting_step(const DensityMatrix& state, const CouplingSet& c,
                                   const std::vector<std::size_t>& channels, const std::vector<int>& events,
                                   double dt, double clip_tol = 1e-10) {
  if (channels.size() != events.size()) throw Error(ErrorKind::DimensionMismatch, "one event flag per channel");
  if (!(dt > 0.0)) throw Error(ErrorKind::InvalidArgument, "dt must be positive");
  const Matrix& rho = state.matrix();
  Matrix next = rho + dt * lindblad_apply(c, rho);
  for (std::size_t a = 0; a < channels.size(); ++a) {
    const Matrix& l = c.jump_ops.at(channels[a]);
    const Matrix jumped = l * rho * l.adjoint();
    const double nu = std::max(0.0, jumped.trace().real());
    if (events[a] != 0 && events[a] != 1) throw Error(ErrorKind::InvalidArgument, "event flags must be 0 or 1");
    if (events[a] == 1) {
      if (nu < kZeroIntensity) throw Error(ErrorKind::ZeroIntensityJump, "event on channel with zero intensity");
      next += (1.0 / nu - dt) * jumped - (1.0 - nu * dt) * rho;
    } else {
      next += nu * dt * rho - dt * jumped;
    }
  }
  return normalize_and_clip(next, clip_tol);
}

/// Update rule used along trajectories.
///  * Kraus: ς' ∝ MςM† + Σ_unobserved ĽςĽ†dt with M = 1 + D dt + Σ_W Ľ dY,
///    or ĽςĽ† on a counting event. First-order equivalent to the Euler
///    step, positive by construction, and pure states stay pure when every
///    channel is observed.
///  * EulerMaruyama: the literal diffusive_step / counting_step increments.
///    Leaves O(dt) negative eigenvalues on nearly pure states.
enum class FilterScheme { Kraus, EulerMaruyama };

/// One filter step from ς given the measured record over [t, t + dt).
inline DensityMatrix filter_update(const Matrix& rho, const CouplingSet& c, const std::vector<std::size_t>& diffusive,
                                   const std::vector<std::size_t>& counting, const std::vector<double>& measurements,
                                   const std::vector<int>& events, double dt, FilterScheme scheme,
                                   double clip_tol = 1e-10) {
  if (scheme == FilterScheme::EulerMaruyama) {
    Matrix next = rho + dt * lindblad_apply(c, rho);
    for (std::size_t a = 0; a < diffusive.size(); ++a) {
      const Matrix& l = c.jump_ops[diffusive[a]];
      const double dw = measurements[a] - 2.0 * trace_product(rho, l).real() * dt;
      next += dw * diffusive_fluctuation(rho, l);
    }
    for (std::size_t a = 0; a < counting.size(); ++a) {
      const Matrix& l = c.jump_ops[counting[a]];
      const Matrix jumped = l * rho * l.adjoint();
      const double nu = std::max(0.0, jumped.trace().real());
      if (events[a] == 1) {
        if (nu < kZeroIntensity) throw Error(ErrorKind::ZeroIntensityJump, "event on channel with zero intensity");
        next += (1.0 / nu - dt) * jumped - (1.0 - nu * dt) * rho;
      } else {
        next += nu * dt * rho - dt * jumped;
      }
    }
    return normalize_and_clip(next, clip_tol);
  }

  for (std::size_t a = 0; a < counting.size(); ++a)
    if (events[a] == 1) {
      const Matrix& l = c.jump_ops[counting[a]];
      const Matrix jumped = l * rho * l.adjoint();
      if (jumped.trace().real() < kZeroIntensity)
        throw Error(ErrorKind::ZeroIntensityJump, "event on channel with zero intensity");
      return normalize_and_clip(jumped, clip_tol);
    }
  const Eigen::Index n = rho.rows();
  Matrix kraus = Matrix::Identity(n, n) - (kI * dt / c.hbar) * c.hamiltonian;
  for (const auto& l : c.jump_ops) kraus.noalias() -= (0.5 * dt) * (l.adjoint() * l);
  for (std::size_t a = 0; a < diffusive.size(); ++a) kraus += measurements[a] * c.jump_ops[diffusive[a]];
  Matrix next = kraus * rho * kraus.adjoint();
  for (std::size_t i = 0; i < c.channels(); ++i) {
    if (std::find(diffusive.begin(), diffusive.end(), i) != diffusive.end() ||
        std::find(counting.begin(), counting.end(), i) != counting.end())
      continue;
    next.noalias() += dt * (c.jump_ops[i] * rho * c.jump_ops[i].adjoint());
  }
  return normalize_and_clip(next, clip_tol);
}

/// Feedback law evaluated at the start of each step from the current
/// (causally computed) filter state. Returns one amplitude per feedback channel.
using FeedbackLaw = std::function<RealVector(double t, const DensityMatrix& state)>;

inline FeedbackLaw open_loop(const ControlSignal& signal) {
  return [signal](double t, const DensityMatrix&) { return signal.at(t); };
}

struct SimulationOptions {
  FilterScheme scheme = FilterScheme::Kraus;
  double clip_tol = 1e-10;
  /// Bound on ν·dt for every counting channel.
  double max_rate_step = 0.1;
};

/// Stream ids inside a (seed, trajectory, step) counter cell.
inline constexpr std::uint32_t kCountingStream = 0x80000000u;

/// One step's worth of record data handed to trajectory sinks.
struct StepData {
  std::size_t step = 0;
  double t = 0.0;
  const DensityMatrix* state = nullptr;  // ς at t, before the update
  const RealVector* control = nullptr;
  const std::vector<double>* measurement = nullptr;  // dY per diffusive channel
  const std::vector<double>* innovation = nullptr;   // dŴ per diffusive channel
  const std::vector<int>* events = nullptr;          // dN per counting channel
};

/// Drives one trajectory over `grid`. `sink.step(StepData)` is called for
/// every step and `sink.finish(final_state)` once at the end.
template <class Sink>
void run_trajectory(const FilterModel& m, const FeedbackLaw& law, const DensityMatrix& rho0, const TimeGrid& grid,
                    std::uint64_t seed, std::uint64_t index, Sink& sink, const SimulationOptions& opt = {}) {
  const Philox rng(seed);
  const CouplingSet& base = m.coupling;
  const std::vector<std::size_t> estimation = m.estimation();
  const double sqrt_dt = std::sqrt(grid.dt);
  const std::size_t nw = m.diffusive.size(), nn = m.counting.size();

  DensityMatrix state = rho0;
  std::vector<double> dy(nw), dw(nw), nu(nn);
  std::vector<int> dn(nn);
  RealVector u = RealVector::Zero(static_cast<Eigen::Index>(m.feedback.size()));

  for (std::size_t k = 0; k < grid.steps; ++k) {
    const double t = grid.time(k);
    const auto step32 = static_cast<std::uint32_t>(k);
    if (!m.feedback.empty() && law) u = law(t, state);
    const CouplingSet controlled =
        m.feedback.empty() ? CouplingSet{} : coherent_control_apply(base, u, m.feedback, estimation);
    const CouplingSet& c = m.feedback.empty() ? base : controlled;
    const Matrix& rho = state.matrix();

    for (std::size_t a = 0; a < nw; ++a) {
      const Matrix& l = c.jump_ops[m.diffusive[a]];
      const double mean_rate = 2.0 * trace_product(rho, l).real();
      const double noise = sqrt_dt * rng.normal(index, step32, static_cast<std::uint32_t>(m.diffusive[a]));
      dy[a] = mean_rate * grid.dt + noise;
      dw[a] = dy[a] - mean_rate * grid.dt;
    }
    if (nn > 0) {
      double cumulative = 0.0;
      const double draw = rng.uniform(index, step32, kCountingStream);
      bool fired = false;
      for (std::size_t a = 0; a < nn; ++a) {
        nu[a] = counting_intensity(rho, c.jump_ops[m.counting[a]]);
        if (nu[a] * grid.dt > opt.max_rate_step)
          throw Error(ErrorKind::RateStepTooLarge, "channel " + std::to_string(m.counting[a]) + " step " +
                                                       std::to_string(k) + ": rate*dt = " +
                                                       format_double(nu[a] * grid.dt) + "; reduce dt");
        cumulative += nu[a] * grid.dt;
        dn[a] = (!fired && nu[a] >= kZeroIntensity && draw < cumulative) ? 1 : 0;
        fired = fired || dn[a] == 1;
      }
    }

    sink.step(StepData{k, t, &state, &u, &dy, &dw, &dn});

    try {
      state = filter_update(rho, c, m.diffusive, m.counting, dy, dn, grid.dt, opt.scheme, opt.clip_tol);
    } catch (const Error& e) {
      throw Error(e.kind(), "filter step " + std::to_string(k) + " (t=" + format_double(t) + "): " + e.what());
    }
  }
  sink.finish(state);
}

/// Full per-trajectory record. Row k of the increment tables covers [t_k, t_{k+1}).
struct TrajectoryRecord {
  TimeGrid grid;
  std::vector<std::size_t> diffusive, counting, feedback;
  std::vector<std::vector<double>> measurements;  // [step][diffusive channel]
  std::vector<std::vector<double>> innovations;
  std::vector<std::vector<int>> events;  // [step][counting channel]
  std::vector<RealVector> controls;      // [step]
  std::vector<DensityMatrix> states;     // [grid point]
  std::uint64_t seed = 0;
  std::uint64_t trajectory_index = 0;

  std::vector<double> times() const { return grid.times(); }

  /// Columns t, dY_i, dN_i, u_i, state entries; the final row has zero increments.
  std::string to_csv() const {
    std::vector<std::string> header{"t"};
    for (auto i : diffusive) header.push_back("dY_" + std::to_string(i + 1));
    for (auto i : counting) header.push_back("dN_" + std::to_string(i + 1));
    for (auto i : feedback) header.push_back("u_" + std::to_string(i + 1));
    const auto cols = matrix_columns(states.front().dim());
    header.insert(header.end(), cols.begin(), cols.end());
    CsvWriter csv(header);
    for (std::size_t k = 0; k < states.size(); ++k) {
      std::vector<double> row{grid.time(k)};
      const bool has = k < grid.steps;
      for (std::size_t a = 0; a < diffusive.size(); ++a) row.push_back(has ? measurements[k][a] : 0.0);
      for (std::size_t a = 0; a < counting.size(); ++a) row.push_back(has ? events[k][a] : 0.0);
      for (std::size_t a = 0; a < feedback.size(); ++a)
        row.push_back(has ? controls[k](static_cast<Eigen::Index>(a)) : 0.0);
      append_matrix(row, states[k].matrix());
      csv.row(row);
    }
    return csv.str();
  }
};

namespace detail {
struct RecordSink {
  TrajectoryRecord* rec;
  void step(const StepData& s) {
    rec->states.push_back(*s.state);
    rec->measurements.push_back(*s.measurement);
    rec->innovations.push_back(*s.innovation);
    rec->events.push_back(*s.events);
    rec->controls.push_back(*s.control);
  }
  void finish(const DensityMatrix& final_state) { rec->states.push_back(final_state); }
};
}  // namespace detail

inline TrajectoryRecord simulate_trajectory(const FilterModel& m, const FeedbackLaw& law, const DensityMatrix& rho0,
                                            double horizon, double dt, std::uint64_t seed, std::uint64_t index,
                                            const SimulationOptions& opt = {}) {
  m.validate();
  if (rho0.dim() != m.coupling.dim()) throw Error(ErrorKind::DimensionMismatch, "initial state dimension");
  TrajectoryRecord rec;
  rec.grid = TimeGrid::make(horizon, dt);
  rec.diffusive = m.diffusive;
  rec.counting = m.counting;
  rec.feedback = m.feedback;
  rec.seed = seed;
  rec.trajectory_index = index;
  rec.states.reserve(rec.grid.points());
  detail::RecordSink sink{&rec};
  run_trajectory(m, law, rho0, rec.grid, seed, index, sink, opt);
  return rec;
}

inline TrajectoryRecord simulate_trajectory(const FilterModel& m, const ControlSignal& control,
                                            const DensityMatrix& rho0, double horizon, double dt,
                                            std::uint64_t seed, std::uint64_t index,
                                            const SimulationOptions& opt = {}) {
  return simulate_trajectory(m, open_loop(control), rho0, horizon, dt, seed, index, opt);
}

/// Re-runs the filter on a recorded measurement record (dY, dN, u).
inline std::vector<DensityMatrix> filter_measurement_record(const FilterModel& m, const TrajectoryRecord& rec,
                                                            const DensityMatrix& rho0,
                                                            const SimulationOptions& opt = {}) {
  m.validate();
  std::vector<DensityMatrix> out{rho0};
  out.reserve(rec.grid.points());
  const auto estimation = m.estimation();
  for (std::size_t k = 0; k < rec.grid.steps; ++k) {
    const CouplingSet c =
        m.feedback.empty() ? m.coupling : coherent_control_apply(m.coupling, rec.controls[k], m.feedback, estimation);
    out.push_back(filter_update(out.back().matrix(), c, m.diffusive, m.counting, rec.measurements[k],
                                rec.events[k], rec.grid.dt, opt.scheme, opt.clip_tol));
  }
  return out;
}

/// Diffusive filter driven by a given innovation path dŴ[step][channel];
/// the measurement is reconstructed as dY = tr[ς(Ľ + Ľ†)]dt + dŴ.
inline std::vector<DensityMatrix> propagate_innovations(const CouplingSet& c, const std::vector<std::size_t>& channels,
                                                        const DensityMatrix& rho0, double dt,
                                                        const std::vector<std::vector<double>>& innovations,
                                                        const SimulationOptions& opt = {}) {
  std::vector<DensityMatrix> out{rho0};
  out.reserve(innovations.size() + 1);
  std::vector<double> dy(channels.size());
  for (const auto& dw : innovations) {
    const Matrix& rho = out.back().matrix();
    for (std::size_t a = 0; a < channels.size(); ++a)
      dy[a] = 2.0 * trace_product(rho, c.jump_ops[channels[a]]).real() * dt + dw[a];
    out.push_back(filter_update(rho, c, channels, {}, dy, {}, dt, opt.scheme, opt.clip_tol));
  }
  return out;
}

/// Pointwise mean and per-entry standard error (real and imaginary parts
/// carried as the real and imaginary parts of `stderr`).
struct EnsembleStats {
  TimeGrid grid;
  std::size_t count = 0;
  std::vector<Matrix> mean;
  std::vector<Matrix> stderr_;

  Json to_json(std::uint64_t seed) const {
    Json means = Json::array(), errs = Json::array();
    for (std::size_t k = 0; k < mean.size(); ++k) {
      means.push_back(matrix_to_json(mean[k]));
      errs.push_back(matrix_to_json(stderr_[k]));
    }
    return Json{{"grid", {{"dt", grid.dt}, {"steps", grid.steps}, {"times", grid.times()}}},
                {"trajectories", count},
                {"seeds", {{"seed", seed}, {"first_index", 0}, {"last_index", count ? count - 1 : 0}}},
                {"mean", std::move(means)},
                {"stderr", std::move(errs)}};
  }
};

/// Streaming first and second moments of a state path.
class StateMoments {
 public:
  StateMoments() = default;
  StateMoments(const TimeGrid& grid, Eigen::Index dim)
      : grid_(grid),
        sum_(grid.points(), Matrix::Zero(dim, dim)),
        sq_re_(grid.points(), RealMatrix::Zero(dim, dim)),
        sq_im_(grid.points(), RealMatrix::Zero(dim, dim)) {}

  void add(std::size_t k, const Matrix& x) {
    sum_[k] += x;
    sq_re_[k] += x.real().cwiseAbs2();
    sq_im_[k] += x.imag().cwiseAbs2();
  }
  void count_one() { ++count_; }

  void merge(const StateMoments& o) {
    if (sum_.empty()) {
      *this = o;
      return;
    }
    for (std::size_t k = 0; k < sum_.size(); ++k) {
      sum_[k] += o.sum_[k];
      sq_re_[k] += o.sq_re_[k];
      sq_im_[k] += o.sq_im_[k];
    }
    count_ += o.count_;
  }

  std::size_t count() const noexcept { return count_; }

  EnsembleStats stats() const {
    EnsembleStats s{grid_, count_, {}, {}};
    const double n = static_cast<double>(count_);
    for (std::size_t k = 0; k < sum_.size(); ++k) {
      const Matrix mean = sum_[k] / n;
      RealMatrix var_re = RealMatrix::Zero(mean.rows(), mean.cols()), var_im = var_re;
      if (count_ > 1) {
        var_re = ((sq_re_[k] - n * mean.real().cwiseAbs2()) / (n - 1.0)).cwiseMax(0.0);
        var_im = ((sq_im_[k] - n * mean.imag().cwiseAbs2()) / (n - 1.0)).cwiseMax(0.0);
      }
      Matrix se(mean.rows(), mean.cols());
      se.real() = (var_re / n).cwiseSqrt();
      se.imag() = (var_im / n).cwiseSqrt();
      s.mean.push_back(mean);
      s.stderr_.push_back(se);
    }
    return s;
  }

 private:
  TimeGrid grid_;
  std::vector<Matrix> sum_;
  std::vector<RealMatrix> sq_re_, sq_im_;
  std::size_t count_ = 0;
};

inline EnsembleStats ensemble_average(const std::vector<TrajectoryRecord>& records) {
  if (records.empty()) throw Error(ErrorKind::InvalidArgument, "empty ensemble");
  const TimeGrid grid = records.front().grid;
  StateMoments mom(grid, records.front().states.front().dim());
  for (const auto& r : records) {
    if (!(r.grid == grid) || r.states.size() != grid.points())
      throw Error(ErrorKind::GridMismatch, "records use different grids");
    for (std::size_t k = 0; k < r.states.size(); ++k) mom.add(k, r.states[k].matrix());
    mom.count_one();
  }
  return mom.stats();
}

/// Ensemble statistics of the filter states, plus pooled innovation
/// moments and per-step cross-trajectory innovation sums.
struct FilterEnsemble {
  EnsembleStats states;
  /// Σ dŴ and Σ dŴ² over trajectories, per step and diffusive channel.
  std::vector<std::vector<double>> innovation_sum, innovation_sq;
  /// Total counting events per trajectory, summed and squared-summed.
  double event_sum = 0.0, event_sq = 0.0;
  /// First event time per trajectory (NaN when none), in index order.
  std::vector<double> first_event_times;
};

struct EnsembleOptions {
  std::size_t trajectories = 1;
  std::size_t threads = 1;
  bool record_first_events = false;
  SimulationOptions simulation;
};

inline FilterEnsemble run_filter_ensemble(const FilterModel& m, const FeedbackLaw& law, const DensityMatrix& rho0,
                                          double horizon, double dt, std::uint64_t seed,
                                          const EnsembleOptions& opt) {
  m.validate();
  if (opt.trajectories == 0) throw Error(ErrorKind::InvalidArgument, "ensemble needs at least one trajectory");
  const TimeGrid grid = TimeGrid::make(horizon, dt);
  const std::size_t nw = m.diffusive.size();

  struct Acc {
    StateMoments moments;
    std::vector<std::vector<double>> isum, isq;
    double ev = 0.0, ev2 = 0.0;
    std::vector<std::pair<std::size_t, double>> firsts;
  };
  auto make = [&] {
    return Acc{StateMoments(grid, rho0.dim()), std::vector<std::vector<double>>(grid.steps, std::vector<double>(nw)),
               std::vector<std::vector<double>>(grid.steps, std::vector<double>(nw)), 0.0, 0.0, {}};
  };
  struct Sink {
    Acc* acc;
    double dt;
    std::size_t events = 0;
    double first = std::numeric_limits<double>::quiet_NaN();
    Matrix final_state;

    void step(const StepData& s) {
      acc->moments.add(s.step, s.state->matrix());
      for (std::size_t a = 0; a < s.innovation->size(); ++a) {
        const double w = (*s.innovation)[a];
        acc->isum[s.step][a] += w;
        acc->isq[s.step][a] += w * w;
      }
      for (int e : *s.events)
        if (e) {
          // Event times are reported at the step midpoint.
          if (events == 0) first = s.t + 0.5 * dt;
          ++events;
        }
    }
    void finish(const DensityMatrix& state) { final_state = state.matrix(); }
  };
  auto work = [&](std::size_t i, Acc& acc) {
    Sink sink{&acc, grid.dt, 0, std::numeric_limits<double>::quiet_NaN(), Matrix()};
    run_trajectory(m, law, rho0, grid, seed, i, sink, opt.simulation);
    acc.moments.add(grid.steps, sink.final_state);
    acc.moments.count_one();
    acc.ev += static_cast<double>(sink.events);
    acc.ev2 += static_cast<double>(sink.events) * static_cast<double>(sink.events);
    if (opt.record_first_events) acc.firsts.emplace_back(i, sink.first);
  };
  auto merge = [](Acc& into, const Acc& from) {
    into.moments.merge(from.moments);
    for (std::size_t k = 0; k < into.isum.size(); ++k)
      for (std::size_t a = 0; a < into.isum[k].size(); ++a) {
        into.isum[k][a] += from.isum[k][a];
        into.isq[k][a] += from.isq[k][a];
      }
    into.ev += from.ev;
    into.ev2 += from.ev2;
    into.firsts.insert(into.firsts.end(), from.firsts.begin(), from.firsts.end());
  };
  Acc total = run_ensemble<Acc>(opt.trajectories, opt.threads, make, work, merge);

  FilterEnsemble out;
  out.states = total.moments.stats();
  out.innovation_sum = std::move(total.isum);
  out.innovation_sq = std::move(total.isq);
  out.event_sum = total.ev;
  out.event_sq = total.ev2;
  for (const auto& [i, t] : total.firsts) out.first_event_times.push_back(t);
  return out;
}

}  // namespace qfc
