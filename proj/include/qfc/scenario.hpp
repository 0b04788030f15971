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

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qfc/bellman.hpp"
#include "qfc/filtering.hpp"
#include "qfc/io.hpp"
#include "qfc/ito_algebra.hpp"
#include "qfc/lqg.hpp"
#include "qfc/master.hpp"

// Scenario files: one JSON object with the sections
//
//   kind       master | filter-diffusive | filter-jump | lqg-run |
//              duality-check | bellman-check | ito-check
//   model      quantum couplings or a linear model (see parse_scenario)
//   numerics   T, dt, N, seed, threads, clip_tol, tolerance, scheme, points
//   cost       Omega_T, H, E_f (linear kinds)
//   output     directory, formats
//
// Unknown keys anywhere are errors. Linking code that runs scenarios needs
// OpenSSL's libcrypto for the manifest hashes.

namespace qfc {

enum class ScenarioKind { Master, FilterDiffusive, FilterJump, LqgRun, DualityCheck, BellmanCheck, ItoCheck };

inline const std::vector<std::pair<ScenarioKind, std::string>>& scenario_kinds() {
  static const std::vector<std::pair<ScenarioKind, std::string>> kinds{
      {ScenarioKind::Master, "master"},          {ScenarioKind::FilterDiffusive, "filter-diffusive"},
      {ScenarioKind::FilterJump, "filter-jump"}, {ScenarioKind::LqgRun, "lqg-run"},
      {ScenarioKind::DualityCheck, "duality-check"}, {ScenarioKind::BellmanCheck, "bellman-check"},
      {ScenarioKind::ItoCheck, "ito-check"}};
  return kinds;
}

inline std::string to_string(ScenarioKind k) {
  for (const auto& [kind, name] : scenario_kinds())
    if (kind == k) return name;
  return "unknown";
}

inline std::optional<ScenarioKind> parse_kind(const std::string& s) {
  for (const auto& [kind, name] : scenario_kinds())
    if (name == s) return kind;
  return std::nullopt;
}

inline bool is_check(ScenarioKind k) {
  return k == ScenarioKind::DualityCheck || k == ScenarioKind::BellmanCheck || k == ScenarioKind::ItoCheck;
}

inline bool is_linear(ScenarioKind k) {
  return k == ScenarioKind::LqgRun || k == ScenarioKind::DualityCheck || k == ScenarioKind::BellmanCheck;
}

/// Validation failure carrying one "key.path: reason" line per problem.
class ScenarioError : public Error {
 public:
  explicit ScenarioError(std::vector<std::string> errors)
      : Error(ErrorKind::Validation, join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const noexcept { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& e) {
    std::string out;
    for (const auto& s : e) out += (out.empty() ? "" : "; ") + s;
    return out;
  }
  std::vector<std::string> errors_;
};

struct Numerics {
  double T = 0.0;
  double dt = 0.0;
  std::size_t N = 0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  double clip_tol = 1e-10;
  double tolerance = 0.0;  ///< acceptance tolerance of *-check kinds
  FilterScheme scheme = FilterScheme::Kraus;
  std::size_t points = 100;  ///< test points of bellman-check
};

struct OutputSpec {
  std::string directory = "out";
  bool csv = true;
  bool json = true;
};

struct Scenario {
  ScenarioKind kind = ScenarioKind::Master;
  Numerics numerics;
  OutputSpec output;

  // Quantum kinds.
  FilterModel filter;
  std::optional<DensityMatrix> initial_state;
  RealVector control;  ///< constant amplitudes on the feedback channels
  std::optional<GermMatrix> germ;

  // Linear kinds.
  LinearModel linear;
  std::optional<FreeParticleParams> free_particle;
  GaussianBelief belief;
  CostSpec cost;
};

inline double default_tolerance(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::DualityCheck: return 1e-8;
    case ScenarioKind::BellmanCheck: return 1e-6;
    case ScenarioKind::ItoCheck: return 1e-10;
    default: return 1e-8;
  }
}

namespace detail {

/// Object reader that records consumed keys and reports problems with their
/// full key path.
class Section {
 public:
  Section(const Json* j, std::string path, std::vector<std::string>* errors)
      : j_(j), path_(std::move(path)), errors_(errors) {
    if (j_ && !j_->is_object()) {
      fail("", "must be an object");
      j_ = nullptr;
    }
  }
  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  ~Section() {
    if (!j_) return;
    for (const auto& [key, _] : j_->items())
      if (!used_.count(key)) fail(key, "unknown key");
  }

  bool present() const { return j_ != nullptr; }
  bool has(const std::string& key) const { return j_ && j_->contains(key); }

  const Json* raw(const std::string& key) {
    if (!has(key)) return nullptr;
    used_.insert(key);
    return &j_->at(key);
  }

  const Json* required(const std::string& key) {
    const Json* v = raw(key);
    if (!v) fail(key, "required");
    return v;
  }

  std::string key_path(const std::string& key) const {
    return key.empty() ? path_ : (path_.empty() ? key : path_ + "." + key);
  }

  void fail(const std::string& key, const std::string& why) const { errors_->push_back(key_path(key) + ": " + why); }

  std::optional<double> number(const std::string& key, bool needed = false) {
    const Json* v = needed ? required(key) : raw(key);
    if (!v) return std::nullopt;
    if (!v->is_number() || !std::isfinite(v->get<double>())) {
      fail(key, "must be a finite number");
      return std::nullopt;
    }
    return v->get<double>();
  }

  std::optional<std::uint64_t> count(const std::string& key, bool needed = false) {
    const Json* v = needed ? required(key) : raw(key);
    if (!v) return std::nullopt;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
      fail(key, "must be a non-negative integer");
      return std::nullopt;
    }
    return v->get<std::uint64_t>();
  }

  std::optional<std::string> text(const std::string& key, bool needed = false) {
    const Json* v = needed ? required(key) : raw(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) {
      fail(key, "must be a string");
      return std::nullopt;
    }
    return v->get<std::string>();
  }

  /// Runs `parse` on the value and records library errors under the key.
  template <class T, class Parse>
  std::optional<T> convert(const std::string& key, bool needed, Parse parse) {
    const Json* v = needed ? required(key) : raw(key);
    if (!v) return std::nullopt;
    try {
      return parse(*v);
    } catch (const Error& e) {
      fail(key, e.what());
    } catch (const nlohmann::json::exception& e) {
      fail(key, e.what());
    }
    return std::nullopt;
  }

  std::vector<std::size_t> indices(const std::string& key) {
    auto v = convert<std::vector<std::size_t>>(key, false, [](const Json& j) {
      if (!j.is_array()) throw Error(ErrorKind::Validation, "must be an array of channel indices");
      std::vector<std::size_t> out;
      for (const auto& x : j) {
        if (!x.is_number_unsigned() && !(x.is_number_integer() && x.get<std::int64_t>() >= 0))
          throw Error(ErrorKind::Validation, "channel indices must be non-negative integers");
        out.push_back(x.get<std::size_t>());
      }
      return out;
    });
    return v.value_or(std::vector<std::size_t>{});
  }

 private:
  const Json* j_;
  std::string path_;
  std::vector<std::string>* errors_;
  std::set<std::string> used_;
};

inline Matrix initial_state_from_json(const Json& j, Eigen::Index dim) {
  if (!j.is_object() || j.size() != 1)
    throw Error(ErrorKind::Validation, "initial_state needs exactly one of ket, basis, matrix");
  if (j.contains("basis")) {
    const auto k = j.at("basis").get<Eigen::Index>();
    if (k < 0 || k >= dim) throw Error(ErrorKind::InvalidArgument, "basis index out of range");
    return DensityMatrix::basis(dim, k).matrix();
  }
  if (j.contains("ket")) {
    const Matrix v = matrix_from_json(j.at("ket"));
    if (v.cols() != 1 || v.rows() != dim) throw Error(ErrorKind::DimensionMismatch, "ket must be a dim x 1 column");
    return DensityMatrix::pure(v.col(0)).matrix();
  }
  if (j.contains("matrix")) return DensityMatrix::from_matrix(matrix_from_json(j.at("matrix"))).matrix();
  throw Error(ErrorKind::Validation, "initial_state needs exactly one of ket, basis, matrix");
}

inline void parse_quantum_model(Section& model, Scenario& s) {
  CouplingSet& c = s.filter.coupling;
  c.hbar = model.number("hbar").value_or(1.0);
  if (!(c.hbar > 0.0)) model.fail("hbar", "must be positive");

  const bool germ_given = s.kind == ScenarioKind::ItoCheck && model.has("germ");
  if (germ_given) {
    s.germ = model.convert<GermMatrix>("germ", true, [](const Json& j) {
      GermMatrix g = germ_from_json(j);
      if (!g.is_transition_normalized())
        throw Error(ErrorKind::Validation, "germ needs identity (-,-) and (+,+) blocks");
      return g;
    });
    return;
  }
  if (auto h = model.convert<Matrix>("hamiltonian", true, [](const Json& j) { return matrix_from_json(j); })) c.hamiltonian = *h;
  if (auto l = model.convert<std::vector<Matrix>>("jump_ops", false, [](const Json& j) {
        std::vector<Matrix> out;
        if (!j.is_array()) throw Error(ErrorKind::Validation, "must be an array of matrices");
        for (const auto& x : j) out.push_back(matrix_from_json(x));
        return out;
      }))
    c.jump_ops = *l;
  if (auto sc = model.convert<std::vector<Matrix>>("scattering", false, [](const Json& j) {
        std::vector<Matrix> out;
        if (!j.is_array()) throw Error(ErrorKind::Validation, "must be an array of matrices");
        for (const auto& x : j) out.push_back(matrix_from_json(x));
        return out;
      }))
    c.scattering = *sc;
  if (c.hamiltonian.size() == 0) return;
  try {
    c.validate();
  } catch (const Error& e) {
    model.fail("", e.what());
    return;
  }

  const bool filtering = s.kind == ScenarioKind::FilterDiffusive || s.kind == ScenarioKind::FilterJump;
  if (filtering) {
    s.filter.diffusive = model.indices("diffusive");
    s.filter.counting = model.indices("counting");
    s.filter.feedback = model.indices("feedback");
    try {
      s.filter.validate();
    } catch (const Error& e) {
      model.fail("", e.what());
    }
    if (s.kind == ScenarioKind::FilterDiffusive && (s.filter.diffusive.empty() || !s.filter.counting.empty()))
      model.fail("diffusive", "filter-diffusive needs diffusive channels and no counting channels");
    if (s.kind == ScenarioKind::FilterJump && (s.filter.counting.empty() || !s.filter.diffusive.empty()))
      model.fail("counting", "filter-jump needs counting channels and no diffusive channels");
    s.control = RealVector::Zero(static_cast<Eigen::Index>(s.filter.feedback.size()));
    if (auto u = model.convert<RealVector>("control", false, [](const Json& j) { return real_vector_from_json(j); })) {
      if (u->size() != s.control.size())
        model.fail("control", "needs one amplitude per feedback channel");
      else
        s.control = *u;
    }
  }
  if (s.kind == ScenarioKind::Master || filtering) {
    const Eigen::Index dim = c.dim();
    if (auto r = model.convert<Matrix>("initial_state", true,
                                       [dim](const Json& j) { return initial_state_from_json(j, dim); }))
      s.initial_state = DensityMatrix::from_matrix(*r);
  }
}

inline void parse_linear_model(Section& model, Scenario& s) {
  int forms = 0;
  for (const char* k : {"free_particle", "canonical", "coefficients"}) forms += model.has(k) ? 1 : 0;
  if (forms != 1) {
    model.fail("", "needs exactly one of free_particle, canonical, coefficients");
    return;
  }
  if (model.has("free_particle")) {
    auto built = model.convert<FreeParticleParams>("free_particle", true, [](const Json& j) {
      if (!j.is_object()) throw Error(ErrorKind::Validation, "must be an object");
      FreeParticleParams p;
      for (const auto& [key, v] : j.items()) {
        if (!v.is_number()) throw Error(ErrorKind::Validation, key + " must be a number");
        const double x = v.get<double>();
        if (key == "alpha") p.alpha = x;
        else if (key == "beta") p.beta = x;
        else if (key == "gamma") p.gamma = x;
        else if (key == "epsilon") p.epsilon = x;
        else if (key == "mu") p.mu = x;
        else if (key == "hbar") p.hbar = x;
        else throw Error(ErrorKind::Validation, "unknown key '" + key + "'");
      }
      validate(p);
      return p;
    });
    if (built) {
      s.free_particle = *built;
      s.linear = free_particle_model(*built);
    }
    return;
  }
  if (model.has("canonical")) {
    auto built = model.convert<LinearModel>("canonical", true, [](const Json& j) {
      if (!j.is_object()) throw Error(ErrorKind::Validation, "must be an object");
      for (const auto& [key, _] : j.items())
        if (key != "J" && key != "lambda_e" && key != "lambda_f" && key != "Minv" && key != "hbar")
          throw Error(ErrorKind::Validation, "unknown key '" + key + "'");
      const RealMatrix J = real_matrix_from_json(j.at("J"));
      const Matrix le = j.contains("lambda_e") ? matrix_from_json(j.at("lambda_e")) : Matrix(0, J.cols());
      const Matrix lf = j.contains("lambda_f") ? matrix_from_json(j.at("lambda_f")) : Matrix(0, J.cols());
      return derive_matrices(J, le, lf, real_matrix_from_json(j.at("Minv")), j.value("hbar", 1.0));
    });
    if (built) s.linear = *built;
    return;
  }
  auto built = model.convert<LinearModel>("coefficients", true, [](const Json& j) {
    if (!j.is_object()) throw Error(ErrorKind::Validation, "must be an object");
    static const std::set<std::string> keys{"A", "B_e", "C_f", "F_e", "E_f", "G", "H"};
    for (const auto& [key, _] : j.items())
      if (!keys.count(key)) throw Error(ErrorKind::Validation, "unknown key '" + key + "'");
    auto get = [&](const char* k) { return real_matrix_from_json(j.at(k)); };
    return model_from_coefficients(get("A"), get("B_e"), get("C_f"), get("F_e"), get("E_f"), get("G"), get("H"));
  });
  if (built) s.linear = *built;
}

}  // namespace detail

/// Parses and validates a scenario. Throws ScenarioError listing every
/// problem found.
inline Scenario parse_scenario(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ScenarioError({std::string("scenario: not valid JSON (") + e.what() + ")"});
  }
  std::vector<std::string> errors;
  Scenario s;
  {
    detail::Section top(&root, "", &errors);
    if (!top.present()) throw ScenarioError(errors);

    const auto kind_name = top.text("kind", true);
    if (kind_name) {
      if (auto k = parse_kind(*kind_name))
        s.kind = *k;
      else
        top.fail("kind", "unknown kind '" + *kind_name + "'");
    }
    if (!errors.empty()) throw ScenarioError(errors);
    s.numerics.tolerance = default_tolerance(s.kind);

    {
      detail::Section model(top.required("model"), "model", &errors);
      if (model.present()) {
        if (is_linear(s.kind))
          detail::parse_linear_model(model, s);
        else
          detail::parse_quantum_model(model, s);
      }
    }

    {
      detail::Section num(top.raw("numerics"), "numerics", &errors);
      const bool timed = s.kind != ScenarioKind::ItoCheck;
      if (timed && !num.present()) top.fail("numerics", "required for kind " + to_string(s.kind));
      Numerics& n = s.numerics;
      if (auto v = num.number("T", timed)) n.T = *v;
      if (auto v = num.number("dt", timed)) n.dt = *v;
      if (auto v = num.count("N")) n.N = *v;
      if (auto v = num.count("seed")) n.seed = *v;
      if (auto v = num.count("threads")) n.threads = std::max<std::uint64_t>(1, *v);
      if (auto v = num.number("clip_tol")) n.clip_tol = *v;
      if (auto v = num.number("tolerance")) n.tolerance = *v;
      if (auto v = num.count("points")) n.points = *v;
      if (auto v = num.text("scheme")) {
        if (*v == "kraus")
          n.scheme = FilterScheme::Kraus;
        else if (*v == "euler-maruyama")
          n.scheme = FilterScheme::EulerMaruyama;
        else
          num.fail("scheme", "must be kraus or euler-maruyama");
      }
      if (!(n.clip_tol > 0.0)) num.fail("clip_tol", "must be positive");
      if (!(n.tolerance > 0.0)) num.fail("tolerance", "must be positive");
      if (timed && num.present()) {
        if (!(n.T > 0.0)) num.fail("T", "must be positive");
        if (!(n.dt > 0.0)) num.fail("dt", "must be positive");
        if (n.T > 0.0 && n.dt > 0.0) {
          if (!(n.dt < n.T)) {
            num.fail("dt", "must be smaller than numerics.T (dt = " + format_double(n.dt) +
                               ", T = " + format_double(n.T) + ")");
          } else {
            try {
              TimeGrid::make(n.T, n.dt);
            } catch (const Error&) {
              num.fail("T", "must be an integer multiple of numerics.dt");
            }
          }
        }
      }
      const bool ensemble = s.kind == ScenarioKind::FilterDiffusive || s.kind == ScenarioKind::FilterJump ||
                            s.kind == ScenarioKind::LqgRun;
      if (ensemble && n.N == 0) num.fail("N", "must be positive (empty ensemble)");
      if (s.kind == ScenarioKind::BellmanCheck && n.points == 0) num.fail("points", "must be positive");
    }

    if (is_linear(s.kind) && s.linear.dim() > 0) {
      const Eigen::Index m = s.linear.dim();
      {
        detail::Section belief(top.raw("belief"), "belief", &errors);
        if (!belief.present()) {
          top.fail("belief", "required for kind " + to_string(s.kind));
        } else {
          s.belief.mean = RealVector::Zero(m);
          if (auto v = belief.convert<RealVector>("mean", s.kind != ScenarioKind::DualityCheck,
                                                  [](const Json& j) { return real_vector_from_json(j); }))
            s.belief.mean = *v;
          if (auto v = belief.convert<RealMatrix>("cov", true, [](const Json& j) { return real_matrix_from_json(j); }))
            s.belief.cov = *v;
          if (s.belief.cov.size() > 0) {
            try {
              s.belief.validate(s.linear);
            } catch (const Error& e) {
              belief.fail("", e.what());
            }
          }
        }
      }
      {
        detail::Section cost(top.raw("cost"), "cost", &errors);
        s.cost = default_cost(s.linear);
        if (cost.present()) {
          auto mat = [](const Json& j) { return real_matrix_from_json(j); };
          if (auto v = cost.convert<RealMatrix>("Omega_T", false, mat)) s.cost.Omega_T = *v;
          if (auto v = cost.convert<RealMatrix>("H", false, mat)) s.cost.H = *v;
          if (auto v = cost.convert<RealMatrix>("E_f", false, mat)) s.cost.E_f = *v;
          try {
            s.cost.validate(s.linear);
          } catch (const Error& e) {
            cost.fail("", e.what());
          }
        }
      }
    } else if (top.has("cost") || top.has("belief")) {
      if (!is_linear(s.kind)) {
        if (top.raw("cost")) top.fail("cost", "only valid for linear kinds");
        if (top.raw("belief")) top.fail("belief", "only valid for linear kinds");
      } else {
        top.raw("cost");
        top.raw("belief");
      }
    }

    {
      detail::Section out(top.raw("output"), "output", &errors);
      if (auto d = out.text("directory")) s.output.directory = *d;
      if (auto f = out.convert<std::vector<std::string>>("formats", false, [](const Json& j) {
            return j.get<std::vector<std::string>>();
          })) {
        s.output.csv = s.output.json = false;
        for (const auto& x : *f) {
          if (x == "csv")
            s.output.csv = true;
          else if (x == "json")
            s.output.json = true;
          else
            out.fail("formats", "unknown format '" + x + "'");
        }
      }
    }
  }
  if (!errors.empty()) throw ScenarioError(errors);
  return s;
}

// ---------------------------------------------------------------------------
// Running.

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::InvalidArgument, "SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

/// Writes artifacts and keeps the manifest entries.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  void write(const std::string& name, const std::string& content) {
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) throw Error(ErrorKind::InvalidArgument, "cannot write " + (dir_ / name).string());
    f << content;
    files_[name] = {sha256_hex(content), content.size()};
  }

  void write_json(const std::string& name, const Json& j) { write(name, j.dump(2) + "\n"); }

  Json manifest(const Scenario& s, int status) const {
    Json files = Json::array();
    for (const auto& [name, info] : files_)
      files.push_back({{"path", name}, {"sha256", info.first}, {"bytes", info.second}});
    return Json{{"kind", to_string(s.kind)}, {"seed", s.numerics.seed}, {"status", status}, {"files", files}};
  }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::pair<std::string, std::size_t>> files_;
};

struct RunResult {
  int exit_code = 0;  ///< 0 ok, 4 acceptance check failed
  Json summary;
  Json manifest;
};

namespace detail {

inline std::string ensemble_csv(const EnsembleStats& st) {
  const Eigen::Index n = st.mean.empty() ? 0 : st.mean.front().rows();
  std::vector<std::string> header{"t"};
  for (const auto& c : matrix_columns(n, "mean_")) header.push_back(c);
  for (const auto& c : matrix_columns(n, "stderr_")) header.push_back(c);
  CsvWriter csv(header);
  for (std::size_t k = 0; k < st.mean.size(); ++k) {
    std::vector<double> row{st.grid.time(k)};
    append_matrix(row, st.mean[k]);
    append_matrix(row, st.stderr_[k]);
    csv.row(row);
  }
  return csv.str();
}

inline Json populations(const Matrix& m) {
  Json out = Json::array();
  for (Eigen::Index k = 0; k < m.rows(); ++k) out.push_back(m(k, k).real());
  return out;
}

inline RunResult run_master(const Scenario& s, ArtifactWriter& w) {
  const auto& n = s.numerics;
  const StatePath path = integrate_master(s.filter.coupling, *s.initial_state, n.T, n.dt, {n.clip_tol, false});
  const Matrix exact = master_exact(s.filter.coupling, s.initial_state->matrix(), n.T);
  double purity_min = 1.0;
  for (const auto& st : path.states) purity_min = std::min(purity_min, st.purity());
  Json summary{{"final_populations", populations(path.states.back().matrix())},
               {"exact_final_populations", populations(exact)},
               {"max_deviation_from_exact", max_abs(path.states.back().matrix() - exact)},
               {"min_purity", purity_min}};
  if (s.output.csv) w.write("master.csv", path.to_csv());
  if (s.output.json) w.write_json("summary.json", summary);
  return {0, summary, {}};
}

inline RunResult run_filter(const Scenario& s, ArtifactWriter& w) {
  const auto& n = s.numerics;
  const ControlSignal signal{s.filter.feedback, [u = s.control](double) { return u; }};
  const FeedbackLaw law = open_loop(signal);
  SimulationOptions sim;
  sim.scheme = n.scheme;
  sim.clip_tol = n.clip_tol;
  EnsembleOptions opt;
  opt.trajectories = n.N;
  opt.threads = n.threads;
  opt.record_first_events = s.kind == ScenarioKind::FilterJump;
  opt.simulation = sim;
  const FilterEnsemble ens = run_filter_ensemble(s.filter, law, *s.initial_state, n.T, n.dt, n.seed, opt);
  const TrajectoryRecord first = simulate_trajectory(s.filter, law, *s.initial_state, n.T, n.dt, n.seed, 0, sim);

  const CouplingSet controlled =
      s.filter.feedback.empty()
          ? s.filter.coupling
          : coherent_control_apply(s.filter.coupling, s.control, s.filter.feedback, s.filter.estimation());
  const Matrix exact = master_exact(controlled, s.initial_state->matrix(), n.T);
  const Matrix& mean = ens.states.mean.back();
  const Matrix& se = ens.states.stderr_.back();
  double worst_z = 0.0;
  for (Eigen::Index k = 0; k < mean.rows(); ++k) {
    const double gap = std::abs(mean(k, k).real() - exact(k, k).real());
    worst_z = std::max(worst_z, se(k, k).real() > 0.0 ? gap / se(k, k).real() : (gap > 0.0 ? INFINITY : 0.0));
  }
  Json summary{{"trajectories", n.N},
               {"final_mean_populations", populations(mean)},
               {"final_population_stderr", populations(se)},
               {"master_final_populations", populations(exact)},
               {"max_population_z", worst_z}};

  if (s.kind == ScenarioKind::FilterDiffusive) {
    Json channels = Json::array();
    CsvWriter csv({"t", "channel", "mean", "variance"});
    const double N = static_cast<double>(n.N);
    for (std::size_t a = 0; a < s.filter.diffusive.size(); ++a) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t k = 0; k < ens.innovation_sum.size(); ++k) {
        const double m1 = ens.innovation_sum[k][a] / N;
        csv.row({ens.states.grid.time(k), static_cast<double>(s.filter.diffusive[a]), m1,
                 ens.innovation_sq[k][a] / N - m1 * m1});
        s1 += ens.innovation_sum[k][a];
        s2 += ens.innovation_sq[k][a];
      }
      const double total = N * static_cast<double>(ens.innovation_sum.size());
      channels.push_back({{"channel", s.filter.diffusive[a]},
                          {"pooled_mean", s1 / total},
                          {"pooled_variance_over_dt", s2 / total / n.dt}});
    }
    summary["innovations"] = channels;
    if (s.output.csv) w.write("innovations.csv", csv.str());
  } else {
    const double N = static_cast<double>(n.N);
    summary["mean_events"] = ens.event_sum / N;
    std::size_t fired = 0;
    CsvWriter csv({"trajectory", "first_event_time"});
    for (std::size_t i = 0; i < ens.first_event_times.size(); ++i) {
      csv.row({static_cast<double>(i), ens.first_event_times[i]});
      fired += std::isnan(ens.first_event_times[i]) ? 0 : 1;
    }
    summary["trajectories_with_events"] = fired;
    if (s.output.csv) w.write("first_events.csv", csv.str());
  }
  if (s.output.csv) {
    w.write("ensemble.csv", ensemble_csv(ens.states));
    w.write("trajectory_0.csv", first.to_csv());
  }
  if (s.output.json) w.write_json("summary.json", summary);
  return {0, summary, {}};
}

inline RunResult run_ito(const Scenario& s, ArtifactWriter& w) {
  const GermMatrix g = s.germ ? *s.germ : germ_from_coupling(s.filter.coupling);
  const auto rep = check_pseudo_unitarity(g, s.numerics.tolerance);
  Json summary{{"residuals", {rep.residuals[0], rep.residuals[1], rep.residuals[2]}},
               {"product_defect", rep.product_defect},
               {"tolerance", s.numerics.tolerance},
               {"checks",
                {{"isometry", rep.residuals[0] <= s.numerics.tolerance},
                 {"coisometry", rep.residuals[1] <= s.numerics.tolerance},
                 {"generator", rep.residuals[2] <= s.numerics.tolerance}}},
               {"ok", rep.ok}};
  if (s.output.json) {
    w.write_json("germ.json", germ_to_json(g));
    w.write_json("ito.json", summary);
  }
  return {rep.ok ? 0 : 4, summary, {}};
}

inline Json scalar_view_json(const FreeParticleParams& p) {
  const auto v = free_particle_view(p);
  return {{"lambda", v.lambda}, {"delta", v.delta}, {"zeta_q", v.zeta_q},
          {"zeta_p", v.zeta_p}, {"eta_q", v.eta_q}, {"eta_p", v.eta_p}};
}

inline RunResult run_lqg(const Scenario& s, ArtifactWriter& w) {
  const auto& n = s.numerics;
  const MatrixPath sigma = filter_riccati_solve(s.linear, s.belief.cov, n.T, n.dt);
  const MatrixPath omega = control_riccati_solve(s.linear, s.cost, n.T, n.dt);
  const double analytic = min_cost(s.linear, s.cost, sigma, omega, s.belief.mean, s.belief.cov);
  const PolicyCost mc = simulate_closed_loop(s.linear, s.cost, s.belief, sigma, omega, n.seed, n.N, n.threads);
  double heis = INFINITY;
  for (const auto& x : sigma.values) heis = std::min(heis, heisenberg_check(x, s.linear.J, s.linear.hbar).min_eig);
  Json summary{{"min_cost", analytic},
               {"closed_loop", {{"trajectories", n.N}, {"mean", mc.mean}, {"stderr", mc.stderr_}}},
               {"z_score", mc.stderr_ > 0.0 ? (mc.mean - analytic) / mc.stderr_ : 0.0},
               {"heisenberg_min_eig", heis},
               {"sigma_final", real_matrix_to_json(sigma.values.back())},
               {"omega_initial", real_matrix_to_json(omega.values.front())}};
  if (s.free_particle) {
    summary["scalar_view"] = scalar_view_json(*s.free_particle);
    std::vector<Sym2> sc, oc;
    for (const auto& x : sigma.values) sc.push_back(Sym2::of(x));
    for (const auto& x : omega.values) oc.push_back(Sym2::of(x));
    const bool own_cost = s.cost.H == s.linear.H && s.cost.E_f == s.linear.E_f;
    if (own_cost)
      summary["componentwise_min_cost"] =
          free_particle_total_cost(*s.free_particle, sc, oc, n.dt, s.belief.mean, Sym2::of(s.belief.cov));
  }
  if (s.output.csv) {
    w.write("sigma.csv", sigma.to_csv("sigma"));
    w.write("omega.csv", omega.to_csv("omega"));
  }
  if (s.output.json) w.write_json("cost.json", summary);
  return {0, summary, {}};
}

inline RunResult run_duality(const Scenario& s, ArtifactWriter& w) {
  const auto& n = s.numerics;
  const LqgProblem p{s.linear, s.cost, s.belief.cov};
  const DualityReport r = duality_check(p, n.T, n.dt, n.tolerance);
  const LqgProblem d = dualize(p);
  Json summary{{"covariance_gap", r.covariance_gap},
               {"gain_gap", r.gain_gap},
               {"tolerance", n.tolerance},
               {"ok", r.ok},
               {"dual",
                {{"A", real_matrix_to_json(d.model.A)},
                 {"C_f", real_matrix_to_json(d.model.C_f)},
                 {"E_f", real_matrix_to_json(d.cost.E_f)},
                 {"H", real_matrix_to_json(d.cost.H)},
                 {"Omega_T", real_matrix_to_json(d.cost.Omega_T)}}}};
  if (s.output.csv) {
    w.write("sigma.csv", filter_riccati_solve(p.model, p.sigma0, n.T, n.dt).to_csv("sigma"));
    w.write("dual_omega.csv", control_riccati_solve(d.model, d.cost, n.T, n.dt).to_csv("omega"));
  }
  if (s.output.json) w.write_json("duality.json", summary);
  return {r.ok ? 0 : 4, summary, {}};
}

inline RunResult run_bellman(const Scenario& s, ArtifactWriter& w) {
  const auto& n = s.numerics;
  const LinearModel& m = s.linear;
  const MatrixPath sigma = filter_riccati_solve(m, s.belief.cov, n.T, n.dt);
  const MatrixPath omega = control_riccati_solve(m, s.cost, n.T, n.dt);
  const QuadraticValue value = build_quadratic_value(m, s.cost, sigma, omega);
  const QuadraticValue big = value.perturbed(1e-3), small = value.perturbed(1e-4);

  const Philox rng(n.seed);
  std::vector<ResidualPoint> points;
  double worst = 0.0, ratio_dev = 1.0;
  for (std::size_t i = 0; i < n.points; ++i) {
    const auto k = static_cast<std::size_t>(rng.uniform(i, 0, 0) * static_cast<double>(sigma.grid.points()));
    RealVector x(m.dim());
    for (Eigen::Index c = 0; c < x.size(); ++c) x(c) = 2.0 * rng.normal(i, 1, static_cast<std::uint32_t>(c));
    const double t = sigma.grid.time(k);
    const double r = hjb_residual_lqg(value, m, s.cost, t, x, sigma[k]);
    worst = std::max(worst, std::abs(r));
    points.push_back({t, i, r});
    const double rb = hjb_residual_lqg(big, m, s.cost, t, x, sigma[k]);
    const double rs = hjb_residual_lqg(small, m, s.cost, t, x, sigma[k]);
    const double ratio = rb / rs / 10.0;
    ratio_dev = std::max(ratio_dev, std::max(ratio, 1.0 / ratio));
  }
  const bool hjb_ok = worst <= n.tolerance;
  const bool ratio_ok = ratio_dev <= 1.2;
  Json summary{{"points", n.points},
               {"max_abs_residual", worst},
               {"tolerance", n.tolerance},
               {"perturbation_ratio_worst_factor", ratio_dev},
               {"hjb_ok", hjb_ok},
               {"perturbation_ok", ratio_ok}};
  bool dominance_ok = true;
  if (n.N > 0) {
    const std::vector<BeliefPolicy> pol{gain_policy(m, s.cost, omega), gain_policy(m, s.cost, omega, 1.2),
                                        gain_policy(m, s.cost, omega, 0.8), zero_policy(m.feedback_channels())};
    const PolicyComparison c = policy_cost_mc(m, s.cost, s.belief, sigma, pol, n.seed, {n.N, n.threads});
    const double analytic = min_cost(m, s.cost, sigma, omega, s.belief.mean, s.belief.cov);
    for (const auto& d : c.differences)
      if (d.first == 0 && d.mean < -3.0 * d.stderr_) dominance_ok = false;
    const bool matches = std::abs(c.policies[0].mean - analytic) <= 3.0 * c.policies[0].stderr_;
    summary["min_cost"] = analytic;
    summary["optimal_matches_min_cost"] = matches;
    summary["dominance_ok"] = dominance_ok;
    dominance_ok = dominance_ok && matches;
    if (s.output.json) w.write_json("policies.json", policy_comparison_json(c, {"optimal", "gain-1.2", "gain-0.8", "zero"}));
  }
  const bool ok = hjb_ok && ratio_ok && dominance_ok;
  summary["ok"] = ok;
  if (s.output.csv) w.write("residuals.csv", residual_sweep_csv(points));
  if (s.output.json) w.write_json("bellman.json", summary);
  return {ok ? 0 : 4, summary, {}};
}

}  // namespace detail

/// Executes the scenario into `out_dir` (the scenario's output directory when
/// empty) and writes manifest.json listing every other artifact with its
/// SHA-256. Library errors propagate; numerical ones carry the failing step.
inline RunResult run_scenario(const Scenario& s, const std::string& out_dir = {}) {
  ArtifactWriter w(out_dir.empty() ? s.output.directory : out_dir);
  RunResult r;
  switch (s.kind) {
    case ScenarioKind::Master: r = detail::run_master(s, w); break;
    case ScenarioKind::FilterDiffusive:
    case ScenarioKind::FilterJump: r = detail::run_filter(s, w); break;
    case ScenarioKind::ItoCheck: r = detail::run_ito(s, w); break;
    case ScenarioKind::LqgRun: r = detail::run_lqg(s, w); break;
    case ScenarioKind::DualityCheck: r = detail::run_duality(s, w); break;
    case ScenarioKind::BellmanCheck: r = detail::run_bellman(s, w); break;
  }
  r.manifest = w.manifest(s, r.exit_code);
  std::ofstream f(std::filesystem::path(out_dir.empty() ? s.output.directory : out_dir) / "manifest.json",
                  std::ios::binary);
  f << r.manifest.dump(2) << "\n";
  return r;
}

}  // namespace qfc
