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

// Command-line scenario runner.
//
//   qfc <kind> --scenario FILE [--out DIR] [--seed N] [--threads N] [--validate-only]
//
// Exit status: 0 ok, 2 invalid scenario or arguments, 3 numerical failure,
// 4 a *-check kind ran but its check failed.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "qfc/scenario.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct Flags {
  std::string scenario;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool validate_only = false;
};

std::string kind_module(qfc::ScenarioKind k) {
  switch (k) {
    case qfc::ScenarioKind::Master: return "master";
    case qfc::ScenarioKind::FilterDiffusive:
    case qfc::ScenarioKind::FilterJump: return "filtering";
    case qfc::ScenarioKind::LqgRun:
    case qfc::ScenarioKind::DualityCheck: return "lqg";
    case qfc::ScenarioKind::BellmanCheck: return "bellman";
    case qfc::ScenarioKind::ItoCheck: return "ito-algebra";
  }
  return "unknown";
}

int run(qfc::ScenarioKind requested, const Flags& f) {
  qfc::Scenario s;
  try {
    s = qfc::parse_scenario(qfc::read_file(f.scenario));
  } catch (const qfc::ScenarioError& e) {
    for (const auto& line : e.errors()) std::cerr << f.scenario << ": " << line << "\n";
    return kExitValidation;
  } catch (const qfc::Error& e) {
    std::cerr << f.scenario << ": " << e.what() << "\n";
    return kExitValidation;
  }
  if (s.kind != requested) {
    std::cerr << f.scenario << ": kind is '" << qfc::to_string(s.kind) << "' but the subcommand is '"
              << qfc::to_string(requested) << "'\n";
    return kExitValidation;
  }
  if (f.seed) s.numerics.seed = *f.seed;
  if (f.threads) s.numerics.threads = std::max<std::size_t>(1, *f.threads);
  if (f.validate_only) {
    std::cout << f.scenario << ": valid " << qfc::to_string(s.kind) << " scenario\n";
    return kExitOk;
  }
  try {
    const qfc::RunResult r = qfc::run_scenario(s, f.out);
    std::cout << r.summary.dump(2) << "\n";
    return r.exit_code;
  } catch (const qfc::Error& e) {
    std::cerr << kind_module(s.kind) << ": " << e.what();
    if (e.is_numerical()) {
      std::cerr << " (numerics.dt = " << qfc::format_double(s.numerics.dt) << "; try dt = "
                << qfc::format_double(s.numerics.dt / 4) << ")\n";
      return kExitNumerical;
    }
    std::cerr << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << kind_module(s.kind) << ": " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantum filtering and control scenario runner"};
  app.require_subcommand(1);
  Flags flags;
  std::optional<qfc::ScenarioKind> chosen;

  for (const auto& [kind, name] : qfc::scenario_kinds()) {
    CLI::App* sub = app.add_subcommand(name, "Run a " + name + " scenario");
    sub->add_option("--scenario", flags.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", flags.out, "Output directory (overrides output.directory)");
    sub->add_option("--seed", flags.seed, "Seed (overrides numerics.seed)");
    sub->add_option("--threads", flags.threads, "Worker threads for ensembles");
    sub->add_flag("--validate-only", flags.validate_only, "Parse and validate, then exit");
    sub->callback([&chosen, k = kind] { chosen = k; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  return run(*chosen, flags);
}
