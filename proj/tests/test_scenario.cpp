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

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <filesystem>
#include <set>
#include <string>

#include "qfc/scenario.hpp"

namespace fs = std::filesystem;
using namespace qfc;

namespace {

std::string preset_path(const std::string& name) { return std::string(QFC_SCENARIO_DIR) + "/" + name + ".json"; }
Json preset(const std::string& name) { return Json::parse(read_file(preset_path(name))); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("qfc_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kMinimalMaster = R"({
  "kind": "master",
  "model": {
    "hamiltonian": {"rows": 2, "cols": 2, "re": [0, 0, 0, 0]},
    "jump_ops": [{"rows": 2, "cols": 2, "re": [0, 1, 0, 0]}],
    "initial_state": {"basis": 1}
  },
  "numerics": {"T": 1.0, "dt": 0.01}
})";

std::vector<std::string> errors_of(const std::string& text) {
  try {
    parse_scenario(text);
  } catch (const ScenarioError& e) {
    return e.errors();
  }
  return {};
}

bool any_contains(const std::vector<std::string>& errs, const std::string& needle) {
  for (const auto& e : errs)
    if (e.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace

TEST(ParseScenario, MinimalMasterFillsDefaults) {
  const Scenario s = parse_scenario(kMinimalMaster);
  EXPECT_EQ(s.kind, ScenarioKind::Master);
  EXPECT_EQ(s.filter.coupling.hbar, 1.0);
  EXPECT_EQ(s.numerics.clip_tol, 1e-10);
  EXPECT_EQ(s.numerics.seed, 0u);
  EXPECT_EQ(s.numerics.threads, 1u);
  ASSERT_TRUE(s.initial_state.has_value());
  EXPECT_EQ(s.initial_state->population(1), 1.0);
  EXPECT_TRUE(s.output.csv && s.output.json);
}

TEST(ParseScenario, DtAboveHorizonNamesBothKeys) {
  Json j = Json::parse(kMinimalMaster);
  j["numerics"]["dt"] = 2.0;
  const auto errs = errors_of(j.dump());
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_NE(errs[0].find("numerics.dt"), std::string::npos);
  EXPECT_NE(errs[0].find("numerics.T"), std::string::npos);
}

TEST(ParseScenario, UnknownKeysAreErrorsWithPaths) {
  Json j = Json::parse(kMinimalMaster);
  j["numerics"]["steps"] = 10;
  j["colour"] = "blue";
  j["model"]["jump_ops"][0]["scale"] = 2;
  const auto errs = errors_of(j.dump());
  EXPECT_TRUE(any_contains(errs, "numerics.steps: unknown key"));
  EXPECT_TRUE(any_contains(errs, "colour: unknown key"));
  EXPECT_TRUE(any_contains(errs, "model.jump_ops"));
}

TEST(ParseScenario, MissingBlocksAndBadKinds) {
  EXPECT_TRUE(any_contains(errors_of(R"({"kind": "master", "numerics": {"T": 1, "dt": 0.1}})"), "model: required"));
  EXPECT_TRUE(any_contains(errors_of(R"({"kind": "teleport", "model": {}})"), "kind: unknown kind"));
  EXPECT_TRUE(any_contains(errors_of(R"({"model": {}})"), "kind: required"));
  EXPECT_TRUE(any_contains(errors_of("[1, 2"), "not valid JSON"));
  Json j = Json::parse(kMinimalMaster);
  j.erase("numerics");
  EXPECT_TRUE(any_contains(errors_of(j.dump()), "numerics: required"));
}

TEST(ParseScenario, ToleranceMustBePositiveAndHorizonAMultiple) {
  Json j = Json::parse(kMinimalMaster);
  j["numerics"]["tolerance"] = 0.0;
  j["numerics"]["dt"] = 0.3;
  const auto errs = errors_of(j.dump());
  EXPECT_TRUE(any_contains(errs, "numerics.tolerance: must be positive"));
  EXPECT_TRUE(any_contains(errs, "numerics.T: must be an integer multiple"));
}

TEST(ParseScenario, EmptyEnsembleIsRejected) {
  Json j = preset("qubit-homodyne");
  j["numerics"]["N"] = 0;
  EXPECT_TRUE(any_contains(errors_of(j.dump()), "numerics.N: must be positive"));
  Json lqg = preset("free-particle");
  lqg["numerics"].erase("N");
  EXPECT_TRUE(any_contains(errors_of(lqg.dump()), "numerics.N"));
}

TEST(ParseScenario, ChannelRolesMustMatchKind) {
  Json j = preset("qubit-homodyne");
  j["kind"] = "filter-jump";
  EXPECT_TRUE(any_contains(errors_of(j.dump()), "filter-jump needs counting channels"));
  j = preset("qubit-photodetect");
  j["model"]["diffusive"] = Json::array({0});
  EXPECT_FALSE(errors_of(j.dump()).empty());
}

TEST(ParseScenario, ShapeMismatchesAreReported) {
  Json j = preset("free-particle");
  j["belief"]["cov"] = Json::parse("[[1, 0, 0], [0, 1, 0], [0, 0, 1]]");
  EXPECT_TRUE(any_contains(errors_of(j.dump()), "belief"));
  j = Json::parse(kMinimalMaster);
  j["model"]["jump_ops"][0] = Json::parse(R"({"rows": 3, "cols": 3, "re": [0,0,0,0,0,0,0,0,0]})");
  EXPECT_FALSE(errors_of(j.dump()).empty());
  j = Json::parse(kMinimalMaster);
  j["model"]["initial_state"] = Json::parse(R"({"basis": 5})");
  EXPECT_TRUE(any_contains(errors_of(j.dump()), "model.initial_state"));
}

TEST(ParseScenario, FreeParticleDelegatesToModelBuilder) {
  const Scenario s = parse_scenario(read_file(preset_path("free-particle")));
  const LinearModel ref = free_particle_model({1.0, 1.0, 0.5, 0.2, 1.0, 1.0});
  EXPECT_EQ(s.linear.A, ref.A);
  EXPECT_EQ(s.linear.B_e, ref.B_e);
  EXPECT_EQ(s.linear.C_f, ref.C_f);
  EXPECT_EQ(s.linear.G, ref.G);
  EXPECT_EQ(s.linear.H, ref.H);
  EXPECT_EQ(s.cost.H, ref.H);
  EXPECT_EQ(s.cost.E_f, ref.E_f);
  ASSERT_TRUE(s.free_particle.has_value());
}

TEST(ParseScenario, LinearModelNeedsExactlyOneForm) {
  Json j = preset("free-particle");
  j["model"]["coefficients"] = preset("classical-kalman")["model"]["coefficients"];
  EXPECT_TRUE(any_contains(errors_of(j.dump()), "exactly one of"));
  j = preset("free-particle");
  j["model"]["free_particle"]["mass"] = 2.0;
  EXPECT_TRUE(any_contains(errors_of(j.dump()), "model.free_particle"));
}

TEST(ParseScenario, AllPresetsAreValid) {
  for (const auto& entry : fs::directory_iterator(QFC_SCENARIO_DIR)) {
    SCOPED_TRACE(entry.path().string());
    EXPECT_NO_THROW(parse_scenario(read_file(entry.path().string())));
  }
}

TEST(Sha256, MatchesStandardVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(RunScenario, DualityPresetMeetsTolerance) {
  const Scenario s = parse_scenario(read_file(preset_path("free-particle-duality")));
  const fs::path out = scratch("duality");
  const RunResult r = run_scenario(s, out.string());
  EXPECT_EQ(r.exit_code, 0);
  const Json report = Json::parse(read_file((out / "duality.json").string()));
  EXPECT_LE(report.at("covariance_gap").get<double>(), 1e-8);
  EXPECT_LE(report.at("gain_gap").get<double>(), 1e-8);
  EXPECT_TRUE(report.at("ok").get<bool>());
}

TEST(RunScenario, ItoPresetPassesAndBrokenGermFails) {
  const fs::path out = scratch("ito");
  const RunResult ok = run_scenario(parse_scenario(read_file(preset_path("driven-qubit-ito"))), out.string());
  EXPECT_EQ(ok.exit_code, 0);
  for (double r : ok.summary.at("residuals")) EXPECT_LT(r, 1e-10);

  Json germ = Json::parse(read_file((out / "germ.json").string()));
  germ["blocks"][1][1]["re"][0] = 0.5;  // scattering block no longer unitary
  const Json broken{{"kind", "ito-check"}, {"model", {{"germ", germ}}}};
  const RunResult bad = run_scenario(parse_scenario(broken.dump()), scratch("ito_bad").string());
  EXPECT_EQ(bad.exit_code, 4);
  EXPECT_FALSE(bad.summary.at("ok").get<bool>());
}

TEST(RunScenario, MasterMatchesExactPropagator) {
  const RunResult r = run_scenario(parse_scenario(read_file(preset_path("qubit-damping"))), scratch("master").string());
  EXPECT_LE(r.summary.at("max_deviation_from_exact").get<double>(), 1e-10);
  EXPECT_NEAR(r.summary.at("final_populations")[1].get<double>(), std::exp(-1.0), 1e-10);
}

TEST(RunScenario, ManifestListsEveryArtifactWithItsHash) {
  Json j = preset("qubit-photodetect");
  j["numerics"]["N"] = 64;
  const fs::path out = scratch("manifest");
  const RunResult r = run_scenario(parse_scenario(j.dump()), out.string());
  std::set<std::string> listed;
  for (const auto& f : r.manifest.at("files")) {
    const std::string name = f.at("path");
    listed.insert(name);
    const std::string content = read_file((out / name).string());
    EXPECT_EQ(f.at("sha256").get<std::string>(), sha256_hex(content));
    EXPECT_EQ(f.at("bytes").get<std::size_t>(), content.size());
  }
  std::set<std::string> on_disk;
  for (const auto& e : fs::directory_iterator(out))
    if (e.path().filename() != "manifest.json") on_disk.insert(e.path().filename().string());
  EXPECT_EQ(listed, on_disk);
  EXPECT_TRUE(listed.count("first_events.csv"));
  EXPECT_EQ(Json::parse(read_file((out / "manifest.json").string())), r.manifest);
}

TEST(RunScenario, ReRunsAreByteIdenticalAcrossThreadCounts) {
  for (const char* name : {"qubit-homodyne", "qubit-photodetect", "free-particle"}) {
    SCOPED_TRACE(name);
    Json j = preset(name);
    j["numerics"]["N"] = 130;  // spans three ensemble blocks
    Scenario s = parse_scenario(j.dump());
    const fs::path a = scratch(std::string(name) + "_a"), b = scratch(std::string(name) + "_b");
    s.numerics.threads = 1;
    run_scenario(s, a.string());
    s.numerics.threads = 3;
    run_scenario(s, b.string());
    for (const auto& e : fs::directory_iterator(a))
      EXPECT_EQ(read_file(e.path().string()), read_file((b / e.path().filename()).string())) << e.path();
  }
}

TEST(RunScenario, FilterSummaryAgreesWithMasterOracle) {
  Json j = preset("qubit-homodyne");
  j["numerics"]["N"] = 400;
  const RunResult r = run_scenario(parse_scenario(j.dump()), scratch("filter").string());
  EXPECT_LT(r.summary.at("max_population_z").get<double>(), 4.0);
  EXPECT_NEAR(r.summary.at("master_final_populations")[1].get<double>(), std::exp(-1.0), 1e-9);
}

#ifdef QFC_CLI_PATH
namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(QFC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string write_scenario(const std::string& name, const Json& j) {
  const fs::path p = fs::temp_directory_path() / ("qfc_test_" + name + ".json");
  std::ofstream(p) << j.dump(2);
  return p.string();
}

}  // namespace

TEST(Cli, ExitCodes) {
  const std::string out = scratch("cli_out").string();
  EXPECT_EQ(cli("master --scenario " + preset_path("qubit-damping") + " --validate-only"), 0);
  EXPECT_EQ(cli("master --scenario " + preset_path("qubit-damping") + " --out " + out), 0);
  EXPECT_TRUE(fs::exists(fs::path(out) / "manifest.json"));
  EXPECT_EQ(cli("lqg-run --scenario " + preset_path("qubit-damping") + " --validate-only"), 2);
  EXPECT_EQ(cli("master --scenario /nonexistent.json"), 2);
  EXPECT_EQ(cli("no-such-kind --scenario " + preset_path("qubit-damping")), 2);

  Json bad = Json::parse(kMinimalMaster);
  bad["numerics"]["dt"] = 5.0;
  EXPECT_EQ(cli("master --validate-only --scenario " + write_scenario("dt_over_T", bad)), 2);

  Json stiff = Json::parse(kMinimalMaster);
  stiff["model"]["jump_ops"][0]["re"] = Json::array({0, 40, 0, 0});
  stiff["numerics"]["dt"] = 0.5;
  EXPECT_EQ(cli("master --out " + out + " --scenario " + write_scenario("stiff", stiff)), 3);

  Json germ = Json::parse(R"({"dim": 1, "channels": 1, "blocks": [
    [{"rows":1,"cols":1,"re":[1]}, {"rows":1,"cols":1,"re":[0]}, {"rows":1,"cols":1,"re":[0]}],
    [{"rows":1,"cols":1,"re":[0]}, {"rows":1,"cols":1,"re":[2]}, {"rows":1,"cols":1,"re":[0]}],
    [{"rows":1,"cols":1,"re":[0]}, {"rows":1,"cols":1,"re":[0]}, {"rows":1,"cols":1,"re":[1]}]]})");
  const Json failing{{"kind", "ito-check"}, {"model", {{"germ", germ}}}};
  EXPECT_EQ(cli("ito-check --out " + out + " --scenario " + write_scenario("bad_germ", failing)), 4);
  Json unnormalized = failing;
  unnormalized["model"]["germ"]["blocks"][0][0]["re"][0] = 0.0;
  EXPECT_EQ(cli("ito-check --scenario " + write_scenario("unnormalized_germ", unnormalized) + " --validate-only"), 2);
}

TEST(Cli, SeedAndThreadFlagsOverrideScenario) {
  Json j = preset("qubit-photodetect");
  j["numerics"]["N"] = 70;
  const std::string path = write_scenario("seeded", j);
  const fs::path a = scratch("cli_seed_a"), b = scratch("cli_seed_b"), c = scratch("cli_seed_c");
  ASSERT_EQ(cli("filter-jump --scenario " + path + " --seed 99 --threads 1 --out " + a.string()), 0);
  ASSERT_EQ(cli("filter-jump --scenario " + path + " --seed 99 --threads 2 --out " + b.string()), 0);
  ASSERT_EQ(cli("filter-jump --scenario " + path + " --out " + c.string()), 0);
  EXPECT_EQ(read_file((a / "manifest.json").string()), read_file((b / "manifest.json").string()));
  EXPECT_NE(read_file((a / "ensemble.csv").string()), read_file((c / "ensemble.csv").string()));
}
#endif
