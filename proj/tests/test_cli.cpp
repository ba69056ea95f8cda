#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "modeqfi/cli.hpp"
#include "oracles/oracles.hpp"

using namespace modeqfi;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "modeqfi");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream cs(line);
    std::string cell;
    while (std::getline(cs, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::path(testing::TempDir()) / "modeqfi_cli";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string write_file(const std::string& name, const std::string& body) {
  const auto p = scratch(name);
  std::ofstream(p) << body;
  return p.string();
}

}  // namespace

TEST(CliSelftest, CleanBuildPasses) {
  const auto r = run({"selftest"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("PASS pulse-constants"), std::string::npos);
  EXPECT_EQ(run({"--tol", "1e-2", "selftest"}).code, 0);
}

TEST(CliSelftest, CorruptedPulseConstantFails) {
  const auto r = run({"selftest", "--inject-fault"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("suite pulse-constants"), std::string::npos);
  EXPECT_NE(r.err.find("tau="), std::string::npos);
}

TEST(CliSelftest, ExitCodeFromTheBinary) {
  const std::string cmd = std::string(MODEQFI_CLI_PATH) + " selftest --inject-fault > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 1);
}

TEST(CliDisplacementScan, NormalizationAndCaptionProperties) {
  const auto r = run({"displacement-scan", "--chi", "0,0.5,1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = parse_csv(r.out);
  ASSERT_EQ(rows[0], (std::vector<std::string>{"n0", "chi", "N1", "qfi", "qfi_normalized"}));
  ASSERT_EQ(rows.size(), 1u + 2u * 3u * 41u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double n0 = std::stod(rows[i][0]), chi = std::stod(rows[i][1]), n1 = std::stod(rows[i][2]), norm = std::stod(rows[i][4]);
    if (n1 == 0.0) EXPECT_DOUBLE_EQ(norm, 1.0);
    if (n1 > 0.0 && chi >= 0.5) EXPECT_GE(norm, 1.0 - 1e-10) << rows[i][0] << " " << rows[i][2];
    if (n1 > 0.0 && chi == 1.0 && n0 == 10.0) EXPECT_GT(norm, 1.0);
    if (chi == 0.0 && n1 > 0.0 && n1 < 0.05) EXPECT_LT(norm, 1.0);
  }
}

TEST(CliDisplacementScan, PipelineEngineAgrees) {
  const auto a = parse_csv(run({"--grid", "6", "displacement-scan"}).out);
  const auto b = parse_csv(run({"--grid", "6", "displacement-scan", "--engine", "pipeline"}).out);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_NEAR(std::stod(a[i][3]), std::stod(b[i][3]), 1e-9 * std::stod(a[i][3]));
}

TEST(CliPulseScan, CaptionProperties) {
  const auto r = run({"pulse-scan", "--grid", "60"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = parse_csv(r.out);
  ASSERT_EQ(rows[0], (std::vector<std::string>{"tau_over_w", "source", "r", "qfi", "qfi_normalized"}));
  std::map<std::pair<std::string, std::string>, std::vector<std::pair<double, double>>> curves;
  for (std::size_t i = 1; i < rows.size(); ++i) curves[{rows[i][1], rows[i][2]}].push_back({std::stod(rows[i][3]), std::stod(rows[i][4])});
  for (const std::string rr : {"0", "0.5", "1"}) {
    const auto& th = curves.at({"thermal", rr});
    double peak = 0.0;
    for (const auto& p : th) peak = std::max(peak, p.second);
    EXPECT_DOUBLE_EQ(peak, 1.0);
    EXPECT_LT(curves.at({"coherent-in-phase", rr}).front().first, 1e-3 * th.front().first * 10);
    EXPECT_NEAR(curves.at({"coherent-out-of-phase", rr}).front().first, 2.0 * th.front().first, 1e-3 * th.front().first);
  }
}

TEST(CliOutput, DeterministicAcrossThreadCounts) {
  const auto a = run({"--threads", "1", "pulse-scan", "--grid", "25"});
  const auto b = run({"--threads", "3", "pulse-scan", "--grid", "25"});
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out.find('\r'), std::string::npos);
}

TEST(CliOutput, ManifestSidecar) {
  const auto path = scratch("scan.csv").string();
  ASSERT_EQ(run({"--out", path, "--grid", "5", "displacement-scan"}).code, 0);
  std::ifstream m(path + ".manifest.json");
  ASSERT_TRUE(m.good());
  const auto j = Json::parse(m);
  EXPECT_EQ(j["version"], cli::kVersion);
  EXPECT_EQ(j["command"], "displacement-scan");
  EXPECT_EQ(j["scenario_hash"].get<std::string>().size(), 16u);
  EXPECT_FALSE(j["notes"].empty());
  EXPECT_TRUE(j.contains("wall_time_seconds"));
  // identical inputs hash identically
  const auto again = scratch("scan2.csv").string();
  run({"--out", again, "--grid", "5", "displacement-scan"});
  EXPECT_EQ(Json::parse(std::ifstream(again + ".manifest.json"))["scenario_hash"], j["scenario_hash"]);
}

TEST(CliOutput, JsonFormat) {
  const auto r = run({"--format", "json", "--grid", "3", "pulse-scan", "--r", "0"});
  ASSERT_EQ(r.code, 0);
  const auto j = Json::parse(r.out);
  EXPECT_EQ(j["rows"].size(), 9u);
  EXPECT_EQ(j["rows"][0]["source"], "thermal");
  EXPECT_TRUE(j.contains("manifest"));
}

TEST(CliErrors, InvalidSweepsAreInputErrors) {
  EXPECT_EQ(run({"--grid", "1", "pulse-scan"}).code, 2);
  EXPECT_EQ(run({"pulse-scan", "--sources", "laser"}).code, 2);
  EXPECT_EQ(run({"pulse-scan", "--tau-min", "3", "--tau-max", "1"}).code, 2);
  EXPECT_EQ(run({"displacement-scan", "--engine", "magic"}).code, 2);
  EXPECT_EQ(run({"displacement-scan", "--chi", "2"}).code, 2);
  EXPECT_EQ(run({"--format", "xml", "selftest"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
}

TEST(CliQfiEval, VacuumInStaticFamilyIsZero) {
  const auto path = write_file("vacuum.json", R"({"schema_version": 1, "kind": "mode-encoded", "family": {"type": "static"},
    "state": {"xbar": [0, 0], "sigma": [[1, 0], [0, 1]]}})");
  const auto r = run({"qfi-eval", path});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(Json::parse(r.out)["result"]["total"].get<double>(), 0.0);
}

TEST(CliQfiEval, ThermalBeamDualRun) {
  const auto path = write_file("beam.json", R"({"schema_version": 1, "kind": "beam", "n0": 10, "width": 1, "compare": true})");
  const auto j = Json::parse(run({"qfi-eval", path}).out);
  EXPECT_NEAR(j["result"]["total"].get<double>(), 20.0, 1e-12);
  EXPECT_NEAR(j["closed_form"]["value"].get<double>(), 20.0, 1e-12);
  EXPECT_TRUE(j["closed_form"]["within_tolerance"].get<bool>());
  EXPECT_TRUE(j["result"].contains("groups"));
}

TEST(CliQfiEval, PulseDualRun) {
  const auto path = write_file("pulse.json", R"({"schema_version": 1, "kind": "pulse", "source": "coherent", "tau": 1, "n0": 1,
    "r": 0.5, "phi": 1, "compare": true})");
  const auto j = Json::parse(run({"qfi-eval", path}).out);
  EXPECT_LT(std::abs(j["closed_form"]["difference"].get<double>()), 1e-12);
}

TEST(CliQfiEval, SampledFamilyFromFile) {
  const auto m = oracle::hermite_gauss_samples(1, 1.0, 0.0);
  {
    std::ofstream f(scratch("hg.csv"));
    write_mode_samples(f, ModeSamples{-14.0, m.spacing, m.values, m.derivatives});
  }
  const auto path = write_file("sampled.json", R"({"schema_version": 1, "kind": "mode-encoded",
    "family": {"type": "sampled", "path": "hg.csv", "rule": "simpson"},
    "state": {"xbar": [0, 0], "sigma": [[21, 0], [0, 21]]}})");
  const auto r = run({"qfi-eval", path});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = Json::parse(r.out);
  EXPECT_NEAR(j["result"]["total"].get<double>(), 20.0, 1e-9);
  EXPECT_EQ(j["derivative_modes"], 1);
}

TEST(CliQfiEval, SchemaViolationsNameTheField) {
  const auto version = write_file("v2.json", R"({"schema_version": 2, "kind": "beam"})");
  auto r = run({"qfi-eval", version});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("$.schema_version"), std::string::npos);
  const auto ragged = write_file("ragged.json", R"({"schema_version": 1, "kind": "state", "state": {"xbar": [0, 0], "sigma": [[1, 0], [0]]}})");
  r = run({"qfi-eval", ragged});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("$.state.sigma[1]"), std::string::npos);
  EXPECT_EQ(run({"qfi-eval", write_file("garbage.json", "{not json")}).code, 2);
  EXPECT_EQ(run({"qfi-eval", scratch("missing.json").string()}).code, 2);
}

TEST(CliQfiEval, NumericalFailureExitsThree) {
  // vacuum whose variance grows: the SLD diverges
  const auto path = write_file("singular.json", R"({"schema_version": 1, "kind": "state",
    "state": {"xbar": [0, 0], "sigma": [[1, 0], [0, 1]]}, "dsigma": [[1, 0], [0, 1]]})");
  const auto r = run({"qfi-eval", path});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("singular-sld"), std::string::npos);
}
