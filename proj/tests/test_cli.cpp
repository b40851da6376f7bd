#include "cli.hpp"

#include "qhmm/oom.hpp"
#include "qhmm/work_model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace qhmm;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out, err;
};

RunResult run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "qhmm");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  RunResult r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("qhmm_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write_config(const std::string& name, const std::string& text) const {
    const fs::path p = dir_ / name;
    std::ofstream(p) << text;
    return p.string();
  }
  std::string out_dir(const std::string& sub) const { return (dir_ / sub).string(); }

  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

// Data rows of a CSV written by the tool: comment line, header, rows.
std::vector<std::vector<std::string>> csv_rows(const fs::path& p, std::vector<std::string>* header = nullptr) {
  std::ifstream f(p);
  std::string line;
  std::vector<std::vector<std::string>> rows;
  bool seen_header = false;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!seen_header) {
      seen_header = true;
      if (header) *header = cells;
      continue;
    }
    rows.push_back(cells);
  }
  return rows;
}

// The status column of the verify table, one entry per suite.
std::vector<std::string> statuses(const std::string& table) {
  std::vector<std::string> s;
  std::stringstream ss(table);
  std::string line;
  std::getline(ss, line);
  while (std::getline(ss, line)) {
    std::stringstream ls(line);
    std::string suite, status;
    ls >> suite >> status;
    s.push_back(suite + ":" + status);
  }
  return s;
}

}  // namespace

TEST_F(CliTest, VerifyPassesAndIsSeedRobust) {
  const RunResult a = run_cli({"--seed", "1", "--out", out_dir("a"), "verify"});
  const RunResult b = run_cli({"--seed", "987654321", "--out", out_dir("b"), "verify"});
  EXPECT_EQ(a.code, cli::kExitOk) << a.out << a.err;
  EXPECT_EQ(b.code, cli::kExitOk) << b.out << b.err;
  const auto sa = statuses(a.out);
  EXPECT_EQ(sa, statuses(b.out));
  EXPECT_EQ(sa.size(), 10u);
  for (const auto& s : sa) EXPECT_NE(s.find(":pass"), std::string::npos) << s;
}

TEST_F(CliTest, PerturbedSicFails) {
  const std::string cfg = write_config("c.json", R"({"suites": ["sic", "spandim"], "sic_perturbation": 0.05})");
  const RunResult r = run_cli({"--config", cfg, "--out", out_dir("o"), "verify"});
  EXPECT_EQ(r.code, cli::kExitInvariant);
  const auto s = statuses(r.out);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0], "sic:FAIL");
  EXPECT_EQ(s[1], "spandim:pass");
}

TEST_F(CliTest, SpandimPreset) {
  const std::string cfg = write_config("c.json", R"({"presets": ["qubit-projective-grid"]})");
  const RunResult r = run_cli({"--config", cfg, "--out", out_dir("o"), "spandim"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_EQ(r.out, "qubit-projective-grid: 3\n");
  const auto rows = csv_rows(dir_ / "o" / "spandim.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0][2], "3");
}

TEST_F(CliTest, CsvHeaderCommentAndSeedOverride) {
  const std::string cfg = write_config("c.json", R"({"presets": ["sic-orbit"], "seed": 5})");
  ASSERT_EQ(run_cli({"--config", cfg, "--out", out_dir("a"), "spandim"}).code, 0);
  ASSERT_EQ(run_cli({"--config", cfg, "--seed", "6", "--out", out_dir("b"), "spandim"}).code, 0);
  const std::string a = slurp(dir_ / "a" / "spandim.csv"), b = slurp(dir_ / "b" / "spandim.csv");
  EXPECT_EQ(a.rfind("# qhmm spandim config_hash=", 0), 0u);
  EXPECT_NE(a.find(" seed=5\n"), std::string::npos);
  EXPECT_NE(b.find(" seed=6\n"), std::string::npos);
  EXPECT_EQ(a.substr(a.find('\n')), b.substr(b.find('\n')));
}

TEST_F(CliTest, LearnSummaryColumnsAndDeterminism) {
  const std::string cfg = write_config(
      "c.json", R"({"L": [2, 3], "K": 4, "seeds": 2, "n_angle": 8, "n_purity": 11, "n_belief": 51, "grid_points": 8, "seed": 11})");
  const RunResult a = run_cli({"--config", cfg, "--out", out_dir("a"), "learn"});
  ASSERT_EQ(a.code, cli::kExitOk) << a.out << a.err;
  ASSERT_EQ(run_cli({"--config", cfg, "--out", out_dir("b"), "learn"}).code, cli::kExitOk);
  std::vector<std::string> header;
  const auto rows = csv_rows(dir_ / "a" / "learn_summary.csv", &header);
  const std::vector<std::string> expected{"episode",      "L2_mean",      "L2_ci95_lo",   "L2_ci95_hi", "L2_random_baseline",
                                          "L3_mean",      "L3_ci95_lo",   "L3_ci95_hi",   "L3_random_baseline"};
  EXPECT_EQ(header, expected);
  EXPECT_EQ(rows.size(), 4u);
  for (const auto& row : rows) EXPECT_LE(std::stod(row[2]), std::stod(row[3]));
  for (const char* f : {"learn_summary.csv", "learn_episodes_L3_seed1.csv", "learn_dissipation_L2_seed0.csv"})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
}

TEST_F(CliTest, LearnSingleEpisode) {
  const std::string cfg = write_config("c.json", R"({"K": 1, "n_angle": 8, "n_purity": 11, "n_belief": 51, "grid_points": 8})");
  ASSERT_EQ(run_cli({"--config", cfg, "--out", out_dir("o"), "learn"}).code, cli::kExitOk);
  EXPECT_EQ(csv_rows(dir_ / "o" / "learn_summary.csv").size(), 1u);
  EXPECT_EQ(csv_rows(dir_ / "o" / "learn_dissipation_L3_seed0.csv").size(), 1u);
}

TEST_F(CliTest, ProtocolBiasShrinks) {
  const std::string cfg = write_config("c.json", R"({"M": [100, 1000, 10000], "samples": 2000, "target_bloch": [0, 0, 0.6]})");
  const RunResult r = run_cli({"--config", cfg, "--out", out_dir("o"), "protocol"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  std::vector<std::string> header;
  const auto rows = csv_rows(dir_ / "o" / "protocol.csv", &header);
  ASSERT_EQ(rows.size(), 3u);
  ASSERT_EQ(header[7], "exact_bias");
  ASSERT_EQ(header[9], "fitted_bias");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_LT(std::abs(std::stod(rows[i][7])), std::abs(std::stod(rows[i - 1][7])));
    EXPECT_LT(std::abs(std::stod(rows[i][9])), std::abs(std::stod(rows[i - 1][9])));
  }
  EXPECT_NEAR(std::stod(rows[0][6]), std::log(1.6), 1e-10);
}

TEST_F(CliTest, PlanSingleStepDiagonalizesExpectedState) {
  const std::string cfg = write_config("c.json", R"({"L": 1, "n_belief": 21, "n_angle": 256})");
  ASSERT_EQ(run_cli({"--config", cfg, "--out", out_dir("o"), "plan"}).code, cli::kExitOk);
  std::vector<std::string> header;
  const auto rows = csv_rows(dir_ / "o" / "value_table.csv", &header);
  ASSERT_EQ(header[3], "optimal_angle");
  ASSERT_EQ(rows.size(), 21u);
  const Eigen::Vector3d n1(0, 0, 1), n2(std::sqrt(3.0) / 2, 0, -0.5);
  for (const auto& row : rows) {
    const double eta = std::stod(row[2]), phi = std::stod(row[3]), V = std::stod(row[5]);
    const Eigen::Vector3d r = eta * n1 + (1 - eta) * n2;
    // plane basis u = z, v = x
    const Eigen::Vector3d d(std::sin(phi), 0, std::cos(phi));
    EXPECT_GE(std::abs(d.dot(r.normalized())), std::cos(std::numbers::pi / 512) - 1e-9) << eta;
    const double p = (1 + r.norm()) / 2;
    auto xlogx = [](double x) { return x > 0 ? x * std::log(x) : 0.0; };
    const double free = std::numbers::ln2 + xlogx(p) + xlogx(1 - p);
    EXPECT_LE(V, free + 1e-9);
    EXPECT_GE(V, free - 1e-4);
  }
}

TEST_F(CliTest, ConfigErrorsExitTwo) {
  const std::string unknown = write_config("u.json", R"({"K": 10, "bogus": 1})");
  const std::string range = write_config("r.json", R"({"K": 0})");
  const std::string wrong_type = write_config("t.json", R"({"theta": "high"})");
  const std::string broken = write_config("b.json", R"({"K": )");
  const std::string bad_preset = write_config("p.json", R"({"presets": ["nope"]})");
  const std::string bad_bloch = write_config("x.json", R"({"target_bloch": [0, 0, 2]})");
  struct Case {
    std::vector<std::string> args;
    std::string needle;
  };
  const std::vector<Case> cases{{{"--config", unknown, "learn"}, "bogus"},
                                {{"--config", range, "learn"}, "K"},
                                {{"--config", wrong_type, "learn"}, "theta"},
                                {{"--config", broken, "learn"}, "JSON"},
                                {{"--config", bad_preset, "spandim"}, "nope"},
                                {{"--config", bad_bloch, "protocol"}, "target_bloch"},
                                {{"--config", (dir_ / "missing.json").string(), "verify"}, "cannot read"},
                                {{"--seed", "-3", "verify"}, "seed"},
                                {{"--seed", "12abc", "verify"}, "seed"},
                                {{"--threads", "0", "verify"}, ""},
                                {{"frobnicate"}, ""},
                                {{}, ""}};
  for (const auto& c : cases) {
    std::vector<std::string> args{"--out", out_dir("o")};
    args.insert(args.end(), c.args.begin(), c.args.end());
    const RunResult r = run_cli(args);
    EXPECT_EQ(r.code, cli::kExitConfig) << c.needle << " " << r.out;
    EXPECT_NE(r.err.find(c.needle), std::string::npos) << r.err;
  }
  // nothing was computed for the rejected configs
  EXPECT_FALSE(fs::exists(dir_ / "o" / "learn_summary.csv"));
}

TEST(ConfigReader, BoundsAndLeftovers) {
  nlohmann::json j = {{"a", 2.5}, {"n", 3}, {"extra", true}};
  cli::ConfigReader r(j, "test");
  EXPECT_DOUBLE_EQ(r.number("a", 0.0, 0.0, 10.0), 2.5);
  EXPECT_EQ(r.integer("n", 1, 0, 5), 3);
  EXPECT_DOUBLE_EQ(r.number("missing", 7.0, 0.0, 10.0), 7.0);
  EXPECT_THROW(r.finish(), cli::ConfigError);
  EXPECT_EQ(r.effective().at("missing"), 7.0);

  cli::ConfigReader strict(nlohmann::json{{"a", 20.0}}, "test");
  EXPECT_THROW(strict.number("a", 0.0, 0.0, 10.0), cli::ConfigError);
  cli::ConfigReader frac(nlohmann::json{{"n", 1.5}}, "test");
  EXPECT_THROW(frac.integer("n", 0, 0, 10), cli::ConfigError);
}

TEST(ConfigHash, StableAndSensitive) {
  const nlohmann::json a = {{"K", 10}, {"theta", 0.8}};
  const nlohmann::json b = {{"theta", 0.8}, {"K", 10}};
  EXPECT_EQ(cli::config_hash(a), cli::config_hash(b));
  EXPECT_NE(cli::config_hash(a), cli::config_hash({{"K", 11}, {"theta", 0.8}}));
  EXPECT_EQ(cli::config_hash(a).size(), 16u);
}

TEST(ActionFamilies, PresetDimensions) {
  EXPECT_EQ(spanning_dimension(cli::action_family_preset("qubit-projective-grid")), 3);
  EXPECT_EQ(spanning_dimension(cli::action_family_preset("qubit-projective-grid+biased")), 4);
  EXPECT_EQ(spanning_dimension(cli::action_family_preset("sic-orbit")), 9);
  EXPECT_THROW(cli::action_family_preset("nope"), cli::ConfigError);
}
