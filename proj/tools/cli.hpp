// Command-line experiment runner: strict JSON configs, seeded runs, CSV output.
#pragma once

#include "qhmm/core.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace qhmm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvariant = 1;
inline constexpr int kExitConfig = 2;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Typed, bounds-checked access to a JSON object. Every key must be read
// before finish(); anything left over is rejected.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string command);

  double number(const std::string& key, double def, double lo, double hi);
  long long integer(const std::string& key, long long def, long long lo, long long hi);
  std::vector<long long> integers(const std::string& key, const std::vector<long long>& def, long long lo, long long hi);
  std::vector<double> numbers(const std::string& key, const std::vector<double>& def, double lo, double hi);
  Eigen::Vector3d bloch(const std::string& key, const Eigen::Vector3d& def);
  std::vector<std::string> choices(const std::string& key, const std::vector<std::string>& def, const std::set<std::string>& allowed);
  std::uint64_t seed(std::uint64_t def);

  void finish() const;
  // The config with defaults filled in; hashed into CSV headers.
  const nlohmann::json& effective() const { return eff_; }

 private:
  const nlohmann::json* find(const std::string& key);
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

  nlohmann::json j_;
  std::string cmd_;
  nlohmann::json eff_ = nlohmann::json::object();
  std::set<std::string> seen_;
};

struct RunContext {
  nlohmann::json config = nlohmann::json::object();
  std::optional<std::uint64_t> seed;  // --seed overrides the config
  std::string out_dir = ".";
  int threads = 1;
};

int cmd_verify(const RunContext& ctx, std::ostream& out);
int cmd_learn(const RunContext& ctx, std::ostream& out);
int cmd_protocol(const RunContext& ctx, std::ostream& out);
int cmd_plan(const RunContext& ctx, std::ostream& out);
int cmd_hardness(const RunContext& ctx, std::ostream& out);
int cmd_spandim(const RunContext& ctx, std::ostream& out);

// "qubit-projective-grid", "qubit-projective-grid+biased", "sic-orbit"
std::vector<Povm> action_family_preset(const std::string& name);
const std::set<std::string>& action_family_presets();

std::string config_hash(const nlohmann::json& effective);

// Parses arguments and dispatches; maps errors to exit codes.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace qhmm::cli
