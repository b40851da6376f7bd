// Optimistic maximum-likelihood learning over parameterized environment families.
#pragma once

#include "qhmm/oom.hpp"
#include "qhmm/planner.hpp"

#include <map>
#include <optional>
#include <ostream>

namespace qhmm {

inline constexpr double kProbFloor = 1e-12;

using Params = std::vector<double>;

struct ModelFamily {
  int param_dim = 1;
  std::vector<std::pair<double, double>> bounds;
  std::function<QhmmEnvironment(const Params&)> instantiate;
  // Set when instruments do not depend on the parameters; lets every
  // instantiation share one set of recovery maps.
  std::shared_ptr<RecoveryCache> shared_recovery;

  bool in_bounds(const Params& p) const;
  // Instantiates every corner of the box and checks undercompleteness.
  void validate() const;
  OomModel oom_at(const Params& p) const;
};

class Dataset {
 public:
  struct Episode {
    std::string policy;  // snapshot label of the policy that produced it
    Trajectory trajectory;
  };

  void add(std::string policy, Trajectory traj);
  const std::vector<Episode>& episodes() const { return episodes_; }
  std::size_t size() const { return episodes_.size(); }
  bool empty() const { return episodes_.empty(); }
  // Distinct (action, outcome) sequences with multiplicities.
  const std::map<std::vector<int>, long long>& histogram() const { return hist_; }

  static std::vector<int> key_of(const Trajectory& t);

 private:
  std::vector<Episode> episodes_;
  std::map<std::vector<int>, long long> hist_;
};

// Policy-free probability of a histogram key.
double key_probability(const OomModel& oom, const std::vector<int>& key);

double log_likelihood(const OomModel& oom, const Dataset& data);
// -infinity when the parameters are not undercomplete.
double log_likelihood(const ModelFamily& family, const Params& params, const Dataset& data);

struct MleOptions {
  int grid_points = 64;
  double refine_tol = 1e-4;
  bool refine = true;
};

struct MleResult {
  Params params;
  double log_likelihood = 0.0;
  std::size_t grid_argmax = 0;
};

// Cartesian grid over the bounds, lexicographic order.
std::vector<Params> parameter_grid(const ModelFamily& family, int points_per_dim);
MleResult mle_fit(const ModelFamily& family, const Dataset& data, const MleOptions& opts = {});

struct EnvDims {
  int L = 1, A = 1, O = 1, S = 1;
  static EnvDims of(const QhmmEnvironment& env) { return EnvDims{env.L(), env.A(), env.O(), env.S()}; }
};

// c((L + A O) S^4 ln(K S A O L) + ln(K / delta))
double conf_radius(int K, double delta, const EnvDims& dims, double c = 1.0);

struct ConfidenceSet {
  Params center;
  double center_ll = 0.0;
  double radius = 0.0;
  std::vector<Params> members;
  std::vector<double> member_ll;
};

// Grid members with log-likelihood >= max - radius, where the max includes the
// refined center. The grid argmax is always kept.
ConfidenceSet build_confidence_set(const std::vector<Params>& grid, const std::vector<double>& grid_ll, const Params& center, double center_ll,
                                   double radius);

struct PlannedPolicy {
  Policy policy;
  double value = 0.0;  // optimal value on the model it was planned for
  std::string key;     // identifies the policy for caching and logs
  std::shared_ptr<const TablePolicy> table;  // set by the work-extraction planner
};

class OmlePlanner {
 public:
  virtual ~OmlePlanner() = default;
  virtual PlannedPolicy plan(const Params& params) = 0;
  // V* of the true environment over the policy class this planner emits.
  virtual double optimal_value(const QhmmEnvironment& true_env) = 0;
  virtual std::optional<PlannedPolicy> optimal_policy() const { return std::nullopt; }
};

// Brute force over deterministic outcome-history policies; tiny families only.
class ExhaustivePlanner : public OmlePlanner {
 public:
  explicit ExhaustivePlanner(ModelFamily family, std::size_t max_policies = 100000);
  PlannedPolicy plan(const Params& params) override;
  double optimal_value(const QhmmEnvironment& true_env) override;
  std::optional<PlannedPolicy> optimal_policy() const override { return best_true_; }

  static PlannedPolicy best_policy(const QhmmEnvironment& env, std::size_t max_policies);

 private:
  ModelFamily family_;
  std::size_t max_policies_;
  std::map<Params, PlannedPolicy> cache_;
  std::optional<PlannedPolicy> best_true_;
};

struct OptimisticChoice {
  Params params;
  PlannedPolicy planned;
};

OptimisticChoice optimistic_plan(const ConfidenceSet& set, OmlePlanner& planner);

struct OmleOptions {
  int K = 1;
  double delta = 0.05;
  double c = 1.0;
  std::uint64_t seed = 0;
  MleOptions mle;
  std::optional<Params> true_params;
};

struct EpisodeLog {
  int episode = 0;
  Params theta_hat;  // empty before any data
  Params chosen;
  double conf_radius = 0.0;
  double chosen_value = 0.0;
  double realized_reward = 0.0;
  double policy_value_true_env = 0.0;
  double inst_regret = 0.0;
  double cum_regret = 0.0;
  std::size_t members = 0;
  bool truth_in_set = true;
  PlannedPolicy policy;
  Trajectory trajectory;
};

struct OmleRun {
  std::vector<EpisodeLog> logs;
  double v_star = 0.0;
  std::optional<PlannedPolicy> optimal;
  std::vector<std::string> warnings;
};

OmleRun run_omle(const ModelFamily& family, const QhmmEnvironment& true_env, const OmleOptions& opts, OmlePlanner& planner);

// Cumulative sums of V* - V^{pi_k}.
std::vector<double> regret_report(const std::vector<EpisodeLog>& logs, double true_optimal_value);

void write_episode_log_csv(std::ostream& out, const std::vector<EpisodeLog>& logs);

}  // namespace qhmm
