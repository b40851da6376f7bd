// Input-output QHMM environments: filtered memory, sampling, trajectory laws.
#pragma once

#include "qhmm/core.hpp"
#include "qhmm/random.hpp"

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace qhmm {

using ActionId = int;
// Sparse distribution over action ids; zero-weight entries may be omitted.
using ActionDist = std::vector<std::pair<ActionId, double>>;

struct DegenerateTrajectory : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EpisodeFinished : std::logic_error {
  using std::logic_error::logic_error;
};
struct EnumerationGuardExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense reward table r[l][a][o]; steps are 0-based.
class RewardTable {
 public:
  RewardTable() = default;
  RewardTable(int L, int A, int O, double fill = 0.0);
  static RewardTable from_function(int L, int A, int O, const std::function<double(int, ActionId, int)>& f);

  int L() const { return L_; }
  int A() const { return A_; }
  int O() const { return O_; }
  double operator()(int l, ActionId a, int o) const { return v_[idx(l, a, o)]; }
  double& at(int l, ActionId a, int o) { return v_[idx(l, a, o)]; }
  double max_abs() const;
  const std::vector<double>& raw() const { return v_; }

 private:
  std::size_t idx(int l, ActionId a, int o) const {
    return (static_cast<std::size_t>(l) * static_cast<std::size_t>(A_) + static_cast<std::size_t>(a)) * static_cast<std::size_t>(O_) +
           static_cast<std::size_t>(o);
  }
  int L_ = 0, A_ = 0, O_ = 0;
  std::vector<double> v_;
};

struct Step {
  ActionId action = 0;
  int outcome = 0;
  double reward = 0.0;
};

struct Trajectory {
  std::vector<Step> steps;
  std::size_t size() const { return steps.size(); }
  std::vector<int> outcomes() const;
};

struct FilterState {
  HermitianOperator tilde_rho;
  int step = 0;  // 0-based index of the next action
  double trace() const { return tilde_rho.trace(); }
};

struct Policy {
  std::function<ActionDist(int step, const Trajectory& prefix)> choose;

  static Policy fixed(ActionId a);
  static Policy uniform(int num_actions);
  static Policy open_loop(std::vector<ActionId> actions);
};

class QhmmEnvironment {
 public:
  // Several actions may share one instrument (e.g. actions that differ only
  // in reward); action_instrument maps each action to its instrument.
  QhmmEnvironment(DensityOperator rho1, std::vector<Channel> channels, std::shared_ptr<const std::vector<Instrument>> instruments,
                  std::vector<int> action_instrument, std::shared_ptr<const RewardTable> reward, double reward_bound,
                  std::vector<std::string> labels = {});
  // One instrument per action.
  QhmmEnvironment(DensityOperator rho1, std::vector<Channel> channels, const std::vector<Instrument>& instruments, const RewardTable& reward,
                  double reward_bound, std::vector<std::string> labels = {});

  int S() const { return rho1_.dim(); }
  int O() const { return O_; }
  int L() const { return static_cast<int>(channels_.size()) + 1; }
  int A() const { return static_cast<int>(action_instrument_.size()); }
  int num_instruments() const { return static_cast<int>(instruments_->size()); }

  const DensityOperator& rho1() const { return rho1_; }
  const std::vector<Channel>& channels() const { return channels_; }
  // Channel applied after step l, l in [0, L-2].
  const Channel& channel(int l) const { return channels_.at(static_cast<std::size_t>(l)); }
  const Instrument& instrument(ActionId a) const { return (*instruments_)[static_cast<std::size_t>(instrument_index(a))]; }
  int instrument_index(ActionId a) const { return action_instrument_.at(static_cast<std::size_t>(a)); }
  const std::vector<Instrument>& instruments() const { return *instruments_; }
  std::shared_ptr<const std::vector<Instrument>> shared_instruments() const { return instruments_; }
  const std::vector<int>& action_instrument() const { return action_instrument_; }
  const RewardTable& rewards() const { return *reward_; }
  std::shared_ptr<const RewardTable> shared_rewards() const { return reward_; }
  double reward(int l, ActionId a, int o) const { return (*reward_)(l, a, o); }
  double reward_bound() const { return R_; }
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  DensityOperator rho1_;
  std::vector<Channel> channels_;
  std::shared_ptr<const std::vector<Instrument>> instruments_;
  std::vector<int> action_instrument_;
  std::shared_ptr<const RewardTable> reward_;
  double R_ = 0.0;
  std::vector<std::string> labels_;
  int O_ = 0;
};

struct StepResult {
  int outcome = 0;
  double reward = 0.0;
  FilterState next;
};

FilterState initial_filter(const QhmmEnvironment& env);
std::vector<double> conditional_outcome_prob(const QhmmEnvironment& env, const FilterState& filter, ActionId a);
StepResult step(const QhmmEnvironment& env, const FilterState& filter, ActionId a, Rng& rng);
Trajectory simulate_episode(const QhmmEnvironment& env, const Policy& policy, Rng& rng);
// P^pi(tau) = pi(tau) A(tau)
double trajectory_prob(const QhmmEnvironment& env, const Policy& policy, const Trajectory& traj);
// A(tau): the policy-free factor, i.e. the trace of the final filter.
double trajectory_likelihood(const QhmmEnvironment& env, const Trajectory& traj);

// Branch map X -> Tr_out[(I (x) M_o) E(X)] for an emission E : S -> S (x) S_out.
Instrument instrument_from_sequential_emission(const Channel& emission, int dim_out, const Povm& povm);
QhmmEnvironment from_sequential_emission(const DensityOperator& rho1, const std::vector<Channel>& memory_channels,
                                         const std::vector<Channel>& emissions, const std::vector<Povm>& povms, RewardTable reward,
                                         double reward_bound);

struct ValueOptions {
  std::size_t max_paths = 1000000;
  bool allow_monte_carlo = false;
  std::size_t mc_samples = 100000;
  std::uint64_t seed = 0;
};

struct ValueEstimate {
  double value = 0.0;
  double std_error = 0.0;  // 0 in enumeration mode
  bool exact = true;
  std::size_t paths = 0;  // enumerated paths or Monte Carlo samples
};

ValueEstimate value_of_policy(const QhmmEnvironment& env, const Policy& policy, const ValueOptions& opts = {});

// Random environment for property checks. Instruments are measure-and-prepare
// (always undercomplete) unless `generic` is set and O >= S^2, in which case
// they come from a random isometry. Rewards are uniform in [-1, 1].
QhmmEnvironment random_environment(int S, int O, int A, int L, Rng& rng, bool generic = false);

}  // namespace qhmm
