// Belief-MDP planning for the two-state classical memory: Bayesian updates,
// optimal purity, backward value iteration and exact policy evaluation.
#pragma once

#include "qhmm/work_model.hpp"

#include <functional>
#include <ostream>
#include <vector>

namespace qhmm {

struct ImpossibleObservation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

DensityOperator expected_state(const Belief& belief, const std::array<DensityOperator, 2>& sigmas);
// Pr(o | belief, basis)
double outcome_probability(const Belief& belief, double basis_angle, int outcome, const EmissionPlane& plane);
// Bayes posterior on the emitting state, then pushed through T.
Belief belief_update(const Belief& belief, double basis_angle, int outcome, const std::array<DensityOperator, 2>& sigmas, const Eigen::Matrix2d& T);
Belief belief_update(const Belief& belief, double basis_angle, int outcome, const EmissionPlane& plane, const Eigen::Matrix2d& T);
double optimal_purity(const Belief& belief, double basis_angle, const std::array<DensityOperator, 2>& sigmas, double eps);
// inv_temperature^-1 [D(xi || I/2) - D(xi || rho_a)]
double expected_immediate_work(const Belief& belief, const WorkAction& action, const std::array<DensityOperator, 2>& sigmas, double inv_temperature);

struct ValueTable {
  int L = 0;
  std::vector<double> grid;                 // eta(1) of each grid belief
  std::vector<double> angles;               // action grid
  std::vector<std::vector<double>> V;       // L+1 layers, V[L] = 0
  std::vector<std::vector<int>> policy;     // L layers of angle indices
  std::vector<std::vector<double>> lambda;  // optimal purity at each grid belief

  int n_belief() const { return static_cast<int>(grid.size()); }
  // Nearest grid index, ties to the lower index.
  int nearest(double eta1) const;
};

struct PlannerSpec {
  int L = 1;
  int n_belief = 201;
  std::vector<double> angles = uniform_angles(64);
  double eps = 1e-6;  // purity clamp
};

ValueTable backward_value_iteration(const EmissionModel& model, const PlannerSpec& spec);
ValueTable backward_value_iteration(const EmissionModel& model, int L, int n_belief, int n_angle, double eps = 1e-6);
// Q_l(grid[j], angles[k]) with continuation on projected beliefs.
double bellman_q(const EmissionModel& model, const ValueTable& table, int l, int j, int k, double eps);

void write_value_table_csv(std::ostream& out, const ValueTable& table);

// Deterministic policy over outcome histories.
using WorkPolicy = std::function<WorkAction(int step, const std::vector<int>& outcomes)>;
using StochasticWorkPolicy = std::function<std::vector<std::pair<WorkAction, double>>(int step, const std::vector<int>& outcomes)>;

// Executes a value table under an agent model: tracks the exact Bayes belief,
// looks up the nearest grid belief for the basis and sets the purity from the
// exact belief. Purities are optionally snapped to a finite grid.
class TablePolicy {
 public:
  TablePolicy(ValueTable table, EmissionModel agent_model, double eps, std::vector<double> purity_grid = {});

  int angle_index(int step, const std::vector<int>& outcomes) const;
  WorkAction act(int step, const std::vector<int>& outcomes) const;
  // Index into purity_grid of act(...).purity; requires a purity grid.
  int purity_index(int step, const std::vector<int>& outcomes) const;
  WorkPolicy as_work_policy() const;
  const ValueTable& table() const { return table_; }
  const EmissionModel& agent_model() const { return model_; }

 private:
  struct Decision {
    int angle = 0;
    double lambda = 0.5;
    int purity_idx = -1;
  };
  Decision decide(int step, const std::vector<int>& outcomes) const;

  ValueTable table_;
  EmissionModel model_;
  EmissionPlane plane_;
  double eps_;
  std::vector<double> purities_;
};

int nearest_index(const std::vector<double>& sorted_grid, double x);

struct EnumerationOptions {
  std::size_t max_paths = 1000000;
};

// Exact expected cumulative work, enumerating hidden and outcome paths jointly.
double evaluate_policy_exact(const EmissionModel& model, int L, const WorkPolicy& policy, const EnumerationOptions& opts = {});
double evaluate_policy_exact(const EmissionModel& model, int L, const StochasticWorkPolicy& policy, const EnumerationOptions& opts = {});

}  // namespace qhmm
