// State-agnostic work extraction from a classical hidden memory: observation
// matrices, work values, the finite-M extraction protocol, the case-study
// environment and dissipation accounting.
#pragma once

#include "qhmm/learner.hpp"
#include "qhmm/planner.hpp"
#include "qhmm/random.hpp"

#include <ostream>

namespace qhmm {

struct ObservationMatrix {
  Eigen::Matrix2d O;  // O(o, m) = Pr(o | m)
  bool invertible = false;
  double det = 0.0;
};

// q_m = Tr(M_1 sigma_m) with M_1 the projector onto psi_perp.
ObservationMatrix observation_matrix(const WorkAction& action, const std::array<DensityOperator, 2>& sigmas);

struct WorkOutcome {
  int outcome = 0;
  double work = 0.0;
};

// (w_0, w_1) = inv_temperature^-1 (ln 2 + ln lambda, ln 2 + ln(1 - lambda))
std::pair<double, double> work_values(const WorkAction& action, double inv_temperature);
// inv_temperature^-1 [D(rho || I/2) - D(rho || target)]
double expected_work_arbitrary(const DensityOperator& rho, const DensityOperator& target, double inv_temperature);

struct ProtocolResult {
  double mean = 0.0;
  double std = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
  int M = 0;
};

struct ProtocolOptions {
  double eps = 1e-6;  // requires p_0 <= 1 - eps
  int threads = 1;
};

// Dephase in the target eigenbasis, then run the M-step bit chain. Samples are
// split into fixed seeded chunks, so the result does not depend on threads.
ProtocolResult protocol_monte_carlo(const DensityOperator& rho, const DensityOperator& target, int M, double inv_temperature, std::size_t n_samples,
                                    Rng& rng, const ProtocolOptions& opts = {});
// Exact finite-M expectation of the same chain.
double protocol_exact_expectation(const DensityOperator& rho, const DensityOperator& target, int M, double inv_temperature, double eps = 1e-6);
// Least-squares C in bias ~ C / M through the origin.
double fit_inverse_m(const std::vector<std::pair<int, double>>& m_and_bias);

double eps_for_episodes(int K);  // max(1/K, 1e-6), at most 0.25

struct CaseStudyOptions {
  int L = 3;
  Eigen::Vector3d bloch1{0.0, 0.0, 1.0};
  Eigen::Vector3d bloch2{0.8660254037844386, 0.0, -0.5};
  double inv_temperature = 1.0;
  Belief initial;
  int n_angle = 64;
  int n_purity = 101;
  double eps = 1e-6;
  std::pair<double, double> theta_bounds{0.01, 0.99};
};

// Two-state classical memory with transition [[theta, 1-theta], [1-theta, theta]].
// Actions are (basis angle, purity) pairs; angles whose observation matrix is
// singular are dropped. Instruments do not depend on theta and are shared.
class CaseStudy {
 public:
  CaseStudy(double theta, const CaseStudyOptions& opts);

  const CaseStudyOptions& options() const { return opts_; }
  double theta() const { return theta_; }
  int L() const { return opts_.L; }
  double eps() const { return opts_.eps; }
  const EmissionModel& model() const { return model_; }
  EmissionModel model_at(double theta) const;
  const std::vector<double>& angles() const { return *angles_; }
  const std::vector<double>& purities() const { return *purities_; }
  int n_purity() const { return static_cast<int>(purities_->size()); }
  ActionId action_id(int angle_idx, int purity_idx) const { return angle_idx * n_purity() + purity_idx; }
  WorkAction action(ActionId a) const;

  std::shared_ptr<const QhmmEnvironment> env() const { return env_; }
  QhmmEnvironment instantiate(double theta) const;
  const ModelFamily& family() const { return family_; }

  // Runs a table policy on the environment's action ids.
  Policy env_policy(std::shared_ptr<const TablePolicy> table) const;
  // Uniform angle; purity from the unconditioned marginal of the given model.
  Policy random_policy(const EmissionModel& truth) const;
  StochasticWorkPolicy random_work_policy(const EmissionModel& truth) const;

 private:
  CaseStudyOptions opts_;
  double theta_;
  EmissionModel model_;
  std::shared_ptr<const std::vector<double>> angles_;
  std::shared_ptr<const std::vector<double>> purities_;
  std::shared_ptr<const std::vector<Instrument>> instruments_;
  std::shared_ptr<const RewardTable> rewards_;
  std::shared_ptr<const QhmmEnvironment> env_;
  ModelFamily family_;
};

CaseStudy build_case_study(double theta, const CaseStudyOptions& opts = {});

// Plans with backward value iteration on each candidate theta; V* is the best
// member of {pi(theta') : theta' in grid or the true theta} on the true env.
class WorkOmlePlanner : public OmlePlanner {
 public:
  WorkOmlePlanner(const CaseStudy& cs, int grid_points, std::optional<double> true_theta, int n_belief = 201);
  PlannedPolicy plan(const Params& params) override;
  double optimal_value(const QhmmEnvironment& true_env) override;
  std::optional<PlannedPolicy> optimal_policy() const override { return best_; }

 private:
  CaseStudy cs_;
  std::vector<double> grid_;
  std::optional<double> true_theta_;
  int n_belief_;
  std::map<double, PlannedPolicy> cache_;
  std::optional<PlannedPolicy> best_;
};

// Closed form: the marginal emitted state at each step ignores the measurement.
double random_baseline_value(const CaseStudy& cs, const EmissionModel& truth);

// inv_temperature^-1 E[sum_{l<L} H(p_l) + D(p_l || lambda_l)] with the final
// step written as S(xi) + D(xi || rho_a), under the true model's beliefs.
double entropy_form_loss(const EmissionModel& truth, int L, const WorkPolicy& policy, const EnumerationOptions& opts = {});

struct DissipationRow {
  int episode = 0;
  double value_form = 0.0;
  double entropy_form = 0.0;
  double random_baseline = 0.0;
};

struct DissipationSeries {
  std::vector<DissipationRow> rows;
  double max_identity_gap = 0.0;  // max |value_form - entropy_form|
};

// Requires a run planned with WorkOmlePlanner (policies carry their tables).
DissipationSeries dissipation_series(const OmleRun& run, const EmissionModel& truth, int L, double random_gap);
void write_dissipation_csv(std::ostream& out, const DissipationSeries& s);

struct LearningSetup {
  CaseStudyOptions case_study;  // eps is overwritten with eps_for_episodes(K)
  double theta = 0.8;
  int K = 500;
  double c = 1.0;
  double delta = 0.05;
  int grid_points = 64;
  int n_belief = 201;
  std::uint64_t seed = 0;
};

struct LearningResult {
  OmleRun run;
  DissipationSeries series;
  double random_value = 0.0;
  double random_gap = 0.0;  // V* - value of the random baseline
};

// OMLE on the case study at the true theta, with dissipation accounting.
LearningResult run_case_study_learning(const LearningSetup& setup);

}  // namespace qhmm
