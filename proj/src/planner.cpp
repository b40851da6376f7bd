#include "qhmm/planner.hpp"

#include "qhmm/csv.hpp"
#include "qhmm/env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace qhmm {

void Belief::validate() const {
  if (probs[0] < 0.0 || probs[1] < 0.0) throw ValidationError("belief has a negative entry");
  if (std::abs(probs[0] + probs[1] - 1.0) > 1e-12) throw ValidationError("belief does not sum to 1");
}

Eigen::Matrix2d EmissionModel::symmetric_transition(double theta) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw ValidationError("theta must lie in [0, 1]");
  Eigen::Matrix2d t;
  t << theta, 1.0 - theta, 1.0 - theta, theta;
  return t;
}

bool EmissionModel::validate() const {
  if ((T.array() < 0.0).any()) throw ValidationError("transition matrix has negative entries");
  for (int m = 0; m < 2; ++m)
    if (std::abs(T.col(m).sum() - 1.0) > 1e-12) throw ValidationError("transition matrix columns must sum to 1");
  initial.validate();
  if (!(inv_temperature > 0.0)) throw ValidationError("inverse temperature must be positive");
  for (const auto& s : sigmas)
    if (s.dim() != 2) throw DimensionError("emitted states must be qubit states");
  return (sigmas[0].mat() - sigmas[1].mat()).cwiseAbs().maxCoeff() > 1e-12;
}

Eigen::Vector3d bloch_vector(const DensityOperator& rho) {
  const auto p = pauli_matrices();
  Eigen::Vector3d n;
  for (int i = 0; i < 3; ++i) n(i) = (rho.mat() * p[static_cast<std::size_t>(i)]).trace().real();
  return n;
}

namespace {

Eigen::Vector3d unit_or_zero(const Eigen::Vector3d& x) {
  const double n = x.norm();
  return n > 1e-12 ? Eigen::Vector3d(x / n) : Eigen::Vector3d::Zero();
}

}  // namespace

EmissionPlane::EmissionPlane(const std::array<DensityOperator, 2>& sigmas) {
  n_ = {bloch_vector(sigmas[0]), bloch_vector(sigmas[1])};
  u_ = unit_or_zero(n_[0]);
  if (u_.isZero()) u_ = unit_or_zero(n_[1]);
  if (u_.isZero()) u_ = Eigen::Vector3d::UnitZ();
  for (const auto& cand : {n_[1], n_[0], Eigen::Vector3d(Eigen::Vector3d::UnitX()), Eigen::Vector3d(Eigen::Vector3d::UnitY())}) {
    v_ = unit_or_zero(cand - cand.dot(u_) * u_);
    if (!v_.isZero()) break;
  }
}

Eigen::Vector3d EmissionPlane::direction(double angle) const { return std::cos(angle) * u_ + std::sin(angle) * v_; }

Mat EmissionPlane::projector(double angle) const { return (Mat::Identity(2, 2) + bloch_operator(direction(angle))) / 2.0; }

double EmissionPlane::overlap(double angle, int m) const { return 0.5 * (1.0 + direction(angle).dot(n_[static_cast<std::size_t>(m)])); }

std::vector<double> uniform_angles(int n) {
  if (n < 1) throw ValidationError("angle grid needs at least one point");
  std::vector<double> a(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) a[static_cast<std::size_t>(k)] = k * std::numbers::pi / n;
  return a;
}

double clamp_purity(double lambda, double eps) { return std::min(std::max(lambda, eps), 1.0 - eps); }

DensityOperator tailored_state(const EmissionPlane& plane, const WorkAction& a) {
  const Mat p = plane.projector(a.basis_angle);
  return DensityOperator(Mat(a.purity * p + (1.0 - a.purity) * (Mat::Identity(2, 2) - p)));
}

DensityOperator expected_state(const Belief& belief, const std::array<DensityOperator, 2>& sigmas) {
  belief.validate();
  return DensityOperator(Mat(belief[0] * sigmas[0].mat() + belief[1] * sigmas[1].mat()));
}

double outcome_probability(const Belief& belief, double basis_angle, int outcome, const EmissionPlane& plane) {
  const double p0 = belief[0] * plane.overlap(basis_angle, 0) + belief[1] * plane.overlap(basis_angle, 1);
  return outcome == 0 ? p0 : 1.0 - p0;
}

Belief belief_update(const Belief& belief, double basis_angle, int outcome, const EmissionPlane& plane, const Eigen::Matrix2d& T) {
  if (outcome != 0 && outcome != 1) throw std::out_of_range("outcome must be 0 or 1");
  double like[2];
  for (int m = 0; m < 2; ++m) {
    const double ov = plane.overlap(basis_angle, m);
    like[m] = belief[m] * (outcome == 0 ? ov : 1.0 - ov);
  }
  const double z = like[0] + like[1];
  if (!(z > 0.0)) throw ImpossibleObservation("observation has zero probability under the belief");
  const double post0 = like[0] / z;
  const double post1 = like[1] / z;
  double n0 = T(0, 0) * post0 + T(0, 1) * post1;
  double n1 = T(1, 0) * post0 + T(1, 1) * post1;
  const double s = n0 + n1;
  return Belief{{n0 / s, n1 / s}};
}

Belief belief_update(const Belief& belief, double basis_angle, int outcome, const std::array<DensityOperator, 2>& sigmas, const Eigen::Matrix2d& T) {
  return belief_update(belief, basis_angle, outcome, EmissionPlane(sigmas), T);
}

double optimal_purity(const Belief& belief, double basis_angle, const std::array<DensityOperator, 2>& sigmas, double eps) {
  return clamp_purity(outcome_probability(belief, basis_angle, 0, EmissionPlane(sigmas)), eps);
}

double expected_immediate_work(const Belief& belief, const WorkAction& action, const std::array<DensityOperator, 2>& sigmas, double inv_temperature) {
  if (!(inv_temperature > 0.0)) throw ValidationError("inverse temperature must be positive");
  const DensityOperator xi = expected_state(belief, sigmas);
  const DensityOperator rho_a = tailored_state(EmissionPlane(sigmas), action);
  return (relative_entropy(xi, DensityOperator::maximally_mixed(2)) - relative_entropy(xi, rho_a)) / inv_temperature;
}

namespace {

// ln 2 + p ln(lambda) + (1-p) ln(1-lambda), scaled by 1/inv_temperature.
double work_given_p(double p0, double lambda, double inv_temperature) {
  double w = std::numbers::ln2;
  if (p0 > 0.0) w += p0 * std::log(lambda);
  if (p0 < 1.0) w += (1.0 - p0) * std::log(1.0 - lambda);
  return w / inv_temperature;
}

struct AngleData {
  std::vector<double> ov0, ov1;  // Pr(o=0 | m) per angle
};

AngleData angle_data(const EmissionModel& model, const std::vector<double>& angles) {
  EmissionPlane plane(model.sigmas);
  AngleData d;
  for (double a : angles) {
    d.ov0.push_back(plane.overlap(a, 0));
    d.ov1.push_back(plane.overlap(a, 1));
  }
  return d;
}

double q_value(const EmissionModel& model, const ValueTable& table, const AngleData& ad, int l, int j, int k, double eps) {
  const double eta = table.grid[static_cast<std::size_t>(j)];
  const double ov0 = ad.ov0[static_cast<std::size_t>(k)];
  const double ov1 = ad.ov1[static_cast<std::size_t>(k)];
  const double p0 = eta * ov0 + (1.0 - eta) * ov1;
  const double lambda = clamp_purity(p0, eps);
  double q = work_given_p(p0, lambda, model.inv_temperature);
  if (l + 1 < table.L) {
    const auto& next = table.V[static_cast<std::size_t>(l + 1)];
    for (int o = 0; o < 2; ++o) {
      const double po = o == 0 ? p0 : 1.0 - p0;
      if (!(po > 0.0)) continue;
      const double l0 = eta * (o == 0 ? ov0 : 1.0 - ov0);
      const double l1 = (1.0 - eta) * (o == 0 ? ov1 : 1.0 - ov1);
      const double post0 = l0 / (l0 + l1);
      const double eta_next = model.T(0, 0) * post0 + model.T(0, 1) * (1.0 - post0);
      q += po * next[static_cast<std::size_t>(table.nearest(eta_next))];
    }
  }
  return q;
}

}  // namespace

int nearest_index(const std::vector<double>& sorted_grid, double x) {
  if (sorted_grid.empty()) throw std::invalid_argument("empty grid");
  auto it = std::lower_bound(sorted_grid.begin(), sorted_grid.end(), x);
  if (it == sorted_grid.begin()) return 0;
  if (it == sorted_grid.end()) return static_cast<int>(sorted_grid.size()) - 1;
  const auto hi = static_cast<int>(it - sorted_grid.begin());
  // ties go to the lower index
  return (x - sorted_grid[static_cast<std::size_t>(hi - 1)] <= sorted_grid[static_cast<std::size_t>(hi)] - x) ? hi - 1 : hi;
}

int ValueTable::nearest(double eta1) const {
  const int n = n_belief();
  const double x = eta1 * (n - 1);
  if (!(x > 0.0)) return 0;
  int i = static_cast<int>(std::floor(x));
  if (i >= n - 1) return n - 1;
  if (x - i > 0.5) ++i;
  return i;
}

ValueTable backward_value_iteration(const EmissionModel& model, const PlannerSpec& spec) {
  if (spec.n_belief < 2) throw ValidationError("belief grid needs at least 2 points");
  if (spec.angles.empty()) throw ValidationError("angle grid is empty");
  if (spec.L < 0) throw ValidationError("horizon must be non-negative");
  model.validate();
  ValueTable t;
  t.L = spec.L;
  t.angles = spec.angles;
  for (int j = 0; j < spec.n_belief; ++j) t.grid.push_back(static_cast<double>(j) / (spec.n_belief - 1));
  const std::size_t nb = t.grid.size();
  t.V.assign(static_cast<std::size_t>(spec.L) + 1, std::vector<double>(nb, 0.0));
  t.policy.assign(static_cast<std::size_t>(spec.L), std::vector<int>(nb, 0));
  t.lambda.assign(static_cast<std::size_t>(spec.L), std::vector<double>(nb, 0.5));
  const AngleData ad = angle_data(model, spec.angles);
  const int na = static_cast<int>(spec.angles.size());
  for (int l = spec.L - 1; l >= 0; --l) {
    for (int j = 0; j < spec.n_belief; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int k = 0; k < na; ++k) {
        const double q = q_value(model, t, ad, l, j, k, spec.eps);
        if (q > best) {
          best = q;
          arg = k;
        }
      }
      const auto ls = static_cast<std::size_t>(l);
      const auto js = static_cast<std::size_t>(j);
      t.V[ls][js] = best;
      t.policy[ls][js] = arg;
      const double eta = t.grid[js];
      t.lambda[ls][js] = clamp_purity(eta * ad.ov0[static_cast<std::size_t>(arg)] + (1.0 - eta) * ad.ov1[static_cast<std::size_t>(arg)], spec.eps);
    }
  }
  return t;
}

ValueTable backward_value_iteration(const EmissionModel& model, int L, int n_belief, int n_angle, double eps) {
  if (n_angle < 2) throw ValidationError("angle grid needs at least 2 points");
  return backward_value_iteration(model, PlannerSpec{L, n_belief, uniform_angles(n_angle), eps});
}

double bellman_q(const EmissionModel& model, const ValueTable& table, int l, int j, int k, double eps) {
  return q_value(model, table, angle_data(model, table.angles), l, j, k, eps);
}

void write_value_table_csv(std::ostream& out, const ValueTable& table) {
  CsvWriter w(out);
  w.header({"step", "belief_index", "belief_value", "optimal_angle", "optimal_lambda", "V"});
  for (int l = 0; l < table.L; ++l) {
    for (int j = 0; j < table.n_belief(); ++j) {
      const auto ls = static_cast<std::size_t>(l);
      const auto js = static_cast<std::size_t>(j);
      w.row({static_cast<long long>(l + 1), static_cast<long long>(j), table.grid[js], table.angles[static_cast<std::size_t>(table.policy[ls][js])],
             table.lambda[ls][js], table.V[ls][js]});
    }
  }
}

TablePolicy::TablePolicy(ValueTable table, EmissionModel agent_model, double eps, std::vector<double> purity_grid)
    : table_(std::move(table)), model_(std::move(agent_model)), plane_(model_.sigmas), eps_(eps), purities_(std::move(purity_grid)) {}

TablePolicy::Decision TablePolicy::decide(int step, const std::vector<int>& outcomes) const {
  if (step < 0 || step >= table_.L) throw std::out_of_range("TablePolicy: step outside the table horizon");
  Belief b = model_.initial;
  for (int t = 0;; ++t) {
    const int k = table_.policy[static_cast<std::size_t>(t)][static_cast<std::size_t>(table_.nearest(b[0]))];
    const double angle = table_.angles[static_cast<std::size_t>(k)];
    if (t == step) {
      Decision d;
      d.angle = k;
      d.lambda = clamp_purity(outcome_probability(b, angle, 0, plane_), eps_);
      if (!purities_.empty()) {
        d.purity_idx = nearest_index(purities_, d.lambda);
        d.lambda = purities_[static_cast<std::size_t>(d.purity_idx)];
      }
      return d;
    }
    try {
      b = belief_update(b, angle, outcomes.at(static_cast<std::size_t>(t)), plane_, model_.T);
    } catch (const ImpossibleObservation&) {
      // The agent's model rules the outcome out; keep the prior and move on.
      const double n0 = model_.T(0, 0) * b[0] + model_.T(0, 1) * b[1];
      b = Belief{{n0, 1.0 - n0}};
    }
  }
}

int TablePolicy::angle_index(int step, const std::vector<int>& outcomes) const { return decide(step, outcomes).angle; }

WorkAction TablePolicy::act(int step, const std::vector<int>& outcomes) const {
  const Decision d = decide(step, outcomes);
  return WorkAction{table_.angles[static_cast<std::size_t>(d.angle)], d.lambda};
}

int TablePolicy::purity_index(int step, const std::vector<int>& outcomes) const {
  if (purities_.empty()) throw std::logic_error("TablePolicy has no purity grid");
  return decide(step, outcomes).purity_idx;
}

WorkPolicy TablePolicy::as_work_policy() const {
  return [self = *this](int step, const std::vector<int>& outcomes) { return self.act(step, outcomes); };
}

namespace {

struct JointEnumerator {
  const EmissionModel& model;
  const EmissionPlane plane;
  int L;
  const StochasticWorkPolicy& policy;
  std::size_t max_paths;
  std::size_t paths = 0;

  // Expected future work from step l given hidden state m and outcome history.
  double run(int l, int m, std::vector<int>& outcomes) {
    double total = 0.0;
    for (const auto& [a, pa] : policy(l, outcomes)) {
      if (pa <= 0.0) continue;
      const double ov = plane.overlap(a.basis_angle, m);
      for (int o = 0; o < 2; ++o) {
        const double po = o == 0 ? ov : 1.0 - ov;
        if (!(po > 0.0)) continue;
        const double w = (std::numbers::ln2 + std::log(o == 0 ? a.purity : 1.0 - a.purity)) / model.inv_temperature;
        double future = 0.0;
        if (l + 1 < L) {
          outcomes.push_back(o);
          for (int mn = 0; mn < 2; ++mn) {
            const double tr = model.T(mn, m);
            if (tr > 0.0) future += tr * run(l + 1, mn, outcomes);
          }
          outcomes.pop_back();
        } else if (++paths > max_paths) {
          throw EnumerationGuardExceeded("evaluate_policy_exact: enumeration guard exceeded");
        }
        total += pa * po * (w + future);
      }
    }
    return total;
  }
};

}  // namespace

double evaluate_policy_exact(const EmissionModel& model, int L, const StochasticWorkPolicy& policy, const EnumerationOptions& opts) {
  if (L < 0) throw std::invalid_argument("horizon must be non-negative");
  if (L == 0) return 0.0;
  JointEnumerator e{model, EmissionPlane(model.sigmas), L, policy, opts.max_paths};
  std::vector<int> outcomes;
  double v = 0.0;
  for (int m = 0; m < 2; ++m)
    if (model.initial[m] > 0.0) v += model.initial[m] * e.run(0, m, outcomes);
  return v;
}

double evaluate_policy_exact(const EmissionModel& model, int L, const WorkPolicy& policy, const EnumerationOptions& opts) {
  StochasticWorkPolicy sp = [&policy](int l, const std::vector<int>& o) { return std::vector<std::pair<WorkAction, double>>{{policy(l, o), 1.0}}; };
  return evaluate_policy_exact(model, L, sp, opts);
}

}  // namespace qhmm
