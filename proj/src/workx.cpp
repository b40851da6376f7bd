#include "qhmm/workx.hpp"

#include "qhmm/csv.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

namespace qhmm {

ObservationMatrix observation_matrix(const WorkAction& action, const std::array<DensityOperator, 2>& sigmas) {
  const EmissionPlane plane(sigmas);
  const Mat m1 = Mat::Identity(2, 2) - plane.projector(action.basis_angle);
  ObservationMatrix r;
  for (int m = 0; m < 2; ++m) {
    const double q = std::clamp((m1 * sigmas[static_cast<std::size_t>(m)].mat()).trace().real(), 0.0, 1.0);
    r.O(0, m) = 1.0 - q;
    r.O(1, m) = q;
  }
  r.det = r.O.determinant();
  r.invertible = std::abs(r.O(1, 0) - r.O(1, 1)) > 1e-10;
  return r;
}

std::pair<double, double> work_values(const WorkAction& action, double inv_temperature) {
  const double lam = action.purity;
  if (!(lam > 0.0 && lam < 1.0)) throw std::invalid_argument("work_values: purity must lie in (0, 1)");
  if (!(inv_temperature > 0.0)) throw std::invalid_argument("work_values: inverse temperature must be positive");
  return {(std::numbers::ln2 + std::log(lam)) / inv_temperature, (std::numbers::ln2 + std::log(1.0 - lam)) / inv_temperature};
}

double expected_work_arbitrary(const DensityOperator& rho, const DensityOperator& target, double inv_temperature) {
  const DensityOperator half = DensityOperator::maximally_mixed(rho.dim());
  return (relative_entropy(rho, half) - relative_entropy(rho, target)) / inv_temperature;
}

namespace {

struct Chain {
  double p1 = 0.5, dp = 0.0;
  std::array<double, 2> q{1.0, 0.0};  // dephasing probabilities
  std::vector<double> nu;              // nu[l], l = 1..M; nu[0] unused
};

Chain make_chain(const DensityOperator& rho, const DensityOperator& target, int M, double inv_temperature, double eps) {
  if (M < 1) throw std::invalid_argument("protocol: M must be >= 1");
  if (!(inv_temperature > 0.0)) throw std::invalid_argument("protocol: inverse temperature must be positive");
  if (rho.dim() != 2 || target.dim() != 2) throw DimensionError("protocol: qubit states expected");
  Eigen::SelfAdjointEigenSolver<Mat> es(target.mat());
  // ascending eigenvalues; label the larger one 0
  const double p0 = es.eigenvalues()(1);
  const CVec phi0 = es.eigenvectors().col(1);
  if (p0 > 1.0 - eps) throw ValidationError("protocol: target purity exceeds 1 - eps");
  Chain c;
  c.p1 = 1.0 - p0;
  c.dp = (p0 - 0.5) / M;
  c.q[0] = std::clamp((phi0.adjoint() * rho.mat() * phi0)(0, 0).real(), 0.0, 1.0);
  c.q[1] = 1.0 - c.q[0];
  c.nu.assign(static_cast<std::size_t>(M) + 1, 0.0);
  for (int l = 1; l <= M; ++l) c.nu[static_cast<std::size_t>(l)] = std::log((p0 - l * c.dp) / (c.p1 + l * c.dp)) / inv_temperature;
  return c;
}

}  // namespace

ProtocolResult protocol_monte_carlo(const DensityOperator& rho, const DensityOperator& target, int M, double inv_temperature, std::size_t n_samples,
                                    Rng& rng, const ProtocolOptions& opts) {
  if (n_samples < 2) throw std::invalid_argument("protocol: at least 2 samples required");
  const Chain c = make_chain(rho, target, M, inv_temperature, opts.eps);
  constexpr std::size_t kChunks = 64;
  const std::uint64_t root = rng.next();
  std::vector<double> sum(kChunks, 0.0), sumsq(kChunks, 0.0);
  auto run_chunk = [&](std::size_t ch) {
    Rng r(derive_seed(root, ch));
    const std::size_t lo = n_samples * ch / kChunks, hi = n_samples * (ch + 1) / kChunks;
    double s = 0.0, s2 = 0.0;
    for (std::size_t n = lo; n < hi; ++n) {
      int prev = r.uniform() < c.q[0] ? 0 : 1;
      double w = 0.0;
      for (int l = 1; l <= M; ++l) {
        const int x = r.uniform() < c.p1 + l * c.dp ? 1 : 0;
        if (x != prev) w += (x - prev) * c.nu[static_cast<std::size_t>(l)];
        prev = x;
      }
      s += w;
      s2 += w * w;
    }
    sum[ch] = s;
    sumsq[ch] = s2;
  };
  const int threads = std::max(1, std::min<int>(opts.threads, static_cast<int>(kChunks)));
  if (threads == 1) {
    for (std::size_t ch = 0; ch < kChunks; ++ch) run_chunk(ch);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (std::size_t ch = static_cast<std::size_t>(t); ch < kChunks; ch += static_cast<std::size_t>(threads)) run_chunk(ch);
      });
    for (auto& th : pool) th.join();
  }
  double s = 0.0, s2 = 0.0;
  for (std::size_t ch = 0; ch < kChunks; ++ch) {
    s += sum[ch];
    s2 += sumsq[ch];
  }
  const double n = static_cast<double>(n_samples);
  ProtocolResult r;
  r.mean = s / n;
  r.std = std::sqrt(std::max(0.0, (s2 - n * r.mean * r.mean) / (n - 1.0)));
  r.std_error = r.std / std::sqrt(n);
  r.samples = n_samples;
  r.M = M;
  return r;
}

double protocol_exact_expectation(const DensityOperator& rho, const DensityOperator& target, int M, double inv_temperature, double eps) {
  const Chain c = make_chain(rho, target, M, inv_temperature, eps);
  double tail = 0.0;
  for (int l = 2; l <= M; ++l) tail += c.nu[static_cast<std::size_t>(l)];
  double e = 0.0;
  for (int i = 0; i < 2; ++i) e += c.q[static_cast<std::size_t>(i)] * ((c.p1 + c.dp - i) * c.nu[1] + c.dp * tail);
  return e;
}

double fit_inverse_m(const std::vector<std::pair<int, double>>& m_and_bias) {
  double num = 0.0, den = 0.0;
  for (const auto& [M, b] : m_and_bias) {
    const double x = 1.0 / M;
    num += x * b;
    den += x * x;
  }
  if (den == 0.0) throw std::invalid_argument("fit_inverse_m: no points");
  return num / den;
}

// Capped at 0.25 so a purity grid [eps, 1 - eps] still exists for K < 4.
double eps_for_episodes(int K) { return std::clamp(1.0 / std::max(K, 1), 1e-6, 0.25); }

namespace {

Channel classical_transition(const Eigen::Matrix2d& T) {
  std::vector<Mat> kraus;
  for (int m = 0; m < 2; ++m)
    for (int mp = 0; mp < 2; ++mp) {
      if (T(mp, m) <= 0.0) continue;
      Mat k = Mat::Zero(2, 2);
      k(mp, m) = std::sqrt(T(mp, m));
      kraus.push_back(k);
    }
  return Channel(2, 2, std::move(kraus));
}

// Classical branch maps: the memory is read out in its own basis and kept.
Instrument classical_emission_instrument(const EmissionPlane& plane, double angle) {
  std::vector<Channel> branches;
  for (int o = 0; o < 2; ++o) {
    std::vector<Mat> kraus;
    for (int m = 0; m < 2; ++m) {
      const double ov = plane.overlap(angle, m);
      const double p = std::clamp(o == 0 ? ov : 1.0 - ov, 0.0, 1.0);
      Mat k = Mat::Zero(2, 2);
      k(m, m) = std::sqrt(p);
      kraus.push_back(k);
    }
    branches.emplace_back(2, 2, std::move(kraus));
  }
  return Instrument(std::move(branches));
}

DensityOperator memory_state(const Belief& b) {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = b[0];
  m(1, 1) = b[1];
  return DensityOperator(HermitianOperator(m));
}

QhmmEnvironment make_case_env(const EmissionModel& model, int L, std::shared_ptr<const std::vector<Instrument>> instruments,
                              std::shared_ptr<const RewardTable> rewards, int n_purity, double R) {
  std::vector<Channel> channels(static_cast<std::size_t>(std::max(L - 1, 0)), classical_transition(model.T));
  std::vector<int> action_instrument(static_cast<std::size_t>(rewards->A()));
  for (std::size_t a = 0; a < action_instrument.size(); ++a) action_instrument[a] = static_cast<int>(a) / n_purity;
  return QhmmEnvironment(memory_state(model.initial), std::move(channels), std::move(instruments), std::move(action_instrument), std::move(rewards), R);
}

Belief marginal_at(const EmissionModel& m, int l) {
  Eigen::Vector2d b(m.initial[0], m.initial[1]);
  for (int t = 0; t < l; ++t) b = m.T * b;
  return Belief{{b(0), b(1)}};
}

}  // namespace

CaseStudy::CaseStudy(double theta, const CaseStudyOptions& opts) : opts_(opts), theta_(theta) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw ValidationError("case study: theta must lie in [0, 1]");
  if (opts.L < 1) throw ValidationError("case study: L must be >= 1");
  if (opts.n_angle < 2 || opts.n_purity < 2) throw ValidationError("case study: angle and purity grids need at least 2 points");
  if (!(opts.eps > 0.0 && opts.eps < 0.5)) throw ValidationError("case study: eps must lie in (0, 0.5)");
  if (!(opts.inv_temperature > 0.0)) throw ValidationError("case study: inverse temperature must be positive");
  model_ = EmissionModel{{DensityOperator::from_bloch(opts.bloch1), DensityOperator::from_bloch(opts.bloch2)},
                         EmissionModel::symmetric_transition(theta), opts.initial, opts.inv_temperature};
  model_.validate();

  const EmissionPlane plane(model_.sigmas);
  auto angles = std::make_shared<std::vector<double>>();
  auto instruments = std::make_shared<std::vector<Instrument>>();
  for (double phi : uniform_angles(opts.n_angle)) {
    if (!observation_matrix(WorkAction{phi, 0.5}, model_.sigmas).invertible) continue;
    angles->push_back(phi);
    instruments->push_back(classical_emission_instrument(plane, phi));
  }
  if (angles->empty()) throw ValidationError("case study: every grid angle has a singular observation matrix (emitted states not identifiable)");
  auto purities = std::make_shared<std::vector<double>>();
  for (int j = 0; j < opts.n_purity; ++j) purities->push_back(opts.eps + (1.0 - 2.0 * opts.eps) * j / (opts.n_purity - 1));
  angles_ = angles;
  purities_ = purities;
  instruments_ = instruments;

  const int np = opts.n_purity;
  const int A = static_cast<int>(angles->size()) * np;
  auto rewards = std::make_shared<RewardTable>(opts.L, A, 2);
  for (int a = 0; a < A; ++a) {
    const auto [w0, w1] = work_values(WorkAction{0.0, (*purities)[static_cast<std::size_t>(a % np)]}, opts.inv_temperature);
    for (int l = 0; l < opts.L; ++l) {
      rewards->at(l, a, 0) = w0;
      rewards->at(l, a, 1) = w1;
    }
  }
  rewards_ = rewards;
  const double R = (std::numbers::ln2 + std::log(1.0 / opts.eps)) / opts.inv_temperature;

  env_ = std::make_shared<const QhmmEnvironment>(make_case_env(model_, opts.L, instruments_, rewards_, np, R));

  family_.param_dim = 1;
  family_.bounds = {opts.theta_bounds};
  family_.shared_recovery = std::make_shared<RecoveryCache>(instruments_, RecoveryMethod::Classical);
  family_.instantiate = [base = model_, L = opts.L, inst = instruments_, rew = rewards_, np, R](const Params& p) {
    EmissionModel m = base;
    m.T = EmissionModel::symmetric_transition(p.at(0));
    return make_case_env(m, L, inst, rew, np, R);
  };
  family_.validate();
}

EmissionModel CaseStudy::model_at(double theta) const {
  EmissionModel m = model_;
  m.T = EmissionModel::symmetric_transition(theta);
  return m;
}

WorkAction CaseStudy::action(ActionId a) const {
  if (a < 0 || a >= env_->A()) throw std::out_of_range("case study: action id out of range");
  return WorkAction{(*angles_)[static_cast<std::size_t>(a / n_purity())], (*purities_)[static_cast<std::size_t>(a % n_purity())]};
}

QhmmEnvironment CaseStudy::instantiate(double theta) const { return family_.instantiate({theta}); }

Policy CaseStudy::env_policy(std::shared_ptr<const TablePolicy> table) const {
  const int np = n_purity();
  return Policy{[table = std::move(table), np](int l, const Trajectory& prefix) {
    const std::vector<int> outs = prefix.outcomes();
    return ActionDist{{table->angle_index(l, outs) * np + table->purity_index(l, outs), 1.0}};
  }};
}

namespace {

// Purity index per (step, angle) for the marginal-belief baseline.
std::vector<std::vector<int>> baseline_purities(const CaseStudy& cs, const EmissionModel& truth) {
  const EmissionPlane plane(truth.sigmas);
  std::vector<std::vector<int>> idx;
  for (int l = 0; l < cs.L(); ++l) {
    const Belief b = marginal_at(truth, l);
    std::vector<int> row;
    for (double phi : cs.angles()) row.push_back(nearest_index(cs.purities(), clamp_purity(outcome_probability(b, phi, 0, plane), cs.eps())));
    idx.push_back(row);
  }
  return idx;
}

}  // namespace

Policy CaseStudy::random_policy(const EmissionModel& truth) const {
  const auto idx = baseline_purities(*this, truth);
  const int np = n_purity();
  return Policy{[idx, np](int l, const Trajectory&) {
    const auto& row = idx.at(static_cast<std::size_t>(l));
    ActionDist d;
    const double w = 1.0 / static_cast<double>(row.size());
    for (std::size_t k = 0; k < row.size(); ++k) d.emplace_back(static_cast<int>(k) * np + row[k], w);
    return d;
  }};
}

StochasticWorkPolicy CaseStudy::random_work_policy(const EmissionModel& truth) const {
  const auto idx = baseline_purities(*this, truth);
  return [idx, angles = angles_, purities = purities_](int l, const std::vector<int>&) {
    const auto& row = idx.at(static_cast<std::size_t>(l));
    std::vector<std::pair<WorkAction, double>> d;
    const double w = 1.0 / static_cast<double>(row.size());
    for (std::size_t k = 0; k < row.size(); ++k) d.emplace_back(WorkAction{(*angles)[k], (*purities)[static_cast<std::size_t>(row[k])]}, w);
    return d;
  };
}

CaseStudy build_case_study(double theta, const CaseStudyOptions& opts) { return CaseStudy(theta, opts); }

WorkOmlePlanner::WorkOmlePlanner(const CaseStudy& cs, int grid_points, std::optional<double> true_theta, int n_belief)
    : cs_(cs), true_theta_(true_theta), n_belief_(n_belief) {
  for (const auto& p : parameter_grid(cs.family(), grid_points)) grid_.push_back(p[0]);
}

PlannedPolicy WorkOmlePlanner::plan(const Params& params) {
  const double theta = params.at(0);
  auto it = cache_.find(theta);
  if (it != cache_.end()) return it->second;
  const EmissionModel m = cs_.model_at(theta);
  ValueTable table = backward_value_iteration(m, PlannerSpec{cs_.L(), n_belief_, cs_.angles(), cs_.eps()});
  auto tp = std::make_shared<const TablePolicy>(std::move(table), m, cs_.eps(), cs_.purities());
  PlannedPolicy p;
  p.value = evaluate_policy_exact(m, cs_.L(), tp->as_work_policy());
  p.policy = cs_.env_policy(tp);
  p.key = "theta=" + csv_number(theta);
  p.table = tp;
  return cache_.emplace(theta, p).first->second;
}

double WorkOmlePlanner::optimal_value(const QhmmEnvironment& true_env) {
  std::vector<double> candidates = grid_;
  if (true_theta_) candidates.push_back(*true_theta_);
  best_.reset();
  for (double theta : candidates) {
    PlannedPolicy p = plan({theta});
    p.value = value_of_policy(true_env, p.policy).value;
    if (!best_ || p.value > best_->value) best_ = p;
  }
  return best_->value;
}

double random_baseline_value(const CaseStudy& cs, const EmissionModel& truth) {
  const EmissionPlane plane(truth.sigmas);
  const auto idx = baseline_purities(cs, truth);
  double v = 0.0;
  for (int l = 0; l < cs.L(); ++l) {
    const Belief b = marginal_at(truth, l);
    double s = 0.0;
    for (std::size_t k = 0; k < cs.angles().size(); ++k) {
      const double p = outcome_probability(b, cs.angles()[k], 0, plane);
      const double lam = cs.purities()[static_cast<std::size_t>(idx[static_cast<std::size_t>(l)][k])];
      s += std::numbers::ln2 + p * std::log(lam) + (1.0 - p) * std::log(1.0 - lam);
    }
    v += s / static_cast<double>(cs.angles().size());
  }
  return v / truth.inv_temperature;
}

namespace {

struct EntropyWalker {
  const EmissionModel& truth;
  EmissionPlane plane;
  int L;
  const WorkPolicy& policy;
  std::size_t max_paths;
  std::size_t leaves = 0;

  double walk(int l, const Belief& b, std::vector<int>& outcomes) {
    const WorkAction a = policy(l, outcomes);
    const DensityOperator xi = expected_state(b, truth.sigmas);
    const Mat P = plane.projector(a.basis_angle);
    if (l == L - 1) {
      if (++leaves > max_paths) throw EnumerationGuardExceeded("entropy_form_loss: path guard exceeded");
      return von_neumann_entropy(xi) + relative_entropy(xi, tailored_state(plane, a));
    }
    const double p = std::clamp((P * xi.mat()).trace().real(), 0.0, 1.0);
    double total = binary_entropy(p) + binary_relative_entropy(p, a.purity);
    const std::array<Mat, 2> proj{P, Mat::Identity(2, 2) - P};
    for (int o = 0; o < 2; ++o) {
      const double po = o == 0 ? p : 1.0 - p;
      if (po < 1e-15) continue;
      // Born-rule posterior on the emitting state, then one memory step.
      Eigen::Vector2d post;
      for (int m = 0; m < 2; ++m) post(m) = b[m] * (proj[static_cast<std::size_t>(o)] * truth.sigmas[static_cast<std::size_t>(m)].mat()).trace().real();
      post /= post.sum();
      const Eigen::Vector2d next = truth.T * post;
      outcomes.push_back(o);
      total += po * walk(l + 1, Belief{{next(0), next(1)}}, outcomes);
      outcomes.pop_back();
    }
    return total;
  }
};

}  // namespace

double entropy_form_loss(const EmissionModel& truth, int L, const WorkPolicy& policy, const EnumerationOptions& opts) {
  if (L <= 0) return 0.0;
  EntropyWalker w{truth, EmissionPlane(truth.sigmas), L, policy, opts.max_paths};
  std::vector<int> outcomes;
  return w.walk(0, truth.initial, outcomes) / truth.inv_temperature;
}

DissipationSeries dissipation_series(const OmleRun& run, const EmissionModel& truth, int L, double random_gap) {
  if (!run.optimal || !run.optimal->table) throw std::invalid_argument("dissipation_series: run has no tabulated optimal policy");
  const double loss_star = entropy_form_loss(truth, L, run.optimal->table->as_work_policy());
  std::map<std::string, double> loss;
  DissipationSeries s;
  double value = 0.0, entropy = 0.0;
  for (const auto& log : run.logs) {
    if (!log.policy.table) throw std::invalid_argument("dissipation_series: episode policy has no table");
    auto it = loss.find(log.policy.key);
    if (it == loss.end()) it = loss.emplace(log.policy.key, entropy_form_loss(truth, L, log.policy.table->as_work_policy())).first;
    value += run.v_star - log.policy_value_true_env;
    entropy += it->second - loss_star;
    DissipationRow row{log.episode, value, entropy, log.episode * random_gap};
    s.max_identity_gap = std::max(s.max_identity_gap, std::abs(value - entropy));
    s.rows.push_back(row);
  }
  return s;
}

void write_dissipation_csv(std::ostream& out, const DissipationSeries& s) {
  CsvWriter w(out);
  w.header({"episode", "cum_dissipation_value_form", "cum_dissipation_entropy_form", "cum_dissipation_random_baseline"});
  for (const auto& r : s.rows) w.row({static_cast<long long>(r.episode), r.value_form, r.entropy_form, r.random_baseline});
}

LearningResult run_case_study_learning(const LearningSetup& setup) {
  CaseStudyOptions co = setup.case_study;
  co.eps = eps_for_episodes(setup.K);
  const CaseStudy cs(setup.theta, co);
  WorkOmlePlanner planner(cs, setup.grid_points, setup.theta, setup.n_belief);
  OmleOptions opts;
  opts.K = setup.K;
  opts.delta = setup.delta;
  opts.c = setup.c;
  opts.seed = setup.seed;
  opts.mle.grid_points = setup.grid_points;
  opts.true_params = Params{setup.theta};
  LearningResult r;
  r.run = run_omle(cs.family(), *cs.env(), opts, planner);
  r.random_value = random_baseline_value(cs, cs.model());
  r.random_gap = r.run.v_star - r.random_value;
  r.series = dissipation_series(r.run, cs.model(), cs.L(), r.random_gap);
  return r;
}

}  // namespace qhmm
