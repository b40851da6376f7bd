#include "qhmm/env.hpp"

#include <cmath>

namespace qhmm {

namespace {

constexpr double kPhantomBranch = 1e-15;
constexpr double kDegenerateTrace = 1e-300;

double branch_trace(const Instrument& ins, int o, const Mat& rho) { return ins.branch(o).apply(rho).trace().real(); }

std::vector<double> outcome_probs(const Instrument& ins, const Mat& rho) {
  const double tr = rho.trace().real();
  if (!(tr > kDegenerateTrace)) throw DegenerateTrajectory("filter has zero trace");
  std::vector<double> p(static_cast<std::size_t>(ins.outcomes()));
  for (int o = 0; o < ins.outcomes(); ++o) p[static_cast<std::size_t>(o)] = std::max(0.0, branch_trace(ins, o, rho)) / tr;
  return p;
}

// Filter update E_l(Phi_o(X)); no channel after the final step.
Mat advance(const QhmmEnvironment& env, int l, const Instrument& ins, int o, const Mat& rho) {
  Mat post = ins.branch(o).apply(rho);
  if (l + 1 < env.L()) post = env.channel(l).apply(post);
  return post;
}

double dist_total(const ActionDist& d) {
  double s = 0.0;
  for (const auto& [a, w] : d) s += w;
  return s;
}

void check_dist(const ActionDist& d, int A) {
  for (const auto& [a, w] : d) {
    if (a < 0 || a >= A) throw std::out_of_range("policy returned an unknown action id");
    if (w < 0.0) throw std::invalid_argument("policy returned a negative probability");
  }
  if (std::abs(dist_total(d) - 1.0) > 1e-12) throw std::invalid_argument("policy distribution does not sum to 1");
}

double prob_of(const ActionDist& d, ActionId a) {
  double p = 0.0;
  for (const auto& [b, w] : d)
    if (b == a) p += w;
  return p;
}

}  // namespace

RewardTable::RewardTable(int L, int A, int O, double fill) : L_(L), A_(A), O_(O) {
  if (L < 1 || A < 1 || O < 1) throw DimensionError("RewardTable: dimensions must be positive");
  v_.assign(static_cast<std::size_t>(L) * static_cast<std::size_t>(A) * static_cast<std::size_t>(O), fill);
}

RewardTable RewardTable::from_function(int L, int A, int O, const std::function<double(int, ActionId, int)>& f) {
  RewardTable t(L, A, O);
  for (int l = 0; l < L; ++l)
    for (int a = 0; a < A; ++a)
      for (int o = 0; o < O; ++o) t.at(l, a, o) = f(l, a, o);
  return t;
}

double RewardTable::max_abs() const {
  double m = 0.0;
  for (double x : v_) m = std::max(m, std::abs(x));
  return m;
}

std::vector<int> Trajectory::outcomes() const {
  std::vector<int> o;
  o.reserve(steps.size());
  for (const auto& s : steps) o.push_back(s.outcome);
  return o;
}

Policy Policy::fixed(ActionId a) {
  return Policy{[a](int, const Trajectory&) { return ActionDist{{a, 1.0}}; }};
}

Policy Policy::uniform(int num_actions) {
  ActionDist d;
  for (int a = 0; a < num_actions; ++a) d.emplace_back(a, 1.0 / num_actions);
  return Policy{[d](int, const Trajectory&) { return d; }};
}

Policy Policy::open_loop(std::vector<ActionId> actions) {
  return Policy{[actions](int l, const Trajectory&) { return ActionDist{{actions.at(static_cast<std::size_t>(l)), 1.0}}; }};
}

QhmmEnvironment::QhmmEnvironment(DensityOperator rho1, std::vector<Channel> channels, std::shared_ptr<const std::vector<Instrument>> instruments,
                                 std::vector<int> action_instrument, std::shared_ptr<const RewardTable> reward, double reward_bound,
                                 std::vector<std::string> labels)
    : rho1_(std::move(rho1)),
      channels_(std::move(channels)),
      instruments_(std::move(instruments)),
      action_instrument_(std::move(action_instrument)),
      reward_(std::move(reward)),
      R_(reward_bound),
      labels_(std::move(labels)) {
  const int S = rho1_.dim();
  if (!instruments_ || instruments_->empty()) throw ValidationError("environment needs at least one instrument");
  if (action_instrument_.empty()) throw ValidationError("environment needs at least one action");
  O_ = instruments_->front().outcomes();
  for (const auto& ch : channels_) {
    if (ch.dim_in() != S || ch.dim_out() != S) throw DimensionError("memory channel must map S -> S");
    if (!ch.trace_preserving()) throw ValidationError("memory channel is not trace preserving");
  }
  for (const auto& ins : *instruments_) {
    if (ins.dim_in() != S || ins.dim_out() != S) throw DimensionError("instrument branches must map S -> S");
    if (ins.outcomes() != O_) throw DimensionError("all instruments must share the outcome count");
  }
  for (int idx : action_instrument_)
    if (idx < 0 || idx >= static_cast<int>(instruments_->size())) throw std::out_of_range("action refers to a missing instrument");
  if (!reward_) throw ValidationError("missing reward table");
  if (reward_->L() != L() || reward_->A() != A() || reward_->O() != O_) throw DimensionError("reward table shape does not match (L, A, O)");
  if (reward_->max_abs() > R_ * (1.0 + 1e-12) + 1e-15) throw ValidationError("reward exceeds the declared bound R");
  if (labels_.empty()) {
    for (int a = 0; a < A(); ++a) labels_.push_back("a" + std::to_string(a));
  } else if (static_cast<int>(labels_.size()) != A()) {
    throw DimensionError("one label per action expected");
  }
}

namespace {
std::vector<int> iota_vec(std::size_t n) {
  std::vector<int> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<int>(i);
  return v;
}
}  // namespace

QhmmEnvironment::QhmmEnvironment(DensityOperator rho1, std::vector<Channel> channels, const std::vector<Instrument>& instruments,
                                 const RewardTable& reward, double reward_bound, std::vector<std::string> labels)
    : QhmmEnvironment(std::move(rho1), std::move(channels), std::make_shared<const std::vector<Instrument>>(instruments),
                      iota_vec(instruments.size()), std::make_shared<const RewardTable>(reward), reward_bound, std::move(labels)) {}

FilterState initial_filter(const QhmmEnvironment& env) { return FilterState{env.rho1().op(), 0}; }

std::vector<double> conditional_outcome_prob(const QhmmEnvironment& env, const FilterState& filter, ActionId a) {
  return outcome_probs(env.instrument(a), filter.tilde_rho.mat());
}

StepResult step(const QhmmEnvironment& env, const FilterState& filter, ActionId a, Rng& rng) {
  if (filter.step >= env.L()) throw EpisodeFinished("episode already has L steps");
  const Instrument& ins = env.instrument(a);
  std::vector<double> p = outcome_probs(ins, filter.tilde_rho.mat());
  for (double& x : p)
    if (x < kPhantomBranch) x = 0.0;
  const int o = sample_index(p, rng);
  StepResult r;
  r.outcome = o;
  r.reward = env.reward(filter.step, a, o);
  r.next = FilterState{HermitianOperator(advance(env, filter.step, ins, o, filter.tilde_rho.mat())), filter.step + 1};
  return r;
}

Trajectory simulate_episode(const QhmmEnvironment& env, const Policy& policy, Rng& rng) {
  Trajectory traj;
  FilterState f = initial_filter(env);
  for (int l = 0; l < env.L(); ++l) {
    ActionDist d = policy.choose(l, traj);
    check_dist(d, env.A());
    std::vector<double> w;
    for (const auto& kv : d) w.push_back(kv.second);
    const ActionId a = d[static_cast<std::size_t>(sample_index(w, rng))].first;
    StepResult r = step(env, f, a, rng);
    traj.steps.push_back(Step{a, r.outcome, r.reward});
    f = std::move(r.next);
  }
  return traj;
}

double trajectory_likelihood(const QhmmEnvironment& env, const Trajectory& traj) {
  if (static_cast<int>(traj.size()) > env.L()) throw std::invalid_argument("trajectory longer than the horizon");
  Mat rho = env.rho1().mat();
  for (std::size_t l = 0; l < traj.size(); ++l) {
    const auto& s = traj.steps[l];
    if (s.outcome < 0 || s.outcome >= env.O()) throw std::out_of_range("outcome out of range");
    rho = advance(env, static_cast<int>(l), env.instrument(s.action), s.outcome, rho);
    if (rho.trace().real() <= 0.0) return 0.0;
  }
  return std::max(0.0, rho.trace().real());
}

double trajectory_prob(const QhmmEnvironment& env, const Policy& policy, const Trajectory& traj) {
  double pi = 1.0;
  Trajectory prefix;
  for (std::size_t l = 0; l < traj.size(); ++l) {
    pi *= prob_of(policy.choose(static_cast<int>(l), prefix), traj.steps[l].action);
    if (pi == 0.0) return 0.0;
    prefix.steps.push_back(traj.steps[l]);
  }
  return pi * trajectory_likelihood(env, traj);
}

Instrument instrument_from_sequential_emission(const Channel& emission, int dim_out, const Povm& povm) {
  const int S = emission.dim_in();
  if (emission.dim_out() != S * dim_out) throw DimensionError("emission must map S -> S (x) S_out");
  if (povm.dim() != dim_out) throw DimensionError("POVM must act on the emitted register");
  if (!emission.trace_preserving()) throw ValidationError("emission channel is not trace preserving");
  std::vector<Channel> branches;
  for (const auto& m : povm.effects()) {
    Eigen::SelfAdjointEigenSolver<Mat> es(m.mat());
    Mat root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().cast<cd>().asDiagonal() * es.eigenvectors().adjoint();
    Mat lift = kron(Mat::Identity(S, S), root);
    std::vector<Mat> kraus;
    for (const auto& k : emission.kraus()) {
      Mat k2 = lift * k;  // (S*dim_out) x S
      for (int j = 0; j < dim_out; ++j) {
        // (I (x) <j|) k2
        Mat kj(S, S);
        for (int s = 0; s < S; ++s) kj.row(s) = k2.row(s * dim_out + j);
        kraus.push_back(kj);
      }
    }
    branches.emplace_back(S, S, std::move(kraus));
  }
  return Instrument(std::move(branches));
}

QhmmEnvironment from_sequential_emission(const DensityOperator& rho1, const std::vector<Channel>& memory_channels,
                                         const std::vector<Channel>& emissions, const std::vector<Povm>& povms, RewardTable reward,
                                         double reward_bound) {
  if (emissions.size() != povms.size()) throw DimensionError("one POVM per emission channel expected");
  std::vector<Instrument> ins;
  for (std::size_t a = 0; a < emissions.size(); ++a) {
    const int S = emissions[a].dim_in();
    ins.push_back(instrument_from_sequential_emission(emissions[a], emissions[a].dim_out() / S, povms[a]));
  }
  return QhmmEnvironment(rho1, memory_channels, std::move(ins), std::move(reward), reward_bound);
}

namespace {

struct Enumerator {
  const QhmmEnvironment& env;
  const Policy& policy;
  std::size_t max_paths;
  std::size_t paths = 0;
  double value = 0.0;

  void run(int l, const Mat& rho, double weight, double acc, Trajectory& prefix) {
    if (l == env.L()) {
      if (++paths > max_paths) throw EnumerationGuardExceeded("value_of_policy: more than max_paths trajectories");
      value += weight * acc;
      return;
    }
    const ActionDist d = policy.choose(l, prefix);
    check_dist(d, env.A());
    const double tr = rho.trace().real();
    for (const auto& [a, pa] : d) {
      if (pa <= 0.0) continue;
      const Instrument& ins = env.instrument(a);
      for (int o = 0; o < env.O(); ++o) {
        Mat post = ins.branch(o).apply(rho);
        const double po = post.trace().real() / tr;
        if (po < kPhantomBranch) continue;
        if (l + 1 < env.L()) post = env.channel(l).apply(post);
        const double r = env.reward(l, a, o);
        prefix.steps.push_back(Step{a, o, r});
        run(l + 1, post, weight * pa * po, acc + r, prefix);
        prefix.steps.pop_back();
      }
    }
  }
};

}  // namespace

ValueEstimate value_of_policy(const QhmmEnvironment& env, const Policy& policy, const ValueOptions& opts) {
  Enumerator e{env, policy, opts.max_paths};
  Trajectory prefix;
  try {
    e.run(0, env.rho1().mat(), 1.0, 0.0, prefix);
    return ValueEstimate{e.value, 0.0, true, e.paths};
  } catch (const EnumerationGuardExceeded&) {
    if (!opts.allow_monte_carlo) throw;
  }
  Rng rng(opts.seed);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < opts.mc_samples; ++i) {
    Trajectory t = simulate_episode(env, policy, rng);
    double g = 0.0;
    for (const auto& s : t.steps) g += s.reward;
    sum += g;
    sum2 += g * g;
  }
  const double n = static_cast<double>(opts.mc_samples);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum2 - n * mean * mean) / (n - 1.0));
  return ValueEstimate{mean, std::sqrt(var / n), false, opts.mc_samples};
}

QhmmEnvironment random_environment(int S, int O, int A, int L, Rng& rng, bool generic) {
  if (S < 1 || O < 1 || A < 1 || L < 1) throw DimensionError("random_environment: dimensions must be positive");
  std::vector<Instrument> instruments;
  for (int a = 0; a < A; ++a) {
    if (generic && O >= S * S) {
      const Channel big = random_channel(S, S * O, 1 + static_cast<int>(rng.index(2)), rng);
      std::vector<Channel> branches;
      for (int o = 0; o < O; ++o) {
        std::vector<Mat> kraus;
        for (const Mat& k : big.kraus()) {
          Mat ko(S, S);
          for (int s = 0; s < S; ++s) ko.row(s) = k.row(s * O + o);
          kraus.push_back(ko);
        }
        branches.emplace_back(S, S, std::move(kraus));
      }
      instruments.emplace_back(std::move(branches));
    } else {
      const Povm povm = random_povm(S, O, rng);
      std::vector<DensityOperator> posts;
      for (int o = 0; o < O; ++o) posts.push_back(random_density(S, rng));
      instruments.push_back(Instrument::measure_prepare(povm, posts));
    }
  }
  std::vector<Channel> channels;
  for (int l = 0; l + 1 < L; ++l) channels.push_back(random_channel(S, S, 1 + static_cast<int>(rng.index(3)), rng));
  RewardTable reward(L, A, O);
  for (int l = 0; l < L; ++l)
    for (int a = 0; a < A; ++a)
      for (int o = 0; o < O; ++o) reward.at(l, a, o) = 2.0 * rng.uniform() - 1.0;
  return QhmmEnvironment(random_density(S, rng), std::move(channels), instruments, reward, 1.0);
}

}  // namespace qhmm
