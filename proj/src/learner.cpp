#include "qhmm/learner.hpp"

#include "qhmm/csv.hpp"

#include <cmath>
#include <limits>

namespace qhmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string params_label(const Params& p) {
  std::string s;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) s += ' ';
    s += csv_number(p[i]);
  }
  return s;
}

}  // namespace

bool ModelFamily::in_bounds(const Params& p) const {
  if (static_cast<int>(p.size()) != param_dim) return false;
  for (int i = 0; i < param_dim; ++i) {
    const auto& [lo, hi] = bounds[static_cast<std::size_t>(i)];
    if (p[static_cast<std::size_t>(i)] < lo || p[static_cast<std::size_t>(i)] > hi) return false;
  }
  return true;
}

void ModelFamily::validate() const {
  if (param_dim < 1 || param_dim > 3) throw ValidationError("model family must have 1 to 3 parameters");
  if (static_cast<int>(bounds.size()) != param_dim) throw ValidationError("one bound per parameter expected");
  for (const auto& [lo, hi] : bounds)
    if (!(lo <= hi)) throw ValidationError("empty parameter interval");
  if (!instantiate) throw ValidationError("model family has no instantiate function");
  const int corners = 1 << param_dim;
  for (int c = 0; c < corners; ++c) {
    Params p;
    for (int i = 0; i < param_dim; ++i) p.push_back((c >> i) & 1 ? bounds[static_cast<std::size_t>(i)].second : bounds[static_cast<std::size_t>(i)].first);
    OomModel oom = oom_at(p);
    if (auto f = oom.undercomplete_failure()) throw NotUndercompleteError(f->action, f->residual);
  }
}

OomModel ModelFamily::oom_at(const Params& p) const {
  return OomModel(std::make_shared<const QhmmEnvironment>(instantiate(p)), shared_recovery);
}

std::vector<int> Dataset::key_of(const Trajectory& t) {
  std::vector<int> k;
  k.reserve(2 * t.size());
  for (const auto& s : t.steps) {
    k.push_back(s.action);
    k.push_back(s.outcome);
  }
  return k;
}

void Dataset::add(std::string policy, Trajectory traj) {
  ++hist_[key_of(traj)];
  episodes_.push_back(Episode{std::move(policy), std::move(traj)});
}

double key_probability(const OomModel& oom, const std::vector<int>& key) {
  std::vector<ActionId> a;
  std::vector<int> o;
  for (std::size_t i = 0; i + 1 < key.size(); i += 2) {
    a.push_back(key[i]);
    o.push_back(key[i + 1]);
  }
  return oom_trajectory_prob(oom, a, o);
}

double log_likelihood(const OomModel& oom, const Dataset& data) {
  double ll = 0.0;
  for (const auto& [key, count] : data.histogram()) ll += static_cast<double>(count) * std::log(std::max(key_probability(oom, key), kProbFloor));
  return ll;
}

double log_likelihood(const ModelFamily& family, const Params& params, const Dataset& data) {
  if (!family.in_bounds(params)) throw std::out_of_range("log_likelihood: parameters out of bounds");
  if (data.empty()) return 0.0;
  try {
    return log_likelihood(family.oom_at(params), data);
  } catch (const NotUndercompleteError&) {
    return kNegInf;
  }
}

std::vector<Params> parameter_grid(const ModelFamily& family, int points_per_dim) {
  if (points_per_dim < 1) throw ValidationError("grid needs at least one point per dimension");
  if (family.param_dim > 3) throw ValidationError("grid search is capped at 3 dimensions");
  std::vector<std::vector<double>> axes;
  for (const auto& [lo, hi] : family.bounds) {
    std::vector<double> ax;
    if (points_per_dim == 1) {
      ax.push_back(0.5 * (lo + hi));
    } else {
      for (int i = 0; i < points_per_dim; ++i) ax.push_back(lo + (hi - lo) * i / (points_per_dim - 1));
    }
    axes.push_back(ax);
  }
  std::vector<Params> grid{{}};
  for (const auto& ax : axes) {
    std::vector<Params> next;
    for (const auto& g : grid)
      for (double x : ax) {
        Params p = g;
        p.push_back(x);
        next.push_back(p);
      }
    grid = std::move(next);
  }
  return grid;
}

namespace {

std::size_t argmax_first(const std::vector<double>& v) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[arg]) arg = i;
  return arg;
}

MleResult refine_from(const ModelFamily& family, const Dataset& data, const std::vector<Params>& grid, const std::vector<double>& grid_ll,
                      const MleOptions& opts) {
  MleResult r;
  r.grid_argmax = argmax_first(grid_ll);
  r.params = grid[r.grid_argmax];
  r.log_likelihood = grid_ll[r.grid_argmax];
  if (!opts.refine || opts.grid_points < 2 || !std::isfinite(r.log_likelihood)) return r;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int d = 0; d < family.param_dim; ++d) {
    const auto& [lo, hi] = family.bounds[static_cast<std::size_t>(d)];
    const double h = (hi - lo) / (opts.grid_points - 1);
    double a = std::max(lo, r.params[static_cast<std::size_t>(d)] - h);
    double b = std::min(hi, r.params[static_cast<std::size_t>(d)] + h);
    auto f = [&](double x) {
      Params p = r.params;
      p[static_cast<std::size_t>(d)] = x;
      return log_likelihood(family, p, data);
    };
    double x1 = b - g * (b - a), x2 = a + g * (b - a);
    double f1 = f(x1), f2 = f(x2);
    while (b - a > opts.refine_tol) {
      if (f1 >= f2) {
        b = x2;
        x2 = x1;
        f2 = f1;
        x1 = b - g * (b - a);
        f1 = f(x1);
      } else {
        a = x1;
        x1 = x2;
        f1 = f2;
        x2 = a + g * (b - a);
        f2 = f(x2);
      }
    }
    const double xm = 0.5 * (a + b);
    const double fm = f(xm);
    if (fm > r.log_likelihood) {
      r.params[static_cast<std::size_t>(d)] = xm;
      r.log_likelihood = fm;
    }
  }
  return r;
}

}  // namespace

MleResult mle_fit(const ModelFamily& family, const Dataset& data, const MleOptions& opts) {
  if (data.empty()) throw std::invalid_argument("mle_fit: empty dataset");
  const auto grid = parameter_grid(family, opts.grid_points);
  std::vector<double> ll;
  bool any = false;
  for (const auto& p : grid) {
    ll.push_back(log_likelihood(family, p, data));
    any = any || std::isfinite(ll.back());
  }
  if (!any) throw std::runtime_error("mle_fit: no grid point is undercomplete; the family is invalid");
  return refine_from(family, data, grid, ll, opts);
}

double conf_radius(int K, double delta, const EnvDims& d, double c) {
  if (K < 1) throw std::invalid_argument("conf_radius: K must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("conf_radius: delta must lie in (0, 1)");
  const double S4 = std::pow(static_cast<double>(d.S), 4);
  const double inner = static_cast<double>(K) * d.S * d.A * d.O * d.L;
  return c * ((d.L + static_cast<double>(d.A) * d.O) * S4 * std::log(inner) + std::log(K / delta));
}

ConfidenceSet build_confidence_set(const std::vector<Params>& grid, const std::vector<double>& grid_ll, const Params& center, double center_ll,
                                   double radius) {
  ConfidenceSet s;
  s.center = center;
  s.center_ll = center_ll;
  s.radius = radius;
  const std::size_t arg = argmax_first(grid_ll);
  const double top = std::max(grid_ll[arg], center_ll);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid_ll[i] >= top - radius || i == arg) {
      s.members.push_back(grid[i]);
      s.member_ll.push_back(grid_ll[i]);
    }
  }
  return s;
}

ExhaustivePlanner::ExhaustivePlanner(ModelFamily family, std::size_t max_policies) : family_(std::move(family)), max_policies_(max_policies) {}

PlannedPolicy ExhaustivePlanner::best_policy(const QhmmEnvironment& env, std::size_t max_policies) {
  const int L = env.L(), A = env.A(), O = env.O();
  std::vector<std::size_t> offset;  // slot offset of each step
  std::size_t slots = 0;
  std::size_t hist = 1;
  for (int l = 0; l < L; ++l) {
    offset.push_back(slots);
    slots += hist;
    hist *= static_cast<std::size_t>(O);
  }
  double count = std::pow(static_cast<double>(A), static_cast<double>(slots));
  if (count > static_cast<double>(max_policies)) throw std::runtime_error("ExhaustivePlanner: too many deterministic policies");
  const auto n = static_cast<std::size_t>(count);
  auto make = [offset, O](std::vector<int> table) {
    return Policy{[offset, O, table](int l, const Trajectory& prefix) {
      std::size_t h = 0;
      for (const auto& s : prefix.steps) h = h * static_cast<std::size_t>(O) + static_cast<std::size_t>(s.outcome);
      return ActionDist{{table[offset[static_cast<std::size_t>(l)] + h], 1.0}};
    }};
  };
  PlannedPolicy best;
  best.value = kNegInf;
  std::vector<int> table(slots, 0);
  for (std::size_t idx = 0; idx < n; ++idx) {
    std::size_t x = idx;
    for (std::size_t s = slots; s-- > 0;) {
      table[s] = static_cast<int>(x % static_cast<std::size_t>(A));
      x /= static_cast<std::size_t>(A);
    }
    Policy p = make(table);
    const double v = value_of_policy(env, p).value;
    if (v > best.value) {
      best.value = v;
      best.policy = p;
      best.key = "exh:" + std::to_string(idx);
    }
  }
  return best;
}

PlannedPolicy ExhaustivePlanner::plan(const Params& params) {
  auto it = cache_.find(params);
  if (it != cache_.end()) return it->second;
  PlannedPolicy p = best_policy(family_.instantiate(params), max_policies_);
  p.key = params_label(params) + "/" + p.key;
  return cache_.emplace(params, p).first->second;
}

double ExhaustivePlanner::optimal_value(const QhmmEnvironment& true_env) {
  best_true_ = best_policy(true_env, max_policies_);
  return best_true_->value;
}

OptimisticChoice optimistic_plan(const ConfidenceSet& set, OmlePlanner& planner) {
  if (set.members.empty()) throw std::invalid_argument("optimistic_plan: empty confidence set");
  std::optional<OptimisticChoice> best;
  for (const auto& m : set.members) {
    PlannedPolicy p = planner.plan(m);
    if (!best || p.value > best->planned.value) best = OptimisticChoice{m, std::move(p)};
  }
  return *best;
}

OmleRun run_omle(const ModelFamily& family, const QhmmEnvironment& true_env, const OmleOptions& opts, OmlePlanner& planner) {
  if (opts.K < 1) throw std::invalid_argument("run_omle: K must be >= 1");
  OmleRun run;
  if (!opts.true_params) {
    run.warnings.push_back("true parameters not supplied; regret is measured against the true environment only");
  } else if (!family.in_bounds(*opts.true_params)) {
    run.warnings.push_back("true parameters lie outside the family bounds (misspecified)");
  }
  const auto grid = parameter_grid(family, opts.mle.grid_points);
  std::vector<OomModel> grid_oom;
  grid_oom.reserve(grid.size());
  for (const auto& p : grid) grid_oom.push_back(family.oom_at(p));
  std::optional<OomModel> truth_oom;
  if (opts.true_params && family.in_bounds(*opts.true_params)) truth_oom.emplace(family.oom_at(*opts.true_params));

  std::vector<double> grid_ll(grid.size(), 0.0);
  double truth_ll = 0.0;
  const double beta = conf_radius(opts.K, opts.delta, EnvDims::of(true_env), opts.c);
  run.v_star = planner.optimal_value(true_env);
  run.optimal = planner.optimal_policy();

  Dataset data;
  std::map<std::string, double> true_values;
  double cum = 0.0;
  for (int k = 1; k <= opts.K; ++k) {
    ConfidenceSet set;
    if (data.empty()) {
      set.radius = beta;
      set.members = grid;
      set.member_ll = grid_ll;
    } else {
      MleResult mle = refine_from(family, data, grid, grid_ll, opts.mle);
      set = build_confidence_set(grid, grid_ll, mle.params, mle.log_likelihood, beta);
    }
    OptimisticChoice choice = optimistic_plan(set, planner);
    Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(k)));
    Trajectory traj = simulate_episode(true_env, choice.planned.policy, rng);

    EpisodeLog log;
    log.episode = k;
    log.theta_hat = set.center;
    log.chosen = choice.params;
    log.conf_radius = beta;
    log.chosen_value = choice.planned.value;
    for (const auto& s : traj.steps) log.realized_reward += s.reward;
    auto it = true_values.find(choice.planned.key);
    if (it == true_values.end()) it = true_values.emplace(choice.planned.key, value_of_policy(true_env, choice.planned.policy).value).first;
    log.policy_value_true_env = it->second;
    log.inst_regret = run.v_star - log.policy_value_true_env;
    cum += log.inst_regret;
    log.cum_regret = cum;
    log.members = set.members.size();
    if (truth_oom) {
      double top = *std::max_element(grid_ll.begin(), grid_ll.end());
      if (!data.empty()) top = std::max(top, set.center_ll);
      log.truth_in_set = truth_ll >= top - beta;
    }
    log.policy = choice.planned;
    log.trajectory = traj;

    const std::vector<int> key = Dataset::key_of(traj);
    for (std::size_t g = 0; g < grid.size(); ++g) grid_ll[g] += std::log(std::max(key_probability(grid_oom[g], key), kProbFloor));
    if (truth_oom) truth_ll += std::log(std::max(key_probability(*truth_oom, key), kProbFloor));
    data.add(choice.planned.key, std::move(traj));
    run.logs.push_back(std::move(log));
  }
  return run;
}

std::vector<double> regret_report(const std::vector<EpisodeLog>& logs, double true_optimal_value) {
  if (logs.empty()) throw std::invalid_argument("regret_report: no episodes");
  std::vector<double> out;
  double c = 0.0;
  for (const auto& l : logs) {
    c += true_optimal_value - l.policy_value_true_env;
    out.push_back(c);
  }
  return out;
}

void write_episode_log_csv(std::ostream& out, const std::vector<EpisodeLog>& logs) {
  CsvWriter w(out);
  w.header({"episode", "theta_hat", "conf_radius", "chosen_value", "realized_reward", "policy_value_true_env", "inst_regret", "cum_regret"});
  for (const auto& l : logs) {
    CsvCell theta = l.theta_hat.size() == 1 ? CsvCell{l.theta_hat[0]} : CsvCell{params_label(l.theta_hat)};
    w.row({static_cast<long long>(l.episode), theta, l.conf_radius, l.chosen_value, l.realized_reward, l.policy_value_true_env, l.inst_regret,
           l.cum_regret});
  }
}

}  // namespace qhmm
