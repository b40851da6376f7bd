#include "cli.hpp"

#include "qhmm/csv.hpp"
#include "qhmm/env_json.hpp"
#include "qhmm/hardness.hpp"
#include "qhmm/workx.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numbers>
#include <thread>

namespace qhmm::cli {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- config ---------------------------------------------------------------

ConfigReader::ConfigReader(const json& j, std::string command) : j_(j), cmd_(std::move(command)) {
  if (!j_.is_object()) throw ConfigError(cmd_ + ": config must be a JSON object");
}

const json* ConfigReader::find(const std::string& key) {
  seen_.insert(key);
  auto it = j_.find(key);
  return it == j_.end() ? nullptr : &*it;
}

void ConfigReader::fail(const std::string& key, const std::string& what) const { throw ConfigError(cmd_ + ": config key '" + key + "' " + what); }

double ConfigReader::number(const std::string& key, double def, double lo, double hi) {
  double v = def;
  if (const json* x = find(key)) {
    if (!x->is_number()) fail(key, "must be a number");
    v = x->get<double>();
  }
  if (!(v >= lo && v <= hi)) fail(key, "must lie in [" + csv_number(lo) + ", " + csv_number(hi) + "], got " + csv_number(v));
  eff_[key] = v;
  return v;
}

long long ConfigReader::integer(const std::string& key, long long def, long long lo, long long hi) {
  long long v = def;
  if (const json* x = find(key)) {
    if (!x->is_number_integer()) fail(key, "must be an integer");
    v = x->get<long long>();
  }
  if (v < lo || v > hi) fail(key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " + std::to_string(v));
  eff_[key] = v;
  return v;
}

std::vector<long long> ConfigReader::integers(const std::string& key, const std::vector<long long>& def, long long lo, long long hi) {
  std::vector<long long> v = def;
  if (const json* x = find(key)) {
    v.clear();
    if (x->is_number_integer()) {
      v.push_back(x->get<long long>());
    } else if (x->is_array()) {
      for (const auto& e : *x) {
        if (!e.is_number_integer()) fail(key, "must be a list of integers");
        v.push_back(e.get<long long>());
      }
    } else {
      fail(key, "must be an integer or a list of integers");
    }
  }
  if (v.empty()) fail(key, "must not be empty");
  for (long long e : v)
    if (e < lo || e > hi) fail(key, "entries must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " + std::to_string(e));
  eff_[key] = v;
  return v;
}

std::vector<double> ConfigReader::numbers(const std::string& key, const std::vector<double>& def, double lo, double hi) {
  std::vector<double> v = def;
  if (const json* x = find(key)) {
    v.clear();
    if (x->is_number()) {
      v.push_back(x->get<double>());
    } else if (x->is_array()) {
      for (const auto& e : *x) {
        if (!e.is_number()) fail(key, "must be a list of numbers");
        v.push_back(e.get<double>());
      }
    } else {
      fail(key, "must be a number or a list of numbers");
    }
  }
  if (v.empty()) fail(key, "must not be empty");
  for (double e : v)
    if (!(e >= lo && e <= hi)) fail(key, "entries must lie in [" + csv_number(lo) + ", " + csv_number(hi) + "], got " + csv_number(e));
  eff_[key] = v;
  return v;
}

Eigen::Vector3d ConfigReader::bloch(const std::string& key, const Eigen::Vector3d& def) {
  Eigen::Vector3d v = def;
  if (const json* x = find(key)) {
    if (!x->is_array() || x->size() != 3) fail(key, "must be a list of 3 numbers");
    for (int i = 0; i < 3; ++i) {
      if (!(*x)[static_cast<std::size_t>(i)].is_number()) fail(key, "must be a list of 3 numbers");
      v(i) = (*x)[static_cast<std::size_t>(i)].get<double>();
    }
  }
  if (!(v.norm() <= 1.0 + 1e-12)) fail(key, "must have norm <= 1");
  eff_[key] = {v(0), v(1), v(2)};
  return v;
}

std::vector<std::string> ConfigReader::choices(const std::string& key, const std::vector<std::string>& def, const std::set<std::string>& allowed) {
  std::vector<std::string> v = def;
  if (const json* x = find(key)) {
    v.clear();
    if (x->is_string()) {
      v.push_back(x->get<std::string>());
    } else if (x->is_array()) {
      for (const auto& e : *x) {
        if (!e.is_string()) fail(key, "must be a list of strings");
        v.push_back(e.get<std::string>());
      }
    } else {
      fail(key, "must be a string or a list of strings");
    }
  }
  for (const auto& s : v)
    if (!allowed.count(s)) fail(key, "has unknown value '" + s + "'");
  eff_[key] = v;
  return v;
}

std::uint64_t ConfigReader::seed(std::uint64_t def) {
  std::uint64_t v = def;
  if (const json* x = find("seed")) {
    if (!x->is_number_unsigned() && !(x->is_number_integer() && x->get<long long>() >= 0)) fail("seed", "must be a non-negative integer");
    v = x->get<std::uint64_t>();
  }
  eff_["seed"] = v;
  return v;
}

void ConfigReader::finish() const {
  for (const auto& [k, _] : j_.items())
    if (!seen_.count(k)) throw ConfigError(cmd_ + ": unknown config key '" + k + "'");
}

std::string config_hash(const json& effective) { return fnv1a64_hex(effective.dump()); }

namespace {

std::uint64_t resolve_seed(ConfigReader& r, const RunContext& ctx) {
  const std::uint64_t s = r.seed(0);
  return ctx.seed ? *ctx.seed : s;
}

struct Output {
  fs::path dir;
  std::string header;

  Output(const RunContext& ctx, const std::string& cmd, const json& effective, std::uint64_t seed) : dir(ctx.out_dir) {
    json e = effective;
    e["seed"] = seed;
    header = "qhmm " + cmd + " config_hash=" + config_hash(e) + " seed=" + std::to_string(seed);
    fs::create_directories(dir);
  }
  std::ofstream open(const std::string& name) const {
    std::ofstream f(dir / name);
    if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
    f << "# " << header << "\n";
    return f;
  }
};

// Runs jobs [0, n) on up to `threads` workers; results are indexed, so output
// order never depends on scheduling.
void parallel_for(int n, int threads, const std::function<void(int)>& job) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) job(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < n; i += threads) job(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

CaseStudyOptions read_case_study(ConfigReader& r) {
  CaseStudyOptions o;
  o.bloch1 = r.bloch("bloch1", o.bloch1);
  o.bloch2 = r.bloch("bloch2", o.bloch2);
  o.inv_temperature = r.number("inv_temperature", 1.0, 1e-6, 1e6);
  const double eta = r.number("initial_eta1", 0.5, 0.0, 1.0);
  o.initial = Belief::from_eta1(eta);
  o.n_angle = static_cast<int>(r.integer("n_angle", 64, 2, 1024));
  o.n_purity = static_cast<int>(r.integer("n_purity", 101, 2, 10001));
  return o;
}

}  // namespace

// ---- presets --------------------------------------------------------------

const std::set<std::string>& action_family_presets() {
  static const std::set<std::string> names{"qubit-projective-grid", "qubit-projective-grid+biased", "sic-orbit"};
  return names;
}

std::vector<Povm> action_family_preset(const std::string& name) {
  auto projective = [](const Eigen::Vector3d& n) {
    const Mat p = (Mat::Identity(2, 2) + bloch_operator(n)) / 2.0;
    return Povm({HermitianOperator(p), HermitianOperator(Mat(Mat::Identity(2, 2) - p))});
  };
  std::vector<Povm> fam;
  if (name == "qubit-projective-grid" || name == "qubit-projective-grid+biased") {
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 4; ++k) {
        const double th = std::numbers::pi * (i + 1) / 4.0, ph = std::numbers::pi * k / 2.0;
        fam.push_back(projective({std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)}));
      }
    fam.push_back(projective({0, 0, 1}));
    if (name == "qubit-projective-grid+biased") {
      const Mat m0 = 0.8 * (Mat::Identity(2, 2) + bloch_operator({0, 0, 1})) / 2.0;
      fam.push_back(Povm({HermitianOperator(m0), HermitianOperator(Mat(Mat::Identity(2, 2) - m0))}));
    }
    return fam;
  }
  if (name == "sic-orbit") {
    const SicPovm sic = sic_tetrahedron();
    Rng rng(0x51c0);  // fixed so the preset does not depend on --seed
    fam.push_back(sic.povm());
    for (int n = 0; n < 16; ++n) {
      const Mat u = random_unitary(2, rng);
      std::vector<HermitianOperator> eff;
      for (const auto& e : sic.effects) eff.emplace_back(Mat(u * e.mat() * u.adjoint()));
      fam.emplace_back(std::move(eff));
    }
    return fam;
  }
  throw ConfigError("unknown action-family preset '" + name + "'");
}

// ---- learn ----------------------------------------------------------------

int cmd_learn(const RunContext& ctx, std::ostream& out) {
  ConfigReader r(ctx.config, "learn");
  const auto Ls = r.integers("L", {3}, 1, 12);
  const int K = static_cast<int>(r.integer("K", 500, 1, 1000000));
  const int seeds = static_cast<int>(r.integer("seeds", 1, 1, 10000));
  const double theta = r.number("theta", 0.8, 0.0, 1.0);
  const auto bounds = r.numbers("theta_bounds", {0.01, 0.99}, 0.0, 1.0);
  LearningSetup base;
  base.case_study = read_case_study(r);
  base.theta = theta;
  base.K = K;
  base.n_belief = static_cast<int>(r.integer("n_belief", 201, 2, 100001));
  base.grid_points = static_cast<int>(r.integer("grid_points", 64, 1, 4096));
  base.c = r.number("c", 1.0, 0.0, 1e12);
  base.delta = r.number("delta", 0.05, 1e-12, 1.0 - 1e-12);
  const std::uint64_t seed = resolve_seed(r, ctx);
  r.finish();
  if (bounds.size() != 2 || !(bounds[0] <= bounds[1])) throw ConfigError("learn: config key 'theta_bounds' must be [lo, hi] with lo <= hi");
  base.case_study.theta_bounds = {bounds[0], bounds[1]};

  Output o(ctx, "learn", r.effective(), seed);
  const int runs = static_cast<int>(Ls.size()) * seeds;
  std::vector<LearningResult> results(static_cast<std::size_t>(runs));
  parallel_for(runs, ctx.threads, [&](int i) {
    LearningSetup s = base;
    s.case_study.L = static_cast<int>(Ls[static_cast<std::size_t>(i / seeds)]);
    s.seed = derive_seed(seed, static_cast<std::uint64_t>(i % seeds));
    results[static_cast<std::size_t>(i)] = run_case_study_learning(s);
  });

  bool ok = true;
  for (int i = 0; i < runs; ++i) {
    const auto& res = results[static_cast<std::size_t>(i)];
    const std::string tag = "L" + std::to_string(Ls[static_cast<std::size_t>(i / seeds)]) + "_seed" + std::to_string(i % seeds);
    auto f = o.open("learn_episodes_" + tag + ".csv");
    write_episode_log_csv(f, res.run.logs);
    auto g = o.open("learn_dissipation_" + tag + ".csv");
    write_dissipation_csv(g, res.series);
    if (res.series.max_identity_gap > 1e-9) {
      ok = false;
      out << "identity check failed for " << tag << ": gap " << res.series.max_identity_gap << "\n";
    }
    for (const auto& l : res.run.logs)
      if (l.inst_regret < -1e-9) {
        ok = false;
        out << "negative regret in " << tag << " at episode " << l.episode << "\n";
        break;
      }
    for (const auto& w : res.run.warnings) out << "warning (" << tag << "): " << w << "\n";
  }

  // Mean curves with normal 95% intervals, one column group per L.
  auto f = o.open("learn_summary.csv");
  CsvWriter w(f);
  std::vector<std::string> cols{"episode"};
  for (long long L : Ls)
    for (const char* s : {"_mean", "_ci95_lo", "_ci95_hi", "_random_baseline"}) cols.push_back("L" + std::to_string(L) + s);
  w.header(cols);
  for (int k = 0; k < K; ++k) {
    std::vector<CsvCell> row{static_cast<long long>(k + 1)};
    for (std::size_t li = 0; li < Ls.size(); ++li) {
      double m = 0.0, m2 = 0.0, base_series = 0.0;
      for (int s = 0; s < seeds; ++s) {
        const auto& res = results[li * static_cast<std::size_t>(seeds) + static_cast<std::size_t>(s)];
        const double v = res.series.rows[static_cast<std::size_t>(k)].value_form;
        m += v;
        m2 += v * v;
        base_series += res.series.rows[static_cast<std::size_t>(k)].random_baseline;
      }
      m /= seeds;
      base_series /= seeds;
      const double sd = seeds > 1 ? std::sqrt(std::max(0.0, (m2 - seeds * m * m) / (seeds - 1))) : 0.0;
      const double half = 1.96 * sd / std::sqrt(static_cast<double>(seeds));
      row.insert(row.end(), {m, m - half, m + half, base_series});
    }
    w.row(row);
  }
  for (std::size_t li = 0; li < Ls.size(); ++li) {
    const auto& res = results[li * static_cast<std::size_t>(seeds)];
    out << "L=" << Ls[li] << " V*=" << csv_number(res.run.v_star) << " random=" << csv_number(res.random_value)
        << " cum_dissipation(K)=" << csv_number(res.series.rows.back().value_form) << " (seed 0)\n";
  }
  return ok ? kExitOk : kExitInvariant;
}

// ---- protocol -------------------------------------------------------------

int cmd_protocol(const RunContext& ctx, std::ostream& out) {
  ConfigReader r(ctx.config, "protocol");
  const Eigen::Vector3d rb = r.bloch("rho_bloch", {0, 0, 1});
  const Eigen::Vector3d tb = r.bloch("target_bloch", {0, 0, 0.6});
  const auto Ms = r.integers("M", {100, 1000, 10000}, 1, 10000000);
  const auto samples = static_cast<std::size_t>(r.integer("samples", 100000, 2, 1000000000));
  const double beta = r.number("inv_temperature", 1.0, 1e-6, 1e6);
  const double eps = r.number("eps", 1e-6, 1e-12, 0.5);
  const std::uint64_t seed = resolve_seed(r, ctx);
  r.finish();
  const DensityOperator rho = DensityOperator::from_bloch(rb), target = DensityOperator::from_bloch(tb);
  if (tb.norm() / 2.0 + 0.5 > 1.0 - eps) throw ConfigError("protocol: target purity exceeds 1 - eps");

  Output o(ctx, "protocol", r.effective(), seed);
  const double limit = expected_work_arbitrary(rho, target, beta);
  std::vector<ProtocolResult> res;
  std::vector<std::pair<int, double>> bias;
  for (std::size_t i = 0; i < Ms.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    res.push_back(protocol_monte_carlo(rho, target, static_cast<int>(Ms[i]), beta, samples, rng, ProtocolOptions{eps, ctx.threads}));
    bias.emplace_back(static_cast<int>(Ms[i]), res.back().mean - limit);
  }
  const double C = fit_inverse_m(bias);
  auto f = o.open("protocol.csv");
  CsvWriter w(f);
  w.header({"M", "samples", "mean", "std", "std_error", "exact_mean", "limit", "exact_bias", "mc_bias", "fitted_bias"});
  for (std::size_t i = 0; i < Ms.size(); ++i) {
    const int M = static_cast<int>(Ms[i]);
    const double exact = protocol_exact_expectation(rho, target, M, beta, eps);
    w.row({static_cast<long long>(M), static_cast<long long>(samples), res[i].mean, res[i].std, res[i].std_error, exact, limit, exact - limit,
           res[i].mean - limit, C / M});
    out << "M=" << M << " mean=" << csv_number(res[i].mean) << " +- " << csv_number(res[i].std_error) << " limit=" << csv_number(limit) << "\n";
  }
  return kExitOk;
}

// ---- plan -----------------------------------------------------------------

int cmd_plan(const RunContext& ctx, std::ostream& out) {
  ConfigReader r(ctx.config, "plan");
  const int L = static_cast<int>(r.integer("L", 1, 0, 64));
  const double theta = r.number("theta", 0.8, 0.0, 1.0);
  const Eigen::Vector3d b1 = r.bloch("bloch1", {0, 0, 1});
  const Eigen::Vector3d b2 = r.bloch("bloch2", {0.8660254037844386, 0, -0.5});
  const double beta = r.number("inv_temperature", 1.0, 1e-6, 1e6);
  const double eta = r.number("initial_eta1", 0.5, 0.0, 1.0);
  const int nb = static_cast<int>(r.integer("n_belief", 201, 2, 100001));
  const int na = static_cast<int>(r.integer("n_angle", 64, 2, 4096));
  const double eps = r.number("eps", 1e-6, 1e-12, 0.5);
  const std::uint64_t seed = resolve_seed(r, ctx);
  r.finish();
  EmissionModel m{{DensityOperator::from_bloch(b1), DensityOperator::from_bloch(b2)}, EmissionModel::symmetric_transition(theta), Belief::from_eta1(eta), beta};
  if (!m.validate()) out << "warning: emitted states coincide; the memory is not identifiable\n";
  const ValueTable t = backward_value_iteration(m, L, nb, na, eps);
  Output o(ctx, "plan", r.effective(), seed);
  auto f = o.open("value_table.csv");
  write_value_table_csv(f, t);
  if (L > 0) out << "V at initial belief: " << csv_number(t.V[0][static_cast<std::size_t>(t.nearest(eta))]) << "\n";
  return kExitOk;
}

// ---- hardness -------------------------------------------------------------

int cmd_hardness(const RunContext& ctx, std::ostream& out) {
  ConfigReader r(ctx.config, "hardness");
  const auto deltas = r.numbers("deltas", {0.01, 0.02, 0.05, 0.1, 0.12, 1.0 / 6.0}, 1e-9, 1.0 / 6.0 + 1e-12);
  const int N = static_cast<int>(r.integer("N", 10000, 1, 100000000));
  const int seeds = static_cast<int>(r.integer("seeds", 100, 1, 100000));
  const int l = static_cast<int>(r.integer("l", 1, 1, 3));
  const int L = static_cast<int>(r.integer("L", 3, 1, 16));
  const Eigen::Vector3d tb = r.bloch("target_bloch", {0, 0, 0.3});
  const std::uint64_t seed = resolve_seed(r, ctx);
  r.finish();
  Output o(ctx, "hardness", r.effective(), seed);
  const SicPovm sic = sic_tetrahedron();
  bool ok = true;

  auto f = o.open("hardness_bandit.csv");
  CsvWriter w(f);
  w.header({"delta", "mu0_rho1", "gap_rho1", "gap_rhol", "sq_diff_sum", "chi2", "chi2_bound", "kl_per_action", "kl_bound_N", "mean_llr", "holds_fraction"});
  for (std::size_t di = 0; di < deltas.size(); ++di) {
    const double d = std::min(deltas[di], 1.0 / 6.0);
    const BanditPair pair = bandit_pair(d, l);
    const auto m1 = bandit_means(sic, pair.rho1), ml = bandit_means(sic, pair.rho_l);
    double gap1 = m1[0] - std::max({m1[1], m1[2], m1[3]});
    double gapl = ml[static_cast<std::size_t>(l)] - ml[0];
    const auto P = bandit_outcome_distribution(sic, pair.rho1, 0), Q = bandit_outcome_distribution(sic, pair.rho_l, 0);
    double sq = 0.0;
    for (std::size_t x = 0; x < 4; ++x) sq += (P[x] - Q[x]) * (P[x] - Q[x]);
    std::vector<KlReport> reps(static_cast<std::size_t>(seeds));
    parallel_for(seeds, ctx.threads, [&](int s) {
      Rng rng(derive_seed(seed, di * 100000 + static_cast<std::size_t>(s)));
      reps[static_cast<std::size_t>(s)] = empirical_kl_check(pair, [](int, Rng& g) { return static_cast<int>(g.index(4)); }, N, rng);
    });
    int holds = 0;
    double llr = 0.0;
    for (const auto& rep : reps) {
      holds += rep.holds ? 1 : 0;
      llr += rep.llr_mean;
    }
    const double chi2_bound = 8.0 * d * d / 3.0;
    const bool alg = std::abs(m1[0] - (1 + d) / 4) <= 1e-12 && std::abs(gap1 - d / 3) <= 1e-12 && std::abs(gapl - d / 3) <= 1e-12 &&
                     std::abs(sq - d * d / 3) <= 1e-12 && reps[0].chi2 <= chi2_bound + 1e-12;
    ok = ok && alg && holds == seeds;
    w.row({d, m1[0], gap1, gapl, sq, reps[0].chi2, chi2_bound, reps[0].per_action_kl, chi2_bound * N, llr / seeds, static_cast<double>(holds) / seeds});
    out << "delta=" << csv_number(d) << " algebra=" << (alg ? "ok" : "FAIL") << " kl bound held in " << holds << "/" << seeds << " runs\n";
  }

  const QhmmEnvironment maqb = embed_maqb(DensityOperator::from_bloch(tb), L);
  OomModel oom(std::make_shared<const QhmmEnvironment>(maqb));
  const double kappa = oom.kappa_uc();
  auto g = o.open("hardness_maqb.csv");
  CsvWriter wg(g);
  wg.header({"action", "reward_probability", "kappa_uc"});
  for (int a = 0; a < 4; ++a) {
    const double p = (sic.effects[static_cast<std::size_t>(a)].mat() * DensityOperator::from_bloch(tb).mat()).trace().real();
    wg.row({static_cast<long long>(a), p, kappa});
  }
  if (std::abs(kappa - 1.0) > 1e-10) ok = false;
  out << "maqb embedding kappa_uc=" << csv_number(kappa) << "\n";

  save_env(lock_fixture(), (o.dir / "lock_h3_a2.json").string());
  return ok ? kExitOk : kExitInvariant;
}

// ---- spandim --------------------------------------------------------------

int cmd_spandim(const RunContext& ctx, std::ostream& out) {
  ConfigReader r(ctx.config, "spandim");
  const std::vector<std::string> all(action_family_presets().begin(), action_family_presets().end());
  const auto presets = r.choices("presets", all, action_family_presets());
  const std::uint64_t seed = resolve_seed(r, ctx);
  r.finish();
  Output o(ctx, "spandim", r.effective(), seed);
  auto f = o.open("spandim.csv");
  CsvWriter w(f);
  w.header({"preset", "actions", "spanning_dimension"});
  for (const auto& p : presets) {
    const auto fam = action_family_preset(p);
    const int d = spanning_dimension(fam);
    w.row({p, static_cast<long long>(fam.size()), static_cast<long long>(d)});
    out << p << ": " << d << "\n";
  }
  return kExitOk;
}

// ---- verify ---------------------------------------------------------------

namespace {

struct SuiteResult {
  bool pass = true;
  std::string detail;
};

void enumerate_trajectories(int A, int O, int L, const std::function<void(const std::vector<int>&, const std::vector<int>&)>& f) {
  std::vector<int> a(static_cast<std::size_t>(L), 0), o(static_cast<std::size_t>(L), 0);
  std::function<void(int)> rec = [&](int l) {
    if (l == L) {
      f(a, o);
      return;
    }
    for (int x = 0; x < A; ++x)
      for (int y = 0; y < O; ++y) {
        a[static_cast<std::size_t>(l)] = x;
        o[static_cast<std::size_t>(l)] = y;
        rec(l + 1);
      }
  };
  rec(0);
}

Trajectory make_traj(const std::vector<int>& a, const std::vector<int>& o) {
  Trajectory t;
  for (std::size_t i = 0; i < a.size(); ++i) t.steps.push_back(Step{a[i], o[i], 0.0});
  return t;
}

SuiteResult suite_sic(double perturbation) {
  auto bloch = sic_tetrahedron().bloch;
  if (perturbation != 0.0) bloch[0] = (bloch[0] + Eigen::Vector3d(perturbation, 0, 0)).normalized();
  const SicPovm sic = sic_from_bloch(bloch);
  double err = 0.0;
  Mat total = Mat::Zero(2, 2);
  for (int i = 0; i < 4; ++i) {
    total += sic.effects[static_cast<std::size_t>(i)].mat();
    for (int j = 0; j < 4; ++j) {
      const double t = (4.0 * sic.effects[static_cast<std::size_t>(i)].mat() * sic.effects[static_cast<std::size_t>(j)].mat()).trace().real();
      err = std::max(err, std::abs(t - (i == j ? 1.0 : 1.0 / 3.0)));
    }
  }
  err = std::max(err, (total - Mat::Identity(2, 2)).cwiseAbs().maxCoeff());
  SuiteResult r;
  r.pass = err <= 1e-12;
  if (r.pass) {
    OomModel oom(std::make_shared<const QhmmEnvironment>(embed_maqb(DensityOperator::maximally_mixed(2), 2)));
    double res = 0.0;
    for (int i = 0; i < 4; ++i) res = std::max(res, oom.recovery().get(i).residual);
    const double kappa = oom.kappa_uc();
    r.pass = res <= 1e-10 && std::abs(kappa - 1.0) <= 1e-10;
    r.detail = "kappa_uc=" + csv_number(kappa) + " residual=" + csv_number(res);
  } else {
    r.detail = "inner-product/completeness error " + csv_number(err);
  }
  return r;
}

SuiteResult suite_bandit() {
  const SicPovm sic = sic_tetrahedron();
  double err = 0.0;
  bool chi = true;
  for (double d : {0.01, 0.02, 0.05, 0.1, 0.12, 0.15, 1.0 / 6.0}) {
    for (int l = 1; l <= 3; ++l) {
      const BanditPair p = bandit_pair(d, l);
      const auto m1 = bandit_means(sic, p.rho1), ml = bandit_means(sic, p.rho_l);
      err = std::max({err, std::abs(m1[0] - (1 + d) / 4), std::abs(m1[0] - m1[1] - d / 3), std::abs(ml[static_cast<std::size_t>(l)] - ml[0] - d / 3)});
      const auto P = bandit_outcome_distribution(sic, p.rho1, 0), Q = bandit_outcome_distribution(sic, p.rho_l, 0);
      double sq = 0.0, c2 = 0.0;
      for (std::size_t x = 0; x < 4; ++x) {
        sq += (P[x] - Q[x]) * (P[x] - Q[x]);
        c2 += (P[x] - Q[x]) * (P[x] - Q[x]) / Q[x];
      }
      err = std::max(err, std::abs(sq - d * d / 3));
      chi = chi && c2 <= 8 * d * d / 3 + 1e-12;
    }
  }
  return {err <= 1e-12 && chi, "max error " + csv_number(err)};
}

SuiteResult suite_spandim() {
  const int a = spanning_dimension(action_family_preset("qubit-projective-grid"));
  const int b = spanning_dimension(action_family_preset("qubit-projective-grid+biased"));
  const int c = spanning_dimension(action_family_preset("sic-orbit"));
  return {a == 3 && b == 4 && c == 9, std::to_string(a) + "/" + std::to_string(b) + "/" + std::to_string(c)};
}

SuiteResult suite_oom(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 1));
  double err = 0.0;
  for (int n = 0; n < 30; ++n) {
    const int S = 1 + static_cast<int>(rng.index(3)), O = 1 + static_cast<int>(rng.index(4)), A = 1 + static_cast<int>(rng.index(3)),
              L = 1 + static_cast<int>(rng.index(3));
    auto env = std::make_shared<const QhmmEnvironment>(random_environment(S, O, A, L, rng, n % 2 == 0));
    OomModel oom(env);
    enumerate_trajectories(A, O, L, [&](const std::vector<int>& a, const std::vector<int>& o) {
      err = std::max(err, std::abs(oom_trajectory_prob(oom, a, o) - trajectory_likelihood(*env, make_traj(a, o))));
    });
  }
  return {err <= 1e-9, "max |oom - filter| " + csv_number(err)};
}

SuiteResult suite_normalization(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 2));
  double err = 0.0;
  for (int n = 0; n < 20; ++n) {
    const int S = 1 + static_cast<int>(rng.index(3)), O = 1 + static_cast<int>(rng.index(3)), A = 1 + static_cast<int>(rng.index(3)),
              L = 1 + static_cast<int>(rng.index(3));
    const QhmmEnvironment env = random_environment(S, O, A, L, rng);
    const Policy pol = Policy::uniform(A);
    double total = 0.0;
    enumerate_trajectories(A, O, L, [&](const std::vector<int>& a, const std::vector<int>& o) { total += trajectory_prob(env, pol, make_traj(a, o)); });
    err = std::max(err, std::abs(total - 1.0));
  }
  return {err <= 1e-8, "max |sum - 1| " + csv_number(err)};
}

SuiteResult suite_planner() {
  const CaseStudy cs(0.8, CaseStudyOptions{});
  const EmissionModel& m = cs.model();
  const ValueTable t = backward_value_iteration(m, 3, 41, 16, 1e-6);
  bool ok = true;
  for (int l = 0; l < 3; ++l)
    for (int j = 0; j < t.n_belief(); ++j) {
      double best = -1e300;
      for (int k = 0; k < 16; ++k) best = std::max(best, bellman_q(m, t, l, j, k, 1e-6));
      const auto ls = static_cast<std::size_t>(l), js = static_cast<std::size_t>(j);
      ok = ok && best == t.V[ls][js] && bellman_q(m, t, l, j, t.policy[ls][js], 1e-6) == best;
    }
  // Single step: value approaches the free energy of the expected state.
  const ValueTable t1 = backward_value_iteration(m, 1, 41, 64, 1e-6);
  double gap = 0.0;
  for (int j = 0; j < t1.n_belief(); ++j) {
    const DensityOperator xi = expected_state(Belief::from_eta1(t1.grid[static_cast<std::size_t>(j)]), m.sigmas);
    const double fe = relative_entropy(xi, DensityOperator::maximally_mixed(2));
    gap = std::max(gap, fe - t1.V[0][static_cast<std::size_t>(j)]);
    ok = ok && t1.V[0][static_cast<std::size_t>(j)] <= fe + 1e-12;
  }
  ok = ok && gap <= 1e-2;
  return {ok, "bellman exact; one-step free-energy gap " + csv_number(gap)};
}

SuiteResult suite_workx(std::uint64_t seed) {
  LearningSetup s;
  s.case_study.L = 2;
  s.case_study.n_angle = 16;
  s.case_study.n_purity = 21;
  s.K = 20;
  s.grid_points = 16;
  s.n_belief = 51;
  s.c = 5e-7;
  s.seed = seed;
  const LearningResult res = run_case_study_learning(s);
  bool ok = res.series.max_identity_gap <= 1e-9;
  for (const auto& l : res.run.logs) ok = ok && l.inst_regret >= -1e-9;
  Rng rng(derive_seed(seed, 3));
  for (int n = 0; n < 200; ++n) {
    const DensityOperator a = random_density(2, rng), b = random_density(2, rng);
    ok = ok && expected_work_arbitrary(a, a, 1.0) >= expected_work_arbitrary(a, b, 1.0) - 1e-12;
  }
  const CaseStudy cs(0.8, CaseStudyOptions{});
  for (double phi : uniform_angles(64)) {
    const auto om = observation_matrix(WorkAction{phi, 0.5}, cs.model().sigmas);
    ok = ok && (om.O.array() >= 0).all() && (om.O.array() <= 1).all() && std::abs(om.O.col(0).sum() - 1) < 1e-12 && std::abs(om.O.col(1).sum() - 1) < 1e-12;
  }
  return {ok, "identity gap " + csv_number(res.series.max_identity_gap)};
}

SuiteResult suite_protocol(std::uint64_t seed) {
  const DensityOperator rho = DensityOperator::from_bloch({0, 0, 1}), target = DensityOperator::from_bloch({0, 0, 0.6});
  const double limit = std::log(1.6);
  const double far = protocol_exact_expectation(rho, target, 100000, 1.0);
  std::vector<double> scaled;
  for (int M : {100, 1000, 10000}) scaled.push_back((protocol_exact_expectation(rho, target, M, 1.0) - limit) * M);
  bool ok = std::abs(far - limit) < 1e-4;
  for (double s : scaled) ok = ok && std::abs(s - scaled.back()) <= 0.05 * std::abs(scaled.back());
  Rng rng(derive_seed(seed, 4));
  const ProtocolResult mc = protocol_monte_carlo(rho, target, 100, 1.0, 20000, rng);
  const double exact = protocol_exact_expectation(rho, target, 100, 1.0);
  ok = ok && std::abs(mc.mean - exact) <= 4.0 * mc.std_error;
  return {ok, "bias*M " + csv_number(scaled.back())};
}

SuiteResult suite_embedding(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 5));
  double err = 0.0, off = 0.0;
  bool kappa_ok = true;
  for (int n = 0; n < 20; ++n) {
    const int S = 1 + static_cast<int>(rng.index(3));
    const int O = S + static_cast<int>(rng.index(static_cast<std::size_t>(5 - S)));
    const int A = 1 + static_cast<int>(rng.index(2)), L = 1 + static_cast<int>(rng.index(3));
    ClassicalPomdp p;
    p.O = random_stochastic(O, S, rng);
    for (int a = 0; a < A; ++a) p.T.push_back(random_stochastic(S, S, rng));
    p.initial = random_stochastic(S, 1, rng).col(0);
    p.L = L;
    auto env = std::make_shared<const QhmmEnvironment>(embed_classical_pomdp(p));
    OomModel oom(env);
    kappa_ok = kappa_ok && oom.kappa_uc() <= pinv_norm_1to1(p.O) + 1e-8;
    enumerate_trajectories(A, O, L, [&](const std::vector<int>& a, const std::vector<int>& o) {
      RVec alpha = p.initial;
      Mat rho = env->rho1().mat();
      for (std::size_t l = 0; l < a.size(); ++l) {
        RVec next = RVec::Zero(S);
        for (int s = 0; s < S; ++s) next += p.T[static_cast<std::size_t>(a[l])].col(s) * p.O(o[l], s) * alpha(s);
        alpha = next;
        rho = env->instrument(a[l]).branch(o[l]).apply(rho);
        if (static_cast<int>(l) + 1 < L) rho = env->channel(static_cast<int>(l)).apply(rho);
        Mat od = rho;
        od.diagonal().setZero();
        off = std::max(off, od.cwiseAbs().maxCoeff());
      }
      err = std::max(err, std::abs(alpha.sum() - trajectory_likelihood(*env, make_traj(a, o))));
    });
  }
  return {err <= 1e-10 && off <= 1e-14 && kappa_ok, "forward error " + csv_number(err) + " off-diagonal " + csv_number(off)};
}

SuiteResult suite_lock() {
  const QhmmEnvironment env = lock_fixture();
  const double v = ExhaustivePlanner::best_policy(env, 100000).value;
  const QhmmEnvironment back = env_from_json(env_to_json(env));
  const bool same = env_to_json(back) == env_to_json(env);
  return {std::abs(v - 0.8) <= 1e-12 && same, "optimal value " + csv_number(v)};
}

}  // namespace

int cmd_verify(const RunContext& ctx, std::ostream& out) {
  static const std::vector<std::string> all{"sic", "bandit", "spandim", "oom", "normalization", "planner", "workx", "protocol", "embedding", "lock"};
  ConfigReader r(ctx.config, "verify");
  const auto suites = r.choices("suites", all, std::set<std::string>(all.begin(), all.end()));
  const double perturb = r.number("sic_perturbation", 0.0, -1.0, 1.0);
  const std::uint64_t seed = resolve_seed(r, ctx);
  r.finish();
  bool ok = true;
  out << std::left << std::setw(16) << "suite" << std::setw(8) << "status" << "detail\n";
  for (const auto& s : suites) {
    SuiteResult res;
    try {
      if (s == "sic") res = suite_sic(perturb);
      else if (s == "bandit") res = suite_bandit();
      else if (s == "spandim") res = suite_spandim();
      else if (s == "oom") res = suite_oom(seed);
      else if (s == "normalization") res = suite_normalization(seed);
      else if (s == "planner") res = suite_planner();
      else if (s == "workx") res = suite_workx(seed);
      else if (s == "protocol") res = suite_protocol(seed);
      else if (s == "embedding") res = suite_embedding(seed);
      else res = suite_lock();
    } catch (const std::exception& e) {
      res = {false, std::string("exception: ") + e.what()};
    }
    ok = ok && res.pass;
    out << std::left << std::setw(16) << s << std::setw(8) << (res.pass ? "pass" : "FAIL") << res.detail << "\n";
  }
  return ok ? kExitOk : kExitInvariant;
}

// ---- entry ----------------------------------------------------------------

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Episodic learning and work extraction on quantum hidden Markov models", "qhmm"};
  app.require_subcommand(1);
  std::string config_path, seed_str;
  RunContext ctx;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed_str, "64-bit seed (overrides the config)");
  app.add_option("--out", ctx.out_dir, "output directory");
  app.add_option("--threads", ctx.threads, "worker threads")->check(CLI::Range(1, 1024));
  using Cmd = int (*)(const RunContext&, std::ostream&);
  const std::vector<std::pair<std::string, Cmd>> cmds{{"verify", cmd_verify}, {"learn", cmd_learn}, {"protocol", cmd_protocol},
                                                      {"plan", cmd_plan},     {"hardness", cmd_hardness}, {"spandim", cmd_spandim}};
  const std::map<std::string, std::string> help{{"verify", "run the property suites"},
                                                {"learn", "optimistic MLE on the work-extraction case study"},
                                                {"protocol", "finite-M work-extraction protocol Monte Carlo"},
                                                {"plan", "export a backward value-iteration table"},
                                                {"hardness", "lower-bound instance checks"},
                                                {"spandim", "spanning dimension of preset action families"}};
  for (const auto& [name, _] : cmds) app.add_subcommand(name, help.at(name))->fallthrough();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << e.what() << "\n";
    return kExitConfig;
  }
  try {
    if (!seed_str.empty()) {
      std::size_t pos = 0;
      if (seed_str[0] == '-') throw ConfigError("--seed must be a non-negative 64-bit integer");
      ctx.seed = std::stoull(seed_str, &pos, 0);
      if (pos != seed_str.size()) throw ConfigError("--seed must be a non-negative 64-bit integer");
    }
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("cannot read config file " + config_path);
      try {
        ctx.config = json::parse(f);
      } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
      }
    }
    for (const auto& [name, fn] : cmds)
      if (app.got_subcommand(name)) return fn(ctx, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ValidationError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::out_of_range& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvariant;
  }
  return kExitConfig;
}

}  // namespace qhmm::cli
