#include "qhmm/oom.hpp"

#include "qhmm/env_json.hpp"

#include <Eigen/SVD>

namespace qhmm {

namespace {

Mat unvec(const CVec& v, int n) {
  Mat m(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) m(i, j) = v(j * n + i);
  return m;
}

CVec vec(const Mat& m) { return Eigen::Map<const CVec>(m.data(), m.size()); }

// Truncated pseudo-inverse of a real matrix.
RMat pinv(const RMat& c) {
  Eigen::JacobiSVD<RMat> svd(c, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const RVec& s = svd.singularValues();
  const double cutoff = s.size() > 0 ? kPinvCutoff * s(0) : 0.0;
  RMat out = RMat::Zero(c.cols(), c.rows());
  for (int k = 0; k < s.size(); ++k)
    if (s(k) > cutoff && s(k) > 0.0) out += svd.matrixV().col(k) * (1.0 / s(k)) * svd.matrixU().col(k).transpose();
  return out;
}

std::uint64_t op_key(int l, int o, int ia, int ib) {
  return (static_cast<std::uint64_t>(l) << 48) | (static_cast<std::uint64_t>(o) << 32) | (static_cast<std::uint64_t>(ia) << 16) |
         static_cast<std::uint64_t>(ib);
}

}  // namespace

Mat RecoveryMap::image(int o) const { return unvec(map.col(o), S * O); }

Mat RecoveryMap::apply(const RVec& d) const { return unvec(map * d.cast<cd>(), S * O); }

Mat instrument_composite(const Instrument& ins, const Mat& x) {
  const int O = ins.outcomes();
  const int S = ins.dim_out();
  Mat out = Mat::Zero(S * O, S * O);
  for (int o = 0; o < O; ++o) {
    Mat b = ins.branch(o).apply(x);
    for (int i = 0; i < S; ++i)
      for (int j = 0; j < S; ++j) out(i * O + o, j * O + o) = b(i, j);
  }
  return out;
}

RVec branch_traces(const Instrument& ins, const Mat& x) {
  RVec d(ins.outcomes());
  for (int o = 0; o < ins.outcomes(); ++o) d(o) = ins.branch(o).apply(x).trace().real();
  return d;
}

double recovery_residual(const RecoveryMap& r, const Instrument& ins) {
  double worst = 0.0;
  for (const auto& b : pauli_basis(ins.dim_in())) {
    Mat diff = r.apply(branch_traces(ins, b)) - instrument_composite(ins, b);
    worst = std::max(worst, trace_norm(diff));
  }
  return worst;
}

RecoveryResult build_recovery_map(const Instrument& ins, ActionId action) {
  const int S = ins.dim_in();
  const int O = ins.outcomes();
  const auto basis = pauli_basis(S);
  const int n = static_cast<int>(basis.size());
  RMat c(O, n);
  Mat p((S * O) * (S * O), n);
  for (int mu = 0; mu < n; ++mu) {
    c.col(mu) = branch_traces(ins, basis[static_cast<std::size_t>(mu)]);
    p.col(mu) = vec(instrument_composite(ins, basis[static_cast<std::size_t>(mu)]));
  }
  RecoveryMap r{action, S, O, p * pinv(c).cast<cd>(), 0.0};
  r.residual = recovery_residual(r, ins);
  if (!(r.residual <= kRecoveryTol)) return NotUndercomplete{action, r.residual};
  return r;
}

RMat classical_observation_matrix(const Instrument& ins) {
  const int S = ins.dim_in();
  RMat obs(ins.outcomes(), S);
  for (int s = 0; s < S; ++s) {
    Mat e = Mat::Zero(S, S);
    e(s, s) = 1.0;
    obs.col(s) = branch_traces(ins, e);
  }
  return obs;
}

RecoveryResult build_recovery_map_classical(const Instrument& ins, ActionId action) {
  const int S = ins.dim_in();
  const int O = ins.outcomes();
  const RMat obs = classical_observation_matrix(ins);
  RMat left;
  if (O == S) {
    Eigen::FullPivLU<RMat> lu(obs);
    if (!lu.isInvertible() || std::abs(lu.determinant()) <= kPinvCutoff) return NotUndercomplete{action, std::numeric_limits<double>::infinity()};
    left = lu.inverse();
  } else {
    left = pinv(obs);
  }
  RecoveryMap r{action, S, O, Mat::Zero((S * O) * (S * O), O), 0.0};
  for (int s = 0; s < S; ++s) {
    Mat e = Mat::Zero(S, S);
    e(s, s) = 1.0;
    const CVec ps = vec(instrument_composite(ins, e));
    for (int o = 0; o < O; ++o) r.map.col(o) += left(s, o) * ps;
  }
  r.residual = recovery_residual(r, ins);
  if (!(r.residual <= kRecoveryTol)) return NotUndercomplete{action, r.residual};
  return r;
}

double kappa_uc(const std::vector<RecoveryMap>& maps) {
  double k = 0.0;
  for (const auto& r : maps)
    for (int o = 0; o < r.O; ++o) k = std::max(k, trace_norm(r.image(o)));
  return k;
}

RMat oom_operator(const Channel* channel, const RecoveryMap& ra, int o, const Instrument& next) {
  const int S = ra.S;
  const int O = ra.O;
  RMat out(next.outcomes(), O);
  for (int j = 0; j < O; ++j) {
    const Mat y = ra.image(j);
    // (I (x) <o|) Y (I (x) |o>)
    Mat z(S, S);
    for (int s = 0; s < S; ++s)
      for (int t = 0; t < S; ++t) z(s, t) = y(s * O + o, t * O + o);
    if (channel) z = channel->apply(z);
    out.col(j) = branch_traces(next, z);
  }
  return out;
}

RMat oom_operator(const QhmmEnvironment& env, const std::vector<RecoveryMap>& maps_by_instrument, int l, int o, ActionId a, ActionId a_next) {
  if (l < 0 || l + 1 >= env.L()) throw std::out_of_range("oom_operator: step out of range");
  const std::size_t ia = static_cast<std::size_t>(env.instrument_index(a));
  if (ia >= maps_by_instrument.size()) throw std::out_of_range("oom_operator: missing recovery map");
  return oom_operator(&env.channel(l), maps_by_instrument[ia], o, env.instrument(a_next));
}

RecoveryCache::RecoveryCache(std::shared_ptr<const std::vector<Instrument>> instruments, RecoveryMethod method)
    : instruments_(std::move(instruments)), method_(method), slots_(instruments_->size()) {}

namespace {
const RecoveryResult& slot(const RecoveryCache& c, std::vector<std::optional<RecoveryResult>>& slots, int idx, RecoveryMethod m) {
  auto& s = slots.at(static_cast<std::size_t>(idx));
  if (!s) {
    const Instrument& ins = c.instruments()[static_cast<std::size_t>(idx)];
    s = m == RecoveryMethod::Classical ? build_recovery_map_classical(ins, idx) : build_recovery_map(ins, idx);
  }
  return *s;
}
}  // namespace

const RecoveryMap& RecoveryCache::get(int instrument_index) const {
  std::lock_guard<std::mutex> lk(mu_);
  const RecoveryResult& r = slot(*this, slots_, instrument_index, method_);
  if (const auto* bad = std::get_if<NotUndercomplete>(&r)) throw NotUndercompleteError(bad->action, bad->residual);
  return std::get<RecoveryMap>(r);
}

std::optional<NotUndercomplete> RecoveryCache::failure(int instrument_index) const {
  std::lock_guard<std::mutex> lk(mu_);
  const RecoveryResult& r = slot(*this, slots_, instrument_index, method_);
  if (const auto* bad = std::get_if<NotUndercomplete>(&r)) return *bad;
  return std::nullopt;
}

OomModel::OomModel(std::shared_ptr<const QhmmEnvironment> env, std::shared_ptr<RecoveryCache> recovery)
    : env_(std::move(env)), recovery_(std::move(recovery)) {
  if (!recovery_) recovery_ = std::make_shared<RecoveryCache>(env_->shared_instruments());
  if (recovery_->instruments().size() != env_->instruments().size()) throw std::invalid_argument("recovery cache does not match environment");
}

const RVec& OomModel::initial_vector(ActionId a) const {
  const int ia = env_->instrument_index(a);
  std::lock_guard<std::mutex> lk(*mu_);
  auto it = init_.find(ia);
  if (it == init_.end()) it = init_.emplace(ia, branch_traces(env_->instrument(a), env_->rho1().mat())).first;
  return it->second;
}

const RMat& OomModel::op(int l, int o, ActionId a, ActionId a_next) const {
  const int ia = env_->instrument_index(a);
  const int ib = env_->instrument_index(a_next);
  const std::uint64_t key = op_key(l, o, ia, ib);
  {
    std::lock_guard<std::mutex> lk(*mu_);
    auto it = ops_.find(key);
    if (it != ops_.end()) return it->second;
  }
  if (l < 0 || l + 1 >= env_->L()) throw std::out_of_range("OomModel::op: step out of range");
  RMat m = oom_operator(&env_->channel(l), recovery_->get(ia), o, env_->instrument(a_next));
  std::lock_guard<std::mutex> lk(*mu_);
  return ops_.emplace(key, std::move(m)).first->second;
}

double OomModel::kappa_uc() const {
  std::vector<RecoveryMap> maps;
  for (int i = 0; i < env_->num_instruments(); ++i) maps.push_back(recovery_->get(i));
  return qhmm::kappa_uc(maps);
}

std::optional<NotUndercomplete> OomModel::undercomplete_failure() const {
  for (int i = 0; i < env_->num_instruments(); ++i)
    if (auto f = recovery_->failure(i)) return f;
  return std::nullopt;
}

double oom_trajectory_prob(const OomModel& oom, const std::vector<ActionId>& actions, const std::vector<int>& outcomes) {
  const std::size_t n = actions.size();
  if (n == 0) return 1.0;
  if (outcomes.size() != n) throw std::invalid_argument("actions and outcomes differ in length");
  RVec v = oom.initial_vector(actions[0]);
  for (std::size_t l = 0; l + 1 < n; ++l) {
    v = oom.op(static_cast<int>(l), outcomes[l], actions[l], actions[l + 1]) * v;
  }
  return v(outcomes[n - 1]);
}

double oom_trajectory_prob(const OomModel& oom, const Trajectory& traj) {
  std::vector<ActionId> a;
  std::vector<int> o;
  for (const auto& s : traj.steps) {
    a.push_back(s.action);
    o.push_back(s.outcome);
  }
  return oom_trajectory_prob(oom, a, o);
}

int spanning_dimension(const std::vector<Povm>& actions) {
  if (actions.empty()) throw std::invalid_argument("spanning_dimension: empty action set");
  const int S = actions.front().dim();
  const int O = actions.front().outcomes();
  const auto basis = pauli_basis(S);
  const int n = static_cast<int>(basis.size());
  auto coords = [&](const Povm& p) {
    if (p.dim() != S || p.outcomes() != O) throw DimensionError("spanning_dimension: POVMs must share (S, O)");
    RVec v(O * n);
    for (int o = 0; o < O; ++o)
      for (int mu = 0; mu < n; ++mu) v(o * n + mu) = (p.effects()[static_cast<std::size_t>(o)].mat() * basis[static_cast<std::size_t>(mu)]).trace().real();
    return v;
  };
  const RVec ref = coords(actions.front());
  RMat rows(static_cast<Eigen::Index>(actions.size()), O * n);
  for (std::size_t a = 0; a < actions.size(); ++a) rows.row(static_cast<Eigen::Index>(a)) = (coords(actions[a]) - ref).transpose();
  Eigen::JacobiSVD<RMat> svd(rows);
  const RVec& s = svd.singularValues();
  if (s.size() == 0 || s(0) <= 0.0) return 0;
  int rank = 0;
  for (int k = 0; k < s.size(); ++k)
    if (s(k) > 1e-8 * s(0)) ++rank;
  return rank;
}

nlohmann::json oom_to_json(const OomModel& oom, int max_actions_for_operators) {
  using nlohmann::json;
  const QhmmEnvironment& env = oom.env();
  json j;
  j["format"] = "qhmm-oom/1";
  j["kappa_uc"] = oom.kappa_uc();
  json rec = json::array();
  for (int i = 0; i < env.num_instruments(); ++i) {
    const RecoveryMap& r = oom.recovery().get(i);
    json images = json::array();
    for (int o = 0; o < r.O; ++o) images.push_back(matrix_to_json(r.image(o)));
    rec.push_back(json{{"instrument", i}, {"residual", r.residual}, {"images", images}});
  }
  j["recovery_maps"] = rec;
  json init = json::array();
  for (int a = 0; a < env.A(); ++a) {
    const RVec& v = oom.initial_vector(a);
    init.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  }
  j["initial_vectors"] = init;
  if (env.A() <= max_actions_for_operators) {
    json ops = json::array();
    for (int l = 0; l + 1 < env.L(); ++l)
      for (int o = 0; o < env.O(); ++o)
        for (int a = 0; a < env.A(); ++a)
          for (int b = 0; b < env.A(); ++b) {
            const RMat& m = oom.op(l, o, a, b);
            json rows = json::array();
            for (Eigen::Index i = 0; i < m.rows(); ++i) {
              std::vector<double> row(static_cast<std::size_t>(m.cols()));
              for (Eigen::Index k = 0; k < m.cols(); ++k) row[static_cast<std::size_t>(k)] = m(i, k);
              rows.push_back(row);
            }
            ops.push_back(json{{"l", l}, {"o", o}, {"a", a}, {"a_next", b}, {"matrix", rows}});
          }
    j["operators"] = ops;
  }
  return j;
}

}  // namespace qhmm
