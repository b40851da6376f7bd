#include "qhmm/hardness.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace qhmm {

Povm SicPovm::povm() const { return Povm({effects[0], effects[1], effects[2], effects[3]}); }

SicPovm sic_from_bloch(const std::array<Eigen::Vector3d, 4>& bloch) {
  SicPovm s{bloch, {HermitianOperator::zero(2), HermitianOperator::zero(2), HermitianOperator::zero(2), HermitianOperator::zero(2)}};
  for (std::size_t x = 0; x < 4; ++x) s.effects[x] = HermitianOperator((Mat::Identity(2, 2) + bloch_operator(bloch[x])) / 4.0);
  return s;
}

SicPovm sic_tetrahedron() {
  const double r2 = std::sqrt(2.0), r6 = std::sqrt(6.0);
  return sic_from_bloch({Eigen::Vector3d(0, 0, 1), Eigen::Vector3d(2 * r2 / 3, 0, -1.0 / 3), Eigen::Vector3d(-r2 / 3, r6 / 3, -1.0 / 3),
                         Eigen::Vector3d(-r2 / 3, -r6 / 3, -1.0 / 3)});
}

BanditPair bandit_pair(double delta, int l) {
  if (!(delta > 0.0 && delta <= 1.0 / 6.0 + 1e-15)) throw std::invalid_argument("bandit_pair: delta must lie in (0, 1/6]");
  if (l < 1 || l > 3) throw std::invalid_argument("bandit_pair: l must be a suboptimal arm in {1, 2, 3}");
  const SicPovm sic = sic_tetrahedron();
  auto E = [&](int x) { return Mat(2.0 * sic.effects[static_cast<std::size_t>(x)].mat()); };
  const Mat I = Mat::Identity(2, 2);
  const Mat r1 = (1.0 - delta) / 2.0 * I + delta * E(0);
  const Mat rl = (1.0 - 3.0 * delta) / 2.0 * I + delta * E(0) + 2.0 * delta * E(l);
  return BanditPair{DensityOperator(HermitianOperator(r1)), DensityOperator(HermitianOperator(rl)), delta, l};
}

int sic_permutation(int a, int o) {
  if (o == 0) return a;
  if (o == a) return 0;
  return o;
}

std::array<double, 4> bandit_outcome_distribution(const SicPovm& sic, const DensityOperator& rho, int a) {
  std::array<double, 4> p{};
  for (int o = 0; o < 4; ++o) p[static_cast<std::size_t>(o)] = (sic.effects[static_cast<std::size_t>(sic_permutation(a, o))].mat() * rho.mat()).trace().real();
  return p;
}

std::array<double, 4> bandit_means(const SicPovm& sic, const DensityOperator& rho) {
  std::array<double, 4> mu{};
  for (int a = 0; a < 4; ++a) mu[static_cast<std::size_t>(a)] = bandit_outcome_distribution(sic, rho, a)[0];
  return mu;
}

QhmmEnvironment embed_maqb(const DensityOperator& target, int L) {
  if (L < 1) throw std::invalid_argument("embed_maqb: L must be >= 1");
  if (target.dim() != 2) throw DimensionError("embed_maqb: qubit target expected");
  const SicPovm sic = sic_tetrahedron();
  CVec one = CVec::Zero(2);
  one(1) = 1.0;
  const DensityOperator rho0 = DensityOperator::pure(one);
  std::vector<Instrument> instruments;
  for (int a = 0; a < 4; ++a) {
    std::vector<Channel> branches;
    for (int o = 0; o < 4; ++o) branches.push_back(Channel::measure_prepare(sic.effects[static_cast<std::size_t>(sic_permutation(a, o))], rho0));
    instruments.emplace_back(std::move(branches));
  }
  RewardTable reward = RewardTable::from_function(L, 4, 4, [](int, ActionId, int o) { return o == 0 ? 1.0 : 0.0; });
  std::vector<Channel> channels(static_cast<std::size_t>(L - 1), Channel::replacement(target, 2));
  return QhmmEnvironment(target, std::move(channels), instruments, reward, 1.0, {"arm0", "arm1", "arm2", "arm3"});
}

QhmmEnvironment embed_classical_pomdp(const ClassicalPomdp& p) {
  const int S = static_cast<int>(p.O.cols());
  const int O = static_cast<int>(p.O.rows());
  const int A = static_cast<int>(p.T.size());
  if (S < 1 || O < 1 || A < 1) throw DimensionError("embed_classical_pomdp: empty model");
  if (p.L < 1) throw std::invalid_argument("embed_classical_pomdp: L must be >= 1");
  if (p.initial.size() != S) throw DimensionError("embed_classical_pomdp: initial distribution has the wrong size");
  auto stochastic = [](const RMat& m) {
    if ((m.array() < -tol::tp).any()) return false;
    for (int c = 0; c < m.cols(); ++c)
      if (std::abs(m.col(c).sum() - 1.0) > tol::tp) return false;
    return true;
  };
  if (!stochastic(p.O)) throw ValidationError("embed_classical_pomdp: emission columns must be distributions");
  for (const auto& t : p.T)
    if (t.rows() != S || t.cols() != S || !stochastic(t)) throw ValidationError("embed_classical_pomdp: transitions must be column-stochastic S x S");
  if (std::abs(p.initial.sum() - 1.0) > tol::tp || (p.initial.array() < -tol::tp).any()) throw ValidationError("embed_classical_pomdp: invalid initial distribution");

  std::vector<Instrument> instruments;
  for (int a = 0; a < A; ++a) {
    std::vector<Channel> branches;
    for (int o = 0; o < O; ++o) {
      std::vector<Mat> kraus;
      for (int s = 0; s < S; ++s)
        for (int sp = 0; sp < S; ++sp) {
          const double w = p.O(o, s) * p.T[static_cast<std::size_t>(a)](sp, s);
          if (w <= 0.0) continue;
          Mat k = Mat::Zero(S, S);
          k(sp, s) = std::sqrt(w);
          kraus.push_back(k);
        }
      if (kraus.empty()) kraus.push_back(Mat::Zero(S, S));
      branches.emplace_back(S, S, std::move(kraus));
    }
    instruments.emplace_back(std::move(branches));
    const RecoveryResult r = build_recovery_map_classical(instruments.back(), a);
    if (const auto* bad = std::get_if<NotUndercomplete>(&r)) throw NotUndercompleteError(bad->action, bad->residual);
  }
  Mat rho = Mat::Zero(S, S);
  for (int s = 0; s < S; ++s) rho(s, s) = std::max(0.0, p.initial(s));
  const RewardTable reward = p.reward ? *p.reward : RewardTable(p.L, A, O);
  std::vector<Channel> channels(static_cast<std::size_t>(p.L - 1), Channel::identity(S));
  return QhmmEnvironment(DensityOperator(HermitianOperator(rho)), std::move(channels), instruments, reward, p.reward_bound);
}

double pinv_norm_1to1(const RMat& O) {
  Eigen::JacobiSVD<RMat> svd(O, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double cut = kPinvCutoff * (sv.size() ? sv(0) : 0.0);
  RVec inv = RVec::Zero(sv.size());
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > cut) inv(i) = 1.0 / sv(i);
  const RMat pinv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
  return pinv.cwiseAbs().colwise().sum().maxCoeff();
}

double min_singular_value(const RMat& O) {
  Eigen::JacobiSVD<RMat> svd(O);
  return svd.singularValues().minCoeff();
}

KlReport empirical_kl_check(const BanditPair& pair, const BanditPolicy& policy, int N, Rng& rng) {
  if (N < 1) throw std::invalid_argument("empirical_kl_check: N must be >= 1");
  const SicPovm sic = sic_tetrahedron();
  KlReport r;
  std::array<std::array<double, 4>, 4> P{}, Q{};
  for (int a = 0; a < 4; ++a) {
    P[static_cast<std::size_t>(a)] = bandit_outcome_distribution(sic, pair.rho1, a);
    Q[static_cast<std::size_t>(a)] = bandit_outcome_distribution(sic, pair.rho_l, a);
  }
  for (std::size_t o = 0; o < 4; ++o) {
    const double p = P[0][o], q = Q[0][o];
    if (p > 0.0) r.per_action_kl += p * std::log(p / q);
    r.chi2 += (p - q) * (p - q) / q;
  }
  double sum = 0.0, sumsq = 0.0;
  for (int n = 0; n < N; ++n) {
    const int a = policy(n, rng);
    if (a < 0 || a > 3) throw std::out_of_range("empirical_kl_check: policy returned an invalid arm");
    ++r.pulls[static_cast<std::size_t>(a)];
    const auto& pa = P[static_cast<std::size_t>(a)];
    const int o = sample_index({pa[0], pa[1], pa[2], pa[3]}, rng);
    const double llr = std::log(pa[static_cast<std::size_t>(o)] / Q[static_cast<std::size_t>(a)][static_cast<std::size_t>(o)]);
    sum += llr;
    sumsq += llr * llr;
  }
  const double mean = sum / N;
  const double var = N > 1 ? std::max(0.0, (sumsq - N * mean * mean) / (N - 1)) : 0.0;
  for (long long t : r.pulls) r.decomposed += static_cast<double>(t) * r.per_action_kl;
  r.llr_mean = sum;
  r.llr_std_error = std::sqrt(var * N);
  r.bound = 8.0 * pair.delta * pair.delta * N / 3.0;
  r.holds = r.decomposed <= r.bound + 1e-12 && r.llr_mean <= r.bound + 3.0 * r.llr_std_error;
  return r;
}

QhmmEnvironment lock_fixture() {
  ClassicalPomdp p;
  p.L = 3;
  p.O = RMat(3, 2);
  p.O << 0.8, 0.0, 0.0, 0.8, 0.2, 0.2;  // ok, fail, noise; columns on-track, dead
  RMat kill(2, 2), keep(2, 2);
  kill << 0, 0, 1, 1;
  keep << 1, 0, 0, 1;
  p.T = {kill, keep};
  p.initial = RVec::Unit(2, 0);
  RewardTable r(3, 2, 3);
  r.at(2, 0, 0) = 1.0;
  r.at(2, 1, 0) = 1.0;
  p.reward = r;
  p.reward_bound = 1.0;
  return embed_classical_pomdp(p);
}

}  // namespace qhmm
