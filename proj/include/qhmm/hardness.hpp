// Lower-bound instances: the tetrahedral SIC bandit pair, its QHMM embedding,
// and embeddings of classical POMDPs.
#pragma once

#include "qhmm/env.hpp"
#include "qhmm/oom.hpp"

#include <array>

namespace qhmm {

// M_x = E_x / 2 with E_x the projector onto Bloch direction n_x.
struct SicPovm {
  std::array<Eigen::Vector3d, 4> bloch;
  std::array<HermitianOperator, 4> effects;
  Povm povm() const;
};

SicPovm sic_tetrahedron();
// Same construction from arbitrary Bloch vectors (used for negative controls).
SicPovm sic_from_bloch(const std::array<Eigen::Vector3d, 4>& bloch);

// rho1 = (1 - d)/2 I + d E_0,  rho_l = (1 - 3d)/2 I + d E_0 + 2 d E_l.
// Arms and outcomes are 0-based; arm 0 is optimal under rho1.
struct BanditPair {
  DensityOperator rho1;
  DensityOperator rho_l;
  double delta = 0.0;
  int l = 1;
};

BanditPair bandit_pair(double delta, int l = 1);

// Arm a measures the SIC with outcome labels 0 and a swapped.
int sic_permutation(int a, int o);
// Pr(o | a) = Tr(M_{pi_a(o)} rho)
std::array<double, 4> bandit_outcome_distribution(const SicPovm& sic, const DensityOperator& rho, int a);
// mu_a = Pr(o = 0 | a)
std::array<double, 4> bandit_means(const SicPovm& sic, const DensityOperator& rho);

// Memory reset to |1><1| by every branch, replaced by `target` between steps,
// reward 1 on outcome 0.
QhmmEnvironment embed_maqb(const DensityOperator& target, int L);

struct ClassicalPomdp {
  std::vector<RMat> T;  // T[a](s', s)
  RMat O;               // O(o, s)
  RVec initial;
  int L = 1;
  std::optional<RewardTable> reward;  // zero when absent
  double reward_bound = 1.0;
};

// Branch o of action a has Kraus operators sqrt(O(o|s) T(s'|s,a)) |s'><s|;
// memory channels are identities. Throws NotUndercompleteError when O has
// deficient column rank.
QhmmEnvironment embed_classical_pomdp(const ClassicalPomdp& pomdp);

// max_o sum_s |O^+(s, o)|
double pinv_norm_1to1(const RMat& O);
double min_singular_value(const RMat& O);

struct KlReport {
  std::array<long long, 4> pulls{};
  double per_action_kl = 0.0;  // D(P_a || Q_a), the same for every arm
  double chi2 = 0.0;
  double decomposed = 0.0;     // sum_a E[T_a] D(P_a || Q_a) using observed counts
  double llr_mean = 0.0;       // observed trajectory log-likelihood ratio
  double llr_std_error = 0.0;
  double bound = 0.0;          // 8 delta^2 N / 3
  bool holds = false;
};

using BanditPolicy = std::function<int(int round, Rng& rng)>;

// Plays N rounds on rho1 and checks the trajectory KL against the bound.
KlReport empirical_kl_check(const BanditPair& pair, const BanditPolicy& policy, int N, Rng& rng);

// Illustrative two-action lock of depth 3: one action keeps the memory on
// track, the other kills it; reward 1 for observing "ok" at the last step.
QhmmEnvironment lock_fixture();

}  // namespace qhmm
