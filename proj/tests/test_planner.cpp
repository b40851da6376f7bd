#include "qhmm/planner.hpp"
#include "qhmm/random.hpp"
#include "qhmm/workx.hpp"

#include "belief_oracle.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace qhmm;
using namespace qhmm::oracle;

namespace {

EmissionModel default_model(double theta, double beta = 1.0) {
  return EmissionModel{{DensityOperator::from_bloch({0, 0, 1}), DensityOperator::from_bloch({std::sqrt(3.0) / 2, 0, -0.5})},
                       EmissionModel::symmetric_transition(theta), Belief{}, beta};
}

EmissionModel basis_model(double theta) {
  return EmissionModel{{DensityOperator::from_bloch({0, 0, 1}), DensityOperator::from_bloch({0, 0, -1})}, EmissionModel::symmetric_transition(theta),
                       Belief{}, 1.0};
}

double h2(double p) { return binary_entropy(std::clamp(p, 0.0, 1.0)); }

}  // namespace

TEST(ExpectedState, Examples) {
  const auto m = default_model(0.8);
  EXPECT_NEAR((expected_state(Belief{{1, 0}}, m.sigmas).mat() - m.sigmas[0].mat()).norm(), 0.0, 1e-15);
  EXPECT_NEAR((expected_state(Belief{{0.5, 0.5}}, basis_model(0.5).sigmas).mat() - Mat::Identity(2, 2) / 2.0).norm(), 0.0, 1e-15);
  Rng rng(41);
  for (int i = 0; i < 100; ++i) {
    const std::array<DensityOperator, 2> s{random_density(2, rng), random_density(2, rng)};
    const double e = rng.uniform();
    Eigen::SelfAdjointEigenSolver<Mat> es(expected_state(Belief::from_eta1(e), s).mat());
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
    EXPECT_LE(es.eigenvalues().maxCoeff(), 1 + 1e-12);
  }
  EXPECT_THROW(expected_state(Belief{{0.7, 0.7}}, m.sigmas), ValidationError);
}

TEST(BeliefUpdate, DeterministicAndMixing) {
  const auto m = basis_model(1.0);
  const Belief b = belief_update(Belief{{0.5, 0.5}}, 0.0, 0, m.sigmas, Eigen::Matrix2d::Identity());
  EXPECT_NEAR(b[0], 1.0, 1e-15);
  Rng rng(42);
  const auto d = default_model(0.5);
  for (int i = 0; i < 20; ++i) {
    const Belief u = belief_update(Belief::from_eta1(rng.uniform()), rng.uniform() * M_PI, static_cast<int>(rng.index(2)), d.sigmas, d.T);
    EXPECT_NEAR(u[0], 0.5, 1e-15);
  }
  EXPECT_THROW(belief_update(Belief{{1, 0}}, 0.0, 1, m.sigmas, Eigen::Matrix2d::Identity()), ImpossibleObservation);
}

TEST(BeliefUpdate, JointTableOracle) {
  Rng rng(43);
  for (int i = 0; i < 200; ++i) {
    const std::array<DensityOperator, 2> s{random_density(2, rng), random_density(2, rng)};
    const RMat T = random_stochastic(2, 2, rng);
    const Eigen::Matrix2d T2 = T;
    const double eta = rng.uniform(), phi = rng.uniform() * M_PI;
    const int o = static_cast<int>(rng.index(2));
    const EmissionPlane plane(s);
    const Mat P = plane.projector(phi);
    const Mat Po = o == 0 ? P : Mat(Mat::Identity(2, 2) - P);
    // joint Pr(m, m', o) = eta(m) Tr(Po sigma_m) T(m'|m)
    double joint[2][2];
    for (int mm = 0; mm < 2; ++mm)
      for (int mp = 0; mp < 2; ++mp) joint[mm][mp] = (mm == 0 ? eta : 1 - eta) * (Po * s[static_cast<std::size_t>(mm)].mat()).trace().real() * T2(mp, mm);
    const double z = joint[0][0] + joint[0][1] + joint[1][0] + joint[1][1];
    const Belief u = belief_update(Belief::from_eta1(eta), phi, o, s, T2);
    EXPECT_NEAR(u[0], (joint[0][0] + joint[1][0]) / z, 1e-12);
    EXPECT_NEAR(u[0] + u[1], 1.0, 1e-12);
    // scale invariance in the unnormalized prior
    const Belief scaled = belief_update(Belief{{3 * eta, 3 * (1 - eta)}}, phi, o, plane, T2);
    EXPECT_NEAR(scaled[0], u[0], 1e-12);
  }
}

TEST(OptimalPurity, Examples) {
  const auto m = default_model(0.8);
  const Belief b = Belief::from_eta1(0.3);
  const Eigen::Vector3d r = bloch_vector(expected_state(b, m.sigmas));
  const double phi = std::atan2(r(0), r(2));  // direction in the x-z plane
  const double phi0 = phi < 0 ? phi + M_PI : phi;
  const double lam = optimal_purity(b, phi0, m.sigmas, 1e-6);
  const double big = (1 + r.norm()) / 2;
  EXPECT_NEAR(std::max(lam, 1 - lam), big, 1e-12);
  const auto flat = basis_model(0.5);
  for (double a : uniform_angles(8)) EXPECT_NEAR(optimal_purity(Belief{}, a, flat.sigmas, 1e-6), 0.5, 1e-15);
  EXPECT_NEAR(optimal_purity(Belief{{1, 0}}, 0.0, flat.sigmas, 0.01), 0.99, 1e-15);
}

TEST(OptimalPurity, MaximizesImmediateWork) {
  Rng rng(44);
  const auto m = default_model(0.8, 1.7);
  for (int i = 0; i < 20; ++i) {
    const Belief b = Belief::from_eta1(rng.uniform());
    const double phi = rng.uniform() * M_PI;
    double best = -1e300, arg = 0;
    for (int k = 1; k < 10000; ++k) {
      const double lam = k * 1e-4;
      const double w = expected_immediate_work(b, WorkAction{phi, lam}, m.sigmas, m.inv_temperature);
      if (w > best) best = w, arg = lam;
    }
    EXPECT_NEAR(optimal_purity(b, phi, m.sigmas, 1e-6), arg, 1e-4);
  }
}

TEST(ImmediateWork, Examples) {
  const auto m = default_model(0.8, 2.0);
  const Belief b = Belief::from_eta1(0.3);
  const DensityOperator xi = expected_state(b, m.sigmas);
  const Eigen::Vector3d r = bloch_vector(xi);
  double phi = std::atan2(r(0), r(2));
  if (phi < 0) phi += M_PI;
  const double lam = optimal_purity(b, phi, m.sigmas, 1e-12);
  const double d_gamma = relative_entropy(xi, DensityOperator::maximally_mixed(2));
  EXPECT_NEAR(expected_immediate_work(b, WorkAction{phi, lam}, m.sigmas, 2.0), d_gamma / 2.0, 1e-12);

  const auto flat = basis_model(0.5);
  const double w = expected_immediate_work(Belief{}, WorkAction{0.3, 0.8}, flat.sigmas, 2.0);
  EXPECT_LE(w, 0.0);
  EXPECT_NEAR(w, -relative_entropy(DensityOperator::maximally_mixed(2), tailored_state(EmissionPlane(flat.sigmas), WorkAction{0.3, 0.8})) / 2.0, 1e-12);

  Rng rng(45);
  for (int i = 0; i < 100; ++i) {
    const Belief bb = Belief::from_eta1(rng.uniform());
    const WorkAction a{rng.uniform() * M_PI, 0.01 + 0.98 * rng.uniform()};
    const auto [w0, w1] = work_values(a, 2.0);
    const EmissionPlane plane(m.sigmas);
    const double p0 = outcome_probability(bb, a.basis_angle, 0, plane);
    const double e = expected_immediate_work(bb, a, m.sigmas, 2.0);
    EXPECT_NEAR(e, p0 * w0 + (1 - p0) * w1, 1e-12);
    EXPECT_LE(e, relative_entropy(expected_state(bb, m.sigmas), DensityOperator::maximally_mixed(2)) / 2.0 + 1e-12);
  }
}

TEST(BackwardVI, SingleStepIsFreeEnergyUpToGrid) {
  const auto m = default_model(0.8);
  const int na = 64;
  const ValueTable t = backward_value_iteration(m, 1, 21, na);
  ASSERT_EQ(t.V.size(), 2u);
  for (int j = 0; j < t.n_belief(); ++j) {
    EXPECT_EQ(t.V[1][static_cast<std::size_t>(j)], 0.0);
    double best = -1e300;
    for (double phi : t.angles) best = std::max(best, oracle_step(m, t.grid[static_cast<std::size_t>(j)], phi, 1e-6).reward);
    EXPECT_NEAR(t.V[0][static_cast<std::size_t>(j)], best, 1e-12);
    const DensityOperator xi = expected_state(Belief::from_eta1(t.grid[static_cast<std::size_t>(j)]), m.sigmas);
    const double fe = relative_entropy(xi, DensityOperator::maximally_mixed(2));
    EXPECT_LE(t.V[0][static_cast<std::size_t>(j)], fe + 1e-12);
    // misalignment of at most pi/(2 N_angle) in the Bloch plane
    const double r = bloch_vector(xi).norm();
    const double slack = h2((1 + r * std::cos(M_PI / (2 * na))) / 2) - h2((1 + r) / 2) + 1e-5;
    EXPECT_GE(t.V[0][static_cast<std::size_t>(j)], fe - slack);
  }
}

TEST(BackwardVI, ExhaustiveGridPolicies) {
  // L = 2, 3 beliefs, 4 angles: 4^6 deterministic policies on the projected MDP.
  for (double theta : {0.8, 0.6, 0.95}) {
    const auto m = default_model(theta, 1.3);
    const double eps = 1e-6;
    const ValueTable t = backward_value_iteration(m, 2, 3, 4, eps);
    const auto angles = uniform_angles(4);
    std::array<double, 3> best{-1e300, -1e300, -1e300};
    for (int code = 0; code < 4096; ++code) {
      int pol[2][3];
      for (int s = 0, c = code; s < 6; ++s, c /= 4) pol[s / 3][s % 3] = c % 4;
      for (int j = 0; j < 3; ++j) {
        const OracleStep s0 = oracle_step(m, j / 2.0, angles[static_cast<std::size_t>(pol[0][j])], eps);
        double v = s0.reward;
        for (int o = 0; o < 2; ++o) {
          const int jn = nearest_lower_tie(3, s0.next_eta[static_cast<std::size_t>(o)]);
          v += s0.prob[static_cast<std::size_t>(o)] * oracle_step(m, jn / 2.0, angles[static_cast<std::size_t>(pol[1][jn])], eps).reward;
        }
        best[static_cast<std::size_t>(j)] = std::max(best[static_cast<std::size_t>(j)], v);
      }
    }
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(t.V[0][static_cast<std::size_t>(j)], best[static_cast<std::size_t>(j)], 1e-10);
  }
}

TEST(BackwardVI, MemorylessReducesToMyopic) {
  const auto m = default_model(0.5, 0.7);
  for (int L : {1, 2, 4}) {
    const ValueTable t = backward_value_iteration(m, L, 101, 32);
    const ValueTable one = backward_value_iteration(m, 1, 101, 32);
    EXPECT_NEAR(t.V[0][50], L * one.V[0][50], 1e-12);
  }
}

TEST(BackwardVI, BellmanConsistencyAndTies) {
  const auto m = default_model(0.8);
  const ValueTable t = backward_value_iteration(m, 3, 41, 16);
  for (int l = 0; l < 3; ++l)
    for (int j = 0; j < t.n_belief(); ++j) {
      double best = -1e300;
      int arg = -1;
      for (int k = 0; k < 16; ++k) {
        const double q = bellman_q(m, t, l, j, k, 1e-6);
        if (q > best) best = q, arg = k;
      }
      EXPECT_EQ(t.V[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)], best);
      EXPECT_EQ(t.policy[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)], arg);
    }
  EXPECT_THROW(backward_value_iteration(m, 2, 1, 4), ValidationError);
}

TEST(BackwardVI, RefinementDominance) {
  // Nearest-point projection can overestimate on coarse grids; at the default
  // 201 x 64 the excess reaches ~7e-3 for L = 5, so the check starts at 401 x 128.
  const auto m = default_model(0.8);
  for (int L : {3, 5}) {
    const ValueTable coarse = backward_value_iteration(m, L, 401, 128);
    const ValueTable fine = backward_value_iteration(m, L, 801, 256);
    for (int j = 0; j < 401; ++j) EXPECT_GE(fine.V[0][static_cast<std::size_t>(2 * j)], coarse.V[0][static_cast<std::size_t>(j)] - 1e-3 * L);
  }
}

TEST(BackwardVI, MonotoneInHorizon) {
  const auto m = default_model(0.8);
  const ValueTable t = backward_value_iteration(m, 4, 51, 16);
  for (int l = 0; l + 1 < 4; ++l)
    for (int j = 0; j < 51; ++j) {
      double min_work = 1e300;
      for (double phi : t.angles) min_work = std::min(min_work, oracle_step(m, t.grid[static_cast<std::size_t>(j)], phi, 1e-6).reward);
      EXPECT_GE(t.V[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)], t.V[static_cast<std::size_t>(l + 1)][static_cast<std::size_t>(j)] + min_work - 1e-12);
    }
}

TEST(BackwardVI, LastStepLocalDissipation) {
  const auto m = default_model(0.8);
  const int na = 32;
  const ValueTable t = backward_value_iteration(m, 2, 51, na);
  const EmissionPlane plane(m.sigmas);
  for (int j = 0; j < 51; ++j) {
    const Belief b = Belief::from_eta1(t.grid[static_cast<std::size_t>(j)]);
    const double phi = t.angles[static_cast<std::size_t>(t.policy[1][static_cast<std::size_t>(j)])];
    const WorkAction a{phi, optimal_purity(b, phi, m.sigmas, 1e-6)};
    const DensityOperator xi = expected_state(b, m.sigmas);
    const double r = bloch_vector(xi).norm();
    const double bound = h2((1 + r * std::cos(M_PI / (2 * na))) / 2) - h2((1 + r) / 2) + 1e-5;
    EXPECT_LE(relative_entropy(xi, tailored_state(plane, a)), bound);
  }
}

TEST(EvaluatePolicyExact, ZeroHorizonAndDominance) {
  const auto m = default_model(0.8);
  EXPECT_EQ(evaluate_policy_exact(m, 0, WorkPolicy([](int, const std::vector<int>&) { return WorkAction{}; })), 0.0);
  const int L = 3;
  const ValueTable t = backward_value_iteration(m, L, 201, 64);
  const TablePolicy tp(t, m, 1e-6);
  const double v_opt = evaluate_policy_exact(m, L, tp.as_work_policy());
  Rng rng(46);
  for (int i = 0; i < 100; ++i) {
    // random deterministic policy over outcome histories (7 slots for L = 3)
    std::vector<WorkAction> slots;
    for (int s = 0; s < 7; ++s) slots.push_back(WorkAction{rng.uniform() * M_PI, 0.02 + 0.96 * rng.uniform()});
    const WorkPolicy rp = [slots](int l, const std::vector<int>& outs) {
      int h = 0;
      for (int o : outs) h = 2 * h + o;
      return slots[static_cast<std::size_t>((1 << l) - 1 + h)];
    };
    EXPECT_GE(v_opt, evaluate_policy_exact(m, L, rp));
  }
}

TEST(EvaluatePolicyExact, RandomBaselineClosedForm) {
  CaseStudyOptions co;
  co.n_angle = 16;
  co.n_purity = 21;
  co.eps = 1e-3;
  const CaseStudy cs(0.8, co);
  const double enumerated = evaluate_policy_exact(cs.model(), cs.L(), cs.random_work_policy(cs.model()));
  EXPECT_NEAR(enumerated, random_baseline_value(cs, cs.model()), 1e-12);
}

TEST(EvaluatePolicyExact, GuardExceeded) {
  const auto m = default_model(0.8);
  EnumerationOptions o;
  o.max_paths = 4;
  EXPECT_THROW(evaluate_policy_exact(m, 4, WorkPolicy([](int, const std::vector<int>&) { return WorkAction{}; }), o), EnumerationGuardExceeded);
}

TEST(ValueTableCsv, Columns) {
  const ValueTable t = backward_value_iteration(default_model(0.8), 2, 3, 4);
  std::ostringstream s;
  write_value_table_csv(s, t);
  const std::string header = s.str().substr(0, s.str().find('\n'));
  EXPECT_EQ(header, "step,belief_index,belief_value,optimal_angle,optimal_lambda,V");
  int lines = 0;
  for (char c : s.str()) lines += c == '\n';
  EXPECT_EQ(lines, 1 + 2 * 3);
}
