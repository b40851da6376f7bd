#include "oracles.hpp"

#include "qhmm/env.hpp"
#include "qhmm/env_json.hpp"
#include "qhmm/hardness.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <filesystem>
#include <map>

using namespace qhmm;

namespace {

Povm z_projective() {
  Mat p0 = Mat::Zero(2, 2), p1 = Mat::Zero(2, 2);
  p0(0, 0) = 1.0;
  p1(1, 1) = 1.0;
  return Povm({HermitianOperator(p0), HermitianOperator(p1)});
}

// Memory |0><0|, identity channels, Lueders z measurement: outcome 0 is certain.
QhmmEnvironment deterministic_env(int L, int A = 1) {
  std::vector<Instrument> ins(static_cast<std::size_t>(A), Instrument::luders(z_projective()));
  RewardTable r = RewardTable::from_function(L, A, 2, [](int, ActionId, int o) { return o == 0 ? 1.0 : -1.0; });
  return QhmmEnvironment(DensityOperator::pure(CVec::Unit(2, 0)), std::vector<Channel>(static_cast<std::size_t>(L - 1), Channel::identity(2)), ins, r, 1.0);
}

}  // namespace

TEST(ConditionalOutcomeProb, SicOnMaximallyMixed) {
  const SicPovm sic = sic_tetrahedron();
  const Instrument ins = Instrument::luders(sic.povm());
  const QhmmEnvironment env(DensityOperator::maximally_mixed(2), {}, {ins}, RewardTable(1, 1, 4), 1.0);
  const auto p = conditional_outcome_prob(env, initial_filter(env), 0);
  for (double x : p) EXPECT_NEAR(x, 0.25, 1e-14);
}

TEST(ConditionalOutcomeProb, DeterministicEmission) {
  const QhmmEnvironment env = deterministic_env(1);
  const auto p = conditional_outcome_prob(env, initial_filter(env), 0);
  EXPECT_NEAR(p[0], 1.0, 1e-15);
  EXPECT_NEAR(p[1], 0.0, 1e-15);
}

TEST(ConditionalOutcomeProb, MatchesKrausOracle) {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const QhmmEnvironment env = random_environment(3, 3, 2, 1, rng);
    const FilterState f = initial_filter(env);
    for (int a = 0; a < env.A(); ++a) {
      const auto p = conditional_outcome_prob(env, f, a);
      double sum = 0.0;
      for (int o = 0; o < env.O(); ++o) {
        EXPECT_NEAR(p[static_cast<std::size_t>(o)], oracle::kraus_apply(env.instrument(a).branch(o), env.rho1().mat()).trace().real(), 1e-13);
        sum += p[static_cast<std::size_t>(o)];
      }
      EXPECT_NEAR(sum, 1.0, 1e-10);
    }
  }
}

TEST(ConditionalOutcomeProb, ZeroTraceFilterIsDegenerate) {
  const QhmmEnvironment env = deterministic_env(2);
  FilterState f{HermitianOperator::zero(2), 0};
  EXPECT_THROW(conditional_outcome_prob(env, f, 0), DegenerateTrajectory);
}

TEST(Step, ResetEnvironmentForgetsOutcomes) {
  // Every branch prepares |1><1|, then the memory is replaced by the target.
  Rng rng(12);
  const DensityOperator target = random_density(2, rng);
  const QhmmEnvironment env = embed_maqb(target, 5);
  for (int rep = 0; rep < 20; ++rep) {
    FilterState f = initial_filter(env);
    for (int l = 0; l < env.L(); ++l) {
      // normalized pre-measurement state is the target at every step
      EXPECT_NEAR((f.tilde_rho.mat() / f.trace() - target.mat()).norm(), 0.0, 1e-12);
      const StepResult r = step(env, f, static_cast<int>(rng.index(4)), rng);
      if (l + 1 < env.L()) f = r.next;
      else EXPECT_NEAR(r.next.tilde_rho.mat()(1, 1).real() / r.next.trace(), 1.0, 1e-12);
    }
  }
}

TEST(Step, CertainBranchKeepsTrace) {
  const QhmmEnvironment env = deterministic_env(3);
  Rng rng(13);
  FilterState f = initial_filter(env);
  for (int l = 0; l < 3; ++l) {
    const StepResult r = step(env, f, 0, rng);
    EXPECT_EQ(r.outcome, 0);
    EXPECT_EQ(r.reward, 1.0);
    EXPECT_NEAR(r.next.trace(), 1.0, 1e-15);
    f = r.next;
  }
  EXPECT_THROW(step(env, f, 0, rng), EpisodeFinished);
}

TEST(Step, TraceShrinksByOutcomeProbability) {
  Rng rng(14);
  for (int i = 0; i < 50; ++i) {
    const QhmmEnvironment env = random_environment(2, 3, 2, 4, rng);
    FilterState f = initial_filter(env);
    for (int l = 0; l < env.L(); ++l) {
      const int a = static_cast<int>(rng.index(2));
      const auto p = conditional_outcome_prob(env, f, a);
      const double before = f.trace();
      const StepResult r = step(env, f, a, rng);
      EXPECT_NEAR(r.next.trace(), before * p[static_cast<std::size_t>(r.outcome)], 1e-13);
      EXPECT_LE(r.next.trace(), before + 1e-15);
      f = r.next;
    }
  }
}

TEST(SimulateEpisode, SingleStepBandit) {
  const QhmmEnvironment env = deterministic_env(1, 3);
  Rng rng(15);
  const Trajectory t = simulate_episode(env, Policy::uniform(3), rng);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t.steps[0].outcome, 0);
}

TEST(SimulateEpisode, DeterministicIsSeedIndependent) {
  const QhmmEnvironment env = deterministic_env(4, 2);
  Rng a(1), b(999);
  const Trajectory ta = simulate_episode(env, Policy::open_loop({1, 0, 1, 1}), a);
  const Trajectory tb = simulate_episode(env, Policy::open_loop({1, 0, 1, 1}), b);
  EXPECT_EQ(ta.outcomes(), tb.outcomes());
  EXPECT_EQ(ta.outcomes(), std::vector<int>(4, 0));
}

TEST(SimulateEpisode, SeededRunsAreBitIdentical) {
  Rng g(16);
  const QhmmEnvironment env = random_environment(3, 2, 3, 4, g);
  Rng a(77), b(77);
  for (int i = 0; i < 20; ++i) {
    const Trajectory ta = simulate_episode(env, Policy::uniform(3), a);
    const Trajectory tb = simulate_episode(env, Policy::uniform(3), b);
    for (std::size_t l = 0; l < ta.size(); ++l) {
      EXPECT_EQ(ta.steps[l].action, tb.steps[l].action);
      EXPECT_EQ(ta.steps[l].outcome, tb.steps[l].outcome);
      EXPECT_EQ(ta.steps[l].reward, tb.steps[l].reward);
    }
  }
}

TEST(SimulateEpisode, FrequenciesMatchTrajectoryProb) {
  Rng g(17);
  const QhmmEnvironment env = random_environment(2, 2, 2, 2, g);
  const Policy pol = Policy::uniform(2);
  std::map<std::vector<int>, long long> counts;
  const int n = 100000;
  Rng rng(18);
  for (int i = 0; i < n; ++i) {
    const Trajectory t = simulate_episode(env, pol, rng);
    std::vector<int> key;
    for (const auto& s : t.steps) {
      key.push_back(s.action);
      key.push_back(s.outcome);
    }
    ++counts[key];
  }
  oracle::for_each_sequence(2, 2, 2, [&](const std::vector<int>& a, const std::vector<int>& o) {
    const double p = trajectory_prob(env, pol, oracle::make_trajectory(a, o));
    const double freq = static_cast<double>(counts[{a[0], o[0], a[1], o[1]}]) / n;
    EXPECT_LE(std::abs(freq - p), 3.0 * std::sqrt(p * (1 - p) / n) + 1e-12);
  });
}

TEST(SimulateEpisode, MalformedPolicyOnImpossiblePath) {
  const QhmmEnvironment env = deterministic_env(2);
  // The trajectory likelihood of a forced impossible outcome is zero.
  EXPECT_EQ(trajectory_likelihood(env, oracle::make_trajectory({0, 0}, {1, 0})), 0.0);
}

TEST(TrajectoryProb, SumsToOneSmallEnv) {
  Rng g(19);
  for (int i = 0; i < 20; ++i) {
    const QhmmEnvironment env = random_environment(2, 2, 2, 3, g);
    const Policy pol = Policy::uniform(2);
    double total = 0.0;
    oracle::for_each_sequence(2, 2, 3, [&](const std::vector<int>& a, const std::vector<int>& o) { total += trajectory_prob(env, pol, oracle::make_trajectory(a, o)); });
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(TrajectoryProb, SingleStepAndOracle) {
  Rng g(20);
  const QhmmEnvironment env = random_environment(3, 2, 3, 3, g);
  const Policy pol = Policy::uniform(3);
  for (int a = 0; a < 3; ++a)
    for (int o = 0; o < 2; ++o) {
      const double direct = oracle::kraus_apply(env.instrument(a).branch(o), env.rho1().mat()).trace().real() / 3.0;
      EXPECT_NEAR(trajectory_prob(env, pol, oracle::make_trajectory({a}, {o})), direct, 1e-14);
    }
  oracle::for_each_sequence(3, 2, 3, [&](const std::vector<int>& a, const std::vector<int>& o) {
    EXPECT_NEAR(trajectory_likelihood(env, oracle::make_trajectory(a, o)), oracle::trajectory_likelihood(env, a, o), 1e-13);
  });
  EXPECT_EQ(trajectory_prob(deterministic_env(1), Policy::fixed(0), oracle::make_trajectory({0}, {1})), 0.0);
}

TEST(SequentialEmission, ConstantEmissionFactorizes) {
  // E(X) = X (x) sigma with sigma = diag(0.7, 0.3)
  std::vector<Mat> kraus;
  for (int i = 0; i < 2; ++i) {
    Mat k = Mat::Zero(4, 2);
    const double w = std::sqrt(i == 0 ? 0.7 : 0.3);
    for (int s = 0; s < 2; ++s) k(s * 2 + i, s) = w;
    kraus.push_back(k);
  }
  const Channel emission(2, 4, kraus);
  const Povm povm = z_projective();
  const Instrument ins = instrument_from_sequential_emission(emission, 2, povm);
  Rng rng(21);
  const Mat X = random_density(2, rng).mat();
  EXPECT_NEAR((ins.branch(0).apply(X) - 0.7 * X).norm(), 0.0, 1e-14);
  EXPECT_NEAR((ins.branch(1).apply(X) - 0.3 * X).norm(), 0.0, 1e-14);
}

TEST(SequentialEmission, ClassicalMemoryInstrument) {
  // E(X) = sum_m Tr(E_m X) E_m (x) sigma_m; measuring M_o on the emitted
  // register gives Phi_o(X) = sum_m Tr(E_m X) Tr(M_o sigma_m) E_m.
  Rng rng(22);
  const std::array<DensityOperator, 2> sig{random_density(2, rng), random_density(2, rng)};
  std::vector<Mat> kraus;
  for (int m = 0; m < 2; ++m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(sig[static_cast<std::size_t>(m)].mat());
    for (int v = 0; v < 2; ++v) {
      const double lam = std::max(0.0, es.eigenvalues()(v));
      Mat k = Mat::Zero(4, 2);
      const CVec psi = es.eigenvectors().col(v);
      for (int j = 0; j < 2; ++j) k(m * 2 + j, m) = std::sqrt(lam) * psi(j);
      kraus.push_back(k);
    }
  }
  const Channel emission(2, 4, kraus);
  const Povm povm = random_povm(2, 3, rng);
  const Instrument ins = instrument_from_sequential_emission(emission, 2, povm);
  const Mat X = random_density(2, rng).mat();
  for (int o = 0; o < 3; ++o) {
    Mat expect = Mat::Zero(2, 2);
    for (int m = 0; m < 2; ++m) {
      const double q = (povm.effects()[static_cast<std::size_t>(o)].mat() * sig[static_cast<std::size_t>(m)].mat()).trace().real();
      expect(m, m) = X(m, m) * q;
    }
    EXPECT_NEAR((ins.branch(o).apply(X) - expect).norm(), 0.0, 1e-13);
  }
}

TEST(SequentialEmission, RandomEmissionIsTp) {
  Rng rng(23);
  for (int i = 0; i < 20; ++i) {
    const Channel emission = random_channel(2, 6, 3, rng);
    const Instrument ins = instrument_from_sequential_emission(emission, 3, random_povm(3, 4, rng));
    Mat total = Mat::Zero(2, 2);
    for (const auto& b : ins.branches()) total += b.effect();
    EXPECT_NEAR((total - Mat::Identity(2, 2)).norm(), 0.0, 1e-10);
  }
  EXPECT_THROW(instrument_from_sequential_emission(random_channel(2, 6, 3, rng), 2, z_projective()), DimensionError);
}

TEST(ValueOfPolicy, ZeroRewardAndBandit) {
  Rng g(24);
  const QhmmEnvironment rnd = random_environment(2, 2, 2, 3, g);
  const QhmmEnvironment zero(rnd.rho1(), rnd.channels(), rnd.instruments(), RewardTable(3, 2, 2), 1.0);
  EXPECT_EQ(value_of_policy(zero, Policy::uniform(2)).value, 0.0);

  const SicPovm sic = sic_tetrahedron();
  const DensityOperator rho = random_density(2, g);
  const QhmmEnvironment bandit = embed_maqb(rho, 1);
  double expect = 0.0;
  for (int a = 0; a < 4; ++a) expect += 0.25 * bandit_outcome_distribution(sic, rho, a)[0];
  EXPECT_NEAR(value_of_policy(bandit, Policy::uniform(4)).value, expect, 1e-14);
}

TEST(ValueOfPolicy, MonteCarloAgrees) {
  Rng g(25);
  const QhmmEnvironment env = random_environment(2, 2, 2, 3, g);
  const ValueEstimate exact = value_of_policy(env, Policy::uniform(2));
  ASSERT_TRUE(exact.exact);
  ValueOptions mc;
  mc.max_paths = 1;
  mc.allow_monte_carlo = true;
  mc.mc_samples = 1000000;
  mc.seed = 5;
  const ValueEstimate est = value_of_policy(env, Policy::uniform(2), mc);
  EXPECT_FALSE(est.exact);
  EXPECT_LE(std::abs(est.value - exact.value), 3.0 * est.std_error);
  ValueOptions guard;
  guard.max_paths = 1;
  EXPECT_THROW(value_of_policy(env, Policy::uniform(2), guard), EnumerationGuardExceeded);
}

TEST(Environment, RejectsRewardAboveBound) {
  EXPECT_THROW(QhmmEnvironment(DensityOperator::maximally_mixed(2), {}, {Instrument::luders(z_projective())},
                               RewardTable(1, 1, 2, 2.0), 1.0),
               ValidationError);
}

TEST(EnvJson, BitExactRoundTrip) {
  Rng g(26);
  const QhmmEnvironment env = random_environment(3, 2, 3, 3, g);
  const auto path = std::filesystem::temp_directory_path() / "qhmm_env_roundtrip.json";
  save_env(env, path.string());
  const QhmmEnvironment back = load_env(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(env_to_json(env).dump(), env_to_json(back).dump());
  EXPECT_EQ(back.rho1().mat(), env.rho1().mat());
  for (int a = 0; a < env.A(); ++a)
    for (int o = 0; o < env.O(); ++o) {
      const auto& k1 = env.instrument(a).branch(o).kraus();
      const auto& k2 = back.instrument(a).branch(o).kraus();
      ASSERT_EQ(k1.size(), k2.size());
      for (std::size_t i = 0; i < k1.size(); ++i) EXPECT_EQ(k1[i], k2[i]);
    }
  EXPECT_EQ(env.rewards().raw(), back.rewards().raw());
}
