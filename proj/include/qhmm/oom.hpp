// Recovery maps, observable operators and OOM trajectory likelihoods.
#pragma once

#include "qhmm/env.hpp"

#include <json.hpp>

#include <memory>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <variant>

namespace qhmm {

inline constexpr double kRecoveryTol = 1e-8;
inline constexpr double kPinvCutoff = 1e-10;

// R(|o><o|) is stored as column o of `map`, the column-major vectorization of
// an (S*O) x (S*O) operator on memory (x) register.
struct RecoveryMap {
  ActionId action = 0;
  int S = 0;
  int O = 0;
  Mat map;
  double residual = 0.0;

  Mat image(int o) const;
  Mat apply(const RVec& d) const;
};

struct NotUndercomplete {
  ActionId action = 0;
  double residual = 0.0;
};

struct NotUndercompleteError : std::runtime_error {
  NotUndercompleteError(ActionId a, double r)
      : std::runtime_error("instrument of action " + std::to_string(a) + " is not undercomplete (residual " + std::to_string(r) + ")"),
        info{a, r} {}
  NotUndercomplete info;
};

using RecoveryResult = std::variant<RecoveryMap, NotUndercomplete>;

// P(X) = sum_o Phi_o(X) (x) |o><o|
Mat instrument_composite(const Instrument& ins, const Mat& x);
// Tr_S P(X) as the vector of branch traces.
RVec branch_traces(const Instrument& ins, const Mat& x);

// Minimum-Frobenius-norm solution of R o Tr_S o P = P.
RecoveryResult build_recovery_map(const Instrument& ins, ActionId action = 0);
// Diagonal-preserving instruments: R(d) = P(diag(O^+ d)) with O(o|s) = Tr Phi_o(|s><s|).
RecoveryResult build_recovery_map_classical(const Instrument& ins, ActionId action = 0);
// max over a spanning set of ||(R o Tr_S o P - P)(B)||_1
double recovery_residual(const RecoveryMap& r, const Instrument& ins);
// O(o|s) for a diagonal-preserving instrument.
RMat classical_observation_matrix(const Instrument& ins);

double kappa_uc(const std::vector<RecoveryMap>& maps);

// A_l(o, a, a') on diagonal coordinates; `channel` may be null (no memory evolution).
RMat oom_operator(const Channel* channel, const RecoveryMap& ra, int o, const Instrument& next);
RMat oom_operator(const QhmmEnvironment& env, const std::vector<RecoveryMap>& maps_by_instrument, int l, int o, ActionId a, ActionId a_next);

enum class RecoveryMethod { Generic, Classical };

// Lazily built recovery maps, one per instrument. Thread-safe.
class RecoveryCache {
 public:
  RecoveryCache(std::shared_ptr<const std::vector<Instrument>> instruments, RecoveryMethod method = RecoveryMethod::Generic);

  // Throws NotUndercompleteError.
  const RecoveryMap& get(int instrument_index) const;
  std::optional<NotUndercomplete> failure(int instrument_index) const;
  const std::vector<Instrument>& instruments() const { return *instruments_; }
  RecoveryMethod method() const { return method_; }

 private:
  std::shared_ptr<const std::vector<Instrument>> instruments_;
  RecoveryMethod method_;
  mutable std::mutex mu_;
  mutable std::vector<std::optional<RecoveryResult>> slots_;
};

class OomModel {
 public:
  // Recovery maps may be shared between models whose instruments coincide.
  explicit OomModel(std::shared_ptr<const QhmmEnvironment> env, std::shared_ptr<RecoveryCache> recovery = nullptr);

  const QhmmEnvironment& env() const { return *env_; }
  const RecoveryCache& recovery() const { return *recovery_; }
  // a(a) = Tr_S P^(a)(rho1)
  const RVec& initial_vector(ActionId a) const;
  // A_l(o, a, a_next) for l in [0, L-2].
  const RMat& op(int l, int o, ActionId a, ActionId a_next) const;
  // max over all instruments; builds every recovery map.
  double kappa_uc() const;
  // Checks every instrument; returns the first failure.
  std::optional<NotUndercomplete> undercomplete_failure() const;

 private:
  std::shared_ptr<const QhmmEnvironment> env_;
  std::shared_ptr<RecoveryCache> recovery_;
  std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
  mutable std::unordered_map<std::uint64_t, RMat> ops_;
  mutable std::unordered_map<int, RVec> init_;
};

// e_{o_n}^T A_{n-1} ... A_1 a(a_1) for a trajectory of length n.
double oom_trajectory_prob(const OomModel& oom, const Trajectory& traj);
double oom_trajectory_prob(const OomModel& oom, const std::vector<ActionId>& actions, const std::vector<int>& outcomes);

// Rank of the stacked differences of vectorized effect tuples.
int spanning_dimension(const std::vector<Povm>& actions);

// Recovery maps, initial vectors, kappa and (when A is small) every operator.
nlohmann::json oom_to_json(const OomModel& oom, int max_actions_for_operators = 16);

}  // namespace qhmm
