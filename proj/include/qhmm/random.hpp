// Seeded random streams and random quantum objects.
#pragma once

#include "qhmm/core.hpp"

#include <cstdint>
#include <random>

namespace qhmm {

// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(mix64(seed)) {}

  std::uint64_t next() { return eng_(); }
  // 53-bit uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double normal() { return normal_(eng_); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
  bool bernoulli(double p) { return uniform() < p; }
  Rng split(std::uint64_t stream) const { return Rng(derive_seed(seed_tag(), stream)); }

 private:
  std::uint64_t seed_tag() const;
  std::mt19937_64 eng_;
  std::normal_distribution<double> normal_;
};

// Inverse-CDF draw over weights in index order. Weights need not sum to 1.
int sample_index(const std::vector<double>& weights, Rng& rng);

Mat random_ginibre(int rows, int cols, Rng& rng);
Mat random_unitary(int dim, Rng& rng);
DensityOperator random_density(int dim, Rng& rng, int rank = -1);
// CPTP map from a random isometry dim_in -> dim_out * n_kraus.
Channel random_channel(int dim_in, int dim_out, int n_kraus, Rng& rng);
Povm random_povm(int dim, int outcomes, Rng& rng);
HermitianOperator random_hermitian(int dim, Rng& rng);
// Column-stochastic matrix with Dirichlet(1) columns.
RMat random_stochastic(int rows, int cols, Rng& rng);

}  // namespace qhmm
