#include "qhmm/random.hpp"

#include <Eigen/QR>

#include <cmath>

namespace qhmm {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) { return mix64(mix64(root) ^ mix64(stream + 0x632be59bd9b4e019ULL)); }

std::uint64_t Rng::seed_tag() const {
  // copy so that split() does not advance this stream
  std::mt19937_64 e = eng_;
  return e();
}

int sample_index(const std::vector<double>& weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw std::invalid_argument("sample_index: weights sum to zero");
  const double u = rng.uniform() * total;
  double acc = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last = static_cast<int>(i);
    if (u < acc) return last;
  }
  return last;
}

Mat random_ginibre(int rows, int cols, Rng& rng) {
  Mat g(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) g(i, j) = cd(rng.normal(), rng.normal()) / std::sqrt(2.0);
  return g;
}

Mat random_unitary(int dim, Rng& rng) {
  Mat g = random_ginibre(dim, dim, rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();
  Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < dim; ++i) {
    cd d = r(i, i);
    q.col(i) *= d / std::abs(d);
  }
  return q;
}

DensityOperator random_density(int dim, Rng& rng, int rank) {
  if (rank <= 0) rank = dim;
  Mat g = random_ginibre(dim, rank, rng);
  Mat rho = g * g.adjoint();
  rho /= rho.trace().real();
  return DensityOperator(rho);
}

Channel random_channel(int dim_in, int dim_out, int n_kraus, Rng& rng) {
  const int big = dim_out * n_kraus;
  Mat u = random_unitary(big >= dim_in ? big : dim_in, rng);
  Mat v = u.topLeftCorner(big, dim_in);
  if (big < dim_in) throw DimensionError("random_channel: not enough Kraus operators");
  std::vector<Mat> kraus;
  for (int k = 0; k < n_kraus; ++k) kraus.push_back(v.block(k * dim_out, 0, dim_out, dim_in));
  return Channel(dim_in, dim_out, std::move(kraus));
}

Povm random_povm(int dim, int outcomes, Rng& rng) {
  std::vector<Mat> raw;
  Mat total = Mat::Zero(dim, dim);
  for (int o = 0; o < outcomes; ++o) {
    Mat g = random_ginibre(dim, dim, rng);
    raw.push_back(g * g.adjoint());
    total += raw.back();
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(total);
  Mat inv_root = es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().cast<cd>().asDiagonal() * es.eigenvectors().adjoint();
  std::vector<HermitianOperator> effects;
  for (auto& m : raw) effects.emplace_back(Mat(inv_root * m * inv_root));
  return Povm(std::move(effects));
}

HermitianOperator random_hermitian(int dim, Rng& rng) {
  Mat g = random_ginibre(dim, dim, rng);
  return HermitianOperator(Mat((g + g.adjoint()) / 2.0));
}

RMat random_stochastic(int rows, int cols, Rng& rng) {
  RMat m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < rows; ++i) {
      m(i, j) = -std::log(1.0 - rng.uniform());
      s += m(i, j);
    }
    m.col(j) /= s;
  }
  return m;
}

}  // namespace qhmm
