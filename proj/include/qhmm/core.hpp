// Dense complex operator algebra for small quantum systems.
#pragma once

#include <Eigen/Dense>

#include <array>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace qhmm {

using cd = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

namespace tol {
inline constexpr double herm = 1e-9;
inline constexpr double trace = 1e-9;
inline constexpr double tp = 1e-9;
inline constexpr double psd = 1e-9;
// Eigenvalues below this are outside the support for log purposes.
inline constexpr double log_floor = 1e-300;
}  // namespace tol

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

class HermitianOperator {
 public:
  HermitianOperator() = default;
  // Symmetrizes, then rejects inputs further than tol::herm from Hermitian.
  explicit HermitianOperator(const Mat& m);

  static HermitianOperator zero(int dim);
  static HermitianOperator identity(int dim);

  int dim() const { return static_cast<int>(m_.rows()); }
  const Mat& mat() const { return m_; }
  double trace() const { return m_.trace().real(); }
  RVec eigenvalues() const;

 private:
  Mat m_;
};

class DensityOperator {
 public:
  DensityOperator() = default;
  explicit DensityOperator(const HermitianOperator& op);
  explicit DensityOperator(const Mat& m) : DensityOperator(HermitianOperator(m)) {}

  static DensityOperator maximally_mixed(int dim);
  static DensityOperator pure(const CVec& psi);
  // Qubit state (I + n.sigma)/2, |n| <= 1.
  static DensityOperator from_bloch(const Eigen::Vector3d& n);

  int dim() const { return op_.dim(); }
  const HermitianOperator& op() const { return op_; }
  const Mat& mat() const { return op_.mat(); }

 private:
  HermitianOperator op_;
};

// Completely positive map in Kraus form. Construction rejects maps with
// sum K^dagger K exceeding the identity; TP-ness is recorded as a flag.
class Channel {
 public:
  Channel() = default;
  Channel(int dim_in, int dim_out, std::vector<Mat> kraus);

  static Channel identity(int dim);
  static Channel unitary(const Mat& u);
  // X -> Tr(X) sigma
  static Channel replacement(const DensityOperator& sigma, int dim_in);
  // X -> Tr(M X) rho0
  static Channel measure_prepare(const HermitianOperator& effect, const DensityOperator& rho0);
  static Channel depolarizing_full(int dim);

  int dim_in() const { return din_; }
  int dim_out() const { return dout_; }
  const std::vector<Mat>& kraus() const { return kraus_; }
  bool trace_preserving() const { return tp_; }
  // sum K^dagger K
  Mat effect() const;
  Mat apply(const Mat& x) const;

 private:
  int din_ = 0;
  int dout_ = 0;
  std::vector<Mat> kraus_;
  bool tp_ = false;
};

class Povm {
 public:
  Povm() = default;
  explicit Povm(std::vector<HermitianOperator> effects);

  int outcomes() const { return static_cast<int>(effects_.size()); }
  int dim() const { return effects_.empty() ? 0 : effects_.front().dim(); }
  const std::vector<HermitianOperator>& effects() const { return effects_; }

 private:
  std::vector<HermitianOperator> effects_;
};

class Instrument {
 public:
  Instrument() = default;
  explicit Instrument(std::vector<Channel> branches);

  // Lueders instrument X -> sqrt(M) X sqrt(M).
  static Instrument luders(const Povm& povm);
  static Instrument measure_prepare(const Povm& povm, const std::vector<DensityOperator>& post);

  int outcomes() const { return static_cast<int>(branches_.size()); }
  int dim_in() const { return branches_.front().dim_in(); }
  int dim_out() const { return branches_.front().dim_out(); }
  const std::vector<Channel>& branches() const { return branches_; }
  const Channel& branch(int o) const { return branches_.at(static_cast<std::size_t>(o)); }
  Povm effective_povm() const;

 private:
  std::vector<Channel> branches_;
};

enum class Keep { A, B };

HermitianOperator apply_channel(const Channel& ch, const HermitianOperator& rho);
HermitianOperator choi_of(const Channel& ch);
HermitianOperator partial_trace(const HermitianOperator& x, int dA, int dB, Keep keep);
Mat partial_trace(const Mat& x, int dA, int dB, Keep keep);
Mat kron(const Mat& a, const Mat& b);

double trace_norm(const HermitianOperator& x);
double trace_norm(const Mat& hermitian);
// +infinity when supp(rho) is not inside supp(sigma).
double relative_entropy(const DensityOperator& rho, const DensityOperator& sigma);
double von_neumann_entropy(const DensityOperator& rho);
// Shannon entropy in nats; zero-probability terms contribute 0.
double shannon_entropy(const std::vector<double>& p);
double binary_entropy(double p);
// D(p || q) for Bernoulli laws, +infinity on support violation.
double binary_relative_entropy(double p, double q);

// Hilbert-Schmidt orthonormal Hermitian basis: I/sqrt(d) followed by the
// normalized generalized Gell-Mann matrices.
std::vector<Mat> pauli_basis(int dim);
std::array<Mat, 3> pauli_matrices();
Mat bloch_operator(const Eigen::Vector3d& n);  // n.sigma

}  // namespace qhmm
