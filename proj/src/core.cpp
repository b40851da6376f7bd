#include "qhmm/core.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>

namespace qhmm {

namespace {

double scale_of(const Mat& m) { return std::max(1.0, m.cwiseAbs().maxCoeff()); }

RVec herm_eigenvalues(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

}  // namespace

HermitianOperator::HermitianOperator(const Mat& m) {
  if (m.rows() != m.cols() || m.rows() == 0) throw DimensionError("HermitianOperator: matrix must be square and non-empty");
  const Mat adj = m.adjoint();
  double dev = (m - adj).cwiseAbs().maxCoeff();
  if (dev > tol::herm * scale_of(m)) throw ValidationError("HermitianOperator: input is not Hermitian (deviation " + std::to_string(dev) + ")");
  m_ = (m + adj) / 2.0;
}

HermitianOperator HermitianOperator::zero(int dim) { return HermitianOperator(Mat::Zero(dim, dim)); }
HermitianOperator HermitianOperator::identity(int dim) { return HermitianOperator(Mat::Identity(dim, dim)); }

RVec HermitianOperator::eigenvalues() const { return herm_eigenvalues(m_); }

DensityOperator::DensityOperator(const HermitianOperator& op) : op_(op) {
  double tr = op.trace();
  if (std::abs(tr - 1.0) > tol::trace) throw ValidationError("DensityOperator: trace " + std::to_string(tr) + " != 1");
  double lo = op.eigenvalues().minCoeff();
  if (lo < -tol::psd) throw ValidationError("DensityOperator: negative eigenvalue " + std::to_string(lo));
}

DensityOperator DensityOperator::maximally_mixed(int dim) {
  return DensityOperator(Mat(Mat::Identity(dim, dim) / static_cast<double>(dim)));
}

DensityOperator DensityOperator::pure(const CVec& psi) {
  CVec v = psi / psi.norm();
  return DensityOperator(Mat(v * v.adjoint()));
}

DensityOperator DensityOperator::from_bloch(const Eigen::Vector3d& n) {
  if (n.norm() > 1.0 + 1e-12) throw ValidationError("Bloch vector longer than 1");
  return DensityOperator(Mat((Mat::Identity(2, 2) + bloch_operator(n)) / 2.0));
}

Channel::Channel(int dim_in, int dim_out, std::vector<Mat> kraus) : din_(dim_in), dout_(dim_out), kraus_(std::move(kraus)) {
  if (din_ <= 0 || dout_ <= 0) throw DimensionError("Channel: dimensions must be positive");
  if (kraus_.empty()) throw ValidationError("Channel: empty Kraus list");
  for (const auto& k : kraus_) {
    if (k.rows() != dout_ || k.cols() != din_) throw DimensionError("Channel: Kraus operator has wrong shape");
  }
  Mat e = effect();
  Mat gap = Mat::Identity(din_, din_) - e;
  double lo = herm_eigenvalues((gap + gap.adjoint()) / 2.0).minCoeff();
  if (lo < -tol::tp) throw ValidationError("Channel: sum of K^dagger K exceeds identity");
  tp_ = gap.cwiseAbs().maxCoeff() <= tol::tp;
}

Channel Channel::identity(int dim) { return Channel(dim, dim, {Mat::Identity(dim, dim)}); }

Channel Channel::unitary(const Mat& u) { return Channel(static_cast<int>(u.cols()), static_cast<int>(u.rows()), {u}); }

namespace {

// Kraus operators of X -> Tr(E X) rho0 for PSD E.
std::vector<Mat> measure_prepare_kraus(const Mat& e, const Mat& rho0) {
  Eigen::SelfAdjointEigenSolver<Mat> ee(e), er(rho0);
  const int din = static_cast<int>(e.rows());
  const int dout = static_cast<int>(rho0.rows());
  std::vector<Mat> out;
  for (int j = 0; j < dout; ++j) {
    double pj = er.eigenvalues()(j);
    if (pj <= 1e-15) continue;
    for (int k = 0; k < din; ++k) {
      double mk = ee.eigenvalues()(k);
      if (mk <= 1e-15) continue;
      out.push_back(std::sqrt(pj * mk) * er.eigenvectors().col(j) * ee.eigenvectors().col(k).adjoint());
    }
  }
  if (out.empty()) out.push_back(Mat::Zero(dout, din));
  return out;
}

}  // namespace

Channel Channel::replacement(const DensityOperator& sigma, int dim_in) {
  return Channel(dim_in, sigma.dim(), measure_prepare_kraus(Mat::Identity(dim_in, dim_in), sigma.mat()));
}

Channel Channel::measure_prepare(const HermitianOperator& effect, const DensityOperator& rho0) {
  return Channel(effect.dim(), rho0.dim(), measure_prepare_kraus(effect.mat(), rho0.mat()));
}

Channel Channel::depolarizing_full(int dim) { return replacement(DensityOperator::maximally_mixed(dim), dim); }

Mat Channel::effect() const {
  Mat e = Mat::Zero(din_, din_);
  for (const auto& k : kraus_) e.noalias() += k.adjoint() * k;
  return e;
}

Mat Channel::apply(const Mat& x) const {
  if (x.rows() != din_ || x.cols() != din_) throw DimensionError("Channel::apply: dimension mismatch");
  Mat out = Mat::Zero(dout_, dout_);
  for (const auto& k : kraus_) out.noalias() += k * x * k.adjoint();
  return out;
}

Povm::Povm(std::vector<HermitianOperator> effects) : effects_(std::move(effects)) {
  if (effects_.empty()) throw ValidationError("Povm: no effects");
  const int d = effects_.front().dim();
  Mat sum = Mat::Zero(d, d);
  for (const auto& e : effects_) {
    if (e.dim() != d) throw DimensionError("Povm: effects have different dimensions");
    if (e.eigenvalues().minCoeff() < -tol::psd) throw ValidationError("Povm: effect is not PSD");
    sum += e.mat();
  }
  if ((sum - Mat::Identity(d, d)).cwiseAbs().maxCoeff() > tol::tp) throw ValidationError("Povm: effects do not sum to identity");
}

Instrument::Instrument(std::vector<Channel> branches) : branches_(std::move(branches)) {
  if (branches_.empty()) throw ValidationError("Instrument: no branches");
  const int din = branches_.front().dim_in();
  const int dout = branches_.front().dim_out();
  Mat sum = Mat::Zero(din, din);
  for (const auto& b : branches_) {
    if (b.dim_in() != din || b.dim_out() != dout) throw DimensionError("Instrument: branch dimension mismatch");
    sum += b.effect();
  }
  if ((sum - Mat::Identity(din, din)).cwiseAbs().maxCoeff() > tol::tp) throw ValidationError("Instrument: branches do not sum to a TP map");
}

Instrument Instrument::luders(const Povm& povm) {
  std::vector<Channel> br;
  for (const auto& e : povm.effects()) {
    Eigen::SelfAdjointEigenSolver<Mat> es(e.mat());
    RVec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Mat root = es.eigenvectors() * ev.cast<cd>().asDiagonal() * es.eigenvectors().adjoint();
    br.emplace_back(e.dim(), e.dim(), std::vector<Mat>{root});
  }
  return Instrument(std::move(br));
}

Instrument Instrument::measure_prepare(const Povm& povm, const std::vector<DensityOperator>& post) {
  if (post.size() != povm.effects().size()) throw DimensionError("Instrument::measure_prepare: one post-measurement state per outcome");
  std::vector<Channel> br;
  for (std::size_t o = 0; o < post.size(); ++o) br.push_back(Channel::measure_prepare(povm.effects()[o], post[o]));
  return Instrument(std::move(br));
}

Povm Instrument::effective_povm() const {
  std::vector<HermitianOperator> effects;
  for (const auto& b : branches_) effects.emplace_back(b.effect());
  return Povm(std::move(effects));
}

HermitianOperator apply_channel(const Channel& ch, const HermitianOperator& rho) {
  if (rho.dim() != ch.dim_in()) throw DimensionError("apply_channel: dimension mismatch");
  return HermitianOperator(ch.apply(rho.mat()));
}

HermitianOperator choi_of(const Channel& ch) {
  const int din = ch.dim_in();
  const int dout = ch.dim_out();
  Mat j = Mat::Zero(dout * din, dout * din);
  for (int a = 0; a < din; ++a) {
    for (int b = 0; b < din; ++b) {
      Mat eab = Mat::Zero(din, din);
      eab(a, b) = 1.0;
      j += kron(ch.apply(eab), eab);
    }
  }
  return HermitianOperator(j);
}

Mat kron(const Mat& a, const Mat& b) {
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

Mat partial_trace(const Mat& x, int dA, int dB, Keep keep) {
  if (x.rows() != dA * dB || x.cols() != dA * dB) throw DimensionError("partial_trace: dimension mismatch");
  if (keep == Keep::A) {
    Mat out = Mat::Zero(dA, dA);
    for (int i = 0; i < dA; ++i)
      for (int j = 0; j < dA; ++j)
        for (int k = 0; k < dB; ++k) out(i, j) += x(i * dB + k, j * dB + k);
    return out;
  }
  Mat out = Mat::Zero(dB, dB);
  for (int k = 0; k < dA; ++k) out += x.block(k * dB, k * dB, dB, dB);
  return out;
}

HermitianOperator partial_trace(const HermitianOperator& x, int dA, int dB, Keep keep) {
  return HermitianOperator(partial_trace(x.mat(), dA, dB, keep));
}

double trace_norm(const Mat& hermitian) { return herm_eigenvalues((hermitian + hermitian.adjoint()) / 2.0).cwiseAbs().sum(); }

double trace_norm(const HermitianOperator& x) { return trace_norm(x.mat()); }

double relative_entropy(const DensityOperator& rho, const DensityOperator& sigma) {
  if (rho.dim() != sigma.dim()) throw DimensionError("relative_entropy: dimension mismatch");
  Eigen::SelfAdjointEigenSolver<Mat> er(rho.mat()), es(sigma.mat());
  const RVec pr = er.eigenvalues().cwiseMax(0.0);
  const RVec ps = es.eigenvalues().cwiseMax(0.0);
  // overlaps |<r_i|s_j>|^2
  const RMat w = (er.eigenvectors().adjoint() * es.eigenvectors()).cwiseAbs2();
  double d = 0.0;
  for (int i = 0; i < pr.size(); ++i) {
    if (pr(i) < tol::log_floor) continue;
    d += pr(i) * std::log(pr(i));
    for (int j = 0; j < ps.size(); ++j) {
      if (w(i, j) < 1e-14) continue;
      if (ps(j) < tol::log_floor) return std::numeric_limits<double>::infinity();
      d -= pr(i) * w(i, j) * std::log(ps(j));
    }
  }
  return d;
}

double von_neumann_entropy(const DensityOperator& rho) {
  const RVec ev = rho.op().eigenvalues();
  double s = 0.0;
  for (int i = 0; i < ev.size(); ++i)
    if (ev(i) >= tol::log_floor) s -= ev(i) * std::log(ev(i));
  return s;
}

double shannon_entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

double binary_entropy(double p) { return shannon_entropy({p, 1.0 - p}); }

double binary_relative_entropy(double p, double q) {
  double d = 0.0;
  const double ps[2] = {p, 1.0 - p};
  const double qs[2] = {q, 1.0 - q};
  for (int i = 0; i < 2; ++i) {
    if (ps[i] <= 0.0) continue;
    if (qs[i] < tol::log_floor) return std::numeric_limits<double>::infinity();
    d += ps[i] * std::log(ps[i] / qs[i]);
  }
  return d;
}

std::vector<Mat> pauli_basis(int dim) {
  std::vector<Mat> basis;
  basis.push_back(Mat::Identity(dim, dim) / std::sqrt(static_cast<double>(dim)));
  const double r2 = std::sqrt(2.0);
  for (int j = 0; j < dim; ++j) {
    for (int k = j + 1; k < dim; ++k) {
      Mat s = Mat::Zero(dim, dim);
      s(j, k) = s(k, j) = 1.0 / r2;
      basis.push_back(s);
      Mat a = Mat::Zero(dim, dim);
      a(j, k) = cd(0, -1.0 / r2);
      a(k, j) = cd(0, 1.0 / r2);
      basis.push_back(a);
    }
  }
  for (int l = 1; l < dim; ++l) {
    Mat d = Mat::Zero(dim, dim);
    const double norm = std::sqrt(static_cast<double>(l * (l + 1)));
    for (int j = 0; j < l; ++j) d(j, j) = 1.0 / norm;
    d(l, l) = -static_cast<double>(l) / norm;
    basis.push_back(d);
  }
  return basis;
}

std::array<Mat, 3> pauli_matrices() {
  Mat x(2, 2), y(2, 2), z(2, 2);
  x << 0, 1, 1, 0;
  y << 0, cd(0, -1), cd(0, 1), 0;
  z << 1, 0, 0, -1;
  return {x, y, z};
}

Mat bloch_operator(const Eigen::Vector3d& n) {
  const auto p = pauli_matrices();
  return n(0) * p[0] + n(1) * p[1] + n(2) * p[2];
}

}  // namespace qhmm
