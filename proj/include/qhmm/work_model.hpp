// Two-state classical memory emitting known qubit states; shared by the
// planner and the work-extraction module.
#pragma once

#include "qhmm/core.hpp"

#include <array>

namespace qhmm {

struct Belief {
  std::array<double, 2> probs{0.5, 0.5};

  static Belief from_eta1(double eta1) { return Belief{{eta1, 1.0 - eta1}}; }
  double operator[](int m) const { return probs[static_cast<std::size_t>(m)]; }
  void validate() const;
};

// Measurement basis {|psi>, |psi_perp>} by angle in the emission plane, plus
// the purity lambda of the tailored state rho_a = lambda|psi><psi| + (1-lambda)|psi_perp><psi_perp|.
struct WorkAction {
  double basis_angle = 0.0;
  double purity = 0.5;
};

struct EmissionModel {
  std::array<DensityOperator, 2> sigmas;
  Eigen::Matrix2d T;  // T(m'|m) stored as T(m', m); columns sum to 1
  Belief initial;
  double inv_temperature = 1.0;

  // [[theta, 1-theta], [1-theta, theta]]
  static Eigen::Matrix2d symmetric_transition(double theta);
  // Throws on invalid T or belief; returns false when sigma_1 == sigma_2.
  bool validate() const;
};

Eigen::Vector3d bloch_vector(const DensityOperator& rho);

// Orthonormal basis (u, v) of the plane spanned by the Bloch vectors of the
// two emitted states; d(phi) = cos(phi) u + sin(phi) v.
class EmissionPlane {
 public:
  explicit EmissionPlane(const std::array<DensityOperator, 2>& sigmas);
  Eigen::Vector3d direction(double angle) const;
  // |psi><psi| for the given basis angle.
  Mat projector(double angle) const;
  // <psi|sigma_m|psi> = Pr(o = 0 | m)
  double overlap(double angle, int m) const;

 private:
  Eigen::Vector3d u_, v_;
  std::array<Eigen::Vector3d, 2> n_;
};

std::vector<double> uniform_angles(int n);  // k*pi/n, k < n
double clamp_purity(double lambda, double eps);
DensityOperator tailored_state(const EmissionPlane& plane, const WorkAction& a);

}  // namespace qhmm
