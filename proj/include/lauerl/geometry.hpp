#pragma once

#include <Eigen/Dense>
#include <vector>

namespace lauerl {

using Matrix3 = Eigen::Matrix3d;
using Vector3 = Eigen::Vector3d;

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * (kPi / 180.0); }
inline double rad_to_deg(double rad) { return rad * (180.0 / kPi); }

enum class CrystalSystem { cubic, tetragonal, hexagonal };

// Cell parameters: lengths in Angstrom, angles in degrees.
struct LatticeConstants {
  double a = 1.0, b = 1.0, c = 1.0;
  double alpha = 90.0, beta = 90.0, gamma = 90.0;

  static LatticeConstants cubic(double a);
  static LatticeConstants tetragonal(double a, double c);
  static LatticeConstants hexagonal(double a, double c);

  // Throws std::invalid_argument on non-positive lengths or angles outside
  // (0, 180).
  void validate() const;
};

// Supported space groups: 221 (Pm-3m), 225 (Fm-3m), 229 (Im-3m),
// 191 (P6/mmm), 139 (I4/mmm).
struct CrystalSpec {
  int space_group = 221;
  LatticeConstants lattice = LatticeConstants::cubic(9.0);

  CrystalSystem system() const;
  // Checks the space group is supported and the cell matches its system
  // (cubic a=b=c all 90; tetragonal a=b all 90; hexagonal a=b, gamma=120).
  void validate() const;
};

enum class TargetMode { c_axis_only, all_cubic_high_symmetry };

// Unit axes in the crystal frame, closed under sign flip.
struct TargetSet {
  std::vector<Vector3> axes;
  TargetMode mode = TargetMode::c_axis_only;
};

enum class Axis { x, y, z };

// Direct lattice vectors a1, a2, a3 as matrix columns, with a1 along x and
// a2 in the xy-plane.
Matrix3 direct_basis(const LatticeConstants& lattice);

// Reciprocal vectors b1, b2, b3 as columns, satisfying a_i . b_j = 2 pi d_ij.
// Throws on a degenerate (near-zero volume) cell.
Matrix3 reciprocal_basis(const LatticeConstants& lattice);

// Structure-factor extinction rule for the group's Bravais centering
// (mono-atomic basis): P groups always allowed, I groups require h+k+l even,
// F groups require h,k,l all even or all odd. Requires (h,k,l) != 0.
bool reflection_allowed(const CrystalSpec& spec, int h, int k, int l);

// Proper rotation about a lab axis, right-hand rule.
Matrix3 rotation_matrix(Axis axis, double angle_deg);

// Omega_0 = R_y(theta0) R_x(chi0) R_z(phi0).
Matrix3 initial_orientation(double theta0_deg, double chi0_deg, double phi0_deg);

// Omega_t = Omega_0 R_y(theta_cum) R_z(phi_cum) Omega_0^T, where the angles
// are cumulative sums of executed actions.
Matrix3 compose_orientation(const Matrix3& omega0, double theta_cum_deg,
                            double phi_cum_deg);

// min over target axes v of acos(clamp(|(M v) . beam|, 0, 1)), in degrees.
// The absolute value makes +v and -v (Friedel pair) equivalent.
double angular_distance_deg(const Matrix3& M, const TargetSet& targets,
                            const Vector3& beam);

// c_axis_only -> {(0,0,1), (0,0,-1)}; all_cubic_high_symmetry -> the 26
// signed members of the <001>, <101>, <111> families (cubic specs only).
TargetSet target_set(const CrystalSpec& spec, TargetMode mode);

// Rotation R with R v = to, for unit vectors; the minimal-angle choice.
Matrix3 align_axis_to(const Vector3& v, const Vector3& to);

// (X, Y) = (v_x, v_y) / (1 + v_z). Throws std::domain_error at the antipode
// (v_z <= -1 + eps).
Eigen::Vector2d stereographic_project(const Vector3& v);

}  // namespace lauerl
