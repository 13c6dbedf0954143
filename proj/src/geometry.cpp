#include "lauerl/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace lauerl {

LatticeConstants LatticeConstants::cubic(double a) { return {a, a, a, 90.0, 90.0, 90.0}; }

LatticeConstants LatticeConstants::tetragonal(double a, double c) {
  return {a, a, c, 90.0, 90.0, 90.0};
}

LatticeConstants LatticeConstants::hexagonal(double a, double c) {
  return {a, a, c, 90.0, 90.0, 120.0};
}

void LatticeConstants::validate() const {
  if (!(a > 0.0 && b > 0.0 && c > 0.0))
    throw std::invalid_argument("lattice lengths must be positive");
  for (double ang : {alpha, beta, gamma})
    if (!(ang > 0.0 && ang < 180.0))
      throw std::invalid_argument("lattice angles must lie in (0, 180)");
}

CrystalSystem CrystalSpec::system() const {
  switch (space_group) {
    case 221:
    case 225:
    case 229:
      return CrystalSystem::cubic;
    case 139:
      return CrystalSystem::tetragonal;
    case 191:
      return CrystalSystem::hexagonal;
    default:
      throw std::invalid_argument("unsupported space group " + std::to_string(space_group));
  }
}

void CrystalSpec::validate() const {
  lattice.validate();
  const double tol = 1e-9;
  auto near = [tol](double x, double y) { return std::abs(x - y) < tol; };
  switch (system()) {
    case CrystalSystem::cubic:
      if (!near(lattice.a, lattice.b) || !near(lattice.a, lattice.c) ||
          !near(lattice.alpha, 90.0) || !near(lattice.beta, 90.0) || !near(lattice.gamma, 90.0))
        throw std::invalid_argument("cubic space group requires a=b=c, all angles 90");
      break;
    case CrystalSystem::tetragonal:
      if (!near(lattice.a, lattice.b) || !near(lattice.alpha, 90.0) ||
          !near(lattice.beta, 90.0) || !near(lattice.gamma, 90.0))
        throw std::invalid_argument("tetragonal space group requires a=b, all angles 90");
      break;
    case CrystalSystem::hexagonal:
      if (!near(lattice.a, lattice.b) || !near(lattice.alpha, 90.0) ||
          !near(lattice.beta, 90.0) || !near(lattice.gamma, 120.0))
        throw std::invalid_argument("hexagonal space group requires a=b, alpha=beta=90, gamma=120");
      break;
  }
}

Matrix3 direct_basis(const LatticeConstants& lat) {
  lat.validate();
  const double ca = std::cos(deg_to_rad(lat.alpha));
  const double cb = std::cos(deg_to_rad(lat.beta));
  const double cg = std::cos(deg_to_rad(lat.gamma));
  const double sg = std::sin(deg_to_rad(lat.gamma));
  const double vol_frac = 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg;
  if (vol_frac <= 0.0) throw std::invalid_argument("degenerate cell: zero volume");
  Matrix3 A;
  A.col(0) = Vector3(lat.a, 0.0, 0.0);
  A.col(1) = Vector3(lat.b * cg, lat.b * sg, 0.0);
  A.col(2) = Vector3(lat.c * cb, lat.c * (ca - cb * cg) / sg,
                     lat.c * std::sqrt(vol_frac) / sg);
  return A;
}

Matrix3 reciprocal_basis(const LatticeConstants& lat) {
  const Matrix3 A = direct_basis(lat);
  const double det = A.determinant();
  if (std::abs(det) < 1e-12) throw std::invalid_argument("degenerate cell: zero volume");
  // a_i . b_j = 2 pi d_ij with both sets as columns: B = 2 pi A^{-T}.
  return 2.0 * kPi * A.transpose().inverse();
}

bool reflection_allowed(const CrystalSpec& spec, int h, int k, int l) {
  if (h == 0 && k == 0 && l == 0)
    throw std::invalid_argument("reflection_allowed: (0,0,0) is not a reflection");
  switch (spec.space_group) {
    case 221:
    case 191:
      return true;  // primitive centering
    case 229:
    case 139:
      return (h + k + l) % 2 == 0;  // body centering
    case 225: {
      const bool he = h % 2 == 0, ke = k % 2 == 0, le = l % 2 == 0;
      return (he && ke && le) || (!he && !ke && !le);  // face centering
    }
    default:
      throw std::invalid_argument("unsupported space group " +
                                  std::to_string(spec.space_group));
  }
}

Matrix3 rotation_matrix(Axis axis, double angle_deg) {
  if (!std::isfinite(angle_deg))
    throw std::invalid_argument("rotation_matrix: angle must be finite");
  const double c = std::cos(deg_to_rad(angle_deg));
  const double s = std::sin(deg_to_rad(angle_deg));
  Matrix3 R;
  switch (axis) {
    case Axis::x:
      R << 1, 0, 0, 0, c, -s, 0, s, c;
      break;
    case Axis::y:
      R << c, 0, s, 0, 1, 0, -s, 0, c;
      break;
    case Axis::z:
      R << c, -s, 0, s, c, 0, 0, 0, 1;
      break;
  }
  return R;
}

Matrix3 initial_orientation(double theta0_deg, double chi0_deg, double phi0_deg) {
  return rotation_matrix(Axis::y, theta0_deg) * rotation_matrix(Axis::x, chi0_deg) *
         rotation_matrix(Axis::z, phi0_deg);
}

Matrix3 compose_orientation(const Matrix3& omega0, double theta_cum_deg,
                            double phi_cum_deg) {
  return omega0 * rotation_matrix(Axis::y, theta_cum_deg) *
         rotation_matrix(Axis::z, phi_cum_deg) * omega0.transpose();
}

double angular_distance_deg(const Matrix3& M, const TargetSet& targets,
                            const Vector3& beam) {
  if (targets.axes.empty())
    throw std::invalid_argument("angular_distance: empty target set");
  const Vector3 b = beam.normalized();
  double best = kPi;
  for (const Vector3& v : targets.axes) {
    double d = std::abs((M * v).dot(b));
    if (d > 1.0) d = 1.0;
    const double ang = std::acos(d);
    if (ang < best) best = ang;
  }
  return rad_to_deg(best);
}

TargetSet target_set(const CrystalSpec& spec, TargetMode mode) {
  TargetSet out;
  out.mode = mode;
  if (mode == TargetMode::c_axis_only) {
    out.axes = {Vector3(0, 0, 1), Vector3(0, 0, -1)};
    return out;
  }
  if (spec.system() != CrystalSystem::cubic)
    throw std::invalid_argument("cubic-family targets require a cubic space group");
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      for (int sz : {-1, 1})
        out.axes.push_back(Vector3(sx, sy, sz).normalized());  // <111>: 8
  const int signs[2] = {-1, 1};
  for (int s : signs) {
    out.axes.push_back(Vector3(s, 0, 0));  // <001>: 6
    out.axes.push_back(Vector3(0, s, 0));
    out.axes.push_back(Vector3(0, 0, s));
  }
  for (int s1 : signs)
    for (int s2 : signs) {  // <101>: 12
      out.axes.push_back(Vector3(s1, s2, 0).normalized());
      out.axes.push_back(Vector3(s1, 0, s2).normalized());
      out.axes.push_back(Vector3(0, s1, s2).normalized());
    }
  return out;
}

Matrix3 align_axis_to(const Vector3& v_in, const Vector3& to_in) {
  const Vector3 v = v_in.normalized();
  const Vector3 t = to_in.normalized();
  const Vector3 a = v.cross(t);
  const double s2 = a.squaredNorm();
  const double c = v.dot(t);
  if (s2 < 1e-24) {
    if (c > 0.0) return Matrix3::Identity();
    // Antiparallel: rotate 180 degrees about any axis perpendicular to v.
    Vector3 p = std::abs(v.x()) < 0.9 ? Vector3(1, 0, 0) : Vector3(0, 1, 0);
    p = (p - p.dot(v) * v).normalized();
    return 2.0 * p * p.transpose() - Matrix3::Identity();
  }
  Matrix3 ax;
  ax << 0, -a.z(), a.y(), a.z(), 0, -a.x(), -a.y(), a.x(), 0;
  return Matrix3::Identity() + ax + ax * ax * ((1.0 - c) / s2);
}

Eigen::Vector2d stereographic_project(const Vector3& v) {
  if (v.z() <= -1.0 + 1e-12)
    throw std::domain_error("stereographic_project: antipode (v_z = -1) is not projectable");
  return Eigen::Vector2d(v.x() / (1.0 + v.z()), v.y() / (1.0 + v.z()));
}

}  // namespace lauerl
