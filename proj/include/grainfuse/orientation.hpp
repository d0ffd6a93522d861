#pragma once

// Rotation representations used to encode EBSD orientation maps: unit
// quaternions, the equal-volume cubochoric cube, and crystal-symmetry-aware
// disorientation.

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

namespace grainfuse::orientation {

/// Scalar-first unit quaternion (w, x, y, z).
struct Quaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  static Quaternion identity() { return {}; }
  static Quaternion from_axis_angle(std::array<double, 3> axis, double angle);

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quaternion conjugate() const { return {w, -x, -y, -z}; }
  Quaternion normalized() const;
  /// Representative of {q, -q} with w > 0 (ties on w = 0 broken by the first
  /// non-zero vector component being positive).
  Quaternion canonical() const;
  /// Rotation angle in [0, pi].
  double angle() const;
  /// Active rotation of a vector.
  std::array<double, 3> rotate(std::array<double, 3> v) const;

  friend Quaternion operator*(const Quaternion& a, const Quaternion& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
  }
  friend Quaternion operator-(const Quaternion& q) { return {-q.w, -q.x, -q.y, -q.z}; }
};

/// Point in the cubochoric cube [-a/2, a/2]^3 with a = pi^(2/3).
struct CubochoricCoord {
  double c1 = 0.0, c2 = 0.0, c3 = 0.0;
};

/// Half edge of the cubochoric cube, pi^(2/3) / 2.
inline const double kCubeHalfEdge = 0.5 * std::pow(std::numbers::pi, 2.0 / 3.0);
/// Radius of the homochoric ball, (3 pi / 4)^(1/3).
inline const double kHomochoricRadius = std::cbrt(0.75 * std::numbers::pi);

std::array<double, 3> cu2ho(const CubochoricCoord& c);
CubochoricCoord ho2cu(const std::array<double, 3>& h);

/// Homochoric vector -> rotation angle in [0, pi] (bisection on the radius map).
double homochoric_angle(double radius);

Quaternion cu2qu(const CubochoricCoord& c);
CubochoricCoord qu2cu(const Quaternion& q);

std::array<double, 3> normalize_cu(const CubochoricCoord& c);
CubochoricCoord denormalize_cu(const std::array<double, 3>& v);

/// Proper rotation point group as an explicit operator table.
struct SymmetryGroup {
  std::string name;
  std::vector<Quaternion> operators;

  static const SymmetryGroup& cubic();
  static const SymmetryGroup& hexagonal();
  static const SymmetryGroup& triclinic();
  /// Accepts "cubic", "cubic-O", "hexagonal", "hexagonal-D6", "triclinic",
  /// "triclinic-identity", "identity". Throws ConfigError otherwise.
  static const SymmetryGroup& by_name(std::string_view name);
};

/// Minimum misorientation angle between q1 and q2 over the crystal symmetry.
double disorientation(const Quaternion& q1, const Quaternion& q2, const SymmetryGroup& sym);

}  // namespace grainfuse::orientation
