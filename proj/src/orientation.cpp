#include "grainfuse/orientation.hpp"

#include <algorithm>
#include <limits>

#include "grainfuse/errors.hpp"

namespace grainfuse::orientation {

namespace {

constexpr double kPi = std::numbers::pi;

// Internal cube edge used by the square-to-disk step, pi^(5/6) / 6^(1/6).
const double kInnerHalfEdge = 0.5 * std::pow(kPi, 5.0 / 6.0) / std::pow(6.0, 1.0 / 6.0);
const double kScale = kInnerHalfEdge / kCubeHalfEdge;  // inner cube / cubochoric cube
const double kPrek = kHomochoricRadius * std::pow(2.0, 0.25) / kInnerHalfEdge;
const double kPref = std::sqrt(6.0 / kPi);
const double kSqrt2 = std::numbers::sqrt2;
const double kSqrtPi = std::sqrt(kPi);
const double kPi12 = kPi / 12.0;

double sgn(double v) { return v < 0.0 ? -1.0 : 1.0; }

// Which of the six square pyramids (apex at origin, base on a cube face)
// contains p. First match wins on shared faces.
int pyramid(const std::array<double, 3>& p) {
  const double x = p[0], y = p[1], z = p[2];
  if (std::abs(x) <= z && std::abs(y) <= z) return 1;
  if (std::abs(x) <= -z && std::abs(y) <= -z) return 2;
  if (std::abs(z) <= x && std::abs(y) <= x) return 3;
  if (std::abs(z) <= -x && std::abs(y) <= -x) return 4;
  if (std::abs(x) <= y && std::abs(z) <= y) return 5;
  return 6;
}

// Rotate coordinates so the pyramid axis becomes +-z.
std::array<double, 3> to_pyramid_frame(const std::array<double, 3>& p, int pyr) {
  switch (pyr) {
    case 3:
    case 4: return {p[1], p[2], p[0]};
    case 5:
    case 6: return {p[2], p[0], p[1]};
    default: return p;
  }
}

std::array<double, 3> from_pyramid_frame(const std::array<double, 3>& p, int pyr) {
  switch (pyr) {
    case 3:
    case 4: return {p[2], p[0], p[1]};
    case 5:
    case 6: return {p[1], p[2], p[0]};
    default: return p;
  }
}

// omega - sin(omega) without cancellation for small angles.
double omega_minus_sin(double omega) {
  if (omega < 1e-2) {
    const double w2 = omega * omega;
    return omega * w2 / 6.0 * (1.0 - w2 / 20.0 * (1.0 - w2 / 42.0 * (1.0 - w2 / 72.0)));
  }
  return omega - std::sin(omega);
}

double homochoric_radius(double omega) { return std::cbrt(0.75 * omega_minus_sin(omega)); }

}  // namespace

Quaternion Quaternion::from_axis_angle(std::array<double, 3> axis, double angle) {
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  if (n == 0.0) return identity();
  const double s = std::sin(0.5 * angle) / n;
  return Quaternion{std::cos(0.5 * angle), axis[0] * s, axis[1] * s, axis[2] * s}.canonical();
}

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (n == 0.0) throw DomainError("cannot normalize a zero quaternion");
  return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::canonical() const {
  if (w > 0.0) return *this;
  if (w < 0.0) return -*this;
  for (double v : {x, y, z}) {
    if (v > 0.0) return *this;
    if (v < 0.0) return -*this;
  }
  return *this;
}

double Quaternion::angle() const {
  const double v = std::sqrt(x * x + y * y + z * z);
  return 2.0 * std::atan2(v, std::abs(w));
}

std::array<double, 3> Quaternion::rotate(std::array<double, 3> v) const {
  // v' = v + 2w (u x v) + 2 u x (u x v)
  const double tx = 2.0 * (y * v[2] - z * v[1]);
  const double ty = 2.0 * (z * v[0] - x * v[2]);
  const double tz = 2.0 * (x * v[1] - y * v[0]);
  return {v[0] + w * tx + (y * tz - z * ty),
          v[1] + w * ty + (z * tx - x * tz),
          v[2] + w * tz + (x * ty - y * tx)};
}

std::array<double, 3> cu2ho(const CubochoricCoord& c) {
  const std::array<double, 3> p{c.c1, c.c2, c.c3};
  const double tol = 1e-12;
  for (double v : p)
    if (!(std::abs(v) <= kCubeHalfEdge + tol))
      throw DomainError("cubochoric coordinate outside the cube");
  if (p[0] == 0.0 && p[1] == 0.0 && p[2] == 0.0) return {0.0, 0.0, 0.0};

  const int pyr = pyramid(p);
  auto s = to_pyramid_frame(p, pyr);
  const double X = kScale * s[0], Y = kScale * s[1], Z = kScale * s[2];

  std::array<double, 3> lam;
  if (X == 0.0 && Y == 0.0) {
    lam = {0.0, 0.0, kPref * Z};
  } else {
    // Square -> curved square, area preserving.
    double t1, t2;
    if (std::abs(Y) <= std::abs(X)) {
      const double cs = std::cos(kPi12 * Y / X), sn = std::sin(kPi12 * Y / X);
      const double q = kPrek * X / std::sqrt(kSqrt2 - cs);
      t1 = (kSqrt2 * cs - 1.0) * q;
      t2 = kSqrt2 * sn * q;
    } else {
      const double cs = std::cos(kPi12 * X / Y), sn = std::sin(kPi12 * X / Y);
      const double q = kPrek * Y / std::sqrt(kSqrt2 - cs);
      t1 = kSqrt2 * sn * q;
      t2 = (kSqrt2 * cs - 1.0) * q;
    }
    // Inverse Lambert projection onto the ball.
    const double rr = t1 * t1 + t2 * t2;
    const double s_ratio = kPi * rr / (24.0 * Z * Z);
    const double shift = kSqrtPi * rr / std::sqrt(24.0) / Z;
    const double q = std::sqrt(std::max(0.0, 1.0 - s_ratio));
    lam = {t1 * q, t2 * q, kPref * Z - shift};
  }
  return from_pyramid_frame(lam, pyr);
}

CubochoricCoord ho2cu(const std::array<double, 3>& h) {
  const double rs = std::sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2]);
  if (!(rs <= kHomochoricRadius + 1e-12)) throw DomainError("homochoric vector outside the ball");
  if (rs == 0.0) return {};

  const int pyr = pyramid(h);
  auto s = to_pyramid_frame(h, pyr);

  // Lambert projection back onto the pyramid base plane.
  const double q = std::sqrt(2.0 * rs / (rs + std::abs(s[2])));
  const double t1 = s[0] * q, t2 = s[1] * q;
  const double Z = sgn(s[2]) * rs / kPref;

  // Curved square -> square.
  double X = 0.0, Y = 0.0;
  const double rr = t1 * t1 + t2 * t2;
  if (rr > 0.0) {
    const double rho = std::sqrt(rr);
    const bool x_major = std::abs(t2) <= std::abs(t1);
    const double major = x_major ? t1 : t2;
    const double minor = x_major ? t2 : t1;
    const double k = std::abs(major) / rho;
    const double cs = std::min(1.0, (1.0 - k * k + k * std::sqrt(1.0 + k * k)) / kSqrt2);
    const double theta = std::acos(cs);
    const double mag = rho / kPrek * std::sqrt((kSqrt2 - cs) / (3.0 - 2.0 * kSqrt2 * cs));
    const double major_out = sgn(major) * mag;
    const double minor_out = sgn(minor) * mag * theta / kPi12;
    X = x_major ? major_out : minor_out;
    Y = x_major ? minor_out : major_out;
  }
  auto out = from_pyramid_frame({X / kScale, Y / kScale, Z / kScale}, pyr);
  // Clamp round-off at the cube surface.
  for (double& v : out) v = std::clamp(v, -kCubeHalfEdge, kCubeHalfEdge);
  return {out[0], out[1], out[2]};
}

double homochoric_angle(double radius) {
  if (radius <= 0.0) return 0.0;
  if (radius >= kHomochoricRadius) return kPi;
  double lo = 0.0, hi = kPi;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (homochoric_radius(mid) < radius)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

Quaternion cu2qu(const CubochoricCoord& c) {
  const auto h = cu2ho(c);
  const double r = std::sqrt(h[0] * h[0] + h[1] * h[1] + h[2] * h[2]);
  if (r == 0.0) return Quaternion::identity();
  const double omega = homochoric_angle(r);
  const double s = std::sin(0.5 * omega) / r;
  return Quaternion{std::cos(0.5 * omega), h[0] * s, h[1] * s, h[2] * s}.normalized().canonical();
}

CubochoricCoord qu2cu(const Quaternion& q_in) {
  if (!(std::abs(q_in.norm() - 1.0) <= 1e-6)) throw DomainError("qu2cu expects a unit quaternion");
  const Quaternion q = q_in.normalized().canonical();
  const double v = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
  if (v == 0.0) return {};
  const double omega = 2.0 * std::atan2(v, q.w);
  const double r = std::min(homochoric_radius(omega), kHomochoricRadius);
  return ho2cu({q.x / v * r, q.y / v * r, q.z / v * r});
}

std::array<double, 3> normalize_cu(const CubochoricCoord& c) {
  return {c.c1 / kCubeHalfEdge, c.c2 / kCubeHalfEdge, c.c3 / kCubeHalfEdge};
}

CubochoricCoord denormalize_cu(const std::array<double, 3>& v) {
  return {v[0] * kCubeHalfEdge, v[1] * kCubeHalfEdge, v[2] * kCubeHalfEdge};
}

const SymmetryGroup& SymmetryGroup::cubic() {
  static const SymmetryGroup g = [] {
    const double s = 1.0 / kSqrt2;
    return SymmetryGroup{
        "cubic-O",
        {
            {1, 0, 0, 0},   {0, 1, 0, 0},   {0, 0, 1, 0},   {0, 0, 0, 1},
            {s, s, 0, 0},   {s, -s, 0, 0},  {s, 0, s, 0},   {s, 0, -s, 0},
            {s, 0, 0, s},   {s, 0, 0, -s},
            {.5, .5, .5, .5},   {.5, -.5, -.5, -.5}, {.5, .5, -.5, .5},  {.5, -.5, .5, -.5},
            {.5, -.5, .5, .5},  {.5, .5, -.5, -.5},  {.5, -.5, -.5, .5}, {.5, .5, .5, -.5},
            {0, s, s, 0},   {0, s, -s, 0},  {0, s, 0, s},   {0, s, 0, -s},
            {0, 0, s, s},   {0, 0, s, -s},
        }};
  }();
  return g;
}

const SymmetryGroup& SymmetryGroup::hexagonal() {
  static const SymmetryGroup g = [] {
    const double c = std::sqrt(3.0) / 2.0;
    return SymmetryGroup{
        "hexagonal-D6",
        {
            {1, 0, 0, 0}, {c, 0, 0, .5}, {.5, 0, 0, c}, {0, 0, 0, 1}, {-.5, 0, 0, c}, {-c, 0, 0, .5},
            {0, 1, 0, 0}, {0, c, .5, 0}, {0, .5, c, 0}, {0, 0, 1, 0}, {0, -.5, c, 0}, {0, -c, .5, 0},
        }};
  }();
  return g;
}

const SymmetryGroup& SymmetryGroup::triclinic() {
  static const SymmetryGroup g{"triclinic-identity", {Quaternion::identity()}};
  return g;
}

const SymmetryGroup& SymmetryGroup::by_name(std::string_view name) {
  if (name == "cubic" || name == "cubic-O") return cubic();
  if (name == "hexagonal" || name == "hexagonal-D6") return hexagonal();
  if (name == "triclinic" || name == "triclinic-identity" || name == "identity") return triclinic();
  throw ConfigError("unknown symmetry group '" + std::string(name) + "'");
}

double disorientation(const Quaternion& q1, const Quaternion& q2, const SymmetryGroup& sym) {
  // angle(s_i * d * s_j) == angle(s_j * s_i * d), so one-sided products cover
  // the two-sided orbit for a group.
  const Quaternion d = q1.conjugate() * q2;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : sym.operators) best = std::min(best, (s * d).angle());
  return best;
}

}  // namespace grainfuse::orientation
