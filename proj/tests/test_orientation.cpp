#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>
#include <random>

#include "grainfuse/errors.hpp"
#include "grainfuse/orientation.hpp"
#include "oracles.hpp"

using namespace grainfuse::orientation;
using grainfuse::DomainError;

namespace {

constexpr double kPi = std::numbers::pi;

using grainfuse::oracle::angle_between;
using grainfuse::oracle::random_rotation;
const auto& brute_disorientation = grainfuse::oracle::disorientation;

}  // namespace

TEST_CASE("cu2qu maps the cube center to the identity") {
  const Quaternion q = cu2qu({0, 0, 0});
  CHECK(q.w == doctest::Approx(1.0));
  CHECK(q.x == 0.0);
  CHECK(q.y == 0.0);
  CHECK(q.z == 0.0);
  const auto c = qu2cu(Quaternion::identity());
  CHECK(c.c1 == 0.0);
  CHECK(c.c2 == 0.0);
  CHECK(c.c3 == 0.0);
}

TEST_CASE("qu2cu -> cu2qu round trip over random rotations") {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Quaternion q = random_rotation(rng);
    const Quaternion back = cu2qu(qu2cu(q));
    worst = std::max(worst, angle_between(q, back));
    CHECK(std::abs(back.norm() - 1.0) < 1e-9);
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("cu2qu -> qu2cu recovers interior cube points") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-0.999 * kCubeHalfEdge, 0.999 * kCubeHalfEdge);
  double worst = 0.0;
  for (int i = 0; i < 2000; ++i) {
    const CubochoricCoord c{u(rng), u(rng), u(rng)};
    const auto back = qu2cu(cu2qu(c));
    worst = std::max({worst, std::abs(back.c1 - c.c1), std::abs(back.c2 - c.c2), std::abs(back.c3 - c.c3)});
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("cube surface maps to half-turns") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-kCubeHalfEdge, kCubeHalfEdge);
  std::uniform_int_distribution<int> face(0, 5);
  for (int i = 0; i < 500; ++i) {
    double p[3] = {u(rng), u(rng), u(rng)};
    const int f = face(rng);
    p[f / 2] = (f % 2 ? -1.0 : 1.0) * kCubeHalfEdge;
    const Quaternion q = cu2qu({p[0], p[1], p[2]});
    CHECK(std::abs(q.angle() - kPi) < 1e-6);
  }
}

TEST_CASE("cube -> ball map preserves volume") {
  // Central-difference Jacobian determinant should be 1 everywhere away from
  // the pyramid seams.
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(-0.95 * kCubeHalfEdge, 0.95 * kCubeHalfEdge);
  const double h = 1e-6;
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    const double p[3] = {u(rng), u(rng), u(rng)};
    double a[3] = {std::abs(p[0]), std::abs(p[1]), std::abs(p[2])};
    std::sort(a, a + 3);
    if (a[2] - a[1] < 1e-3 || std::abs(a[1]) < 1e-3) continue;  // near a seam
    double J[3][3];
    for (int k = 0; k < 3; ++k) {
      double lo[3] = {p[0], p[1], p[2]}, hi[3] = {p[0], p[1], p[2]};
      lo[k] -= h;
      hi[k] += h;
      const auto fl = cu2ho({lo[0], lo[1], lo[2]});
      const auto fh = cu2ho({hi[0], hi[1], hi[2]});
      for (int r = 0; r < 3; ++r) J[r][k] = (fh[r] - fl[r]) / (2 * h);
    }
    const double det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                       J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                       J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
    CHECK(det == doctest::Approx(1.0).epsilon(1e-5));
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("double cover maps to one cubochoric point") {
  std::mt19937_64 rng(15);
  for (int i = 0; i < 100; ++i) {
    const Quaternion q = random_rotation(rng);
    const auto a = qu2cu(q);
    const auto b = qu2cu(-q);
    CHECK(a.c1 == b.c1);
    CHECK(a.c2 == b.c2);
    CHECK(a.c3 == b.c3);
  }
}

TEST_CASE("domain errors") {
  CHECK_THROWS_AS(cu2qu({kCubeHalfEdge * 1.01, 0, 0}), DomainError);
  CHECK_THROWS_AS(qu2cu(Quaternion{1.0, 0.1, 0.0, 0.0}), DomainError);
  CHECK_THROWS_AS(SymmetryGroup::by_name("tetragonal"), grainfuse::ConfigError);
}

TEST_CASE("normalize_cu / denormalize_cu") {
  const auto z = normalize_cu({0, 0, 0});
  CHECK(z[0] == 0.0);
  const auto corner = normalize_cu({kCubeHalfEdge, -kCubeHalfEdge, kCubeHalfEdge});
  CHECK(corner[0] == 1.0);
  CHECK(corner[1] == -1.0);
  CHECK(corner[2] == 1.0);
  const CubochoricCoord c{0.25, -0.5, 1.0};
  const auto back = denormalize_cu(normalize_cu(c));
  CHECK(back.c1 == doctest::Approx(c.c1).epsilon(1e-15));
  CHECK(back.c2 == doctest::Approx(c.c2).epsilon(1e-15));
  CHECK(back.c3 == doctest::Approx(c.c3).epsilon(1e-15));
}

TEST_CASE("symmetry tables are closed groups") {
  for (const auto* g : {&SymmetryGroup::cubic(), &SymmetryGroup::hexagonal(), &SymmetryGroup::triclinic()}) {
    for (const auto& a : g->operators) {
      CHECK(std::abs(a.norm() - 1.0) < 1e-12);
      for (const auto& b : g->operators) {
        const Quaternion p = a * b;
        bool found = false;
        for (const auto& c : g->operators)
          found = found || std::abs(std::abs(p.w * c.w + p.x * c.x + p.y * c.y + p.z * c.z) - 1.0) < 1e-12;
        CHECK(found);
      }
    }
  }
  CHECK(SymmetryGroup::cubic().operators.size() == 24);
  CHECK(SymmetryGroup::hexagonal().operators.size() == 12);
  CHECK(SymmetryGroup::triclinic().operators.size() == 1);
}

TEST_CASE("disorientation examples") {
  const auto& cubic = SymmetryGroup::cubic();
  const auto& hex = SymmetryGroup::hexagonal();
  std::mt19937_64 rng(16);
  const Quaternion q = random_rotation(rng);
  CHECK(disorientation(q, q, cubic) == 0.0);
  const Quaternion z90 = Quaternion::from_axis_angle({0, 0, 1}, kPi / 2);
  CHECK(disorientation(Quaternion::identity(), z90, cubic) < 1e-9);
  const Quaternion z30 = Quaternion::from_axis_angle({0, 0, 1}, kPi / 6);
  CHECK(std::abs(disorientation(Quaternion::identity(), z30, hex) - kPi / 6) < 1e-9);
}

TEST_CASE("disorientation matches two-sided brute force and is symmetric") {
  std::mt19937_64 rng(17);
  for (const auto* g : {&SymmetryGroup::cubic(), &SymmetryGroup::hexagonal(), &SymmetryGroup::triclinic()}) {
    for (int i = 0; i < 100; ++i) {
      const Quaternion a = random_rotation(rng), b = random_rotation(rng);
      const double d = disorientation(a, b, *g);
      CHECK(std::abs(d - brute_disorientation(a, b, *g)) < 1e-9);
      CHECK(std::abs(d - disorientation(b, a, *g)) < 1e-9);
      // Symmetry-equivalent rotations are at zero distance.
      const auto& s = g->operators[i % g->operators.size()];
      CHECK(disorientation(a, a * s, *g) < 1e-9);
    }
  }
}

TEST_CASE("uniform cube sampling stays within the cubic disorientation bound") {
  std::mt19937_64 rng(18);
  std::uniform_real_distribution<double> u(-kCubeHalfEdge, kCubeHalfEdge);
  const auto& cubic = SymmetryGroup::cubic();
  double worst = 0.0, mean_angle = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Quaternion q = cu2qu({u(rng), u(rng), u(rng)});
    worst = std::max(worst, disorientation(Quaternion::identity(), q, cubic));
    mean_angle += q.angle() / n;
  }
  CHECK(worst * 180.0 / kPi <= 62.9);
  // Uniform rotations have mean angle pi/2 + 2/pi.
  CHECK(mean_angle == doctest::Approx(kPi / 2 + 2 / kPi).epsilon(0.01));
}
