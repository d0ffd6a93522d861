#include "grainfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "grainfuse/errors.hpp"
#include "grainfuse/synthgen.hpp"

namespace grainfuse::metrics {

std::vector<Point> point_cloud(const BoundaryMap& b) {
  std::vector<Point> out;
  for (int r = 0; r < b.height; ++r)
    for (int c = 0; c < b.width; ++c)
      if (b(r, c)) out.push_back({static_cast<double>(r) / b.height, static_cast<double>(c) / b.width});
  return out;
}

namespace {

double directed(const std::vector<Point>& from, const std::vector<Point>& to) {
  if (from.empty()) return 0.0;
  if (to.empty()) return kEmptyCloudPenalty;
  double sum = 0.0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dr = p.r - q.r, dc = p.c - q.c;
      best = std::min(best, dr * dr + dc * dc);
    }
    sum += best;
  }
  return sum / static_cast<double>(from.size());
}

}  // namespace

ChamferResult chamfer(const std::vector<Point>& pred, const std::vector<Point>& truth) {
  ChamferResult r;
  r.forward = directed(pred, truth);
  r.backward = directed(truth, pred);
  r.total = r.forward + r.backward;
  return r;
}

ChamferResult chamfer(const BoundaryMap& pred, const BoundaryMap& truth) {
  if (pred.height != truth.height || pred.width != truth.width) throw ConfigError("chamfer: map shapes differ");
  return chamfer(point_cloud(pred), point_cloud(truth));
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
  if (!(sigma > 0) || radius < 0) throw ConfigError("gaussian kernel needs sigma > 0 and radius >= 0");
  const int n = 2 * radius + 1;
  std::vector<double> k(static_cast<std::size_t>(n) * n);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i)
    for (int j = -radius; j <= radius; ++j) {
      const double v = std::exp(-(i * i + j * j) / (2.0 * sigma * sigma));
      k[(i + radius) * n + (j + radius)] = v;
      sum += v;
    }
  for (auto& v : k) v /= sum;
  return k;
}

ScalarMap gaussian_blur(const ScalarMap& m, double sigma, int radius) {
  const auto k = gaussian_kernel(sigma, radius);
  const int n = 2 * radius + 1;
  ScalarMap out(m.height, m.width);
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int rr = std::clamp(r + i, 0, m.height - 1);
        for (int j = -radius; j <= radius; ++j) {
          const int cc = std::clamp(c + j, 0, m.width - 1);
          acc += k[(i + radius) * n + (j + radius)] * m(rr, cc);
        }
      }
      out(r, c) = std::clamp(acc, 0.0, 1.0);
    }
  return out;
}

ScalarMap gaussian_blur(const BoundaryMap& b, double sigma, int radius) {
  ScalarMap m(b.height, b.width);
  for (std::size_t i = 0; i < b.size(); ++i) m.data[i] = b.data[i] ? 1.0 : 0.0;
  return gaussian_blur(m, sigma, radius);
}

double bce(const ScalarMap& s, const ScalarMap& g) {
  if (s.height != g.height || s.width != g.width) throw ConfigError("bce: map shapes differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double p = std::clamp(s.data[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    sum += g.data[i] * std::log(p) + (1.0 - g.data[i]) * std::log(1.0 - p);
  }
  return -sum / static_cast<double>(s.size());
}

double gbce(const ScalarMap& s, const BoundaryMap& truth, double sigma, int radius) {
  return bce(s, gaussian_blur(truth, sigma, radius));
}

DisorientationStats disorientation_error(const Field& pred, const Field& truth, const IdMap& ids,
                                         const BoundaryMap& observed, const orientation::SymmetryGroup& sym) {
  if (!pred.same_shape(truth) || pred.channels != 3 || ids.height != pred.height || ids.width != pred.width ||
      observed.height != pred.height || observed.width != pred.width)
    throw ConfigError("disorientation_error: field, id and mask shapes differ");
  const auto boundary = synth::extract_boundaries(ids);
  auto to_q = [](const Field& f, int r, int c) {
    std::array<double, 3> v;
    for (int k = 0; k < 3; ++k) v[k] = std::clamp(static_cast<double>(f(r, c, k)), -1.0, 1.0);
    return orientation::cu2qu(orientation::denormalize_cu(v));
  };
  constexpr double kDeg = 180.0 / std::numbers::pi;
  DisorientationStats s;
  double sum_b = 0.0, sum_i = 0.0;
  for (int r = 0; r < pred.height; ++r)
    for (int c = 0; c < pred.width; ++c) {
      if (observed(r, c)) continue;
      const double a = orientation::disorientation(to_q(pred, r, c), to_q(truth, r, c), sym) * kDeg;
      if (boundary(r, c)) {
        sum_b += a;
        ++s.n_boundary;
      } else {
        sum_i += a;
        ++s.n_intra;
      }
    }
  s.n_all = s.n_boundary + s.n_intra;
  s.all = s.n_all ? (sum_b + sum_i) / s.n_all : 0.0;
  s.intra = s.n_intra ? sum_i / s.n_intra : 0.0;
  s.boundary = s.n_boundary ? sum_b / s.n_boundary : 0.0;
  return s;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.n = static_cast<int>(values.size());
  if (s.n == 0) return s;
  for (double v : values) s.mean += v;
  s.mean /= s.n;
  if (s.n < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std_error = std::sqrt(ss / (s.n - 1) / s.n);
  return s;
}

}  // namespace grainfuse::metrics
