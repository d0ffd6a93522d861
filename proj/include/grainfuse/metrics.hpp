#pragma once

// Boundary and orientation metrics: Chamfer distance between boundary point
// clouds, BCE against Gaussian-blurred targets, stratified disorientation.

#include <string>
#include <vector>

#include "grainfuse/grid.hpp"
#include "grainfuse/orientation.hpp"

namespace grainfuse::metrics {

struct Point {
  double r = 0.0, c = 0.0;
};

/// Boundary pixels as normalized coordinates (i / H, j / W).
std::vector<Point> point_cloud(const BoundaryMap& b);

struct ChamferResult {
  double forward = 0.0;   // mean over predicted points of the squared distance to truth
  double backward = 0.0;  // mean over true points of the squared distance to the prediction
  double total = 0.0;
};

/// Squared distance charged to each point when the other cloud is empty.
inline constexpr double kEmptyCloudPenalty = 2.0;

ChamferResult chamfer(const std::vector<Point>& pred, const std::vector<Point>& truth);
ChamferResult chamfer(const BoundaryMap& pred, const BoundaryMap& truth);

/// Normalized (2 radius + 1)^2 Gaussian kernel, row-major.
std::vector<double> gaussian_kernel(double sigma, int radius);

/// Edge-replicated convolution with gaussian_kernel(sigma, radius).
ScalarMap gaussian_blur(const ScalarMap& m, double sigma = 3.0, int radius = 5);
ScalarMap gaussian_blur(const BoundaryMap& b, double sigma = 3.0, int radius = 5);

inline constexpr double kProbabilityClamp = 1e-7;

/// -(1/HW) sum [g log s + (1 - g) log(1 - s)], s clamped to [eps, 1 - eps].
double bce(const ScalarMap& s, const ScalarMap& g);
/// bce against the blurred ground truth.
double gbce(const ScalarMap& s, const BoundaryMap& truth, double sigma = 3.0, int radius = 5);

struct DisorientationStats {
  double all = 0.0, intra = 0.0, boundary = 0.0;  // mean angle in degrees
  int n_all = 0, n_intra = 0, n_boundary = 0;
};

/// Disorientation between predicted and true normalized-cubochoric fields on
/// unobserved pixels (observed(r, c) == 0), split by the boundary map of
/// `ids`. Predicted values are clamped into [-1, 1] first. Empty strata
/// report a mean of 0.
DisorientationStats disorientation_error(const Field& pred, const Field& truth, const IdMap& ids,
                                         const BoundaryMap& observed, const orientation::SymmetryGroup& sym);

/// Sample mean and standard error (sd / sqrt(n), 0 when n < 2).
struct Summary {
  double mean = 0.0, std_error = 0.0;
  int n = 0;
};
Summary summarize(const std::vector<double>& values);

}  // namespace grainfuse::metrics
