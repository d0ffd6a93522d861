#pragma once

// Post-processing of reconstruction sets: grain-boundary prediction from PL
// Sobel maps, EBSD super-resolution with a per-pixel alignment network, and
// PL denoising by averaging.

#include <cstdint>
#include <string>
#include <vector>

#include "grainfuse/dataset.hpp"
#include "grainfuse/grid.hpp"

namespace grainfuse::tasks {

enum class SobelCombine { L2, Max };
SobelCombine parse_sobel_combine(const std::string& name);

/// Raw Sobel magnitude (no normalization), edge-replicated borders.
ScalarMap sobel_magnitude(const Field& img, SobelCombine combine = SobelCombine::L2);
/// sobel_magnitude min-max normalized to [0, 1]; constant input gives zeros.
ScalarMap sobel_map(const Field& img, SobelCombine combine = SobelCombine::L2);

/// Element-wise mean. Throws ConfigError on an empty set or shape mismatch.
ScalarMap aggregate(const std::vector<ScalarMap>& maps);

struct KneeResult {
  BoundaryMap boundaries;
  double cutoff = 0.0;
  int elbow_index = -1;  // into the descending sorted curve, -1 for a flat curve
};

/// Sorted-curve elbow threshold. The descending sorted values are smoothed
/// (Gaussian, sigma samples, radius 3 sigma, edge replicate), both axes are
/// scaled to [0, 1] and the elbow is the first index maximizing the gap below
/// the chord, (1 - x) - y. Pixels at or above the smoothed value there are
/// boundaries.
KneeResult knee_threshold(const ScalarMap& s, double sigma = 50.0);

struct BoundaryPrediction {
  ScalarMap mean_sobel;
  BoundaryMap boundaries;
  double cutoff = 0.0;
};

/// Sobel on the PL channels of each reconstruction, averaged, then
/// thresholded. Throws UnsupportedTaskError when the layout has no PL.
BoundaryPrediction predict_boundaries(const std::vector<Field>& recons, const data::ModalityLayout& layout,
                                      double knee_sigma = 50.0, SobelCombine combine = SobelCombine::L2);
/// Same chain on bare PL images (the Sobel baseline when given one observation).
BoundaryPrediction predict_boundaries_pl(const std::vector<Field>& pl_images, double knee_sigma = 50.0,
                                         SobelCombine combine = SobelCombine::L2);

/// Per-pixel 3 -> hidden -> 3 map with a GELU between the layers and an
/// identity skip, so a zero second layer is the identity.
class AlignmentNet {
 public:
  explicit AlignmentNet(int hidden = 32, std::uint64_t seed = 0);
  std::array<double, 3> apply(const std::array<double, 3>& x) const;
  int hidden() const { return hidden_; }

  std::vector<double> w1, b1, w2, b2;  // w1: hidden x 3, w2: 3 x hidden

 private:
  int hidden_;
};

struct AlignmentConfig {
  double learning_rate = 0.02;
  int batch_size = 16;
  int epochs = 50;
  double holdout = 0.2;
  int hidden = 32;
  std::uint64_t seed = 0;
  int min_pixels = 10;
};

struct SuperresResult {
  Field mean;     // X bar, EBSD channels, unclamped
  Field aligned;  // A(X bar) clamped to [-1, 1]
  bool trained = false;
  std::string warning;
  int train_pixels = 0, holdout_pixels = 0;
  double holdout_mse_before = 0.0;  // mean over held-out Omega pixels and channels
  double holdout_mse_after = 0.0;
  int best_epoch = 0;
  AlignmentNet net;
};

/// Mean EBSD reconstruction aligned to the observed EBSD values. `observed`
/// holds Y_E on pixels where mask(r, c) != 0.
SuperresResult superresolve(const std::vector<Field>& ebsd_recons, const Field& observed, const BoundaryMap& mask,
                            const AlignmentConfig& cfg);

/// EBSD channels of reconstructions laid out as `layout`.
/// Throws UnsupportedTaskError when the layout has no EBSD.
std::vector<Field> ebsd_channels(const std::vector<Field>& recons, const data::ModalityLayout& layout);
std::vector<Field> pl_channels(const std::vector<Field>& recons, const data::ModalityLayout& layout);

/// Element-wise mean of the PL channels.
Field denoise_pl(const std::vector<Field>& recons, const data::ModalityLayout& layout);
Field mean_field(const std::vector<Field>& fields);

}  // namespace grainfuse::tasks
