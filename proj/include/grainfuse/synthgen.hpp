#pragma once

// Synthetic polycrystal data: Voronoi grain volumes, EBSD and polarized-light
// slice renders, PCA compression of PL stacks, boundary labels, training crops
// and perturbations.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "grainfuse/grid.hpp"
#include "grainfuse/orientation.hpp"

namespace grainfuse::synth {

using orientation::Quaternion;

struct Dims {
  int nx = 0, ny = 0, nz = 0;
  std::int64_t voxels() const { return std::int64_t{nx} * ny * nz; }
  bool operator==(const Dims&) const = default;
};

/// Voxelized grain map. ids are stored z-major then y then x; id 0 is null.
struct GrainVolume {
  Dims dims;
  std::vector<std::int32_t> ids;
  /// Indexed by grain id; entry 0 is a placeholder for the null id.
  std::vector<Quaternion> orientations;

  int grain_count() const { return static_cast<int>(orientations.size()) - 1; }
  std::int32_t id(int x, int y, int z) const {
    return ids[(static_cast<std::size_t>(z) * dims.ny + y) * dims.nx + x];
  }
  /// ny x nx id image of slice z.
  IdMap slice_ids(int z) const;
};

struct MicrostructureParams {
  std::uint64_t seed = 1;
  Dims dims{96, 96, 64};
  int n_grains = 150;
  /// Angular spread (degrees) of c-axes around the in-plane texture axis;
  /// negative means untextured (uniform in the cubochoric cube).
  double texture_spread_deg = 60.0;
};

/// Voronoi tessellation of n_grains seeds placed on distinct voxel centers.
GrainVolume generate_microstructure(const MicrostructureParams& p);

/// Per-pixel normalized cubochoric coordinates (H x W x 3). Null pixels are 0.
Field render_ebsd(const GrainVolume& v, int z);

/// Analytic uniaxial PL intensity of one orientation under n stage rotations.
std::vector<double> pl_response(const Quaternion& q, int n_rotations = 9, double step_deg = 40.0);

/// Raw PL stack (H x W x n_rotations). Null pixels are 0.
Field simulate_pl(const GrainVolume& v, int z, int n_rotations = 9, double step_deg = 40.0);

/// PCA basis fit on a training corpus plus the global affine map to [-1, 1].
struct PcaBasis {
  int input_dim = 0;
  int components = 0;
  std::vector<double> mean;       // input_dim
  std::vector<double> basis;      // components x input_dim, rows orthonormal
  std::vector<double> variances;  // per component, non-increasing
  double center = 0.0;            // normalized = (score - center) / half_range
  double half_range = 1.0;

  /// Raw stack -> normalized scores, clamped to [-1, 1].
  Field project(const Field& raw) const;
  /// Raw stack -> unnormalized, unclamped scores.
  Field scores(const Field& raw) const;
  /// Unnormalized scores -> raw stack.
  Field reconstruct_from_scores(const Field& scores) const;
};

/// Fit on the pooled pixel vectors of `stacks`. Throws ConfigError when
/// k exceeds the channel count or the corpus has fewer than k distinct vectors.
PcaBasis fit_pca(std::span<const Field> stacks, int k = 3);

/// 1 where a non-null pixel has a 4-neighbor with a different non-null id.
BoundaryMap extract_boundaries(const IdMap& ids);

/// Element e in [0, 8) of the dihedral group of the square (e & 3 quarter
/// turns, combined with a horizontal flip when e & 4). Requires a square grid.
template <typename T>
Grid<T> apply_d4(const Grid<T>& g, int e) {
  const int n = g.height;
  Grid<T> out(n, n, g.channels);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      int sr = r, sc = c;
      if (e & 4) sc = n - 1 - sc;
      for (int k = 0; k < (e & 3); ++k) {
        // inverse of a counter-clockwise quarter turn
        const int tr = sc, tc = n - 1 - sr;
        sr = tr;
        sc = tc;
      }
      for (int k = 0; k < g.channels; ++k) out(r, c, k) = g(sr, sc, k);
    }
  return out;
}

/// Rendered modalities of one volume, slice by slice.
struct RenderedVolume {
  GrainVolume volume;
  std::vector<Field> ebsd;  // per z, H x W x 3
  std::vector<Field> pl;    // per z, H x W x 3 (normalized PCA scores)
};

struct TrainingSample {
  Field data;  // size x size x 6: EBSD channels then PL channels
  IdMap ids;
  int z = 0, y0 = 0, x0 = 0, d4 = 0;
};

/// Random axis-aligned crop of a random slice with a random D4 element applied
/// jointly to every channel and the id map. Throws ConfigError on undersized volumes.
TrainingSample sample_training_slice(const RenderedVolume& v, std::mt19937_64& rng, int size = 64);

/// Crop of a given slice and origin (no augmentation).
TrainingSample crop_slice(const RenderedVolume& v, int z, int y0, int x0, int size = 64);

struct Perturbation {
  enum class Kind { Gaussian, Scratch, Shift };
  Kind kind = Kind::Gaussian;
  double sigma = 0.0;      // gaussian
  int count = 0;           // scratch
  double width = 1.0;      // scratch, pixels
  double intensity = 0.0;  // scratch, additive offset
  int dx = 0, dy = 0;      // shift

  /// "gaussian:0.05", "scratch:3,2,0.6", "shift:1,0". Throws ConfigError.
  static Perturbation parse(const std::string& text);
  std::string to_string() const;
};

Field perturb(const Field& f, const Perturbation& p, std::mt19937_64& rng);

}  // namespace grainfuse::synth
