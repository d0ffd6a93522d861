#pragma once

// Posterior sampling for masked linear observations over a diffusion prior:
// masking operators, observation construction, the FPS-SMC particle filter,
// a replacement baseline and parallel reconstruction sets.

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "grainfuse/dataset.hpp"
#include "grainfuse/diffusion.hpp"
#include "grainfuse/grid.hpp"

namespace grainfuse::solver {

/// Which pixels of one modality are observed.
struct MaskSpec {
  enum class Kind { Random, Grid, None, Full };
  Kind kind = Kind::Full;
  double fraction = 1.0;  // random
  int stride = 1;         // grid

  /// "random:0.25", "grid:4", "none", "full". Throws ConfigError.
  static MaskSpec parse(const std::string& text);
  std::string to_string() const;
  /// H x W pixel mask; random masks pick exactly round(p H W) pixels.
  BoundaryMap pixels(int height, int width, std::mt19937_64& rng) const;
};

/// Selection of coordinates out of a D x H x W (channel-first) grid.
class MaskingOperator {
 public:
  MaskingOperator() = default;
  /// `mask` is D x H x W (bool or any integral type), nonzero = observed.
  explicit MaskingOperator(const torch::Tensor& mask);

  /// x: N x D x H x W or D x H x W -> N x |Omega| (or |Omega|).
  torch::Tensor apply(const torch::Tensor& x) const;
  /// Adjoint: zero-filled D x H x W (or N x D x H x W for 2-D input).
  torch::Tensor scatter(const torch::Tensor& v) const;
  /// Writes v into the observed coordinates of x in place.
  void assign(torch::Tensor& x, const torch::Tensor& v) const;

  std::int64_t size() const { return index_.numel(); }
  bool empty() const { return size() == 0; }
  const torch::Tensor& index() const { return index_; }  // flat, sorted, int64
  torch::Tensor mask() const;                             // D x H x W bool
  int channels() const { return d_; }
  int height() const { return h_; }
  int width() const { return w_; }

 private:
  int d_ = 0, h_ = 0, w_ = 0;
  torch::Tensor index_ = torch::empty({0}, torch::kInt64);
};

struct ObservationSpec {
  MaskSpec ebsd = MaskSpec::parse("grid:2");
  MaskSpec pl = MaskSpec::parse("full");
  double sigma_ebsd = 0.0;
  double sigma_pl = 0.0;
};

struct Observation {
  MaskingOperator op;
  torch::Tensor values;  // |Omega|, float32
  torch::Tensor sigma;   // |Omega|, per-coordinate noise std, float64
  data::ModalityLayout layout;
  ObservationSpec spec;
  BoundaryMap ebsd_pixels;  // H x W, observed EBSD pixels (empty grid when no EBSD)

  bool noiseless() const;
};

/// Observes `sample` (H x W x D in the layout's channel order). EBSD channels
/// of a pixel are masked jointly. Y = X|Omega + sigma * noise.
Observation make_observation(const Field& sample, const data::ModalityLayout& layout, const ObservationSpec& spec,
                             std::mt19937_64& rng);

struct SmcConfig {
  int particles = 10;
  double tau2 = 1e-6;  // variance floor of the observation path
  double clip_x0 = 0.0;  // clean-estimate clamp of the reverse mean, 0 = off
};

/// Per-run bookkeeping; ess has one entry per reverse step.
struct SmcDiagnostics {
  std::vector<double> ess;
  int resamples = 0;
  int chosen = 0;
};

/// FPS-SMC: one reconstruction (1 x D x H x W) of p(X | Y). Throws ConfigError
/// for K < 1 and NumericalError when every particle weight vanishes.
torch::Tensor fps_smc_sample(diffusion::EpsPredictor& model, const diffusion::NoiseSchedule& s,
                             const Observation& obs, const SmcConfig& cfg, at::Generator& gen,
                             SmcDiagnostics* diag = nullptr);

/// Reverse diffusion with observed coordinates overwritten by the forward-
/// diffused observation after every step.
torch::Tensor replacement_sample(diffusion::EpsPredictor& model, const diffusion::NoiseSchedule& s,
                                 const Observation& obs, at::Generator& gen, double clip_x0 = 0.0);

struct SolverConfig {
  std::string method = "fps_smc";  // or "replacement"
  int n = 10;
  SmcConfig smc;  // clip_x0 applies to both methods
  std::uint64_t seed = 1;
  int workers = 1;
};

struct ReconstructionSet {
  torch::Tensor samples;  // N x D x H x W
  std::vector<std::uint64_t> seeds;
};

/// Seeds of the N reconstructions derived from cfg.seed.
std::vector<std::uint64_t> reconstruction_seeds(std::uint64_t seed, int n);

/// N independent solver runs, up to cfg.workers at a time. The result does not
/// depend on the worker count. The first failure is rethrown.
ReconstructionSet reconstruct_set(diffusion::EpsPredictor& model, const diffusion::NoiseSchedule& s,
                                  const Observation& obs, const SolverConfig& cfg);

}  // namespace grainfuse::solver
