#pragma once

// On-disk synthetic dataset: rendered training/validation volumes, the shared
// PCA basis and a metadata document.
//
//   <dir>/train_<i>.gftc, <dir>/val_<i>.gftc   ids, orientations, ebsd, pl
//   <dir>/pca.gftc                             mean, basis, variances
//   <dir>/dataset.json                         parameters, seeds, normalization

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "grainfuse/config.hpp"
#include "grainfuse/synthgen.hpp"

namespace grainfuse::data {

struct DatasetConfig {
  std::uint64_t seed = 2024;
  int train_volumes = 2;
  int val_volumes = 2;
  synth::Dims train_dims{96, 96, 64};
  synth::Dims val_dims{96, 96, 32};
  int n_grains = 150;
  double texture_spread_deg = 60.0;
  std::string symmetry = "hexagonal";
  int pl_rotations = 9;
  double pl_step_deg = 40.0;
  int pca_components = 3;

  /// Reads data.* keys.
  static DatasetConfig from(const Config& c);
  bool operator==(const DatasetConfig&) const = default;
};

enum class Partition { Train, Val };

struct Dataset {
  DatasetConfig config;
  synth::PcaBasis pca;
  std::vector<synth::RenderedVolume> train, val;
  std::vector<std::uint64_t> train_seeds, val_seeds;

  const std::vector<synth::RenderedVolume>& partition(Partition p) const { return p == Partition::Train ? train : val; }
};

/// Deterministic given config.seed. The PCA basis and normalization are fit
/// on training volumes only.
Dataset generate_dataset(const DatasetConfig& cfg);

void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
/// Throws FormatError / ConfigError on missing or inconsistent files.
Dataset read_dataset(const std::filesystem::path& dir);
/// Reads only dataset.json's config block.
DatasetConfig read_dataset_config(const std::filesystem::path& dir);

/// Channel range of a modality inside the 6-channel EBSD+PL layout.
struct ModalityLayout {
  std::string name;  // "EP", "E" or "P"
  int first = 0;     // first channel in the 6-channel sample
  int channels = 0;
  bool has_ebsd() const { return name != "P"; }
  bool has_pl() const { return name != "E"; }
  /// Offset of the PL block inside this modality's channels, -1 if absent.
  int pl_offset() const { return name == "EP" ? 3 : (name == "P" ? 0 : -1); }
  int ebsd_offset() const { return has_ebsd() ? 0 : -1; }
  static ModalityLayout by_name(const std::string& name);
};

/// Held-out evaluation crop of a validation volume.
struct SliceRef {
  int volume = 0, z = 0, y0 = 0, x0 = 0;
};

/// n deterministic 64 x 64 crops spread over the validation volumes.
std::vector<SliceRef> held_out_slices(const Dataset& ds, int n, std::uint64_t seed, int size = 64);

}  // namespace grainfuse::data
