#pragma once

// Experiment orchestration behind the grainfuse CLI subcommands.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "grainfuse/config.hpp"
#include "grainfuse/dataset.hpp"
#include "grainfuse/diffusion.hpp"
#include "grainfuse/metrics.hpp"
#include "grainfuse/report.hpp"
#include "grainfuse/solver.hpp"
#include "grainfuse/tasks.hpp"

namespace grainfuse::pipeline {

/// Worker count from GRAINFUSE_WORKERS (default 1).
int worker_count();

/// Maps an exception to the CLI exit code (2 config, 3 numerical, 4 incompatible, 1 other).
int exit_code_for(const std::exception& e);

/// gen-data: writes the dataset under data.dir.
void cmd_gen_data(const Config& cfg);

/// train: fits the modality's model on data.dir and writes
/// <models.dir>/<modality>.gftc plus <modality>_loss.csv.
diffusion::TrainResult cmd_train(const Config& cfg, const std::string& modality);

/// Reconstruction experiment settings (recon.*, obs.*, eval.*, solver.* keys).
struct ReconSettings {
  std::string model = "EP";         // checkpoint modality
  std::string obs_modality = "EP";  // layout of the observation
  std::filesystem::path checkpoint;
  solver::ObservationSpec obs;
  std::string perturb = "none";  // applied to the PL channels before observing
  std::uint64_t obs_seed = 7;
  int slices = 20;
  std::uint64_t slice_seed = 99;
  int size = 64;
  int stride = 10;
  solver::SolverConfig solver;
};
ReconSettings recon_settings(const Config& cfg);

/// One held-out slice with its observation and reconstruction set.
struct SliceRecon {
  int index = 0;
  data::SliceRef ref;
  Field truth;  // clean EBSD + PL crop (6 channels)
  IdMap ids;
  Field input;  // what was observed before noise, in the observation layout
  solver::Observation obs;
  std::vector<Field> recons;  // observation layout
  std::vector<std::uint64_t> seeds;
  std::uint64_t obs_seed = 0;
};

/// Mixes a base seed with a path of indices.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

/// Observes and reconstructs `st.slices` held-out slices. `progress` sees
/// each finished slice.
std::vector<SliceRecon> run_reconstruction(const ReconSettings& st, const data::Dataset& ds,
                                           diffusion::EpsPredictor& model, const diffusion::NoiseSchedule& schedule,
                                           const std::function<void(const SliceRecon&)>& progress = {});

void write_slice_recon(const std::filesystem::path& path, const SliceRecon& s);
SliceRecon read_slice_recon(const std::filesystem::path& path);
/// recon_*.gftc files of a reconstruction directory in slice order.
std::vector<SliceRecon> read_recon_dir(const std::filesystem::path& dir);

/// Loads a checkpoint and checks it against the observation layout
/// (IncompatibleError on mismatch).
diffusion::Checkpoint load_model(const ReconSettings& st);

/// reconstruct: writes recon_<i>.gftc per slice, reconstruct.json (seeds,
/// observation metadata) and reconstruct.config to out.dir.
std::vector<SliceRecon> cmd_reconstruct(const Config& cfg);

struct EvalSettings {
  double knee_sigma = 50.0;
  tasks::SobelCombine combine = tasks::SobelCombine::L2;
  double blur_sigma = 3.0;
  int blur_radius = 5;
  tasks::AlignmentConfig align;
  std::string symmetry = "hexagonal";
};
EvalSettings eval_settings(const Config& cfg, const std::string& dataset_symmetry);

struct BoundaryEval {
  tasks::BoundaryPrediction pred;
  metrics::ChamferResult chamfer;
  double gbce = 0.0;
  bool has_baseline = false;  // Sobel on the observed PL
  tasks::BoundaryPrediction baseline;
  metrics::ChamferResult baseline_chamfer;
  double baseline_gbce = 0.0;
};
/// Uses the first `n` reconstructions (all when n <= 0).
BoundaryEval evaluate_boundary(const SliceRecon& s, const EvalSettings& e, int n = 0);

struct SuperresEval {
  tasks::SuperresResult result;
  metrics::DisorientationStats aligned, unaligned;
};
SuperresEval evaluate_superres(const SliceRecon& s, const EvalSettings& e);

struct DenoiseEval {
  Field mean_pl;
  double mse_mean = 0.0;      // mean PL vs clean PL
  double mse_observed = 0.0;  // observed (noisy) PL vs clean PL
};
DenoiseEval evaluate_denoise(const SliceRecon& s);

/// Observed EBSD (zero off-mask) and PL fields scattered back to H x W x 3.
Field observed_ebsd(const SliceRecon& s);
Field observed_pl(const SliceRecon& s);

/// evaluate: task in {boundary, superres, denoise}; reads eval.input, writes
/// <task>.csv, <task>_summary.csv, images and evaluate.config to out.dir.
report::Table cmd_evaluate(const Config& cfg, const std::string& task);

/// sweep: full factorial over sweep.ebsd_masks x sweep.n with sweep.repeats
/// repeats; writes sweep.csv and sweep_summary.csv.
report::Table cmd_sweep(const Config& cfg);

/// plot: figures from a sweep directory.
void cmd_plot(const Config& cfg);

diffusion::UNetConfig unet_config(const Config& cfg, const data::ModalityLayout& layout);
diffusion::TrainConfig train_config(const Config& cfg);
diffusion::NoiseSchedule base_schedule(const Config& cfg);

}  // namespace grainfuse::pipeline
