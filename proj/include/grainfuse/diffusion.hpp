#pragma once

// DDPM core: noise schedule, forward process, epsilon-prediction U-Net,
// training loop and unconditional ancestral sampling.
//
// Tensors are N x D x H x W (channel-first) float32 on the CPU.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace grainfuse::diffusion {

/// Discrete schedule over steps 1..T. Index 0 of the vectors is the t = 0
/// boundary (alpha_bar = 1, beta = 0).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta, alpha, alpha_bar;
  /// Model conditioning time of each step. Identity for a base schedule,
  /// the original step index after respacing.
  std::vector<std::int64_t> model_t;

  /// Linear beta from beta_start to beta_end over T = 1000 steps. For other T
  /// the endpoints are scaled by 1000 / T so the terminal alpha_bar stays ~0.
  static NoiseSchedule linear(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02);

  /// Sub-schedule over steps 1, 1 + stride, 1 + 2 stride, ... with betas
  /// recomputed from alpha_bar so the marginals are unchanged.
  NoiseSchedule respaced(int stride) const;

  /// Reverse-kernel variance beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
  double posterior_variance(int t) const;

  void check_step(int t) const;
};

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps. Throws DomainError
/// when t is outside 1..T.
torch::Tensor forward_diffuse(const torch::Tensor& x0, int t, const torch::Tensor& eps, const NoiseSchedule& s);
/// Per-sample steps (int64 tensor of length N).
torch::Tensor forward_diffuse(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                              const NoiseSchedule& s);

/// -eps / sqrt(1 - alpha_bar_t).
torch::Tensor score_from_eps(const torch::Tensor& eps_pred, int t, const NoiseSchedule& s);

/// Anything that predicts the added noise from (x_t, model time).
class EpsPredictor {
 public:
  virtual ~EpsPredictor() = default;
  /// x: N x D x H x W, t: int64 tensor of length N holding model times.
  virtual torch::Tensor predict(const torch::Tensor& x, const torch::Tensor& t) = 0;
  virtual int channels() const = 0;
};

struct UNetConfig {
  int channels = 6;
  int base_width = 16;
  int groups = 8;

  bool operator==(const UNetConfig&) const = default;
};

class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(const UNetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t);
  const UNetConfig& config() const { return cfg_; }
  std::int64_t parameter_count() const;

 private:
  UNetConfig cfg_;
  torch::nn::Sequential time_mlp_{nullptr};
  torch::nn::Conv2d in_conv_{nullptr};
  torch::nn::ModuleList down_{nullptr}, up_{nullptr};
  torch::nn::Conv2d down0_{nullptr}, down1_{nullptr};
  torch::nn::GroupNorm out_norm_{nullptr};
  torch::nn::Conv2d out_conv_{nullptr};
};
TORCH_MODULE(UNet);

/// EpsPredictor around a U-Net in eval mode with gradients disabled.
class UNetPredictor : public EpsPredictor {
 public:
  explicit UNetPredictor(UNet net) : net_(std::move(net)) { net_->eval(); }
  torch::Tensor predict(const torch::Tensor& x, const torch::Tensor& t) override;
  int channels() const override { return net_->config().channels; }
  UNet& net() { return net_; }

 private:
  UNet net_;
};

/// Mean over the batch of ||eps - model(x_t, t)||^2 (summed over D x H x W),
/// t ~ U{1..T}, eps ~ N(0, I), one draw per sample. Gradients flow through
/// the model call.
torch::Tensor denoising_loss(const std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>& model,
                             const torch::Tensor& batch, const NoiseSchedule& s, at::Generator& gen);

struct TrainConfig {
  int steps = 5000;
  int batch_size = 32;
  double learning_rate = 5e-4;
  int eval_interval = 100;
  std::uint64_t seed = 1;
};

struct LossRecord {
  int step = 0;
  double train_loss = 0.0;  // per-element mean of the step's batch, NaN at step 0
  double val_loss = 0.0;    // per-element mean on the fixed validation set
};

struct TrainResult {
  std::vector<LossRecord> history;
  int best_step = 0;
  double best_val_loss = 0.0;
  double initial_val_loss = 0.0;
};

/// Draws one clean training batch (N x D x H x W).
using BatchSource = std::function<torch::Tensor(int batch_size)>;

/// Adam on the denoising loss. The validation set is scored with fixed
/// (t, eps) draws every eval_interval steps and the lowest-loss parameters
/// are loaded back into `net` at the end. Throws NumericalError on NaN.
/// `progress` (optional) sees every evaluation record.
TrainResult train(UNet& net, const BatchSource& train_batches, const torch::Tensor& val_set, const NoiseSchedule& s,
                  const TrainConfig& cfg, const std::function<void(const LossRecord&)>& progress = {});

/// Fixed-draw validation loss (per-element mean). Uses its own generator.
double validation_loss(UNet& net, const torch::Tensor& val_set, const NoiseSchedule& s, std::uint64_t seed);

/// Standard DDPM reverse chain from x_T ~ N(0, I), no noise at t = 1.
/// `clip` as in reverse_mean.
torch::Tensor ancestral_sample(EpsPredictor& model, const NoiseSchedule& s, int n, int height, int width,
                               at::Generator& gen, double clip = 0.0);

/// Mean of the reverse kernel p(x_{t-1} | x_t). With clip > 0 the clean
/// estimate implied by eps is clamped to [-clip, clip] first, which keeps an
/// imperfect model from drifting off the data range at large t.
torch::Tensor reverse_mean(const torch::Tensor& x_t, const torch::Tensor& eps, int t, const NoiseSchedule& s,
                           double clip = 0.0);

at::Generator make_generator(std::uint64_t seed);

/// Checkpoint: U-Net parameters, config, schedule length and training summary.
void save_checkpoint(const std::filesystem::path& path, UNet& net, const std::string& modality, int schedule_T,
                     const TrainResult* result = nullptr);
struct Checkpoint {
  UNet net{nullptr};
  std::string modality;
  int schedule_T = 1000;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Exact Gaussian-prior noise predictor: data ~ N(mean, cov) on a
/// fixed D x H x W shape, eps = sqrt(1 - ab) C^-1 (x - sqrt(ab) m) with
/// C = ab Sigma + (1 - ab) I. Times are indices into `s`'s base schedule.
class GaussianEpsPredictor : public EpsPredictor {
 public:
  /// mean: length P = D*H*W, cov: P x P (row-major), float64.
  GaussianEpsPredictor(int channels, int height, int width, torch::Tensor mean, torch::Tensor cov,
                       const NoiseSchedule& base);
  torch::Tensor predict(const torch::Tensor& x, const torch::Tensor& t) override;
  int channels() const override { return channels_; }

 private:
  int channels_, height_, width_;
  torch::Tensor mean_, cov_;
  torch::Tensor gains_;  // (T + 1) x P x P when P is small
  std::vector<double> alpha_bar_;
};

}  // namespace grainfuse::diffusion
