#include "grainfuse/diffusion.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include "grainfuse/errors.hpp"
#include "grainfuse/tensor_io.hpp"

namespace grainfuse::diffusion {

using nlohmann::json;

at::Generator make_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

// --- schedule -------------------------------------------------------------

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("schedule needs T >= 1");
  const double scale = 1000.0 / T;
  const double b0 = beta_start * scale, b1 = beta_end * scale;
  if (b1 >= 1.0) throw ConfigError("schedule with T = " + std::to_string(T) + " is too short for the beta range");
  NoiseSchedule s;
  s.T = T;
  s.beta.assign(T + 1, 0.0);
  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);
  s.model_t.resize(T + 1);
  for (int t = 0; t <= T; ++t) s.model_t[t] = t;
  for (int t = 1; t <= T; ++t) {
    s.beta[t] = T == 1 ? b0 : b0 + (b1 - b0) * (t - 1) / (T - 1);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  return s;
}

NoiseSchedule NoiseSchedule::respaced(int stride) const {
  if (stride < 1) throw ConfigError("timestep stride must be >= 1");
  if (stride == 1) return *this;
  NoiseSchedule s;
  s.beta = {0.0};
  s.alpha = {1.0};
  s.alpha_bar = {1.0};
  s.model_t = {0};
  for (int t = 1; t <= T; t += stride) {
    const double ab = alpha_bar[t];
    const double b = 1.0 - ab / s.alpha_bar.back();
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    s.alpha_bar.push_back(ab);
    s.model_t.push_back(model_t[t]);
  }
  s.T = static_cast<int>(s.beta.size()) - 1;
  return s;
}

double NoiseSchedule::posterior_variance(int t) const {
  check_step(t);
  return beta[t] * (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]);
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > T) throw DomainError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(T));
}

torch::Tensor forward_diffuse(const torch::Tensor& x0, int t, const torch::Tensor& eps, const NoiseSchedule& s) {
  s.check_step(t);
  return std::sqrt(s.alpha_bar[t]) * x0 + std::sqrt(1.0 - s.alpha_bar[t]) * eps;
}

torch::Tensor forward_diffuse(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                              const NoiseSchedule& s) {
  const auto lo = t.min().item<std::int64_t>(), hi = t.max().item<std::int64_t>();
  s.check_step(static_cast<int>(lo));
  s.check_step(static_cast<int>(hi));
  const auto ab = torch::tensor(s.alpha_bar, torch::kFloat64).index_select(0, t);
  std::vector<std::int64_t> shape(x0.dim(), 1);
  shape[0] = x0.size(0);
  const auto a = ab.sqrt().to(x0.scalar_type()).view(shape);
  const auto b = (1.0 - ab).sqrt().to(x0.scalar_type()).view(shape);
  return a * x0 + b * eps;
}

torch::Tensor score_from_eps(const torch::Tensor& eps_pred, int t, const NoiseSchedule& s) {
  s.check_step(t);
  return -eps_pred / std::sqrt(1.0 - s.alpha_bar[t]);
}

torch::Tensor reverse_mean(const torch::Tensor& x_t, const torch::Tensor& eps, int t, const NoiseSchedule& s,
                           double clip) {
  s.check_step(t);
  if (!(clip > 0)) return (x_t - (s.beta[t] / std::sqrt(1.0 - s.alpha_bar[t])) * eps) / std::sqrt(s.alpha[t]);
  // Same mean written as q(x_{t-1} | x_t, x0) with the clamped estimate of x0.
  const double ab = s.alpha_bar[t], ab_prev = s.alpha_bar[t - 1];
  const auto x0 = ((x_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab)).clamp(-clip, clip);
  return (std::sqrt(ab_prev) * s.beta[t] / (1.0 - ab)) * x0 + (std::sqrt(s.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab)) * x_t;
}

// --- U-Net ----------------------------------------------------------------

namespace {

torch::Tensor timestep_embedding(const torch::Tensor& t, int dim) {
  const int half = dim / 2;
  const auto freqs =
      torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat32) / static_cast<double>(half));
  const auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int in, int out, int temb, int groups)
      : norm1_(register_module("norm1", torch::nn::GroupNorm(groups, in))),
        conv1_(register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)))),
        temb_(register_module("temb", torch::nn::Linear(temb, out))),
        norm2_(register_module("norm2", torch::nn::GroupNorm(groups, out))),
        conv2_(register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)))) {
    if (in != out) skip_ = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1)));
  }

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& emb) {
    auto h = conv1_(torch::silu(norm1_(x)));
    h = h + temb_(emb).unsqueeze(-1).unsqueeze(-1);
    h = conv2_(torch::silu(norm2_(h)));
    return h + (skip_ ? skip_(x) : x);
  }

 private:
  torch::nn::GroupNorm norm1_;
  torch::nn::Conv2d conv1_;
  torch::nn::Linear temb_;
  torch::nn::GroupNorm norm2_;
  torch::nn::Conv2d conv2_;
  torch::nn::Conv2d skip_{nullptr};
};
TORCH_MODULE(ResBlock);

}  // namespace

UNetImpl::UNetImpl(const UNetConfig& cfg) : cfg_(cfg) {
  if (cfg.channels < 1 || cfg.base_width < 1 || cfg.base_width % cfg.groups != 0)
    throw ConfigError("U-Net base width must be a positive multiple of the group count");
  const int w = cfg.base_width, temb = 4 * w, g = cfg.groups;
  time_mlp_ = register_module(
      "time_mlp", torch::nn::Sequential(torch::nn::Linear(w, temb), torch::nn::SiLU(), torch::nn::Linear(temb, temb)));
  in_conv_ = register_module("in_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.channels, w, 3).padding(1)));
  down_ = register_module("down", torch::nn::ModuleList());
  down_->push_back(ResBlock(w, w, temb, g));
  down_->push_back(ResBlock(w, 2 * w, temb, g));
  down_->push_back(ResBlock(2 * w, 4 * w, temb, g));
  down_->push_back(ResBlock(4 * w, 4 * w, temb, g));
  down0_ = register_module("down0", torch::nn::Conv2d(torch::nn::Conv2dOptions(w, w, 3).stride(2).padding(1)));
  down1_ = register_module("down1", torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * w, 2 * w, 3).stride(2).padding(1)));
  up_ = register_module("up", torch::nn::ModuleList());
  up_->push_back(ResBlock(4 * w + 2 * w, 2 * w, temb, g));
  up_->push_back(ResBlock(2 * w + w, w, temb, g));
  out_norm_ = register_module("out_norm", torch::nn::GroupNorm(g, w));
  out_conv_ = register_module("out_conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(w, cfg.channels, 3).padding(1)));
  torch::NoGradGuard no_grad;
  out_conv_->weight.zero_();
  out_conv_->bias.zero_();
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x, const torch::Tensor& t) {
  if (x.dim() != 4 || x.size(1) != cfg_.channels || x.size(2) % 4 != 0 || x.size(3) % 4 != 0)
    throw IncompatibleError("U-Net input must be N x " + std::to_string(cfg_.channels) +
                            " x H x W with H, W divisible by 4");
  const auto emb = time_mlp_->forward(timestep_embedding(t, cfg_.base_width));
  auto block = [&](torch::nn::ModuleList& list, int i, const torch::Tensor& h) {
    return list[i]->as<ResBlockImpl>()->forward(h, emb);
  };
  auto h0 = block(down_, 0, in_conv_(x));               // 64
  auto h1 = block(down_, 1, down0_(h0));                // 32
  auto h2 = block(down_, 3, block(down_, 2, down1_(h1)));  // 16
  namespace F = torch::nn::functional;
  const auto up = F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest);
  auto u1 = block(up_, 0, torch::cat({F::interpolate(h2, up), h1}, 1));
  auto u0 = block(up_, 1, torch::cat({F::interpolate(u1, up), h0}, 1));
  return out_conv_(torch::silu(out_norm_(u0)));
}

std::int64_t UNetImpl::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : parameters()) n += p.numel();
  return n;
}

torch::Tensor UNetPredictor::predict(const torch::Tensor& x, const torch::Tensor& t) {
  torch::NoGradGuard no_grad;
  return net_->forward(x, t);
}

// --- training ---------------------------------------------------------------

torch::Tensor denoising_loss(const std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>& model,
                             const torch::Tensor& batch, const NoiseSchedule& s, at::Generator& gen) {
  const auto n = batch.size(0);
  const auto t = torch::randint(1, s.T + 1, {n}, gen, torch::kInt64);
  const auto eps = torch::randn(batch.sizes(), gen, batch.options());
  const auto x_t = forward_diffuse(batch, t, eps, s);
  const auto model_t = torch::tensor(s.model_t, torch::kInt64).index_select(0, t);
  const auto pred = model(x_t, model_t);
  return (eps - pred).pow(2).flatten(1).sum(1).mean();
}

double validation_loss(UNet& net, const torch::Tensor& val_set, const NoiseSchedule& s, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = make_generator(seed);
  const bool was_training = net->is_training();
  net->eval();
  double total = 0.0;
  const std::int64_t chunk = 32;
  for (std::int64_t i = 0; i < val_set.size(0); i += chunk) {
    const auto b = val_set.slice(0, i, std::min(i + chunk, val_set.size(0)));
    const auto loss = denoising_loss([&](const auto& x, const auto& t) { return net->forward(x, t); }, b, s, gen);
    total += loss.item<double>() * b.size(0);
  }
  net->train(was_training);
  return total / static_cast<double>(val_set.numel());
}

TrainResult train(UNet& net, const BatchSource& train_batches, const torch::Tensor& val_set, const NoiseSchedule& s,
                  const TrainConfig& cfg, const std::function<void(const LossRecord&)>& progress) {
  if (cfg.steps < 1 || cfg.batch_size < 1 || cfg.eval_interval < 1 || !(cfg.learning_rate > 0))
    throw ConfigError("training steps, batch size, eval interval and learning rate must be positive");
  if (val_set.size(0) < 1) throw ConfigError("validation set is empty");

  torch::manual_seed(cfg.seed);
  auto gen = make_generator(cfg.seed);
  const std::uint64_t val_seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  net->train();

  TrainResult result;
  std::vector<torch::Tensor> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : net->parameters()) best.push_back(p.detach().clone());
  };
  auto evaluate = [&](int step, double train_loss) {
    const double v = validation_loss(net, val_set, s, val_seed);
    LossRecord rec{step, train_loss, v};
    result.history.push_back(rec);
    if (step == 0) result.initial_val_loss = v;
    if (best.empty() || v < result.best_val_loss) {
      result.best_val_loss = v;
      result.best_step = step;
      snapshot();
    }
    if (progress) progress(rec);
  };

  evaluate(0, std::numeric_limits<double>::quiet_NaN());
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto batch = train_batches(cfg.batch_size);
    const double per_sample = static_cast<double>(batch[0].numel());
    opt.zero_grad();
    auto loss = denoising_loss([&](const auto& x, const auto& t) { return net->forward(x, t); }, batch, s, gen);
    const double value = loss.item<double>() / per_sample;
    if (!std::isfinite(value))
      throw NumericalError("training loss is not finite at step " + std::to_string(step));
    (loss / per_sample).backward();
    opt.step();
    if (step % cfg.eval_interval == 0 || step == cfg.steps) evaluate(step, value);
  }

  torch::NoGradGuard no_grad;
  auto params = net->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(best[i]);
  net->eval();
  return result;
}

// --- sampling ---------------------------------------------------------------

torch::Tensor ancestral_sample(EpsPredictor& model, const NoiseSchedule& s, int n, int height, int width,
                               at::Generator& gen, double clip) {
  torch::NoGradGuard no_grad;
  auto x = torch::randn({n, model.channels(), height, width}, gen, torch::kFloat32);
  for (int t = s.T; t >= 1; --t) {
    const auto eps = model.predict(x, torch::full({n}, s.model_t[t], torch::kInt64));
    auto mean = reverse_mean(x, eps, t, s, clip);
    if (t > 1) {
      x = mean + std::sqrt(s.posterior_variance(t)) * torch::randn(x.sizes(), gen, x.options());
    } else {
      x = mean;
    }
  }
  return x;
}

// --- checkpoints ------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, UNet& net, const std::string& modality, int schedule_T,
                     const TrainResult* result) {
  io::Container c;
  for (const auto& item : net->named_parameters()) {
    const auto p = item.value().detach().contiguous();
    std::vector<std::uint64_t> dims(p.sizes().begin(), p.sizes().end());
    c["param/" + item.key()] = io::Array::from_f32(dims, {p.data_ptr<float>(), static_cast<std::size_t>(p.numel())});
  }
  const auto& cfg = net->config();
  json meta = {{"modality", modality},
               {"channels", cfg.channels},
               {"base_width", cfg.base_width},
               {"groups", cfg.groups},
               {"schedule_T", schedule_T},
               {"parameter_count", net->parameter_count()}};
  if (result) {
    meta["best_step"] = result->best_step;
    meta["best_val_loss"] = result->best_val_loss;
    meta["initial_val_loss"] = result->initial_val_loss;
  }
  c["meta"] = io::Array::from_string(meta.dump());
  io::write_container(path, c);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto c = io::read_container(path);
  json meta;
  try {
    meta = json::parse(io::require(c, "meta").to_string());
  } catch (const json::exception& e) {
    throw FormatError("checkpoint metadata is not valid JSON: " + std::string(e.what()));
  }
  UNetConfig cfg;
  cfg.channels = meta.value("channels", 0);
  cfg.base_width = meta.value("base_width", 0);
  cfg.groups = meta.value("groups", 8);
  Checkpoint ck;
  ck.net = UNet(cfg);
  ck.modality = meta.value("modality", "");
  ck.schedule_T = meta.value("schedule_T", 1000);
  torch::NoGradGuard no_grad;
  for (auto& item : ck.net->named_parameters()) {
    const auto& a = io::require(c, "param/" + item.key());
    auto& p = item.value();
    if (a.element_count() != static_cast<std::uint64_t>(p.numel()))
      throw FormatError("checkpoint parameter '" + item.key() + "' has the wrong size");
    const auto v = a.to_f32();
    p.copy_(torch::from_blob(const_cast<float*>(v.data()), p.sizes(), torch::kFloat32));
  }
  ck.net->eval();
  return ck;
}

// --- analytic Gaussian predictor --------------------------------------------

GaussianEpsPredictor::GaussianEpsPredictor(int channels, int height, int width, torch::Tensor mean, torch::Tensor cov,
                                           const NoiseSchedule& base)
    : channels_(channels), height_(height), width_(width), mean_(mean.to(torch::kFloat64).flatten()),
      cov_(cov.to(torch::kFloat64)), alpha_bar_(base.alpha_bar) {
  const auto p = static_cast<std::int64_t>(channels) * height * width;
  if (mean_.numel() != p || cov_.size(0) != p || cov_.size(1) != p)
    throw ConfigError("Gaussian prior size does not match the field shape");
  // Small priors get every step's sqrt(1 - ab) C^-1 up front.
  if (p <= 64) {
    const auto ab = torch::tensor(alpha_bar_, torch::kFloat64).slice(0, 1).view({-1, 1, 1});
    const auto c = ab * cov_.unsqueeze(0) + (1.0 - ab) * torch::eye(p, torch::kFloat64).unsqueeze(0);
    gains_ = torch::cat({torch::zeros({1, p, p}, torch::kFloat64), (1.0 - ab).sqrt() * at::linalg_inv(c)});
  }
}

torch::Tensor GaussianEpsPredictor::predict(const torch::Tensor& x, const torch::Tensor& t) {
  const auto n = x.size(0);
  const auto p = mean_.numel();
  const auto flat = x.to(torch::kFloat64).reshape({n, p});
  const auto tc = t.to(torch::kInt64).contiguous();
  const auto* tp = tc.data_ptr<std::int64_t>();
  if (gains_.defined() && std::all_of(tp, tp + n, [&](std::int64_t v) { return v == tp[0]; })) {
    const double ab = alpha_bar_.at(tp[0]);
    return (flat - std::sqrt(ab) * mean_).mm(gains_[tp[0]]).to(x.scalar_type()).reshape(x.sizes());
  }
  auto out = torch::empty({n, p}, torch::kFloat64);
  const auto eye = torch::eye(p, torch::kFloat64);
  // Rows sharing a time are solved together.
  const auto times = std::get<0>(torch::_unique(t));
  for (std::int64_t i = 0; i < times.size(0); ++i) {
    const auto ti = times[i].item<std::int64_t>();
    const double ab = alpha_bar_.at(ti);
    const auto rows = (t == ti).nonzero().flatten();
    const auto cmat = ab * cov_ + (1.0 - ab) * eye;
    const auto rhs = (flat.index_select(0, rows) - std::sqrt(ab) * mean_).transpose(0, 1);
    const auto sol = at::linalg_solve(cmat, rhs).transpose(0, 1);
    out.index_copy_(0, rows, std::sqrt(1.0 - ab) * sol);
  }
  return out.to(x.scalar_type()).reshape(x.sizes());
}

}  // namespace grainfuse::diffusion
