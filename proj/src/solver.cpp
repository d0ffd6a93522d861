#include "grainfuse/solver.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "grainfuse/errors.hpp"
#include "grainfuse/tensor_bridge.hpp"

namespace grainfuse::solver {

// --- masks ------------------------------------------------------------------

MaskSpec MaskSpec::parse(const std::string& text) {
  MaskSpec m;
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  auto bad = [&](const std::string& why) { return ConfigError("bad mask spec '" + text + "': " + why); };
  try {
    if (kind == "none" || kind == "full") {
      if (!arg.empty()) throw bad("takes no argument");
      m.kind = kind == "none" ? Kind::None : Kind::Full;
      m.fraction = kind == "none" ? 0.0 : 1.0;
    } else if (kind == "random") {
      std::size_t used = 0;
      m.kind = Kind::Random;
      m.fraction = std::stod(arg, &used);
      if (used != arg.size()) throw bad("trailing characters");
      if (!(m.fraction >= 0.0 && m.fraction <= 1.0)) throw bad("fraction must lie in [0, 1]");
    } else if (kind == "grid") {
      std::size_t used = 0;
      m.kind = Kind::Grid;
      m.stride = std::stoi(arg, &used);
      if (used != arg.size()) throw bad("trailing characters");
      if (m.stride < 1) throw bad("stride must be >= 1");
      m.fraction = 1.0 / (static_cast<double>(m.stride) * m.stride);
    } else {
      throw bad("expected random:p, grid:s, none or full");
    }
  } catch (const std::logic_error&) {  // stod/stoi
    throw bad("unparsable number");
  }
  return m;
}

std::string MaskSpec::to_string() const {
  switch (kind) {
    case Kind::None: return "none";
    case Kind::Full: return "full";
    case Kind::Grid: return "grid:" + std::to_string(stride);
    case Kind::Random: {
      std::ostringstream os;
      os.precision(17);
      os << "random:" << fraction;
      return os.str();
    }
  }
  return {};
}

BoundaryMap MaskSpec::pixels(int height, int width, std::mt19937_64& rng) const {
  BoundaryMap m(height, width);
  switch (kind) {
    case Kind::None: break;
    case Kind::Full: std::fill(m.data.begin(), m.data.end(), 1); break;
    case Kind::Grid:
      for (int r = 0; r < height; r += stride)
        for (int c = 0; c < width; c += stride) m(r, c) = 1;
      break;
    case Kind::Random: {
      const auto n = static_cast<std::size_t>(std::llround(fraction * m.size()));
      std::vector<std::size_t> order(m.size());
      std::iota(order.begin(), order.end(), 0);
      // partial Fisher-Yates with explicit draws; std::shuffle's sequence is implementation-defined
      for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, order.size() - 1);
        std::swap(order[i], order[pick(rng)]);
        m.data[order[i]] = 1;
      }
      break;
    }
  }
  return m;
}

MaskingOperator::MaskingOperator(const torch::Tensor& mask) {
  if (mask.dim() != 3) throw ConfigError("mask must be D x H x W");
  d_ = static_cast<int>(mask.size(0));
  h_ = static_cast<int>(mask.size(1));
  w_ = static_cast<int>(mask.size(2));
  index_ = torch::nonzero(mask.reshape({-1}).ne(0)).reshape({-1}).to(torch::kInt64).contiguous();
}

torch::Tensor MaskingOperator::apply(const torch::Tensor& x) const {
  if (x.dim() == 3) return apply(x.unsqueeze(0)).squeeze(0);
  if (x.dim() != 4 || x.size(1) != d_ || x.size(2) != h_ || x.size(3) != w_)
    throw ConfigError("masking operator applied to a tensor of the wrong shape");
  return x.reshape({x.size(0), -1}).index_select(1, index_);
}

torch::Tensor MaskingOperator::scatter(const torch::Tensor& v) const {
  if (v.dim() == 1) return scatter(v.unsqueeze(0)).squeeze(0);
  auto out = torch::zeros({v.size(0), std::int64_t{d_} * h_ * w_}, v.options());
  out.index_copy_(1, index_, v);
  return out.reshape({v.size(0), d_, h_, w_});
}

void MaskingOperator::assign(torch::Tensor& x, const torch::Tensor& v) const {
  auto flat = x.view({x.size(0), -1});
  flat.index_copy_(1, index_, v.dim() == 1 ? v.unsqueeze(0).expand({x.size(0), v.size(0)}) : v);
}

torch::Tensor MaskingOperator::mask() const {
  auto m = torch::zeros({std::int64_t{d_} * h_ * w_}, torch::kBool);
  m.index_fill_(0, index_, true);
  return m.reshape({d_, h_, w_});
}

// --- observations -----------------------------------------------------------

bool Observation::noiseless() const { return sigma.numel() == 0 || sigma.max().item<double>() == 0.0; }

Observation make_observation(const Field& sample, const data::ModalityLayout& layout, const ObservationSpec& spec,
                             std::mt19937_64& rng) {
  if (sample.channels != layout.channels)
    throw ConfigError("sample has " + std::to_string(sample.channels) + " channels, layout " + layout.name +
                      " expects " + std::to_string(layout.channels));
  if (spec.sigma_ebsd < 0 || spec.sigma_pl < 0) throw ConfigError("noise level must be >= 0");
  const int H = sample.height, W = sample.width, D = sample.channels;

  Observation obs;
  obs.layout = layout;
  obs.spec = spec;
  obs.ebsd_pixels = BoundaryMap(H, W);
  BoundaryMap pl_pixels(H, W);
  if (layout.has_ebsd()) obs.ebsd_pixels = spec.ebsd.pixels(H, W, rng);
  if (layout.has_pl()) pl_pixels = spec.pl.pixels(H, W, rng);

  auto mask = torch::zeros({D, H, W}, torch::kUInt8);
  auto sig = torch::zeros({D, H, W}, torch::kFloat64);
  auto m = mask.accessor<std::uint8_t, 3>();
  auto s = sig.accessor<double, 3>();
  auto fill = [&](int offset, const BoundaryMap& px, double sigma) {
    for (int k = offset; k < offset + 3; ++k)
      for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
          m[k][r][c] = px(r, c);
          s[k][r][c] = sigma;
        }
  };
  if (layout.has_ebsd()) fill(layout.ebsd_offset(), obs.ebsd_pixels, spec.sigma_ebsd);
  if (layout.has_pl()) fill(layout.pl_offset(), pl_pixels, spec.sigma_pl);

  obs.op = MaskingOperator(mask);
  const auto truth = obs.op.apply(to_tensor(sample)[0]);
  obs.sigma = sig.reshape({-1}).index_select(0, obs.op.index());
  auto noise = torch::empty({obs.op.size()}, torch::kFloat64);
  std::normal_distribution<double> normal;
  auto* np = noise.data_ptr<double>();
  for (std::int64_t i = 0; i < noise.numel(); ++i) np[i] = normal(rng);
  obs.values = (truth.to(torch::kFloat64) + obs.sigma * noise).to(torch::kFloat32);
  return obs;
}

// --- samplers ---------------------------------------------------------------

namespace {

void check_compatible(const diffusion::EpsPredictor& model, const Observation& obs) {
  if (model.channels() != obs.op.channels())
    throw IncompatibleError("model has " + std::to_string(model.channels()) + " channels, observation " +
                            std::to_string(obs.op.channels()));
}

double uniform01(at::Generator& gen) { return torch::rand({1}, gen, torch::kFloat64).item<double>(); }

// Systematic resampling: one uniform offset, K evenly spaced positions.
torch::Tensor systematic_indices(const torch::Tensor& w, at::Generator& gen) {
  const auto K = w.size(0);
  const double u = uniform01(gen);
  const auto cum = w.cumsum(0);
  const auto* cp = cum.data_ptr<double>();
  auto idx = torch::empty({K}, torch::kInt64);
  auto* ip = idx.data_ptr<std::int64_t>();
  std::int64_t j = 0;
  for (std::int64_t i = 0; i < K; ++i) {
    const double pos = (u + static_cast<double>(i)) / static_cast<double>(K);
    while (j < K - 1 && cp[j] < pos) ++j;
    ip[i] = j;
  }
  return idx;
}

}  // namespace

torch::Tensor fps_smc_sample(diffusion::EpsPredictor& model, const diffusion::NoiseSchedule& s,
                             const Observation& obs, const SmcConfig& cfg, at::Generator& gen,
                             SmcDiagnostics* diag) {
  if (cfg.particles < 1) throw ConfigError("FPS-SMC needs at least one particle");
  if (cfg.tau2 < 0) throw ConfigError("tau2 must be >= 0");
  check_compatible(model, obs);
  torch::NoGradGuard no_grad;
  const int K = cfg.particles;
  const std::int64_t M = obs.op.size();
  const std::int64_t P = std::int64_t{obs.op.channels()} * obs.op.height() * obs.op.width();
  const bool conditioned = M > 0;

  auto x = torch::randn({K, obs.op.channels(), obs.op.height(), obs.op.width()}, gen, torch::kFloat32);
  // Per-coordinate observation data. The path y_t shares one eta across particles.
  std::vector<double> Y(M), eta(M), sig2(M), y(M), rho2(M), fvar(M);
  std::vector<std::int64_t> idx(M);
  if (conditioned) {
    const auto e = torch::randn({M}, gen, torch::kFloat32).to(torch::kFloat64).contiguous();
    const auto yv = obs.values.to(torch::kFloat64).contiguous();
    const auto sv = obs.sigma.to(torch::kFloat64).contiguous();
    const auto iv = obs.op.index().contiguous();
    for (std::int64_t j = 0; j < M; ++j) {
      eta[j] = e.data_ptr<double>()[j];
      Y[j] = yv.data_ptr<double>()[j];
      sig2[j] = sv.data_ptr<double>()[j] * sv.data_ptr<double>()[j];
      idx[j] = iv.data_ptr<std::int64_t>()[j];
    }
  }
  std::vector<double> logw(K, -std::log(static_cast<double>(K))), w(K), ll(K), mu_obs;
  if (diag) *diag = {};

  for (int t = s.T; t >= 1; --t) {
    const auto eps = model.predict(x, torch::full({K}, s.model_t[t], torch::kInt64));
    auto mu = diffusion::reverse_mean(x, eps, t, s, cfg.clip_x0).contiguous();
    const double step_var = t > 1 ? s.posterior_variance(t) : 0.0;
    // The last reverse kernel is deterministic; beta_1 stands in as its spread
    // so the fusion stays well defined.
    const double prior_var = t > 1 ? step_var : s.beta[1];

    double ess = K;
    if (conditioned) {
      const double ab = s.alpha_bar[t - 1];
      const double ya = std::sqrt(ab), yb = std::sqrt(1.0 - ab);
      for (std::int64_t j = 0; j < M; ++j) {
        y[j] = ya * Y[j] + yb * eta[j];
        rho2[j] = ab * sig2[j] + cfg.tau2;
        fvar[j] = 1.0 / (1.0 / prior_var + 1.0 / rho2[j]);
      }
      mu_obs.resize(static_cast<std::size_t>(K) * M);
      const float* mp = mu.data_ptr<float>();
      for (int k = 0; k < K; ++k) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < M; ++j) {
          const double m = mp[k * P + idx[j]];
          mu_obs[k * M + j] = m;
          const double var = prior_var + rho2[j];
          const double d = y[j] - m;
          acc += d * d / var + std::log(2.0 * std::numbers::pi * var);
        }
        logw[k] += -0.5 * acc;
      }
      double top = -std::numeric_limits<double>::infinity();
      for (double v : logw) top = std::max(top, v);
      double total = 0.0;
      for (double v : logw) total += std::exp(v - top);
      const double norm = top + std::log(total);
      if (!std::isfinite(norm))
        throw NumericalError("all particle weights vanished at step " + std::to_string(t));
      double sq = 0.0;
      for (int k = 0; k < K; ++k) {
        logw[k] -= norm;
        w[k] = std::exp(logw[k]);
        sq += w[k] * w[k];
      }
      ess = 1.0 / sq;
      if (ess < 0.5 * K) {
        const auto pick = systematic_indices(torch::tensor(w, torch::kFloat64), gen);
        const auto* pp = pick.data_ptr<std::int64_t>();
        mu = mu.index_select(0, pick).contiguous();
        std::vector<double> moved(mu_obs.size());
        for (int k = 0; k < K; ++k)
          std::copy_n(mu_obs.begin() + pp[k] * M, M, moved.begin() + static_cast<std::int64_t>(k) * M);
        mu_obs.swap(moved);
        std::fill(logw.begin(), logw.end(), -std::log(static_cast<double>(K)));
        if (diag) ++diag->resamples;
      }
    }
    if (diag) diag->ess.push_back(ess);

    torch::Tensor z;
    if (t > 1) {
      z = torch::randn(mu.sizes(), gen, mu.options());
      x = (mu + std::sqrt(step_var) * z).contiguous();
    } else {
      x = mu;
    }
    if (conditioned) {
      // precision-weighted fusion of the reverse kernel with the observation path
      float* xp = x.data_ptr<float>();
      const float* zp = t > 1 ? z.data_ptr<float>() : nullptr;
      for (int k = 0; k < K; ++k)
        for (std::int64_t j = 0; j < M; ++j) {
          const std::int64_t at = k * P + idx[j];
          double v = fvar[j] * (mu_obs[k * M + j] / prior_var + y[j] / rho2[j]);
          if (zp) v += std::sqrt(fvar[j]) * zp[at];
          xp[at] = static_cast<float>(v);
        }
    }
  }

  // final draw by weight
  const double u = uniform01(gen);
  int pick = 0;
  for (double cum = std::exp(logw[0]); pick < K - 1 && cum < u; cum += std::exp(logw[++pick])) {
  }
  if (diag) diag->chosen = pick;
  return x.slice(0, pick, pick + 1).clone();
}

torch::Tensor replacement_sample(diffusion::EpsPredictor& model, const diffusion::NoiseSchedule& s,
                                 const Observation& obs, at::Generator& gen, double clip_x0) {
  check_compatible(model, obs);
  torch::NoGradGuard no_grad;
  const bool conditioned = !obs.op.empty();
  auto x = torch::randn({1, obs.op.channels(), obs.op.height(), obs.op.width()}, gen, torch::kFloat32);
  torch::Tensor eta, Y;
  if (conditioned) {
    eta = torch::randn({obs.op.size()}, gen, torch::kFloat32).to(torch::kFloat64);
    Y = obs.values.to(torch::kFloat64);
  }
  for (int t = s.T; t >= 1; --t) {
    const auto eps = model.predict(x, torch::full({1}, s.model_t[t], torch::kInt64));
    const auto mu = diffusion::reverse_mean(x, eps, t, s, clip_x0);
    x = t > 1 ? mu + std::sqrt(s.posterior_variance(t)) * torch::randn(mu.sizes(), gen, mu.options()) : mu;
    if (!conditioned) continue;
    if (t > 1) {
      const double ab = s.alpha_bar[t - 1];
      obs.op.assign(x, (std::sqrt(ab) * Y + std::sqrt(1.0 - ab) * eta).to(torch::kFloat32));
    } else {
      // noisy coordinates keep the model's estimate at t = 0
      const auto current = obs.op.apply(x)[0].to(torch::kFloat64);
      obs.op.assign(x, torch::where(obs.sigma.eq(0.0), Y, current).to(torch::kFloat32));
    }
  }
  return x;
}

// --- reconstruction sets ----------------------------------------------------

std::vector<std::uint64_t> reconstruction_seeds(std::uint64_t seed, int n) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(n)};
  std::vector<std::uint32_t> words(2 * static_cast<std::size_t>(std::max(n, 0)));
  seq.generate(words.begin(), words.end());
  std::vector<std::uint64_t> out(std::max(n, 0));
  for (int i = 0; i < n; ++i) out[i] = (std::uint64_t{words[2 * i]} << 32) | words[2 * i + 1];
  return out;
}

ReconstructionSet reconstruct_set(diffusion::EpsPredictor& model, const diffusion::NoiseSchedule& s,
                                  const Observation& obs, const SolverConfig& cfg) {
  if (cfg.n < 1) throw ConfigError("reconstruction set size must be >= 1");
  if (cfg.method != "fps_smc" && cfg.method != "replacement")
    throw ConfigError("unknown solver method '" + cfg.method + "'");
  check_compatible(model, obs);

  ReconstructionSet set;
  set.seeds = reconstruction_seeds(cfg.seed, cfg.n);
  std::vector<torch::Tensor> out(cfg.n);
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto worker = [&] {
    for (int i = next++; i < cfg.n && !failed; i = next++) {
      try {
        auto gen = diffusion::make_generator(set.seeds[i]);
        out[i] = cfg.method == "fps_smc" ? fps_smc_sample(model, s, obs, cfg.smc, gen)
                                         : replacement_sample(model, s, obs, gen, cfg.smc.clip_x0);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  const int workers = std::clamp(cfg.workers, 1, cfg.n);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  set.samples = torch::cat(out, 0);
  return set;
}

}  // namespace grainfuse::solver
