#include "grainfuse/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "grainfuse/errors.hpp"

namespace grainfuse::tasks {

SobelCombine parse_sobel_combine(const std::string& name) {
  if (name == "l2") return SobelCombine::L2;
  if (name == "max") return SobelCombine::Max;
  throw ConfigError("unknown Sobel channel combination '" + name + "' (expected l2 or max)");
}

ScalarMap sobel_magnitude(const Field& img, SobelCombine combine) {
  static constexpr int kGx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  ScalarMap out(img.height, img.width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      double acc = 0.0;
      for (int k = 0; k < img.channels; ++k) {
        double gx = 0.0, gy = 0.0;
        for (int i = 0; i < 3; ++i) {
          const int rr = std::clamp(r + i - 1, 0, img.height - 1);
          for (int j = 0; j < 3; ++j) {
            const int cc = std::clamp(c + j - 1, 0, img.width - 1);
            const double v = img(rr, cc, k);
            gx += kGx[i][j] * v;
            gy += kGx[j][i] * v;
          }
        }
        if (combine == SobelCombine::L2)
          acc += gx * gx + gy * gy;
        else
          acc = std::max(acc, std::sqrt(gx * gx + gy * gy));
      }
      out(r, c) = combine == SobelCombine::L2 ? std::sqrt(acc) : acc;
    }
  return out;
}

ScalarMap sobel_map(const Field& img, SobelCombine combine) {
  ScalarMap m = sobel_magnitude(img, combine);
  const auto [lo, hi] = std::minmax_element(m.data.begin(), m.data.end());
  const double a = *lo, range = *hi - *lo;
  if (!(range > 0)) {
    std::fill(m.data.begin(), m.data.end(), 0.0);
    return m;
  }
  for (auto& v : m.data) v = std::clamp((v - a) / range, 0.0, 1.0);
  return m;
}

ScalarMap aggregate(const std::vector<ScalarMap>& maps) {
  if (maps.empty()) throw ConfigError("cannot aggregate an empty set of maps");
  ScalarMap out(maps.front().height, maps.front().width);
  for (const auto& m : maps) {
    if (!m.same_shape(out)) throw ConfigError("aggregate: map shapes differ");
    for (std::size_t i = 0; i < m.size(); ++i) out.data[i] += m.data[i];
  }
  for (auto& v : out.data) v /= static_cast<double>(maps.size());
  return out;
}

KneeResult knee_threshold(const ScalarMap& s, double sigma) {
  KneeResult res;
  res.boundaries = BoundaryMap(s.height, s.width);
  const std::size_t n = s.size();
  if (n == 0) return res;
  std::vector<double> y(s.data.begin(), s.data.end());
  std::sort(y.begin(), y.end(), std::greater<>());

  std::vector<double> ys = y;
  if (sigma > 0) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    for (int i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    const double ksum = std::accumulate(k.begin(), k.end(), 0.0);
    for (auto& v : k) v /= ksum;
    const auto last = static_cast<std::ptrdiff_t>(n) - 1;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = -radius; j <= radius; ++j)
        acc += k[j + radius] * y[std::clamp(static_cast<std::ptrdiff_t>(i) + j, std::ptrdiff_t{0}, last)];
      ys[i] = acc;
    }
  }
  const auto [lo_it, hi_it] = std::minmax_element(ys.begin(), ys.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi - lo < 1e-9 || n < 2) {
    res.cutoff = hi;
    return res;
  }
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) / static_cast<double>(n - 1);
    const double gap = (1.0 - x) - (ys[i] - lo) / (hi - lo);
    if (gap > best) {
      best = gap;
      res.elbow_index = static_cast<int>(i);
    }
  }
  res.cutoff = ys[res.elbow_index];
  for (std::size_t i = 0; i < n; ++i) res.boundaries.data[i] = s.data[i] >= res.cutoff ? 1 : 0;
  return res;
}

std::vector<Field> pl_channels(const std::vector<Field>& recons, const data::ModalityLayout& layout) {
  if (!layout.has_pl()) throw UnsupportedTaskError("reconstructions of modality " + layout.name + " have no PL channels");
  std::vector<Field> out;
  for (const auto& f : recons) {
    if (f.channels != layout.channels) throw IncompatibleError("reconstruction channel count does not match " + layout.name);
    out.push_back(select_channels(f, layout.pl_offset(), 3));
  }
  return out;
}

std::vector<Field> ebsd_channels(const std::vector<Field>& recons, const data::ModalityLayout& layout) {
  if (!layout.has_ebsd())
    throw UnsupportedTaskError("reconstructions of modality " + layout.name + " have no EBSD channels");
  std::vector<Field> out;
  for (const auto& f : recons) {
    if (f.channels != layout.channels) throw IncompatibleError("reconstruction channel count does not match " + layout.name);
    out.push_back(select_channels(f, layout.ebsd_offset(), 3));
  }
  return out;
}

BoundaryPrediction predict_boundaries_pl(const std::vector<Field>& pl_images, double knee_sigma, SobelCombine combine) {
  if (pl_images.empty()) throw ConfigError("boundary prediction needs at least one image");
  std::vector<ScalarMap> maps;
  for (const auto& f : pl_images) maps.push_back(sobel_map(f, combine));
  BoundaryPrediction p;
  p.mean_sobel = aggregate(maps);
  auto k = knee_threshold(p.mean_sobel, knee_sigma);
  p.boundaries = std::move(k.boundaries);
  p.cutoff = k.cutoff;
  return p;
}

BoundaryPrediction predict_boundaries(const std::vector<Field>& recons, const data::ModalityLayout& layout,
                                      double knee_sigma, SobelCombine combine) {
  return predict_boundaries_pl(pl_channels(recons, layout), knee_sigma, combine);
}

// --- alignment network ------------------------------------------------------

namespace {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
double gelu_grad(double x) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

struct Adam {
  explicit Adam(std::size_t n, double lr) : lr(lr), m(n, 0.0), v(n, 0.0) {}
  void step(std::vector<double*>& params, const std::vector<double>& grad) {
    ++t;
    const double c1 = 1.0 - std::pow(0.9, t), c2 = 1.0 - std::pow(0.999, t);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * grad[i];
      v[i] = 0.999 * v[i] + 0.001 * grad[i] * grad[i];
      *params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + 1e-8);
    }
  }
  double lr;
  int t = 0;
  std::vector<double> m, v;
};

}  // namespace

AlignmentNet::AlignmentNet(int hidden, std::uint64_t seed) : hidden_(hidden) {
  if (hidden < 1) throw ConfigError("alignment hidden width must be positive");
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(3.0);
  std::uniform_real_distribution<double> u(-bound, bound);
  w1.resize(hidden * 3);
  b1.resize(hidden);
  for (auto& w : w1) w = u(rng);
  for (auto& b : b1) b = u(rng);
  w2.assign(3 * hidden, 0.0);
  b2.assign(3, 0.0);
}

std::array<double, 3> AlignmentNet::apply(const std::array<double, 3>& x) const {
  std::array<double, 3> out = x;
  for (int k = 0; k < 3; ++k) out[k] += b2[k];
  for (int j = 0; j < hidden_; ++j) {
    const double h = gelu(w1[j * 3] * x[0] + w1[j * 3 + 1] * x[1] + w1[j * 3 + 2] * x[2] + b1[j]);
    for (int k = 0; k < 3; ++k) out[k] += w2[k * hidden_ + j] * h;
  }
  return out;
}

Field mean_field(const std::vector<Field>& fields) {
  if (fields.empty()) throw ConfigError("cannot average an empty set of fields");
  Field out(fields.front().height, fields.front().width, fields.front().channels);
  std::vector<double> acc(out.size(), 0.0);
  for (const auto& f : fields) {
    if (!f.same_shape(out)) throw ConfigError("mean_field: field shapes differ");
    for (std::size_t i = 0; i < f.size(); ++i) acc[i] += f.data[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i] / fields.size());
  return out;
}

SuperresResult superresolve(const std::vector<Field>& ebsd_recons, const Field& observed, const BoundaryMap& mask,
                            const AlignmentConfig& cfg) {
  SuperresResult res;
  res.mean = mean_field(ebsd_recons);
  const Field& xbar = res.mean;
  if (xbar.channels != 3 || !observed.same_shape(xbar) || mask.height != xbar.height || mask.width != xbar.width)
    throw ConfigError("superresolve: reconstruction, observation and mask shapes differ");
  res.net = AlignmentNet(cfg.hidden, cfg.seed);

  auto pix = [](const Field& f, int i) {
    return std::array<double, 3>{f.data[i * 3], f.data[i * 3 + 1], f.data[i * 3 + 2]};
  };
  std::vector<int> omega;
  for (int i = 0; i < mask.pixels(); ++i)
    if (mask.data[i]) omega.push_back(i);

  auto apply_all = [&](const AlignmentNet& net) {
    Field out(xbar.height, xbar.width, 3);
    for (int i = 0; i < xbar.pixels(); ++i) {
      const auto a = net.apply(pix(xbar, i));
      for (int k = 0; k < 3; ++k) out.data[i * 3 + k] = static_cast<float>(std::clamp(a[k], -1.0, 1.0));
    }
    return out;
  };

  if (static_cast<int>(omega.size()) < cfg.min_pixels) {
    res.warning = "only " + std::to_string(omega.size()) + " observed pixels; alignment skipped";
    res.aligned = apply_all(res.net);  // identity at initialization
    return res;
  }

  std::mt19937_64 rng(cfg.seed);
  std::shuffle(omega.begin(), omega.end(), rng);
  const int n_hold = std::clamp(static_cast<int>(std::lround(cfg.holdout * omega.size())), 1,
                                static_cast<int>(omega.size()) - 1);
  const std::vector<int> hold(omega.begin(), omega.begin() + n_hold);
  std::vector<int> train(omega.begin() + n_hold, omega.end());
  res.holdout_pixels = n_hold;
  res.train_pixels = static_cast<int>(train.size());

  auto holdout_mse = [&](const AlignmentNet& net) {
    double sum = 0.0;
    for (int i : hold) {
      const auto a = net.apply(pix(xbar, i));
      for (int k = 0; k < 3; ++k) {
        const double d = std::clamp(a[k], -1.0, 1.0) - observed.data[i * 3 + k];
        sum += d * d;
      }
    }
    return sum / (3.0 * hold.size());
  };

  AlignmentNet net = res.net;
  const int H = cfg.hidden;
  std::vector<double*> params;
  for (auto* vec : {&net.w1, &net.b1, &net.w2, &net.b2})
    for (auto& v : *vec) params.push_back(&v);
  Adam opt(params.size(), cfg.learning_rate);
  std::vector<double> grad(params.size());
  const std::size_t o_b1 = net.w1.size(), o_w2 = o_b1 + net.b1.size(), o_b2 = o_w2 + net.w2.size();

  AlignmentNet best = net;
  double best_mse = holdout_mse(net);
  res.holdout_mse_before = best_mse;
  std::vector<double> pre(H), act(H);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(train.size(), start + cfg.batch_size);
      const double scale = 2.0 / (3.0 * static_cast<double>(end - start));
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const int i = train[b];
        const auto x = pix(xbar, i);
        std::array<double, 3> out = x;
        for (int k = 0; k < 3; ++k) out[k] += net.b2[k];
        for (int j = 0; j < H; ++j) {
          pre[j] = net.w1[j * 3] * x[0] + net.w1[j * 3 + 1] * x[1] + net.w1[j * 3 + 2] * x[2] + net.b1[j];
          act[j] = gelu(pre[j]);
          for (int k = 0; k < 3; ++k) out[k] += net.w2[k * H + j] * act[j];
        }
        std::array<double, 3> dout;
        for (int k = 0; k < 3; ++k) dout[k] = scale * (out[k] - observed.data[i * 3 + k]);
        for (int k = 0; k < 3; ++k) {
          grad[o_b2 + k] += dout[k];
          for (int j = 0; j < H; ++j) grad[o_w2 + k * H + j] += dout[k] * act[j];
        }
        for (int j = 0; j < H; ++j) {
          double dh = 0.0;
          for (int k = 0; k < 3; ++k) dh += net.w2[k * H + j] * dout[k];
          const double dpre = dh * gelu_grad(pre[j]);
          for (int c = 0; c < 3; ++c) grad[j * 3 + c] += dpre * x[c];
          grad[o_b1 + j] += dpre;
        }
      }
      opt.step(params, grad);
    }
    const double mse = holdout_mse(net);
    if (mse < best_mse) {
      best_mse = mse;
      best = net;
      res.best_epoch = epoch;
    }
  }
  res.net = best;
  res.trained = true;
  res.holdout_mse_after = best_mse;
  res.aligned = apply_all(best);
  return res;
}

Field denoise_pl(const std::vector<Field>& recons, const data::ModalityLayout& layout) {
  return mean_field(pl_channels(recons, layout));
}

}  // namespace grainfuse::tasks
