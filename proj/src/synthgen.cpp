#include "grainfuse/synthgen.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "grainfuse/errors.hpp"

namespace grainfuse::synth {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

using Vec3 = std::array<double, 3>;

Quaternion shortest_arc(const Vec3& from, const Vec3& to) {
  const double d = from[0] * to[0] + from[1] * to[1] + from[2] * to[2];
  if (d < -1.0 + 1e-12) return Quaternion{0.0, 1.0, 0.0, 0.0};  // from = z, half turn about x
  const Vec3 c{from[1] * to[2] - from[2] * to[1], from[2] * to[0] - from[0] * to[2],
               from[0] * to[1] - from[1] * to[0]};
  return Quaternion{1.0 + d, c[0], c[1], c[2]}.normalized().canonical();
}

Quaternion draw_orientation(std::mt19937_64& rng, double spread_deg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (spread_deg < 0.0) {
    const double h = orientation::kCubeHalfEdge;
    std::uniform_real_distribution<double> cube(-h, h);
    const double a = cube(rng), b = cube(rng), c = cube(rng);
    return orientation::cu2qu({a, b, c});
  }
  // Fiber texture: c-axis scattered around the sample x axis, free spin about c.
  std::normal_distribution<double> tilt_dist(0.0, spread_deg * kDeg);
  const double tilt = std::abs(tilt_dist(rng));
  const double around = 2.0 * kPi * unit(rng);
  const double spin = 2.0 * kPi * unit(rng);
  const Vec3 c_axis{std::cos(tilt), std::sin(tilt) * std::cos(around), std::sin(tilt) * std::sin(around)};
  const Quaternion align = shortest_arc({0.0, 0.0, 1.0}, c_axis);
  return (align * Quaternion::from_axis_angle({0.0, 0.0, 1.0}, spin)).normalized().canonical();
}

}  // namespace

IdMap GrainVolume::slice_ids(int z) const {
  IdMap out(dims.ny, dims.nx);
  const auto* src = ids.data() + static_cast<std::size_t>(z) * dims.ny * dims.nx;
  std::copy(src, src + out.size(), out.data.begin());
  return out;
}

GrainVolume generate_microstructure(const MicrostructureParams& p) {
  if (p.dims.nx <= 0 || p.dims.ny <= 0 || p.dims.nz <= 0) throw ConfigError("volume dims must be positive");
  if (p.n_grains < 1) throw ConfigError("n_grains must be >= 1");
  if (p.n_grains > p.dims.voxels()) throw ConfigError("n_grains exceeds the voxel count");

  std::mt19937_64 rng(p.seed);
  const auto n_vox = p.dims.voxels();
  std::uniform_int_distribution<std::int64_t> pick(0, n_vox - 1);
  std::unordered_set<std::int64_t> taken;
  std::vector<Vec3> seeds;
  seeds.reserve(p.n_grains);
  while (static_cast<int>(seeds.size()) < p.n_grains) {
    const auto v = pick(rng);
    if (!taken.insert(v).second) continue;
    const double x = static_cast<double>(v % p.dims.nx);
    const double y = static_cast<double>((v / p.dims.nx) % p.dims.ny);
    const double z = static_cast<double>(v / (std::int64_t{p.dims.nx} * p.dims.ny));
    seeds.push_back({x, y, z});
  }

  GrainVolume vol;
  vol.dims = p.dims;
  vol.ids.resize(static_cast<std::size_t>(n_vox));
  std::size_t i = 0;
  for (int z = 0; z < p.dims.nz; ++z)
    for (int y = 0; y < p.dims.ny; ++y)
      for (int x = 0; x < p.dims.nx; ++x, ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_id = 0;
        for (int s = 0; s < p.n_grains; ++s) {
          const double dx = x - seeds[s][0], dy = y - seeds[s][1], dz = z - seeds[s][2];
          const double d = dx * dx + dy * dy + dz * dz;
          if (d < best) {
            best = d;
            best_id = s + 1;
          }
        }
        vol.ids[i] = best_id;
      }

  vol.orientations.resize(p.n_grains + 1);
  for (int g = 1; g <= p.n_grains; ++g) vol.orientations[g] = draw_orientation(rng, p.texture_spread_deg);
  return vol;
}

Field render_ebsd(const GrainVolume& v, int z) {
  if (z < 0 || z >= v.dims.nz) throw ConfigError("slice index out of range");
  std::vector<std::array<double, 3>> colors(v.orientations.size(), {0.0, 0.0, 0.0});
  for (std::size_t g = 1; g < v.orientations.size(); ++g)
    colors[g] = orientation::normalize_cu(orientation::qu2cu(v.orientations[g]));

  Field out(v.dims.ny, v.dims.nx, 3);
  for (int y = 0; y < v.dims.ny; ++y)
    for (int x = 0; x < v.dims.nx; ++x) {
      const auto id = v.id(x, y, z);
      for (int k = 0; k < 3; ++k) out(y, x, k) = static_cast<float>(colors[id][k]);
    }
  return out;
}

std::vector<double> pl_response(const Quaternion& q, int n_rotations, double step_deg) {
  if (n_rotations < 2) throw ConfigError("PL simulation needs at least 2 rotations");
  constexpr double kBackground = 0.5;
  const auto c = q.rotate({0.0, 0.0, 1.0});
  const double sin2 = std::min(1.0, c[0] * c[0] + c[1] * c[1]);
  const double psi = std::atan2(c[1], c[0]);
  std::vector<double> out(n_rotations);
  for (int k = 0; k < n_rotations; ++k) {
    const double phi = k * step_deg * kDeg;
    out[k] = sin2 * std::cos(2.0 * (phi - psi)) + (1.0 - sin2) * kBackground;
  }
  return out;
}

Field simulate_pl(const GrainVolume& v, int z, int n_rotations, double step_deg) {
  if (z < 0 || z >= v.dims.nz) throw ConfigError("slice index out of range");
  std::vector<std::vector<double>> per_grain(v.orientations.size(), std::vector<double>(n_rotations, 0.0));
  for (std::size_t g = 1; g < v.orientations.size(); ++g)
    per_grain[g] = pl_response(v.orientations[g], n_rotations, step_deg);

  Field out(v.dims.ny, v.dims.nx, n_rotations);
  for (int y = 0; y < v.dims.ny; ++y)
    for (int x = 0; x < v.dims.nx; ++x) {
      const auto& r = per_grain[v.id(x, y, z)];
      for (int k = 0; k < n_rotations; ++k) out(y, x, k) = static_cast<float>(r[k]);
    }
  return out;
}

Field PcaBasis::scores(const Field& raw) const {
  if (raw.channels != input_dim) throw ConfigError("PL stack channel count does not match the PCA basis");
  Field out(raw.height, raw.width, components);
  for (int r = 0; r < raw.height; ++r)
    for (int c = 0; c < raw.width; ++c)
      for (int j = 0; j < components; ++j) {
        double s = 0.0;
        for (int i = 0; i < input_dim; ++i) s += basis[j * input_dim + i] * (raw(r, c, i) - mean[i]);
        out(r, c, j) = static_cast<float>(s);
      }
  return out;
}

Field PcaBasis::project(const Field& raw) const {
  Field s = scores(raw);
  for (auto& v : s.data) v = static_cast<float>(std::clamp((v - center) / half_range, -1.0, 1.0));
  return s;
}

Field PcaBasis::reconstruct_from_scores(const Field& s) const {
  Field out(s.height, s.width, input_dim);
  for (int r = 0; r < s.height; ++r)
    for (int c = 0; c < s.width; ++c)
      for (int i = 0; i < input_dim; ++i) {
        double v = mean[i];
        for (int j = 0; j < components; ++j) v += basis[j * input_dim + i] * s(r, c, j);
        out(r, c, i) = static_cast<float>(v);
      }
  return out;
}

PcaBasis fit_pca(std::span<const Field> stacks, int k) {
  if (stacks.empty()) throw ConfigError("PCA needs a non-empty corpus");
  const int d = stacks.front().channels;
  if (k < 1 || k > d) throw ConfigError("PCA components must be in [1, " + std::to_string(d) + "]");

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(d, d);
  std::int64_t n = 0;
  std::vector<Eigen::VectorXd> distinct;
  for (const auto& f : stacks) {
    if (f.channels != d) throw ConfigError("PCA corpus has mixed channel counts");
    for (int r = 0; r < f.height; ++r)
      for (int c = 0; c < f.width; ++c) {
        Eigen::VectorXd v(d);
        for (int i = 0; i < d; ++i) v[i] = f(r, c, i);
        sum += v;
        outer.noalias() += v * v.transpose();
        ++n;
        if (static_cast<int>(distinct.size()) < k &&
            std::none_of(distinct.begin(), distinct.end(), [&](const auto& u) { return u == v; }))
          distinct.push_back(v);
      }
  }
  if (static_cast<int>(distinct.size()) < k) throw ConfigError("PCA corpus has fewer distinct vectors than components");

  const Eigen::VectorXd mean = sum / static_cast<double>(n);
  const Eigen::MatrixXd cov = outer / static_cast<double>(n) - mean * mean.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);

  PcaBasis pca;
  pca.input_dim = d;
  pca.components = k;
  pca.mean.assign(mean.data(), mean.data() + d);
  for (int j = 0; j < k; ++j) {
    const int col = d - 1 - j;  // eigenvalues ascend
    Eigen::VectorXd u = eig.eigenvectors().col(col);
    Eigen::Index arg;
    u.cwiseAbs().maxCoeff(&arg);
    if (u[arg] < 0) u = -u;
    for (int i = 0; i < d; ++i) pca.basis.push_back(u[i]);
    pca.variances.push_back(std::max(0.0, eig.eigenvalues()[col]));
  }

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& f : stacks) {
    const Field s = pca.scores(f);
    for (float v : s.data) {
      lo = std::min<double>(lo, v);
      hi = std::max<double>(hi, v);
    }
  }
  pca.center = 0.5 * (lo + hi);
  pca.half_range = hi > lo ? 0.5 * (hi - lo) : 1.0;
  return pca;
}

BoundaryMap extract_boundaries(const IdMap& ids) {
  BoundaryMap out(ids.height, ids.width);
  constexpr int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
  for (int r = 0; r < ids.height; ++r)
    for (int c = 0; c < ids.width; ++c) {
      const auto id = ids(r, c);
      if (id == 0) continue;
      for (int n = 0; n < 4; ++n) {
        const int rr = r + dr[n], cc = c + dc[n];
        if (rr < 0 || rr >= ids.height || cc < 0 || cc >= ids.width) continue;
        const auto other = ids(rr, cc);
        if (other != 0 && other != id) {
          out(r, c) = 1;
          break;
        }
      }
    }
  return out;
}

TrainingSample crop_slice(const RenderedVolume& v, int z, int y0, int x0, int size) {
  const auto& dims = v.volume.dims;
  if (z < 0 || z >= dims.nz || y0 < 0 || x0 < 0 || y0 + size > dims.ny || x0 + size > dims.nx)
    throw ConfigError("crop outside the volume");
  TrainingSample s;
  s.z = z;
  s.y0 = y0;
  s.x0 = x0;
  s.data = Field(size, size, 6);
  s.ids = IdMap(size, size);
  const Field& e = v.ebsd[z];
  const Field& p = v.pl[z];
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      for (int k = 0; k < 3; ++k) {
        s.data(r, c, k) = e(y0 + r, x0 + c, k);
        s.data(r, c, 3 + k) = p(y0 + r, x0 + c, k);
      }
      s.ids(r, c) = v.volume.id(x0 + c, y0 + r, z);
    }
  return s;
}

TrainingSample sample_training_slice(const RenderedVolume& v, std::mt19937_64& rng, int size) {
  const auto& dims = v.volume.dims;
  if (dims.nx < size || dims.ny < size || dims.nz < 1)
    throw ConfigError("volume is smaller than the " + std::to_string(size) + "-pixel training crop");
  std::uniform_int_distribution<int> zd(0, dims.nz - 1), yd(0, dims.ny - size), xd(0, dims.nx - size), ed(0, 7);
  const int z = zd(rng), y0 = yd(rng), x0 = xd(rng), e = ed(rng);
  TrainingSample s = crop_slice(v, z, y0, x0, size);
  s.data = apply_d4(s.data, e);
  s.ids = apply_d4(s.ids, e);
  s.d4 = e;
  return s;
}

Perturbation Perturbation::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  std::vector<double> args;
  if (colon != std::string::npos) {
    std::stringstream ss(text.substr(colon + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        args.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ConfigError("bad perturbation argument '" + tok + "' in '" + text + "'");
      }
    }
  }
  Perturbation p;
  if (kind == "gaussian" && args.size() == 1 && args[0] >= 0) {
    p.kind = Kind::Gaussian;
    p.sigma = args[0];
  } else if (kind == "scratch" && args.size() == 3 && args[0] >= 0 && args[1] > 0) {
    p.kind = Kind::Scratch;
    p.count = static_cast<int>(args[0]);
    p.width = args[1];
    p.intensity = args[2];
  } else if (kind == "shift" && args.size() == 2) {
    p.kind = Kind::Shift;
    p.dx = static_cast<int>(args[0]);
    p.dy = static_cast<int>(args[1]);
  } else {
    throw ConfigError("bad perturbation spec '" + text + "'");
  }
  return p;
}

std::string Perturbation::to_string() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::Gaussian: os << "gaussian:" << sigma; break;
    case Kind::Scratch: os << "scratch:" << count << ',' << width << ',' << intensity; break;
    case Kind::Shift: os << "shift:" << dx << ',' << dy; break;
  }
  return os.str();
}

Field perturb(const Field& f, const Perturbation& p, std::mt19937_64& rng) {
  Field out = f;
  switch (p.kind) {
    case Perturbation::Kind::Gaussian: {
      if (p.sigma == 0.0) break;
      std::normal_distribution<double> n(0.0, p.sigma);
      for (auto& v : out.data) v = static_cast<float>(v + n(rng));
      break;
    }
    case Perturbation::Kind::Scratch: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double span = std::max(f.height, f.width);
      const double half_width = std::max(0.5, 0.5 * p.width);
      for (int s = 0; s < p.count; ++s) {
        const double cy = u(rng) * (f.height - 1), cx = u(rng) * (f.width - 1);
        const double theta = u(rng) * kPi;
        const double half_len = 0.5 * span * (0.5 + 0.5 * u(rng));
        const double ay = cy - half_len * std::sin(theta), ax = cx - half_len * std::cos(theta);
        const double by = cy + half_len * std::sin(theta), bx = cx + half_len * std::cos(theta);
        const double ly = by - ay, lx = bx - ax, len2 = ly * ly + lx * lx;
        for (int r = 0; r < f.height; ++r)
          for (int c = 0; c < f.width; ++c) {
            const double t = std::clamp(((r - ay) * ly + (c - ax) * lx) / len2, 0.0, 1.0);
            const double dy = r - (ay + t * ly), dx = c - (ax + t * lx);
            if (dy * dy + dx * dx <= half_width * half_width)
              for (int k = 0; k < f.channels; ++k) out(r, c, k) = static_cast<float>(f(r, c, k) + p.intensity);
          }
      }
      break;
    }
    case Perturbation::Kind::Shift: {
      for (int r = 0; r < f.height; ++r)
        for (int c = 0; c < f.width; ++c) {
          const int sr = std::clamp(r - p.dy, 0, f.height - 1);
          const int sc = std::clamp(c - p.dx, 0, f.width - 1);
          for (int k = 0; k < f.channels; ++k) out(r, c, k) = f(sr, sc, k);
        }
      break;
    }
  }
  return out;
}

}  // namespace grainfuse::synth
