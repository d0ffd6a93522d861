#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "grainfuse/errors.hpp"
#include "grainfuse/synthgen.hpp"
#include "grainfuse/tasks.hpp"

using namespace grainfuse;
using namespace grainfuse::tasks;

namespace {

Field random_field(std::mt19937_64& rng, int h, int w, int c) {
  std::uniform_real_distribution<float> u(-1, 1);
  Field f(h, w, c);
  for (auto& v : f.data) v = u(rng);
  return f;
}

// True convolution (flipped kernels) on an explicitly padded copy.
ScalarMap sobel_oracle(const Field& img) {
  const int H = img.height, W = img.width;
  const double gx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  ScalarMap out(H, W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      double acc = 0;
      for (int k = 0; k < img.channels; ++k) {
        double sx = 0, sy = 0;
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) {
            const int rr = std::min(std::max(r + i - 1, 0), H - 1), cc = std::min(std::max(c + j - 1, 0), W - 1);
            const double v = img(rr, cc, k);
            sx += -gx[i][j] * v;
            sy += -gx[j][i] * v;
          }
        acc += sx * sx + sy * sy;
      }
      out(r, c) = std::sqrt(acc);
    }
  return out;
}

const data::ModalityLayout kEP = data::ModalityLayout::by_name("EP");

}  // namespace

TEST_CASE("sobel") {
  const Field flat(9, 9, 3, 0.4f);
  for (double v : sobel_map(flat).data) CHECK(v == 0.0);

  Field step(5, 5, 1);
  for (int r = 0; r < 5; ++r)
    for (int c = 3; c < 5; ++c) step(r, c) = 1.0f;  // step between columns 2 and 3
  const auto raw = sobel_magnitude(step);
  for (int r = 1; r < 4; ++r) {
    CHECK(raw(r, 2) == 4.0);
    CHECK(raw(r, 3) == 4.0);
    CHECK(raw(r, 1) == 0.0);
    CHECK(raw(r, 4) == 0.0);
  }

  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    const Field f = random_field(rng, 16, 16, 3);
    const auto got = sobel_magnitude(f), want = sobel_oracle(f);
    for (std::size_t j = 0; j < got.size(); ++j) CHECK(got.data[j] == want.data[j]);
    const auto n = sobel_map(f);
    for (double v : n.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    const auto m = sobel_map(f, SobelCombine::Max);
    CHECK(*std::max_element(m.data.begin(), m.data.end()) == 1.0);
  }
  CHECK_THROWS_AS(parse_sobel_combine("mean"), ConfigError);
}

TEST_CASE("aggregate") {
  std::mt19937_64 rng(2);
  std::vector<ScalarMap> maps;
  for (int i = 0; i < 3; ++i) maps.push_back(sobel_map(random_field(rng, 8, 8, 3)));
  CHECK(aggregate({maps[0]}) == maps[0]);
  const auto a = aggregate(maps), b = aggregate({maps[2], maps[0], maps[1]});
  for (std::size_t j = 0; j < a.size(); ++j) CHECK(a.data[j] == doctest::Approx(b.data[j]).epsilon(1e-15));
  const auto half = aggregate({ScalarMap(4, 4, 1, 0.0), ScalarMap(4, 4, 1, 1.0)});
  for (double v : half.data) CHECK(v == 0.5);
  CHECK_THROWS_AS(aggregate({}), ConfigError);
}

TEST_CASE("knee threshold") {
  SUBCASE("two-level map splits at the gap") {
    ScalarMap s(64, 64, 1, 0.01);
    std::mt19937_64 rng(3);
    std::vector<int> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const int hi = static_cast<int>(0.1 * s.size());
    for (int i = 0; i < hi; ++i) s.data[idx[i]] = 0.9;
    const auto k = knee_threshold(s);
    CHECK(k.cutoff > 0.01);
    CHECK(k.cutoff <= 0.9);
    for (std::size_t j = 0; j < s.size(); ++j) CHECK(k.boundaries.data[j] == (s.data[j] == 0.9 ? 1 : 0));

    // order-preserving relabeling of the two levels keeps the selected count
    ScalarMap t = s;
    for (auto& v : t.data) v = v == 0.9 ? 0.6 : 0.2;
    const auto k2 = knee_threshold(t);
    CHECK(std::count(k2.boundaries.data.begin(), k2.boundaries.data.end(), 1) == hi);
  }
  SUBCASE("constant map") {
    const auto k = knee_threshold(ScalarMap(16, 16, 1, 0.3));
    CHECK(std::all_of(k.boundaries.data.begin(), k.boundaries.data.end(), [](auto v) { return v == 0; }));
    CHECK(k.elbow_index == -1);
  }
  SUBCASE("output is a superlevel set") {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 10; ++i) {
      const auto s = sobel_map(random_field(rng, 32, 32, 3));
      const auto k = knee_threshold(s);
      for (std::size_t j = 0; j < s.size(); ++j) CHECK(k.boundaries.data[j] == (s.data[j] >= k.cutoff ? 1 : 0));
    }
  }
}

TEST_CASE("boundary prediction") {
  IdMap ids(64, 64);
  Field pl(64, 64, 3);
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      ids(r, c) = c < 30 ? 1 : 2;
      for (int k = 0; k < 3; ++k) pl(r, c, k) = c < 30 ? 0.2f * k : -0.3f;
    }
  const auto truth = synth::extract_boundaries(ids);
  const auto base = predict_boundaries_pl({pl});
  CHECK(base.boundaries.height == 64);
  CHECK(base.mean_sobel.width == 64);
  int predicted = 0;
  for (int r = 0; r < 64; ++r)
    for (int c = 0; c < 64; ++c) {
      if (!base.boundaries(r, c)) continue;
      ++predicted;
      bool near = false;
      for (int dc = -1; dc <= 1; ++dc)
        if (c + dc >= 0 && c + dc < 64 && truth(r, c + dc)) near = true;
      CHECK(near);
    }
  CHECK(predicted > 0);

  std::mt19937_64 rng(5);
  const Field recon = random_field(rng, 64, 64, 6);
  const auto one = predict_boundaries({recon}, kEP);
  const auto ten = predict_boundaries(std::vector<Field>(10, recon), kEP);
  CHECK(one.boundaries == ten.boundaries);
  CHECK(one.cutoff == ten.cutoff);
  CHECK_THROWS_AS(predict_boundaries({select_channels(recon, 0, 3)}, data::ModalityLayout::by_name("E")),
                  UnsupportedTaskError);
}

TEST_CASE("super-resolution alignment") {
  std::mt19937_64 rng(6);
  // piecewise constant truth
  Field truth(32, 32, 3);
  std::uniform_real_distribution<float> u(-0.8f, 0.8f);
  for (int br = 0; br < 4; ++br)
    for (int bc = 0; bc < 4; ++bc) {
      const float a = u(rng), b = u(rng), c = u(rng);
      for (int r = br * 8; r < br * 8 + 8; ++r)
        for (int cc = bc * 8; cc < bc * 8 + 8; ++cc) {
          truth(r, cc, 0) = a;
          truth(r, cc, 1) = b;
          truth(r, cc, 2) = c;
        }
    }
  BoundaryMap mask(32, 32);
  for (int r = 0; r < 32; r += 2)
    for (int c = 0; c < 32; c += 2) mask(r, c) = 1;
  AlignmentConfig cfg;
  cfg.seed = 11;

  SUBCASE("exact input stays put") {
    const auto res = superresolve({truth}, truth, mask, cfg);
    CHECK(res.trained);
    CHECK(res.holdout_mse_after <= res.holdout_mse_before);
    CHECK(res.aligned.height == 32);
    CHECK(res.aligned.channels == 3);
  }
  SUBCASE("constant offset is removed") {
    Field shifted = truth;
    for (auto& v : shifted.data) v += 0.1f;
    const auto res = superresolve({shifted, shifted}, truth, mask, cfg);
    CHECK(res.holdout_pixels == 51);
    CHECK(res.train_pixels == 205);
    CHECK(res.holdout_mse_before == doctest::Approx(0.01).epsilon(1e-3));
    CHECK(res.holdout_mse_after <= 0.1 * res.holdout_mse_before);
    for (float v : res.aligned.data) {
      CHECK(v >= -1.0f);
      CHECK(v <= 1.0f);
    }
  }
  SUBCASE("training ignores unobserved pixels") {
    Field x = truth;
    for (auto& v : x.data) v = 0.7f * v + 0.05f;
    const auto a = superresolve({x}, truth, mask, cfg);
    Field probe = x;
    probe(1, 1, 0) += 0.3f;  // (1, 1) is not in the mask
    const auto b = superresolve({probe}, truth, mask, cfg);
    CHECK(a.net.w1 == b.net.w1);
    CHECK(a.net.w2 == b.net.w2);
    CHECK(a.net.b2 == b.net.b2);
    CHECK(a.holdout_mse_after == b.holdout_mse_after);
  }
  SUBCASE("too few observations") {
    BoundaryMap sparse(32, 32);
    sparse(0, 0) = sparse(5, 5) = 1;
    const auto res = superresolve({truth}, truth, sparse, cfg);
    CHECK_FALSE(res.trained);
    CHECK_FALSE(res.warning.empty());
    CHECK(res.aligned == truth);
  }
}

TEST_CASE("PL denoising") {
  std::mt19937_64 rng(7);
  const Field a = random_field(rng, 8, 8, 6), b = random_field(rng, 8, 8, 6);
  CHECK(denoise_pl({a}, kEP) == select_channels(a, 3, 3));
  const auto ab = denoise_pl({a, b}, kEP), ba = denoise_pl({b, a}, kEP);
  CHECK(ab == ba);
  CHECK(ab(2, 3, 1) == doctest::Approx(0.5f * (a(2, 3, 4) + b(2, 3, 4))));
  CHECK(denoise_pl({select_channels(a, 3, 3)}, data::ModalityLayout::by_name("P")) == select_channels(a, 3, 3));
  CHECK_THROWS_AS(denoise_pl({a}, data::ModalityLayout::by_name("E")), UnsupportedTaskError);
}
