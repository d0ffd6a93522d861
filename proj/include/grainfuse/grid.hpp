#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace grainfuse {

/// Dense H x W x C image stored row-major with interleaved channels.
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, int c = 1, T fill = T{})
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t index(int r, int c, int k = 0) const {
    assert(r >= 0 && r < height && c >= 0 && c < width && k >= 0 && k < channels);
    return (static_cast<std::size_t>(r) * width + c) * channels + k;
  }
  T& operator()(int r, int c, int k = 0) { return data[index(r, c, k)]; }
  const T& operator()(int r, int c, int k = 0) const { return data[index(r, c, k)]; }

  std::span<T> pixel(int r, int c) { return {data.data() + index(r, c), static_cast<std::size_t>(channels)}; }
  std::span<const T> pixel(int r, int c) const {
    return {data.data() + index(r, c), static_cast<std::size_t>(channels)};
  }

  int pixels() const { return height * width; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Grid& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool operator==(const Grid& o) const = default;
};

using Field = Grid<float>;           // OrientationField, PLField, multimodal samples
using BoundaryMap = Grid<std::uint8_t>;
using IdMap = Grid<std::int32_t>;
using ScalarMap = Grid<double>;      // Sobel maps and other [0,1] scores

/// Copy of channels [first, first + count) of a field.
template <typename T>
Grid<T> select_channels(const Grid<T>& g, int first, int count) {
  Grid<T> out(g.height, g.width, count);
  for (int r = 0; r < g.height; ++r)
    for (int c = 0; c < g.width; ++c)
      for (int k = 0; k < count; ++k) out(r, c, k) = g(r, c, first + k);
  return out;
}

/// Channel-wise concatenation of two fields of equal spatial size.
template <typename T>
Grid<T> concat_channels(const Grid<T>& a, const Grid<T>& b) {
  assert(a.height == b.height && a.width == b.width);
  Grid<T> out(a.height, a.width, a.channels + b.channels);
  for (int r = 0; r < a.height; ++r)
    for (int c = 0; c < a.width; ++c) {
      for (int k = 0; k < a.channels; ++k) out(r, c, k) = a(r, c, k);
      for (int k = 0; k < b.channels; ++k) out(r, c, a.channels + k) = b(r, c, k);
    }
  return out;
}

}  // namespace grainfuse
