#include "grainfuse/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "grainfuse/errors.hpp"

namespace grainfuse::io {

static_assert(std::endian::native == std::endian::little, "payload layout assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'G', 'F', 'T', 'C'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void put(T v) {
    bytes(&v, sizeof(T));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  void bytes(void* p, std::size_t n) {
    if (pos_ + n > in_.size()) throw FormatError("tensor container truncated");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

template <typename T>
std::vector<std::uint8_t> to_bytes(std::span<const T> values) {
  std::vector<std::uint8_t> out(values.size_bytes());
  if (!out.empty()) std::memcpy(out.data(), values.data(), out.size());
  return out;
}

template <typename T>
std::vector<T> from_bytes(const Array& a, DType want) {
  if (a.dtype != want) throw FormatError("tensor dtype mismatch");
  std::vector<T> out(a.payload.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), a.payload.data(), out.size() * sizeof(T));
  return out;
}

std::uint64_t product(const std::vector<std::uint64_t>& dims) {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::F32: return 4;
    case DType::U8: return 1;
    case DType::I32: return 4;
  }
  throw FormatError("unknown dtype code");
}

std::uint64_t Array::element_count() const { return product(dims); }

Array Array::from_f32(std::vector<std::uint64_t> dims, std::span<const float> values) {
  if (product(dims) != values.size()) throw FormatError("dims do not match value count");
  return {DType::F32, std::move(dims), to_bytes(values)};
}

Array Array::from_u8(std::vector<std::uint64_t> dims, std::span<const std::uint8_t> values) {
  if (product(dims) != values.size()) throw FormatError("dims do not match value count");
  return {DType::U8, std::move(dims), to_bytes(values)};
}

Array Array::from_i32(std::vector<std::uint64_t> dims, std::span<const std::int32_t> values) {
  if (product(dims) != values.size()) throw FormatError("dims do not match value count");
  return {DType::I32, std::move(dims), to_bytes(values)};
}

Array Array::from_string(const std::string& text) {
  return {DType::U8, {text.size()}, std::vector<std::uint8_t>(text.begin(), text.end())};
}

std::vector<float> Array::to_f32() const { return from_bytes<float>(*this, DType::F32); }
std::vector<std::uint8_t> Array::to_u8() const { return from_bytes<std::uint8_t>(*this, DType::U8); }
std::vector<std::int32_t> Array::to_i32() const { return from_bytes<std::int32_t>(*this, DType::I32); }
std::string Array::to_string() const {
  if (dtype != DType::U8) throw FormatError("string entry must be u8");
  return {payload.begin(), payload.end()};
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  // Directory size is needed up front to compute payload offsets.
  std::size_t header = sizeof(kMagic) + 2 + 4;
  for (const auto& [name, a] : c) header += 2 + name.size() + 1 + 1 + 8 * a.dims.size() + 8;

  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.put<std::uint16_t>(kContainerVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.size()));
  std::uint64_t offset = header;
  for (const auto& [name, a] : c) {
    if (name.size() > 0xFFFF) throw FormatError("entry name too long");
    if (a.payload.size() != a.element_count() * dtype_size(a.dtype))
      throw FormatError("payload length does not match dims for '" + name + "'");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(a.dtype));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) w.put<std::uint64_t>(d);
    w.put<std::uint64_t>(offset);
    offset += a.payload.size();
  }
  for (const auto& [name, a] : c) w.bytes(a.payload.data(), a.payload.size());
  return w.take();
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic: not a GFTC container");
  const auto version = r.get<std::uint16_t>();
  if (version != kContainerVersion) throw FormatError("unsupported GFTC version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();

  struct Dir {
    std::string name;
    Array array;
    std::uint64_t offset;
  };
  std::vector<Dir> dir;
  for (std::uint32_t i = 0; i < count; ++i) {
    Dir d;
    d.name.resize(r.get<std::uint16_t>());
    r.bytes(d.name.data(), d.name.size());
    const auto code = r.get<std::uint8_t>();
    if (code < 1 || code > 3) throw FormatError("unknown dtype code " + std::to_string(code));
    d.array.dtype = static_cast<DType>(code);
    d.array.dims.resize(r.get<std::uint8_t>());
    for (auto& dim : d.array.dims) dim = r.get<std::uint64_t>();
    d.offset = r.get<std::uint64_t>();
    dir.push_back(std::move(d));
  }

  Container c;
  for (auto& d : dir) {
    const std::uint64_t n = d.array.element_count();
    const std::uint64_t len = n * dtype_size(d.array.dtype);
    if (n != 0 && len / n != dtype_size(d.array.dtype)) throw FormatError("entry size overflow");
    if (d.offset > bytes.size() || len > bytes.size() - d.offset)
      throw FormatError("tensor container truncated in entry '" + d.name + "'");
    d.array.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(d.offset),
                           bytes.begin() + static_cast<std::ptrdiff_t>(d.offset + len));
    c.emplace(std::move(d.name), std::move(d.array));
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = encode_container(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

const Array& require(const Container& c, const std::string& name) {
  auto it = c.find(name);
  if (it == c.end()) throw FormatError("tensor container has no entry '" + name + "'");
  return it->second;
}

}  // namespace grainfuse::io
