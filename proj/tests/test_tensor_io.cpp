#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "grainfuse/errors.hpp"
#include "grainfuse/tensor_io.hpp"

using namespace grainfuse::io;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "grainfuse_test_io";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("4-D float array round-trips bit-exactly") {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n(0.0f, 10.0f);
  std::vector<float> v(2 * 3 * 5 * 7);
  for (auto& x : v) x = n(rng);
  v[0] = std::numeric_limits<float>::denorm_min();
  v[1] = -0.0f;
  v[2] = std::numeric_limits<float>::infinity();
  Container c;
  c["x"] = Array::from_f32({2, 3, 5, 7}, v);
  const auto path = temp_file("f32.gftc");
  write_container(path, c);
  const Container back = read_container(path);
  REQUIRE(back.count("x") == 1);
  CHECK(back.at("x").dims == std::vector<std::uint64_t>{2, 3, 5, 7});
  const auto w = back.at("x").to_f32();
  REQUIRE(w.size() == v.size());
  CHECK(std::memcmp(w.data(), v.data(), v.size() * sizeof(float)) == 0);
}

TEST_CASE("multiple named arrays of mixed dtype") {
  Container c;
  c["ids"] = Array::from_i32({2, 2}, std::vector<std::int32_t>{1, -2, 3, 1 << 30});
  c["mask"] = Array::from_u8({4}, std::vector<std::uint8_t>{0, 1, 255, 7});
  c["meta"] = Array::from_string("{\"seed\": 4}");
  c["empty"] = Array::from_f32({0, 3}, std::vector<float>{});
  const Container back = decode_container(encode_container(c));
  CHECK(back == c);
  CHECK(back.at("meta").to_string() == "{\"seed\": 4}");
  CHECK(back.at("ids").to_i32()[3] == (1 << 30));
  CHECK_THROWS_AS(require(back, "missing"), grainfuse::FormatError);
}

TEST_CASE("truncated and corrupted files are rejected") {
  Container c;
  c["x"] = Array::from_f32({16}, std::vector<float>(16, 1.5f));
  const auto bytes = encode_container(c);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::span<const std::uint8_t> part(bytes.data(), cut);
    CHECK_THROWS_AS(decode_container(part), grainfuse::FormatError);
  }
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_container(bad_magic), grainfuse::FormatError);
  auto bad_version = bytes;
  bad_version[4] = 99;
  CHECK_THROWS_AS(decode_container(bad_version), grainfuse::FormatError);

  const auto path = temp_file("truncated.gftc");
  {
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size() - 8));
  }
  CHECK_THROWS_AS(read_container(path), grainfuse::FormatError);
  CHECK_THROWS_AS(read_container(temp_file("does_not_exist.gftc")), grainfuse::Error);
}
