#include <doctest.h>

#include <fstream>

#include "earsr/error.hpp"
#include "earsr/volume_io.hpp"
#include "helpers.hpp"

using namespace earsr;

TEST_CASE("slice save/load round trip is exact for quantized data") {
  const auto dir = testutil::scratch_dir("io_slice");
  Image img = testutil::random_image(17, 23, 3);
  for (double& v : img.pixels()) v = io::dequantize(io::quantize(v));
  const Slice s{img, {0.15, 0.018}, std::nullopt};
  io::save_slice(s, dir / "a.r16");
  const Slice back = io::load_slice(dir / "a.r16");
  CHECK(back.data == img);
  CHECK(back.pixel_size_mm == s.pixel_size_mm);
  CHECK(std::filesystem::file_size(dir / "a.r16") == io::kSliceHeaderBytes + 2 * 17 * 23);
}

TEST_CASE("quantization is round-to-nearest over [0, 1]") {
  CHECK(io::quantize(0.0) == 0);
  CHECK(io::quantize(1.0) == 65535);
  CHECK(io::quantize(0.5) == 32768);  // 32767.5 rounds away from zero
  CHECK(io::quantize(-3.0) == 0);
  CHECK(io::quantize(7.0) == 65535);
}

TEST_CASE("corrupt slices report the failing offset") {
  const auto dir = testutil::scratch_dir("io_corrupt");
  io::save_slice({Image(4, 4, 0.5), {1, 1}, std::nullopt}, dir / "a.r16");
  std::string bytes = io::read_file(dir / "a.r16");

  SUBCASE("magic") {
    bytes[0] = 'X';
    io::write_file_atomic(dir / "b.r16", bytes);
    try {
      io::load_slice(dir / "b.r16");
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("truncated payload") {
    bytes.resize(bytes.size() - 3);
    io::write_file_atomic(dir / "b.r16", bytes);
    CHECK_THROWS_AS(io::load_slice(dir / "b.r16"), FormatError);
  }
}

TEST_CASE("volume manifest") {
  const auto dir = testutil::scratch_dir("io_volume");
  Volume v;
  v.voxel_size_mm = {0.15, 0.15, 0.15};
  v.meta["scanner"] = "cbct";
  for (int z = 0; z < 3; ++z) v.slices.push_back(Image(5, 6, io::dequantize(static_cast<std::uint16_t>(1000 * z))));
  io::save_volume(v, dir);
  const Volume back = io::load_volume(dir);
  CHECK(back.depth() == 3);
  CHECK(back.voxel_size_mm.z == 0.15);
  CHECK(back.voxel_size_mm.y == 0.15);
  CHECK(back.voxel_size_mm.x == 0.15);
  CHECK(back.meta.at("scanner") == "cbct");
  for (int z = 0; z < 3; ++z) CHECK(back.slices[z] == v.slices[z]);

  SUBCASE("missing voxel size") {
    std::ofstream(dir / io::kManifestName) << R"({"dims":[3,5,6]})";
    try {
      io::load_volume(dir);
      FAIL("expected MissingManifest");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MissingManifest);
    }
  }
  SUBCASE("missing manifest file") {
    std::filesystem::remove(dir / io::kManifestName);
    CHECK_THROWS_AS(io::load_volume(dir), Error);
  }
}
