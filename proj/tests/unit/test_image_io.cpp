#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "image_io.hpp"
#include "protodistill/errors.hpp"

using namespace protodistill;
using namespace protodistill::app;
namespace fs = std::filesystem;

namespace {

GrayImage ramp(int w, int h) {
  GrayImage g(w, h);
  for (int k = 0; k < w * h; ++k) g.pixels[static_cast<std::size_t>(k)] = static_cast<double>(k) / (w * h - 1);
  return g;
}

fs::path tmp(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "protodistill_unit" / "images";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("pgm") {
  TEST_CASE("binary P5 round trip within one grey level") {
    const auto img = ramp(5, 3);
    write_pgm(tmp("ramp.pgm"), img);
    std::ifstream is(tmp("ramp.pgm"), std::ios::binary);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    is >> magic >> w >> h >> maxval;
    CHECK(magic == "P5");
    CHECK(w == 5);
    CHECK(h == 3);
    CHECK(maxval == 255);
    const auto back = read_pgm(tmp("ramp.pgm"));
    REQUIRE(back.pixels.size() == img.pixels.size());
    for (std::size_t k = 0; k < img.pixels.size(); ++k) CHECK(std::abs(back.pixels[k] - img.pixels[k]) <= 0.5 / 255.0 + 1e-12);
  }

  TEST_CASE("values are clamped") {
    GrayImage g(2, 1);
    g.pixels = {-3.0, 7.0};
    write_pgm(tmp("clamp.pgm"), g);
    const auto back = read_pgm(tmp("clamp.pgm"));
    CHECK(back.pixels[0] == 0.0);
    CHECK(back.pixels[1] == 1.0);
  }

  TEST_CASE("truncated file is corruption") {
    std::ofstream(tmp("bad.pgm"), std::ios::binary) << "P5\n4 4\n255\nab";
    CHECK_THROWS_AS(read_pgm(tmp("bad.pgm")), CorruptionError);
    std::ofstream(tmp("bad2.pgm"), std::ios::binary) << "P2\n1 1\n255\n0";
    CHECK_THROWS_AS(read_pgm(tmp("bad2.pgm")), CorruptionError);
  }
}

TEST_SUITE("image ops") {
  TEST_CASE("all-zero mask leaves the image unchanged") {
    const auto img = ramp(8, 8);
    const std::vector<std::uint8_t> zeros(4, 0);
    CHECK(overlay_mask(img, zeros, 2, 2).pixels == img.pixels);
  }

  TEST_CASE("mask is upscaled onto the image") {
    const auto img = ramp(8, 8);
    const std::vector<std::uint8_t> one{0, 1, 0, 0};
    const auto out = overlay_mask(img, one, 2, 2);
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) {
        const bool lit = r < 4 && c >= 4;
        const double v = img.at(r, c);
        CHECK(out.at(r, c) == doctest::Approx(lit ? 0.5 * v + 0.5 : v));
      }
  }

  TEST_CASE("crop, upscale and stacking") {
    const auto img = ramp(6, 5);
    const auto c = crop(img, PixelRect{1, 2, 3, 4});
    CHECK(c.width == 3);
    CHECK(c.height == 3);
    CHECK(c.at(0, 0) == img.at(1, 2));
    CHECK(c.at(2, 2) == img.at(3, 4));
    CHECK_THROWS_AS(crop(img, PixelRect{0, 0, 5, 5}), DimensionError);

    const auto up = upscale(c, 3);
    CHECK(up.width == 9);
    CHECK(up.at(8, 8) == c.at(2, 2));

    const std::vector<GrayImage> tiles{c, up};
    const auto row = hstack(tiles, 2);
    CHECK(row.width == 3 + 2 + 9);
    CHECK(row.height == 9);
    CHECK(row.at(0, 3) == 1.0);  // gap fill
    const auto col = vstack(tiles, 1);
    CHECK(col.height == 3 + 1 + 9);
    CHECK(col.width == 9);
  }

  TEST_CASE("line plot has the requested size and draws ink") {
    const std::vector<double> xs{0.0, 0.5, 1.0}, ys{0.0, 2.0, 3.0};
    const auto plot = line_plot(xs, ys, 120, 80);
    CHECK(plot.width == 120);
    CHECK(plot.height == 80);
    CHECK(std::count(plot.pixels.begin(), plot.pixels.end(), 0.0) > 50);
    const std::vector<double> one_x{0.3}, one_y{1.0};
    CHECK_NOTHROW(line_plot(one_x, one_y));
  }
}
