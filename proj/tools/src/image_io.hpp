#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "protodistill/model.hpp"

namespace protodistill::app {

// Grayscale raster with intensities nominally in [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0);
  double& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * width + col]; }
  double at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
  bool operator==(const GrayImage&) const = default;
};

// Binary P5 file, maxval 255; values are clamped to [0, 1] and rounded.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

GrayImage from_channel(std::span<const double> pixels, int width, int height);

// Brightens the image cells covered by active mask bits. The H x W mask is
// upscaled to the image size; an all-zero mask returns the input unchanged.
GrayImage overlay_mask(const GrayImage& image, std::span<const std::uint8_t> mask, std::size_t mask_h,
                       std::size_t mask_w);

GrayImage crop(const GrayImage& image, const PixelRect& rect);
GrayImage upscale(const GrayImage& image, int factor);
// Places tiles left to right, top-aligned, separated by `gap` columns of `fill`.
GrayImage hstack(std::span<const GrayImage> tiles, int gap = 2, double fill = 1.0);
GrayImage vstack(std::span<const GrayImage> tiles, int gap = 2, double fill = 1.0);

// Polyline of ys against xs on a white canvas with axes, dark markers at the
// samples. Axis ranges cover the data.
GrayImage line_plot(std::span<const double> xs, std::span<const double> ys, int width = 320, int height = 240);

}  // namespace protodistill::app
