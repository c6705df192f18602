#include "image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "protodistill/errors.hpp"

namespace protodistill::app {

GrayImage::GrayImage(int w, int h, double fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
  if (w < 0 || h < 0) throw DimensionError("negative image size");
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::string bytes(image.pixels.size(), '\0');
  for (std::size_t k = 0; k < image.pixels.size(); ++k) {
    const double v = std::clamp(image.pixels[k], 0.0, 1.0);
    bytes[k] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("failed writing " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot read " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5" || w <= 0 || h <= 0 || maxval != 255) throw CorruptionError("unsupported PGM header in " + path.string());
  in.get();
  GrayImage img(w, h);
  std::string bytes(img.pixels.size(), '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw CorruptionError("truncated PGM " + path.string());
  for (std::size_t k = 0; k < bytes.size(); ++k) img.pixels[k] = static_cast<unsigned char>(bytes[k]) / 255.0;
  return img;
}

GrayImage from_channel(std::span<const double> pixels, int width, int height) {
  if (pixels.size() < static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw DimensionError("channel smaller than the requested image");
  }
  GrayImage img(width, height);
  std::copy_n(pixels.begin(), img.pixels.size(), img.pixels.begin());
  return img;
}

GrayImage overlay_mask(const GrayImage& image, std::span<const std::uint8_t> mask, std::size_t mask_h,
                       std::size_t mask_w) {
  if (mask.size() != mask_h * mask_w || mask_h == 0 || mask_w == 0) throw DimensionError("mask size mismatch");
  GrayImage out = image;
  for (int r = 0; r < image.height; ++r) {
    const std::size_t i = static_cast<std::size_t>(r) * mask_h / static_cast<std::size_t>(image.height);
    for (int c = 0; c < image.width; ++c) {
      const std::size_t j = static_cast<std::size_t>(c) * mask_w / static_cast<std::size_t>(image.width);
      if (mask[i * mask_w + j]) out.at(r, c) = 0.5 * image.at(r, c) + 0.5;
    }
  }
  return out;
}

GrayImage crop(const GrayImage& image, const PixelRect& rect) {
  if (rect.row0 < 0 || rect.col0 < 0 || rect.row1 >= image.height || rect.col1 >= image.width ||
      rect.row1 < rect.row0 || rect.col1 < rect.col0) {
    throw DimensionError("crop rectangle outside the image");
  }
  GrayImage out(rect.col1 - rect.col0 + 1, rect.row1 - rect.row0 + 1);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c) out.at(r, c) = image.at(rect.row0 + r, rect.col0 + c);
  return out;
}

GrayImage upscale(const GrayImage& image, int factor) {
  if (factor < 1) throw ConfigError("upscale factor must be >= 1");
  GrayImage out(image.width * factor, image.height * factor);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c) out.at(r, c) = image.at(r / factor, c / factor);
  return out;
}

GrayImage hstack(std::span<const GrayImage> tiles, int gap, double fill) {
  int w = 0, h = 0;
  for (const auto& t : tiles) {
    w += t.width;
    h = std::max(h, t.height);
  }
  if (!tiles.empty()) w += gap * static_cast<int>(tiles.size() - 1);
  GrayImage out(w, h, fill);
  int x = 0;
  for (const auto& t : tiles) {
    for (int r = 0; r < t.height; ++r)
      for (int c = 0; c < t.width; ++c) out.at(r, x + c) = t.at(r, c);
    x += t.width + gap;
  }
  return out;
}

GrayImage vstack(std::span<const GrayImage> tiles, int gap, double fill) {
  int w = 0, h = 0;
  for (const auto& t : tiles) {
    h += t.height;
    w = std::max(w, t.width);
  }
  if (!tiles.empty()) h += gap * static_cast<int>(tiles.size() - 1);
  GrayImage out(w, h, fill);
  int y = 0;
  for (const auto& t : tiles) {
    for (int r = 0; r < t.height; ++r)
      for (int c = 0; c < t.width; ++c) out.at(y + r, c) = t.at(r, c);
    y += t.height + gap;
  }
  return out;
}

namespace {

void draw_line(GrayImage& img, int x0, int y0, int x1, int y1, double value) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    if (x0 >= 0 && x0 < img.width && y0 >= 0 && y0 < img.height) img.at(y0, x0) = value;
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

GrayImage line_plot(std::span<const double> xs, std::span<const double> ys, int width, int height) {
  if (xs.size() != ys.size()) throw DimensionError("plot series of different lengths");
  if (width < 40 || height < 40) throw ConfigError("plot canvas too small");
  GrayImage img(width, height, 1.0);
  constexpr int margin = 20;
  const int left = margin, right = width - margin, top = margin, bottom = height - margin;
  draw_line(img, left, bottom, right, bottom, 0.0);
  draw_line(img, left, bottom, left, top, 0.0);
  if (xs.empty()) return img;

  const auto [xmin_it, xmax_it] = std::minmax_element(xs.begin(), xs.end());
  const double ymax = *std::max_element(ys.begin(), ys.end());
  const double xmin = *xmin_it;
  const double xspan = *xmax_it > xmin ? *xmax_it - xmin : 1.0;
  const double yspan = ymax > 0.0 ? ymax : 1.0;
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - xmin) / xspan * (right - left))); };
  auto py = [&](double y) { return bottom - static_cast<int>(std::lround(std::max(y, 0.0) / yspan * (bottom - top))); };
  for (std::size_t k = 0; k + 1 < xs.size(); ++k) draw_line(img, px(xs[k]), py(ys[k]), px(xs[k + 1]), py(ys[k + 1]), 0.3);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const int cx = px(xs[k]), cy = py(ys[k]);
    for (int r = cy - 2; r <= cy + 2; ++r)
      for (int c = cx - 2; c <= cx + 2; ++c) {
        if (r >= 0 && r < height && c >= 0 && c < width) img.at(r, c) = 0.0;
      }
  }
  return img;
}

}  // namespace protodistill::app
