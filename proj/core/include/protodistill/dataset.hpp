#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "protodistill/tensor.hpp"

namespace protodistill {

// Procedural "fine-grained parts" benchmark: every class owns a few small
// motifs that are stamped at jittered anchor positions on a shared textured
// background.
struct SyntheticSpec {
  int num_classes = 8;
  int train_per_class = 40;
  int test_per_class = 10;
  int image_size = 64;
  int channels = 1;
  int motifs_per_class = 2;
  int motif_size = 12;
  // Number of grey levels a motif block may take (>= 2).
  int palette_levels = 3;
  std::uint64_t background_seed = 7;
  int jitter = 2;
  double noise_sigma = 0.05;
  // Sanity mode: every image shows the motifs of a uniformly drawn class
  // while keeping its nominal label.
  bool shuffle_motifs = false;

  // Throws SpecError when the motifs cannot be placed.
  void validate() const;
  bool operator==(const SyntheticSpec&) const = default;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(Tensor images, std::vector<int> labels, std::string split, SyntheticSpec spec, std::uint64_t seed);

  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  int num_classes() const noexcept { return spec_.num_classes; }
  int image_size() const noexcept { return spec_.image_size; }
  int channels() const noexcept { return spec_.channels; }

  const Tensor& images() const noexcept { return images_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const std::string& split() const noexcept { return split_; }
  const SyntheticSpec& spec() const noexcept { return spec_; }
  std::uint64_t seed() const noexcept { return seed_; }

  // [Cin, S, S] copy of image `index`.
  Tensor image(std::size_t index) const;
  std::span<const double> pixels(std::size_t index) const;
  // [B, Cin, S, S] batch (no gradient).
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  // Subset with re-indexed images, keeping spec/seed/split metadata.
  Dataset subset(std::span<const std::size_t> indices) const;

  bool operator==(const Dataset& other) const;

 private:
  Tensor images_;
  std::vector<int> labels_;
  std::string split_;
  SyntheticSpec spec_;
  std::uint64_t seed_ = 0;
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

// Pure function of (spec, seed). Train and test draw jitter and noise from
// disjoint streams.
DatasetPair generate(const SyntheticSpec& spec, std::uint64_t seed);

// Writes `<prefix>.json` (manifest: spec, seed, labels, SHA-256 checksums) and
// `<prefix>.bin` (little-endian float64 pixels).
void save(const Dataset& dataset, const std::filesystem::path& prefix);
// Validates labels, then blob size and checksum.
Dataset load(const std::filesystem::path& prefix);

// Hex SHA-256 digest.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& text);

}  // namespace protodistill
