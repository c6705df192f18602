#include "protodistill/dataset.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "protodistill/errors.hpp"
#include "protodistill/json_io.hpp"
#include "protodistill/rng.hpp"

namespace protodistill {

void SyntheticSpec::validate() const {
  if (num_classes < 1) throw SpecError("synthetic spec: num_classes must be >= 1");
  if (train_per_class < 0 || test_per_class < 0) throw SpecError("synthetic spec: negative image counts");
  if (channels < 1) throw SpecError("synthetic spec: channels must be >= 1");
  if (motifs_per_class < 1) throw SpecError("synthetic spec: motifs_per_class must be >= 1");
  if (palette_levels < 2) throw SpecError("synthetic spec: palette_levels must be >= 2");
  if (jitter < 0) throw SpecError("synthetic spec: jitter must be >= 0");
  if (!(noise_sigma >= 0.0)) throw SpecError("synthetic spec: noise_sigma must be >= 0");
  if (motif_size < 4) throw SpecError("synthetic spec: motif_size must be >= 4");
  if (motif_size >= image_size) throw SpecError("synthetic spec: motif larger than the image");
  if (motif_size + 2 * jitter > image_size) {
    throw SpecError("synthetic spec: motif plus jitter does not fit inside the image");
  }
}

Dataset::Dataset(Tensor images, std::vector<int> labels, std::string split, SyntheticSpec spec, std::uint64_t seed)
    : images_(std::move(images)), labels_(std::move(labels)), split_(std::move(split)), spec_(spec), seed_(seed) {
  const auto S = static_cast<std::size_t>(spec_.image_size);
  const auto C = static_cast<std::size_t>(spec_.channels);
  if (images_.rank() != 4 || images_.dim(0) != labels_.size() || images_.dim(1) != C || images_.dim(2) != S ||
      images_.dim(3) != S) {
    throw DimensionError("dataset images " + to_string(images_.shape()) + " inconsistent with spec and labels");
  }
  for (int y : labels_) {
    if (y < 0 || y >= spec_.num_classes) throw ValidationError("label " + std::to_string(y) + " out of range");
  }
}

std::span<const double> Dataset::pixels(std::size_t index) const {
  if (index >= size()) throw DimensionError("image index out of range");
  const std::size_t per = images_.numel() / size();
  return images_.values().subspan(index * per, per);
}

Tensor Dataset::image(std::size_t index) const {
  const auto px = pixels(index);
  return Tensor({images_.dim(1), images_.dim(2), images_.dim(3)}, std::vector<double>(px.begin(), px.end()));
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t per = empty() ? 0 : images_.numel() / size();
  std::vector<double> out;
  out.reserve(indices.size() * per);
  for (auto idx : indices) {
    const auto px = pixels(idx);
    out.insert(out.end(), px.begin(), px.end());
  }
  return Tensor({indices.size(), images_.dim(1), images_.dim(2), images_.dim(3)}, std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto idx : indices) {
    if (idx >= size()) throw DimensionError("image index out of range");
    out.push_back(labels_[idx]);
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  return Dataset(batch(indices), batch_labels(indices), split_, spec_, seed_);
}

bool Dataset::operator==(const Dataset& other) const {
  if (!(labels_ == other.labels_ && split_ == other.split_ && spec_ == other.spec_ && seed_ == other.seed_)) {
    return false;
  }
  if (images_.shape() != other.images_.shape()) return false;
  const auto a = images_.values();
  const auto b = other.images_.values();
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

namespace {

using Grid = std::vector<double>;  // motif_size x motif_size

struct Placement {
  int row = 0;
  int col = 0;
};

struct World {
  Grid background;  // image_size x image_size
  std::vector<std::vector<Grid>> motifs;        // [class][motif]
  std::vector<std::vector<Placement>> anchors;  // [class][motif]
};

// Smooth texture from a handful of random plane waves, in roughly [0.3, 0.7].
Grid make_background(const SyntheticSpec& spec) {
  Rng rng(spec.background_seed);
  const int S = spec.image_size;
  constexpr int kWaves = 6;
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
  for (int w = 0; w < kWaves; ++w) {
    waves.push_back({rng.uniform(0.5, 4.0), rng.uniform(0.5, 4.0), rng.uniform(0.0, 2.0 * std::numbers::pi),
                     rng.uniform(0.02, 0.05)});
  }
  Grid g(static_cast<std::size_t>(S) * S, 0.5);
  for (int r = 0; r < S; ++r)
    for (int c = 0; c < S; ++c) {
      double v = 0.5;
      for (const auto& w : waves) {
        v += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * r + w.fy * c) / S + w.phase);
      }
      g[static_cast<std::size_t>(r) * S + c] = v;
    }
  return g;
}

// Blocky 4x4 pattern of palette grey levels; contains both extremes.
Grid make_motif(const SyntheticSpec& spec, Rng& rng) {
  const int M = spec.motif_size;
  const int levels = spec.palette_levels;
  for (;;) {
    std::array<int, 16> cells{};
    for (auto& c : cells) c = rng.uniform_int(0, levels - 1);
    const bool has_low = std::find(cells.begin(), cells.end(), 0) != cells.end();
    const bool has_high = std::find(cells.begin(), cells.end(), levels - 1) != cells.end();
    if (!has_low || !has_high) continue;
    Grid g(static_cast<std::size_t>(M) * M);
    for (int r = 0; r < M; ++r)
      for (int c = 0; c < M; ++c) {
        const int cell = (r * 4 / M) * 4 + (c * 4 / M);
        g[static_cast<std::size_t>(r) * M + c] = static_cast<double>(cells[cell]) / (levels - 1);
      }
    return g;
  }
}

World make_world(const SyntheticSpec& spec, const Rng& root) {
  World world;
  world.background = make_background(spec);
  Rng motif_rng = root.split(100);
  Rng anchor_rng = root.split(101);
  std::vector<Grid> seen;
  const int lo = spec.jitter;
  const int hi = spec.image_size - spec.motif_size - spec.jitter;
  for (int c = 0; c < spec.num_classes; ++c) {
    world.motifs.emplace_back();
    world.anchors.emplace_back();
    for (int k = 0; k < spec.motifs_per_class; ++k) {
      Grid g;
      do {
        g = make_motif(spec, motif_rng);
      } while (std::find(seen.begin(), seen.end(), g) != seen.end());
      seen.push_back(g);
      world.motifs.back().push_back(std::move(g));
      world.anchors.back().push_back({anchor_rng.uniform_int(lo, hi), anchor_rng.uniform_int(lo, hi)});
    }
  }
  return world;
}

void render_image(const SyntheticSpec& spec, const World& world, int label, Rng rng, double* out) {
  const int S = spec.image_size;
  const int M = spec.motif_size;
  const int source = spec.shuffle_motifs ? rng.uniform_int(0, spec.num_classes - 1) : label;
  // Background shift shares the jitter budget so zero jitter pins it too.
  const int dr = S + rng.uniform_int(-spec.jitter, spec.jitter);
  const int dc = S + rng.uniform_int(-spec.jitter, spec.jitter);
  Grid img(static_cast<std::size_t>(S) * S);
  for (int r = 0; r < S; ++r)
    for (int c = 0; c < S; ++c) {
      img[static_cast<std::size_t>(r) * S + c] =
          world.background[static_cast<std::size_t>((r + dr) % S) * S + static_cast<std::size_t>((c + dc) % S)];
    }
  for (int k = 0; k < spec.motifs_per_class; ++k) {
    const auto& anchor = world.anchors[static_cast<std::size_t>(source)][static_cast<std::size_t>(k)];
    const auto& motif = world.motifs[static_cast<std::size_t>(source)][static_cast<std::size_t>(k)];
    const int r0 = anchor.row + rng.uniform_int(-spec.jitter, spec.jitter);
    const int c0 = anchor.col + rng.uniform_int(-spec.jitter, spec.jitter);
    for (int r = 0; r < M; ++r)
      for (int c = 0; c < M; ++c) {
        img[static_cast<std::size_t>(r0 + r) * S + static_cast<std::size_t>(c0 + c)] =
            motif[static_cast<std::size_t>(r) * M + c];
      }
  }
  const std::size_t plane = static_cast<std::size_t>(S) * S;
  for (int ch = 0; ch < spec.channels; ++ch)
    for (std::size_t i = 0; i < plane; ++i) {
      const double noise = spec.noise_sigma > 0.0 ? rng.normal(0.0, spec.noise_sigma) : 0.0;
      out[ch * plane + i] = img[i] + noise;
    }
}

Dataset make_split(const SyntheticSpec& spec, const World& world, const Rng& stream, int per_class,
                   const std::string& split, std::uint64_t seed) {
  const int N = per_class * spec.num_classes;
  const auto S = static_cast<std::size_t>(spec.image_size);
  const auto C = static_cast<std::size_t>(spec.channels);
  std::vector<double> pixels(static_cast<std::size_t>(N) * C * S * S);
  std::vector<int> labels(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    labels[static_cast<std::size_t>(n)] = n % spec.num_classes;
    render_image(spec, world, labels[static_cast<std::size_t>(n)], stream.split(static_cast<std::uint64_t>(n)),
                 pixels.data() + static_cast<std::size_t>(n) * C * S * S);
  }
  return Dataset(Tensor({static_cast<std::size_t>(N), C, S, S}, std::move(pixels)), std::move(labels), split, spec,
                 seed);
}

constexpr std::uint64_t kTrainStream = 0x747261696eULL;
constexpr std::uint64_t kTestStream = 0x74657374ULL;

std::vector<std::uint8_t> encode_le(std::span<const double> values) {
  std::vector<std::uint8_t> bytes(values.size() * sizeof(double));
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return bytes;
}

std::vector<double> decode_le(std::span<const std::uint8_t> bytes) {
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

std::string labels_digest(const std::vector<int>& labels) {
  std::string text;
  for (int y : labels) text += std::to_string(y) + ',';
  return sha256_hex(text);
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

}  // namespace

DatasetPair generate(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Rng root(seed);
  const World world = make_world(spec, root);
  DatasetPair out;
  out.train = make_split(spec, world, root.split(kTrainStream), spec.train_per_class, "train", seed);
  out.test = make_split(spec, world, root.split(kTestStream), spec.test_per_class, "test", seed);
  return out;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xf];
  }
  return out;
}

std::string sha256_hex(const std::string& text) {
  return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void save(const Dataset& dataset, const std::filesystem::path& prefix) {
  const auto blob = encode_le(dataset.images().values());
  Json manifest{{"format_version", 1},
                {"split", dataset.split()},
                {"seed", dataset.seed()},
                {"spec", to_json(dataset.spec())},
                {"num_images", dataset.size()},
                {"labels", dataset.labels()},
                {"blob", with_suffix(prefix, ".bin").filename().string()},
                {"checksums", {{"images_sha256", sha256_hex(blob)}, {"labels_sha256", labels_digest(dataset.labels())}}}};
  const auto bin_path = with_suffix(prefix, ".bin");
  if (bin_path.has_parent_path()) std::filesystem::create_directories(bin_path.parent_path());
  std::ofstream os(bin_path, std::ios::binary | std::ios::trunc);
  if (!os) throw FileError("cannot open '" + bin_path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!os) throw FileError("failed writing '" + bin_path.string() + "'");
  os.close();
  write_json_file(with_suffix(prefix, ".json"), manifest);
}

Dataset load(const std::filesystem::path& prefix) {
  const Json manifest = read_json_file(with_suffix(prefix, ".json"));
  SyntheticSpec spec;
  std::vector<int> labels;
  std::string split;
  std::uint64_t seed = 0;
  std::size_t num_images = 0;
  std::string images_sha, labels_sha;
  try {
    spec = spec_from_json(manifest.at("spec"));
    labels = manifest.at("labels").get<std::vector<int>>();
    split = manifest.at("split").get<std::string>();
    seed = manifest.at("seed").get<std::uint64_t>();
    num_images = manifest.at("num_images").get<std::size_t>();
    images_sha = manifest.at("checksums").at("images_sha256").get<std::string>();
    labels_sha = manifest.at("checksums").at("labels_sha256").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("dataset manifest is malformed: " + std::string(e.what()));
  }
  if (labels.size() != num_images) throw ValidationError("manifest label count does not match num_images");
  for (int y : labels) {
    if (y < 0 || y >= spec.num_classes) throw ValidationError("manifest label " + std::to_string(y) + " out of range");
  }
  if (labels_digest(labels) != labels_sha) throw CorruptionError("label checksum mismatch");

  const auto bin_path = with_suffix(prefix, ".bin");
  std::ifstream is(bin_path, std::ios::binary);
  if (!is) throw FileError("cannot open '" + bin_path.string() + "'");
  std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto S = static_cast<std::size_t>(spec.image_size);
  const auto C = static_cast<std::size_t>(spec.channels);
  const std::size_t expected = num_images * C * S * S * sizeof(double);
  if (blob.size() != expected) {
    throw CorruptionError("image blob has " + std::to_string(blob.size()) + " bytes, expected " +
                          std::to_string(expected));
  }
  if (sha256_hex(blob) != images_sha) throw CorruptionError("image blob checksum mismatch");
  return Dataset(Tensor({num_images, C, S, S}, decode_le(blob)), std::move(labels), split, spec, seed);
}

}  // namespace protodistill
