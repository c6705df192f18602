#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "protodistill/rng.hpp"
#include "protodistill/tensor.hpp"

namespace protodistill {

class Dataset;

// One backbone block: conv(kernel, stride, pad) followed by ReLU.
struct ConvLayerSpec {
  int out_channels = 8;
  int kernel = 3;
  int stride = 2;
  int pad = 1;

  bool operator==(const ConvLayerSpec&) const = default;
};

// Architecture of a prototypical-part network. The add-on is fixed to two
// 1x1 convolutions (ReLU, then sigmoid) of width `proto_dim`.
struct ModelConfig {
  int num_classes = 8;
  int prototypes_per_class = 5;
  int proto_dim = 32;
  int input_size = 64;
  int input_channels = 1;
  std::vector<ConvLayerSpec> backbone;

  int num_prototypes() const noexcept { return num_classes * prototypes_per_class; }
  // Spatial side H (== W) of the add-on feature map.
  int feature_size() const;
  // Throws ConfigError on invalid sizes or an empty feature map.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;

  // Four stride-2 blocks, 64 -> 4.
  static ModelConfig teacher_default();
  // Two stride-4 blocks, 64 -> 4.
  static ModelConfig student_default();
};

// Parses "out:kernel:stride:pad,..." into backbone blocks.
std::vector<ConvLayerSpec> parse_backbone(const std::string& text);
std::string format_backbone(const std::vector<ConvLayerSpec>& layers);

// Inclusive input-pixel rectangle that can influence feature cell (i, j),
// clipped to the image.
struct PixelRect {
  int row0 = 0;
  int col0 = 0;
  int row1 = 0;
  int col1 = 0;
};
PixelRect receptive_field(const ModelConfig& config, int i, int j);

// Add-on output for one image, stored channels-last.
class FeatureMap {
 public:
  FeatureMap() = default;
  // values: [H, W, d]
  explicit FeatureMap(Tensor values);

  std::size_t height() const { return values_.dim(0); }
  std::size_t width() const { return values_.dim(1); }
  std::size_t depth() const { return values_.dim(2); }
  const Tensor& values() const noexcept { return values_; }
  // Local patch l_ij.
  std::span<const double> patch(std::size_t i, std::size_t j) const;

 private:
  Tensor values_;
};

struct ProjectionRecord {
  std::size_t image_index = 0;  // index into the training set
  std::size_t i = 0;
  std::size_t j = 0;
  double distance = 0.0;  // Euclidean, before replacement

  bool operator==(const ProjectionRecord&) const = default;
};

struct BatchForward {
  Tensor logits;    // [N, C]
  Tensor fmap;      // [N, H, W, d]
  Tensor dist2;     // [N, m, H, W] squared L2
  Tensor min_dist2; // [N, m]
  Tensor sim;       // [N, m]
};

struct ImageForward {
  Tensor logits;  // [C]
  FeatureMap fmap;
  Tensor dist2;  // [m, H, W]
  Tensor sim;    // [m]
};

constexpr double kSimilarityEps = 1e-4;
// Pixels enter the backbone as (x - kInputCentre) * kInputScale.
constexpr double kInputCentre = 0.5;
constexpr double kInputScale = 4.0;

// log((dist2 + 1) / (dist2 + eps)); throws DomainError for dist2 < 0.
double similarity_from_distance(double dist2, double eps = kSimilarityEps);

// Backbone -> add-on -> prototype comparison -> class-sparse linear decision.
//
// Parameters are named ("backbone.0.weight", ..., "prototypes", "decision")
// and held as shared tensor handles; copying a PrototypeModel shares storage,
// use clone() for an independent copy.
class PrototypeModel {
 public:
  PrototypeModel() = default;
  // Random initialization: He-normal convolutions, zero biases, prototypes
  // uniform in (0,1)^d, decision weights 1.0 on the own class and -0.5 elsewhere.
  PrototypeModel(ModelConfig config, Rng& rng);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t num_prototypes() const { return static_cast<std::size_t>(config_.num_prototypes()); }
  const std::vector<int>& class_of_prototype() const noexcept { return class_of_prototype_; }

  const Tensor& prototypes() const { return param("prototypes"); }
  const Tensor& decision() const { return param("decision"); }
  Tensor& prototypes() { return param("prototypes"); }
  Tensor& decision() { return param("decision"); }

  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  const std::vector<std::pair<std::string, Tensor>>& named_parameters() const noexcept { return params_; }
  std::vector<Tensor> parameters() const;
  void set_requires_grad(bool flag);

  // images: [N, Cin, S, S]
  BatchForward forward(const Tensor& images) const;
  // Add-on features only: [N, H, W, d]
  Tensor features(const Tensor& images) const;
  // image: [Cin, S, S]
  ImageForward forward_image(const Tensor& image) const;
  // Argmax of the logits, ties toward the lower class index.
  int classify(const Tensor& image) const;

  // Replaces every prototype by its nearest latent patch among training
  // images of its own class. Returns one record per prototype.
  std::vector<ProjectionRecord> project_prototypes(const Dataset& train_set, std::size_t batch_size = 32);

  const std::optional<std::vector<ProjectionRecord>>& projection() const noexcept { return projection_; }
  void set_projection(std::vector<ProjectionRecord> records) { projection_ = std::move(records); }

  PrototypeModel clone() const;

  // Used by checkpoint loading.
  static PrototypeModel from_parts(ModelConfig config, std::vector<std::pair<std::string, Tensor>> params,
                                   std::vector<int> class_of_prototype,
                                   std::optional<std::vector<ProjectionRecord>> projection);

 private:
  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<int> class_of_prototype_;
  std::optional<std::vector<ProjectionRecord>> projection_;
};

// Argmax with ties toward the lower index.
int argmax_class(std::span<const double> logits);

// Predicted classes for a whole dataset (graph recording disabled).
std::vector<int> predict(const PrototypeModel& model, const Dataset& data, std::size_t batch_size = 64);
// Fraction of correctly classified images, in [0, 1].
double accuracy(const PrototypeModel& model, const Dataset& data, std::size_t batch_size = 64);
// Add-on features of every image, channels-last, one buffer of H*W*d per image.
std::vector<std::vector<double>> dataset_features(const PrototypeModel& model, const Dataset& data,
                                                  std::size_t batch_size = 64);

}  // namespace protodistill
