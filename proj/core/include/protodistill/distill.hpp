#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "protodistill/dataset.hpp"
#include "protodistill/model.hpp"
#include "protodistill/optim.hpp"

namespace protodistill {

enum class DistillMode { baseline, hint, proto2proto };

std::string to_string(DistillMode mode);
// Throws ConfigError for unknown names.
DistillMode parse_distill_mode(const std::string& name);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 16;
  double lr = 1e-2;
  double momentum = 0.9;
};

// ProtoPNet objective: CE + cluster * (min same-class distance)
// - separation * (min other-class distance), distances squared.
struct ModelLossWeights {
  double cross_entropy = 1.0;
  double cluster = 0.8;
  double separation = 0.08;
};

struct DistillConfig {
  DistillMode mode = DistillMode::proto2proto;
  // tau_test sits below tau_train: at 1.0 nearly every teacher argmin is
  // active on the synthetic benchmark.
  double tau_train = 1.0;
  double tau_test = 0.3;
  double lambda_global = 5.0;
  double lambda_ppc = 5.0;
  bool reuse_decision_module = false;
  // false drops the model loss entirely; only valid together with reuse.
  bool use_model_loss = true;
  // Divide each image's patch-correspondence norm by its mask popcount.
  bool normalize_ppc = false;
  ModelLossWeights model_loss;

  // Throws ConfigError.
  void validate() const;
};

// Binary H x W map of active patches for one image.
struct ActiveMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;  // row-major
  double tau = 0.0;
  std::size_t image_id = 0;

  bool at(std::size_t i, std::size_t j) const { return bits.at(i * width + j) != 0; }
  std::size_t popcount() const;
  bool subset_of(const ActiveMask& other) const;

  static ActiveMask all_ones(std::size_t height, std::size_t width, std::size_t image_id = 0);
};

// Nearest patch of one prototype: first minimizer in row-major order and its
// Euclidean distance.
struct PatchMatch {
  std::size_t i = 0;
  std::size_t j = 0;
  double distance = 0.0;
};

// One match per prototype. `fmap` is a channels-last [H, W, d] buffer.
std::vector<PatchMatch> nearest_patches(std::span<const double> fmap, std::size_t height, std::size_t width,
                                        std::size_t depth, std::span<const double> prototypes);
std::vector<PatchMatch> nearest_patches(const FeatureMap& fmap, const Tensor& prototypes);

ActiveMask mask_from_matches(std::span<const PatchMatch> matches, std::size_t height, std::size_t width, double tau,
                             std::size_t image_id = 0);

// Patch (i, j) is active iff it is the nearest patch of some prototype and
// that distance is <= tau.
bool is_active(const FeatureMap& fmap, std::size_t i, std::size_t j, double tau, const Tensor& prototypes);
ActiveMask active_mask(const FeatureMap& fmap, double tau, const Tensor& prototypes, std::size_t image_id = 0);

// (1/N) sum_n || M_n * (teacher_n - student_n) ||_2 over [N, H, W, d] maps,
// the mask broadcasting over channels. Teacher maps are treated as constants.
Tensor loss_ppc(const Tensor& teacher_fmaps, const Tensor& student_fmaps, std::span<const ActiveMask> masks,
                bool normalize = false);

// Mean index-wise Euclidean distance between prototype rows; the teacher
// side is treated as a constant.
Tensor loss_global(const Tensor& teacher_prototypes, const Tensor& student_prototypes);

struct ModelLoss {
  Tensor total;
  Tensor cross_entropy;
  Tensor cluster;
  Tensor separation;
};

// `dist2` is either the [N, m, H, W] squared-distance map or its [N, m]
// spatial minimum.
ModelLoss loss_model(const Tensor& logits, std::span<const int> labels, const Tensor& dist2,
                     std::span<const int> class_of_prototype, const ModelLossWeights& weights = {});

// Undefined tensors mark absent terms.
struct LossParts {
  Tensor model;
  Tensor global;
  Tensor ppc;
};

// baseline: L_model; hint: L_model + lambda_ppc * L_ppc (caller supplies an
// all-ones mask); proto2proto: L_model + lambda_global * L_global +
// lambda_ppc * L_ppc. L_model is dropped when use_model_loss is false.
Tensor loss_total(const DistillConfig& config, const LossParts& parts);

struct EpochStats {
  int epoch = 0;
  std::size_t steps = 0;
  double total = 0.0;
  double model = 0.0;
  double cross_entropy = 0.0;
  double cluster = 0.0;
  double separation = 0.0;
  double global = 0.0;
  double ppc = 0.0;
  double train_accuracy = 0.0;
};

// Trains with the model loss only (the teacher recipe). One entry per epoch.
std::vector<EpochStats> train_model(PrototypeModel& model, const Dataset& train_set, const TrainConfig& train,
                                    const ModelLossWeights& weights, std::uint64_t seed);

// Last-layer stage run after projection: full-batch SGD on the decision
// weights alone, everything upstream frozen. Objective is cross-entropy plus
// l1 times the absolute sum of weights linking prototypes to other classes.
struct DecisionTuneConfig {
  int steps = 100;
  double lr = 1e-2;
  double momentum = 0.9;
  double l1 = 1e-4;
};

// Returns the objective value before each step.
std::vector<double> tune_decision(PrototypeModel& model, const Dataset& train_set, const DecisionTuneConfig& config);

// Frozen-teacher view: features and masks computed once per image and τ.
class TeacherCache {
 public:
  TeacherCache(const PrototypeModel& teacher, const Dataset& data);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t depth() const noexcept { return depth_; }
  std::span<const double> features(std::size_t image) const { return features_.at(image); }
  const ActiveMask& mask(std::size_t image, double tau);
  // [B, H, W, d] constant batch of teacher features.
  Tensor feature_batch(std::span<const std::size_t> images) const;

 private:
  const PrototypeModel* teacher_;
  std::size_t height_ = 0, width_ = 0, depth_ = 0;
  std::vector<std::vector<double>> features_;
  std::vector<std::vector<PatchMatch>> matches_;
  std::map<std::pair<std::size_t, double>, ActiveMask> masks_;
};

// Throws ConfigError unless m, d, C, H, W and the prototype class layout agree.
void check_compatible(const ModelConfig& teacher, const ModelConfig& student);

// Mini-batch SGD of a student on loss_total against a frozen teacher.
class Distiller {
 public:
  Distiller(const PrototypeModel& teacher, PrototypeModel& student, const Dataset& train_set, DistillConfig config,
            TrainConfig train, std::uint64_t seed);

  // One pass over the training set; returns running means of each term.
  EpochStats run_epoch();
  std::vector<EpochStats> run();

  const DistillConfig& config() const noexcept { return config_; }
  int epochs_done() const noexcept { return epoch_; }

 private:
  const PrototypeModel& teacher_;
  PrototypeModel& student_;
  const Dataset& train_;
  DistillConfig config_;
  TrainConfig train_cfg_;
  Rng rng_;
  TeacherCache cache_;
  Sgd optimizer_;
  int epoch_ = 0;
};

}  // namespace protodistill
