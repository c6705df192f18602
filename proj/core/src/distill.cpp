#include "protodistill/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "protodistill/errors.hpp"
#include "protodistill/ops.hpp"

namespace protodistill {

std::string to_string(DistillMode mode) {
  switch (mode) {
    case DistillMode::baseline:
      return "baseline";
    case DistillMode::hint:
      return "hint";
    case DistillMode::proto2proto:
      return "proto2proto";
  }
  return "unknown";
}

DistillMode parse_distill_mode(const std::string& name) {
  if (name == "baseline") return DistillMode::baseline;
  if (name == "hint") return DistillMode::hint;
  if (name == "proto2proto") return DistillMode::proto2proto;
  throw ConfigError("unknown distillation mode '" + name + "' (expected baseline, hint or proto2proto)");
}

void DistillConfig::validate() const {
  if (!(tau_train > 0.0) || !(tau_test > 0.0)) throw ConfigError("tau_train and tau_test must be positive");
  if (!(lambda_global >= 0.0) || !(lambda_ppc >= 0.0)) throw ConfigError("loss weights must be non-negative");
  if (!use_model_loss && !reuse_decision_module) {
    throw ConfigError("dropping the model loss requires reusing the teacher decision module");
  }
}

std::size_t ActiveMask::popcount() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

bool ActiveMask::subset_of(const ActiveMask& other) const {
  if (bits.size() != other.bits.size()) return false;
  for (std::size_t k = 0; k < bits.size(); ++k) {
    if (bits[k] && !other.bits[k]) return false;
  }
  return true;
}

ActiveMask ActiveMask::all_ones(std::size_t height, std::size_t width, std::size_t image_id) {
  return {height, width, std::vector<std::uint8_t>(height * width, 1), 0.0, image_id};
}

std::vector<PatchMatch> nearest_patches(std::span<const double> fmap, std::size_t height, std::size_t width,
                                        std::size_t depth, std::span<const double> prototypes) {
  if (depth == 0 || prototypes.size() % depth != 0) {
    throw DimensionError("prototype buffer is not a whole number of depth-" + std::to_string(depth) + " rows");
  }
  if (fmap.size() != height * width * depth) throw DimensionError("feature buffer does not match H*W*d");
  const std::size_t HW = height * width;
  const std::size_t m = prototypes.size() / depth;
  std::vector<PatchMatch> out(m);
  for (std::size_t p = 0; p < m; ++p) {
    const double* pv = prototypes.data() + p * depth;
    double best = 0.0;
    std::size_t best_s = 0;
    for (std::size_t s = 0; s < HW; ++s) {
      const double* fv = fmap.data() + s * depth;
      double acc = 0.0;
      for (std::size_t k = 0; k < depth; ++k) {
        const double diff = fv[k] - pv[k];
        acc += diff * diff;
      }
      if (s == 0 || acc < best) {
        best = acc;
        best_s = s;
      }
    }
    out[p] = {best_s / width, best_s % width, std::sqrt(best)};
  }
  return out;
}

std::vector<PatchMatch> nearest_patches(const FeatureMap& fmap, const Tensor& prototypes) {
  if (prototypes.rank() != 2 || prototypes.dim(1) != fmap.depth()) {
    throw DimensionError("prototypes " + to_string(prototypes.shape()) + " do not match feature depth " +
                         std::to_string(fmap.depth()));
  }
  return nearest_patches(fmap.values().values(), fmap.height(), fmap.width(), fmap.depth(), prototypes.values());
}

ActiveMask mask_from_matches(std::span<const PatchMatch> matches, std::size_t height, std::size_t width, double tau,
                             std::size_t image_id) {
  ActiveMask mask{height, width, std::vector<std::uint8_t>(height * width, 0), tau, image_id};
  for (const auto& match : matches) {
    if (match.distance <= tau) mask.bits[match.i * width + match.j] = 1;
  }
  return mask;
}

bool is_active(const FeatureMap& fmap, std::size_t i, std::size_t j, double tau, const Tensor& prototypes) {
  if (i >= fmap.height() || j >= fmap.width()) throw DimensionError("patch index out of range");
  for (const auto& match : nearest_patches(fmap, prototypes)) {
    if (match.i == i && match.j == j && match.distance <= tau) return true;
  }
  return false;
}

ActiveMask active_mask(const FeatureMap& fmap, double tau, const Tensor& prototypes, std::size_t image_id) {
  return mask_from_matches(nearest_patches(fmap, prototypes), fmap.height(), fmap.width(), tau, image_id);
}

Tensor loss_ppc(const Tensor& teacher_fmaps, const Tensor& student_fmaps, std::span<const ActiveMask> masks,
                bool normalize) {
  if (teacher_fmaps.rank() != 4 || teacher_fmaps.shape() != student_fmaps.shape()) {
    throw DimensionError("patch-prototype correspondence: teacher " + to_string(teacher_fmaps.shape()) +
                         " vs student " + to_string(student_fmaps.shape()));
  }
  const std::size_t N = teacher_fmaps.dim(0), H = teacher_fmaps.dim(1), W = teacher_fmaps.dim(2),
                    d = teacher_fmaps.dim(3);
  if (masks.size() != N) throw DimensionError("one mask per image is required");
  std::vector<double> expanded(N * H * W * d);
  for (std::size_t n = 0; n < N; ++n) {
    const auto& mask = masks[n];
    if (mask.height != H || mask.width != W) throw DimensionError("mask size does not match the feature map");
    const double weight =
        normalize ? (mask.popcount() ? 1.0 / static_cast<double>(mask.popcount()) : 0.0) : 1.0;
    for (std::size_t s = 0; s < H * W; ++s) {
      const double v = mask.bits[s] ? weight : 0.0;
      std::fill_n(expanded.begin() + static_cast<std::ptrdiff_t>((n * H * W + s) * d), d, v);
    }
  }
  const Tensor mask_t(teacher_fmaps.shape(), std::move(expanded));
  const Tensor diff = ops::mul(mask_t, ops::sub(teacher_fmaps.detach(), student_fmaps));
  return ops::mean(ops::slice_norms(diff));
}

Tensor loss_global(const Tensor& teacher_prototypes, const Tensor& student_prototypes) {
  if (teacher_prototypes.rank() != 2 || teacher_prototypes.shape() != student_prototypes.shape()) {
    throw DimensionError("global explanation: teacher prototypes " + to_string(teacher_prototypes.shape()) +
                         " vs student " + to_string(student_prototypes.shape()));
  }
  return ops::mean(ops::slice_norms(ops::sub(teacher_prototypes.detach(), student_prototypes)));
}

ModelLoss loss_model(const Tensor& logits, std::span<const int> labels, const Tensor& dist2,
                     std::span<const int> class_of_prototype, const ModelLossWeights& weights) {
  const Tensor min_d = dist2.rank() == 4 ? ops::min_spatial(dist2) : dist2;
  if (min_d.rank() != 2 || min_d.dim(0) != labels.size() || min_d.dim(1) != class_of_prototype.size()) {
    throw DimensionError("model loss: distances " + to_string(dist2.shape()) + " do not match labels/prototypes");
  }
  const std::size_t N = min_d.dim(0), m = min_d.dim(1);
  const auto C = logits.rank() == 2 ? static_cast<int>(logits.dim(1)) : 0;
  for (int y : labels) {
    if (y < 0 || y >= C) throw DataError("invalid class label " + std::to_string(y));
  }
  std::vector<std::uint8_t> same(N * m), other(N * m);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t p = 0; p < m; ++p) {
      const bool own = class_of_prototype[p] == labels[n];
      same[n * m + p] = own ? 1 : 0;
      other[n * m + p] = own ? 0 : 1;
    }
  ModelLoss out;
  out.cross_entropy = ops::cross_entropy(logits, labels);
  out.cluster = ops::mean(ops::masked_min(min_d, same));
  out.separation = ops::mean(ops::masked_min(min_d, other));
  out.total = ops::sub(ops::add(ops::scale(out.cross_entropy, weights.cross_entropy),
                                ops::scale(out.cluster, weights.cluster)),
                       ops::scale(out.separation, weights.separation));
  return out;
}

Tensor loss_total(const DistillConfig& config, const LossParts& parts) {
  Tensor total;
  auto accumulate = [&total](const Tensor& term) { total = total.defined() ? ops::add(total, term) : term; };
  if (config.use_model_loss) {
    if (!parts.model.defined()) throw UsageError("loss_total: model loss missing");
    accumulate(parts.model);
  }
  if (config.mode != DistillMode::baseline) {
    if (!parts.ppc.defined()) throw UsageError("loss_total: patch-prototype correspondence term missing");
    accumulate(ops::scale(parts.ppc, config.lambda_ppc));
  }
  if (config.mode == DistillMode::proto2proto) {
    if (!parts.global.defined()) throw UsageError("loss_total: global explanation term missing");
    accumulate(ops::scale(parts.global, config.lambda_global));
  }
  if (!total.defined()) throw UsageError("loss_total: no active terms");
  return total;
}

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t C = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    correct += argmax_class(logits.values().subspan(n * C, C)) == labels[n] ? 1 : 0;
  }
  return correct;
}

void finish(EpochStats& stats, std::size_t images, std::size_t correct) {
  const double steps = static_cast<double>(std::max<std::size_t>(stats.steps, 1));
  stats.total /= steps;
  stats.model /= steps;
  stats.cross_entropy /= steps;
  stats.cluster /= steps;
  stats.separation /= steps;
  stats.global /= steps;
  stats.ppc /= steps;
  stats.train_accuracy = images ? static_cast<double>(correct) / static_cast<double>(images) : 0.0;
}

}  // namespace

std::vector<EpochStats> train_model(PrototypeModel& model, const Dataset& train_set, const TrainConfig& train,
                                    const ModelLossWeights& weights, std::uint64_t seed) {
  if (train_set.empty()) throw DataError("training set is empty");
  if (train.batch_size < 1 || train.epochs < 0) throw ConfigError("invalid epochs or batch size");
  model.set_requires_grad(true);
  Rng rng = Rng(seed).split(0x7465616368ULL);
  Sgd optimizer(model.parameters(), train.lr, train.momentum);
  std::vector<EpochStats> history;
  for (int epoch = 1; epoch <= train.epochs; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;
    std::size_t correct = 0;
    const auto order = shuffled_indices(train_set.size(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train.batch_size)) {
      const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(train.batch_size), order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      const auto labels = train_set.batch_labels(idx);
      const auto f = model.forward(train_set.batch(idx));
      const auto parts = loss_model(f.logits, labels, f.min_dist2, model.class_of_prototype(), weights);
      parts.total.backward();
      optimizer.step();
      ++stats.steps;
      stats.total += parts.total.item();
      stats.model += parts.total.item();
      stats.cross_entropy += parts.cross_entropy.item();
      stats.cluster += parts.cluster.item();
      stats.separation += parts.separation.item();
      correct += count_correct(f.logits, labels);
    }
    finish(stats, train_set.size(), correct);
    history.push_back(stats);
  }
  return history;
}

std::vector<double> tune_decision(PrototypeModel& model, const Dataset& train_set, const DecisionTuneConfig& config) {
  if (train_set.empty()) throw DataError("training set is empty");
  if (config.steps < 0 || !(config.l1 >= 0.0)) throw ConfigError("invalid decision tuning config");
  std::vector<std::size_t> all(train_set.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Tensor sim;
  {
    NoGradGuard guard;
    sim = model.forward(train_set.batch(all)).sim;
  }
  const std::size_t m = model.num_prototypes();
  const auto C = static_cast<std::size_t>(model.config().num_classes);
  std::vector<double> off_class(m * C, 0.0);
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t c = 0; c < C; ++c) off_class[p * C + c] = model.class_of_prototype()[p] == static_cast<int>(c) ? 0.0 : 1.0;
  const Tensor off_mask({m, C}, off_class);

  model.set_requires_grad(false);
  Tensor weights = model.decision();
  weights.set_requires_grad(true);
  Sgd optimizer({weights}, config.lr, config.momentum);
  std::vector<double> history;
  for (int step = 0; step < config.steps; ++step) {
    Tensor loss = ops::cross_entropy(ops::matmul(sim, weights), train_set.labels());
    if (config.l1 > 0.0) {
      // |w| = sqrt(w^2); the op's zero-gradient convention covers w = 0.
      const Tensor abs_w = ops::sqrt(ops::mul(weights, weights));
      loss = ops::add(loss, ops::scale(ops::sum(ops::mul(off_mask, abs_w)), config.l1));
    }
    history.push_back(loss.item());
    loss.backward();
    optimizer.step();
  }
  model.set_requires_grad(true);
  return history;
}

TeacherCache::TeacherCache(const PrototypeModel& teacher, const Dataset& data) : teacher_(&teacher) {
  const auto& cfg = teacher.config();
  height_ = width_ = static_cast<std::size_t>(cfg.feature_size());
  depth_ = static_cast<std::size_t>(cfg.proto_dim);
  features_ = dataset_features(teacher, data);
  matches_.reserve(features_.size());
  for (const auto& f : features_) {
    matches_.push_back(nearest_patches(f, height_, width_, depth_, teacher.prototypes().values()));
  }
}

const ActiveMask& TeacherCache::mask(std::size_t image, double tau) {
  const auto key = std::make_pair(image, tau);
  auto it = masks_.find(key);
  if (it == masks_.end()) {
    it = masks_.emplace(key, mask_from_matches(matches_.at(image), height_, width_, tau, image)).first;
  }
  return it->second;
}

Tensor TeacherCache::feature_batch(std::span<const std::size_t> images) const {
  const std::size_t per = height_ * width_ * depth_;
  std::vector<double> out;
  out.reserve(images.size() * per);
  for (auto idx : images) {
    const auto& f = features_.at(idx);
    out.insert(out.end(), f.begin(), f.end());
  }
  return Tensor({images.size(), height_, width_, depth_}, std::move(out));
}

void check_compatible(const ModelConfig& teacher, const ModelConfig& student) {
  if (teacher.num_prototypes() != student.num_prototypes() || teacher.proto_dim != student.proto_dim ||
      teacher.num_classes != student.num_classes || teacher.prototypes_per_class != student.prototypes_per_class ||
      teacher.feature_size() != student.feature_size()) {
    throw ConfigError("teacher and student must share m, d, C, H and W (teacher m=" +
                      std::to_string(teacher.num_prototypes()) + " d=" + std::to_string(teacher.proto_dim) +
                      " C=" + std::to_string(teacher.num_classes) + " H=" + std::to_string(teacher.feature_size()) +
                      "; student m=" + std::to_string(student.num_prototypes()) + " d=" +
                      std::to_string(student.proto_dim) + " C=" + std::to_string(student.num_classes) +
                      " H=" + std::to_string(student.feature_size()) + ")");
  }
  if (teacher.input_size != student.input_size || teacher.input_channels != student.input_channels) {
    throw ConfigError("teacher and student must consume the same images");
  }
}

namespace {

std::vector<Tensor> trainable(PrototypeModel& student, bool reuse) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : student.named_parameters()) {
    if (reuse && name == "decision") continue;
    out.push_back(t);
  }
  return out;
}

PrototypeModel& prepare_student(const PrototypeModel& teacher, PrototypeModel& student, const DistillConfig& config) {
  config.validate();
  check_compatible(teacher.config(), student.config());
  if (teacher.class_of_prototype() != student.class_of_prototype()) {
    throw ConfigError("teacher and student assign prototypes to classes differently");
  }
  student.set_requires_grad(true);
  if (config.reuse_decision_module) {
    const auto src = teacher.decision().values();
    auto dst = student.decision().mutable_values();
    std::copy(src.begin(), src.end(), dst.begin());
    student.decision().set_requires_grad(false);
  }
  return student;
}

}  // namespace

Distiller::Distiller(const PrototypeModel& teacher, PrototypeModel& student, const Dataset& train_set,
                     DistillConfig config, TrainConfig train, std::uint64_t seed)
    : teacher_(teacher),
      student_(prepare_student(teacher, student, config)),
      train_(train_set),
      config_(config),
      train_cfg_(train),
      rng_(Rng(seed).split(0x73747564ULL)),
      cache_(teacher, train_set),
      optimizer_(trainable(student, config.reuse_decision_module), train.lr, train.momentum) {
  if (train_set.empty()) throw DataError("training set is empty");
  if (train.batch_size < 1) throw ConfigError("batch size must be >= 1");
}

EpochStats Distiller::run_epoch() {
  EpochStats stats;
  stats.epoch = ++epoch_;
  std::size_t correct = 0;
  const auto order = shuffled_indices(train_.size(), rng_);
  const auto batch = static_cast<std::size_t>(train_cfg_.batch_size);
  const Tensor teacher_protos = teacher_.prototypes().detach();
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t len = std::min(batch, order.size() - start);
    const std::span<const std::size_t> idx(order.data() + start, len);
    const auto labels = train_.batch_labels(idx);
    const auto f = student_.forward(train_.batch(idx));

    LossParts parts;
    const auto model_loss =
        loss_model(f.logits, labels, f.min_dist2, student_.class_of_prototype(), config_.model_loss);
    parts.model = model_loss.total;
    if (config_.mode != DistillMode::baseline) {
      std::vector<ActiveMask> masks;
      masks.reserve(len);
      for (auto i : idx) {
        masks.push_back(config_.mode == DistillMode::hint ? ActiveMask::all_ones(cache_.height(), cache_.width(), i)
                                                          : cache_.mask(i, config_.tau_train));
      }
      parts.ppc = loss_ppc(cache_.feature_batch(idx), f.fmap, masks, config_.normalize_ppc);
    }
    if (config_.mode == DistillMode::proto2proto) parts.global = loss_global(teacher_protos, student_.prototypes());

    const Tensor total = loss_total(config_, parts);
    total.backward();
    // Terms switched off can leave a parameter outside the graph; it then
    // receives a zero update.
    for (auto p : optimizer_.params()) p.mutable_grad();
    optimizer_.step();

    ++stats.steps;
    stats.total += total.item();
    stats.model += model_loss.total.item();
    stats.cross_entropy += model_loss.cross_entropy.item();
    stats.cluster += model_loss.cluster.item();
    stats.separation += model_loss.separation.item();
    if (parts.global.defined()) stats.global += parts.global.item();
    if (parts.ppc.defined()) stats.ppc += parts.ppc.item();
    correct += count_correct(f.logits, labels);
  }
  finish(stats, train_.size(), correct);
  return stats;
}

std::vector<EpochStats> Distiller::run() {
  std::vector<EpochStats> history;
  for (int e = 0; e < train_cfg_.epochs; ++e) history.push_back(run_epoch());
  return history;
}

}  // namespace protodistill
