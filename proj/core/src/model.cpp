#include "protodistill/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "protodistill/dataset.hpp"
#include "protodistill/errors.hpp"
#include "protodistill/ops.hpp"

namespace protodistill {

int ModelConfig::feature_size() const {
  int size = input_size;
  for (const auto& layer : backbone) {
    if (layer.kernel > size + 2 * layer.pad) return 0;
    size = (size + 2 * layer.pad - layer.kernel) / layer.stride + 1;
  }
  return size;
}

void ModelConfig::validate() const {
  if (num_classes < 1 || prototypes_per_class < 1 || proto_dim < 1) {
    throw ConfigError("model config: num_classes, prototypes_per_class and proto_dim must be >= 1");
  }
  if (input_size < 1 || input_channels < 1) throw ConfigError("model config: invalid input geometry");
  for (const auto& layer : backbone) {
    if (layer.out_channels < 1 || layer.kernel < 1 || layer.stride < 1 || layer.pad < 0) {
      throw ConfigError("model config: invalid backbone layer " + format_backbone({layer}));
    }
  }
  if (feature_size() < 1) throw ConfigError("model config: backbone leaves an empty feature map");
}

ModelConfig ModelConfig::teacher_default() {
  ModelConfig c;
  c.backbone = {{8, 3, 2, 1}, {16, 3, 2, 1}, {32, 3, 2, 1}, {32, 3, 2, 1}};
  return c;
}

ModelConfig ModelConfig::student_default() {
  ModelConfig c;
  c.backbone = {{16, 8, 4, 2}, {32, 7, 4, 2}};
  return c;
}

std::vector<ConvLayerSpec> parse_backbone(const std::string& text) {
  std::vector<ConvLayerSpec> layers;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ',')) {
    if (item.empty()) continue;
    ConvLayerSpec layer;
    char c1 = 0, c2 = 0, c3 = 0;
    std::stringstream one(item);
    if (!(one >> layer.out_channels >> c1 >> layer.kernel >> c2 >> layer.stride >> c3 >> layer.pad) || c1 != ':' ||
        c2 != ':' || c3 != ':') {
      throw ConfigError("backbone layer '" + item + "' is not of the form out:kernel:stride:pad");
    }
    layers.push_back(layer);
  }
  return layers;
}

std::string format_backbone(const std::vector<ConvLayerSpec>& layers) {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (i) out += ',';
    out += std::to_string(l.out_channels) + ':' + std::to_string(l.kernel) + ':' + std::to_string(l.stride) + ':' +
           std::to_string(l.pad);
  }
  return out;
}

PixelRect receptive_field(const ModelConfig& config, int i, int j) {
  int r0 = i, r1 = i, c0 = j, c1 = j;
  for (auto it = config.backbone.rbegin(); it != config.backbone.rend(); ++it) {
    r0 = r0 * it->stride - it->pad;
    r1 = r1 * it->stride - it->pad + it->kernel - 1;
    c0 = c0 * it->stride - it->pad;
    c1 = c1 * it->stride - it->pad + it->kernel - 1;
  }
  const int last = config.input_size - 1;
  return {std::clamp(r0, 0, last), std::clamp(c0, 0, last), std::clamp(r1, 0, last), std::clamp(c1, 0, last)};
}

FeatureMap::FeatureMap(Tensor values) : values_(std::move(values)) {
  if (values_.rank() != 3) throw DimensionError("feature map must have shape [H, W, d]");
}

std::span<const double> FeatureMap::patch(std::size_t i, std::size_t j) const {
  if (i >= height() || j >= width()) throw DimensionError("patch index out of range");
  return values_.values().subspan((i * width() + j) * depth(), depth());
}

double similarity_from_distance(double dist2, double eps) {
  if (dist2 < 0.0) throw DomainError("similarity_from_distance: negative squared distance");
  if (!(eps > 0.0)) throw DomainError("similarity_from_distance: eps must be positive");
  return std::log((dist2 + 1.0) / (dist2 + eps));
}

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.normal(0.0, sd);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

PrototypeModel::PrototypeModel(ModelConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  Rng conv_rng = rng.split(1);
  Rng proto_rng = rng.split(2);
  std::size_t in_ch = static_cast<std::size_t>(config_.input_channels);
  for (std::size_t l = 0; l < config_.backbone.size(); ++l) {
    const auto& layer = config_.backbone[l];
    const auto out_ch = static_cast<std::size_t>(layer.out_channels);
    const auto k = static_cast<std::size_t>(layer.kernel);
    const std::string prefix = "backbone." + std::to_string(l);
    params_.emplace_back(prefix + ".weight", he_normal({out_ch, in_ch, k, k}, in_ch * k * k, conv_rng));
    params_.emplace_back(prefix + ".bias", Tensor::zeros({out_ch}, true));
    in_ch = out_ch;
  }
  const auto d = static_cast<std::size_t>(config_.proto_dim);
  params_.emplace_back("addon.0.weight", he_normal({d, in_ch, 1, 1}, in_ch, conv_rng));
  params_.emplace_back("addon.0.bias", Tensor::zeros({d}, true));
  params_.emplace_back("addon.1.weight", he_normal({d, d, 1, 1}, d, conv_rng));
  params_.emplace_back("addon.1.bias", Tensor::zeros({d}, true));

  const auto m = num_prototypes();
  std::vector<double> protos(m * d);
  for (auto& x : protos) x = proto_rng.uniform();
  params_.emplace_back("prototypes", Tensor({m, d}, std::move(protos), true));

  const auto C = static_cast<std::size_t>(config_.num_classes);
  class_of_prototype_.resize(m);
  std::vector<double> weights(m * C, -0.5);
  for (std::size_t p = 0; p < m; ++p) {
    class_of_prototype_[p] = static_cast<int>(p / static_cast<std::size_t>(config_.prototypes_per_class));
    weights[p * C + static_cast<std::size_t>(class_of_prototype_[p])] = 1.0;
  }
  params_.emplace_back("decision", Tensor({m, C}, std::move(weights), true));
}

const Tensor& PrototypeModel::param(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw UsageError("unknown parameter '" + name + "'");
}

Tensor& PrototypeModel::param(const std::string& name) {
  for (auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw UsageError("unknown parameter '" + name + "'");
}

std::vector<Tensor> PrototypeModel::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [n, t] : params_) out.push_back(t);
  return out;
}

void PrototypeModel::set_requires_grad(bool flag) {
  for (auto& [n, t] : params_) t.set_requires_grad(flag);
}

Tensor PrototypeModel::features(const Tensor& images) const {
  if (images.rank() != 4 || static_cast<int>(images.dim(1)) != config_.input_channels ||
      static_cast<int>(images.dim(2)) != config_.input_size || static_cast<int>(images.dim(3)) != config_.input_size) {
    throw DimensionError("model expects images of shape [N," + std::to_string(config_.input_channels) + "," +
                         std::to_string(config_.input_size) + "," + std::to_string(config_.input_size) + "], got " +
                         to_string(images.shape()));
  }
  Tensor x = ops::scale(ops::add(images, Tensor::scalar(-kInputCentre)), kInputScale);
  for (std::size_t l = 0; l < config_.backbone.size(); ++l) {
    const auto& layer = config_.backbone[l];
    const std::string prefix = "backbone." + std::to_string(l);
    x = ops::relu(ops::conv2d(x, param(prefix + ".weight"), param(prefix + ".bias"), layer.stride, layer.pad));
  }
  x = ops::relu(ops::conv2d(x, param("addon.0.weight"), param("addon.0.bias"), 1, 0));
  x = ops::sigmoid(ops::conv2d(x, param("addon.1.weight"), param("addon.1.bias"), 1, 0));
  return ops::to_channels_last(x);
}

BatchForward PrototypeModel::forward(const Tensor& images) const {
  BatchForward out;
  out.fmap = features(images);
  out.dist2 = ops::patch_sq_distances(out.fmap, prototypes());
  out.min_dist2 = ops::min_spatial(out.dist2);
  out.sim = ops::log_similarity(out.min_dist2, kSimilarityEps);
  out.logits = ops::matmul(out.sim, decision());
  return out;
}

ImageForward PrototypeModel::forward_image(const Tensor& image) const {
  if (image.rank() != 3) throw DimensionError("forward_image expects [Cin, S, S], got " + to_string(image.shape()));
  Shape batched{1, image.dim(0), image.dim(1), image.dim(2)};
  auto f = forward(ops::reshape(image, batched));
  const std::size_t H = f.fmap.dim(1), W = f.fmap.dim(2), d = f.fmap.dim(3);
  ImageForward out;
  out.logits = ops::reshape(f.logits, {f.logits.dim(1)});
  out.fmap = FeatureMap(ops::reshape(f.fmap, {H, W, d}));
  out.dist2 = ops::reshape(f.dist2, {f.dist2.dim(1), H, W});
  out.sim = ops::reshape(f.sim, {f.sim.dim(1)});
  return out;
}

int argmax_class(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("argmax of empty logits");
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.size(); ++c) {
    if (logits[c] > logits[best]) best = c;
  }
  return static_cast<int>(best);
}

int PrototypeModel::classify(const Tensor& image) const {
  NoGradGuard guard;
  return argmax_class(forward_image(image).logits.values());
}

std::vector<ProjectionRecord> PrototypeModel::project_prototypes(const Dataset& train_set, std::size_t batch_size) {
  if (train_set.empty()) throw DataError("projection requires a non-empty training set");
  const auto feats = dataset_features(*this, train_set, batch_size);
  const auto H = static_cast<std::size_t>(config_.feature_size());
  const auto d = static_cast<std::size_t>(config_.proto_dim);
  const std::size_t HW = H * H;
  const auto m = num_prototypes();
  auto proto = prototypes().mutable_values();

  std::vector<ProjectionRecord> records(m);
  for (std::size_t p = 0; p < m; ++p) {
    const double* pv = proto.data() + p * d;
    double best = std::numeric_limits<double>::infinity();
    bool found = false;
    for (std::size_t n = 0; n < train_set.size(); ++n) {
      if (train_set.labels()[n] != class_of_prototype_[p]) continue;
      for (std::size_t s = 0; s < HW; ++s) {
        const double* fv = feats[n].data() + s * d;
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = fv[k] - pv[k];
          acc += diff * diff;
        }
        if (!found || acc < best) {
          best = acc;
          found = true;
          records[p] = {n, s / H, s % H, 0.0};
        }
      }
    }
    if (!found) {
      throw DataError("no training images of class " + std::to_string(class_of_prototype_[p]) + " for prototype " +
                      std::to_string(p));
    }
    records[p].distance = std::sqrt(best);
  }
  for (std::size_t p = 0; p < m; ++p) {
    const auto& r = records[p];
    const double* src = feats[r.image_index].data() + (r.i * H + r.j) * d;
    std::copy_n(src, d, proto.begin() + static_cast<std::ptrdiff_t>(p * d));
  }
  projection_ = records;
  return records;
}

PrototypeModel PrototypeModel::clone() const {
  PrototypeModel out;
  out.config_ = config_;
  out.class_of_prototype_ = class_of_prototype_;
  out.projection_ = projection_;
  for (const auto& [n, t] : params_) out.params_.emplace_back(n, t.clone());
  return out;
}

PrototypeModel PrototypeModel::from_parts(ModelConfig config, std::vector<std::pair<std::string, Tensor>> params,
                                          std::vector<int> class_of_prototype,
                                          std::optional<std::vector<ProjectionRecord>> projection) {
  config.validate();
  Rng scratch(0);
  PrototypeModel reference(config, scratch);
  if (params.size() != reference.params_.size()) throw DataError("checkpoint parameter count mismatch");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& [name, tensor] = reference.params_[k];
    if (params[k].first != name || params[k].second.shape() != tensor.shape()) {
      throw DataError("checkpoint parameter '" + params[k].first + "' does not match the configured architecture");
    }
  }
  if (class_of_prototype.size() != reference.num_prototypes()) throw DataError("class_of_prototype size mismatch");
  for (int c : class_of_prototype) {
    if (c < 0 || c >= config.num_classes) throw DataError("class_of_prototype entry out of range");
  }
  PrototypeModel out;
  out.config_ = std::move(config);
  out.params_ = std::move(params);
  out.class_of_prototype_ = std::move(class_of_prototype);
  out.projection_ = std::move(projection);
  return out;
}

namespace {

template <typename Fn>
void for_each_batch(std::size_t total, std::size_t batch_size, Fn fn) {
  if (batch_size == 0) batch_size = 1;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < total; start += batch_size) {
    idx.resize(std::min(batch_size, total - start));
    std::iota(idx.begin(), idx.end(), start);
    fn(std::span<const std::size_t>(idx));
  }
}

}  // namespace

std::vector<int> predict(const PrototypeModel& model, const Dataset& data, std::size_t batch_size) {
  NoGradGuard guard;
  std::vector<int> out;
  out.reserve(data.size());
  const auto C = static_cast<std::size_t>(model.config().num_classes);
  for_each_batch(data.size(), batch_size, [&](std::span<const std::size_t> idx) {
    const Tensor logits_t = model.forward(data.batch(idx)).logits;
    const auto logits = logits_t.values();
    for (std::size_t r = 0; r < idx.size(); ++r) out.push_back(argmax_class(logits.subspan(r * C, C)));
  });
  return out;
}

double accuracy(const PrototypeModel& model, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw DataError("accuracy of an empty dataset");
  const auto pred = predict(model, data, batch_size);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < pred.size(); ++n) correct += pred[n] == data.labels()[n] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<std::vector<double>> dataset_features(const PrototypeModel& model, const Dataset& data,
                                                  std::size_t batch_size) {
  NoGradGuard guard;
  std::vector<std::vector<double>> out;
  out.reserve(data.size());
  for_each_batch(data.size(), batch_size, [&](std::span<const std::size_t> idx) {
    const Tensor f = model.features(data.batch(idx));
    const std::size_t per = f.numel() / idx.size();
    const auto v = f.values();
    for (std::size_t r = 0; r < idx.size(); ++r) out.emplace_back(v.begin() + r * per, v.begin() + (r + 1) * per);
  });
  return out;
}

}  // namespace protodistill
