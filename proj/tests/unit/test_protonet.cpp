#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "grad_check.hpp"
#include "oracles.hpp"
#include "protodistill/dataset.hpp"
#include "protodistill/distill.hpp"
#include "protodistill/errors.hpp"
#include "protodistill/model.hpp"
#include "protodistill/ops.hpp"

using namespace protodistill;

namespace {

ModelConfig tiny_config(int classes = 2, int per_class = 2, int d = 3, int size = 8) {
  ModelConfig c;
  c.num_classes = classes;
  c.prototypes_per_class = per_class;
  c.proto_dim = d;
  c.input_size = size;
  c.input_channels = 1;
  c.backbone = {{4, 3, 2, 1}, {4, 3, 2, 1}};
  return c;
}

Dataset random_dataset(int n, int classes, int size, std::uint64_t seed) {
  Rng rng(seed);
  SyntheticSpec spec;
  spec.num_classes = classes;
  spec.image_size = size;
  std::vector<double> px(static_cast<std::size_t>(n * size * size));
  for (auto& v : px) v = rng.uniform();
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) labels[static_cast<std::size_t>(k)] = k % classes;
  return Dataset(Tensor({static_cast<std::size_t>(n), 1, static_cast<std::size_t>(size), static_cast<std::size_t>(size)},
                        std::move(px)),
                 std::move(labels), "train", spec, seed);
}

// C=2, one prototype per class, d=1, one 1x1 backbone conv on a 2x2 image.
PrototypeModel hand_model(double wb, double bb, double wa0, double ba0, double wa1, double ba1, double p0, double p1) {
  ModelConfig c;
  c.num_classes = 2;
  c.prototypes_per_class = 1;
  c.proto_dim = 1;
  c.input_size = 2;
  c.backbone = {{1, 1, 1, 0}};
  std::vector<std::pair<std::string, Tensor>> params = {
      {"backbone.0.weight", Tensor({1, 1, 1, 1}, {wb})}, {"backbone.0.bias", Tensor({1}, {bb})},
      {"addon.0.weight", Tensor({1, 1, 1, 1}, {wa0})},   {"addon.0.bias", Tensor({1}, {ba0})},
      {"addon.1.weight", Tensor({1, 1, 1, 1}, {wa1})},   {"addon.1.bias", Tensor({1}, {ba1})},
      {"prototypes", Tensor({2, 1}, {p0, p1})},          {"decision", Tensor({2, 2}, {1.0, -0.5, -0.5, 1.0})}};
  return PrototypeModel::from_parts(c, std::move(params), {0, 1}, std::nullopt);
}

}  // namespace

TEST_SUITE("model config") {
  TEST_CASE("default teacher and student produce a 4x4 map") {
    CHECK(ModelConfig::teacher_default().feature_size() == 4);
    CHECK(ModelConfig::student_default().feature_size() == 4);
    CHECK(ModelConfig::teacher_default().backbone.size() == 4);
    CHECK(ModelConfig::student_default().backbone.size() == 2);
    CHECK(ModelConfig::teacher_default().num_prototypes() == 40);
    CHECK(ModelConfig::teacher_default().proto_dim == 32);
  }

  TEST_CASE("backbone text round trip") {
    const auto layers = parse_backbone("8:3:2:1,16:5:4:2");
    REQUIRE(layers.size() == 2);
    CHECK(layers[1].out_channels == 16);
    CHECK(layers[1].kernel == 5);
    CHECK(format_backbone(layers) == "8:3:2:1,16:5:4:2");
    CHECK_THROWS_AS(parse_backbone("8:3:2"), ConfigError);
    CHECK_THROWS_AS(parse_backbone("8:x:2:1"), ConfigError);
  }

  TEST_CASE("validation") {
    auto c = tiny_config();
    CHECK_NOTHROW(c.validate());
    c.proto_dim = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.backbone = {{4, 9, 1, 0}, {4, 9, 1, 0}};
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("receptive fields stay inside the image") {
    for (const auto& cfg : {ModelConfig::teacher_default(), ModelConfig::student_default()}) {
      const int H = cfg.feature_size();
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < H; ++j) {
          const auto r = receptive_field(cfg, i, j);
          CHECK(r.row0 >= 0);
          CHECK(r.col0 >= 0);
          CHECK(r.row1 < cfg.input_size);
          CHECK(r.col1 < cfg.input_size);
          CHECK(r.row0 <= r.row1);
          CHECK(r.col0 <= r.col1);
        }
    }
  }

  TEST_CASE("receptive field of a single stride-2 3x3 layer") {
    ModelConfig c = tiny_config();
    c.backbone = {{1, 3, 2, 1}};
    const auto r = receptive_field(c, 1, 2);  // centre at (2, 4), half-width 1
    CHECK(r.row0 == 1);
    CHECK(r.row1 == 3);
    CHECK(r.col0 == 3);
    CHECK(r.col1 == 5);
  }
}

TEST_SUITE("model") {
  TEST_CASE("initialization invariants") {
    Rng rng(5);
    const PrototypeModel m(tiny_config(3, 2), rng);
    REQUIRE(m.num_prototypes() == 6);
    for (std::size_t p = 0; p < 6; ++p) CHECK(m.class_of_prototype()[p] == static_cast<int>(p / 2));
    for (double v : m.prototypes().values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    const auto w = m.decision().values();
    for (std::size_t p = 0; p < 6; ++p)
      for (std::size_t c = 0; c < 3; ++c) CHECK(w[p * 3 + c] == (static_cast<int>(c) == m.class_of_prototype()[p] ? 1.0 : -0.5));
  }

  TEST_CASE("features are sigmoid bounded") {
    Rng rng(6);
    const PrototypeModel m(tiny_config(), rng);
    const auto data = random_dataset(4, 2, 8, 1);
    std::vector<std::size_t> idx{0, 1, 2, 3};
    const Tensor f = m.features(data.batch(idx));
    CHECK(f.shape() == Shape{4, 2, 2, 3});
    for (double v : f.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }

  TEST_CASE("prototype equal to a patch reaches the maximum similarity") {
    Rng rng(7);
    PrototypeModel m(tiny_config(), rng);
    const auto data = random_dataset(1, 2, 8, 2);
    const auto f = m.forward_image(data.image(0));
    const auto patch = f.fmap.patch(1, 0);
    std::copy(patch.begin(), patch.end(), m.prototypes().mutable_values().begin());
    const auto g = m.forward_image(data.image(0));
    CHECK(g.dist2.at({0, 1, 0}) == 0.0);
    CHECK(g.sim.values()[0] == doctest::Approx(std::log(1e4)).epsilon(1e-14));
    for (double s : g.sim.values()) CHECK(s <= g.sim.values()[0]);
  }

  TEST_CASE("zero decision weights give zero logits") {
    Rng rng(8);
    PrototypeModel m(tiny_config(), rng);
    for (auto& v : m.decision().mutable_values()) v = 0.0;
    const auto data = random_dataset(2, 2, 8, 3);
    for (std::size_t n = 0; n < 2; ++n) {
      const Tensor logits = m.forward_image(data.image(n)).logits;
      for (double l : logits.values()) CHECK(l == 0.0);
    }
  }

  TEST_CASE("doubling decision weights doubles logits") {
    Rng rng(9);
    PrototypeModel m(tiny_config(), rng);
    const auto data = random_dataset(1, 2, 8, 4);
    const auto before = m.forward_image(data.image(0)).logits;
    for (auto& v : m.decision().mutable_values()) v *= 2.0;
    const auto after = m.forward_image(data.image(0)).logits;
    for (std::size_t c = 0; c < 2; ++c) CHECK(after.values()[c] == doctest::Approx(2.0 * before.values()[c]).epsilon(1e-14));
  }

  TEST_CASE("hand-traced two-class model") {
    const PrototypeModel m = hand_model(0.7, 0.1, 1.3, -0.2, 0.9, 0.05, 0.6, 0.35);
    const std::vector<double> img{0.2, 0.9, 0.5, 0.75};
    const auto out = m.forward_image(Tensor({1, 2, 2}, img));
    auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
    std::vector<double> feat;
    for (double x : img) {
      const double b = std::max(0.0, 0.7 * ((x - kInputCentre) * kInputScale) + 0.1);
      const double a = std::max(0.0, 1.3 * b - 0.2);
      feat.push_back(sig(0.9 * a + 0.05));
    }
    double sim[2];
    const double protos[2] = {0.6, 0.35};
    for (int p = 0; p < 2; ++p) {
      double best = INFINITY;
      for (double f : feat) best = std::min(best, (f - protos[p]) * (f - protos[p]));
      sim[p] = std::log((best + 1.0) / (best + 1e-4));
    }
    const double l0 = sim[0] * 1.0 + sim[1] * -0.5;
    const double l1 = sim[0] * -0.5 + sim[1] * 1.0;
    CHECK(std::abs(out.logits.values()[0] - l0) <= 1e-10);
    CHECK(std::abs(out.logits.values()[1] - l1) <= 1e-10);
    CHECK(m.classify(Tensor({1, 2, 2}, img)) == (l1 > l0 ? 1 : 0));
  }

  TEST_CASE("similarity is invariant to permuting patches") {
    Rng rng(10);
    const Tensor fmap = testing_support::random_tensor({1, 2, 3, 4}, rng, 0, 1, false);
    const Tensor protos = testing_support::random_tensor({5, 4}, rng, 0, 1, false);
    std::vector<double> perm(fmap.numel());
    const std::size_t order[6] = {4, 1, 5, 0, 3, 2};
    for (std::size_t s = 0; s < 6; ++s)
      std::copy_n(fmap.values().begin() + static_cast<std::ptrdiff_t>(order[s] * 4), 4, perm.begin() + static_cast<std::ptrdiff_t>(s * 4));
    const Tensor a = ops::min_spatial(ops::patch_sq_distances(fmap, protos));
    const Tensor b = ops::min_spatial(ops::patch_sq_distances(Tensor({1, 2, 3, 4}, perm), protos));
    for (std::size_t k = 0; k < a.numel(); ++k) CHECK(a.values()[k] == b.values()[k]);
  }

  TEST_CASE("input shape mismatch") {
    Rng rng(11);
    const PrototypeModel m(tiny_config(), rng);
    CHECK_THROWS_AS(m.forward(Tensor::zeros({1, 1, 7, 7})), DimensionError);
    CHECK_THROWS_AS(m.forward_image(Tensor::zeros({1, 8})), DimensionError);
  }

  TEST_CASE("clone is independent, copies share storage") {
    Rng rng(12);
    PrototypeModel m(tiny_config(), rng);
    PrototypeModel c = m.clone();
    PrototypeModel shared = m;
    m.prototypes().mutable_values()[0] = 0.123;
    CHECK(c.prototypes().values()[0] != 0.123);
    CHECK(shared.prototypes().values()[0] == 0.123);
  }
}

TEST_SUITE("similarity and classify") {
  TEST_CASE("similarity values") {
    CHECK(similarity_from_distance(0.0, 1e-4) == doctest::Approx(9.2103403719761836).epsilon(1e-14));
    CHECK(similarity_from_distance(0.5) > similarity_from_distance(1.0));
    CHECK(similarity_from_distance(1e12) < 1e-11);
    CHECK(similarity_from_distance(0.5) > 0.0);
    CHECK_THROWS_AS(similarity_from_distance(-1.0), DomainError);
    double prev = similarity_from_distance(0.0);
    for (double d = 0.05; d < 20.0; d += 0.05) {
      const double s = similarity_from_distance(d);
      CHECK(s < prev);
      prev = s;
    }
  }

  TEST_CASE("argmax tie-breaking and shift invariance") {
    const std::vector<double> a{0.1, 0.9};
    const std::vector<double> tie{0.5, 0.5};
    CHECK(argmax_class(a) == 1);
    CHECK(argmax_class(tie) == 0);
    const std::vector<double> l{0.3, -1.0, 2.0, 2.0};
    std::vector<double> shifted = l;
    for (auto& v : shifted) v += 17.25;
    CHECK(argmax_class(l) == argmax_class(shifted));
    CHECK(argmax_class(l) == 2);
  }
}

TEST_SUITE("projection") {
  TEST_CASE("matches an exhaustive scan over a 3-image set") {
    Rng rng(20);
    PrototypeModel m(tiny_config(2, 2, 3, 8), rng);
    const auto data = random_dataset(3, 2, 8, 21);
    const auto feats = dataset_features(m, data);
    const std::vector<double> protos(m.prototypes().values().begin(), m.prototypes().values().end());
    const auto records = m.project_prototypes(data);
    REQUIRE(records.size() == 4);
    for (std::size_t p = 0; p < 4; ++p) {
      double best = INFINITY;
      std::size_t bn = 0, bi = 0, bj = 0;
      for (std::size_t n = 0; n < 3; ++n) {
        if (data.labels()[n] != m.class_of_prototype()[p]) continue;
        for (std::size_t i = 0; i < 2; ++i)
          for (std::size_t j = 0; j < 2; ++j) {
            const double d = oracle::distance(feats[n], 2, 3, protos, p, i, j);
            if (d < best) {
              best = d;
              bn = n;
              bi = i;
              bj = j;
            }
          }
      }
      CHECK(records[p].image_index == bn);
      CHECK(records[p].i == bi);
      CHECK(records[p].j == bj);
      CHECK(records[p].distance == doctest::Approx(best).epsilon(1e-12));
      const auto src = feats[bn];
      for (std::size_t k = 0; k < 3; ++k) CHECK(m.prototypes().values()[p * 3 + k] == src[(bi * 2 + bj) * 3 + k]);
    }
  }

  TEST_CASE("projection is idempotent and lands at distance zero") {
    Rng rng(22);
    PrototypeModel m(tiny_config(), rng);
    const auto data = random_dataset(6, 2, 8, 23);
    const auto first = m.project_prototypes(data);
    const std::vector<double> after_first(m.prototypes().values().begin(), m.prototypes().values().end());
    const auto second = m.project_prototypes(data);
    CHECK(std::equal(after_first.begin(), after_first.end(), m.prototypes().values().begin()));
    for (std::size_t p = 0; p < first.size(); ++p) {
      CHECK(second[p].distance == 0.0);
      CHECK(second[p].image_index == first[p].image_index);
      const auto f = m.forward_image(data.image(first[p].image_index));
      CHECK(f.dist2.at({p, first[p].i, first[p].j}) == 0.0);
    }
    CHECK(loss_global(m.prototypes(), m.prototypes()).item() == 0.0);
    REQUIRE(m.projection().has_value());
    CHECK(*m.projection() == second);
  }

  TEST_CASE("class without training images is a data error") {
    Rng rng(24);
    PrototypeModel m(tiny_config(3, 1), rng);
    const auto data = random_dataset(4, 2, 8, 25);  // labels 0, 1 only
    SyntheticSpec spec = data.spec();
    spec.num_classes = 3;
    const Dataset relabelled(data.images(), data.labels(), "train", spec, 0);
    CHECK_THROWS_AS(m.project_prototypes(relabelled), DataError);
  }
}
