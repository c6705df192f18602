#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "oracles.hpp"
#include "protodistill/dump.hpp"
#include "protodistill/errors.hpp"
#include "protodistill/metrics.hpp"
#include "protodistill/pipeline.hpp"

using namespace protodistill;

namespace {

// Profile over a 2x2 grid from explicit argmin ids and distances.
ActivationProfile make_profile(std::size_t images, std::size_t m, std::vector<PatchId> ids, std::vector<double> dist) {
  ActivationProfile p;
  p.grid = {2, 2};
  p.num_images = images;
  p.num_prototypes = m;
  p.depth = 1;
  p.argmin_ids = std::move(ids);
  p.min_distances = std::move(dist);
  p.predictions.assign(images, 0);
  return p;
}

std::vector<std::vector<double>> random_square(Rng& rng, std::size_t n) {
  std::vector<std::vector<double>> s(n, std::vector<double>(n));
  for (auto& row : s)
    for (auto& v : row) v = rng.uniform(-1.0, 1.0);
  return s;
}

Dataset random_dataset(int n, int size, std::uint64_t seed) {
  Rng rng(seed);
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.image_size = size;
  std::vector<double> px(static_cast<std::size_t>(n * size * size));
  for (auto& v : px) v = rng.uniform();
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) labels[static_cast<std::size_t>(k)] = k % 2;
  return Dataset(Tensor({static_cast<std::size_t>(n), 1, static_cast<std::size_t>(size), static_cast<std::size_t>(size)},
                        std::move(px)),
                 std::move(labels), "test", spec, seed);
}

ModelConfig small_config(int width, int m_per_class) {
  ModelConfig c;
  c.num_classes = 2;
  c.prototypes_per_class = m_per_class;
  c.proto_dim = 3;
  c.input_size = 8;
  c.backbone = {{width, 3, 2, 1}, {4, 3, 2, 1}};
  return c;
}

}  // namespace

TEST_SUITE("patch ids") {
  TEST_CASE("encoding is injective and decodable") {
    const PatchGrid g{3, 4};
    std::set<PatchId> seen;
    for (std::size_t n = 0; n < 5; ++n)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
          const auto id = g.encode(n, i, j);
          CHECK(id == n * 12 + i * 4 + j);
          CHECK(seen.insert(id).second);
          const auto d = g.decode(id);
          CHECK(d.image == n);
          CHECK(d.i == i);
          CHECK(d.j == j);
        }
  }
}

TEST_SUITE("jaccard") {
  TEST_CASE("examples") {
    CHECK(jaccard({1, 2}, {2, 3}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(jaccard({}, {}) == 1.0);
    CHECK(jaccard({1}, {}) == 0.0);
    CHECK(jaccard({4, 5}, {4, 5}) == 1.0);
  }

  TEST_CASE("matches a set-based oracle") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
      std::set<PatchId> a, b;
      for (int k = 0; k < 6; ++k) {
        if (rng.uniform() < 0.5) a.insert(static_cast<PatchId>(rng.uniform_int(0, 9)));
        if (rng.uniform() < 0.5) b.insert(static_cast<PatchId>(rng.uniform_int(0, 9)));
      }
      const PatchIdSet va(a.begin(), a.end()), vb(b.begin(), b.end());
      CHECK(jaccard(va, vb) == doctest::Approx(oracle::jaccard(a, b)).epsilon(1e-15));
      CHECK(jaccard(va, vb) == jaccard(vb, va));
    }
  }

  TEST_CASE("score matrix") {
    const PrototypeIdLists t{{1, 2}, {7}};
    const PrototypeIdLists s{{2, 3}, {8}};
    const auto mat = modified_jaccard_matrix(t, s);
    CHECK(mat[0][0] == doctest::Approx(1.0 / 3.0));
    CHECK(mat[0][1] == 0.0);
    CHECK(mat[1][1] == 0.0);
    const auto self = modified_jaccard_matrix(t, t);
    CHECK(self[0][0] == 1.0);
    CHECK(self[1][1] == 1.0);
  }
}

TEST_SUITE("hungarian") {
  TEST_CASE("agrees with brute force on random 6x6 matrices") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      const auto s = random_square(rng, 6);
      for (bool maximize : {true, false}) {
        const auto a = hungarian(s, maximize);
        CHECK(a.total == doctest::Approx(oracle::best_assignment(s, maximize)).epsilon(1e-12));
        std::vector<std::size_t> cols = a.columns;
        std::sort(cols.begin(), cols.end());
        for (std::size_t k = 0; k < 6; ++k) CHECK(cols[k] == k);
        double sum = 0.0;
        for (std::size_t r = 0; r < 6; ++r) sum += s[r][a.columns[r]];
        CHECK(sum == doctest::Approx(a.total).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("sizes 1 to 7") {
    Rng rng(77);
    for (std::size_t n = 1; n <= 7; ++n) {
      const auto s = random_square(rng, n);
      CHECK(hungarian(s, true).total == doctest::Approx(oracle::best_assignment(s, true)).epsilon(1e-12));
    }
  }

  TEST_CASE("examples and errors") {
    const auto id = hungarian({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}, true);
    CHECK(id.total == 3.0);
    CHECK(id.columns == std::vector<std::size_t>{0, 1, 2});
    CHECK(hungarian({{0.7}}, true).total == doctest::Approx(0.7));
    CHECK(hungarian({}, true).total == 0.0);
    CHECK_THROWS_AS(hungarian({{1, 2}, {3}}, true), InputError);
    CHECK_THROWS_AS(hungarian({{1, NAN}, {3, 4}}, true), InputError);
    // All-equal scores: matching keeps the identity.
    CHECK(match_prototypes({{0.5, 0.5}, {0.5, 0.5}}).columns == std::vector<std::size_t>{0, 1});
  }
}

TEST_SUITE("profile metrics") {
  TEST_CASE("AAP counts distinct active patches") {
    // One image, three prototypes; two share patch 1.
    const auto p = make_profile(1, 3, {1, 1, 3}, {0.2, 0.4, 0.9});
    CHECK(aap(p, 0.0) == 0.0);
    CHECK(aap(p, 0.3) == 1.0);
    CHECK(aap(p, 0.5) == 1.0);
    CHECK(aap(p, 1.0) == 2.0);
    double prev = 0.0;
    for (double tau : {0.0, 0.1, 0.2, 0.3, 0.4, 0.6, 0.9, 2.0}) {
      CHECK(aap(p, tau) >= prev);
      prev = aap(p, tau);
    }
    const auto distinct = make_profile(1, 3, {0, 1, 2}, {0.1, 0.1, 0.1});
    CHECK(aap(distinct, 1.0) == 3.0);
  }

  TEST_CASE("AJS examples") {
    // Per image: teacher {a, b}, student {b, c} -> 1/3 on both images.
    const auto t = make_profile(2, 2, {0, 1, 4, 5}, {0.1, 0.1, 0.1, 0.1});
    const auto s = make_profile(2, 2, {1, 2, 5, 6}, {0.1, 0.1, 0.1, 0.1});
    CHECK(ajs(s, t, 1.0) == doctest::Approx(1.0 / 3.0));
    CHECK(ajs(t, s, 1.0) == ajs(s, t, 1.0));
    CHECK(ajs(t, t, 1.0) == 1.0);
    CHECK(ajs(s, t, 0.0) == 1.0);  // nothing active on either side
    const auto far = make_profile(2, 2, {2, 3, 6, 7}, {0.1, 0.1, 0.1, 0.1});
    CHECK(ajs(far, t, 1.0) == 0.0);
  }

  TEST_CASE("PMS recovers swapped prototypes") {
    const auto t = make_profile(2, 2, {0, 3, 5, 6}, {0.0, 0.0, 0.0, 0.0});
    const auto s = make_profile(2, 2, {3, 0, 6, 5}, {0.0, 0.0, 0.0, 0.0});
    const auto detail = pms_detail(s, t);
    CHECK(detail.score == 1.0);
    CHECK(detail.matching.columns == std::vector<std::size_t>{1, 0});
    CHECK(pms(t, t) == 1.0);
    CHECK(pms_detail(t, t).matching.columns == std::vector<std::size_t>{0, 1});
    const auto disjoint = make_profile(2, 2, {1, 2, 4, 7}, {0.0, 0.0, 0.0, 0.0});
    CHECK(pms(disjoint, t) == 0.0);
  }

  TEST_CASE("PMS ignores a common relabelling of prototypes") {
    Rng rng(5);
    std::vector<PatchId> a, b;
    for (std::size_t n = 0; n < 6; ++n)
      for (std::size_t p = 0; p < 4; ++p) {
        a.push_back(n * 4 + static_cast<PatchId>(rng.uniform_int(0, 3)));
        b.push_back(n * 4 + static_cast<PatchId>(rng.uniform_int(0, 3)));
      }
    const std::vector<double> dist(24, 0.1);
    const std::size_t perm[4] = {2, 0, 3, 1};
    std::vector<PatchId> pa(24), pb(24);
    for (std::size_t n = 0; n < 6; ++n)
      for (std::size_t p = 0; p < 4; ++p) {
        pa[n * 4 + p] = a[n * 4 + perm[p]];
        pb[n * 4 + p] = b[n * 4 + perm[p]];
      }
    const double base = pms(make_profile(6, 4, b, dist), make_profile(6, 4, a, dist));
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
    CHECK(pms(make_profile(6, 4, pb, dist), make_profile(6, 4, pa, dist)) == doctest::Approx(base).epsilon(1e-14));
  }

  TEST_CASE("top-1 in percent") {
    auto p = make_profile(4, 1, {0, 4, 8, 12}, {0, 0, 0, 0});
    p.predictions = {0, 1, 1, 0};
    CHECK(top1(p, {0, 1, 0, 0}) == 75.0);
  }
}

TEST_SUITE("model metrics") {
  TEST_CASE("active ids, AAP and id lists match exhaustive oracles") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto model = init_model(small_config(3, 1 + static_cast<int>(seed % 2)), seed);
      const auto data = random_dataset(3, 8, 100 + seed);
      const auto feats = dataset_features(model, data);
      const oracle::Vec protos(model.prototypes().values().begin(), model.prototypes().values().end());
      const std::size_t m = model.num_prototypes(), H = 2, d = 3;
      for (double tau : {0.0, 0.05, 0.2, 0.5, 2.0}) {
        double total = 0.0;
        for (std::size_t n = 0; n < 3; ++n) {
          const auto mask = oracle::active_mask(feats[n], H, H, d, protos, m, tau);
          PatchIdSet expect;
          for (std::size_t c = 0; c < H * H; ++c)
            if (mask[c]) expect.push_back(n * H * H + c);
          CHECK(active_patch_ids(model, data.image(n), n, tau) == expect);
          total += static_cast<double>(expect.size());
        }
        CHECK(aap(model, data, tau) == doctest::Approx(total / 3.0).epsilon(1e-15));
      }
      const auto lists = prototype_id_lists(model, data);
      REQUIRE(lists.size() == m);
      for (std::size_t p = 0; p < m; ++p) {
        std::set<PatchId> expect;
        for (std::size_t n = 0; n < 3; ++n) expect.insert(n * H * H + oracle::first_nearest(feats[n], H, H, d, protos, p));
        CHECK(lists[p] == PatchIdSet(expect.begin(), expect.end()));
      }
    }
  }

  TEST_CASE("self comparison and purity") {
    const auto model = init_model(small_config(4, 2), 3);
    const auto other = init_model(small_config(5, 2), 4);
    const auto data = random_dataset(5, 8, 9);
    for (double tau : {0.1, 0.3, 1.0}) CHECK(ajs(model, model, data, tau) == 1.0);
    CHECK(pms(model, model, data) == 1.0);
    const double a = ajs(other, model, data, 0.5), b = ajs(other, model, data, 0.5);
    CHECK(a == b);
    CHECK(pms(other, model, data) == pms(other, model, data));
    CHECK(aap(model, data, 0.0) == 0.0);

    const auto fewer = init_model(small_config(4, 1), 5);
    CHECK_THROWS_AS(pms(fewer, model, data), ConfigError);
    const Dataset empty(Tensor::zeros({0, 1, 8, 8}), {}, "test", data.spec(), 0);
    CHECK_THROWS_AS(aap(model, empty, 1.0), DataError);
  }

  TEST_CASE("a projected prototype is active at its source patch") {
    auto model = init_model(small_config(4, 2), 6);
    const auto data = random_dataset(4, 8, 10);
    const auto records = model.project_prototypes(data);
    const auto lists = prototype_id_lists(model, data);
    for (std::size_t p = 0; p < records.size(); ++p) {
      const PatchId site = records[p].image_index * 4 + records[p].i * 2 + records[p].j;
      const auto ids = active_patch_ids(model, data.image(records[p].image_index), records[p].image_index, 1e-9);
      CHECK(std::find(ids.begin(), ids.end(), site) != ids.end());
      CHECK(std::find(lists[p].begin(), lists[p].end(), site) != lists[p].end());
    }
  }
}

TEST_SUITE("activation dumps") {
  TEST_CASE("dump metrics equal profile metrics and survive JSON") {
    const auto t = init_model(small_config(4, 2), 11);
    const auto s = init_model(small_config(3, 2), 12);
    const auto data = random_dataset(6, 8, 13);
    const auto pt = profile_model(t, data), ps = profile_model(s, data);
    const std::vector<double> taus{0.1, 0.5, 1.0};
    const auto dt = dump_from_json(to_json(make_dump(pt, "teacher", taus, data.labels())));
    const auto ds = dump_from_json(to_json(make_dump(ps, "student", taus, data.labels())));
    CHECK(canonical_dump(to_json(dt)) == canonical_dump(to_json(make_dump(pt, "teacher", taus, data.labels()))));
    for (double tau : taus) {
      CHECK(aap(dt, tau) == aap(pt, tau));
      CHECK(ajs(ds, dt, tau) == ajs(ps, pt, tau));
    }
    CHECK(pms(ds, dt) == pms(ps, pt));
    const auto report = evaluate(ds, dt, 0.5);
    CHECK(report.top1_student == top1(ps, data.labels()));
    CHECK_THROWS_AS(aap(dt, 0.25), UsageError);

    auto doc = to_json(make_dump(pt, "teacher", taus));
    doc["argmin_ids"][0].erase(0);
    CHECK_THROWS_AS(dump_from_json(doc), ValidationError);
  }
}
