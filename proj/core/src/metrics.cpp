#include "protodistill/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "protodistill/distill.hpp"
#include "protodistill/errors.hpp"

namespace protodistill {

PatchId PatchGrid::encode(std::size_t image, std::size_t i, std::size_t j) const {
  if (i >= height || j >= width) throw DimensionError("patch coordinate outside the grid");
  return static_cast<PatchId>(image) * (height * width) + i * width + j;
}

PatchGrid::Decoded PatchGrid::decode(PatchId id) const {
  const std::size_t hw = height * width;
  const auto rest = static_cast<std::size_t>(id % hw);
  return {static_cast<std::size_t>(id / hw), rest / width, rest % width};
}

PatchIdSet ActivationProfile::active_ids(std::size_t image, double tau) const {
  if (image >= num_images) throw DimensionError("image index out of range");
  PatchIdSet out;
  for (std::size_t p = 0; p < num_prototypes; ++p) {
    if (min_distances[image * num_prototypes + p] <= tau) out.push_back(argmin_ids[image * num_prototypes + p]);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

ActivationProfile profile_model(const PrototypeModel& model, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) throw DataError("metrics require a non-empty dataset");
  const auto& cfg = model.config();
  ActivationProfile out;
  out.grid = {static_cast<std::size_t>(cfg.feature_size()), static_cast<std::size_t>(cfg.feature_size())};
  out.num_images = data.size();
  out.num_prototypes = model.num_prototypes();
  out.depth = static_cast<std::size_t>(cfg.proto_dim);
  out.predictions = predict(model, data, batch_size);
  const auto feats = dataset_features(model, data, batch_size);
  const auto protos = model.prototypes().values();
  for (std::size_t n = 0; n < feats.size(); ++n) {
    for (const auto& match : nearest_patches(feats[n], out.grid.height, out.grid.width, out.depth, protos)) {
      out.argmin_ids.push_back(out.grid.encode(n, match.i, match.j));
      out.min_distances.push_back(match.distance);
    }
  }
  return out;
}

PatchIdSet active_patch_ids(const PrototypeModel& model, const Tensor& image, std::size_t image_index, double tau) {
  NoGradGuard guard;
  const auto f = model.forward_image(image);
  const auto mask = active_mask(f.fmap, tau, model.prototypes());
  const PatchGrid grid{mask.height, mask.width};
  PatchIdSet out;
  for (std::size_t i = 0; i < mask.height; ++i)
    for (std::size_t j = 0; j < mask.width; ++j) {
      if (mask.at(i, j)) out.push_back(grid.encode(image_index, i, j));
    }
  return out;
}

double aap(const PrototypeModel& model, const Dataset& data, double tau) { return aap(profile_model(model, data), tau); }

double ajs(const PrototypeModel& student, const PrototypeModel& teacher, const Dataset& data, double tau) {
  if (student.config().feature_size() != teacher.config().feature_size()) {
    throw ConfigError("AJS requires teacher and student feature maps of equal size");
  }
  return ajs(profile_model(student, data), profile_model(teacher, data), tau);
}

PrototypeIdLists prototype_id_lists(const PrototypeModel& model, const Dataset& data) {
  return prototype_id_lists(profile_model(model, data));
}

double pms(const PrototypeModel& student, const PrototypeModel& teacher, const Dataset& data) {
  if (student.num_prototypes() != teacher.num_prototypes()) {
    throw ConfigError("PMS requires teacher and student with the same number of prototypes");
  }
  return pms(profile_model(student, data), profile_model(teacher, data));
}

double aap(const ActivationProfile& profile, double tau) {
  if (profile.num_images == 0) throw DataError("AAP of an empty dataset");
  double total = 0.0;
  for (std::size_t n = 0; n < profile.num_images; ++n) total += static_cast<double>(profile.active_ids(n, tau).size());
  return total / static_cast<double>(profile.num_images);
}

double jaccard(const PatchIdSet& a, const PatchIdSet& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++common;
      ++ia;
      ++ib;
    }
  }
  const std::size_t uni = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(uni);
}

double ajs(const ActivationProfile& student, const ActivationProfile& teacher, double tau) {
  if (!(student.grid == teacher.grid)) throw ConfigError("AJS requires teacher and student feature maps of equal size");
  if (student.num_images != teacher.num_images) throw ConfigError("AJS requires profiles over the same dataset");
  if (student.num_images == 0) throw DataError("AJS of an empty dataset");
  double total = 0.0;
  for (std::size_t n = 0; n < student.num_images; ++n) total += jaccard(student.active_ids(n, tau), teacher.active_ids(n, tau));
  return total / static_cast<double>(student.num_images);
}

PrototypeIdLists prototype_id_lists(const ActivationProfile& profile) {
  PrototypeIdLists lists(profile.num_prototypes);
  for (std::size_t n = 0; n < profile.num_images; ++n)
    for (std::size_t p = 0; p < profile.num_prototypes; ++p) lists[p].push_back(profile.argmin_ids[n * profile.num_prototypes + p]);
  // Ids embed the image index, so each list is already increasing.
  for (auto& q : lists) q.erase(std::unique(q.begin(), q.end()), q.end());
  return lists;
}

std::vector<std::vector<double>> modified_jaccard_matrix(const PrototypeIdLists& teacher,
                                                         const PrototypeIdLists& student) {
  std::vector<std::vector<double>> out(teacher.size(), std::vector<double>(student.size()));
  for (std::size_t a = 0; a < teacher.size(); ++a)
    for (std::size_t b = 0; b < student.size(); ++b) out[a][b] = jaccard(teacher[a], student[b]);
  return out;
}

Assignment hungarian(const std::vector<std::vector<double>>& scores, bool maximize) {
  const std::size_t n = scores.size();
  for (const auto& row : scores) {
    if (row.size() != n) throw InputError("assignment matrix must be square");
    for (double v : row) {
      if (!std::isfinite(v)) throw InputError("assignment matrix has a non-finite entry");
    }
  }
  Assignment out;
  if (n == 0) return out;

  // 1-based potentials formulation; column 0 is a virtual start.
  const double sign = maximize ? -1.0 : 1.0;
  auto cost = [&](std::size_t r, std::size_t c) { return sign * scores[r - 1][c - 1]; };
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> row_of(n + 1, 0), way(n + 1, 0);
  for (std::size_t r = 1; r <= n; ++r) {
    row_of[0] = r;
    std::size_t col = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[col] = true;
      const std::size_t r0 = row_of[col];
      double delta = inf;
      std::size_t next = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double reduced = cost(r0, c) - u[r0] - v[c];
        if (reduced < minv[c]) {
          minv[c] = reduced;
          way[c] = col;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          next = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[row_of[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col = next;
    } while (row_of[col] != 0);
    do {
      const std::size_t prev = way[col];
      row_of[col] = row_of[prev];
      col = prev;
    } while (col != 0);
  }
  out.columns.assign(n, 0);
  for (std::size_t c = 1; c <= n; ++c) out.columns[row_of[c] - 1] = c - 1;
  for (std::size_t r = 0; r < n; ++r) out.total += scores[r][out.columns[r]];
  return out;
}

Assignment match_prototypes(const std::vector<std::vector<double>>& scores) {
  Assignment best = hungarian(scores, true);
  Assignment identity;
  identity.columns.resize(scores.size());
  std::iota(identity.columns.begin(), identity.columns.end(), 0);
  for (std::size_t r = 0; r < scores.size(); ++r) identity.total += scores[r][r];
  return identity.total >= best.total ? identity : best;
}

PmsResult pms_detail(const ActivationProfile& student, const ActivationProfile& teacher) {
  if (student.num_prototypes != teacher.num_prototypes) {
    throw ConfigError("PMS requires teacher and student with the same number of prototypes");
  }
  if (student.num_images != teacher.num_images || !(student.grid == teacher.grid)) {
    throw ConfigError("PMS requires profiles over the same dataset and patch grid");
  }
  if (teacher.num_prototypes == 0) throw DataError("PMS without prototypes");
  PmsResult out;
  out.scores = modified_jaccard_matrix(prototype_id_lists(teacher), prototype_id_lists(student));
  out.matching = match_prototypes(out.scores);
  out.score = out.matching.total / static_cast<double>(teacher.num_prototypes);
  return out;
}

double pms(const ActivationProfile& student, const ActivationProfile& teacher) {
  return pms_detail(student, teacher).score;
}

double top1(const ActivationProfile& profile, const std::vector<int>& labels) {
  if (labels.size() != profile.predictions.size() || labels.empty()) {
    throw DataError("top-1 requires one prediction per label");
  }
  std::size_t correct = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) correct += profile.predictions[n] == labels[n] ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

MetricsReport evaluate(const ActivationProfile& student, const ActivationProfile& teacher,
                       const std::vector<int>& labels, double tau_test) {
  MetricsReport r;
  r.tau_test = tau_test;
  r.aap_teacher = aap(teacher, tau_test);
  r.aap_student = aap(student, tau_test);
  r.ajs = ajs(student, teacher, tau_test);
  r.pms = pms(student, teacher);
  r.top1_teacher = top1(teacher, labels);
  r.top1_student = top1(student, labels);
  return r;
}

}  // namespace protodistill
