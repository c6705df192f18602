#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "protodistill/dataset.hpp"
#include "protodistill/model.hpp"

namespace protodistill {

// Unique identifier of patch (i, j) of image n: n*(H*W) + i*W + j.
using PatchId = std::uint64_t;

struct PatchGrid {
  std::size_t height = 0;
  std::size_t width = 0;

  PatchId encode(std::size_t image, std::size_t i, std::size_t j) const;
  struct Decoded {
    std::size_t image, i, j;
  };
  Decoded decode(PatchId id) const;
  bool operator==(const PatchGrid&) const = default;
};

// Sorted, duplicate-free set of patch ids.
using PatchIdSet = std::vector<PatchId>;

// Per-prototype id sets accumulated over a dataset (q_1 ... q_m).
using PrototypeIdLists = std::vector<PatchIdSet>;

// Everything the metrics need from one model on one dataset: for every image
// and prototype, the nearest patch and its Euclidean distance, plus the
// predicted class. Building it is the only step that touches the model.
struct ActivationProfile {
  PatchGrid grid;
  std::size_t num_images = 0;
  std::size_t num_prototypes = 0;
  std::size_t depth = 0;
  std::vector<PatchId> argmin_ids;      // [image * m + p]
  std::vector<double> min_distances;    // [image * m + p]
  std::vector<int> predictions;         // [image]

  // Ids of patches active at tau on one image.
  PatchIdSet active_ids(std::size_t image, double tau) const;
};

ActivationProfile profile_model(const PrototypeModel& model, const Dataset& data, std::size_t batch_size = 64);

// --- model-level metrics -------------------------------------------------

PatchIdSet active_patch_ids(const PrototypeModel& model, const Tensor& image, std::size_t image_index, double tau);
double aap(const PrototypeModel& model, const Dataset& data, double tau);
double ajs(const PrototypeModel& student, const PrototypeModel& teacher, const Dataset& data, double tau);
PrototypeIdLists prototype_id_lists(const PrototypeModel& model, const Dataset& data);
double pms(const PrototypeModel& student, const PrototypeModel& teacher, const Dataset& data);

// --- profile-level metrics -------------------------------------------------

// Mean popcount of active patches per image.
double aap(const ActivationProfile& profile, double tau);
// Mean per-image Jaccard of active id sets; two empty sets count as 1.
double ajs(const ActivationProfile& student, const ActivationProfile& teacher, double tau);
PrototypeIdLists prototype_id_lists(const ActivationProfile& profile);
double pms(const ActivationProfile& student, const ActivationProfile& teacher);
// Percentage of predictions equal to the labels.
double top1(const ActivationProfile& profile, const std::vector<int>& labels);

// Jaccard similarity |a n b| / |a u b|; 1 when both are empty.
double jaccard(const PatchIdSet& a, const PatchIdSet& b);

// Stand-in for the prototype matching similarity: entry (a, b) is the
// plain Jaccard similarity of teacher list a and student list b.
std::vector<std::vector<double>> modified_jaccard_matrix(const PrototypeIdLists& teacher,
                                                         const PrototypeIdLists& student);

struct Assignment {
  std::vector<std::size_t> columns;  // row r is matched to column columns[r]
  double total = 0.0;                // sum of the selected entries
};

// Optimal square assignment (Kuhn-Munkres with potentials, O(n^3)).
// Maximization runs the minimizer on the negated matrix. Throws InputError
// for non-square or non-finite input.
Assignment hungarian(const std::vector<std::vector<double>>& scores, bool maximize);

// Hungarian maximum matching of teacher rows to student columns, preferring
// the identity when it is already optimal.
Assignment match_prototypes(const std::vector<std::vector<double>>& scores);

struct PmsResult {
  double score = 0.0;
  Assignment matching;
  std::vector<std::vector<double>> scores;
};
PmsResult pms_detail(const ActivationProfile& student, const ActivationProfile& teacher);

struct MetricsReport {
  double tau_test = 0.0;
  double aap_teacher = 0.0;
  double aap_student = 0.0;
  double ajs = 0.0;
  double pms = 0.0;
  double top1_teacher = 0.0;  // percent
  double top1_student = 0.0;  // percent
};

MetricsReport evaluate(const ActivationProfile& student, const ActivationProfile& teacher,
                       const std::vector<int>& labels, double tau_test);

}  // namespace protodistill
