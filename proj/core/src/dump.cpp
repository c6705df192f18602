#include "protodistill/dump.hpp"

#include <algorithm>

#include "protodistill/errors.hpp"

namespace protodistill {

std::size_t ActivationDump::tau_index(double tau) const {
  const auto it = std::find(taus.begin(), taus.end(), tau);
  if (it == taus.end()) throw UsageError("tau " + std::to_string(tau) + " is not recorded in dump '" + model_id + "'");
  return static_cast<std::size_t>(it - taus.begin());
}

ActivationDump make_dump(const ActivationProfile& profile, const std::string& model_id, std::vector<double> taus,
                         std::vector<int> labels) {
  ActivationDump d;
  d.model_id = model_id;
  d.grid = profile.grid;
  d.depth = profile.depth;
  d.num_prototypes = profile.num_prototypes;
  d.taus = std::move(taus);
  d.predictions = profile.predictions;
  d.labels = std::move(labels);
  for (std::size_t n = 0; n < profile.num_images; ++n) {
    const auto first = profile.argmin_ids.begin() + static_cast<std::ptrdiff_t>(n * profile.num_prototypes);
    d.argmin_ids.emplace_back(first, first + static_cast<std::ptrdiff_t>(profile.num_prototypes));
    std::vector<PatchIdSet> per_tau;
    for (double tau : d.taus) per_tau.push_back(profile.active_ids(n, tau));
    d.active_ids.push_back(std::move(per_tau));
  }
  return d;
}

Json to_json(const ActivationDump& d) {
  return Json{{"format_version", 1},
              {"model_id", d.model_id},
              {"H", d.grid.height},
              {"W", d.grid.width},
              {"d", d.depth},
              {"m", d.num_prototypes},
              {"taus", d.taus},
              {"argmin_ids", d.argmin_ids},
              {"active_ids", d.active_ids},
              {"predictions", d.predictions},
              {"labels", d.labels}};
}

ActivationDump dump_from_json(const Json& doc) {
  ActivationDump d;
  try {
    d.model_id = doc.at("model_id").get<std::string>();
    d.grid = {doc.at("H").get<std::size_t>(), doc.at("W").get<std::size_t>()};
    d.depth = doc.at("d").get<std::size_t>();
    d.num_prototypes = doc.at("m").get<std::size_t>();
    d.taus = doc.at("taus").get<std::vector<double>>();
    d.argmin_ids = doc.at("argmin_ids").get<std::vector<std::vector<PatchId>>>();
    d.active_ids = doc.at("active_ids").get<std::vector<std::vector<PatchIdSet>>>();
    if (doc.contains("predictions")) d.predictions = doc["predictions"].get<std::vector<int>>();
    if (doc.contains("labels")) d.labels = doc["labels"].get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed activation dump: ") + e.what());
  }
  if (d.active_ids.size() != d.argmin_ids.size()) throw ValidationError("dump image counts disagree");
  const PatchId limit = static_cast<PatchId>(d.grid.height * d.grid.width);
  for (std::size_t n = 0; n < d.argmin_ids.size(); ++n) {
    if (d.argmin_ids[n].size() != d.num_prototypes) throw ValidationError("dump argmin row has the wrong length");
    if (d.active_ids[n].size() != d.taus.size()) throw ValidationError("dump active row has the wrong length");
    for (PatchId id : d.argmin_ids[n]) {
      if (id / limit != n) throw ValidationError("dump id does not belong to its image");
    }
    for (auto& set : d.active_ids[n]) {
      std::sort(set.begin(), set.end());
      set.erase(std::unique(set.begin(), set.end()), set.end());
    }
  }
  return d;
}

double aap(const ActivationDump& d, double tau) {
  if (d.num_images() == 0) throw DataError("AAP of an empty dump");
  const std::size_t k = d.tau_index(tau);
  double total = 0.0;
  for (const auto& row : d.active_ids) total += static_cast<double>(row[k].size());
  return total / static_cast<double>(d.num_images());
}

double ajs(const ActivationDump& student, const ActivationDump& teacher, double tau) {
  if (!(student.grid == teacher.grid)) throw ConfigError("AJS requires teacher and student feature maps of equal size");
  if (student.num_images() != teacher.num_images()) throw ConfigError("AJS requires dumps over the same dataset");
  if (student.num_images() == 0) throw DataError("AJS of an empty dump");
  const std::size_t ks = student.tau_index(tau);
  const std::size_t kt = teacher.tau_index(tau);
  double total = 0.0;
  for (std::size_t n = 0; n < student.num_images(); ++n) {
    total += jaccard(student.active_ids[n][ks], teacher.active_ids[n][kt]);
  }
  return total / static_cast<double>(student.num_images());
}

PrototypeIdLists prototype_id_lists(const ActivationDump& d) {
  PrototypeIdLists lists(d.num_prototypes);
  for (const auto& row : d.argmin_ids)
    for (std::size_t p = 0; p < d.num_prototypes; ++p) lists[p].push_back(row[p]);
  for (auto& q : lists) q.erase(std::unique(q.begin(), q.end()), q.end());
  return lists;
}

double pms(const ActivationDump& student, const ActivationDump& teacher) {
  if (student.num_prototypes != teacher.num_prototypes) {
    throw ConfigError("PMS requires teacher and student with the same number of prototypes");
  }
  if (student.num_images() != teacher.num_images() || !(student.grid == teacher.grid)) {
    throw ConfigError("PMS requires dumps over the same dataset and patch grid");
  }
  if (teacher.num_prototypes == 0) throw DataError("PMS without prototypes");
  const auto matching =
      match_prototypes(modified_jaccard_matrix(prototype_id_lists(teacher), prototype_id_lists(student)));
  return matching.total / static_cast<double>(teacher.num_prototypes);
}

MetricsReport evaluate(const ActivationDump& student, const ActivationDump& teacher, double tau_test) {
  MetricsReport r;
  r.tau_test = tau_test;
  r.aap_teacher = aap(teacher, tau_test);
  r.aap_student = aap(student, tau_test);
  r.ajs = ajs(student, teacher, tau_test);
  r.pms = pms(student, teacher);
  const auto pct = [](const std::vector<int>& pred, const std::vector<int>& labels) {
    if (pred.empty() || pred.size() != labels.size()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t n = 0; n < pred.size(); ++n) correct += pred[n] == labels[n] ? 1 : 0;
    return 100.0 * static_cast<double>(correct) / static_cast<double>(pred.size());
  };
  const auto& labels = !teacher.labels.empty() ? teacher.labels : student.labels;
  r.top1_teacher = pct(teacher.predictions, labels);
  r.top1_student = pct(student.predictions, labels);
  return r;
}

}  // namespace protodistill
