#pragma once

#include <string>
#include <vector>

#include "protodistill/json_io.hpp"
#include "protodistill/metrics.hpp"

namespace protodistill {

// Interchange file that lets metrics be computed without model access.
struct ActivationDump {
  std::string model_id;
  PatchGrid grid;
  std::size_t depth = 0;
  std::size_t num_prototypes = 0;
  std::vector<double> taus;
  std::vector<std::vector<PatchId>> argmin_ids;     // [image][prototype]
  std::vector<std::vector<PatchIdSet>> active_ids;  // [image][tau index]
  std::vector<int> predictions;                     // optional, [image]
  std::vector<int> labels;                          // optional, [image]

  std::size_t num_images() const noexcept { return argmin_ids.size(); }
  // Index of `tau` in `taus`; throws UsageError when it was not recorded.
  std::size_t tau_index(double tau) const;
};

ActivationDump make_dump(const ActivationProfile& profile, const std::string& model_id, std::vector<double> taus,
                         std::vector<int> labels = {});

Json to_json(const ActivationDump& dump);
// Throws ValidationError on inconsistent content.
ActivationDump dump_from_json(const Json& doc);

double aap(const ActivationDump& dump, double tau);
double ajs(const ActivationDump& student, const ActivationDump& teacher, double tau);
PrototypeIdLists prototype_id_lists(const ActivationDump& dump);
double pms(const ActivationDump& student, const ActivationDump& teacher);

// Top-1 fields are left at 0 when the dumps carry no predictions/labels.
MetricsReport evaluate(const ActivationDump& student, const ActivationDump& teacher, double tau_test);

}  // namespace protodistill
