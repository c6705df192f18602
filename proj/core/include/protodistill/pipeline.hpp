#pragma once

#include <cstdint>
#include <vector>

#include "protodistill/distill.hpp"

namespace protodistill {

// Fresh model whose parameters depend only on (config, seed).
PrototypeModel init_model(const ModelConfig& config, std::uint64_t seed);

struct TeacherRecipe {
  TrainConfig train;
  ModelLossWeights weights;
  DecisionTuneConfig tune;
};

struct StudentRecipe {
  DistillConfig distill;
  TrainConfig train;
  DecisionTuneConfig tune;
};

struct PipelineResult {
  std::vector<EpochStats> history;
  std::vector<ProjectionRecord> projection;
  std::vector<double> tune_history;
};

// Train on the model loss, project, then tune the decision layer.
// With zero epochs the model is left untouched.
PipelineResult train_teacher(PrototypeModel& model, const Dataset& train_set, const TeacherRecipe& recipe,
                             std::uint64_t seed);

// Distill, project, then tune the decision layer unless it is reused from
// the teacher. With zero epochs the student is left untouched.
PipelineResult distill_student(const PrototypeModel& teacher, PrototypeModel& student, const Dataset& train_set,
                               const StudentRecipe& recipe, std::uint64_t seed);

}  // namespace protodistill
