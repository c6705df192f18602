#include "protodistill/pipeline.hpp"

namespace protodistill {

PrototypeModel init_model(const ModelConfig& config, std::uint64_t seed) {
  Rng rng = Rng(seed).split(0x696e6974ULL);
  return PrototypeModel(config, rng);
}

PipelineResult train_teacher(PrototypeModel& model, const Dataset& train_set, const TeacherRecipe& recipe,
                             std::uint64_t seed) {
  PipelineResult out;
  out.history = train_model(model, train_set, recipe.train, recipe.weights, seed);
  if (recipe.train.epochs == 0) return out;
  out.projection = model.project_prototypes(train_set);
  out.tune_history = tune_decision(model, train_set, recipe.tune);
  return out;
}

PipelineResult distill_student(const PrototypeModel& teacher, PrototypeModel& student, const Dataset& train_set,
                               const StudentRecipe& recipe, std::uint64_t seed) {
  PipelineResult out;
  Distiller distiller(teacher, student, train_set, recipe.distill, recipe.train, seed);
  out.history = distiller.run();
  if (recipe.train.epochs == 0) return out;
  out.projection = student.project_prototypes(train_set);
  if (!recipe.distill.reuse_decision_module) out.tune_history = tune_decision(student, train_set, recipe.tune);
  return out;
}

}  // namespace protodistill
