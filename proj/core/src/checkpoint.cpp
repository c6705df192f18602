#include "protodistill/checkpoint.hpp"

#include "protodistill/errors.hpp"

namespace protodistill {

Json checkpoint_to_json(const PrototypeModel& model, const std::string& model_id, const Json& extra) {
  Json params = Json::object();
  for (const auto& [name, tensor] : model.named_parameters()) {
    params[name] = {{"shape", tensor.shape()}, {"values", tensor_to_nested(tensor)}};
  }
  Json projection = nullptr;
  if (model.projection()) {
    projection = Json::array();
    for (const auto& r : *model.projection()) projection.push_back(to_json(r));
  }
  Json doc{{"format_version", kCheckpointFormatVersion},
           {"model_id", model_id},
           {"config", to_json(model.config())},
           {"parameters", params},
           {"class_of_prototype", model.class_of_prototype()},
           {"projection", projection}};
  if (!extra.empty()) doc["meta"] = extra;
  return doc;
}

PrototypeModel checkpoint_from_json(const Json& doc) {
  if (!doc.is_object() || !doc.contains("format_version")) throw DataError("not a checkpoint document");
  if (doc["format_version"] != kCheckpointFormatVersion) {
    throw DataError("unsupported checkpoint format_version " + doc["format_version"].dump());
  }
  try {
    ModelConfig config = model_config_from_json(doc.at("config"));
    // Parameter order follows the architecture, not the (sorted) JSON keys.
    Rng scratch(0);
    const PrototypeModel layout(config, scratch);
    std::vector<std::pair<std::string, Tensor>> params;
    const Json& stored = doc.at("parameters");
    for (const auto& [name, reference] : layout.named_parameters()) {
      if (!stored.contains(name)) throw DataError("checkpoint lacks parameter '" + name + "'");
      const Json& entry = stored.at(name);
      const Shape shape = entry.at("shape").get<Shape>();
      if (shape != reference.shape()) throw DataError("parameter '" + name + "' has unexpected shape");
      params.emplace_back(name, Tensor(shape, nested_to_values(entry.at("values"), shape), true));
    }
    std::optional<std::vector<ProjectionRecord>> projection;
    if (doc.contains("projection") && !doc["projection"].is_null()) {
      projection.emplace();
      for (const auto& r : doc["projection"]) projection->push_back(projection_record_from_json(r));
    }
    return PrototypeModel::from_parts(std::move(config), std::move(params),
                                      doc.at("class_of_prototype").get<std::vector<int>>(), std::move(projection));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const PrototypeModel& model, const std::filesystem::path& path, const std::string& model_id,
                     const Json& extra) {
  write_json_file(path, checkpoint_to_json(model, model_id, extra));
}

PrototypeModel load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FileError("checkpoint '" + path.string() + "' does not exist");
  return checkpoint_from_json(read_json_file(path));
}

std::string model_hash(const PrototypeModel& model) {
  return sha256_hex(canonical_dump(checkpoint_to_json(model, "hash")));
}

}  // namespace protodistill
