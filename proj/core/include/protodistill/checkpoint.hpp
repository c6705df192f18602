#pragma once

#include <filesystem>
#include <string>

#include "protodistill/json_io.hpp"
#include "protodistill/model.hpp"

namespace protodistill {

inline constexpr int kCheckpointFormatVersion = 1;

// {format_version, model_id, config, parameters{name: {shape, values}},
//  class_of_prototype, projection}. `extra` is merged in under "meta".
Json checkpoint_to_json(const PrototypeModel& model, const std::string& model_id, const Json& extra = Json::object());
PrototypeModel checkpoint_from_json(const Json& doc);

void save_checkpoint(const PrototypeModel& model, const std::filesystem::path& path, const std::string& model_id,
                     const Json& extra = Json::object());
PrototypeModel load_checkpoint(const std::filesystem::path& path);

// SHA-256 of the canonical checkpoint text (model_id "hash", no meta).
std::string model_hash(const PrototypeModel& model);

}  // namespace protodistill
