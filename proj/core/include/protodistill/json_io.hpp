#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "protodistill/dataset.hpp"
#include "protodistill/model.hpp"

namespace protodistill {

using Json = nlohmann::json;

// Canonical text form: keys sorted, no whitespace, every floating-point
// number printed with 17 significant digits, trailing newline. Two equal
// documents always serialize to identical bytes.
std::string canonical_dump(const Json& doc);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& doc);
// Throws FileError when missing, DataError when the text is not JSON.
Json read_json_file(const std::filesystem::path& path);

Json to_json(const SyntheticSpec& spec);
SyntheticSpec spec_from_json(const Json& doc);

Json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const Json& doc);

Json to_json(const ProjectionRecord& record);
ProjectionRecord projection_record_from_json(const Json& doc);

// Nested row-major lists following the tensor's shape.
Json tensor_to_nested(const Tensor& t);
// Flattens nested lists; throws DataError when the nesting disagrees with `shape`.
std::vector<double> nested_to_values(const Json& doc, const Shape& shape);

}  // namespace protodistill
