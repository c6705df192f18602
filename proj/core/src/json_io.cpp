#include "protodistill/json_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "protodistill/errors.hpp"

namespace protodistill {

namespace {

void dump_into(const Json& doc, std::string& out) {
  switch (doc.type()) {
    case Json::value_t::null:
      out += "null";
      break;
    case Json::value_t::boolean:
      out += doc.get<bool>() ? "true" : "false";
      break;
    case Json::value_t::number_integer:
      out += std::to_string(doc.get<std::int64_t>());
      break;
    case Json::value_t::number_unsigned:
      out += std::to_string(doc.get<std::uint64_t>());
      break;
    case Json::value_t::number_float: {
      const double v = doc.get<double>();
      if (!std::isfinite(v)) throw NumericError("cannot serialize a non-finite number");
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out += buf;
      break;
    }
    case Json::value_t::string:
      out += doc.dump();
      break;
    case Json::value_t::array: {
      out += '[';
      bool first = true;
      for (const auto& item : doc) {
        if (!first) out += ',';
        first = false;
        dump_into(item, out);
      }
      out += ']';
      break;
    }
    case Json::value_t::object: {
      // nlohmann::json objects iterate in sorted key order.
      out += '{';
      bool first = true;
      for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!first) out += ',';
        first = false;
        out += Json(it.key()).dump();
        out += ':';
        dump_into(it.value(), out);
      }
      out += '}';
      break;
    }
    default:
      throw UsageError("unsupported JSON value in canonical dump");
  }
}

template <typename T>
T field(const Json& doc, const char* key) {
  if (!doc.is_object() || !doc.contains(key)) throw DataError(std::string("missing field '") + key + "'");
  try {
    return doc.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
T field_or(const Json& doc, const char* key, T fallback) {
  if (!doc.is_object() || !doc.contains(key)) return fallback;
  return field<T>(doc, key);
}

}  // namespace

std::string canonical_dump(const Json& doc) {
  std::string out;
  dump_into(doc, out);
  out += '\n';
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FileError("cannot open '" + path.string() + "' for writing");
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw FileError("failed writing '" + path.string() + "'");
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_json_file(const std::filesystem::path& path, const Json& doc) { write_text_file(path, canonical_dump(doc)); }

Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

Json to_json(const SyntheticSpec& s) {
  return Json{{"num_classes", s.num_classes},
              {"train_per_class", s.train_per_class},
              {"test_per_class", s.test_per_class},
              {"image_size", s.image_size},
              {"channels", s.channels},
              {"motifs_per_class", s.motifs_per_class},
              {"motif_size", s.motif_size},
              {"palette_levels", s.palette_levels},
              {"background_seed", s.background_seed},
              {"jitter", s.jitter},
              {"noise_sigma", s.noise_sigma},
              {"shuffle_motifs", s.shuffle_motifs}};
}

SyntheticSpec spec_from_json(const Json& doc) {
  SyntheticSpec s;
  s.num_classes = field<int>(doc, "num_classes");
  s.train_per_class = field<int>(doc, "train_per_class");
  s.test_per_class = field<int>(doc, "test_per_class");
  s.image_size = field<int>(doc, "image_size");
  s.channels = field<int>(doc, "channels");
  s.motifs_per_class = field<int>(doc, "motifs_per_class");
  s.motif_size = field<int>(doc, "motif_size");
  s.palette_levels = field<int>(doc, "palette_levels");
  s.background_seed = field<std::uint64_t>(doc, "background_seed");
  s.jitter = field<int>(doc, "jitter");
  s.noise_sigma = field<double>(doc, "noise_sigma");
  s.shuffle_motifs = field_or<bool>(doc, "shuffle_motifs", false);
  return s;
}

Json to_json(const ModelConfig& c) {
  Json layers = Json::array();
  for (const auto& l : c.backbone) {
    layers.push_back({{"out_channels", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride}, {"pad", l.pad}});
  }
  return Json{{"num_classes", c.num_classes},
              {"prototypes_per_class", c.prototypes_per_class},
              {"num_prototypes", c.num_prototypes()},
              {"proto_dim", c.proto_dim},
              {"input_size", c.input_size},
              {"input_channels", c.input_channels},
              {"feature_size", c.feature_size()},
              {"addon", "conv1x1-relu,conv1x1-sigmoid"},
              {"backbone", layers}};
}

ModelConfig model_config_from_json(const Json& doc) {
  ModelConfig c;
  c.num_classes = field<int>(doc, "num_classes");
  c.prototypes_per_class = field<int>(doc, "prototypes_per_class");
  c.proto_dim = field<int>(doc, "proto_dim");
  c.input_size = field<int>(doc, "input_size");
  c.input_channels = field<int>(doc, "input_channels");
  if (!doc.contains("backbone") || !doc["backbone"].is_array()) throw DataError("missing field 'backbone'");
  for (const auto& l : doc["backbone"]) {
    c.backbone.push_back(
        {field<int>(l, "out_channels"), field<int>(l, "kernel"), field<int>(l, "stride"), field<int>(l, "pad")});
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("stored model config is invalid: ") + e.what());
  }
  return c;
}

Json to_json(const ProjectionRecord& r) {
  return Json{{"image_index", r.image_index}, {"i", r.i}, {"j", r.j}, {"distance", r.distance}};
}

ProjectionRecord projection_record_from_json(const Json& doc) {
  return {field<std::size_t>(doc, "image_index"), field<std::size_t>(doc, "i"), field<std::size_t>(doc, "j"),
          field<double>(doc, "distance")};
}

namespace {

Json nest(std::span<const double> values, const Shape& shape, std::size_t axis, std::size_t& cursor) {
  if (axis == shape.size()) return Json(values[cursor++]);
  Json arr = Json::array();
  for (std::size_t i = 0; i < shape[axis]; ++i) arr.push_back(nest(values, shape, axis + 1, cursor));
  return arr;
}

void flatten(const Json& doc, const Shape& shape, std::size_t axis, std::vector<double>& out) {
  if (axis == shape.size()) {
    if (!doc.is_number()) throw DataError("tensor entry is not a number");
    out.push_back(doc.get<double>());
    return;
  }
  if (!doc.is_array() || doc.size() != shape[axis]) throw DataError("tensor nesting does not match its shape");
  for (const auto& item : doc) flatten(item, shape, axis + 1, out);
}

}  // namespace

Json tensor_to_nested(const Tensor& t) {
  std::size_t cursor = 0;
  return nest(t.values(), t.shape(), 0, cursor);
}

std::vector<double> nested_to_values(const Json& doc, const Shape& shape) {
  std::vector<double> out;
  out.reserve(numel_of(shape));
  flatten(doc, shape, 0, out);
  return out;
}

}  // namespace protodistill
