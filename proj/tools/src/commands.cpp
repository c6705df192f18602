#include "commands.hpp"

#include <cinttypes>
#include <cstdio>
#include <sstream>

#include "image_io.hpp"
#include "protodistill/checkpoint.hpp"
#include "protodistill/dump.hpp"
#include "protodistill/errors.hpp"
#include "protodistill/json_io.hpp"
#include "protodistill/metrics.hpp"

namespace protodistill::app {

namespace {

constexpr const char* kPmsNote =
    "PMS similarity matrix: plain Jaccard of per-prototype nearest-patch id sets (substitute definition)";

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string num(double v) { return fmt("%.17g", v); }

Json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr}, {"momentum", c.momentum}};
}

Json to_json(const ModelLossWeights& w) {
  return {{"cross_entropy", w.cross_entropy}, {"cluster", w.cluster}, {"separation", w.separation}};
}

Json to_json(const DecisionTuneConfig& c) {
  return {{"steps", c.steps}, {"lr", c.lr}, {"momentum", c.momentum}, {"l1", c.l1}};
}

Json to_json(const DistillConfig& c) {
  Json unused = Json::array();
  if (c.mode == DistillMode::baseline) unused = {"lambda_global", "lambda_ppc", "tau_train"};
  if (c.mode == DistillMode::hint) unused = {"lambda_global", "tau_train"};
  if (!c.use_model_loss) unused.push_back("model_loss");
  return {{"mode", to_string(c.mode)},
          {"tau_train", c.tau_train},
          {"tau_test", c.tau_test},
          {"lambda_global", c.lambda_global},
          {"lambda_ppc", c.lambda_ppc},
          {"reuse_decision_module", c.reuse_decision_module},
          {"use_model_loss", c.use_model_loss},
          {"normalize_ppc", c.normalize_ppc},
          {"distance", "euclidean"},
          {"model_loss", to_json(c.model_loss)},
          {"unused", unused}};
}

Json to_json(const EpochStats& s) {
  return {{"epoch", s.epoch},   {"steps", s.steps},
          {"total", s.total},   {"model", s.model},
          {"cross_entropy", s.cross_entropy}, {"cluster", s.cluster},
          {"separation", s.separation},       {"global", s.global},
          {"ppc", s.ppc},       {"train_accuracy", s.train_accuracy}};
}

Json history_json(const std::vector<EpochStats>& history) {
  Json out = Json::array();
  for (const auto& s : history) out.push_back(to_json(s));
  return out;
}

Json projection_json(const std::vector<ProjectionRecord>& records) {
  Json out = Json::array();
  for (const auto& r : records) out.push_back(protodistill::to_json(r));
  return out;
}

std::string loss_csv(const std::vector<EpochStats>& history) {
  std::ostringstream out;
  out << "epoch,total,model,cross_entropy,cluster,separation,global,ppc,train_accuracy\n";
  for (const auto& s : history) {
    out << s.epoch << ',' << num(s.total) << ',' << num(s.model) << ',' << num(s.cross_entropy) << ','
        << num(s.cluster) << ',' << num(s.separation) << ',' << num(s.global) << ',' << num(s.ppc) << ','
        << num(s.train_accuracy) << '\n';
  }
  return out.str();
}

void require_out(const fs::path& out) {
  if (out.empty()) throw UsageError("an output location is required");
}

std::uint64_t require_seed(const std::optional<std::uint64_t>& seed) {
  if (!seed) throw UsageError("--seed is mandatory for training commands");
  return *seed;
}

// Seed recorded in a checkpoint's meta block, null when absent.
Json checkpoint_seed(const fs::path& path) {
  const Json doc = read_json_file(path);
  if (doc.contains("meta") && doc["meta"].contains("seed")) return doc["meta"]["seed"];
  return nullptr;
}

void check_taus(const std::vector<double>& taus) {
  if (taus.empty()) throw UsageError("at least one tau is required");
  for (double t : taus) {
    if (!(t >= 0.0)) throw ConfigError("tau values must be non-negative");
  }
}

GrayImage image_of(const Dataset& data, std::size_t index) {
  return from_channel(data.pixels(index), data.image_size(), data.image_size());
}

std::vector<std::uint8_t> mask_bits(const ActivationProfile& profile, std::size_t image, double tau) {
  std::vector<std::uint8_t> bits(profile.grid.height * profile.grid.width, 0);
  for (PatchId id : profile.active_ids(image, tau)) {
    const auto d = profile.grid.decode(id);
    bits[d.i * profile.grid.width + d.j] = 1;
  }
  return bits;
}

const std::vector<ProjectionRecord>& require_projection(const PrototypeModel& model, const fs::path& path) {
  if (!model.projection()) throw UsageError("checkpoint " + path.string() + " has no projection report");
  return *model.projection();
}

Json rect_json(const PixelRect& r) { return {{"row0", r.row0}, {"col0", r.col0}, {"row1", r.row1}, {"col1", r.col1}}; }

std::string tag(std::size_t index, std::size_t width = 2) {
  std::string s = std::to_string(index);
  return std::string(s.size() < width ? width - s.size() : 0, '0') + s;
}

}  // namespace

fs::path split_prefix(const fs::path& data_dir, const std::string& split) {
  if (split != "train" && split != "test") throw ConfigError("split must be train or test, got " + split);
  return data_dir / split;
}

Dataset load_split(const fs::path& data_dir, const std::string& split) { return load(split_prefix(data_dir, split)); }

void cmd_gen_data(const GenDataArgs& args) {
  require_out(args.out);
  const auto pair = generate(args.spec, args.seed);
  fs::create_directories(args.out);
  save(pair.train, split_prefix(args.out, "train"));
  save(pair.test, split_prefix(args.out, "test"));
}

void cmd_train_teacher(const TrainTeacherArgs& args) {
  require_out(args.out);
  const std::uint64_t seed = require_seed(args.seed);
  args.model.validate();
  const Dataset train = load_split(args.data, "train");
  if (train.num_classes() != args.model.num_classes || train.image_size() != args.model.input_size ||
      train.channels() != args.model.input_channels) {
    throw ConfigError("model configuration does not match the dataset");
  }
  PrototypeModel model = init_model(args.model, seed);
  const auto result = train_teacher(model, train, args.recipe, seed);

  fs::create_directories(args.out);
  const fs::path ckpt = args.out / "teacher.json";
  save_checkpoint(model, ckpt, "teacher", {{"seed", seed}, {"role", "teacher"}});
  write_text_file(args.out / "train_log.csv", loss_csv(result.history));
  Json manifest = {{"command", "train-teacher"},
                   {"seed", seed},
                   {"data", args.data.string()},
                   {"model_config", protodistill::to_json(args.model)},
                   {"train_config", to_json(args.recipe.train)},
                   {"model_loss", to_json(args.recipe.weights)},
                   {"decision_tuning", to_json(args.recipe.tune)},
                   {"input_normalization", {{"centre", kInputCentre}, {"scale", kInputScale}}},
                   {"epochs", history_json(result.history)},
                   {"projection", projection_json(result.projection)},
                   {"decision_tuning_objective", result.tune_history},
                   {"checkpoint", ckpt.string()},
                   {"model_hash", model_hash(model)}};
  write_json_file(args.out / "manifest.json", manifest);
}

void cmd_distill(const DistillArgs& args) {
  require_out(args.out);
  const std::uint64_t seed = require_seed(args.seed);
  args.recipe.distill.validate();
  args.student.validate();
  const PrototypeModel teacher = load_checkpoint(args.teacher);
  check_compatible(teacher.config(), args.student);
  const Dataset train = load_split(args.data, "train");
  const std::string teacher_hash = model_hash(teacher);

  PrototypeModel student = init_model(args.student, seed);
  const auto result = distill_student(teacher, student, train, args.recipe, seed);
  if (model_hash(teacher) != teacher_hash) throw Error("teacher changed during distillation");

  fs::create_directories(args.out);
  const fs::path ckpt = args.out / "student.json";
  save_checkpoint(student, ckpt, "student",
                  {{"seed", seed}, {"role", "student"}, {"mode", to_string(args.recipe.distill.mode)},
                   {"teacher_hash", teacher_hash}});
  write_text_file(args.out / "loss_curve.csv", loss_csv(result.history));
  Json manifest = {{"command", "distill"},
                   {"seed", seed},
                   {"data", args.data.string()},
                   {"teacher", {{"path", args.teacher.string()}, {"hash", teacher_hash}}},
                   {"student_config", protodistill::to_json(args.student)},
                   {"distill_config", to_json(args.recipe.distill)},
                   {"train_config", to_json(args.recipe.train)},
                   {"decision_tuning", to_json(args.recipe.tune)},
                   {"decision_tuned", !args.recipe.distill.reuse_decision_module && args.recipe.train.epochs > 0},
                   {"epochs", history_json(result.history)},
                   {"projection", projection_json(result.projection)},
                   {"decision_tuning_objective", result.tune_history},
                   {"checkpoint", ckpt.string()},
                   {"model_hash", model_hash(student)}};
  write_json_file(args.out / "manifest.json", manifest);
}

namespace {

struct Row {
  std::string setting;
  double aap = 0.0, ajs = 0.0, pms = 0.0;
  std::optional<double> top1;
};

std::string table_text(double tau, const std::vector<Row>& rows) {
  std::ostringstream out;
  out << "tau_test = " << fmt("%g", tau) << '\n';
  char line[160];
  std::snprintf(line, sizeof line, "%-20s %8s %8s %8s %8s\n", "Setting", "AAP", "AJS", "PMS", "Top-1");
  out << line;
  for (const auto& r : rows) {
    const std::string top1 = r.top1 ? fmt("%.2f", *r.top1) : "-";
    std::snprintf(line, sizeof line, "%-20s %8.3f %8.3f %8.3f %8s\n", r.setting.c_str(), r.aap, r.ajs, r.pms,
                  top1.c_str());
    out << line;
  }
  return out.str();
}

Json row_json(const Row& r) {
  Json j = {{"setting", r.setting}, {"aap", r.aap}, {"ajs", r.ajs}, {"pms", r.pms}};
  j["top1"] = r.top1 ? Json(*r.top1) : Json(nullptr);
  return j;
}

}  // namespace

void cmd_eval(const EvalArgs& args) {
  require_out(args.out);
  check_taus(args.taus);
  const bool from_dumps = !args.teacher_dump.empty();
  const std::size_t n_students = from_dumps ? args.student_dumps.size() : args.students.size();
  if (!args.names.empty() && args.names.size() != n_students) {
    throw UsageError("--name must be given once per student");
  }
  auto name_of = [&](std::size_t k) {
    if (!args.names.empty()) return args.names[k];
    return (from_dumps ? args.student_dumps[k] : args.students[k]).stem().string();
  };

  Json config = {{"taus", args.taus}, {"pms_similarity", kPmsNote}};
  Json tables = Json::array();
  std::string text;

  if (from_dumps) {
    const ActivationDump teacher = dump_from_json(read_json_file(args.teacher_dump));
    std::vector<ActivationDump> students;
    Json paths = Json::array();
    for (const auto& p : args.student_dumps) {
      students.push_back(dump_from_json(read_json_file(p)));
      paths.push_back(p.string());
    }
    config["teacher_dump"] = args.teacher_dump.string();
    config["student_dumps"] = paths;
    const bool have_top1 = !teacher.predictions.empty() && !teacher.labels.empty();
    for (double tau : args.taus) {
      std::vector<Row> rows;
      const auto self = evaluate(teacher, teacher, tau);
      rows.push_back({"teacher", self.aap_teacher, self.ajs, self.pms,
                      have_top1 ? std::optional<double>(self.top1_teacher) : std::nullopt});
      for (std::size_t k = 0; k < students.size(); ++k) {
        const auto r = evaluate(students[k], teacher, tau);
        const bool st = !students[k].predictions.empty() && !students[k].labels.empty();
        rows.push_back({name_of(k), r.aap_student, r.ajs, r.pms, st ? std::optional<double>(r.top1_student) : std::nullopt});
      }
      Json jr = Json::array();
      for (const auto& r : rows) jr.push_back(row_json(r));
      tables.push_back({{"tau", tau}, {"rows", jr}});
      text += table_text(tau, rows) + '\n';
    }
  } else {
    if (args.teacher.empty()) throw UsageError("eval needs --teacher or --teacher-dump");
    const Dataset data = load_split(args.data, args.split);
    const PrototypeModel teacher = load_checkpoint(args.teacher);
    const auto tp = profile_model(teacher, data);
    std::vector<ActivationProfile> sps;
    Json students = Json::array();
    for (std::size_t k = 0; k < args.students.size(); ++k) {
      const PrototypeModel s = load_checkpoint(args.students[k]);
      sps.push_back(profile_model(s, data));
      students.push_back({{"name", name_of(k)}, {"path", args.students[k].string()},
                          {"seed", checkpoint_seed(args.students[k])}});
    }
    config["data"] = args.data.string();
    config["split"] = args.split;
    config["teacher"] = {{"path", args.teacher.string()}, {"seed", checkpoint_seed(args.teacher)}};
    config["students"] = students;
    for (double tau : args.taus) {
      std::vector<Row> rows;
      const auto self = evaluate(tp, tp, data.labels(), tau);
      rows.push_back({"teacher", self.aap_teacher, self.ajs, self.pms, self.top1_teacher});
      for (std::size_t k = 0; k < sps.size(); ++k) {
        const auto r = evaluate(sps[k], tp, data.labels(), tau);
        rows.push_back({name_of(k), r.aap_student, r.ajs, r.pms, r.top1_student});
      }
      Json jr = Json::array();
      for (const auto& r : rows) jr.push_back(row_json(r));
      tables.push_back({{"tau", tau}, {"rows", jr}});
      text += table_text(tau, rows) + '\n';
    }
  }
  text += std::string("note: ") + kPmsNote + "\n";
  fs::create_directories(args.out);
  write_json_file(args.out / "metrics.json", {{"config", config}, {"tables", tables}});
  write_text_file(args.out / "metrics.txt", text);
}

void cmd_sweep_tau(const SweepArgs& args) {
  require_out(args.out);
  check_taus(args.taus);
  const Dataset data = load_split(args.data, args.split);
  const PrototypeModel model = load_checkpoint(args.checkpoint);
  const auto profile = profile_model(model, data);

  std::vector<double> aaps;
  std::string csv = "tau,aap\n";
  for (double tau : args.taus) {
    aaps.push_back(aap(profile, tau));
    csv += num(tau) + ',' + num(aaps.back()) + '\n';
  }
  fs::create_directories(args.out);
  write_text_file(args.out / "aap_vs_tau.csv", csv);
  write_pgm(args.out / "aap_vs_tau.pgm", line_plot(args.taus, aaps));

  const std::size_t shown = std::min(args.overlays, data.size());
  Json overlays = Json::array();
  for (std::size_t n = 0; n < shown; ++n) {
    const GrayImage base = image_of(data, n);
    for (std::size_t k = 0; k < args.taus.size(); ++k) {
      const auto bits = mask_bits(profile, n, args.taus[k]);
      const fs::path file = fs::path("overlays") / ("img" + tag(n, 3) + "_tau" + tag(k) + ".pgm");
      write_pgm(args.out / file, overlay_mask(base, bits, profile.grid.height, profile.grid.width));
      overlays.push_back({{"image", n}, {"tau", args.taus[k]}, {"file", file.string()}});
    }
  }
  write_json_file(args.out / "sweep.json", {{"command", "sweep-tau"},
                                            {"data", args.data.string()},
                                            {"split", args.split},
                                            {"checkpoint", args.checkpoint.string()},
                                            {"seed", checkpoint_seed(args.checkpoint)},
                                            {"taus", args.taus},
                                            {"aap", aaps},
                                            {"overlays", overlays}});
}

void cmd_visualize(const VisualizeArgs& args) {
  require_out(args.out);
  if (args.scale < 1) throw ConfigError("--scale must be >= 1");
  const Dataset train = load_split(args.data, "train");
  const Dataset eval_set = load_split(args.data, args.split);
  const PrototypeModel teacher = load_checkpoint(args.teacher);
  const auto& tproj = require_projection(teacher, args.teacher);
  const auto tprofile = profile_model(teacher, eval_set);

  struct Student {
    PrototypeModel model;
    PmsResult match;
  };
  std::vector<Student> students;
  Json student_json = Json::array();
  for (const auto& path : args.students) {
    Student s{load_checkpoint(path), {}};
    require_projection(s.model, path);
    s.match = pms_detail(profile_model(s.model, eval_set), tprofile);
    student_json.push_back({{"path", path.string()},
                            {"seed", checkpoint_seed(path)},
                            {"pms", s.match.score},
                            {"matching", s.match.matching.columns}});
    students.push_back(std::move(s));
  }

  auto crop_of = [&](const PrototypeModel& m, const ProjectionRecord& rec, PixelRect& rect) {
    if (rec.image_index >= train.size()) throw DataError("projection refers to a missing training image");
    rect = receptive_field(m.config(), static_cast<int>(rec.i), static_cast<int>(rec.j));
    return upscale(crop(image_of(train, rec.image_index), rect), args.scale);
  };

  fs::create_directories(args.out / "prototypes");
  Json crops = Json::array();
  std::vector<GrayImage> rows;
  for (std::size_t p = 0; p < tproj.size(); ++p) {
    std::vector<GrayImage> tiles;
    PixelRect rect;
    tiles.push_back(crop_of(teacher, tproj[p], rect));
    Json entry = {{"prototype", p},
                  {"class", teacher.class_of_prototype()[p]},
                  {"teacher", {{"image", tproj[p].image_index}, {"i", tproj[p].i}, {"j", tproj[p].j}, {"rect", rect_json(rect)}}}};
    Json matched = Json::array();
    for (const auto& s : students) {
      const std::size_t q = s.match.matching.columns[p];
      const auto& rec = (*s.model.projection())[q];
      tiles.push_back(crop_of(s.model, rec, rect));
      matched.push_back({{"prototype", q}, {"image", rec.image_index}, {"i", rec.i}, {"j", rec.j},
                         {"rect", rect_json(rect)}, {"similarity", s.match.scores[p][q]}});
    }
    entry["students"] = matched;
    crops.push_back(entry);
    GrayImage row = hstack(tiles, 2 * args.scale);
    write_pgm(args.out / "prototypes" / ("proto_" + tag(p) + ".pgm"), row);
    rows.push_back(std::move(row));
  }
  write_pgm(args.out / "grid.pgm", vstack(rows, args.scale));
  write_json_file(args.out / "matches.json", {{"command", "visualize"},
                                              {"data", args.data.string()},
                                              {"split", args.split},
                                              {"teacher", {{"path", args.teacher.string()}, {"seed", checkpoint_seed(args.teacher)}}},
                                              {"students", student_json},
                                              {"crops", crops},
                                              {"pms_similarity", kPmsNote}});
}

void cmd_export_dump(const ExportDumpArgs& args) {
  require_out(args.out);
  check_taus(args.taus);
  const Dataset data = load_split(args.data, args.split);
  const PrototypeModel model = load_checkpoint(args.checkpoint);
  const std::string id = args.model_id.empty() ? args.checkpoint.stem().string() : args.model_id;
  const auto dump = make_dump(profile_model(model, data), id, args.taus, data.labels());
  Json doc = to_json(dump);
  doc["seed"] = checkpoint_seed(args.checkpoint);
  if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
  write_json_file(args.out, doc);
}

}  // namespace protodistill::app
