#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "protodistill/dataset.hpp"
#include "protodistill/pipeline.hpp"

namespace protodistill::app {

namespace fs = std::filesystem;

// A data directory holds train.{json,bin} and test.{json,bin}.
fs::path split_prefix(const fs::path& data_dir, const std::string& split);
Dataset load_split(const fs::path& data_dir, const std::string& split);

struct GenDataArgs {
  SyntheticSpec spec;
  std::uint64_t seed = 0;
  fs::path out;
};

struct TrainTeacherArgs {
  fs::path data;
  fs::path out;
  std::optional<std::uint64_t> seed;
  ModelConfig model = ModelConfig::teacher_default();
  TeacherRecipe recipe;
};

struct DistillArgs {
  fs::path data;
  fs::path teacher;
  fs::path out;
  std::optional<std::uint64_t> seed;
  ModelConfig student = ModelConfig::student_default();
  StudentRecipe recipe;
};

struct EvalArgs {
  fs::path data;
  std::string split = "test";
  fs::path teacher;
  std::vector<fs::path> students;
  std::vector<std::string> names;  // one per student; defaults to file stems
  fs::path teacher_dump;
  std::vector<fs::path> student_dumps;
  std::vector<double> taus = {DistillConfig{}.tau_test};
  fs::path out;
};

struct SweepArgs {
  fs::path data;
  std::string split = "test";
  fs::path checkpoint;
  std::vector<double> taus;
  std::size_t overlays = 4;  // images rendered per tau
  fs::path out;
};

struct VisualizeArgs {
  fs::path data;
  std::string split = "test";  // split used for prototype matching
  fs::path teacher;
  std::vector<fs::path> students;
  int scale = 4;
  fs::path out;
};

struct ExportDumpArgs {
  fs::path data;
  std::string split = "test";
  fs::path checkpoint;
  std::vector<double> taus = {DistillConfig{}.tau_test};
  std::string model_id;
  fs::path out;
};

// Each command writes its artifacts below `out` (export-dump: to the file
// `out`) and throws protodistill errors on failure.
void cmd_gen_data(const GenDataArgs& args);
void cmd_train_teacher(const TrainTeacherArgs& args);
void cmd_distill(const DistillArgs& args);
void cmd_eval(const EvalArgs& args);
void cmd_sweep_tau(const SweepArgs& args);
void cmd_visualize(const VisualizeArgs& args);
void cmd_export_dump(const ExportDumpArgs& args);

// Parses argv, dispatches and maps errors to exit codes: 0 success,
// 2 configuration or usage, 3 data or file, 4 numeric, 1 anything else.
int run_cli(int argc, const char* const* argv);

}  // namespace protodistill::app
