#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "protodistill/errors.hpp"

namespace protodistill::app {

namespace {

void add_train_flags(CLI::App& cmd, TrainConfig& train) {
  cmd.add_option("--epochs", train.epochs, "Training epochs")->capture_default_str();
  cmd.add_option("--batch-size", train.batch_size, "Mini-batch size")->capture_default_str();
  cmd.add_option("--lr", train.lr, "SGD learning rate")->capture_default_str();
  cmd.add_option("--momentum", train.momentum, "SGD momentum")->capture_default_str();
}

void add_tune_flags(CLI::App& cmd, DecisionTuneConfig& tune) {
  cmd.add_option("--tune-steps", tune.steps, "Decision-layer tuning steps after projection")->capture_default_str();
  cmd.add_option("--tune-lr", tune.lr, "Decision-layer tuning learning rate")->capture_default_str();
  cmd.add_option("--tune-l1", tune.l1, "L1 weight on off-class decision weights")->capture_default_str();
}

void add_loss_flags(CLI::App& cmd, ModelLossWeights& w) {
  cmd.add_option("--cluster", w.cluster, "Cluster-cost weight")->capture_default_str();
  cmd.add_option("--separation", w.separation, "Separation-cost weight")->capture_default_str();
}

void add_model_flags(CLI::App& cmd, ModelConfig& config, std::string& backbone, const std::string& prefix) {
  cmd.add_option("--" + prefix + "backbone", backbone, "Backbone blocks out:kernel:stride:pad,...")
      ->default_str(format_backbone(config.backbone));
  cmd.add_option("--" + prefix + "prototypes-per-class", config.prototypes_per_class, "Prototypes per class")
      ->capture_default_str();
  cmd.add_option("--" + prefix + "proto-dim", config.proto_dim, "Prototype depth d")->capture_default_str();
}

// Comma-separated list of numbers; an empty list stays empty.
std::vector<double> parse_taus(const std::string& text) {
  std::vector<double> out;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ',')) {
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("invalid tau value '" + item + "'");
    }
    if (used != item.size()) throw ConfigError("invalid tau value '" + item + "'");
    out.push_back(value);
  }
  return out;
}

std::string join_taus(const std::vector<double>& taus) {
  std::string out;
  for (double t : taus) out += (out.empty() ? "" : ",") + CLI::detail::to_string(t);
  return out;
}

void apply_data_shape(ModelConfig& config, const std::filesystem::path& data) {
  const auto train = load_split(data, "train");
  config.num_classes = train.num_classes();
  config.input_size = train.image_size();
  config.input_channels = train.channels();
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Prototypical part network distillation toolkit"};
  app.require_subcommand(1);
  std::function<void()> action;

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate the synthetic parts dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Generation seed")->capture_default_str();
  g->add_option("--classes", gen.spec.num_classes)->capture_default_str();
  g->add_option("--train-per-class", gen.spec.train_per_class)->capture_default_str();
  g->add_option("--test-per-class", gen.spec.test_per_class)->capture_default_str();
  g->add_option("--image-size", gen.spec.image_size)->capture_default_str();
  g->add_option("--channels", gen.spec.channels)->capture_default_str();
  g->add_option("--motifs-per-class", gen.spec.motifs_per_class)->capture_default_str();
  g->add_option("--motif-size", gen.spec.motif_size)->capture_default_str();
  g->add_option("--palette-levels", gen.spec.palette_levels)->capture_default_str();
  g->add_option("--background-seed", gen.spec.background_seed)->capture_default_str();
  g->add_option("--jitter", gen.spec.jitter)->capture_default_str();
  g->add_option("--noise", gen.spec.noise_sigma)->capture_default_str();
  g->add_flag("--shuffle-motifs", gen.spec.shuffle_motifs, "Draw each image's motifs from a random class");
  g->callback([&] { action = [&] { cmd_gen_data(gen); }; });

  TrainTeacherArgs tt;
  std::string tt_backbone;
  std::uint64_t tt_seed = 0;
  auto* t = app.add_subcommand("train-teacher", "Train, project and save a teacher");
  t->add_option("--data", tt.data, "Dataset directory")->required();
  t->add_option("--out", tt.out, "Output directory")->required();
  t->add_option("--seed", tt_seed, "Initialization and shuffling seed")->required();
  add_model_flags(*t, tt.model, tt_backbone, "");
  add_train_flags(*t, tt.recipe.train);
  add_loss_flags(*t, tt.recipe.weights);
  add_tune_flags(*t, tt.recipe.tune);
  t->callback([&] {
    action = [&] {
      tt.seed = tt_seed;
      if (!tt_backbone.empty()) tt.model.backbone = parse_backbone(tt_backbone);
      apply_data_shape(tt.model, tt.data);
      cmd_train_teacher(tt);
    };
  });

  DistillArgs ds;
  std::string ds_backbone, ds_mode = to_string(ds.recipe.distill.mode);
  std::uint64_t ds_seed = 0;
  auto* d = app.add_subcommand("distill", "Train a student against a frozen teacher");
  d->add_option("--data", ds.data, "Dataset directory")->required();
  d->add_option("--teacher", ds.teacher, "Teacher checkpoint")->required();
  d->add_option("--out", ds.out, "Output directory")->required();
  d->add_option("--seed", ds_seed, "Initialization and shuffling seed")->required();
  d->add_option("--mode", ds_mode, "baseline | hint | proto2proto")->capture_default_str();
  d->add_option("--tau-train", ds.recipe.distill.tau_train)->capture_default_str();
  d->add_option("--tau-test", ds.recipe.distill.tau_test)->capture_default_str();
  d->add_option("--lambda-global", ds.recipe.distill.lambda_global)->capture_default_str();
  d->add_option("--lambda-ppc", ds.recipe.distill.lambda_ppc)->capture_default_str();
  d->add_flag("--reuse", ds.recipe.distill.reuse_decision_module, "Copy and freeze the teacher decision weights");
  bool no_model_loss = false;
  d->add_flag("--no-model-loss", no_model_loss, "Drop the model loss (requires --reuse)");
  d->add_flag("--normalize-ppc", ds.recipe.distill.normalize_ppc, "Divide each image's ppc term by its mask popcount");
  add_model_flags(*d, ds.student, ds_backbone, "student-");
  add_train_flags(*d, ds.recipe.train);
  add_loss_flags(*d, ds.recipe.distill.model_loss);
  add_tune_flags(*d, ds.recipe.tune);
  d->callback([&] {
    action = [&] {
      ds.seed = ds_seed;
      ds.recipe.distill.mode = parse_distill_mode(ds_mode);
      ds.recipe.distill.use_model_loss = !no_model_loss;
      if (!ds_backbone.empty()) ds.student.backbone = parse_backbone(ds_backbone);
      apply_data_shape(ds.student, ds.data);
      cmd_distill(ds);
    };
  });

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Compute AAP, AJS, PMS and Top-1 against a teacher");
  e->add_option("--data", ev.data, "Dataset directory");
  e->add_option("--split", ev.split)->capture_default_str();
  e->add_option("--teacher", ev.teacher, "Teacher checkpoint");
  e->add_option("--student", ev.students, "Student checkpoint (repeatable)");
  e->add_option("--name", ev.names, "Row label per student (repeatable)");
  e->add_option("--teacher-dump", ev.teacher_dump, "Teacher activation dump");
  e->add_option("--student-dump", ev.student_dumps, "Student activation dump (repeatable)");
  std::string ev_taus = join_taus(ev.taus);
  e->add_option("--tau", ev_taus, "Comma-separated tau_test values")->capture_default_str();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->callback([&] {
    action = [&] {
      ev.taus = parse_taus(ev_taus);
      cmd_eval(ev);
    };
  });

  SweepArgs sw;
  auto* s = app.add_subcommand("sweep-tau", "AAP over a tau grid with mask overlays");
  s->add_option("--data", sw.data, "Dataset directory")->required();
  s->add_option("--split", sw.split)->capture_default_str();
  s->add_option("--checkpoint", sw.checkpoint, "Model checkpoint")->required();
  std::string sw_taus;
  s->add_option("--taus", sw_taus, "Comma-separated tau values")->required();
  s->add_option("--overlays", sw.overlays, "Images rendered per tau")->capture_default_str();
  s->add_option("--out", sw.out, "Output directory")->required();
  s->callback([&] {
    action = [&] {
      sw.taus = parse_taus(sw_taus);
      cmd_sweep_tau(sw);
    };
  });

  VisualizeArgs vz;
  auto* v = app.add_subcommand("visualize", "Crop projected prototypes with their matched student prototypes");
  v->add_option("--data", vz.data, "Dataset directory")->required();
  v->add_option("--split", vz.split, "Split used for matching")->capture_default_str();
  v->add_option("--teacher", vz.teacher, "Teacher checkpoint")->required();
  v->add_option("--student", vz.students, "Student checkpoint (repeatable)");
  v->add_option("--scale", vz.scale, "Crop upscaling factor")->capture_default_str();
  v->add_option("--out", vz.out, "Output directory")->required();
  v->callback([&] { action = [&] { cmd_visualize(vz); }; });

  ExportDumpArgs ex;
  auto* x = app.add_subcommand("export-dump", "Write an activation dump for model-free metrics");
  x->add_option("--data", ex.data, "Dataset directory")->required();
  x->add_option("--split", ex.split)->capture_default_str();
  x->add_option("--checkpoint", ex.checkpoint, "Model checkpoint")->required();
  std::string ex_taus = join_taus(ex.taus);
  x->add_option("--taus", ex_taus, "Comma-separated tau values")->capture_default_str();
  x->add_option("--model-id", ex.model_id, "Identifier stored in the dump");
  x->add_option("--out", ex.out, "Output JSON file")->required();
  x->callback([&] {
    action = [&] {
      ex.taus = parse_taus(ex_taus);
      cmd_export_dump(ex);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    action();
    return 0;
  } catch (const ConfigError& err) {
    std::fprintf(stderr, "config error: %s\n", err.what());
    return 2;
  } catch (const UsageError& err) {
    std::fprintf(stderr, "usage error: %s\n", err.what());
    return 2;
  } catch (const DimensionError& err) {
    std::fprintf(stderr, "config error: %s\n", err.what());
    return 2;
  } catch (const DataError& err) {
    std::fprintf(stderr, "data error: %s\n", err.what());
    return 3;
  } catch (const std::filesystem::filesystem_error& err) {
    std::fprintf(stderr, "file error: %s\n", err.what());
    return 3;
  } catch (const NumericError& err) {
    std::fprintf(stderr, "numeric error: %s\n", err.what());
    return 4;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
}

}  // namespace protodistill::app
