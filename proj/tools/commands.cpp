#include "commands.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <ostream>
#include <sstream>

#include "tkd/checkpoint.hpp"
#include "tkd/data.hpp"
#include "tkd/distill.hpp"
#include "tkd/error.hpp"
#include "tkd/train.hpp"

namespace tkd::cli {

namespace fs = std::filesystem;

namespace {

fs::path require_out_dir(const RunConfig& cfg) {
  if (cfg.out_dir.empty()) throw ConfigError("output directory is not set (key 'out' or --out)");
  fs::create_directories(cfg.out_dir);
  return cfg.out_dir;
}

void write_resolved(const fs::path& dir, const RunConfig& cfg) { write_file(dir / kResolvedFile, cfg.render()); }

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

EncoderModel initial_model(const ModelConfig& arch, const RunConfig& cfg, std::uint64_t seed) {
  if (cfg.init_checkpoint.empty()) return EncoderModel(arch, seed);
  EncoderModel loaded = load_checkpoint(cfg.init_checkpoint);
  if (!(loaded.config() == arch)) {
    throw ConfigError("init_checkpoint " + cfg.init_checkpoint + " does not match the configured architecture");
  }
  return loaded;
}

}  // namespace

std::string training_report_text(const TrainReport& report) {
  std::string text = report.to_csv();
  if (report.final_validation) text += "\n" + report_csv(*report.final_validation);
  return text;
}

void cmd_pretrain(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const Splits splits = load_splits(cfg.data);
  const fs::path dir = require_out_dir(cfg);
  RunConfig resolved = cfg;
  resolved.model = fit_to_data(cfg.model, splits.train);
  EncoderModel model = initial_model(resolved.model, resolved, resolved.train.seed);
  const MlmReport report = pretrain_mlm(model, splits.train, resolved.train, resolved.mlm);

  std::ostringstream csv;
  csv << "batch,loss\n";
  for (std::size_t i = 0; i < report.batch_losses.size(); ++i) csv << i + 1 << ',' << g17(report.batch_losses[i]) << '\n';
  save_checkpoint(model, dir / kCheckpointFile);
  write_file(dir / kReportFile, csv.str());
  write_resolved(dir, resolved);
  out << "pretrained " << report.batch_losses.size() << " batches, " << report.masked_tokens << " masked tokens";
  if (!report.batch_losses.empty()) out << ", final loss " << g17(report.batch_losses.back());
  out << "\ncheckpoint " << (dir / kCheckpointFile).string() << '\n';
}

void cmd_train_teacher(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const Splits splits = load_splits(cfg.data);
  const fs::path dir = require_out_dir(cfg);
  RunConfig resolved = cfg;
  resolved.teacher = fit_to_data(cfg.teacher, splits.train);
  EncoderModel teacher = initial_model(resolved.teacher, resolved, resolved.train.seed);
  TrainReport report = train_classifier(teacher, splits.train, &splits.validation, resolved.teacher_train());

  save_checkpoint(teacher, dir / kCheckpointFile);
  report.checkpoint_path = (dir / kCheckpointFile).string();
  write_file(dir / kReportFile, training_report_text(report));
  write_resolved(dir, resolved);
  out << render_report(*report.final_validation);
  out << "checkpoint " << report.checkpoint_path << " (" << checkpoint_checksum(teacher) << ")\n";
}

void cmd_make_softlabels(const RunConfig& cfg, const fs::path& teacher_checkpoint, std::ostream& out) {
  cfg.validate();
  const Splits splits = load_splits(cfg.data);
  const fs::path dir = require_out_dir(cfg);
  const EncoderModel teacher = load_checkpoint(teacher_checkpoint);
  const SoftLabelStore store = generate_soft_labels(teacher, splits.train, cfg.distill.temperature);
  save_soft_labels(store, dir / kSoftLabelFile);
  write_resolved(dir, cfg);
  out << "wrote " << store.size() << " soft labels at T=" << g17(store.temperature) << " to "
      << (dir / kSoftLabelFile).string() << '\n';
}

void cmd_distill(const RunConfig& cfg, const fs::path& soft_labels, const std::optional<fs::path>& teacher_checkpoint,
                 std::ostream& out) {
  cfg.validate();
  if (cfg.out_dir.empty()) throw ConfigError("output directory is not set (key 'out' or --out)");
  const SoftLabelStore store = load_soft_labels(soft_labels);
  std::optional<EncoderModel> teacher;
  if (teacher_checkpoint) {
    teacher = load_checkpoint(*teacher_checkpoint);
    const std::string actual = checkpoint_checksum(*teacher);
    if (actual != store.teacher_checksum) {
      throw ContractError("soft labels in " + soft_labels.string() + " come from teacher " + store.teacher_checksum +
                          ", not " + teacher_checkpoint->string() + " (" + actual + ")");
    }
  }
  const Splits splits = load_splits(cfg.data);
  store.check_covers(splits.train);
  const fs::path dir = require_out_dir(cfg);

  RunConfig resolved = cfg;
  resolved.model = fit_to_data(cfg.model, splits.train);
  EncoderModel student = initial_model(resolved.model, resolved, resolved.train.seed);
  TrainConfig tc = resolved.train;
  tc.distill = resolved.distill;
  FeatureTeacher feature;
  if (resolved.distill.mode == DistillMode::OutputPlusFeature) {
    if (!teacher) throw ConfigError("distill_mode = feature needs the teacher checkpoint (--teacher)");
    feature.teacher = &*teacher;
  }
  TrainReport report = train_student_distilled(student, store, splits.train, &splits.validation, tc,
                                               teacher ? &feature : nullptr);

  save_checkpoint(student, dir / kCheckpointFile);
  report.checkpoint_path = (dir / kCheckpointFile).string();
  write_file(dir / kReportFile, training_report_text(report));
  write_resolved(dir, resolved);
  out << render_report(*report.final_validation);
  out << "checkpoint " << report.checkpoint_path << '\n';
}

MetricsReport cmd_evaluate(const RunConfig& cfg, const std::optional<fs::path>& checkpoint,
                           const std::optional<fs::path>& predictions, std::ostream& out) {
  if (checkpoint.has_value() == predictions.has_value()) {
    throw ConfigError("evaluate needs exactly one of a checkpoint or --predictions");
  }
  const Splits splits = load_splits(cfg.data);
  const MetricsReport report = checkpoint ? evaluate(load_checkpoint(*checkpoint), splits.validation)
                                          : load_external_predictions(*predictions, splits.validation);
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    write_file(fs::path(cfg.out_dir) / kMetricsFile, report_csv(report));
    write_resolved(cfg.out_dir, cfg);
  }
  out << render_report(report);
  return report;
}

AblationReport cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  cfg.validate();
  const AblationPlan plan = cfg.plan();
  plan.validate();
  if (plan.data.source.empty()) throw ConfigError("data source is not set (key 'data')");
  const fs::path dir = require_out_dir(cfg);
  write_resolved(dir, cfg);
  AblationReport report = run_plan(plan, dir / kAblationPartial);
  const std::string table = report.render_table(plan.arms);
  write_file(dir / kAblationCsv, report.to_csv());
  write_file(dir / kAblationTable, table);
  out << table;
  return report;
}

GradCheckResult cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  ModelGradCheck setup;
  setup.batch = cfg.gradcheck_batch;
  setup.seq_len = cfg.gradcheck_seq;
  setup.h = cfg.gradcheck_h;
  setup.seed = cfg.train.seed;
  const GradCheckResult r = model_gradcheck(setup);
  std::ostringstream text;
  text << "max_rel_error " << g17(r.max_rel_error) << '\n'
       << "coordinates " << r.coordinates << '\n'
       << "worst " << r.worst_param << '[' << r.worst_index << "] analytic " << g17(r.worst_analytic) << " numeric "
       << g17(r.worst_numeric) << '\n';
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    write_file(fs::path(cfg.out_dir) / kReportFile, text.str());
    write_resolved(cfg.out_dir, cfg);
  }
  out << text.str();
  return r;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Transformer encoder training with knowledge distillation"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::vector<std::string> sets;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value configuration file");
    auto flag = [&](const char* name, const char* key, const char* help) {
      sub->add_option_function<std::string>(
          name, [&overrides, key](const std::string& v) { overrides.emplace_back(key, v); }, help);
    };
    flag("--data", "data", "training data (synth:keyword | synth:parity | synth:majority | TSV path)");
    flag("--out", "out", "output directory");
    flag("--seed", "seed", "training seed");
    flag("--alpha", "alpha", "distillation weight");
    flag("--temperature", "temperature", "softening temperature");
    flag("--epochs", "epochs", "training epochs");
    flag("--batch-size", "batch_size", "batch size");
    sub->add_option("--set", sets, "extra key=value override (repeatable)");
  };

  auto* pretrain = app.add_subcommand("pretrain", "masked-token pre-training");
  auto* teacher = app.add_subcommand("train-teacher", "train the teacher classifier");
  auto* softlabels = app.add_subcommand("make-softlabels", "write teacher soft labels for the training split");
  auto* distill = app.add_subcommand("distill", "train the student on soft labels");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "validation metrics of a checkpoint or predictions file");
  auto* ablate = app.add_subcommand("ablate", "run an ablation plan");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check of the full model");
  for (auto* sub : {pretrain, teacher, softlabels, distill, evaluate_cmd, ablate, gradcheck}) add_common(sub);

  std::string teacher_ckpt, soft_path, distill_teacher, eval_ckpt, predictions, plan_path;
  softlabels->add_option("teacher", teacher_ckpt, "teacher checkpoint")->required();
  distill->add_option("softlabels", soft_path, "soft-label file")->required();
  distill->add_option("--teacher", distill_teacher, "teacher checkpoint for the provenance check");
  evaluate_cmd->add_option("checkpoint", eval_ckpt, "model checkpoint");
  evaluate_cmd->add_option("--predictions", predictions, "example_id,predicted_class file");
  ablate->add_option("plan", plan_path, "ablation plan file")->required();

  const std::string prog = argc > 0 ? fs::path(argv[0]).filename().string() : "tkd";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << prog << ": error: " << e.what() << '\n';
    return kExitUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  try {
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    RunConfig cfg;
    if (!config_path.empty()) cfg.apply(read_config_file(config_path));
    if (chosen == ablate) cfg.apply(read_config_file(plan_path));
    for (const auto& [key, value] : overrides) cfg.set(key, value);

    if (chosen == pretrain) {
      cmd_pretrain(cfg, out);
    } else if (chosen == teacher) {
      cmd_train_teacher(cfg, out);
    } else if (chosen == softlabels) {
      cmd_make_softlabels(cfg, teacher_ckpt, out);
    } else if (chosen == distill) {
      cmd_distill(cfg, soft_path, distill_teacher.empty() ? std::nullopt : std::optional<fs::path>(distill_teacher),
                  out);
    } else if (chosen == evaluate_cmd) {
      cmd_evaluate(cfg, eval_ckpt.empty() ? std::nullopt : std::optional<fs::path>(eval_ckpt),
                   predictions.empty() ? std::nullopt : std::optional<fs::path>(predictions), out);
    } else if (chosen == ablate) {
      cmd_ablate(cfg, out);
    } else if (chosen == gradcheck) {
      const GradCheckResult r = cmd_gradcheck(cfg, out);
      if (!(r.max_rel_error < 1e-3)) {
        err << prog << " gradcheck: max relative error " << g17(r.max_rel_error) << " >= 1e-3\n";
        return kExitFailure;
      }
    }
  } catch (const ConfigError& e) {
    err << prog << ' ' << name << ": error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const SchemaError& e) {
    err << prog << ' ' << name << ": error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << prog << ' ' << name << ": error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace tkd::cli
