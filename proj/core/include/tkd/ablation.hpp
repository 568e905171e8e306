#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tkd/data.hpp"
#include "tkd/distill.hpp"
#include "tkd/encoder.hpp"
#include "tkd/metrics.hpp"
#include "tkd/train.hpp"

namespace tkd {

// TKD-NLP: student trained on the combined loss.
// T-NLP:   student trained on the task loss only.
// KD-NLP:  reduced student (one layer, half width) trained on soft labels only.
enum class Arm { TkdNlp, TNlp, KdNlp };

std::string to_string(Arm arm);
Arm parse_arm(std::string_view text);

struct AblationPlan {
  std::vector<Arm> arms{Arm::TkdNlp, Arm::TNlp, Arm::KdNlp};
  DataSpec data;
  std::vector<std::uint64_t> seeds{1};
  TrainConfig train;
  ModelConfig student;
  ModelConfig teacher;
  DistillConfig distill;
  // The teacher shares `train` except for these two.
  std::size_t teacher_epochs = 20;
  double teacher_learning_rate = 3e-4;
  // Seeds run concurrently when > 1.
  std::size_t jobs = 1;

  void validate() const;
};

/// Reported full-scale numbers, shown next to desk-scale results for
/// provenance only. Nothing compares against them.
struct PaperReferenceRow {
  std::string_view model;
  double accuracy;
  double f1;
  std::string_view table;
};

std::span<const PaperReferenceRow> paper_reference();

/// Optimizer settings used to train the plan's teacher.
TrainConfig teacher_train_config(const AblationPlan& plan, std::uint64_t seed);

/// Architecture of the KD-NLP arm's student.
ModelConfig reduced_student_config(const ModelConfig& student);

struct ArmResult {
  Arm arm = Arm::TNlp;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  double train_seconds = 0.0;  // student only
  bool used_soft_labels = false;
};

/// Teacher soft labels shared by the distillation arms of one seed.
struct TeacherCache {
  std::map<std::uint64_t, SoftLabelStore> by_seed;
};

/// Trains and evaluates one arm on the plan's data at `seed`. Distillation
/// arms train the teacher first unless `cache` already holds its labels.
ArmResult run_arm(Arm arm, const AblationPlan& plan, std::uint64_t seed, const Splits& splits,
                  TeacherCache* cache = nullptr);
ArmResult run_arm(Arm arm, const AblationPlan& plan, std::uint64_t seed);

struct ArmSummary {
  Arm arm = Arm::TNlp;
  std::size_t runs = 0;
  double acc_median = 0.0, acc_min = 0.0, acc_max = 0.0;
  double f1_median = 0.0, f1_min = 0.0, f1_max = 0.0;
};

struct AblationReport {
  std::vector<ArmResult> runs;  // plan order: seeds outer, arms inner

  std::vector<ArmSummary> summaries(std::span<const Arm> order) const;
  /// `arm,seed,acc,f1,train_seconds` rows, then a `paper_reference` section.
  std::string to_csv() const;
  std::string render_table(std::span<const Arm> order) const;
};

double median(std::vector<double> values);

/// Runs arms x seeds. On failure the completed runs are written to
/// `partial_csv` (when given) before the error propagates.
AblationReport run_plan(const AblationPlan& plan, const std::optional<std::filesystem::path>& partial_csv = {});

/// Scores an `example_id,predicted_class` file against `dataset`.
MetricsReport load_external_predictions(const std::filesystem::path& path, const Dataset& dataset);

}  // namespace tkd
