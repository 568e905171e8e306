#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "tkd/ablation.hpp"
#include "tkd/config.hpp"
#include "tkd/gradcheck.hpp"
#include "tkd/metrics.hpp"

namespace tkd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kCheckpointFile = "checkpoint.tkd";
inline constexpr const char* kReportFile = "report.csv";
inline constexpr const char* kResolvedFile = "resolved.cfg";
inline constexpr const char* kSoftLabelFile = "softlabels.txt";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kAblationCsv = "ablation.csv";
inline constexpr const char* kAblationTable = "ablation.txt";
inline constexpr const char* kAblationPartial = "ablation.partial.csv";

/// Masked-token pre-training of the student architecture on the training
/// split. Writes checkpoint, per-batch loss report and resolved config.
void cmd_pretrain(const RunConfig& cfg, std::ostream& out);

/// Trains the teacher architecture. Writes checkpoint, report (epoch table
/// followed by the final validation metrics) and resolved config.
void cmd_train_teacher(const RunConfig& cfg, std::ostream& out);

/// Soft labels for the training split at cfg.distill.temperature.
void cmd_make_softlabels(const RunConfig& cfg, const std::filesystem::path& teacher_checkpoint, std::ostream& out);

/// Trains the student on a soft-label file. When `teacher_checkpoint` is
/// given its checksum must match the one recorded in the file.
void cmd_distill(const RunConfig& cfg, const std::filesystem::path& soft_labels,
                 const std::optional<std::filesystem::path>& teacher_checkpoint, std::ostream& out);

/// Validation-split metrics of a checkpoint, or of an external
/// `example_id,predicted_class` file when `predictions` is given.
MetricsReport cmd_evaluate(const RunConfig& cfg, const std::optional<std::filesystem::path>& checkpoint,
                           const std::optional<std::filesystem::path>& predictions, std::ostream& out);

AblationReport cmd_ablate(const RunConfig& cfg, std::ostream& out);

GradCheckResult cmd_gradcheck(const RunConfig& cfg, std::ostream& out);

/// Text written to report.csv by the training commands.
std::string training_report_text(const TrainReport& report);

/// Full command line. Returns the process exit code: 0 success, 1 runtime
/// or training failure, 2 usage or configuration error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tkd::cli
