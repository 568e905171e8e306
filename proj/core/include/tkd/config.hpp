#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tkd/ablation.hpp"
#include "tkd/data.hpp"
#include "tkd/distill.hpp"
#include "tkd/encoder.hpp"
#include "tkd/train.hpp"

namespace tkd {

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
/// Throws ConfigError on malformed lines and repeated keys.
std::vector<ConfigEntry> parse_config_text(std::string_view text, std::string_view source = "<config>");
std::vector<ConfigEntry> read_config_file(const std::filesystem::path& path);

/// Everything a command can be configured with. Defaults are the desk-scale
/// preset: 2-layer/2-head student, 4-layer/4-head teacher.
struct RunConfig {
  ModelConfig model;
  ModelConfig teacher{4, 4, 64, 128, 50, 16, 2, 1e-5};
  TrainConfig train;
  std::size_t teacher_epochs = 20;
  double teacher_learning_rate = 3e-4;
  DistillConfig distill;
  DataSpec data;
  MlmConfig mlm;
  std::string out_dir;
  std::string init_checkpoint;

  std::vector<Arm> arms{Arm::TkdNlp, Arm::TNlp, Arm::KdNlp};
  std::vector<std::uint64_t> seeds{1};
  std::size_t jobs = 1;

  double gradcheck_h = 1e-4;
  std::size_t gradcheck_batch = 4;
  std::size_t gradcheck_seq = 6;

  /// Throws ConfigError naming the key for unknown keys or bad values.
  void set(std::string_view key, std::string_view value);
  void apply(const std::vector<ConfigEntry>& entries);
  /// Every key in canonical order, one `key = value` line each; parsing the
  /// result reproduces this config exactly.
  std::string render() const;
  void validate() const;
  AblationPlan plan() const;
  /// `train` with the teacher's epochs and learning rate.
  TrainConfig teacher_train() const;
};

std::vector<std::string_view> known_config_keys();

/// File entries (when a path is given) then `overrides` in order, so a
/// command-line flag wins over the file.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace tkd
