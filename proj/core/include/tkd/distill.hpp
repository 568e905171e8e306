#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tkd/data.hpp"
#include "tkd/encoder.hpp"
#include "tkd/tensor.hpp"

namespace tkd {

enum class DistillMode { Output, OutputPlusFeature };

std::string to_string(DistillMode mode);
DistillMode parse_distill_mode(std::string_view text);

struct DistillConfig {
  double temperature = 1.0;
  // Weight of the distillation term.
  double alpha = 0.5;
  DistillMode mode = DistillMode::Output;
  double feature_weight = 0.0;
  // Multiply the distillation term by T^2. Inert at T = 1.
  bool scale_by_t_squared = true;

  void validate() const;
};

inline constexpr double kProbabilityFloor = 1e-12;

/// softmax_rows(logits / T).
Tensor soften(const Tensor& logits, double temperature);

/// Mean over the batch of -sum_c y_c log(max(p_c, 1e-12)) with one-hot y.
Tensor task_loss(const Tensor& one_hot_labels, const Tensor& probs);
/// Builds the one-hot matrix and calls the tensor overload.
Tensor task_loss(std::span<const std::size_t> labels, const Tensor& probs);

/// Soft cross-entropy of student probabilities against teacher probabilities,
/// averaged over the batch.
Tensor distill_loss(const Tensor& teacher_probs, const Tensor& student_probs);

/// alpha * T^2 * L_distill + (1 - alpha) * L_task.
Tensor combined_loss(const Tensor& task, const Tensor& distill, const DistillConfig& cfg);

/// Mean squared error between student_hidden · projection and teacher_hidden.
Tensor feature_distill_loss(const Tensor& teacher_hidden, const Tensor& student_hidden, const Tensor& projection);

Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes);

/// Teacher probability vectors keyed by example id.
struct SoftLabelStore {
  std::size_t num_classes = 0;
  double temperature = 1.0;
  std::string teacher_checksum;
  std::map<std::uint64_t, std::vector<double>> probs;

  std::size_t size() const { return probs.size(); }
  const std::vector<double>& at(std::uint64_t example_id) const;
  /// Throws ContractError unless the ids are exactly those of `dataset`.
  void check_covers(const Dataset& dataset) const;
  bool operator==(const SoftLabelStore&) const = default;
};

/// Teacher forward pass without gradients over every example.
SoftLabelStore generate_soft_labels(const EncoderModel& teacher, const Dataset& dataset, double temperature,
                                    std::size_t batch_size = 64);

/// Header `SOFTLABELS1 n=<count> classes=<C> T=<temp> teacher=<checksum>`,
/// then `<id> <p_0> ... <p_{C-1}>` per example at 17 significant digits.
std::string serialize_soft_labels(const SoftLabelStore& store);
SoftLabelStore parse_soft_labels(std::string_view text);
void save_soft_labels(const SoftLabelStore& store, const std::filesystem::path& path);
SoftLabelStore load_soft_labels(const std::filesystem::path& path);

}  // namespace tkd
