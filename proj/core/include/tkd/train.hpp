#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tkd/data.hpp"
#include "tkd/distill.hpp"
#include "tkd/encoder.hpp"
#include "tkd/metrics.hpp"
#include "tkd/tensor.hpp"

namespace tkd {

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  // Global-norm gradient clipping; 0 disables.
  double grad_clip = 5.0;
  std::uint64_t seed = 1;
  std::optional<DistillConfig> distill;

  void validate() const;
};

/// Decoupled-weight-decay Adam state. Moments are kept per parameter id.
struct OptimizerState {
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  std::uint64_t step = 0;
  std::map<std::uint64_t, Moments> moments;
};

/// One AdamW update:
///   m = b1 m + (1 - b1) g, v = b2 v + (1 - b2) g^2,
///   θ ← θ − lr · m̂ / (sqrt(v̂) + eps) − lr · wd · θ.
/// Throws TrainingError naming the parameter if a gradient is not finite.
void optimizer_step(std::span<Tensor> params, const GradientMap& grads, OptimizerState& state,
                    const TrainConfig& cfg);

/// Rescales gradients in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<const Tensor> params, GradientMap& grads, double max_norm);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double val_f1 = 0.0;  // macro
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<double> batch_losses;
  std::optional<MetricsReport> final_validation;
  double wall_seconds = 0.0;
  std::string checkpoint_path;

  /// `epoch,train_loss,train_acc,val_acc,val_f1,seconds` with a header row.
  std::string to_csv() const;
};

/// Argmax of each logit row; ties resolve to the lowest class index.
std::vector<std::size_t> predict(const EncoderModel& model, const Dataset& dataset, std::size_t batch_size = 64);

MetricsReport evaluate(const EncoderModel& model, const Dataset& dataset);

/// Plain supervised training on the task loss. `validation` may be null.
TrainReport train_classifier(EncoderModel& model, const Dataset& train, const Dataset* validation,
                             const TrainConfig& cfg);

/// Live teacher used by the feature-distillation term.
struct FeatureTeacher {
  const EncoderModel* teacher = nullptr;
  /// Learned [student d_model x teacher d_model] projection; created by the
  /// trainer when undefined.
  Tensor projection;
};

/// Training on combined_loss(task, distill(soft labels, soften(student, T))).
/// Feature mode adds feature_weight * MSE(student_final·P, teacher_final).
TrainReport train_student_distilled(EncoderModel& student, const SoftLabelStore& soft_labels, const Dataset& train,
                                    const Dataset* validation, const TrainConfig& cfg,
                                    FeatureTeacher* feature_teacher = nullptr);

struct MlmConfig {
  double mask_fraction = 0.15;
  std::size_t epochs = 1;
};

struct MlmReport {
  std::vector<double> batch_losses;
  std::size_t masked_tokens = 0;
};

/// Masked-token pre-training with a vocabulary head tied to W_e. Each
/// sequence has round(fraction * content) positions replaced by MASK; loss is
/// cross-entropy at those positions. The classifier head is not updated.
MlmReport pretrain_mlm(EncoderModel& model, const Dataset& corpus, const TrainConfig& cfg, const MlmConfig& mlm);

/// Masked-position loss for one batch without updating anything.
double mlm_loss(const EncoderModel& model, const Dataset& corpus, std::span<const std::size_t> indices,
                double mask_fraction, std::uint64_t seed);

}  // namespace tkd
