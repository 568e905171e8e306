#include "tkd/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include "tkd/error.hpp"
#include "tkd/rng.hpp"

namespace tkd {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Sub-seed streams derived from TrainConfig::seed.
constexpr std::uint64_t kShuffleStream = 1000;
constexpr std::uint64_t kMaskStream = 2000;
constexpr std::uint64_t kProjectionStream = 3000;

void check_compatible(const EncoderModel& model, const Dataset& data) {
  const auto& c = model.config();
  if (data.num_classes != c.num_classes) {
    throw ContractError("dataset has " + std::to_string(data.num_classes) + " classes, model predicts " +
                        std::to_string(c.num_classes));
  }
  if (data.vocab_size > c.vocab_size) {
    throw ContractError("dataset vocabulary (" + std::to_string(data.vocab_size) + ") exceeds model vocabulary (" +
                        std::to_string(c.vocab_size) + ")");
  }
  if (data.max_seq_len > c.max_seq_len) {
    throw LengthError("dataset sequences (" + std::to_string(data.max_seq_len) + ") exceed max_seq_len " +
                      std::to_string(c.max_seq_len));
  }
}

std::vector<std::size_t> labels_of(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data.examples[i].label);
  return out;
}

using BatchLossFn = std::function<Tensor(const EncoderOutput&, std::span<const std::size_t>)>;

TrainReport fit(EncoderModel& model, std::vector<Tensor> params, const Dataset& train, const Dataset* validation,
                const TrainConfig& cfg, const BatchLossFn& loss_fn) {
  cfg.validate();
  if (train.empty()) throw ContractError("training dataset is empty");
  check_compatible(model, train);
  if (validation) check_compatible(model, *validation);

  const auto run_start = Clock::now();
  TrainReport report;
  OptimizerState state;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    const auto batches = batch_iter(train, cfg.batch_size, mix_seed(cfg.seed, kShuffleStream + epoch));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const EncoderOutput out = encode_full(model, make_batch(train, batches[b]));
      const Tensor loss = loss_fn(out, batches[b]);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw TrainingError("loss diverged (" + std::to_string(value) + ") at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(b + 1));
      }
      GradientMap grads = backward(loss);
      if (cfg.grad_clip > 0.0) clip_grad_norm(params, grads, cfg.grad_clip);
      optimizer_step(params, grads, state, cfg);
      report.batch_losses.push_back(value);
      loss_sum += value;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches.size());
    rec.train_acc = evaluate(model, train).accuracy;
    if (validation) {
      const MetricsReport val = evaluate(model, *validation);
      rec.val_acc = val.accuracy;
      rec.val_f1 = val.macro_f1;
      if (epoch == cfg.epochs) report.final_validation = val;
    }
    rec.seconds = seconds_since(epoch_start);
    report.epochs.push_back(rec);
  }
  report.wall_seconds = seconds_since(run_start);
  return report;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in (0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (distill) distill->validate();
}

void optimizer_step(std::span<Tensor> params, const GradientMap& grads, OptimizerState& state,
                    const TrainConfig& cfg) {
  for (const auto& p : params) {
    const Tensor g = grads.of(p);
    if (g.shape() != p.shape()) throw ShapeError("gradient shape mismatch for parameter " + p.name());
    for (double v : g.data()) {
      if (!std::isfinite(v)) throw TrainingError("non-finite gradient in parameter " + p.name());
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : params) {
    const Tensor g = grads.of(p);
    auto& mom = state.moments[p.id()];
    if (mom.m.empty()) {
      mom.m.assign(p.size(), 0.0);
      mom.v.assign(p.size(), 0.0);
    }
    auto theta = p.mutable_data();
    const auto gd = g.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * gd[i];
      mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      const double old = theta[i];
      theta[i] = old - cfg.learning_rate * (m_hat / (std::sqrt(v_hat) + cfg.adam_eps)) -
                 cfg.learning_rate * cfg.weight_decay * old;
    }
  }
}

double clip_grad_norm(std::span<const Tensor> params, GradientMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!grads.contains(p)) continue;
    for (double v : grads.of(p).data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const double factor = max_norm / norm;
    for (const auto& p : params) {
      if (!grads.contains(p)) continue;
      Tensor g = grads.of(p);
      for (auto& v : g.mutable_data()) v *= factor;
    }
  }
  return norm;
}

std::string TrainReport::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,train_acc,val_acc,val_f1,seconds\n";
  char buf[256];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.3f\n", e.epoch, e.train_loss, e.train_acc,
                  e.val_acc, e.val_f1, e.seconds);
    os << buf;
  }
  return os.str();
}

std::vector<std::size_t> predict(const EncoderModel& model, const Dataset& dataset, std::size_t batch_size) {
  check_compatible(model, dataset);
  NoGradGuard no_grad;
  std::vector<std::size_t> out;
  out.reserve(dataset.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(dataset.size(), start + batch_size); ++i) idx.push_back(i);
    const Tensor logits = encode(model, make_batch(dataset, idx));
    const std::size_t c = logits.cols();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k)
        if (logits.at(r, k) > logits.at(r, best)) best = k;
      out.push_back(best);
    }
  }
  return out;
}

MetricsReport evaluate(const EncoderModel& model, const Dataset& dataset) {
  if (dataset.empty()) throw ContractError("evaluate: dataset is empty");
  const auto preds = predict(model, dataset);
  const auto labels = labels_of(dataset, [&] {
    std::vector<std::size_t> all(dataset.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }());
  return score_predictions(preds, labels, dataset.num_classes);
}

TrainReport train_classifier(EncoderModel& model, const Dataset& train, const Dataset* validation,
                             const TrainConfig& cfg) {
  return fit(model, model.parameters(), train, validation, cfg,
             [&](const EncoderOutput& out, std::span<const std::size_t> idx) {
               return task_loss(labels_of(train, idx), softmax_rows(out.logits));
             });
}

TrainReport train_student_distilled(EncoderModel& student, const SoftLabelStore& soft_labels, const Dataset& train,
                                    const Dataset* validation, const TrainConfig& cfg,
                                    FeatureTeacher* feature_teacher) {
  if (!cfg.distill) throw ContractError("distilled training requires a DistillConfig");
  const DistillConfig dc = *cfg.distill;
  soft_labels.check_covers(train);

  std::vector<Tensor> params = student.parameters();
  const bool feature = dc.mode == DistillMode::OutputPlusFeature;
  if (feature) {
    if (!feature_teacher || !feature_teacher->teacher) {
      throw ContractError("feature distillation needs the teacher model");
    }
    const std::size_t ds = student.config().d_model, dt = feature_teacher->teacher->config().d_model;
    if (!feature_teacher->projection.defined()) {
      Rng rng(mix_seed(cfg.seed, kProjectionStream));
      const double bound = std::sqrt(6.0 / static_cast<double>(ds + dt));
      std::vector<double> v(ds * dt);
      for (auto& x : v) x = rng.uniform(-bound, bound);
      feature_teacher->projection = Tensor::parameter({ds, dt}, std::move(v), "feature.P");
    }
    params.push_back(feature_teacher->projection);
  }

  const std::size_t c = train.num_classes;
  return fit(student, params, train, validation, cfg, [&](const EncoderOutput& out, std::span<const std::size_t> idx) {
    std::vector<double> teacher(idx.size() * c);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& p = soft_labels.at(train.examples[idx[r]].example_id);
      std::copy(p.begin(), p.end(), teacher.begin() + static_cast<std::ptrdiff_t>(r * c));
    }
    const Tensor teacher_probs = Tensor::from({idx.size(), c}, std::move(teacher));
    const Tensor l_task = task_loss(labels_of(train, idx), softmax_rows(out.logits));
    const Tensor l_distill = distill_loss(teacher_probs, soften(out.logits, dc.temperature));
    Tensor loss = combined_loss(l_task, l_distill, dc);
    if (feature) {
      Tensor teacher_hidden;
      {
        NoGradGuard no_grad;
        teacher_hidden = encode_full(*feature_teacher->teacher, make_batch(train, idx)).hidden;
      }
      const Tensor l_feat = feature_distill_loss(teacher_hidden, out.hidden, feature_teacher->projection);
      loss = add(loss, scale(l_feat, dc.feature_weight));
    }
    return loss;
  });
}

namespace {

struct MaskedBatch {
  TokenBatch batch;
  std::vector<std::size_t> rows;     // rows of the stacked hidden states
  std::vector<std::size_t> targets;  // original token ids
};

MaskedBatch mask_batch(const Dataset& corpus, std::span<const std::size_t> idx, double fraction, Rng& rng) {
  MaskedBatch mb{make_batch(corpus, idx), {}, {}};
  const std::size_t s = mb.batch.seq_len;
  for (std::size_t b = 0; b < mb.batch.batch; ++b) {
    std::vector<std::size_t> content;
    for (std::size_t pos = 1; pos < s; ++pos)
      if (mb.batch.mask.at(b, pos)) content.push_back(pos);
    const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(content.size())));
    if (k == 0) continue;
    const auto order = rng.permutation(content.size());
    std::vector<std::size_t> chosen;
    for (std::size_t j = 0; j < k; ++j) chosen.push_back(content[order[j]]);
    std::sort(chosen.begin(), chosen.end());
    for (auto pos : chosen) {
      mb.rows.push_back(b * s + pos);
      mb.targets.push_back(mb.batch.ids[b * s + pos]);
      mb.batch.ids[b * s + pos] = Vocab::kMask;
    }
  }
  return mb;
}

Tensor masked_lm_loss(const EncoderModel& model, const MaskedBatch& mb) {
  const Tensor hidden = encode_full(model, mb.batch).hidden;
  const Tensor logits = matmul(gather_rows(hidden, mb.rows), transpose(model.embedding()));
  return task_loss(mb.targets, softmax_rows(logits));
}

}  // namespace

MlmReport pretrain_mlm(EncoderModel& model, const Dataset& corpus, const TrainConfig& cfg, const MlmConfig& mlm) {
  cfg.validate();
  if (!(mlm.mask_fraction >= 0.0 && mlm.mask_fraction <= 1.0)) throw ConfigError("mask_fraction must be in [0, 1]");
  if (corpus.size() < cfg.batch_size) {
    throw ContractError("pre-training corpus (" + std::to_string(corpus.size()) + " sequences) is shorter than one batch (" +
                        std::to_string(cfg.batch_size) + ")");
  }
  if (corpus.vocab_size > model.config().vocab_size || corpus.max_seq_len > model.config().max_seq_len) {
    throw ContractError("pre-training corpus does not fit the model vocabulary / length");
  }
  std::vector<Tensor> params = model.encoder_parameters();
  MlmReport report;
  OptimizerState state;
  Rng mask_rng(mix_seed(cfg.seed, kMaskStream));
  for (std::size_t epoch = 1; epoch <= mlm.epochs; ++epoch) {
    const auto batches = batch_iter(corpus, cfg.batch_size, mix_seed(cfg.seed, kShuffleStream + epoch));
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const MaskedBatch mb = mask_batch(corpus, batches[b], mlm.mask_fraction, mask_rng);
      if (mb.rows.empty()) continue;
      const Tensor loss = masked_lm_loss(model, mb);
      if (!std::isfinite(loss.item())) {
        throw TrainingError("pre-training loss diverged at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(b + 1));
      }
      GradientMap grads = backward(loss);
      if (cfg.grad_clip > 0.0) clip_grad_norm(params, grads, cfg.grad_clip);
      optimizer_step(params, grads, state, cfg);
      report.batch_losses.push_back(loss.item());
      report.masked_tokens += mb.rows.size();
    }
  }
  return report;
}

double mlm_loss(const EncoderModel& model, const Dataset& corpus, std::span<const std::size_t> indices,
                double mask_fraction, std::uint64_t seed) {
  Rng rng(seed);
  const MaskedBatch mb = mask_batch(corpus, indices, mask_fraction, rng);
  if (mb.rows.empty()) throw ContractError("mlm_loss: no positions were masked");
  NoGradGuard no_grad;
  return masked_lm_loss(model, mb).item();
}

}  // namespace tkd
