#include "tkd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "tkd/distill.hpp"
#include "tkd/error.hpp"
#include "tkd/rng.hpp"

namespace tkd {

GradCheckResult finite_diff_check(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                                  double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_check: step h must be positive");

  const Tensor loss = loss_fn();
  const double base = loss.item();
  {
    NoGradGuard no_grad;
    if (loss_fn().item() != base) {
      throw ContractError("finite_diff_check: loss function is not deterministic");
    }
  }
  const GradientMap grads = backward(loss);

  GradCheckResult result;
  NoGradGuard no_grad;
  for (auto& p : params) {
    const Tensor analytic = grads.of(p);
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double plus = loss_fn().item();
      values[i] = saved - h;
      const double minus = loss_fn().item();
      values[i] = saved;

      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic.data()[i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++result.coordinates;
      if (err > result.max_rel_error || result.coordinates == 1) {
        result.max_rel_error = err;
        result.worst_param = p.name();
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckResult model_gradcheck(const ModelGradCheck& setup) {
  ModelConfig cfg = setup.config;
  cfg.max_seq_len = std::max(cfg.max_seq_len, setup.seq_len);
  cfg.validate();
  if (setup.seq_len < 2 || cfg.vocab_size < 5) throw ConfigError("gradcheck needs seq_len >= 2 and vocab_size >= 5");
  EncoderModel model(cfg, setup.seed);
  Rng rng(mix_seed(setup.seed, 1));

  TokenBatch batch;
  batch.batch = setup.batch;
  batch.seq_len = setup.seq_len;
  batch.ids.assign(setup.batch * setup.seq_len, Vocab::kPad);
  batch.mask = AttentionMask{setup.batch, setup.seq_len, std::vector<std::uint8_t>(setup.batch * setup.seq_len, 0)};
  for (std::size_t b = 0; b < setup.batch; ++b) {
    const std::size_t used = b % 2 ? setup.seq_len - 1 : setup.seq_len;
    for (std::size_t s = 0; s < used; ++s) {
      batch.ids[b * setup.seq_len + s] = s == 0 ? Vocab::kCls : 4 + rng.below(cfg.vocab_size - 4);
      batch.mask.keep[b * setup.seq_len + s] = 1;
    }
  }
  std::vector<std::size_t> labels(setup.batch);
  for (auto& l : labels) l = rng.below(cfg.num_classes);
  std::vector<double> targets(setup.batch * cfg.num_classes);
  for (std::size_t b = 0; b < setup.batch; ++b) {
    double sum = 0.0;
    for (std::size_t c = 0; c < cfg.num_classes; ++c) sum += targets[b * cfg.num_classes + c] = rng.uniform(0.1, 1.0);
    for (std::size_t c = 0; c < cfg.num_classes; ++c) targets[b * cfg.num_classes + c] /= sum;
  }
  const Tensor teacher = Tensor::from({setup.batch, cfg.num_classes}, targets);

  DistillConfig dc;
  dc.temperature = 2.0;
  dc.alpha = 0.5;
  auto loss_fn = [&]() {
    const Tensor logits = encode(model, batch);
    return combined_loss(task_loss(labels, softmax_rows(logits)), distill_loss(teacher, soften(logits, dc.temperature)),
                         dc);
  };
  return finite_diff_check(loss_fn, model.parameters(), setup.h);
}

}  // namespace tkd
