#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tkd/tensor.hpp"

namespace tkd {

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 50;
  // Includes the classification token at position 0.
  std::size_t max_seq_len = 16;
  std::size_t num_classes = 2;
  double layernorm_eps = 1e-5;

  std::size_t head_dim() const { return d_model / num_heads; }
  /// Throws ConfigError on any violated invariant.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Reference architecture: 12 layers, 8 heads. Widths are ours; only the
/// depth and head count are fixed.
ModelConfig reference_config();

struct EncoderLayerParams {
  Tensor w_q, w_k, w_v, w_o;  // [d_model x d_model], heads are column slices
  Tensor w_1, b_1;            // [d_model x d_ff], [d_ff]
  Tensor w_2, b_2;            // [d_ff x d_model], [d_model]
  Tensor ln1_gamma, ln1_beta;
  Tensor ln2_gamma, ln2_beta;
};

/// Padding mask for a batch, row-major [batch x seq]; nonzero = real token.
struct AttentionMask {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::uint8_t> keep;

  bool at(std::size_t b, std::size_t pos) const { return keep[b * seq_len + pos] != 0; }
};

/// Integer-encoded batch ready for the encoder.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::size_t> ids;  // [batch x seq_len]
  AttentionMask mask;
};

class EncoderModel {
 public:
  /// Scaled-uniform init: weights ~ U(±sqrt(6 / (fan_in + fan_out))), biases
  /// zero, layer-norm gamma 1 / beta 0.
  EncoderModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  Tensor embedding() const { return w_e_; }
  Tensor embedding_bias() const { return b_e_; }
  const std::vector<EncoderLayerParams>& layers() const { return layers_; }
  EncoderLayerParams& layer(std::size_t i) { return layers_.at(i); }
  Tensor classifier_weight() const { return w_cls_; }
  Tensor classifier_bias() const { return b_cls_; }

  /// All parameters in checkpoint order.
  std::vector<Tensor> parameters() const;
  /// Parameters excluding the classification head.
  std::vector<Tensor> encoder_parameters() const;
  std::size_t parameter_count() const;

  /// Deep copy with fresh parameter tensors.
  EncoderModel clone() const;

 private:
  ModelConfig config_;
  Tensor w_e_, b_e_;
  std::vector<EncoderLayerParams> layers_;
  Tensor w_cls_, b_cls_;
};

/// Closed-form count of scalar parameters for a configuration.
std::size_t parameter_count(const ModelConfig& config);

/// Row i is W_e[ids[i]] + b_e.
Tensor embed(std::span<const std::size_t> token_ids, const Tensor& w_e, const Tensor& b_e);

/// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same angle).
Tensor positional_encoding(std::size_t seq_len, std::size_t d_model);

/// softmax(Q K^T / sqrt(d_k)) V with masked key columns pushed to -1e9.
/// `key_mask` has one entry per key row; nonzero keeps the key.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::span<const std::uint8_t> key_mask);

/// Attention weights only, for inspection and tests.
Tensor attention_weights(const Tensor& q, const Tensor& k, std::span<const std::uint8_t> key_mask);

/// Multi-head self-attention over one sequence X [s x d_model].
Tensor multi_head_attention(const Tensor& x, const EncoderLayerParams& params, std::size_t num_heads,
                            std::span<const std::uint8_t> key_mask);

/// max(0, X W1 + b1) W2 + b2, row-wise.
Tensor feed_forward(const Tensor& x, const Tensor& w_1, const Tensor& b_1, const Tensor& w_2,
                    const Tensor& b_2);

/// Post-norm layer over a stacked batch X [batch*seq x d_model]:
/// Y = LN(X + MHA(X)), Z = LN(Y + FFN(Y)).
Tensor encoder_layer_forward(const Tensor& x, const EncoderLayerParams& params, std::size_t num_heads,
                             double layernorm_eps, const AttentionMask& mask);

struct EncoderOutput {
  Tensor hidden;  // [batch*seq x d_model], final layer
  Tensor logits;  // [batch x num_classes]
};

/// Embed, add positions, run every layer, classify the position-0 state.
EncoderOutput encode_full(const EncoderModel& model, const TokenBatch& batch);
Tensor encode(const EncoderModel& model, const TokenBatch& batch);

}  // namespace tkd
