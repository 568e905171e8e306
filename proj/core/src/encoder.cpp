#include "tkd/encoder.hpp"

#include <cmath>

#include "tkd/error.hpp"
#include "tkd/rng.hpp"

namespace tkd {

namespace {

constexpr double kMaskedScore = -1e9;

Tensor uniform_param(Rng& rng, std::size_t fan_in, std::size_t fan_out, Shape shape, std::string name) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::parameter(std::move(shape), std::move(v), std::move(name));
}

Tensor const_param(std::size_t n, double value, std::string name) {
  return Tensor::parameter({n}, std::vector<double>(n, value), std::move(name));
}

// Heads are column slices of the fused projections; outputs are stitched
// back in head order.
Tensor attend_heads(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t num_heads,
                    std::span<const std::uint8_t> key_mask) {
  if (num_heads == 1) return scaled_dot_attention(q, k, v, key_mask);
  const auto qs = split_cols(q, num_heads);
  const auto ks = split_cols(k, num_heads);
  const auto vs = split_cols(v, num_heads);
  std::vector<Tensor> heads;
  heads.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) heads.push_back(scaled_dot_attention(qs[h], ks[h], vs[h], key_mask));
  return concat_cols(heads);
}

Tensor mask_bias(std::size_t queries, std::span<const std::uint8_t> key_mask) {
  const std::size_t keys = key_mask.size();
  std::vector<double> bias(queries * keys, 0.0);
  for (std::size_t i = 0; i < queries; ++i)
    for (std::size_t j = 0; j < keys; ++j)
      if (!key_mask[j]) bias[i * keys + j] = kMaskedScore;
  return Tensor::from({queries, keys}, std::move(bias));
}

Tensor masked_scores(const Tensor& q, const Tensor& k, std::span<const std::uint8_t> key_mask) {
  if (q.shape().size() != 2 || k.shape().size() != 2 || q.cols() != k.cols()) {
    throw ShapeError("attention: query " + shape_string(q.shape()) + " and key " + shape_string(k.shape()) +
                     " widths disagree");
  }
  if (key_mask.size() != k.rows()) {
    throw ShapeError("attention: mask length " + std::to_string(key_mask.size()) + " does not cover " +
                     std::to_string(k.rows()) + " keys");
  }
  bool any = false;
  for (auto m : key_mask) any = any || m;
  if (!any) throw ContractError("attention: every key position is masked");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt);
  return add(scores, mask_bias(q.rows(), key_mask));
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (num_heads < 1) fail("num_heads must be >= 1");
  if (d_model < 2) fail("d_model must be >= 2");
  if (d_model % 2 != 0) fail("d_model must be even for sinusoidal positional encoding");
  if (d_model % num_heads != 0) fail("num_heads must divide d_model");
  if (d_ff < 1) fail("d_ff must be >= 1");
  if (vocab_size < 4) fail("vocab_size must be >= 4");
  if (max_seq_len < 2) fail("max_seq_len must be >= 2");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (!(layernorm_eps > 0.0)) fail("layernorm_eps must be > 0");
}

ModelConfig reference_config() {
  ModelConfig c;
  c.num_layers = 12;
  c.num_heads = 8;
  c.d_model = 256;
  c.d_ff = 1024;
  c.max_seq_len = 128;
  return c;
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff;
  const std::size_t per_layer = 4 * d * d + d * f + f + f * d + d + 4 * d;
  return c.vocab_size * d + d + c.num_layers * per_layer + d * c.num_classes + c.num_classes;
}

EncoderModel::EncoderModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.d_model, f = config_.d_ff;
  w_e_ = uniform_param(rng, config_.vocab_size, d, {config_.vocab_size, d}, "embed.W_e");
  b_e_ = const_param(d, 0.0, "embed.b_e");
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    EncoderLayerParams layer;
    layer.w_q = uniform_param(rng, d, d, {d, d}, p + "attn.W_q");
    layer.w_k = uniform_param(rng, d, d, {d, d}, p + "attn.W_k");
    layer.w_v = uniform_param(rng, d, d, {d, d}, p + "attn.W_v");
    layer.w_o = uniform_param(rng, d, d, {d, d}, p + "attn.W_o");
    layer.w_1 = uniform_param(rng, d, f, {d, f}, p + "ffn.W_1");
    layer.b_1 = const_param(f, 0.0, p + "ffn.b_1");
    layer.w_2 = uniform_param(rng, f, d, {f, d}, p + "ffn.W_2");
    layer.b_2 = const_param(d, 0.0, p + "ffn.b_2");
    layer.ln1_gamma = const_param(d, 1.0, p + "ln1.gamma");
    layer.ln1_beta = const_param(d, 0.0, p + "ln1.beta");
    layer.ln2_gamma = const_param(d, 1.0, p + "ln2.gamma");
    layer.ln2_beta = const_param(d, 0.0, p + "ln2.beta");
    layers_.push_back(std::move(layer));
  }
  w_cls_ = uniform_param(rng, d, config_.num_classes, {d, config_.num_classes}, "cls.W");
  b_cls_ = const_param(config_.num_classes, 0.0, "cls.b");
}

std::vector<Tensor> EncoderModel::encoder_parameters() const {
  std::vector<Tensor> out{w_e_, b_e_};
  for (const auto& l : layers_) {
    out.insert(out.end(), {l.w_q, l.w_k, l.w_v, l.w_o, l.w_1, l.b_1, l.w_2, l.b_2, l.ln1_gamma, l.ln1_beta,
                           l.ln2_gamma, l.ln2_beta});
  }
  return out;
}

std::vector<Tensor> EncoderModel::parameters() const {
  auto out = encoder_parameters();
  out.push_back(w_cls_);
  out.push_back(b_cls_);
  return out;
}

std::size_t EncoderModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

EncoderModel EncoderModel::clone() const {
  EncoderModel copy = *this;
  copy.w_e_ = w_e_.clone();
  copy.b_e_ = b_e_.clone();
  for (auto& l : copy.layers_) {
    for (Tensor* t : {&l.w_q, &l.w_k, &l.w_v, &l.w_o, &l.w_1, &l.b_1, &l.w_2, &l.b_2, &l.ln1_gamma, &l.ln1_beta,
                      &l.ln2_gamma, &l.ln2_beta}) {
      *t = t->clone();
    }
  }
  copy.w_cls_ = w_cls_.clone();
  copy.b_cls_ = b_cls_.clone();
  return copy;
}

Tensor embed(std::span<const std::size_t> token_ids, const Tensor& w_e, const Tensor& b_e) {
  const std::size_t vocab = w_e.rows();
  for (auto id : token_ids) {
    if (id >= vocab) {
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(vocab));
    }
  }
  return add_row_vector(gather_rows(w_e, token_ids), b_e);
}

Tensor positional_encoding(std::size_t seq_len, std::size_t d_model) {
  if (d_model == 0 || d_model % 2 != 0) {
    throw ConfigError("positional encoding requires an even d_model, got " + std::to_string(d_model));
  }
  std::vector<double> pe(seq_len * d_model);
  for (std::size_t pos = 0; pos < seq_len; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe[pos * d_model + 2 * i] = std::sin(angle);
      pe[pos * d_model + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from({seq_len, d_model}, std::move(pe));
}

Tensor attention_weights(const Tensor& q, const Tensor& k, std::span<const std::uint8_t> key_mask) {
  return softmax_rows(masked_scores(q, k, key_mask));
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::span<const std::uint8_t> key_mask) {
  if (v.shape().size() != 2 || v.rows() != k.rows()) {
    throw ShapeError("attention: value " + shape_string(v.shape()) + " does not match key " +
                     shape_string(k.shape()));
  }
  return matmul(attention_weights(q, k, key_mask), v);
}

Tensor multi_head_attention(const Tensor& x, const EncoderLayerParams& params, std::size_t num_heads,
                            std::span<const std::uint8_t> key_mask) {
  const Tensor q = matmul(x, params.w_q);
  const Tensor k = matmul(x, params.w_k);
  const Tensor v = matmul(x, params.w_v);
  return matmul(attend_heads(q, k, v, num_heads, key_mask), params.w_o);
}

Tensor feed_forward(const Tensor& x, const Tensor& w_1, const Tensor& b_1, const Tensor& w_2,
                    const Tensor& b_2) {
  const Tensor hidden = relu(add_row_vector(matmul(x, w_1), b_1));
  return add_row_vector(matmul(hidden, w_2), b_2);
}

Tensor encoder_layer_forward(const Tensor& x, const EncoderLayerParams& params, std::size_t num_heads,
                             double layernorm_eps, const AttentionMask& mask) {
  const std::size_t s = mask.seq_len;
  if (x.shape().size() != 2 || x.rows() != mask.batch * s) {
    throw ShapeError("encoder layer: input " + shape_string(x.shape()) + " does not match mask " +
                     std::to_string(mask.batch) + "x" + std::to_string(s));
  }
  // Projections act row-wise, so they run once over the stacked batch.
  const Tensor q = matmul(x, params.w_q);
  const Tensor k = matmul(x, params.w_k);
  const Tensor v = matmul(x, params.w_v);
  std::vector<Tensor> per_example;
  per_example.reserve(mask.batch);
  for (std::size_t b = 0; b < mask.batch; ++b) {
    const std::span<const std::uint8_t> keys(mask.keep.data() + b * s, s);
    if (mask.batch == 1) {
      per_example.push_back(attend_heads(q, k, v, num_heads, keys));
    } else {
      per_example.push_back(attend_heads(slice_rows(q, b * s, (b + 1) * s), slice_rows(k, b * s, (b + 1) * s),
                                         slice_rows(v, b * s, (b + 1) * s), num_heads, keys));
    }
  }
  const Tensor heads = mask.batch == 1 ? per_example[0] : concat_rows(per_example);
  const Tensor attn = matmul(heads, params.w_o);
  const Tensor y = layer_norm(add(x, attn), params.ln1_gamma, params.ln1_beta, layernorm_eps);
  const Tensor ffn = feed_forward(y, params.w_1, params.b_1, params.w_2, params.b_2);
  return layer_norm(add(y, ffn), params.ln2_gamma, params.ln2_beta, layernorm_eps);
}

EncoderOutput encode_full(const EncoderModel& model, const TokenBatch& batch) {
  const ModelConfig& c = model.config();
  if (batch.seq_len > c.max_seq_len) {
    throw LengthError("sequence length " + std::to_string(batch.seq_len) + " exceeds max_seq_len " +
                      std::to_string(c.max_seq_len));
  }
  if (batch.batch == 0 || batch.ids.size() != batch.batch * batch.seq_len ||
      batch.mask.keep.size() != batch.ids.size() || batch.mask.seq_len != batch.seq_len) {
    throw ShapeError("token batch: ids / mask sizes are inconsistent");
  }
  for (std::size_t b = 0; b < batch.batch; ++b) {
    if (!batch.mask.at(b, 0)) throw ContractError("token batch: classification position must be unmasked");
  }

  const std::size_t s = batch.seq_len, d = c.d_model;
  const Tensor pe = positional_encoding(s, d);
  std::vector<double> tiled(batch.batch * s * d);
  for (std::size_t b = 0; b < batch.batch; ++b)
    std::copy(pe.data().begin(), pe.data().end(), tiled.begin() + static_cast<std::ptrdiff_t>(b * s * d));

  Tensor h = add(embed(batch.ids, model.embedding(), model.embedding_bias()),
                 Tensor::from({batch.batch * s, d}, std::move(tiled)));
  for (const auto& layer : model.layers()) {
    h = encoder_layer_forward(h, layer, c.num_heads, c.layernorm_eps, batch.mask);
  }
  std::vector<std::size_t> cls_rows(batch.batch);
  for (std::size_t b = 0; b < batch.batch; ++b) cls_rows[b] = b * s;
  const Tensor cls = gather_rows(h, cls_rows);
  Tensor logits = add_row_vector(matmul(cls, model.classifier_weight()), model.classifier_bias());
  return {h, logits};
}

Tensor encode(const EncoderModel& model, const TokenBatch& batch) { return encode_full(model, batch).logits; }

}  // namespace tkd
