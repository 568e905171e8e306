#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tkd/encoder.hpp"

namespace tkd {

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kMask = 3;
  static constexpr std::string_view kSeparator = "[SEP]";

  /// Reserved tokens only.
  Vocab();

  std::size_t size() const { return tokens_.size(); }
  /// Id of `token`, UNK when absent.
  std::size_t id(std::string_view token) const;
  std::optional<std::size_t> find(std::string_view token) const;
  const std::string& token(std::size_t id) const;
  std::size_t add(const std::string& token);
  std::optional<std::size_t> separator_id() const { return find(kSeparator); }

  std::size_t min_frequency = 1;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Example {
  std::uint64_t example_id = 0;
  std::vector<std::size_t> token_ids;  // CLS-prefixed, PAD-filled
  std::vector<std::uint8_t> mask;      // 1 on CLS + content
  std::size_t label = 0;
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t num_classes = 2;
  std::size_t max_seq_len = 0;
  std::size_t vocab_size = 0;
  std::string split;
  std::string provenance;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  /// Throws ContractError if an example breaks a length/mask/label/id invariant.
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

bool operator==(const Example& a, const Example& b);

/// Lowercase ASCII letters, drop ASCII punctuation (so "don't" -> "dont"),
/// split on whitespace runs. Non-ASCII bytes pass through unchanged.
std::vector<std::string> normalize_text(std::string_view raw);

/// Tokens with count >= min_freq, ordered by descending count then
/// lexicographically, after the reserved ids 0..3 (and [SEP] at 4 when
/// `with_separator`).
Vocab build_vocab(std::span<const std::vector<std::string>> corpus, std::size_t min_freq,
                  bool with_separator = false);

/// [CLS] + ids (UNK for unknown tokens), truncated to max_seq_len - 1 content
/// positions and PAD-filled to max_seq_len.
Example encode_example(std::span<const std::string> tokens, std::size_t label, const Vocab& vocab,
                       std::size_t max_seq_len, std::size_t num_classes, std::uint64_t example_id = 0);

/// Column selection for GLUE-style tab-separated files. When `bins` > 0 the
/// label column is numeric and is binned uniformly over [bin_min, bin_max].
struct TsvSchema {
  std::vector<std::string> sentence_cols;
  std::string label_col;
  std::size_t bins = 0;
  double bin_min = 0.0;
  double bin_max = 5.0;

  bool is_pair() const { return sentence_cols.size() > 1; }
};

/// Cleaned, tokenized rows of a TSV file, before integer encoding.
struct TextCorpus {
  std::vector<std::vector<std::string>> tokens;
  std::vector<std::size_t> labels;
  std::vector<std::string> label_names;
  std::size_t duplicates = 0;
  std::size_t missing = 0;
  bool pair = false;
  std::string provenance;
};

/// Header-aware parse. Exact duplicate rows are dropped (first kept), rows
/// with missing fields are dropped and counted. `known_labels` keep their ids;
/// new label names follow in sorted order (numeric when all are integers).
TextCorpus load_tsv(const std::filesystem::path& path, const TsvSchema& schema,
                    std::span<const std::string> known_labels = {});

Dataset make_dataset(const TextCorpus& corpus, const Vocab& vocab, std::size_t max_seq_len,
                     std::size_t num_classes, std::string split);

enum class SynthKind { Keyword, Parity, Majority };

std::string to_string(SynthKind kind);
SynthKind parse_synth_kind(std::string_view text);

// Token ids used by the generators.
inline constexpr std::size_t kKeywordTrigger = 4;
inline constexpr std::size_t kParityToken = 4;

/// Deterministic binary task. keyword: label 1 iff the trigger id occurs;
/// parity: label = parity of the count of the parity token; majority: label 1
/// iff tokens from the upper half of the content range outnumber the lower
/// half. Classes alternate so counts differ by at most one.
Dataset synth_task(SynthKind kind, std::uint64_t seed, std::size_t n_examples, std::size_t vocab_size,
                   std::size_t seq_len);

/// Reassigns round(fraction * n) labels to a different class.
void apply_label_noise(Dataset& dataset, double fraction, std::uint64_t seed);

/// Seeded permutation sliced into consecutive batches; the last partial batch
/// is kept. Returns indices into `dataset.examples`.
std::vector<std::vector<std::size_t>> batch_iter(const Dataset& dataset, std::size_t batch_size,
                                                 std::uint64_t epoch_seed);

TokenBatch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);

/// Where the train and validation splits come from.
struct DataSpec {
  // "synth:keyword" | "synth:parity" | "synth:majority" | path to a TSV file.
  std::string source;
  std::string val_source;  // TSV only
  TsvSchema schema;
  std::size_t train_size = 512;
  std::size_t val_size = 128;
  std::size_t vocab_size = 50;
  std::size_t max_seq_len = 16;
  std::uint64_t data_seed = 7;
  double label_noise = 0.0;
  std::size_t min_freq = 1;

  bool is_synthetic() const { return source.rfind("synth:", 0) == 0; }
};

struct Splits {
  Dataset train;
  Dataset validation;
  std::optional<Vocab> vocab;
};

Splits load_splits(const DataSpec& spec);

/// `config` widened to the dataset's vocabulary and sequence length, with the
/// dataset's class count.
ModelConfig fit_to_data(ModelConfig config, const Dataset& dataset);

}  // namespace tkd
