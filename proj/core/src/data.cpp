#include "tkd/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <unordered_set>

#include "tkd/error.hpp"
#include "tkd/rng.hpp"

namespace tkd {

namespace {

bool is_ascii_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
}

bool is_ascii_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::optional<long long> as_integer(const std::string& s) {
  long long v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) return std::nullopt;
  return v;
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return is_ascii_space(static_cast<unsigned char>(c)); });
}

}  // namespace

// ---- Vocab -----------------------------------------------------------------

Vocab::Vocab() {
  for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[MASK]"}) add(t);
}

std::size_t Vocab::add(const std::string& token) {
  auto [it, inserted] = index_.emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

std::optional<std::size_t> Vocab::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocab::id(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocab::token(std::size_t id) const {
  if (id >= tokens_.size()) throw VocabularyError("token id " + std::to_string(id) + " not in vocabulary");
  return tokens_[id];
}

// ---- Dataset ---------------------------------------------------------------

bool operator==(const Example& a, const Example& b) {
  return a.example_id == b.example_id && a.token_ids == b.token_ids && a.mask == b.mask && a.label == b.label;
}

void Dataset::validate() const {
  std::unordered_set<std::uint64_t> ids;
  for (const auto& e : examples) {
    const auto where = " (example " + std::to_string(e.example_id) + ")";
    if (!ids.insert(e.example_id).second) throw ContractError("dataset: duplicate example id" + where);
    if (e.token_ids.size() != max_seq_len || e.mask.size() != max_seq_len)
      throw ContractError("dataset: example length differs from max_seq_len" + where);
    if (e.token_ids[0] != Vocab::kCls || !e.mask[0]) throw ContractError("dataset: position 0 must be CLS" + where);
    if (e.label >= num_classes) throw ContractError("dataset: label out of range" + where);
    for (std::size_t i = 0; i < max_seq_len; ++i) {
      if (vocab_size && e.token_ids[i] >= vocab_size) throw ContractError("dataset: token id out of range" + where);
      if (!e.mask[i] && e.token_ids[i] != Vocab::kPad) throw ContractError("dataset: masked position not PAD" + where);
    }
  }
}

// ---- preprocessing ---------------------------------------------------------

std::vector<std::string> normalize_text(std::string_view raw) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : raw) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_ascii_space(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else if (is_ascii_punct(c)) {
      continue;
    } else if (c >= 'A' && c <= 'Z') {
      current.push_back(static_cast<char>(c - 'A' + 'a'));
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocab build_vocab(std::span<const std::vector<std::string>> corpus, std::size_t min_freq, bool with_separator) {
  if (min_freq < 1) throw ContractError("build_vocab: min_freq must be >= 1");
  Vocab vocab;
  vocab.min_frequency = min_freq;
  if (with_separator) vocab.add(std::string(Vocab::kSeparator));
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus)
    for (const auto& t : doc) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [token, n] : counts) {
    if (n >= min_freq && !vocab.find(token)) ranked.emplace_back(token, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [token, n] : ranked) vocab.add(token);
  return vocab;
}

Example encode_example(std::span<const std::string> tokens, std::size_t label, const Vocab& vocab,
                       std::size_t max_seq_len, std::size_t num_classes, std::uint64_t example_id) {
  if (max_seq_len < 2) throw ContractError("encode_example: max_seq_len must be >= 2");
  if (label >= num_classes) {
    throw ContractError("encode_example: label " + std::to_string(label) + " outside " +
                        std::to_string(num_classes) + " classes");
  }
  Example e;
  e.example_id = example_id;
  e.label = label;
  e.token_ids.assign(max_seq_len, Vocab::kPad);
  e.mask.assign(max_seq_len, 0);
  e.token_ids[0] = Vocab::kCls;
  e.mask[0] = 1;
  const std::size_t n = std::min(tokens.size(), max_seq_len - 1);
  for (std::size_t i = 0; i < n; ++i) {
    e.token_ids[i + 1] = vocab.id(tokens[i]);
    e.mask[i + 1] = 1;
  }
  return e;
}

// ---- TSV -------------------------------------------------------------------

TextCorpus load_tsv(const std::filesystem::path& path, const TsvSchema& schema,
                    std::span<const std::string> known_labels) {
  if (schema.sentence_cols.empty()) throw SchemaError("schema names no sentence column");
  if (schema.label_col.empty()) throw SchemaError("schema names no label column");
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + " is empty (no header row)");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("column '" + name + "' not found in " + path.string());
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> sentence_idx;
  for (const auto& c : schema.sentence_cols) sentence_idx.push_back(column(c));
  const std::size_t label_idx = column(schema.label_col);

  TextCorpus corpus;
  corpus.pair = schema.is_pair();
  corpus.provenance = path.string();
  corpus.label_names.assign(known_labels.begin(), known_labels.end());
  std::unordered_map<std::string, std::size_t> label_ids;
  for (std::size_t i = 0; i < corpus.label_names.size(); ++i) label_ids.emplace(corpus.label_names[i], i);
  if (schema.bins > 0) {
    corpus.label_names.clear();
    for (std::size_t b = 0; b < schema.bins; ++b) corpus.label_names.push_back("bin" + std::to_string(b));
  }

  std::unordered_set<std::string> seen_rows;
  std::vector<std::string> raw_labels;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    bool complete = label_idx < fields.size() && !is_blank(fields[label_idx]);
    for (auto idx : sentence_idx) complete = complete && idx < fields.size() && !is_blank(fields[idx]);
    if (!complete) {
      ++corpus.missing;
      continue;
    }
    if (!seen_rows.insert(line).second) {
      ++corpus.duplicates;
      continue;
    }

    std::size_t label = 0;
    const std::string& raw_label = fields[label_idx];
    if (schema.bins > 0) {
      double score = 0.0;
      try {
        score = std::stod(raw_label);
      } catch (const std::exception&) {
        ++corpus.missing;
        continue;
      }
      const double t = (score - schema.bin_min) / (schema.bin_max - schema.bin_min);
      const double b = std::floor(t * static_cast<double>(schema.bins));
      label = static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(schema.bins - 1)));
    } else {
      raw_labels.push_back(raw_label);
    }

    std::vector<std::string> tokens;
    for (std::size_t k = 0; k < sentence_idx.size(); ++k) {
      if (k > 0) tokens.emplace_back(Vocab::kSeparator);
      auto part = normalize_text(fields[sentence_idx[k]]);
      tokens.insert(tokens.end(), part.begin(), part.end());
    }
    corpus.tokens.push_back(std::move(tokens));
    corpus.labels.push_back(label);
  }

  if (schema.bins == 0) {
    std::vector<std::string> fresh;
    for (const auto& raw : raw_labels) {
      if (!label_ids.count(raw) && std::find(fresh.begin(), fresh.end(), raw) == fresh.end()) fresh.push_back(raw);
    }
    const bool numeric = std::all_of(fresh.begin(), fresh.end(), [](const std::string& v) { return as_integer(v).has_value(); });
    if (numeric) {
      std::sort(fresh.begin(), fresh.end(), [](const auto& a, const auto& b) { return *as_integer(a) < *as_integer(b); });
    } else {
      std::sort(fresh.begin(), fresh.end());
    }
    for (auto& name : fresh) {
      label_ids.emplace(name, corpus.label_names.size());
      corpus.label_names.push_back(std::move(name));
    }
    for (std::size_t i = 0; i < raw_labels.size(); ++i) corpus.labels[i] = label_ids.at(raw_labels[i]);
  }
  return corpus;
}

Dataset make_dataset(const TextCorpus& corpus, const Vocab& vocab, std::size_t max_seq_len,
                     std::size_t num_classes, std::string split) {
  Dataset ds;
  ds.num_classes = num_classes;
  ds.max_seq_len = max_seq_len;
  ds.vocab_size = vocab.size();
  ds.split = std::move(split);
  ds.provenance = corpus.provenance;
  ds.examples.reserve(corpus.tokens.size());
  for (std::size_t i = 0; i < corpus.tokens.size(); ++i) {
    ds.examples.push_back(encode_example(corpus.tokens[i], corpus.labels[i], vocab, max_seq_len, num_classes, i));
  }
  return ds;
}

// ---- synthetic tasks -------------------------------------------------------

std::string to_string(SynthKind kind) {
  switch (kind) {
    case SynthKind::Keyword: return "keyword";
    case SynthKind::Parity: return "parity";
    case SynthKind::Majority: return "majority";
  }
  return "unknown";
}

SynthKind parse_synth_kind(std::string_view text) {
  if (text == "keyword") return SynthKind::Keyword;
  if (text == "parity") return SynthKind::Parity;
  if (text == "majority") return SynthKind::Majority;
  throw ConfigError("unknown synthetic task '" + std::string(text) + "' (keyword | parity | majority)");
}

Dataset synth_task(SynthKind kind, std::uint64_t seed, std::size_t n_examples, std::size_t vocab_size,
                   std::size_t seq_len) {
  if (n_examples < 1) throw ContractError("synth_task: n_examples must be >= 1");
  if (vocab_size < 8) throw ContractError("synth_task: vocab_size must be >= 8");
  if (seq_len < 4) throw ContractError("synth_task: seq_len must be >= 4");
  Rng rng(seed);
  Dataset ds;
  ds.num_classes = 2;
  ds.max_seq_len = seq_len;
  ds.vocab_size = vocab_size;
  ds.split = "synthetic";
  ds.provenance = "synth:" + to_string(kind) + " seed=" + std::to_string(seed) + " n=" + std::to_string(n_examples) +
                  " vocab=" + std::to_string(vocab_size) + " seq_len=" + std::to_string(seq_len);

  const std::size_t max_content = seq_len - 1;
  const std::size_t min_content = std::max<std::size_t>(2, max_content / 2);
  // Content tokens avoid the reserved ids and the designated marker token.
  const std::size_t filler_lo = 5;
  const std::size_t filler_n = vocab_size - filler_lo;
  const std::size_t half_lo = 4, half_mid = 4 + (vocab_size - 4) / 2;

  for (std::size_t i = 0; i < n_examples; ++i) {
    const std::size_t label = i % 2;
    std::size_t len = min_content + rng.below(max_content - min_content + 1);
    std::vector<std::size_t> content(len);
    switch (kind) {
      case SynthKind::Keyword: {
        for (auto& t : content) t = filler_lo + rng.below(filler_n);
        if (label == 1) {
          const std::size_t hits = 1 + rng.below(2);
          for (std::size_t h = 0; h < hits; ++h) content[rng.below(len)] = kKeywordTrigger;
        }
        break;
      }
      case SynthKind::Parity: {
        for (auto& t : content) t = filler_lo + rng.below(filler_n);
        // Count with the requested parity, uniform over the valid counts.
        std::vector<std::size_t> counts;
        for (std::size_t c = 0; c <= len; ++c)
          if (c % 2 == label) counts.push_back(c);
        const std::size_t count = counts[rng.below(counts.size())];
        const auto positions = rng.permutation(len);
        for (std::size_t k = 0; k < count; ++k) content[positions[k]] = kParityToken;
        break;
      }
      case SynthKind::Majority: {
        if (len % 2 == 0) len = len > min_content ? len - 1 : len + 1;
        content.assign(len, 0);
        const std::size_t lower_n = half_mid - half_lo, upper_n = vocab_size - half_mid;
        // Upper-half tokens number more than len/2 exactly when label is 1.
        const std::size_t threshold = len / 2 + 1;
        const std::size_t upper = label == 1 ? threshold + rng.below(len - threshold + 1) : rng.below(threshold);
        const auto positions = rng.permutation(len);
        for (std::size_t k = 0; k < len; ++k) {
          content[positions[k]] = k < upper ? half_mid + rng.below(upper_n) : half_lo + rng.below(lower_n);
        }
        break;
      }
    }
    Example e;
    e.example_id = i;
    e.label = label;
    e.token_ids.assign(seq_len, Vocab::kPad);
    e.mask.assign(seq_len, 0);
    e.token_ids[0] = Vocab::kCls;
    e.mask[0] = 1;
    for (std::size_t k = 0; k < content.size(); ++k) {
      e.token_ids[k + 1] = content[k];
      e.mask[k + 1] = 1;
    }
    ds.examples.push_back(std::move(e));
  }
  return ds;
}

void apply_label_noise(Dataset& dataset, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw ContractError("label noise fraction must be in [0, 1]");
  if (fraction == 0.0 || dataset.empty()) return;
  Rng rng(seed);
  const auto order = rng.permutation(dataset.size());
  const auto flips = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(dataset.size())));
  for (std::size_t k = 0; k < flips; ++k) {
    auto& e = dataset.examples[order[k]];
    e.label = (e.label + 1 + rng.below(dataset.num_classes - 1)) % dataset.num_classes;
  }
}

std::vector<std::vector<std::size_t>> batch_iter(const Dataset& dataset, std::size_t batch_size,
                                                 std::uint64_t epoch_seed) {
  if (batch_size < 1) throw ContractError("batch_iter: batch_size must be >= 1");
  Rng rng(epoch_seed);
  const auto order = rng.permutation(dataset.size());
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

TokenBatch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  TokenBatch batch;
  batch.batch = indices.size();
  batch.seq_len = dataset.max_seq_len;
  batch.mask.batch = indices.size();
  batch.mask.seq_len = dataset.max_seq_len;
  batch.ids.reserve(indices.size() * dataset.max_seq_len);
  batch.mask.keep.reserve(indices.size() * dataset.max_seq_len);
  for (auto i : indices) {
    const Example& e = dataset.examples.at(i);
    batch.ids.insert(batch.ids.end(), e.token_ids.begin(), e.token_ids.end());
    batch.mask.keep.insert(batch.mask.keep.end(), e.mask.begin(), e.mask.end());
  }
  return batch;
}

Splits load_splits(const DataSpec& spec) {
  if (spec.source.empty()) throw ConfigError("data source is not set (key 'data')");
  Splits splits;
  if (spec.is_synthetic()) {
    const SynthKind kind = parse_synth_kind(std::string_view(spec.source).substr(6));
    splits.train = synth_task(kind, spec.data_seed, spec.train_size, spec.vocab_size, spec.max_seq_len);
    splits.validation = synth_task(kind, mix_seed(spec.data_seed, 1), spec.val_size, spec.vocab_size, spec.max_seq_len);
    apply_label_noise(splits.train, spec.label_noise, mix_seed(spec.data_seed, 2));
    if (spec.label_noise > 0.0) splits.train.provenance += " label_noise=" + std::to_string(spec.label_noise);
  } else {
    if (spec.val_source.empty()) throw ConfigError("TSV data needs a validation file (key 'val_data')");
    const TextCorpus train = load_tsv(spec.source, spec.schema);
    const TextCorpus val = load_tsv(spec.val_source, spec.schema, train.label_names);
    Vocab vocab = build_vocab(train.tokens, spec.min_freq, train.pair);
    const std::size_t classes = std::max<std::size_t>(2, val.label_names.size());
    splits.train = make_dataset(train, vocab, spec.max_seq_len, classes, "train");
    splits.validation = make_dataset(val, vocab, spec.max_seq_len, classes, "validation");
    apply_label_noise(splits.train, spec.label_noise, mix_seed(spec.data_seed, 2));
    splits.vocab = std::move(vocab);
  }
  splits.train.split = "train";
  splits.validation.split = "validation";
  return splits;
}

ModelConfig fit_to_data(ModelConfig config, const Dataset& dataset) {
  config.vocab_size = std::max(config.vocab_size, dataset.vocab_size);
  config.max_seq_len = std::max(config.max_seq_len, dataset.max_seq_len);
  config.num_classes = dataset.num_classes;
  return config;
}

}  // namespace tkd
