#include "tkd/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "tkd/checkpoint.hpp"
#include "tkd/error.hpp"

namespace tkd {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(std::string_view value) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const auto comma = value.find(',', start);
    const auto item = trim(value.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string bad(std::string_view key, std::string_view value, std::string_view want) {
  return "config key '" + std::string(key) + "': expected " + std::string(want) + ", got '" + std::string(value) + "'";
}

std::uint64_t to_u64(std::string_view key, std::string_view value) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) throw ConfigError(bad(key, value, "an unsigned integer"));
  return v;
}

std::size_t to_size(std::string_view key, std::string_view value) { return static_cast<std::size_t>(to_u64(key, value)); }

double to_double(std::string_view key, std::string_view value) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) throw ConfigError(bad(key, value, "a number"));
  return v;
}

bool to_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(bad(key, value, "true or false"));
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& show) {
  std::string out;
  for (const auto& item : items) out += (out.empty() ? "" : ",") + show(item);
  return out;
}

struct Field {
  std::string_view key;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define TKD_SIZE(name, expr)                                                                     \
  Field {                                                                                        \
    name, [](RunConfig& c, std::string_view k, std::string_view v) { expr = to_size(k, v); },   \
        [](const RunConfig& c) { return std::to_string(expr); }                                  \
  }
#define TKD_DOUBLE(name, expr)                                                                   \
  Field {                                                                                        \
    name, [](RunConfig& c, std::string_view k, std::string_view v) { expr = to_double(k, v); }, \
        [](const RunConfig& c) { return g17(expr); }                                             \
  }
#define TKD_STRING(name, expr)                                                            \
  Field {                                                                                 \
    name, [](RunConfig& c, std::string_view, std::string_view v) { expr = std::string(v); }, \
        [](const RunConfig& c) { return expr; }                                           \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      // model (student)
      TKD_SIZE("num_layers", c.model.num_layers),
      TKD_SIZE("num_heads", c.model.num_heads),
      TKD_SIZE("d_model", c.model.d_model),
      TKD_SIZE("d_ff", c.model.d_ff),
      Field{"vocab_size",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              c.model.vocab_size = c.teacher.vocab_size = c.data.vocab_size = to_size(k, v);
            },
            [](const RunConfig& c) { return std::to_string(c.model.vocab_size); }},
      Field{"max_seq_len",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              c.model.max_seq_len = c.teacher.max_seq_len = c.data.max_seq_len = to_size(k, v);
            },
            [](const RunConfig& c) { return std::to_string(c.model.max_seq_len); }},
      Field{"num_classes",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              c.model.num_classes = c.teacher.num_classes = to_size(k, v);
            },
            [](const RunConfig& c) { return std::to_string(c.model.num_classes); }},
      Field{"layernorm_eps",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              c.model.layernorm_eps = c.teacher.layernorm_eps = to_double(k, v);
            },
            [](const RunConfig& c) { return g17(c.model.layernorm_eps); }},
      // teacher
      TKD_SIZE("teacher_num_layers", c.teacher.num_layers),
      TKD_SIZE("teacher_num_heads", c.teacher.num_heads),
      TKD_SIZE("teacher_d_model", c.teacher.d_model),
      TKD_SIZE("teacher_d_ff", c.teacher.d_ff),
      TKD_SIZE("teacher_epochs", c.teacher_epochs),
      TKD_DOUBLE("teacher_learning_rate", c.teacher_learning_rate),
      // training
      TKD_SIZE("batch_size", c.train.batch_size),
      TKD_SIZE("epochs", c.train.epochs),
      TKD_DOUBLE("learning_rate", c.train.learning_rate),
      TKD_DOUBLE("beta1", c.train.beta1),
      TKD_DOUBLE("beta2", c.train.beta2),
      TKD_DOUBLE("adam_eps", c.train.adam_eps),
      TKD_DOUBLE("weight_decay", c.train.weight_decay),
      TKD_DOUBLE("grad_clip", c.train.grad_clip),
      Field{"seed", [](RunConfig& c, std::string_view k, std::string_view v) { c.train.seed = to_u64(k, v); },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      // distillation
      TKD_DOUBLE("alpha", c.distill.alpha),
      TKD_DOUBLE("temperature", c.distill.temperature),
      Field{"distill_mode",
            [](RunConfig& c, std::string_view, std::string_view v) { c.distill.mode = parse_distill_mode(v); },
            [](const RunConfig& c) { return to_string(c.distill.mode); }},
      TKD_DOUBLE("feature_weight", c.distill.feature_weight),
      Field{"scale_by_t_squared",
            [](RunConfig& c, std::string_view k, std::string_view v) { c.distill.scale_by_t_squared = to_bool(k, v); },
            [](const RunConfig& c) { return std::string(c.distill.scale_by_t_squared ? "true" : "false"); }},
      // data
      TKD_STRING("data", c.data.source),
      TKD_STRING("val_data", c.data.val_source),
      Field{"sentence_cols",
            [](RunConfig& c, std::string_view, std::string_view v) { c.data.schema.sentence_cols = split_list(v); },
            [](const RunConfig& c) {
              return join<std::string>(c.data.schema.sentence_cols, [](const std::string& s) { return s; });
            }},
      TKD_STRING("label_col", c.data.schema.label_col),
      TKD_SIZE("bins", c.data.schema.bins),
      TKD_DOUBLE("bin_min", c.data.schema.bin_min),
      TKD_DOUBLE("bin_max", c.data.schema.bin_max),
      TKD_SIZE("train_size", c.data.train_size),
      TKD_SIZE("val_size", c.data.val_size),
      Field{"data_seed", [](RunConfig& c, std::string_view k, std::string_view v) { c.data.data_seed = to_u64(k, v); },
            [](const RunConfig& c) { return std::to_string(c.data.data_seed); }},
      TKD_DOUBLE("label_noise", c.data.label_noise),
      TKD_SIZE("min_freq", c.data.min_freq),
      // pre-training
      TKD_DOUBLE("mlm_mask_fraction", c.mlm.mask_fraction),
      TKD_SIZE("mlm_epochs", c.mlm.epochs),
      TKD_STRING("init_checkpoint", c.init_checkpoint),
      // output
      TKD_STRING("out", c.out_dir),
      // ablation
      Field{"arms",
            [](RunConfig& c, std::string_view, std::string_view v) {
              c.arms.clear();
              for (const auto& name : split_list(v)) c.arms.push_back(parse_arm(name));
            },
            [](const RunConfig& c) { return join<Arm>(c.arms, [](const Arm& a) { return to_string(a); }); }},
      Field{"seeds",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              c.seeds.clear();
              for (const auto& s : split_list(v)) c.seeds.push_back(to_u64(k, s));
            },
            [](const RunConfig& c) {
              return join<std::uint64_t>(c.seeds, [](const std::uint64_t& s) { return std::to_string(s); });
            }},
      TKD_SIZE("jobs", c.jobs),
      // gradient check
      TKD_DOUBLE("gradcheck_h", c.gradcheck_h),
      TKD_SIZE("gradcheck_batch", c.gradcheck_batch),
      TKD_SIZE("gradcheck_seq", c.gradcheck_seq),
  };
  return table;
}

#undef TKD_SIZE
#undef TKD_DOUBLE
#undef TKD_STRING

}  // namespace

std::vector<ConfigEntry> parse_config_text(std::string_view text, std::string_view source) {
  std::vector<ConfigEntry> entries;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(source) + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value', got '" + std::string(line) + "'");
    ConfigEntry e{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no};
    if (e.key.empty()) throw ConfigError(where + ": empty key");
    if (!seen.insert(e.key).second) throw ConfigError(where + ": key '" + e.key + "' given twice");
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ConfigEntry> read_config_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  return parse_config_text(text, path.string());
}

std::vector<std::string_view> known_config_keys() {
  std::vector<std::string_view> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::apply(const std::vector<ConfigEntry>& entries) {
  for (const auto& e : entries) set(e.key, e.value);
}

std::string RunConfig::render() const {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.key << " = " << f.get(*this) << '\n';
  return os.str();
}

void RunConfig::validate() const {
  model.validate();
  teacher.validate();
  train.validate();
  teacher_train().validate();
  distill.validate();
  if (!(data.label_noise >= 0.0 && data.label_noise <= 1.0)) throw ConfigError("label_noise must be in [0, 1]");
  if (!(mlm.mask_fraction > 0.0 && mlm.mask_fraction < 1.0)) throw ConfigError("mlm_mask_fraction must be in (0, 1)");
  if (!(gradcheck_h > 0.0)) throw ConfigError("gradcheck_h must be > 0");
}

AblationPlan RunConfig::plan() const {
  AblationPlan p;
  p.arms = arms;
  p.data = data;
  p.seeds = seeds;
  p.train = train;
  p.train.distill.reset();
  p.student = model;
  p.teacher = teacher;
  p.distill = distill;
  p.teacher_epochs = teacher_epochs;
  p.teacher_learning_rate = teacher_learning_rate;
  p.jobs = jobs;
  return p;
}

TrainConfig RunConfig::teacher_train() const { return teacher_train_config(plan(), train.seed); }

RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (file) cfg.apply(read_config_file(*file));
  for (const auto& [key, value] : overrides) cfg.set(key, value);
  return cfg;
}

}  // namespace tkd
