#include "tkd/distill.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tkd/checkpoint.hpp"
#include "tkd/error.hpp"

namespace tkd {

std::string to_string(DistillMode mode) { return mode == DistillMode::Output ? "output" : "feature"; }

DistillMode parse_distill_mode(std::string_view text) {
  if (text == "output") return DistillMode::Output;
  if (text == "feature") return DistillMode::OutputPlusFeature;
  throw ConfigError("unknown distill_mode '" + std::string(text) + "' (output | feature)");
}

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
  if (!(feature_weight >= 0.0)) throw ConfigError("feature_weight must be >= 0");
}

Tensor soften(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0, got " + std::to_string(temperature));
  return softmax_rows(scale(logits, 1.0 / temperature));
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  std::vector<double> v(labels.size() * num_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw ContractError("label " + std::to_string(labels[i]) + " outside " + std::to_string(num_classes) +
                          " classes");
    }
    v[i * num_classes + labels[i]] = 1.0;
  }
  return Tensor::from({labels.size(), num_classes}, std::move(v));
}

Tensor task_loss(const Tensor& one_hot_labels, const Tensor& probs) {
  return soft_cross_entropy(one_hot_labels, probs, kProbabilityFloor);
}

Tensor task_loss(std::span<const std::size_t> labels, const Tensor& probs) {
  return task_loss(one_hot(labels, probs.cols()), probs);
}

Tensor distill_loss(const Tensor& teacher_probs, const Tensor& student_probs) {
  if (teacher_probs.shape() != student_probs.shape()) {
    throw ContractError("distill_loss: teacher " + shape_string(teacher_probs.shape()) + " vs student " +
                        shape_string(student_probs.shape()));
  }
  return soft_cross_entropy(teacher_probs, student_probs, kProbabilityFloor);
}

Tensor combined_loss(const Tensor& task, const Tensor& distill, const DistillConfig& cfg) {
  const double t2 = cfg.scale_by_t_squared ? cfg.temperature * cfg.temperature : 1.0;
  return add(scale(distill, cfg.alpha * t2), scale(task, 1.0 - cfg.alpha));
}

Tensor feature_distill_loss(const Tensor& teacher_hidden, const Tensor& student_hidden, const Tensor& projection) {
  if (student_hidden.shape().size() != 2 || projection.shape().size() != 2 ||
      student_hidden.cols() != projection.rows()) {
    throw ContractError("feature_distill_loss: projection " + shape_string(projection.shape()) +
                        " does not accept student states " + shape_string(student_hidden.shape()));
  }
  const Tensor projected = matmul(student_hidden, projection);
  if (projected.shape() != teacher_hidden.shape()) {
    throw ContractError("feature_distill_loss: projected student " + shape_string(projected.shape()) +
                        " vs teacher " + shape_string(teacher_hidden.shape()));
  }
  const Tensor diff = sub(projected, teacher_hidden);
  return mean_all(mul(diff, diff));
}

// ---- SoftLabelStore --------------------------------------------------------

const std::vector<double>& SoftLabelStore::at(std::uint64_t example_id) const {
  auto it = probs.find(example_id);
  if (it == probs.end()) throw ContractError("no soft label for example id " + std::to_string(example_id));
  return it->second;
}

void SoftLabelStore::check_covers(const Dataset& dataset) const {
  if (dataset.num_classes != num_classes) {
    throw ContractError("soft labels have " + std::to_string(num_classes) + " classes, dataset has " +
                        std::to_string(dataset.num_classes));
  }
  std::string missing;
  std::size_t n_missing = 0;
  for (const auto& e : dataset.examples) {
    if (!probs.count(e.example_id)) {
      if (n_missing++ < 10) missing += (missing.empty() ? "" : ",") + std::to_string(e.example_id);
    }
  }
  if (n_missing) {
    throw ContractError("soft labels missing for " + std::to_string(n_missing) + " example id(s): " + missing);
  }
  if (probs.size() != dataset.size()) {
    throw ContractError("soft label store has " + std::to_string(probs.size()) + " entries for a dataset of " +
                        std::to_string(dataset.size()));
  }
}

SoftLabelStore generate_soft_labels(const EncoderModel& teacher, const Dataset& dataset, double temperature,
                                    std::size_t batch_size) {
  if (teacher.config().num_classes != dataset.num_classes) {
    throw ContractError("teacher predicts " + std::to_string(teacher.config().num_classes) +
                        " classes, dataset has " + std::to_string(dataset.num_classes));
  }
  if (dataset.vocab_size > teacher.config().vocab_size) {
    throw ContractError("dataset vocabulary exceeds the teacher's");
  }
  SoftLabelStore store;
  store.num_classes = dataset.num_classes;
  store.temperature = temperature;
  store.teacher_checksum = checkpoint_checksum(teacher);
  NoGradGuard no_grad;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(dataset.size(), start + batch_size); ++i) idx.push_back(i);
    const Tensor probs = soften(encode(teacher, make_batch(dataset, idx)), temperature);
    const std::size_t c = store.num_classes;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      store.probs[dataset.examples[idx[r]].example_id].assign(probs.data().begin() + static_cast<std::ptrdiff_t>(r * c),
                                                              probs.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
    }
  }
  return store;
}

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string serialize_soft_labels(const SoftLabelStore& store) {
  std::ostringstream os;
  os << "SOFTLABELS1 n=" << store.size() << " classes=" << store.num_classes << " T=" << g17(store.temperature)
     << " teacher=" << store.teacher_checksum << '\n';
  for (const auto& [id, p] : store.probs) {
    os << id;
    for (double v : p) os << ' ' << g17(v);
    os << '\n';
  }
  return os.str();
}

SoftLabelStore parse_soft_labels(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw IoError("soft labels: empty file");
  std::istringstream header(line);
  std::string magic;
  header >> magic;
  if (magic != "SOFTLABELS1") throw IoError("soft labels: bad header '" + magic + "'");
  SoftLabelStore store;
  std::size_t n = 0;
  bool have_n = false, have_c = false, have_t = false, have_teacher = false;
  std::string field;
  while (header >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw IoError("soft labels: malformed header field '" + field + "'");
    const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
    try {
      if (key == "n") {
        n = std::stoull(value);
        have_n = true;
      } else if (key == "classes") {
        store.num_classes = std::stoull(value);
        have_c = true;
      } else if (key == "T") {
        store.temperature = std::stod(value);
        have_t = true;
      } else if (key == "teacher") {
        store.teacher_checksum = value;
        have_teacher = true;
      }
    } catch (const std::exception&) {
      throw IoError("soft labels: bad header value '" + field + "'");
    }
  }
  if (!(have_n && have_c && have_t && have_teacher)) throw IoError("soft labels: incomplete header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::uint64_t id = 0;
    if (!(row >> id)) throw IoError("soft labels: malformed row '" + line + "'");
    std::vector<double> p(store.num_classes);
    for (auto& v : p) {
      std::string tok;
      if (!(row >> tok)) throw IoError("soft labels: short row for id " + std::to_string(id));
      const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || end != tok.data() + tok.size()) {
        throw IoError("soft labels: bad probability '" + tok + "' for id " + std::to_string(id));
      }
    }
    if (!store.probs.emplace(id, std::move(p)).second) {
      throw IoError("soft labels: duplicate id " + std::to_string(id));
    }
  }
  if (store.probs.size() != n) {
    throw IoError("soft labels: header says n=" + std::to_string(n) + " but file has " +
                  std::to_string(store.probs.size()) + " rows");
  }
  return store;
}

void save_soft_labels(const SoftLabelStore& store, const std::filesystem::path& path) {
  write_file(path, serialize_soft_labels(store));
}

SoftLabelStore load_soft_labels(const std::filesystem::path& path) { return parse_soft_labels(read_file(path)); }

}  // namespace tkd
