#include "tkd/ablation.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

#include "tkd/checkpoint.hpp"
#include "tkd/error.hpp"
#include "tkd/rng.hpp"

namespace tkd {

namespace {

constexpr std::uint64_t kTeacherInitStream = 11;
constexpr std::uint64_t kStudentInitStream = 22;

constexpr std::array<PaperReferenceRow, 6> kPaperReference{{
    {"TKD-NLP", 98.32, 97.14, "comparison"},
    {"RNN", 92.41, 95.31, "comparison"},
    {"LSTM", 93.31, 94.25, "comparison"},
    {"CNN", 96.58, 93.78, "comparison"},
    {"T-NLP", 94.48, 93.89, "ablation"},
    {"KD-NLP", 90.26, 92.14, "ablation"},
}};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

const SoftLabelStore& teacher_labels(const AblationPlan& plan, std::uint64_t seed, const Splits& splits,
                                     TeacherCache& cache) {
  auto it = cache.by_seed.find(seed);
  if (it != cache.by_seed.end()) return it->second;
  EncoderModel teacher(plan.teacher, mix_seed(seed, kTeacherInitStream));
  train_classifier(teacher, splits.train, nullptr, teacher_train_config(plan, seed));
  return cache.by_seed.emplace(seed, generate_soft_labels(teacher, splits.train, plan.distill.temperature))
      .first->second;
}

}  // namespace

std::string to_string(Arm arm) {
  switch (arm) {
    case Arm::TkdNlp: return "TKD-NLP";
    case Arm::TNlp: return "T-NLP";
    case Arm::KdNlp: return "KD-NLP";
  }
  return "unknown";
}

Arm parse_arm(std::string_view text) {
  if (text == "TKD-NLP") return Arm::TkdNlp;
  if (text == "T-NLP") return Arm::TNlp;
  if (text == "KD-NLP") return Arm::KdNlp;
  throw ConfigError("unknown arm '" + std::string(text) + "' (TKD-NLP | T-NLP | KD-NLP)");
}

void AblationPlan::validate() const {
  if (arms.empty()) throw ConfigError("ablation plan needs at least one arm");
  if (seeds.empty()) throw ConfigError("ablation plan needs at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("ablation seeds must be distinct");
  }
  if (std::set<Arm>(arms.begin(), arms.end()).size() != arms.size()) throw ConfigError("ablation arms repeat");
  train.validate();
  teacher_train_config(*this, 0).validate();
  student.validate();
  teacher.validate();
  distill.validate();
  reduced_student_config(student).validate();
}

std::span<const PaperReferenceRow> paper_reference() { return kPaperReference; }

TrainConfig teacher_train_config(const AblationPlan& plan, std::uint64_t seed) {
  TrainConfig cfg = plan.train;
  cfg.seed = seed;
  cfg.epochs = plan.teacher_epochs;
  cfg.learning_rate = plan.teacher_learning_rate;
  cfg.distill.reset();
  return cfg;
}

ModelConfig reduced_student_config(const ModelConfig& student) {
  ModelConfig c = student;
  c.num_layers = 1;
  c.d_model = std::max<std::size_t>(2, student.d_model / 2);
  if (c.d_model % 2) c.d_model += 1;
  if (c.d_model % c.num_heads) c.num_heads = 1;
  return c;
}

ArmResult run_arm(Arm arm, const AblationPlan& plan, std::uint64_t seed, const Splits& splits, TeacherCache* cache) {
  TeacherCache local;
  TeacherCache& teachers = cache ? *cache : local;
  TrainConfig cfg = plan.train;
  cfg.seed = seed;

  ArmResult result;
  result.arm = arm;
  result.seed = seed;
  auto start = std::chrono::steady_clock::now();
  switch (arm) {
    case Arm::TNlp: {
      EncoderModel student(plan.student, mix_seed(seed, kStudentInitStream));
      cfg.distill.reset();
      train_classifier(student, splits.train, nullptr, cfg);
      result.metrics = evaluate(student, splits.validation);
      break;
    }
    case Arm::TkdNlp:
    case Arm::KdNlp: {
      const SoftLabelStore& labels = teacher_labels(plan, seed, splits, teachers);
      start = std::chrono::steady_clock::now();
      const ModelConfig arch = arm == Arm::TkdNlp ? plan.student : reduced_student_config(plan.student);
      EncoderModel student(arch, mix_seed(seed, kStudentInitStream));
      DistillConfig dc = plan.distill;
      if (arm == Arm::KdNlp) dc.alpha = 1.0;
      dc.mode = DistillMode::Output;
      cfg.distill = dc;
      train_student_distilled(student, labels, splits.train, nullptr, cfg);
      result.metrics = evaluate(student, splits.validation);
      result.used_soft_labels = true;
      break;
    }
  }
  result.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

ArmResult run_arm(Arm arm, const AblationPlan& plan, std::uint64_t seed) {
  const Splits splits = load_splits(plan.data);
  AblationPlan fitted = plan;
  fitted.student = fit_to_data(plan.student, splits.train);
  fitted.teacher = fit_to_data(plan.teacher, splits.train);
  return run_arm(arm, fitted, seed, splits);
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<ArmSummary> AblationReport::summaries(std::span<const Arm> order) const {
  std::vector<ArmSummary> out;
  for (Arm arm : order) {
    std::vector<double> acc, f1s;
    for (const auto& r : runs) {
      if (r.arm != arm) continue;
      acc.push_back(r.metrics.accuracy);
      f1s.push_back(r.metrics.macro_f1);
    }
    if (acc.empty()) continue;
    ArmSummary s;
    s.arm = arm;
    s.runs = acc.size();
    s.acc_median = median(acc);
    s.acc_min = *std::min_element(acc.begin(), acc.end());
    s.acc_max = *std::max_element(acc.begin(), acc.end());
    s.f1_median = median(f1s);
    s.f1_min = *std::min_element(f1s.begin(), f1s.end());
    s.f1_max = *std::max_element(f1s.begin(), f1s.end());
    out.push_back(s);
  }
  return out;
}

std::string AblationReport::to_csv() const {
  std::ostringstream os;
  os << "arm,seed,acc,f1,train_seconds\n";
  for (const auto& r : runs) {
    os << to_string(r.arm) << ',' << r.seed << ',' << fmt("%.17g", r.metrics.accuracy) << ','
       << fmt("%.17g", r.metrics.macro_f1) << ',' << fmt("%.3f", r.train_seconds) << '\n';
  }
  os << "\npaper_reference\nmodel,acc,f1,source\n";
  for (const auto& row : paper_reference()) {
    os << row.model << ',' << fmt("%.2f", row.accuracy) << ',' << fmt("%.2f", row.f1) << ',' << row.table << '\n';
  }
  return os.str();
}

std::string AblationReport::render_table(std::span<const Arm> order) const {
  std::ostringstream os;
  os << pad("arm", 10) << pad("runs", 6) << pad("acc median [min, max]", 28) << pad("f1 (macro) median [min, max]", 32)
     << "paper (full-scale, not reproduced) acc / f1\n";
  for (const auto& s : summaries(order)) {
    std::string ref = "-";
    for (const auto& row : paper_reference()) {
      if (row.model == to_string(s.arm)) ref = fmt("%.2f", row.accuracy) + " / " + fmt("%.2f", row.f1);
    }
    os << pad(to_string(s.arm), 10) << pad(std::to_string(s.runs), 6)
       << pad(fmt("%.4f", s.acc_median) + " [" + fmt("%.4f", s.acc_min) + ", " + fmt("%.4f", s.acc_max) + "]", 28)
       << pad(fmt("%.4f", s.f1_median) + " [" + fmt("%.4f", s.f1_min) + ", " + fmt("%.4f", s.f1_max) + "]", 32) << ref
       << '\n';
  }
  os << "\npaper reference (full-scale, not reproduced; display only)\n";
  for (const auto& row : paper_reference()) {
    os << "  " << pad(std::string(row.model), 10) << "acc " << fmt("%.2f", row.accuracy) << "  f1 "
       << fmt("%.2f", row.f1) << "  (" << row.table << ")\n";
  }
  return os.str();
}

AblationReport run_plan(const AblationPlan& plan, const std::optional<std::filesystem::path>& partial_csv) {
  plan.validate();
  const Splits splits = load_splits(plan.data);
  AblationPlan fitted = plan;
  fitted.student = fit_to_data(plan.student, splits.train);
  fitted.teacher = fit_to_data(plan.teacher, splits.train);
  AblationReport report;

  auto run_seed = [&](std::uint64_t seed) {
    TeacherCache cache;
    std::vector<ArmResult> results;
    for (Arm arm : plan.arms) results.push_back(run_arm(arm, fitted, seed, splits, &cache));
    return results;
  };

  try {
    if (plan.jobs <= 1) {
      for (auto seed : plan.seeds) {
        auto results = run_seed(seed);
        report.runs.insert(report.runs.end(), results.begin(), results.end());
      }
    } else {
      // Each seed owns its models, optimizer state and RNG; results are
      // assembled in plan order afterwards.
      std::vector<std::future<std::vector<ArmResult>>> pending;
      std::size_t next = 0;
      std::vector<std::vector<ArmResult>> done(plan.seeds.size());
      while (next < plan.seeds.size() || !pending.empty()) {
        while (next < plan.seeds.size() && pending.size() < plan.jobs) {
          pending.push_back(std::async(std::launch::async, run_seed, plan.seeds[next]));
          ++next;
        }
        const std::size_t first = next - pending.size();
        done[first] = pending.front().get();
        pending.erase(pending.begin());
      }
      for (auto& results : done) report.runs.insert(report.runs.end(), results.begin(), results.end());
    }
  } catch (...) {
    if (partial_csv) write_file(*partial_csv, report.to_csv());
    throw;
  }
  return report;
}

MetricsReport load_external_predictions(const std::filesystem::path& path, const Dataset& dataset) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::map<std::uint64_t, std::size_t> predicted;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ContractError(path.string() + ":" + std::to_string(line_no) + ": expected id,class");
    const std::string id_text = line.substr(0, comma), cls_text = line.substr(comma + 1);
    if (line_no == 1 && !id_text.empty() && !std::isdigit(static_cast<unsigned char>(id_text[0]))) continue;  // header
    std::uint64_t id = 0;
    std::size_t cls = 0;
    try {
      std::size_t used = 0;
      id = std::stoull(id_text, &used);
      if (used != id_text.size()) throw std::invalid_argument("id");
      cls = std::stoull(cls_text, &used);
      if (used != cls_text.size()) throw std::invalid_argument("class");
    } catch (const std::exception&) {
      throw ContractError(path.string() + ":" + std::to_string(line_no) + ": malformed row '" + line + "'");
    }
    if (!predicted.emplace(id, cls).second) {
      throw ContractError(path.string() + ": duplicate prediction for example id " + std::to_string(id));
    }
  }

  std::vector<std::size_t> preds, labels;
  std::string missing;
  std::set<std::uint64_t> known;
  for (const auto& e : dataset.examples) {
    known.insert(e.example_id);
    auto it = predicted.find(e.example_id);
    if (it == predicted.end()) {
      missing += (missing.empty() ? "" : ", ") + std::to_string(e.example_id);
      continue;
    }
    preds.push_back(it->second);
    labels.push_back(e.label);
  }
  if (!missing.empty()) throw ContractError("predictions missing for example id(s): " + missing);
  for (const auto& [id, cls] : predicted) {
    if (!known.count(id)) throw ContractError("prediction for unknown example id " + std::to_string(id));
  }
  return score_predictions(preds, labels, dataset.num_classes);
}

}  // namespace tkd
