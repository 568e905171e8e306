#include "tkd/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "tkd/error.hpp"

namespace tkd {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : classes_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes < 2) throw ContractError("confusion matrix needs at least 2 classes");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= classes_ || predicted >= classes_) {
    throw ContractError("confusion: class index out of range (truth " + std::to_string(truth) + ", predicted " +
                        std::to_string(predicted) + ", classes " + std::to_string(classes_) + ")");
  }
  ++counts_[truth * classes_ + predicted];
}

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

std::size_t ConfusionMatrix::trace() const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < classes_; ++c) n += count(c, c);
  return n;
}

std::size_t ConfusionMatrix::tp(std::size_t positive) const { return count(positive, positive); }

std::size_t ConfusionMatrix::fp(std::size_t positive) const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < classes_; ++t)
    if (t != positive) n += count(t, positive);
  return n;
}

std::size_t ConfusionMatrix::fn(std::size_t positive) const {
  std::size_t n = 0;
  for (std::size_t p = 0; p < classes_; ++p)
    if (p != positive) n += count(positive, p);
  return n;
}

std::size_t ConfusionMatrix::tn(std::size_t positive) const {
  return total() - tp(positive) - fp(positive) - fn(positive);
}

ConfusionMatrix ConfusionMatrix::from_binary(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn) {
  ConfusionMatrix cm(2);
  cm.counts_[1 * 2 + 1] = tp;
  cm.counts_[0 * 2 + 0] = tn;
  cm.counts_[0 * 2 + 1] = fp;
  cm.counts_[1 * 2 + 0] = fn;
  return cm;
}

ConfusionMatrix confusion(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                          std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw ContractError("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                        std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) throw ContractError("confusion: no examples to score");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) cm.add(labels[i], predictions[i]);
  return cm;
}

double accuracy(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0) throw ContractError("accuracy: empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

PrecisionRecall precision_recall(const ConfusionMatrix& cm, std::size_t positive_class) {
  if (positive_class >= cm.num_classes()) throw ContractError("precision_recall: positive class out of range");
  PrecisionRecall pr;
  const double tp = static_cast<double>(cm.tp(positive_class));
  const std::size_t predicted_pos = cm.tp(positive_class) + cm.fp(positive_class);
  const std::size_t actual_pos = cm.tp(positive_class) + cm.fn(positive_class);
  if (predicted_pos == 0) {
    pr.precision_degenerate = true;
  } else {
    pr.precision = tp / static_cast<double>(predicted_pos);
  }
  if (actual_pos == 0) {
    pr.recall_degenerate = true;
  } else {
    pr.recall = tp / static_cast<double>(actual_pos);
  }
  return pr;
}

double f1(double precision, double recall) {
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

double macro_f1(const ConfusionMatrix& cm) {
  double sum = 0.0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const auto pr = precision_recall(cm, c);
    sum += f1(pr.precision, pr.recall);
  }
  return sum / static_cast<double>(cm.num_classes());
}

bool MetricsReport::operator==(const MetricsReport& o) const {
  if (!(counts == o.counts) || n_examples != o.n_examples || accuracy != o.accuracy ||
      macro_precision != o.macro_precision || macro_recall != o.macro_recall || macro_f1 != o.macro_f1 ||
      any_degenerate != o.any_degenerate || per_class.size() != o.per_class.size()) {
    return false;
  }
  for (std::size_t i = 0; i < per_class.size(); ++i) {
    const auto& a = per_class[i];
    const auto& b = o.per_class[i];
    if (a.precision != b.precision || a.recall != b.recall || a.f1 != b.f1 || a.degenerate != b.degenerate) return false;
  }
  return true;
}

MetricsReport make_report(const ConfusionMatrix& cm) {
  MetricsReport r;
  r.counts = cm;
  r.n_examples = cm.total();
  r.accuracy = accuracy(cm);
  const auto c = static_cast<double>(cm.num_classes());
  for (std::size_t k = 0; k < cm.num_classes(); ++k) {
    const auto pr = precision_recall(cm, k);
    ClassMetrics m{pr.precision, pr.recall, f1(pr.precision, pr.recall),
                   pr.precision_degenerate || pr.recall_degenerate};
    r.any_degenerate = r.any_degenerate || m.degenerate;
    r.macro_precision += m.precision / c;
    r.macro_recall += m.recall / c;
    r.per_class.push_back(m);
  }
  r.macro_f1 = macro_f1(cm);
  return r;
}

MetricsReport score_predictions(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                std::size_t num_classes) {
  return make_report(confusion(predictions, labels, num_classes));
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string render_report(const MetricsReport& r) {
  std::ostringstream os;
  const auto& cm = r.counts;
  if (cm.num_classes() == 2) {
    os << pad("", 12) << pad("positive sample", 18) << "negative sample\n";
    os << pad("positive", 12) << pad("TP=" + std::to_string(cm.tp(1)), 18) << "FN=" << cm.fn(1) << '\n';
    os << pad("negative", 12) << pad("FP=" + std::to_string(cm.fp(1)), 18) << "TN=" << cm.tn(1) << '\n';
  } else {
    os << pad("true\\pred", 12);
    for (std::size_t p = 0; p < cm.num_classes(); ++p) os << pad(std::to_string(p), 8);
    os << '\n';
    for (std::size_t t = 0; t < cm.num_classes(); ++t) {
      os << pad(std::to_string(t), 12);
      for (std::size_t p = 0; p < cm.num_classes(); ++p) os << pad(std::to_string(cm.count(t, p)), 8);
      os << '\n';
    }
  }
  os << '\n' << pad("class", 12) << pad("precision", 12) << pad("recall", 12) << pad("f1", 12) << '\n';
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    os << pad(std::to_string(k) + (m.degenerate ? "*" : ""), 12) << pad(fixed(m.precision), 12)
       << pad(fixed(m.recall), 12) << pad(fixed(m.f1), 12) << '\n';
  }
  os << pad("macro", 12) << pad(fixed(r.macro_precision), 12) << pad(fixed(r.macro_recall), 12)
     << pad(fixed(r.macro_f1), 12) << '\n';
  os << "accuracy " << fixed(r.accuracy) << "  n=" << r.n_examples << "  f1 averaging: macro";
  if (r.any_degenerate) os << "  (* zero denominator, value set to 0)";
  os << '\n';
  return os.str();
}

std::string report_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "scope,precision,recall,f1,accuracy,degenerate\n";
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    os << "class" << k << ',' << fixed(m.precision) << ',' << fixed(m.recall) << ',' << fixed(m.f1) << ','
       << fixed(r.accuracy) << ',' << (m.degenerate ? 1 : 0) << '\n';
  }
  os << "macro," << fixed(r.macro_precision) << ',' << fixed(r.macro_recall) << ',' << fixed(r.macro_f1) << ','
     << fixed(r.accuracy) << ',' << (r.any_degenerate ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace tkd
