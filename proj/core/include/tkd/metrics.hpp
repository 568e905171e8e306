#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace tkd {

/// C x C counts, rows = true class, columns = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  std::size_t num_classes() const { return classes_; }
  std::size_t count(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  void add(std::size_t truth, std::size_t predicted);
  std::size_t total() const;
  std::size_t trace() const;

  // One-vs-rest view of `positive`.
  std::size_t tp(std::size_t positive) const;
  std::size_t fp(std::size_t positive) const;
  std::size_t fn(std::size_t positive) const;
  std::size_t tn(std::size_t positive) const;

  /// Binary matrix with class 1 = positive built from raw Table-1 counts.
  static ConfusionMatrix from_binary(std::size_t tp, std::size_t tn, std::size_t fp, std::size_t fn);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::size_t> counts_;
};

ConfusionMatrix confusion(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                          std::size_t num_classes);

/// (TP + TN) / total for binary, trace / total in general.
double accuracy(const ConfusionMatrix& cm);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  // Set when the denominator was zero and the value defaulted to 0.
  bool precision_degenerate = false;
  bool recall_degenerate = false;
};

PrecisionRecall precision_recall(const ConfusionMatrix& cm, std::size_t positive_class);

/// Harmonic mean 2PR / (P + R); 0 when P + R = 0.
double f1(double precision, double recall);

/// Unweighted mean of the one-vs-rest F1 of every class.
double macro_f1(const ConfusionMatrix& cm);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;
};

struct MetricsReport {
  ConfusionMatrix counts{2};
  std::size_t n_examples = 0;
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  bool any_degenerate = false;

  bool operator==(const MetricsReport& other) const;
};

MetricsReport make_report(const ConfusionMatrix& cm);
MetricsReport score_predictions(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                std::size_t num_classes);

/// Aligned text: the confusion table (binary in the TP/FN, FP/TN layout,
/// otherwise C x C) followed by per-class and macro metrics.
std::string render_report(const MetricsReport& report);
/// Comma-separated export: `scope,precision,recall,f1,accuracy,degenerate`.
std::string report_csv(const MetricsReport& report);

}  // namespace tkd
