#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tkd/error.hpp"
#include "tkd/metrics.hpp"

using namespace tkd;

TEST(Metrics, BinaryCountsGiveAccuracy) {
  const auto cm = ConfusionMatrix::from_binary(2, 3, 1, 4);
  EXPECT_EQ(cm.tp(1), 2u);
  EXPECT_EQ(cm.tn(1), 3u);
  EXPECT_EQ(cm.fp(1), 1u);
  EXPECT_EQ(cm.fn(1), 4u);
  EXPECT_EQ(accuracy(cm), 0.5);
}

TEST(Metrics, EqualPrecisionAndRecallGiveSameF1) {
  EXPECT_EQ(f1(0.5, 0.5), 0.5);
  EXPECT_EQ(f1(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(f1(1.0, 0.5), 2.0 / 3.0);
}

TEST(Metrics, HandComputedBinaryCase) {
  // predictions 1 0 0 1 1 against labels 1 0 1 0 1
  const std::vector<std::size_t> pred{1, 0, 0, 1, 1}, truth{1, 0, 1, 0, 1};
  const MetricsReport r = score_predictions(pred, truth, 2);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.6);
  EXPECT_DOUBLE_EQ(r.per_class[1].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[1].recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_class[0].f1, 0.5);
  EXPECT_DOUBLE_EQ(r.macro_f1, 7.0 / 12.0);
  EXPECT_FALSE(r.any_degenerate);
}

TEST(Metrics, AgreesWithBruteForceRecount) {
  std::mt19937_64 gen(501);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t classes = 2 + gen() % 4, n = 1 + gen() % 60;
    std::vector<std::size_t> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = gen() % classes;
      truth[i] = gen() % classes;
    }
    const ConfusionMatrix cm = confusion(pred, truth, classes);
    const MetricsReport r = make_report(cm);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += pred[i] == truth[i];
    ASSERT_EQ(r.accuracy, oracle::ratio_or_zero(correct, n));
    double macro = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const oracle::Counts k = oracle::recount(pred, truth, c);
      ASSERT_EQ(cm.tp(c), k.tp);
      ASSERT_EQ(cm.fp(c), k.fp);
      ASSERT_EQ(cm.fn(c), k.fn);
      ASSERT_EQ(cm.tn(c), k.tn);
      const double p = oracle::ratio_or_zero(k.tp, k.tp + k.fp), rc = oracle::ratio_or_zero(k.tp, k.tp + k.fn);
      ASSERT_EQ(r.per_class[c].precision, p);
      ASSERT_EQ(r.per_class[c].recall, rc);
      ASSERT_EQ(r.per_class[c].f1, oracle::f1_of(p, rc));
      ASSERT_EQ(r.per_class[c].degenerate, k.tp + k.fp == 0 || k.tp + k.fn == 0);
      macro += oracle::f1_of(p, rc);
    }
    ASSERT_EQ(r.macro_f1, macro / static_cast<double>(classes));
    if (classes == 2) {
      ASSERT_EQ(cm, ConfusionMatrix::from_binary(cm.tp(1), cm.tn(1), cm.fp(1), cm.fn(1)));
    }
  }
}

TEST(Metrics, ZeroDenominatorsAreFlagged) {
  const auto cm = ConfusionMatrix::from_binary(0, 5, 0, 0);
  const auto pr = precision_recall(cm, 1);
  EXPECT_TRUE(pr.precision_degenerate);
  EXPECT_TRUE(pr.recall_degenerate);
  EXPECT_EQ(pr.precision, 0.0);
  const MetricsReport r = make_report(cm);
  EXPECT_TRUE(r.any_degenerate);
  EXPECT_NE(render_report(r).find("zero denominator"), std::string::npos);
}

TEST(Metrics, PerfectPredictions) {
  const std::vector<std::size_t> y{0, 1, 2, 1, 0};
  const MetricsReport r = score_predictions(y, y, 3);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.macro_f1, 1.0);
}

TEST(Metrics, InvalidInputsAreContractErrors) {
  const std::vector<std::size_t> a{0, 1}, b{0};
  EXPECT_THROW(confusion(a, b, 2), ContractError);
  EXPECT_THROW(confusion(std::vector<std::size_t>{}, std::vector<std::size_t>{}, 2), ContractError);
  EXPECT_THROW(confusion(std::vector<std::size_t>{2}, std::vector<std::size_t>{0}, 2), ContractError);
  EXPECT_THROW(ConfusionMatrix(1), ContractError);
  EXPECT_THROW(accuracy(ConfusionMatrix(2)), ContractError);
}

TEST(Metrics, BinaryRenderUsesTpFnFpTnLayout) {
  const std::string text = render_report(make_report(ConfusionMatrix::from_binary(2, 3, 1, 4)));
  EXPECT_NE(text.find("TP=2"), std::string::npos);
  EXPECT_NE(text.find("FN=4"), std::string::npos);
  EXPECT_NE(text.find("FP=1"), std::string::npos);
  EXPECT_NE(text.find("TN=3"), std::string::npos);
  EXPECT_LT(text.find("TP=2"), text.find("FN=4"));
  EXPECT_LT(text.find("FN=4"), text.find("FP=1"));
  EXPECT_NE(text.find("accuracy 0.500000"), std::string::npos);
  EXPECT_NE(text.find("f1 averaging: macro"), std::string::npos);
}

TEST(Metrics, CsvExport) {
  const std::string csv = report_csv(make_report(ConfusionMatrix::from_binary(2, 3, 1, 4)));
  EXPECT_EQ(csv.rfind("scope,precision,recall,f1,accuracy,degenerate\n", 0), 0u);
  EXPECT_NE(csv.find("\nclass1,0.666667,0.333333,0.444444,0.500000,0\n"), std::string::npos);
  EXPECT_NE(csv.find("\nmacro,"), std::string::npos);
}
