#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "tkd/checkpoint.hpp"
#include "tkd/data.hpp"
#include "tkd/error.hpp"
#include "tkd/train.hpp"

using namespace tkd;

namespace {

ModelConfig small_model() { return ModelConfig{1, 2, 8, 16, 30, 10, 2, 1e-5}; }

TrainConfig short_schedule() {
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 2;
  cfg.learning_rate = 3e-3;
  return cfg;
}

}  // namespace

TEST(Optimizer, MatchesScalarAdamWReference) {
  std::mt19937_64 gen(301);
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.1;
  const auto init = oracle::random_values(gen, 6);
  Tensor p = Tensor::parameter({2, 3}, init, "p");
  std::vector<oracle::AdamScalar> ref(6);
  std::vector<double> expected = init;
  OptimizerState state;
  for (int step = 0; step < 5; ++step) {
    const auto g = oracle::random_values(gen, 6, -2.0, 2.0);
    GradientMap grads;
    grads.insert(p, Tensor::from({2, 3}, g));
    std::vector<Tensor> params{p};
    optimizer_step(params, grads, state, cfg);
    for (std::size_t i = 0; i < 6; ++i) {
      expected[i] = ref[i].step(expected[i], g[i], cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps,
                                cfg.weight_decay);
      EXPECT_NEAR(p.data()[i], expected[i], 1e-14);
    }
  }
  EXPECT_EQ(state.step, 5u);
}

TEST(Optimizer, DecayAppliesToOldValueEvenWithZeroGradient) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  Tensor p = Tensor::parameter({1}, {2.0}, "p");
  GradientMap grads;
  grads.insert(p, Tensor::zeros({1}));
  std::vector<Tensor> params{p};
  OptimizerState state;
  optimizer_step(params, grads, state, cfg);
  EXPECT_DOUBLE_EQ(p.data()[0], 2.0 - 0.1 * 0.5 * 2.0);
}

TEST(Optimizer, NonFiniteGradientNamesParameter) {
  Tensor p = Tensor::parameter({2}, {1.0, 1.0}, "layer0.w_q");
  GradientMap grads;
  grads.insert(p, Tensor::from({2}, {0.0, std::numeric_limits<double>::quiet_NaN()}));
  std::vector<Tensor> params{p};
  OptimizerState state;
  try {
    optimizer_step(params, grads, state, TrainConfig{});
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("layer0.w_q"), std::string::npos);
  }
  EXPECT_EQ(p.data()[0], 1.0);
}

TEST(Clipping, RescalesToMaxNorm) {
  Tensor a = Tensor::parameter({2}, {0.0, 0.0}, "a"), b = Tensor::parameter({1}, {0.0}, "b");
  GradientMap grads;
  grads.insert(a, Tensor::from({2}, {3.0, 4.0}));
  grads.insert(b, Tensor::from({1}, {12.0}));
  std::vector<Tensor> params{a, b};
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, grads, 5.0), 13.0);
  double sq = 0.0;
  for (const auto& p : params)
    for (double v : grads.of(p).data()) sq += v * v;
  EXPECT_NEAR(std::sqrt(sq), 5.0, 1e-12);
  EXPECT_NEAR(grads.of(a).data()[0], 3.0 * 5.0 / 13.0, 1e-15);
}

TEST(Clipping, LeavesSmallGradientsAlone) {
  Tensor a = Tensor::parameter({2}, {0.0, 0.0}, "a");
  GradientMap grads;
  grads.insert(a, Tensor::from({2}, {0.3, 0.4}));
  std::vector<Tensor> params{a};
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, grads, 5.0), 0.5);
  EXPECT_EQ(grads.of(a).data()[0], 0.3);
  EXPECT_EQ(grads.of(a).data()[1], 0.4);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.beta1 = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Training, SameSeedGivesBitIdenticalCheckpoints) {
  const Dataset train = synth_task(SynthKind::Keyword, 11, 64, 30, 10);
  const Dataset val = synth_task(SynthKind::Keyword, 12, 32, 30, 10);
  EncoderModel a(small_model(), 5), b(small_model(), 5);
  const auto ra = train_classifier(a, train, &val, short_schedule());
  const auto rb = train_classifier(b, train, &val, short_schedule());
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
  EXPECT_EQ(ra.batch_losses, rb.batch_losses);
  ASSERT_TRUE(ra.final_validation && rb.final_validation);
  EXPECT_TRUE(*ra.final_validation == *rb.final_validation);
}

TEST(Training, DifferentShuffleSeedChangesTrajectory) {
  const Dataset train = synth_task(SynthKind::Keyword, 11, 64, 30, 10);
  EncoderModel a(small_model(), 5), b(small_model(), 5);
  auto cfg = short_schedule();
  train_classifier(a, train, nullptr, cfg);
  cfg.seed = 2;
  train_classifier(b, train, nullptr, cfg);
  EXPECT_NE(serialize_checkpoint(a), serialize_checkpoint(b));
}

TEST(Training, ReportShape) {
  const Dataset train = synth_task(SynthKind::Keyword, 11, 40, 30, 10);
  const Dataset val = synth_task(SynthKind::Keyword, 12, 20, 30, 10);
  EncoderModel m(small_model(), 5);
  const auto r = train_classifier(m, train, &val, short_schedule());
  ASSERT_EQ(r.epochs.size(), 2u);
  EXPECT_EQ(r.batch_losses.size(), 2u * 3u);
  EXPECT_EQ(r.epochs[1].epoch, 2u);
  EXPECT_DOUBLE_EQ(r.epochs[1].val_acc, r.final_validation->accuracy);
  EXPECT_DOUBLE_EQ(r.epochs[1].train_acc, evaluate(m, train).accuracy);
  const std::string csv = r.to_csv();
  EXPECT_EQ(csv.rfind("epoch,train_loss,train_acc,val_acc,val_f1,seconds\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Training, LossDecreasesOnKeywordTask) {
  const Dataset train = synth_task(SynthKind::Keyword, 11, 128, 30, 10);
  EncoderModel m(small_model(), 5);
  auto cfg = short_schedule();
  cfg.epochs = 6;
  const auto r = train_classifier(m, train, nullptr, cfg);
  EXPECT_LT(r.epochs.back().train_loss, r.epochs.front().train_loss);
}

TEST(Training, NonFiniteWeightsRaiseTrainingError) {
  const Dataset train = synth_task(SynthKind::Keyword, 11, 16, 30, 10);
  EncoderModel m(small_model(), 5);
  m.classifier_weight().mutable_data()[0] = std::numeric_limits<double>::infinity();
  m.classifier_weight().mutable_data()[1] = -std::numeric_limits<double>::infinity();
  EXPECT_THROW(train_classifier(m, train, nullptr, short_schedule()), TrainingError);
}

TEST(Training, IncompatibleDataIsContractError) {
  const Dataset train = synth_task(SynthKind::Keyword, 11, 16, 60, 10);
  EncoderModel m(small_model(), 5);
  EXPECT_THROW(train_classifier(m, train, nullptr, short_schedule()), Error);
  EXPECT_THROW(train_classifier(m, Dataset{}, nullptr, short_schedule()), ContractError);
}

TEST(Prediction, TiesResolveToLowestClass) {
  const Dataset ds = synth_task(SynthKind::Keyword, 11, 10, 30, 10);
  EncoderModel m(small_model(), 5);
  for (auto& v : m.classifier_weight().mutable_data()) v = 0.0;
  for (auto& v : m.classifier_bias().mutable_data()) v = 0.0;
  for (std::size_t p : predict(m, ds)) EXPECT_EQ(p, 0u);
}

TEST(Prediction, BatchSizeDoesNotChangePredictions) {
  const Dataset ds = synth_task(SynthKind::Parity, 13, 37, 30, 10);
  EncoderModel m(small_model(), 9);
  EXPECT_EQ(predict(m, ds, 1), predict(m, ds, 64));
}

TEST(DistilledTraining, AlphaZeroIsBitIdenticalToPlainTraining) {
  const Dataset train = synth_task(SynthKind::Keyword, 21, 48, 30, 10);
  EncoderModel teacher(small_model(), 99);
  const SoftLabelStore store = generate_soft_labels(teacher, train, 2.0);
  EncoderModel plain(small_model(), 5), distilled(small_model(), 5);
  auto cfg = short_schedule();
  train_classifier(plain, train, nullptr, cfg);
  cfg.distill = DistillConfig{2.0, 0.0};
  train_student_distilled(distilled, store, train, nullptr, cfg);
  EXPECT_EQ(serialize_checkpoint(plain), serialize_checkpoint(distilled));
}

TEST(DistilledTraining, AlphaOneWithOneHotTeacherIsBitIdenticalToPlainTraining) {
  const Dataset train = synth_task(SynthKind::Keyword, 22, 48, 30, 10);
  SoftLabelStore store;
  store.num_classes = 2;
  for (const auto& e : train.examples) {
    std::vector<double> p(2, 0.0);
    p[e.label] = 1.0;
    store.probs[e.example_id] = p;
  }
  EncoderModel plain(small_model(), 5), distilled(small_model(), 5);
  auto cfg = short_schedule();
  train_classifier(plain, train, nullptr, cfg);
  cfg.distill = DistillConfig{1.0, 1.0};
  train_student_distilled(distilled, store, train, nullptr, cfg);
  EXPECT_EQ(serialize_checkpoint(plain), serialize_checkpoint(distilled));
}

TEST(DistilledTraining, SoftLabelsChangeTheResultWhenWeighted) {
  const Dataset train = synth_task(SynthKind::Keyword, 21, 48, 30, 10);
  EncoderModel teacher(small_model(), 99);
  const SoftLabelStore store = generate_soft_labels(teacher, train, 2.0);
  EncoderModel plain(small_model(), 5), distilled(small_model(), 5);
  auto cfg = short_schedule();
  train_classifier(plain, train, nullptr, cfg);
  cfg.distill = DistillConfig{2.0, 0.5};
  train_student_distilled(distilled, store, train, nullptr, cfg);
  EXPECT_NE(serialize_checkpoint(plain), serialize_checkpoint(distilled));
}

TEST(DistilledTraining, RequiresConfigAndCoverage) {
  const Dataset train = synth_task(SynthKind::Keyword, 21, 16, 30, 10);
  EncoderModel m(small_model(), 5);
  SoftLabelStore empty;
  empty.num_classes = 2;
  EXPECT_THROW(train_student_distilled(m, empty, train, nullptr, short_schedule()), ContractError);
  auto cfg = short_schedule();
  cfg.distill = DistillConfig{};
  EXPECT_THROW(train_student_distilled(m, empty, train, nullptr, cfg), ContractError);
}

TEST(DistilledTraining, FeatureModeNeedsTeacherAndLearnsProjection) {
  const Dataset train = synth_task(SynthKind::Keyword, 21, 32, 30, 10);
  ModelConfig tc = small_model();
  tc.d_model = 12;
  tc.num_heads = 3;
  EncoderModel teacher(tc, 99), student(small_model(), 5);
  const SoftLabelStore store = generate_soft_labels(teacher, train, 1.0);
  auto cfg = short_schedule();
  cfg.distill = DistillConfig{1.0, 0.5, DistillMode::OutputPlusFeature, 0.1};
  EXPECT_THROW(train_student_distilled(student, store, train, nullptr, cfg), ContractError);
  FeatureTeacher ft{&teacher, Tensor{}};
  train_student_distilled(student, store, train, nullptr, cfg, &ft);
  ASSERT_TRUE(ft.projection.defined());
  EXPECT_EQ(ft.projection.shape(), (std::vector<std::size_t>{8, 12}));
}

TEST(Mlm, MaskedCountAndHeadUntouched) {
  const Dataset corpus = synth_task(SynthKind::Majority, 31, 40, 30, 10);
  EncoderModel m(small_model(), 5);
  const std::string head_before = std::string(reinterpret_cast<const char*>(m.classifier_weight().data().data()),
                                              m.classifier_weight().size() * sizeof(double));
  TrainConfig cfg = short_schedule();
  const MlmReport r = pretrain_mlm(m, corpus, cfg, MlmConfig{0.15, 2});
  std::size_t expected = 0;
  for (const auto& e : corpus.examples) {
    std::size_t content = 0;
    for (std::size_t i = 1; i < e.mask.size(); ++i) content += e.mask[i];
    expected += static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(content)));
  }
  EXPECT_EQ(r.masked_tokens, 2 * expected);
  EXPECT_EQ(r.batch_losses.size(), 2u * 3u);
  const std::string head_after = std::string(reinterpret_cast<const char*>(m.classifier_weight().data().data()),
                                             m.classifier_weight().size() * sizeof(double));
  EXPECT_EQ(head_before, head_after);
}

TEST(Mlm, LossDropsWithPretraining) {
  const Dataset corpus = synth_task(SynthKind::Majority, 31, 64, 30, 10);
  EncoderModel m(small_model(), 5);
  std::vector<std::size_t> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const double before = mlm_loss(m, corpus, idx, 0.15, 77);
  EXPECT_EQ(before, mlm_loss(m, corpus, idx, 0.15, 77));
  TrainConfig cfg = short_schedule();
  cfg.learning_rate = 1e-2;
  pretrain_mlm(m, corpus, cfg, MlmConfig{0.15, 8});
  EXPECT_LT(mlm_loss(m, corpus, idx, 0.15, 77), before);
}
