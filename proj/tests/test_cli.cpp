#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "tkd/checkpoint.hpp"
#include "tkd/distill.hpp"

namespace fs = std::filesystem;

namespace {

std::filesystem::path fixture(const std::string& name) { return fs::path(TKD_TEST_DATA_DIR) / name; }

struct Invocation {
  int code = -1;
  std::string out, err;
};

Invocation tkd_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "tkd");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Invocation r;
  r.code = tkd::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Small synthetic problem and models so every command finishes in seconds.
std::vector<std::string> small(std::vector<std::string> args) {
  for (const char* kv : {"train_size=64", "val_size=32", "vocab_size=30", "max_seq_len=10", "num_layers=1",
                         "d_model=8", "d_ff=16", "teacher_num_layers=1", "teacher_num_heads=2", "teacher_d_model=12",
                         "teacher_d_ff=24", "teacher_epochs=2", "teacher_learning_rate=0.003", "epochs=2",
                         "batch_size=16"}) {
    args.push_back("--set");
    args.push_back(kv);
  }
  if (std::find(args.begin(), args.end(), "--data") == args.end()) {
    args.push_back("--data");
    args.push_back("synth:keyword");
  }
  return args;
}

std::vector<std::string> sst(std::vector<std::string> args) {
  for (const std::string kv : {"val_data=" + fixture("sst_dev.tsv").string(), std::string("sentence_cols=sentence"),
                               std::string("label_col=label")}) {
    args.push_back("--set");
    args.push_back(kv);
  }
  args.push_back("--data");
  args.push_back(fixture("sst_train.tsv").string());
  return args;
}

std::set<std::string> listing(const fs::path& dir) {
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) names.insert(e.path().filename().string());
  return names;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("tkd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  std::string dir(const std::string& name) const { return (root_ / name).string(); }

  fs::path root_;
};

}  // namespace

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(tkd_cli({}).code, 2);
  EXPECT_EQ(tkd_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(tkd_cli({"train-teacher", "--no-such-flag"}).code, 2);
  EXPECT_EQ(tkd_cli({"--help"}).code, 0);
  const auto bad_key = tkd_cli({"train-teacher", "--set", "lerning_rate=1", "--data", "synth:keyword"});
  EXPECT_EQ(bad_key.code, 2);
  EXPECT_NE(bad_key.err.find("'lerning_rate'"), std::string::npos) << bad_key.err;
  EXPECT_EQ(tkd_cli({"train-teacher", "--set", "novalue"}).code, 2);
}

TEST_F(CliTest, MissingDataKeyIsNamedAndNothingIsWritten) {
  const auto r = tkd_cli({"train-teacher", "--out", dir("t")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("'data'"), std::string::npos) << r.err;
  EXPECT_EQ(r.err.rfind("tkd train-teacher: error:", 0), 0u) << r.err;
  EXPECT_FALSE(fs::exists(dir("t")));
}

TEST_F(CliTest, MissingTsvColumnExitsTwo) {
  auto args = sst({"train-teacher", "--out", dir("t")});
  args.push_back("--set");
  args.push_back("label_col=sentiment");
  const auto r = tkd_cli(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("'sentiment'"), std::string::npos) << r.err;
}

TEST_F(CliTest, TrainTeacherWritesExactlyThreeFilesDeterministically) {
  const auto a = tkd_cli(small({"train-teacher", "--out", dir("a")}));
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(listing(dir("a")), (std::set<std::string>{"checkpoint.tkd", "report.csv", "resolved.cfg"}));
  const auto b = tkd_cli(small({"train-teacher", "--out", dir("b")}));
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(tkd::read_file(fs::path(dir("a")) / "checkpoint.tkd"), tkd::read_file(fs::path(dir("b")) / "checkpoint.tkd"));
  const auto c = tkd_cli(small({"train-teacher", "--out", dir("c"), "--seed", "2"}));
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(tkd::read_file(fs::path(dir("a")) / "checkpoint.tkd"), tkd::read_file(fs::path(dir("c")) / "checkpoint.tkd"));
}

TEST_F(CliTest, EvaluateReproducesFinalValidationReport) {
  ASSERT_EQ(tkd_cli(small({"train-teacher", "--out", dir("t")})).code, 0);
  const std::string report = tkd::read_file(fs::path(dir("t")) / "report.csv");
  const auto e = tkd_cli(small({"evaluate", (fs::path(dir("t")) / "checkpoint.tkd").string(), "--out", dir("e")}));
  ASSERT_EQ(e.code, 0) << e.err;
  const std::string metrics = tkd::read_file(fs::path(dir("e")) / "metrics.csv");
  const auto split = report.find("\n\n");
  ASSERT_NE(split, std::string::npos);
  EXPECT_EQ(report.substr(split + 2), metrics);
}

TEST_F(CliTest, EvaluateNeedsExactlyOneSource) {
  EXPECT_EQ(tkd_cli(small({"evaluate"})).code, 2);
  EXPECT_EQ(tkd_cli(small({"evaluate", "x.tkd", "--predictions", "p.csv"})).code, 2);
}

TEST_F(CliTest, EvaluateExternalPredictions) {
  const auto ok = tkd_cli(sst({"evaluate", "--predictions", fixture("dev_predictions.csv").string()}));
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_NE(ok.out.find("accuracy 0.600000"), std::string::npos) << ok.out;
  EXPECT_NE(ok.out.find("0.583333"), std::string::npos) << ok.out;
  tkd::write_file(fs::path(dir("p.csv")), "0,1\n1,0\n3,1\n4,1\n");
  const auto missing = tkd_cli(sst({"evaluate", "--predictions", dir("p.csv")}));
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("example id(s): 2"), std::string::npos) << missing.err;
}

TEST_F(CliTest, SoftLabelsDefaultToTemperatureOneAndCoverTrainSplit) {
  ASSERT_EQ(tkd_cli(small({"train-teacher", "--out", dir("t")})).code, 0);
  const std::string ckpt = (fs::path(dir("t")) / "checkpoint.tkd").string();
  const auto r = tkd_cli(small({"make-softlabels", ckpt, "--out", dir("s")}));
  ASSERT_EQ(r.code, 0) << r.err;
  const tkd::SoftLabelStore store = tkd::load_soft_labels(fs::path(dir("s")) / "softlabels.txt");
  EXPECT_EQ(store.temperature, 1.0);
  EXPECT_EQ(store.size(), 64u);
  EXPECT_EQ(store.teacher_checksum, tkd::checkpoint_checksum(tkd::load_checkpoint(ckpt)));
  const std::string text = tkd::read_file(fs::path(dir("s")) / "softlabels.txt");
  EXPECT_EQ(text.rfind("SOFTLABELS1 n=64 classes=2 T=1 ", 0), 0u) << text.substr(0, 60);
}

TEST_F(CliTest, DistillDefaultsAndChecksumGuard) {
  ASSERT_EQ(tkd_cli(small({"train-teacher", "--out", dir("t")})).code, 0);
  ASSERT_EQ(tkd_cli(small({"train-teacher", "--out", dir("other"), "--seed", "9"})).code, 0);
  const std::string ckpt = (fs::path(dir("t")) / "checkpoint.tkd").string();
  ASSERT_EQ(tkd_cli(small({"make-softlabels", ckpt, "--out", dir("s")})).code, 0);
  const std::string labels = (fs::path(dir("s")) / "softlabels.txt").string();

  const auto d = tkd_cli(small({"distill", labels, "--teacher", ckpt, "--out", dir("d")}));
  ASSERT_EQ(d.code, 0) << d.err;
  EXPECT_EQ(listing(dir("d")), (std::set<std::string>{"checkpoint.tkd", "report.csv", "resolved.cfg"}));
  const std::string resolved = tkd::read_file(fs::path(dir("d")) / "resolved.cfg");
  EXPECT_NE(resolved.find("\nalpha = 0.5\n"), std::string::npos);

  const std::string other = (fs::path(dir("other")) / "checkpoint.tkd").string();
  const auto bad = tkd_cli(small({"distill", labels, "--teacher", other, "--out", dir("bad")}));
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("come from teacher"), std::string::npos) << bad.err;
  EXPECT_FALSE(fs::exists(dir("bad")));

  auto wrong_size = small({"distill", labels, "--out", dir("cover")});
  std::replace(wrong_size.begin(), wrong_size.end(), std::string("train_size=64"), std::string("train_size=80"));
  const auto uncovered = tkd_cli(wrong_size);
  EXPECT_EQ(uncovered.code, 1);
  EXPECT_NE(uncovered.err.find("missing"), std::string::npos) << uncovered.err;
}

TEST_F(CliTest, AlphaZeroDistillMatchesPlainTrainingThroughCli) {
  ASSERT_EQ(tkd_cli(small({"train-teacher", "--out", dir("t")})).code, 0);
  ASSERT_EQ(tkd_cli(small({"make-softlabels", (fs::path(dir("t")) / "checkpoint.tkd").string(), "--out", dir("s")})).code, 0);
  const auto d1 = tkd_cli(small({"distill", (fs::path(dir("s")) / "softlabels.txt").string(), "--alpha", "0", "--out", dir("d1")}));
  const auto d2 = tkd_cli(small({"distill", (fs::path(dir("s")) / "softlabels.txt").string(), "--alpha", "0", "--out", dir("d2")}));
  ASSERT_EQ(d1.code, 0) << d1.err;
  ASSERT_EQ(d2.code, 0) << d2.err;
  EXPECT_EQ(tkd::read_file(fs::path(dir("d1")) / "checkpoint.tkd"), tkd::read_file(fs::path(dir("d2")) / "checkpoint.tkd"));
}

TEST_F(CliTest, PretrainWritesLossReport) {
  const auto r = tkd_cli(small({"pretrain", "--out", dir("p")}));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string report = tkd::read_file(fs::path(dir("p")) / "report.csv");
  EXPECT_EQ(report.rfind("batch,loss\n1,", 0), 0u);
  EXPECT_EQ(listing(dir("p")), (std::set<std::string>{"checkpoint.tkd", "report.csv", "resolved.cfg"}));
  auto init = small({"train-teacher", "--out", dir("t")});
  init.push_back("--set");
  init.push_back("init_checkpoint=" + (fs::path(dir("p")) / "checkpoint.tkd").string());
  EXPECT_EQ(tkd_cli(init).code, 2);
}

TEST_F(CliTest, GradcheckPasses) {
  const auto r = tkd_cli({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("max_rel_error ", 0), 0u);
  const double err = std::stod(r.out.substr(14));
  EXPECT_LT(err, 1e-3);
}

TEST_F(CliTest, AblateWritesTableForEveryArm) {
  tkd::write_file(fs::path(dir("plan.cfg")), "arms = TKD-NLP, T-NLP, KD-NLP\nseeds = 1, 2\n");
  const auto r = tkd_cli(small({"ablate", dir("plan.cfg"), "--out", dir("ab")}));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* arm : {"TKD-NLP", "T-NLP", "KD-NLP"}) EXPECT_NE(r.out.find(arm), std::string::npos);
  EXPECT_EQ(listing(dir("ab")), (std::set<std::string>{"ablation.csv", "ablation.txt", "resolved.cfg"}));
  const std::string csv = tkd::read_file(fs::path(dir("ab")) / "ablation.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.begin() + static_cast<std::ptrdiff_t>(csv.find("\n\n")), '\n'), 6);
  EXPECT_EQ(tkd_cli(small({"ablate", dir("missing.plan"), "--out", dir("ab2")})).code, 2);
}
