#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "test_util.hpp"
#include "xinv/datapipe/synth.hpp"
#include "xinv/error.hpp"
#include "xinv/eval/eval.hpp"
#include "xinv/training/training.hpp"

namespace xinv {
namespace {

using testing::flatten;

// In-memory synthetic data; no disk round trip.
Dataset make_data(std::size_t sources, std::size_t per_source, std::uint64_t seed,
                  std::size_t image_size = 16) {
  SynthSpec spec;
  spec.sources = sources;
  spec.image_size = image_size;
  spec.rho.assign(sources, 0.95);
  spec.seed = seed;
  std::mt19937_64 rng(seed);
  Dataset d;
  for (std::size_t s = 0; s < sources; ++s) d.sources.push_back(source_name(s));
  for (std::size_t s = 0; s < sources; ++s)
    for (std::size_t i = 0; i < per_source; ++i) {
      const int y = static_cast<int>(i % 2);
      d.examples.push_back({render_example(spec, s, y, rng), y, s});
    }
  return d;
}

TrainConfig small_config(Mode mode) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = 3;
  c.batch_size = 16;
  c.seed = 5;
  return c;
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.lambda = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.d_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_mode("alternating"), Mode::Alternating);
  EXPECT_THROW(parse_mode("adam"), ConfigError);
  EXPECT_EQ(TrainConfig{}.to_json()["mode"], "grad_reversal");
}

TEST(Trainer, AdversarialNeedsTwoSources) {
  EXPECT_THROW(Trainer(small_config(Mode::GradReversal), 1), ConfigError);
  EXPECT_THROW(Trainer(small_config(Mode::Alternating), 1), ConfigError);
  Trainer baseline(small_config(Mode::Baseline), 1);
  EXPECT_FALSE(baseline.params().discriminator.has_value());
  const auto data = make_data(1, 8, 1);
  EXPECT_THROW(train(small_config(Mode::GradReversal), data), ConfigError);
}

TEST(Trainer, BaselineNeverBuildsDiscriminator) {
  const auto data = make_data(3, 16, 2);
  const auto r = train(small_config(Mode::Baseline), data);
  EXPECT_FALSE(r.params.discriminator.has_value());
  for (const auto& e : r.record.epochs) {
    EXPECT_FALSE(e.loss_s.has_value());
    EXPECT_FALSE(e.disc_acc.has_value());
  }
  EXPECT_NE(r.record.to_jsonl().find("\"L_s\":null"), std::string::npos);
}

TEST(Trainer, LambdaZeroMatchesBaseline) {
  const auto data = make_data(3, 24, 3);
  auto adv = small_config(Mode::GradReversal);
  adv.lambda = 0.0;
  const auto a = train(adv, data);
  const auto b = train(small_config(Mode::Baseline), data);
  ASSERT_EQ(a.record.epochs.size(), b.record.epochs.size());
  for (std::size_t e = 0; e < a.record.epochs.size(); ++e) {
    EXPECT_EQ(a.record.epochs[e].loss_p, b.record.epochs[e].loss_p);
    EXPECT_EQ(a.record.epochs[e].train_acc, b.record.epochs[e].train_acc);
  }
  EXPECT_EQ(flatten(a.params.extractor_params()), flatten(b.params.extractor_params()));
  EXPECT_EQ(flatten(a.params.classifier_params()), flatten(b.params.classifier_params()));
}

TEST(Trainer, AlternatingPhasesFreezeTheOtherGroup) {
  const auto data = make_data(3, 16, 4);
  auto cfg = small_config(Mode::Alternating);
  Trainer t(cfg, 3);
  Batch idx(16);
  std::iota(idx.begin(), idx.end(), 0);
  const auto batch = make_batch(data, idx);

  for (int round = 0; round < 3; ++round) {
    const auto e0 = flatten(t.params().extractor_params());
    const auto c0 = flatten(t.params().classifier_params());
    const auto d0 = flatten(t.params().discriminator_params());
    t.discriminator_update(batch);
    EXPECT_EQ(flatten(t.params().extractor_params()), e0);
    EXPECT_EQ(flatten(t.params().classifier_params()), c0);
    const auto d1 = flatten(t.params().discriminator_params());
    EXPECT_NE(d1, d0);

    StepStats stats;
    t.extractor_update(batch, stats);
    EXPECT_EQ(flatten(t.params().discriminator_params()), d1);
    EXPECT_NE(flatten(t.params().extractor_params()), e0);
    for (const auto& n : t.params().named()) {
      ASSERT_TRUE(n.tensor.has_grad());
      for (double g : n.tensor.grad()) ASSERT_EQ(g, 0.0) << n.name;
    }
  }
}

TEST(Trainer, ReversalStepEqualsDeferredAlternatingStep) {
  const auto data = make_data(3, 16, 5);
  Batch idx(24);
  std::iota(idx.begin(), idx.end(), 10);
  const auto batch = make_batch(data, idx);
  for (double lambda : {0.5, 1.0, 2.0}) {
    auto grl = small_config(Mode::GradReversal);
    grl.lambda = lambda;
    auto alt = small_config(Mode::Alternating);
    alt.lambda = lambda;
    alt.defer_discriminator = true;
    const auto init = ModelParams::init(17, 3);
    Trainer a(grl, init.clone()), b(alt, init.clone());
    a.step(batch);
    b.step(batch);
    const auto r = oracle::compare_absolute(flatten(a.params().extractor_params()),
                                            flatten(b.params().extractor_params()), 1e-10);
    EXPECT_TRUE(r.passed) << "lambda " << lambda << " worst " << r.worst;
    EXPECT_TRUE(oracle::compare_absolute(flatten(a.params().classifier_params()),
                                         flatten(b.params().classifier_params()), 1e-10)
                    .passed);
  }
}

TEST(Trainer, MoreDiscriminatorStepsMoveDiscriminatorFurther) {
  const auto data = make_data(3, 16, 6);
  Batch idx(16);
  std::iota(idx.begin(), idx.end(), 0);
  const auto batch = make_batch(data, idx);
  const auto init = ModelParams::init(3, 3);
  auto one = small_config(Mode::Alternating);
  auto three = one;
  three.d_steps = 3;
  Trainer a(one, init.clone()), b(three, init.clone());
  a.step(batch);
  b.step(batch);
  EXPECT_NE(flatten(a.params().discriminator_params()), flatten(b.params().discriminator_params()));
}

TEST(Trainer, EpochZeroLossesNearChance) {
  const std::size_t s = 3;
  const auto data = make_data(s, 64, 7);
  for (auto mode : {Mode::GradReversal, Mode::Alternating}) {
    auto cfg = small_config(mode);
    cfg.epochs = 1;
    cfg.batch_size = 32;
    const auto r = train(cfg, data);
    const auto& e = r.record.epochs.at(0);
    EXPECT_NEAR(e.loss_p, std::numbers::ln2, 0.2 * std::numbers::ln2);
    ASSERT_TRUE(e.loss_s.has_value());
    EXPECT_NEAR(*e.loss_s, s * std::numbers::ln2, 0.2 * s * std::numbers::ln2);
  }
}

TEST(Trainer, RunsAreDeterministic) {
  const auto data = make_data(3, 16, 8);
  for (auto mode : {Mode::Baseline, Mode::GradReversal, Mode::Alternating}) {
    const auto a = train(small_config(mode), data);
    const auto b = train(small_config(mode), data);
    EXPECT_EQ(a.record.to_jsonl(), b.record.to_jsonl());
    EXPECT_EQ(flatten(a.params.named()), flatten(b.params.named()));
  }
  auto other = small_config(Mode::GradReversal);
  other.seed = 6;
  EXPECT_NE(flatten(train(other, data).params.named()),
            flatten(train(small_config(Mode::GradReversal), data).params.named()));
}

TEST(Trainer, RecordHasOneEntryPerEpoch) {
  const auto data = make_data(2, 8, 9);
  auto cfg = small_config(Mode::GradReversal);
  cfg.epochs = 4;
  int seen = 0;
  const auto r = train(cfg, data, [&](const EpochStats& e) { EXPECT_EQ(e.epoch, seen++); });
  EXPECT_EQ(seen, 4);
  const auto jsonl = r.record.to_jsonl();
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 4);
  const auto first = nlohmann::json::parse(jsonl.substr(0, jsonl.find('\n')));
  for (const char* key : {"epoch", "L_p", "L_s", "disc_acc", "train_acc"}) {
    EXPECT_TRUE(first.contains(key)) << key;
  }
  EXPECT_EQ(first.size(), 5u);
}

// Leave-one-out orchestration on a small generated set.
class LooTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SynthSpec spec;
    spec.n = 24;
    spec.seed = 3;
    out_ = synth_generate(spec, dir_.path());
  }
  testing::TempDir dir_;
  SynthOutput out_;
};

TEST_F(LooTest, ReportHasBaselineAndProposedPerFold) {
  LooConfig cfg;
  cfg.train = small_config(Mode::GradReversal);
  cfg.train.epochs = 1;
  cfg.held_out = {"src3", "src1"};
  cfg.out_dir = dir_.path();
  const auto r = run_leave_one_out(cfg, out_.train, out_.test);
  ASSERT_EQ(r.report.folds.size(), 4u);
  EXPECT_EQ(r.report.folds[0].held_out, "src3");
  EXPECT_EQ(r.report.folds[0].mode, "baseline");
  EXPECT_EQ(r.report.folds[1].mode, "grad_reversal");
  EXPECT_EQ(r.report.folds[2].held_out, "src1");
  for (const auto& f : r.report.folds) {
    EXPECT_GE(f.auc_in_source, 0.0);
    EXPECT_LE(f.auc_out_of_source, 1.0);
  }
  EXPECT_TRUE(std::filesystem::exists(dir_ / "fold3.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir_ / "fold3.baseline.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir_ / "fold1.jsonl"));
  EXPECT_EQ(load_checkpoint(dir_ / "fold3.ckpt").discriminator->sources(), 3u);
}

TEST_F(LooTest, ParallelFoldsMatchSequential) {
  LooConfig cfg;
  cfg.train = small_config(Mode::Alternating);
  cfg.train.epochs = 1;
  const auto seq = run_leave_one_out(cfg, out_.train, out_.test);
  cfg.jobs = 3;
  const auto par = run_leave_one_out(cfg, out_.train, out_.test);
  EXPECT_EQ(seq.report.to_json().dump(), par.report.to_json().dump());
  EXPECT_EQ(seq.report.folds.size(), 8u);
}

TEST_F(LooTest, Errors) {
  LooConfig cfg;
  cfg.train = small_config(Mode::GradReversal);
  cfg.train.epochs = 1;
  EXPECT_THROW(run_leave_one_out(cfg, out_.train.filter_sources({"src0", "src1"}), out_.test),
               ConfigError);
  EXPECT_THROW(run_leave_one_out(cfg, out_.train, out_.test.filter_sources({"src2"}, false)),
               ConfigError);
  cfg.held_out = {"nowhere"};
  EXPECT_THROW(run_leave_one_out(cfg, out_.train, out_.test), ConfigError);
}

// A held-out source that is a relabelled copy of a training source: both
// modes should score it like the in-source split.
TEST(Loo, ClonedSourceHasNoGap) {
  testing::TempDir dir;
  SynthSpec spec;
  spec.sources = 3;
  spec.n = 100;
  spec.rho = {0.95, 0.95, 0.95};
  spec.seed = 12;
  const auto out = synth_generate(spec, dir.path());
  auto clone = [](const Manifest& m) {
    auto records = m.records();
    for (const auto& r : m.records())
      if (r.source == "src0") records.push_back({r.path, r.label, "copy"});
    return Manifest(std::move(records));
  };
  LooConfig cfg;
  cfg.train = small_config(Mode::GradReversal);
  cfg.train.epochs = 5;
  cfg.train.batch_size = 32;
  cfg.held_out = {"copy"};
  const auto r = run_leave_one_out(cfg, clone(out.train), clone(out.test));
  ASSERT_EQ(r.report.folds.size(), 2u);
  for (const auto& f : r.report.folds) {
    EXPECT_GT(f.auc_in_source, 0.8) << f.mode;
    EXPECT_LT(std::abs(f.gap()), 0.05) << f.mode;
  }
}

}  // namespace
}  // namespace xinv
