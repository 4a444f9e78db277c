#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "ctrl/checkpoint.hpp"
#include "ctrl/error.hpp"
#include "ctrl/trainer.hpp"
#include "support/synthetic.hpp"

namespace ctrl {
namespace {

constexpr GroupSet kCnnOnly{Group::kCnn};
constexpr GroupSet kCtrlFc{Group::kCtrl, Group::kFc};

struct Fixture {
  Vocab vocab;
  Model model;
  TrainData data;
};

Fixture make_fixture(Variant variant, std::size_t sentences = 20, std::uint64_t seed = 1, double noise = 0.0) {
  testing::SyntheticOptions opts;
  opts.sentences = sentences;
  opts.vocab = 40;
  opts.heads = 8;
  opts.tails = 4;
  opts.seed = seed;
  opts.label_noise = noise;
  const auto corpus = testing::synthetic_corpus(opts);
  ModelConfig c = testing::tiny_config(variant, opts.vocab, seed);
  c.dropout = 0.2;
  auto setup = testing::synthetic_model(corpus, c, seed + 100);
  const Split split = split_validation(corpus, sentences / 4, seed);
  TrainData data{encode(split.train, setup.vocab), encode(split.validation, setup.vocab), {}};
  return {setup.vocab, setup.model, std::move(data)};
}

TrainConfig fast_config(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.lr_step1 = 3e-3;
  c.lr_step2 = 3e-3;
  c.lr_sync = 3e-3;
  c.batch_size = 4;
  c.max_epochs = 3;
  c.patience = 2;
  c.global_patience = 2;
  c.max_total_epochs = 12;
  return c;
}

TEST(TrainEnums, NamesRoundTripAndGroups) {
  for (Phase p : {Phase::kStep1, Phase::kStep2, Phase::kSync, Phase::kFrozenCnn}) EXPECT_EQ(parse_phase(phase_name(p)), p);
  for (TrainMode m : {TrainMode::kAsync, TrainMode::kSync, TrainMode::kFrozenCnn}) EXPECT_EQ(parse_mode(mode_name(m)), m);
  EXPECT_EQ(parse_metric("f1"), Metric::kF1);
  EXPECT_THROW(parse_mode("sometimes"), ConfigError);
  EXPECT_EQ(active_groups(Phase::kStep1), kCnnOnly);
  EXPECT_EQ(active_groups(Phase::kStep2), kCtrlFc);
  EXPECT_EQ(active_groups(Phase::kSync), (GroupSet{Group::kCnn, Group::kCtrl, Group::kFc}));
  EXPECT_EQ(active_groups(Phase::kFrozenCnn), kCtrlFc);
  EXPECT_EQ(default_mode(Variant::kCtrl), TrainMode::kAsync);
  EXPECT_EQ(default_mode(Variant::kCtrlMinus), TrainMode::kSync);
  EXPECT_EQ(default_mode(Variant::kDanMinusMinus), TrainMode::kFrozenCnn);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Trainer, EmptyDataIsConfigError) {
  Fixture f = make_fixture(Variant::kCtrl);
  TrainData no_train{{}, f.data.validation, {}};
  EXPECT_THROW(Trainer(fast_config(TrainMode::kAsync), no_train), ConfigError);
}

TEST(Trainer, ImprovesIsStrict) {
  Trainer loss(fast_config(TrainMode::kSync), make_fixture(Variant::kCtrl).data);
  EXPECT_TRUE(loss.improves(0.5, 0.6));
  EXPECT_FALSE(loss.improves(0.6, 0.6));
  TrainConfig c = fast_config(TrainMode::kSync);
  c.metric = Metric::kF1;
  Trainer f1(c, make_fixture(Variant::kCtrl).data);
  EXPECT_TRUE(f1.improves(0.7, 0.6));
  EXPECT_FALSE(f1.improves(0.6, 0.6));
}

TEST(RunPhase, Step1FreezesControlAndOutput) {
  Fixture f = make_fixture(Variant::kCtrl);
  Trainer t(fast_config(TrainMode::kAsync), f.data);
  const PhaseResult r = t.run_phase(f.model, Phase::kStep1);
  ASSERT_GT(r.best_epoch, 0) << "phase never improved, freeze check would be vacuous";
  EXPECT_EQ(serialize_groups(r.best, kCtrlFc), serialize_groups(f.model, kCtrlFc));
  EXPECT_EQ(serialize_groups(r.best, {Group::kEmb}), serialize_groups(f.model, {Group::kEmb}));
  EXPECT_NE(serialize_groups(r.best, kCnnOnly), serialize_groups(f.model, kCnnOnly));
}

TEST(RunPhase, Step2FreezesCnn) {
  Fixture f = make_fixture(Variant::kCtrl);
  Trainer t(fast_config(TrainMode::kAsync), f.data);
  const PhaseResult r = t.run_phase(f.model, Phase::kStep2);
  ASSERT_GT(r.best_epoch, 0);
  EXPECT_EQ(serialize_groups(r.best, kCnnOnly), serialize_groups(f.model, kCnnOnly));
  EXPECT_NE(serialize_groups(r.best, kCtrlFc), serialize_groups(f.model, kCtrlFc));
}

TEST(RunPhase, TrainingLossReplaysExactly) {
  Fixture f = make_fixture(Variant::kCtrl, 6);
  TrainConfig c = fast_config(TrainMode::kSync);
  c.batch_size = 64;  // one batch
  c.max_epochs = 3;
  c.patience = 3;
  auto losses = [&] {
    Trainer t(c, f.data);
    t.run_phase(f.model, Phase::kSync);
    std::vector<double> out;
    for (const auto& e : t.log().epochs) out.push_back(e.train_loss);
    return out;
  };
  const auto a = losses();
  EXPECT_EQ(a.size(), 3u);
  EXPECT_EQ(a, losses());
}

TEST(AsyncTrain, ZeroLearningRateStopsAfterOneStep) {
  Fixture f = make_fixture(Variant::kCtrl);
  TrainConfig c = fast_config(TrainMode::kAsync);
  c.lr_step1 = c.lr_step2 = 0.0;
  c.global_patience = 1;
  c.max_total_epochs = 0;
  Trainer t(c, f.data);
  const TrainResult r = t.async_train(f.model);
  EXPECT_EQ(t.log().steps.size(), 1u);
  EXPECT_EQ(t.log().steps[0].phase, Phase::kStep1);
  EXPECT_EQ(t.log().steps[0].best_epoch, 0);
  EXPECT_EQ(serialize_groups(r.best, {Group::kCnn, Group::kCtrl, Group::kFc}),
            serialize_groups(f.model, {Group::kCnn, Group::kCtrl, Group::kFc}));
}

TEST(AsyncTrain, AlternatesAndHandsOffBestCheckpoint) {
  Fixture f = make_fixture(Variant::kCtrl, 24, 3);
  Trainer t(fast_config(TrainMode::kAsync), f.data);
  const TrainResult r = t.async_train(f.model);
  const RunLog& log = t.log();
  ASSERT_GE(log.steps.size(), 2u);

  double global = evaluate(f.model, f.data.validation, 4).loss;
  for (std::size_t k = 0; k < log.steps.size(); ++k) {
    const StepMarker& m = log.steps[k];
    EXPECT_EQ(m.step, static_cast<int>(k) + 1);
    EXPECT_EQ(m.phase, k % 2 == 0 ? Phase::kStep1 : Phase::kStep2);
    // Each phase starts from the global best so far.
    EXPECT_NEAR(m.start_val_loss, global, 1e-9) << "step " << m.step;
    global = std::min(global, m.best_metric);
  }

  // Epochs strictly increase and each belongs to the step whose range covers it.
  for (std::size_t i = 0; i < log.epochs.size(); ++i) {
    EXPECT_EQ(log.epochs[i].epoch, static_cast<int>(i) + 1);
    const StepMarker& m = log.steps[log.epochs[i].step - 1];
    EXPECT_GE(log.epochs[i].epoch, m.first_epoch);
    EXPECT_LE(log.epochs[i].epoch, m.last_epoch);
    EXPECT_EQ(log.epochs[i].phase, m.phase);
  }
  EXPECT_LE(log.epochs.size(), 12u);

  // The returned model attains the best validation loss seen anywhere.
  double best_seen = log.steps[0].start_val_loss;
  for (const auto& e : log.epochs) best_seen = std::min(best_seen, e.val_loss);
  EXPECT_DOUBLE_EQ(r.best_metric, best_seen);
  EXPECT_NEAR(evaluate(r.best, f.data.validation, 4).loss, best_seen, 1e-9);
}

TEST(AsyncTrain, F1MetricSelectsMaximum) {
  Fixture f = make_fixture(Variant::kCtrl, 24, 4);
  TrainConfig c = fast_config(TrainMode::kAsync);
  c.metric = Metric::kF1;
  Trainer t(c, f.data);
  const TrainResult r = t.async_train(f.model);
  double best_seen = t.log().steps[0].start_val_f1;
  for (const auto& e : t.log().epochs) best_seen = std::max(best_seen, e.val_f1);
  EXPECT_DOUBLE_EQ(r.best_metric, best_seen);
}

TEST(SyncTrain, SinglePhaseAndReplay) {
  Fixture f = make_fixture(Variant::kCtrlMinus, 20, 5);
  auto run = [&] {
    Trainer t(fast_config(TrainMode::kSync), f.data);
    TrainResult r = t.sync_train(f.model);
    return std::make_pair(t.log(), encode_checkpoint(r.best, f.vocab.tokens()));
  };
  const auto [log_a, bytes_a] = run();
  const auto [log_b, bytes_b] = run();
  EXPECT_EQ(log_a, log_b);
  EXPECT_EQ(bytes_a, bytes_b);
  ASSERT_EQ(log_a.steps.size(), 1u);
  EXPECT_EQ(log_a.steps[0].phase, Phase::kSync);
  Trainer wrong(fast_config(TrainMode::kSync), f.data);
  EXPECT_THROW(wrong.async_train(f.model), ConfigError);
}

TEST(SyncTrain, FrozenCnnKeepsCnnBytes) {
  Fixture f = make_fixture(Variant::kCtrlMinusMinus, 20, 6);
  Trainer t(fast_config(TrainMode::kFrozenCnn), f.data);
  const TrainResult r = t.train(f.model);
  EXPECT_EQ(t.log().steps.at(0).phase, Phase::kFrozenCnn);
  EXPECT_EQ(serialize_groups(r.best, kCnnOnly), serialize_groups(f.model, kCnnOnly));
  EXPECT_NE(serialize_groups(r.best, kCtrlFc), serialize_groups(f.model, kCtrlFc));
}

TEST(Trainer, TestScoresNeverAffectSelection) {
  Fixture f = make_fixture(Variant::kCtrl, 24, 7);
  TrainData with_test = f.data;
  with_test.test = f.data.validation;
  std::reverse(with_test.test.begin(), with_test.test.end());
  Trainer a(fast_config(TrainMode::kAsync), f.data), b(fast_config(TrainMode::kAsync), with_test);
  const TrainResult ra = a.train(f.model), rb = b.train(f.model);
  EXPECT_EQ(encode_checkpoint(ra.best, {}), encode_checkpoint(rb.best, {}));
  ASSERT_EQ(a.log().epochs.size(), b.log().epochs.size());
  for (const auto& e : b.log().epochs) EXPECT_TRUE(e.test_f1.has_value());
  for (const auto& e : a.log().epochs) EXPECT_FALSE(e.test_f1.has_value());
}

TEST(Trainer, PhaseCheckpointsWritten) {
  Fixture f = make_fixture(Variant::kCtrl, 16, 8);
  TrainConfig c = fast_config(TrainMode::kAsync);
  const char* base = std::getenv("CTRL_TEST_TMP");
  c.checkpoint_dir = std::filesystem::path(base ? base : "/tmp") / "phase_ckpts";
  std::filesystem::remove_all(c.checkpoint_dir);
  Trainer t(c, f.data, f.vocab.tokens());
  t.train(f.model);
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(c.checkpoint_dir)) {
    EXPECT_EQ(entry.path().extension(), ".ckpt");
    EXPECT_EQ(entry.path().filename().string().rfind("step", 0), 0u);
    const Checkpoint ck = load_checkpoint(entry.path());
    EXPECT_EQ(ck.vocab, f.vocab.tokens());
    ++files;
  }
  EXPECT_EQ(files, t.log().steps.size());
}

TEST(Evaluate, LossAndPrediction) {
  Fixture f = make_fixture(Variant::kCtrl, 12, 9);
  const Evaluation e = evaluate(f.model, f.data.train, 5);
  EXPECT_GT(e.loss, 0.0);
  EXPECT_TRUE(std::isfinite(e.loss));
  const auto pred = predict(f.model, f.data.train, 5);
  ASSERT_EQ(pred.size(), f.data.train.size());
  for (std::size_t i = 0; i < pred.size(); ++i) EXPECT_EQ(pred[i].size(), f.data.train[i].ids.size());
  // batch size does not change the outcome
  EXPECT_NEAR(evaluate(f.model, f.data.train, 1).loss, e.loss, 1e-12);
}

RunLog sample_log(std::size_t epochs, std::size_t phases) {
  RunLog log;
  int epoch = 0;
  for (std::size_t s = 0; s < phases; ++s) {
    StepMarker m;
    m.step = static_cast<int>(s) + 1;
    m.phase = s % 2 == 0 ? Phase::kStep1 : Phase::kStep2;
    m.first_epoch = epoch + 1;
    m.start_val_loss = 1.0 / 3.0 + static_cast<double>(s);
    m.start_val_f1 = 0.1;
    for (std::size_t e = 0; e < epochs / phases; ++e) {
      EpochRecord r{++epoch, m.phase, m.step, std::exp(-epoch * 0.1), 0.123456789012345678 * epoch, 0.5, {}};
      if (epoch % 2 == 0) r.test_f1 = 1.0 / 7.0;
      log.epochs.push_back(r);
    }
    m.last_epoch = epoch;
    m.best_metric = 0.2;
    m.best_epoch = epoch;
    log.steps.push_back(m);
  }
  return log;
}

TEST(Curves, RowCountBoundariesAndRoundTrip) {
  const RunLog one = sample_log(5, 1);
  std::ostringstream out;
  write_curves(out, one);
  std::size_t data_rows = 0, boundaries = 0, lines = 0;
  std::istringstream in(out.str());
  for (std::string line; std::getline(in, line); ++lines) {
    if (lines == 0) continue;
    if (line.rfind("# boundary", 0) == 0) ++boundaries;
    else if (line[0] != '#') ++data_rows;
  }
  EXPECT_EQ(data_rows, 5u);
  EXPECT_EQ(boundaries, 0u);

  const RunLog two = sample_log(6, 2);
  std::ostringstream out2;
  write_curves(out2, two);
  const std::string text = out2.str();
  std::size_t count = 0;
  for (std::size_t pos = text.find("# boundary"); pos != std::string::npos; pos = text.find("# boundary", pos + 1)) ++count;
  EXPECT_EQ(count, 1u);

  std::istringstream back(text);
  EXPECT_EQ(parse_curves(back), two);
}

TEST(Curves, RealRunRoundTripsThroughFile) {
  Fixture f = make_fixture(Variant::kCtrl, 16, 10);
  Trainer t(fast_config(TrainMode::kAsync), f.data);
  t.train(f.model);
  const char* base = std::getenv("CTRL_TEST_TMP");
  const auto dir = std::filesystem::path(base ? base : "/tmp");
  std::filesystem::create_directories(dir);
  export_curves(t.log(), dir / "curves.tsv");
  EXPECT_EQ(load_curves(dir / "curves.tsv"), t.log());
  EXPECT_THROW(export_curves(RunLog{}, dir / "empty.tsv"), ConfigError);
  EXPECT_THROW(export_curves(t.log(), "/nonexistent/dir/curves.tsv"), IoError);
  std::istringstream garbage("not a header\n");
  EXPECT_THROW(parse_curves(garbage), ParseError);
}

}  // namespace
}  // namespace ctrl
