#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ctrl/adam.hpp"
#include "ctrl/data.hpp"
#include "ctrl/eval.hpp"
#include "ctrl/model.hpp"

namespace ctrl {

/// ASYNC alternates STEP1 (CNN only) and STEP2 (CTRL + FC). SYNC trains all
/// groups at once. FROZEN_CNN trains CTRL + FC only.
enum class TrainMode { kAsync, kSync, kFrozenCnn };
enum class Phase { kStep1, kStep2, kSync, kFrozenCnn };
enum class Metric { kLoss, kF1 };

std::string_view mode_name(TrainMode m);
TrainMode parse_mode(std::string_view name);
std::string_view phase_name(Phase p);
Phase parse_phase(std::string_view name);
std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view name);

/// Groups an optimizer may update during `phase`.
GroupSet active_groups(Phase phase);

/// Training mode a variant is normally run with (ctrl -> async, ctrl-minus ->
/// sync, ctrl-minusminus -> frozen-cnn, decnn -> sync).
TrainMode default_mode(Variant v);

struct TrainConfig {
  TrainMode mode = TrainMode::kAsync;
  double lr_step1 = 0.00005;
  double lr_step2 = 0.0001;
  double lr_sync = 0.0001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;       // per phase
  std::size_t patience = 5;          // epochs without improvement inside a phase
  std::size_t global_patience = 3;   // alternation steps without improvement
  std::size_t max_total_epochs = 0;  // 0 = unlimited
  Metric metric = Metric::kLoss;
  /// Start every phase with zeroed moments and step counter.
  bool fresh_optimizer_per_phase = true;
  std::uint64_t seed = 1;
  /// Phase-best checkpoints are written here when non-empty.
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

struct TrainData {
  std::vector<EncodedSentence> train;
  std::vector<EncodedSentence> validation;
  std::vector<EncodedSentence> test;  // optional; never used for selection
};

struct EpochRecord {
  int epoch = 0;  // global, strictly increasing across phases
  Phase phase = Phase::kStep1;
  int step = 0;   // 1-based phase index
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_f1 = 0.0;
  std::optional<double> test_f1;

  bool operator==(const EpochRecord&) const = default;
};

/// One per executed phase.
struct StepMarker {
  int step = 0;
  Phase phase = Phase::kStep1;
  int first_epoch = 0;
  int last_epoch = 0;  // first_epoch - 1 if the phase ran no epoch
  double start_val_loss = 0.0;  // before any update
  double start_val_f1 = 0.0;
  double best_metric = 0.0;
  int best_epoch = 0;  // 0 when the starting model stayed best

  bool operator==(const StepMarker&) const = default;
};

struct RunLog {
  std::vector<EpochRecord> epochs;
  std::vector<StepMarker> steps;

  bool operator==(const RunLog&) const = default;
};

struct Evaluation {
  double loss = 0.0;  // token-mean cross-entropy
  PRF prf;
};

/// Eval-mode loss and chunk scores over a labelled set.
Evaluation evaluate(const Model& model, std::span<const EncodedSentence> sentences, std::size_t batch_size = 64);

/// Argmax class id per token, eval mode.
std::vector<std::vector<std::int32_t>> predict(const Model& model, std::span<const EncodedSentence> sentences,
                                               std::size_t batch_size = 64);

struct PhaseResult {
  Model best;
  double best_metric = 0.0;
  int best_epoch = 0;
  Evaluation start;
};

struct TrainResult {
  Model best;
  double best_metric = 0.0;
};

class Trainer {
 public:
  Trainer(TrainConfig config, TrainData data, std::vector<std::string> vocab = {});

  /// Trains a copy of `start` with the phase's active groups and returns the
  /// best model by validation metric, the starting model included.
  PhaseResult run_phase(const Model& start, Phase phase);

  /// Alternates STEP1 and STEP2 from the global best until the global best
  /// fails to improve for `global_patience` consecutive phases.
  TrainResult async_train(const Model& initial);

  /// One SYNC or FROZEN_CNN phase, depending on the mode.
  TrainResult sync_train(const Model& initial);

  /// Dispatches on config().mode.
  TrainResult train(const Model& initial);

  /// Called after every epoch with the record just logged.
  void set_epoch_callback(std::function<void(const EpochRecord&)> cb) { on_epoch_ = std::move(cb); }

  const RunLog& log() const noexcept { return log_; }
  const TrainConfig& config() const noexcept { return config_; }

  /// True when `candidate` is strictly better than `incumbent` under the
  /// configured metric.
  bool improves(double candidate, double incumbent) const;
  double metric_of(const Evaluation& e) const;

 private:
  double lr_for(Phase phase) const;
  bool epoch_budget_left() const;

  TrainConfig config_;
  TrainData data_;
  std::vector<std::string> vocab_;
  RunLog log_;
  Rng rng_;
  int epoch_ = 0;
  int step_ = 0;
  std::optional<AdamState> shared_optimizer_;
  std::function<void(const EpochRecord&)> on_epoch_;
};

/// Tab-separated curve file: a column header, one row per epoch and '#'
/// annotation lines for phase starts and interior phase boundaries.
void write_curves(std::ostream& out, const RunLog& log);
void export_curves(const RunLog& log, const std::filesystem::path& path);
RunLog parse_curves(std::istream& in);
RunLog load_curves(const std::filesystem::path& path);

}  // namespace ctrl
