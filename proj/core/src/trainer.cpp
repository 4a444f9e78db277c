#include "ctrl/trainer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ctrl/checkpoint.hpp"
#include "ctrl/error.hpp"

namespace ctrl {

namespace {

std::string lower_dashed(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::string_view mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kAsync: return "async";
    case TrainMode::kSync: return "sync";
    case TrainMode::kFrozenCnn: return "frozen-cnn";
  }
  return "?";
}

TrainMode parse_mode(std::string_view name) {
  const std::string s = lower_dashed(name);
  if (s == "async") return TrainMode::kAsync;
  if (s == "sync") return TrainMode::kSync;
  if (s == "frozen-cnn") return TrainMode::kFrozenCnn;
  throw ConfigError("unknown training mode '" + std::string(name) + "'");
}

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::kStep1: return "STEP1";
    case Phase::kStep2: return "STEP2";
    case Phase::kSync: return "SYNC";
    case Phase::kFrozenCnn: return "FROZEN_CNN";
  }
  return "?";
}

Phase parse_phase(std::string_view name) {
  for (Phase p : {Phase::kStep1, Phase::kStep2, Phase::kSync, Phase::kFrozenCnn}) {
    if (phase_name(p) == name) return p;
  }
  throw ParseError("unknown phase '" + std::string(name) + "'");
}

std::string_view metric_name(Metric m) { return m == Metric::kLoss ? "loss" : "f1"; }

Metric parse_metric(std::string_view name) {
  const std::string s = lower_dashed(name);
  if (s == "loss") return Metric::kLoss;
  if (s == "f1") return Metric::kF1;
  throw ConfigError("unknown validation metric '" + std::string(name) + "'");
}

GroupSet active_groups(Phase phase) {
  switch (phase) {
    case Phase::kStep1: return {Group::kCnn};
    case Phase::kStep2: return {Group::kCtrl, Group::kFc};
    case Phase::kSync: return {Group::kCnn, Group::kCtrl, Group::kFc};
    case Phase::kFrozenCnn: return {Group::kCtrl, Group::kFc};
  }
  return {};
}

TrainMode default_mode(Variant v) {
  switch (v) {
    case Variant::kCtrl:
    case Variant::kDan: return TrainMode::kAsync;
    case Variant::kCtrlMinusMinus:
    case Variant::kDanMinusMinus: return TrainMode::kFrozenCnn;
    default: return TrainMode::kSync;
  }
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid training config: " + what); };
  if (batch_size == 0) fail("batch_size must be positive");
  if (max_epochs == 0) fail("max_epochs must be positive");
  if (patience == 0 || global_patience == 0) fail("patience values must be >= 1");
  if (lr_step1 < 0 || lr_step2 < 0 || lr_sync < 0) fail("learning rates must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("Adam betas must be in [0, 1)");
  if (!(adam_epsilon > 0)) fail("Adam epsilon must be positive");
}

std::vector<std::vector<std::int32_t>> predict(const Model& model, std::span<const EncodedSentence> sentences,
                                               std::size_t batch_size) {
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(sentences.size());
  Rng unused(0);
  for (const Batch& batch : make_ordered_batches(sentences, batch_size)) {
    const Tensor logits = model.forward(batch, Mode::kEval, unused);
    for (std::size_t b = 0; b < batch.batch_size; ++b) {
      std::vector<std::int32_t> labels(batch.length(b));
      for (std::size_t t = 0; t < labels.size(); ++t) {
        std::int32_t best = 0;
        for (std::int32_t k = 1; k < static_cast<std::int32_t>(ModelConfig::kClasses); ++k) {
          if (logits.at(b, t, static_cast<std::size_t>(k)) > logits.at(b, t, static_cast<std::size_t>(best))) best = k;
        }
        labels[t] = best;
      }
      out.push_back(std::move(labels));
    }
  }
  return out;
}

Evaluation evaluate(const Model& model, std::span<const EncodedSentence> sentences, std::size_t batch_size) {
  if (sentences.empty()) throw ConfigError("cannot evaluate on an empty set");
  Rng unused(0);
  double loss_sum = 0.0;
  std::size_t tokens = 0;
  std::vector<std::vector<ChunkSpan>> gold, pred;
  gold.reserve(sentences.size());
  pred.reserve(sentences.size());
  for (Batch& batch : make_ordered_batches(sentences, batch_size)) {
    Tensor logits = model.forward(batch, Mode::kEval, unused);
    const std::size_t B = batch.batch_size, L = batch.max_len, K = ModelConfig::kClasses;
    std::vector<std::int32_t> argmax(L);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t n = batch.length(b);
      for (std::size_t t = 0; t < n; ++t) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k) {
          if (logits.at(b, t, k) > logits.at(b, t, best)) best = k;
        }
        argmax[t] = static_cast<std::int32_t>(best);
      }
      gold.push_back(decode_bio(batch.row_labels(b).first(n)));
      pred.push_back(decode_bio(std::span<const std::int32_t>(argmax).first(n)));
    }
    logits.reshape({B * L, K});
    const std::size_t ntok = batch.token_count();
    loss_sum += softmax_cross_entropy(logits, batch.labels, batch.mask).loss * static_cast<double>(ntok);
    tokens += ntok;
  }
  return Evaluation{loss_sum / static_cast<double>(tokens), chunk_prf(gold, pred)};
}

Trainer::Trainer(TrainConfig config, TrainData data, std::vector<std::string> vocab)
    : config_(std::move(config)), data_(std::move(data)), vocab_(std::move(vocab)), rng_(config_.seed) {
  config_.validate();
  if (data_.train.empty()) throw ConfigError("training data is empty");
  if (data_.validation.empty()) throw ConfigError("validation data is empty");
}

double Trainer::metric_of(const Evaluation& e) const { return config_.metric == Metric::kLoss ? e.loss : e.prf.f1; }

bool Trainer::improves(double candidate, double incumbent) const {
  return config_.metric == Metric::kLoss ? candidate < incumbent : candidate > incumbent;
}

double Trainer::lr_for(Phase phase) const {
  switch (phase) {
    case Phase::kStep1: return config_.lr_step1;
    case Phase::kStep2: return config_.lr_step2;
    default: return config_.lr_sync;
  }
}

bool Trainer::epoch_budget_left() const {
  return config_.max_total_epochs == 0 || static_cast<std::size_t>(epoch_) < config_.max_total_epochs;
}

PhaseResult Trainer::run_phase(const Model& start, Phase phase) {
  ++step_;
  Model model = start;
  model.drop_grads();
  const GroupSet active = active_groups(phase);
  const AdamHyper hyper{lr_for(phase), config_.beta1, config_.beta2, config_.adam_epsilon};
  AdamState fresh(hyper);
  AdamState* optimizer = &fresh;
  if (!config_.fresh_optimizer_per_phase) {
    if (!shared_optimizer_) shared_optimizer_.emplace(hyper);
    shared_optimizer_->hyper = hyper;
    optimizer = &*shared_optimizer_;
  }

  PhaseResult result{model, 0.0, 0, evaluate(model, data_.validation, config_.batch_size)};
  result.best_metric = metric_of(result.start);

  StepMarker marker;
  marker.step = step_;
  marker.phase = phase;
  marker.first_epoch = epoch_ + 1;
  marker.start_val_loss = result.start.loss;
  marker.start_val_f1 = result.start.prf.f1;

  std::size_t stale = 0;
  for (std::size_t e = 0; e < config_.max_epochs && epoch_budget_left(); ++e) {
    ++epoch_;
    double loss_sum = 0.0;
    std::size_t tokens = 0;
    for (const Batch& batch : make_batches(data_.train, config_.batch_size, rng_())) {
      model.zero_grad();
      ForwardTrace trace;
      Tensor logits = model.forward(batch, Mode::kTrain, rng_, &trace);
      const Shape shape = logits.shape();
      logits.reshape({batch.batch_size * batch.max_len, ModelConfig::kClasses});
      CrossEntropy ce = softmax_cross_entropy(logits, batch.labels, batch.mask);
      ce.grad_logits.reshape(shape);
      model.backward(trace, ce.grad_logits);
      adam_step(model, *optimizer, active);
      const std::size_t ntok = batch.token_count();
      loss_sum += ce.loss * static_cast<double>(ntok);
      tokens += ntok;
    }

    const Evaluation val = evaluate(model, data_.validation, config_.batch_size);
    EpochRecord record{epoch_, phase, step_, loss_sum / static_cast<double>(tokens), val.loss, val.prf.f1, {}};
    if (!data_.test.empty()) record.test_f1 = evaluate(model, data_.test, config_.batch_size).prf.f1;
    log_.epochs.push_back(record);
    if (on_epoch_) on_epoch_(record);

    if (improves(metric_of(val), result.best_metric)) {
      result.best = model;
      result.best.drop_grads();
      result.best_metric = metric_of(val);
      result.best_epoch = epoch_;
      stale = 0;
    } else if (++stale >= config_.patience) {
      break;
    }
  }

  marker.last_epoch = epoch_;
  marker.best_metric = result.best_metric;
  marker.best_epoch = result.best_epoch;
  log_.steps.push_back(marker);

  if (!config_.checkpoint_dir.empty()) {
    std::filesystem::create_directories(config_.checkpoint_dir);
    const std::string name = "step" + std::to_string(step_) + "_" + std::string(phase_name(phase)) + "_epoch" +
                             std::to_string(result.best_epoch) + ".ckpt";
    save_checkpoint(result.best, vocab_, config_.checkpoint_dir / name);
  }
  return result;
}

TrainResult Trainer::async_train(const Model& initial) {
  if (config_.mode != TrainMode::kAsync) throw ConfigError("async_train requires mode async");
  Model best = initial;
  best.drop_grads();
  double best_metric = metric_of(evaluate(best, data_.validation, config_.batch_size));
  std::size_t stale_steps = 0;
  Phase phase = Phase::kStep1;
  while (true) {
    PhaseResult r = run_phase(best, phase);
    if (improves(r.best_metric, best_metric)) {
      best = std::move(r.best);
      best_metric = r.best_metric;
      stale_steps = 0;
    } else {
      ++stale_steps;
    }
    if (stale_steps >= config_.global_patience || !epoch_budget_left()) break;
    phase = phase == Phase::kStep1 ? Phase::kStep2 : Phase::kStep1;
  }
  return TrainResult{std::move(best), best_metric};
}

TrainResult Trainer::sync_train(const Model& initial) {
  if (config_.mode == TrainMode::kAsync) throw ConfigError("sync_train requires mode sync or frozen-cnn");
  PhaseResult r = run_phase(initial, config_.mode == TrainMode::kSync ? Phase::kSync : Phase::kFrozenCnn);
  return TrainResult{std::move(r.best), r.best_metric};
}

TrainResult Trainer::train(const Model& initial) {
  return config_.mode == TrainMode::kAsync ? async_train(initial) : sync_train(initial);
}

// ---------------------------------------------------------------------------
// Curve files

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

constexpr std::string_view kCurveHeader = "epoch\tphase\tstep\ttrain_loss\tval_loss\tval_f1\ttest_f1";

}  // namespace

void write_curves(std::ostream& out, const RunLog& log) {
  out << kCurveHeader << '\n';
  std::size_t next = 0;
  for (std::size_t s = 0; s < log.steps.size(); ++s) {
    const StepMarker& m = log.steps[s];
    if (s > 0) out << "# boundary\tafter_epoch=" << log.steps[s - 1].last_epoch << '\n';
    out << "# step\t" << m.step << '\t' << phase_name(m.phase) << "\tfirst_epoch=" << m.first_epoch
        << "\tlast_epoch=" << m.last_epoch << "\tstart_val_loss=" << num(m.start_val_loss)
        << "\tstart_val_f1=" << num(m.start_val_f1) << "\tbest_metric=" << num(m.best_metric)
        << "\tbest_epoch=" << m.best_epoch << '\n';
    for (; next < log.epochs.size() && log.epochs[next].step == m.step; ++next) {
      const EpochRecord& r = log.epochs[next];
      out << r.epoch << '\t' << phase_name(r.phase) << '\t' << r.step << '\t' << num(r.train_loss) << '\t'
          << num(r.val_loss) << '\t' << num(r.val_f1) << '\t' << (r.test_f1 ? num(*r.test_f1) : "-") << '\n';
    }
  }
  // records whose step has no marker (not produced by Trainer, but keep them)
  for (; next < log.epochs.size(); ++next) {
    const EpochRecord& r = log.epochs[next];
    out << r.epoch << '\t' << phase_name(r.phase) << '\t' << r.step << '\t' << num(r.train_loss) << '\t'
        << num(r.val_loss) << '\t' << num(r.val_f1) << '\t' << (r.test_f1 ? num(*r.test_f1) : "-") << '\n';
  }
}

void export_curves(const RunLog& log, const std::filesystem::path& path) {
  if (log.epochs.empty() && log.steps.empty()) throw ConfigError("refusing to export an empty run log");
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_curves(out, log);
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, '\t')) out.push_back(field);
  return out;
}

std::string value_of(const std::string& field, std::string_view key, std::size_t line_no) {
  if (field.rfind(std::string(key) + "=", 0) != 0) {
    throw ParseError("curve file line " + std::to_string(line_no) + ": expected " + std::string(key) + "=...");
  }
  return field.substr(key.size() + 1);
}

}  // namespace

RunLog parse_curves(std::istream& in) {
  RunLog log;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      if (!header) {
        if (line != kCurveHeader) throw ParseError("missing curve header");
        header = true;
        continue;
      }
      const auto f = split_tabs(line);
      if (f[0] == "# boundary") continue;
      if (f[0] == "# step") {
        if (f.size() != 9) throw ParseError("malformed step annotation");
        StepMarker m;
        m.step = std::stoi(f[1]);
        m.phase = parse_phase(f[2]);
        m.first_epoch = std::stoi(value_of(f[3], "first_epoch", line_no));
        m.last_epoch = std::stoi(value_of(f[4], "last_epoch", line_no));
        m.start_val_loss = std::stod(value_of(f[5], "start_val_loss", line_no));
        m.start_val_f1 = std::stod(value_of(f[6], "start_val_f1", line_no));
        m.best_metric = std::stod(value_of(f[7], "best_metric", line_no));
        m.best_epoch = std::stoi(value_of(f[8], "best_epoch", line_no));
        log.steps.push_back(m);
        continue;
      }
      if (f.size() != 7) throw ParseError("expected 7 columns, got " + std::to_string(f.size()));
      EpochRecord r;
      r.epoch = std::stoi(f[0]);
      r.phase = parse_phase(f[1]);
      r.step = std::stoi(f[2]);
      r.train_loss = std::stod(f[3]);
      r.val_loss = std::stod(f[4]);
      r.val_f1 = std::stod(f[5]);
      if (f[6] != "-") r.test_f1 = std::stod(f[6]);
      log.epochs.push_back(r);
    } catch (const ParseError& e) {
      throw ParseError("curve file line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::logic_error&) {
      throw ParseError("curve file line " + std::to_string(line_no) + ": bad number");
    }
  }
  if (!header) throw ParseError("curve file is empty");
  return log;
}

RunLog load_curves(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open curve file '" + path.string() + "'");
  return parse_curves(in);
}

}  // namespace ctrl
