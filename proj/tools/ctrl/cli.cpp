#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "ctrl/checkpoint.hpp"
#include "ctrl/data.hpp"
#include "ctrl/error.hpp"
#include "ctrl/gradcheck_suite.hpp"
#include "ctrl/model.hpp"
#include "ctrl/trainer.hpp"

namespace ctrl::cli {

namespace {

namespace fs = std::filesystem;

struct TrainOptions {
  std::string variant = "ctrl";
  std::string mode;  // empty: the variant's usual mode
  std::string train;
  std::string dev;
  std::string test;
  std::string emb_general;
  std::string emb_domain;
  std::string out = "run";
  std::size_t n_val = 150;
  std::uint64_t seed = 1;
  double lr_step1 = 0.00005;
  double lr_step2 = 0.0001;
  double lr_sync = 0.0001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::size_t global_patience = 3;
  std::size_t max_total_epochs = 0;
  std::string metric = "loss";
  bool reuse_optimizer = false;
  std::size_t general_dim = 300;
  std::size_t domain_dim = 100;
  std::size_t conv2_filters = 128;
  std::size_t conv2_kernel_a = 3;
  std::size_t conv2_kernel_b = 5;
  std::size_t channels = 0;    // 0: 2 * conv2_filters
  std::size_t upper_kernel = 5;
  std::size_t bottleneck = 0;  // 0: channels / 2
  double dropout = 0.55;
  bool lowercase_fallback = true;
  bool phase_checkpoints = true;
  bool quiet = false;
};

struct EvalOptions {
  std::string checkpoint;
  std::string corpus;
  std::string dump;
  std::size_t batch_size = 64;
};

struct PredictOptions {
  std::string checkpoint;
  std::string input = "-";
  std::string dump;
};

struct GradcheckOptions {
  std::vector<std::string> ops;
  std::uint64_t seed = 7;
  double tolerance = 1e-4;
  std::string inject_fault;
};

struct ExportOptions {
  std::string log;
  std::string out_dir;
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string exact(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

ModelConfig model_config_from(const TrainOptions& o, std::size_t vocab_size) {
  ModelConfig c;
  c.variant = parse_variant(o.variant);
  c.vocab_size = vocab_size;
  c.general_dim = o.general_dim;
  c.domain_dim = o.domain_dim;
  c.conv2_filters = o.conv2_filters;
  c.conv2_kernel_a = o.conv2_kernel_a;
  c.conv2_kernel_b = o.conv2_kernel_b;
  c.channels = o.channels ? o.channels : 2 * o.conv2_filters;
  c.upper_kernel = o.upper_kernel;
  c.bottleneck = o.bottleneck ? o.bottleneck : c.channels / 2;
  c.dropout = o.dropout;
  c.seed = o.seed;
  return c;
}

TrainConfig train_config_from(const TrainOptions& o, Variant variant) {
  TrainConfig c;
  c.mode = o.mode.empty() ? default_mode(variant) : parse_mode(o.mode);
  c.lr_step1 = o.lr_step1;
  c.lr_step2 = o.lr_step2;
  c.lr_sync = o.lr_sync;
  c.beta1 = o.beta1;
  c.beta2 = o.beta2;
  c.adam_epsilon = o.adam_epsilon;
  c.batch_size = o.batch_size;
  c.max_epochs = o.max_epochs;
  c.patience = o.patience;
  c.global_patience = o.global_patience;
  c.max_total_epochs = o.max_total_epochs;
  c.metric = parse_metric(o.metric);
  c.fresh_optimizer_per_phase = !o.reuse_optimizer;
  c.seed = o.seed;
  if (o.phase_checkpoints) c.checkpoint_dir = fs::path(o.out) / "checkpoints";
  return c;
}

void write_manifest(const TrainOptions& o, const ModelConfig& mc, const TrainConfig& tc, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  out << "# " << kVersion << '\n'
      << "# written " << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << '\n'
      << "# replay with: ctrl train --config <this file> [--out <dir>]\n"
      << "variant=" << variant_name(mc.variant) << '\n'
      << "mode=" << mode_name(tc.mode) << '\n'
      << "train=" << o.train << '\n';
  if (!o.dev.empty()) out << "dev=" << o.dev << '\n';
  if (!o.test.empty()) out << "test=" << o.test << '\n';
  out << "emb-general=" << o.emb_general << '\n'
      << "emb-domain=" << o.emb_domain << '\n'
      << "out=" << o.out << '\n'
      << "n-val=" << o.n_val << '\n'
      << "seed=" << o.seed << '\n'
      << "lr-step1=" << exact(tc.lr_step1) << '\n'
      << "lr-step2=" << exact(tc.lr_step2) << '\n'
      << "lr-sync=" << exact(tc.lr_sync) << '\n'
      << "beta1=" << exact(tc.beta1) << '\n'
      << "beta2=" << exact(tc.beta2) << '\n'
      << "adam-epsilon=" << exact(tc.adam_epsilon) << '\n'
      << "batch-size=" << tc.batch_size << '\n'
      << "max-epochs=" << tc.max_epochs << '\n'
      << "patience=" << tc.patience << '\n'
      << "global-patience=" << tc.global_patience << '\n'
      << "max-total-epochs=" << tc.max_total_epochs << '\n'
      << "metric=" << metric_name(tc.metric) << '\n'
      << "reuse-optimizer=" << (o.reuse_optimizer ? "true" : "false") << '\n'
      << "general-dim=" << mc.general_dim << '\n'
      << "domain-dim=" << mc.domain_dim << '\n'
      << "conv2-filters=" << mc.conv2_filters << '\n'
      << "conv2-kernel-a=" << mc.conv2_kernel_a << '\n'
      << "conv2-kernel-b=" << mc.conv2_kernel_b << '\n'
      << "channels=" << mc.channels << '\n'
      << "upper-kernel=" << mc.upper_kernel << '\n'
      << "bottleneck=" << mc.bottleneck << '\n'
      << "dropout=" << exact(mc.dropout) << '\n'
      << "lowercase-fallback=" << (o.lowercase_fallback ? "true" : "false") << '\n'
      << "phase-checkpoints=" << (o.phase_checkpoints ? "true" : "false") << '\n';
}

void print_prf(std::ostream& out, const std::string& label, const Evaluation& e) {
  out << label << ": loss=" << fmt(e.loss) << " precision=" << fmt(e.prf.precision) << " recall=" << fmt(e.prf.recall)
      << " f1=" << fmt(e.prf.f1) << " (gold=" << e.prf.n_gold << " pred=" << e.prf.n_pred
      << " correct=" << e.prf.n_correct << ")\n";
}

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  const auto corpus = load_corpus(o.train);
  const CorpusStats stats = corpus_stats(corpus);
  err << "train corpus: " << stats.sentences << " sentences, " << stats.aspects << " aspects\n";

  Split split;
  if (!o.dev.empty()) {
    split.train = corpus;
    split.validation = load_corpus(o.dev);
  } else {
    split = split_validation(corpus, o.n_val, o.seed);
  }
  err << "split: " << split.train.size() << " train / " << split.validation.size() << " validation\n";
  const Vocab vocab = Vocab::build(split.train);

  ModelConfig mc = model_config_from(o, vocab.size());
  mc.validate();
  TrainConfig tc = train_config_from(o, mc.variant);
  tc.validate();

  const EmbeddingMap general = load_embeddings(o.emb_general, mc.general_dim);
  const EmbeddingMap domain = load_embeddings(o.emb_domain, mc.domain_dim);
  for (const auto& w : general.warnings) err << "warning: general embeddings: " << w << '\n';
  for (const auto& w : domain.warnings) err << "warning: domain embeddings: " << w << '\n';
  EmbeddingTables tables = build_tables(vocab, general, domain, o.lowercase_fallback);
  err << "embedding coverage: general " << fmt(tables.general_coverage, 4) << ", domain "
      << fmt(tables.domain_coverage, 4) << '\n';

  TrainData data;
  data.train = encode(split.train, vocab);
  data.validation = encode(split.validation, vocab);
  if (!o.test.empty()) data.test = encode(load_corpus(o.test), vocab);

  fs::create_directories(o.out);
  write_manifest(o, mc, tc, fs::path(o.out) / "manifest.txt");

  const Model initial = Model::build(mc, std::move(tables.general), std::move(tables.domain));
  Trainer trainer(tc, data, vocab.tokens());
  if (!o.quiet) {
    trainer.set_epoch_callback([&err](const EpochRecord& r) {
      err << "epoch " << r.epoch << " [" << phase_name(r.phase) << " step " << r.step
          << "] train_loss=" << fmt(r.train_loss) << " val_loss=" << fmt(r.val_loss) << " val_f1=" << fmt(r.val_f1);
      if (r.test_f1) err << " test_f1=" << fmt(*r.test_f1);
      err << '\n';
    });
  }
  const TrainResult result = trainer.train(initial);

  save_checkpoint(result.best, vocab.tokens(), fs::path(o.out) / "final.ckpt");
  export_curves(trainer.log(), fs::path(o.out) / "curves.tsv");

  out << "variant=" << variant_name(mc.variant) << " mode=" << mode_name(tc.mode)
      << " phases=" << trainer.log().steps.size() << " epochs=" << trainer.log().epochs.size() << '\n';
  print_prf(out, "validation", evaluate(result.best, data.validation, tc.batch_size));
  if (!data.test.empty()) print_prf(out, "test", evaluate(result.best, data.test, tc.batch_size));
  out << "checkpoint: " << (fs::path(o.out) / "final.ckpt").string() << '\n';
  return kExitOk;
}

void dump_predictions(const fs::path& path, const std::vector<TaggedSentence>& sentences,
                      const std::vector<std::vector<std::int32_t>>& labels) {
  std::vector<TaggedSentence> predicted;
  predicted.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    TaggedSentence s{sentences[i].tokens, {}};
    for (std::int32_t id : labels[i]) s.labels.push_back(static_cast<Tag>(id));
    predicted.push_back(std::move(s));
  }
  save_corpus(path, predicted);
}

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const Vocab vocab = Vocab::from_tokens(ckpt.vocab);
  const auto corpus = load_corpus(o.corpus);
  if (corpus.empty()) throw ConfigError("corpus '" + o.corpus + "' has no sentences");
  const auto encoded = encode(corpus, vocab);
  print_prf(out, "eval", evaluate(ckpt.model, encoded, o.batch_size));
  if (!o.dump.empty()) dump_predictions(o.dump, corpus, predict(ckpt.model, encoded, o.batch_size));
  return kExitOk;
}

int cmd_predict(const PredictOptions& o, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(o.checkpoint);
  const Vocab vocab = Vocab::from_tokens(ckpt.vocab);

  std::ifstream file;
  if (o.input != "-") {
    file.open(o.input);
    if (!file) throw IoError("cannot open input '" + o.input + "'");
  }
  std::istream& in = o.input == "-" ? std::cin : file;

  std::vector<TaggedSentence> sentences;
  std::string line;
  while (std::getline(in, line)) {
    auto tokens = tokenize_whitespace(line);
    if (tokens.empty()) continue;
    sentences.push_back(TaggedSentence{std::move(tokens), {}});
  }
  if (sentences.empty()) return kExitOk;
  std::vector<EncodedSentence> encoded = encode(sentences, vocab);
  const auto labels = predict(ckpt.model, encoded);
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    bool first = true;
    for (const ChunkSpan& span : decode_bio(std::span<const std::int32_t>(labels[i]))) {
      out << (first ? "" : " | ");
      for (std::size_t t = span.start; t <= span.end; ++t) out << (t > span.start ? " " : "") << sentences[i].tokens[t];
      first = false;
    }
    out << '\n';
  }
  if (!o.dump.empty()) dump_predictions(o.dump, sentences, labels);
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out) {
  const auto known = standard_grad_check_names();
  for (const auto& op : o.ops) {
    if (std::find(known.begin(), known.end(), op) == known.end()) {
      throw CLI::ValidationError("--ops", "unknown op '" + op + "'");
    }
  }
  bool all_ok = true;
  for (const auto& c : standard_grad_checks(o.seed, o.inject_fault)) {
    if (!o.ops.empty() && std::find(o.ops.begin(), o.ops.end(), c.op.name) == o.ops.end()) continue;
    const GradCheckResult r = grad_check(c.op, c.inputs, c.options);
    const bool ok = r.max_rel_error < o.tolerance;
    all_ok = all_ok && ok;
    std::ostringstream err_text;
    err_text << std::scientific << std::setprecision(3) << r.max_rel_error;
    out << std::left << std::setw(14) << c.op.name << " max_rel_error=" << err_text.str() << " probed=" << r.probed
        << " skipped=" << r.skipped << ' ' << (ok ? "PASS" : "FAIL") << '\n';
  }
  return all_ok ? kExitOk : kExitFailure;
}

void write_panel(const fs::path& path, const RunLog& log, const char* column,
                 const std::function<std::optional<double>(const EpochRecord&)>& value) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "epoch,phase," << column << '\n';
  for (const auto& r : log.epochs) {
    const auto v = value(r);
    if (v) out << r.epoch << ',' << phase_name(r.phase) << ',' << exact(*v) << '\n';
  }
}

int cmd_export_curves(const ExportOptions& o, std::ostream& out) {
  const RunLog log = load_curves(o.log);
  if (log.epochs.empty()) throw ConfigError("curve file '" + o.log + "' has no epochs");
  const fs::path dir = o.out_dir;
  fs::create_directories(dir);
  write_panel(dir / "train_loss.csv", log, "train_loss", [](const EpochRecord& r) { return std::optional(r.train_loss); });
  write_panel(dir / "val_loss.csv", log, "val_loss", [](const EpochRecord& r) { return std::optional(r.val_loss); });
  write_panel(dir / "test_f1.csv", log, "test_f1", [](const EpochRecord& r) { return r.test_f1; });
  std::ofstream boundaries(dir / "boundaries.csv");
  boundaries << "after_epoch\n";
  for (std::size_t s = 0; s + 1 < log.steps.size(); ++s) boundaries << log.steps[s].last_epoch << '\n';
  out << "wrote " << log.epochs.size() << " epochs, " << (log.steps.empty() ? 0 : log.steps.size() - 1)
      << " step boundaries to " << dir.string() << '\n';
  return kExitOk;
}

}  // namespace

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw CLI::ValidationError("--config", "needs a file argument");
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config_path.empty()) return args;

  std::ifstream in(config_path);
  if (!in) throw IoError("cannot open config file '" + config_path + "'");
  std::vector<std::string> flags;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    const auto start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    line = line.substr(start);
    const auto eq = line.find('=');
    std::string key = line.substr(0, eq);
    while (!key.empty() && std::isspace(static_cast<unsigned char>(key.back()))) key.pop_back();
    std::replace(key.begin(), key.end(), '_', '-');
    if (eq == std::string::npos) {
      flags.push_back("--" + key);
    } else {
      std::string value = line.substr(eq + 1);
      const auto vstart = value.find_first_not_of(" \t");
      value = vstart == std::string::npos ? "" : value.substr(vstart);
      flags.push_back("--" + key + "=" + value);
    }
  }
  // subcommand first, then file flags, then explicit flags (last one wins)
  std::vector<std::string> expanded;
  if (!rest.empty()) expanded.push_back(rest.front());
  expanded.insert(expanded.end(), flags.begin(), flags.end());
  if (rest.size() > 1) expanded.insert(expanded.end(), rest.begin() + 1, rest.end());
  return expanded;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Controlled-CNN aspect term extraction: train, evaluate and inspect sequence taggers", "ctrl"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  TrainOptions to;
  auto* train = app.add_subcommand("train", "Train a tagger and write checkpoints, curves and a run manifest");
  train->add_option("--variant", to.variant, "decnn | ctrl | ctrl-minus | ctrl-minusminus | dan | dan-minus | dan-minusminus")
      ->capture_default_str();
  train->add_option("--mode", to.mode, "async | sync | frozen-cnn (default: the variant's usual mode)");
  train->add_option("--train", to.train, "Two-column training corpus")->required()->check(CLI::ExistingFile);
  train->add_option("--dev", to.dev, "Validation corpus (default: hold out --n-val training sentences)")
      ->check(CLI::ExistingFile);
  train->add_option("--test", to.test, "Test corpus, scored every epoch for the curves only")->check(CLI::ExistingFile);
  train->add_option("--emb-general", to.emb_general, "General-purpose embeddings (text format)")
      ->required()->check(CLI::ExistingFile);
  train->add_option("--emb-domain", to.emb_domain, "Domain embeddings (text format)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", to.out, "Output directory")->capture_default_str();
  train->add_option("--n-val", to.n_val, "Validation holdout size")->capture_default_str();
  train->add_option("--seed", to.seed, "Seed for split, initialization, shuffling and dropout")->capture_default_str();
  train->add_option("--lr-step1", to.lr_step1, "Learning rate while tuning CNN layers")->capture_default_str();
  train->add_option("--lr-step2", to.lr_step2, "Learning rate while tuning control + output layers")->capture_default_str();
  train->add_option("--lr-sync", to.lr_sync, "Learning rate for sync / frozen-cnn training")->capture_default_str();
  train->add_option("--beta1", to.beta1)->capture_default_str();
  train->add_option("--beta2", to.beta2)->capture_default_str();
  train->add_option("--adam-epsilon", to.adam_epsilon)->capture_default_str();
  train->add_option("--batch-size", to.batch_size)->capture_default_str();
  train->add_option("--max-epochs", to.max_epochs, "Maximum epochs per phase")->capture_default_str();
  train->add_option("--patience", to.patience, "Epochs without improvement before a phase ends")->capture_default_str();
  train->add_option("--global-patience", to.global_patience, "Phases without improvement before async training ends")
      ->capture_default_str();
  train->add_option("--max-total-epochs", to.max_total_epochs, "Cap on epochs over all phases (0 = none)")
      ->capture_default_str();
  train->add_option("--metric", to.metric, "Validation metric for model selection: loss | f1")->capture_default_str();
  train->add_flag("--reuse-optimizer", to.reuse_optimizer, "Keep Adam moments across phases");
  train->add_option("--general-dim", to.general_dim)->capture_default_str();
  train->add_option("--domain-dim", to.domain_dim)->capture_default_str();
  train->add_option("--conv2-filters", to.conv2_filters, "Filters per kernel size in the first conv layer")
      ->capture_default_str();
  train->add_option("--conv2-kernel-a", to.conv2_kernel_a)->capture_default_str();
  train->add_option("--conv2-kernel-b", to.conv2_kernel_b)->capture_default_str();
  train->add_option("--channels", to.channels, "Channel width of conv layers 3-5 (default 2 * conv2-filters)");
  train->add_option("--upper-kernel", to.upper_kernel)->capture_default_str();
  train->add_option("--bottleneck", to.bottleneck, "CNN control reduce width (default channels / 2)");
  train->add_option("--dropout", to.dropout)->capture_default_str();
  train->add_flag("--lowercase-fallback,!--no-lowercase-fallback", to.lowercase_fallback,
                  "Retry general-embedding misses with the lowercased token");
  train->add_flag("--phase-checkpoints,!--no-phase-checkpoints", to.phase_checkpoints,
                  "Write the best model of every phase under <out>/checkpoints");
  train->add_flag("--quiet", to.quiet, "Do not print per-epoch progress");

  EvalOptions eo;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a labelled corpus");
  eval->add_option("--checkpoint", eo.checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--corpus", eo.corpus)->required()->check(CLI::ExistingFile);
  eval->add_option("--dump", eo.dump, "Write two-column token/predicted-label file");
  eval->add_option("--batch-size", eo.batch_size)->capture_default_str();

  PredictOptions po;
  auto* pred = app.add_subcommand("predict", "Extract aspect spans from raw text, one sentence per line");
  pred->add_option("--checkpoint", po.checkpoint)->required()->check(CLI::ExistingFile);
  pred->add_option("--input", po.input, "Text file, or - for stdin")->capture_default_str();
  pred->add_option("--dump", po.dump, "Write two-column token/predicted-label file");

  GradcheckOptions go;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every backward rule");
  gc->add_option("--ops", go.ops, "Comma-separated subset of ops")->delimiter(',');
  gc->add_option("--seed", go.seed)->capture_default_str();
  gc->add_option("--tolerance", go.tolerance)->capture_default_str();
  gc->add_option("--inject-fault", go.inject_fault, "Perturb one op's backward rule (negative control)")
      ->group("Testing");

  ExportOptions xo;
  auto* xc = app.add_subcommand("export-curves", "Split a curve file into per-panel CSVs for plotting");
  xc->add_option("--log", xo.log, "Curve file written by train")->required()->check(CLI::ExistingFile);
  xc->add_option("--out-dir", xo.out_dir)->required();

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(to, out, err);
    if (*eval) return cmd_eval(eo, out);
    if (*pred) return cmd_predict(po, out);
    if (*gc) return cmd_gradcheck(go, out);
    if (*xc) return cmd_export_curves(xo, out);
  } catch (const CLI::ValidationError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace ctrl::cli
