#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>

#include "rawnext/analysis.hpp"
#include "rawnext/checkpoint.hpp"
#include "rawnext/config.hpp"

namespace rawnext::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string durations;
  std::string lengths;
  std::string out;
  std::string list;
  std::size_t utterances = 20;
};

RunConfig base_config(const Options& o, const Checkpoint* ck) {
  RunConfig cfg = !o.config.empty() ? RunConfig::load(o.config)
                  : ck             ? RunConfig::parse(ck->config_text, o.checkpoint + " (embedded config)")
                                   : RunConfig::desk();
  if (o.seed) cfg.set_seed(*o.seed);
  // Architecture always follows the checkpoint it will be loaded from.
  if (ck) cfg.model = RunConfig::parse(ck->config_text, o.checkpoint + " (embedded config)").model;
  cfg.validate();
  return cfg;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream f(path, mode);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

struct LoadedModel {
  Checkpoint checkpoint;
  RunConfig config;
  std::unique_ptr<RawNextModel<float>> model;
};

LoadedModel load_model(const Options& o) {
  LoadedModel m;
  m.checkpoint = load_checkpoint(o.checkpoint);
  m.config = base_config(o, &m.checkpoint);
  m.model = std::make_unique<RawNextModel<float>>(m.config.model, m.config.train.seed);
  restore_model(m.checkpoint, m.model->parameters());
  m.model->set_training(false);
  return m;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  const RunConfig cfg = base_config(o, nullptr);
  const fs::path root = o.out.empty() ? fs::path(cfg.data_root) : fs::path(o.out);
  build_corpus(cfg.data, root);
  out << "wrote " << cfg.data.n_speakers << " training speakers x " << cfg.data.utts_per_speaker << " and "
      << cfg.data.eval_speakers << " held-out speakers x " << cfg.data.eval_utts_per_speaker << " under "
      << root.string() << "\n";
  return ok;
}

int cmd_train(const Options& o, std::ostream& out) {
  std::optional<Checkpoint> resume;
  if (!o.checkpoint.empty()) resume = load_checkpoint(o.checkpoint);
  const RunConfig cfg = base_config(o, resume ? &*resume : nullptr);
  const fs::path corpus_root = fs::path(cfg.data_root) / "train";
  if (!fs::exists(corpus_root / "manifest.txt"))
    throw IoError("no training corpus at " + corpus_root.string() + " (run gen-data first)");
  const fs::path dir = o.out.empty() ? fs::path(cfg.train_out) : fs::path(o.out);
  ensure_dir(dir);

  RawNextModel<float> model(cfg.model, cfg.train.seed);
  Trainer trainer(model, load_corpus(corpus_root), cfg.train);
  double best = std::numeric_limits<double>::infinity();
  if (resume) {
    restore_model(*resume, model.parameters());
    restore_trainer(*resume, trainer);
    if (fs::exists(dir / "best.rnxt")) best = load_checkpoint(dir / "best.rnxt").running_loss;
    out << "resuming after epoch " << trainer.epochs_done() << "\n";
  }
  open_out(dir / "config.cfg") << cfg.serialize();
  auto log = open_out(dir / "train.log", resume ? std::ios::app : std::ios::trunc);
  const std::string config_text = cfg.serialize();

  while (trainer.epochs_done() < cfg.train.epochs) {
    const EpochMetrics m = trainer.train_epoch(&log);
    if (!log) throw IoError("failed writing " + (dir / "train.log").string());
    Checkpoint ck;
    ck.config_text = config_text;
    ck.running_loss = m.mean_loss;
    store_model(ck, model.parameters());
    store_trainer(ck, trainer);
    save_checkpoint(dir / ("epoch" + std::to_string(m.epoch) + ".rnxt"), ck);
    if (m.mean_loss < best) {
      best = m.mean_loss;
      save_checkpoint(dir / "best.rnxt", ck);
    }
    out << "epoch " << m.epoch << "/" << cfg.train.epochs << " mean_loss " << fmt("%.6g", m.mean_loss) << " accuracy "
        << fmt("%.4f", m.accuracy) << "\n";
  }
  return ok;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  auto loaded = load_model(o);
  const RunConfig& cfg = loaded.config;
  const auto durations = o.durations.empty() ? cfg.eval.durations : parse_durations(o.durations);
  const fs::path eval_root = fs::path(cfg.data_root) / "eval";
  const auto trials = read_trials(eval_root / "trials.txt");
  const fs::path dir = o.out.empty() ? fs::path(o.checkpoint).parent_path() / "eval" : fs::path(o.out);
  ensure_dir(dir);

  EmbeddingExtractor extractor(*loaded.model, eval_root, cfg.train.pre_emphasis);
  std::vector<TrialResult> results;
  for (const auto& d : durations) {
    results.push_back(evaluate_trials(extractor, trials, d, cfg.eval.eer_mode, cfg.eval.dcf));
    write_scores(dir / ("scores_" + d.label() + ".txt"), trials, results.back().scores);
  }
  const std::string report = format_report(results);
  open_out(dir / "report.txt") << report;
  out << report;
  return ok;
}

int cmd_extract(const Options& o, std::ostream& out) {
  auto loaded = load_model(o);
  const auto durations = parse_durations(o.durations.empty() ? "full" : o.durations);
  if (durations.size() != 1) throw ConfigError("extract takes a single duration");
  std::ifstream list(o.list);
  if (!list) throw IoError("cannot read file list " + o.list);
  EmbeddingExtractor extractor(*loaded.model, "", loaded.config.train.pre_emphasis);
  std::ofstream file;
  if (!o.out.empty()) file = open_out(o.out);
  std::ostream& sink = o.out.empty() ? out : file;
  std::string path;
  std::size_t count = 0;
  while (std::getline(list, path)) {
    if (path.empty()) continue;
    const auto samples = read_wav(path, loaded.config.data.sample_rate);
    sink << path;
    for (float v : extractor.embed_samples(samples, durations.front())) sink << ' ' << fmt("%.9g", v);
    sink << '\n';
    ++count;
  }
  if (!sink) throw IoError("failed writing embeddings");
  if (!o.out.empty()) out << "wrote " << count << " embeddings to " << o.out << "\n";
  return ok;
}

int cmd_analyze(const Options& o, std::ostream& out) {
  auto loaded = load_model(o);
  const RunConfig& cfg = loaded.config;
  if (cfg.model.mode == ModelMode::baseline)
    throw ConfigError("no EDSP branches to tap (baseline model): analyze needs a rawnext-mode checkpoint");
  const auto lengths = o.lengths.empty() ? cfg.eval.lengths : parse_lengths(o.lengths);
  const Corpus eval = load_corpus(fs::path(cfg.data_root) / "eval");
  if (o.utterances == 0) throw ConfigError("--utterances must be positive");

  // Evenly spaced over the held-out set so every speaker contributes.
  std::vector<std::vector<float>> utts;
  const std::size_t n = std::min(o.utterances, eval.utterances.size());
  for (std::size_t i = 0; i < n; ++i) utts.push_back(eval.utterances[i * eval.utterances.size() / n].samples);

  const auto rows = sweep_lengths(*loaded.model, utts, lengths, cfg.train.pre_emphasis);
  const fs::path csv = o.out.empty() ? fs::path(o.checkpoint).parent_path() / "activation.csv" : fs::path(o.out);
  export_csv(rows, csv);

  std::vector<double> xs;
  std::array<std::vector<double>, 3> ys;
  for (const auto& r : rows) {
    if (r.branch == Branch::low) xs.push_back(r.length_s);
    ys[static_cast<std::size_t>(r.branch)].push_back(r.score);
  }
  out << "wrote " << rows.size() << " rows to " << csv.string() << "\n";
  if (xs.size() >= 2)
    for (Branch b : kBranches)
      out << "spearman(length, S_" << to_string(b) << ") = " << fmt("%.4f", spearman(xs, ys[static_cast<std::size_t>(b)]))
          << "\n";
  return ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"RawNeXt speaker verification: synthetic data, training, evaluation, analysis", "rawnext"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run configuration file (defaults to the desk configuration)");
    sub->add_option("--seed", o.seed, "overrides the training and data seeds");
  };
  auto* gen = app.add_subcommand("gen-data", "synthesise the training corpus, held-out corpus and trials");
  common(gen);
  gen->add_option("--out", o.out, "corpus root (default: data.root)");

  auto* train = app.add_subcommand("train", "train a model, writing per-epoch checkpoints and a log");
  common(train);
  train->add_option("--checkpoint", o.checkpoint, "resume from this checkpoint");
  train->add_option("--out", o.out, "run directory (default: train.out)");

  auto* evaluate = app.add_subcommand("evaluate", "EER / minDCF on the held-out trials");
  common(evaluate);
  evaluate->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
  evaluate->add_option("--durations", o.durations, "test-side durations, e.g. 1,2,5,full");
  evaluate->add_option("--out", o.out, "output directory (default: <checkpoint dir>/eval)");

  auto* extract = app.add_subcommand("extract", "embeddings for a list of wav files");
  common(extract);
  extract->add_option("--checkpoint", o.checkpoint, "model checkpoint")->required();
  extract->add_option("list", o.list, "text file with one wav path per line")->required();
  extract->add_option("--durations", o.durations, "single crop duration (default: full)");
  extract->add_option("--out", o.out, "output file (default: standard output)");

  auto* analyze = app.add_subcommand("analyze", "branch activation scores against input length (CSV)");
  common(analyze);
  analyze->add_option("--checkpoint", o.checkpoint, "rawnext-mode checkpoint")->required();
  analyze->add_option("--lengths", o.lengths, "lengths in seconds, e.g. 1..8 or 1,2,4");
  analyze->add_option("--utterances", o.utterances, "held-out utterances to average over")->capture_default_str();
  analyze->add_option("--out", o.out, "CSV path (default: <checkpoint dir>/activation.csv)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? ok : config_error;
  }

  try {
    if (*gen) return cmd_gen_data(o, out);
    if (*train) return cmd_train(o, out);
    if (*evaluate) return cmd_evaluate(o, out);
    if (*extract) return cmd_extract(o, out);
    if (*analyze) return cmd_analyze(o, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return config_error;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return io_error;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return numeric_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return failure;
  }
  return failure;
}

}  // namespace rawnext::cli
