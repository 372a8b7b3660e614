#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "altune/engine.hpp"
#include "altune/format.hpp"
#include "config.hpp"
#include "json.hpp"

#ifndef ALTUNE_VERSION
#define ALTUNE_VERSION "dev"
#endif

namespace altune::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Every flag is optional so that an absent flag leaves the config-file value
// (or the built-in default) in place.
struct Flags {
  std::optional<std::string> config, data, format, class_names, out, seeds, encoder;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool wallclock = false;

  // synth
  std::optional<std::size_t> classes, dim;
  std::optional<std::string> per_class;
  std::optional<double> sep, noise;

  // split
  std::optional<std::size_t> folds, fold;
  std::optional<double> val_fraction;
  std::optional<std::uint64_t> split_seed;

  // encoder and tapt
  std::optional<std::size_t> frames, code_dim, codebook_size, hidden;
  std::optional<std::size_t> tapt_epochs, tapt_batch_size;
  std::optional<double> tapt_lr, temperature, mask_fraction;
  bool no_tapt = false;

  // al
  std::optional<std::string> acq, init;
  std::optional<double> budget, init_fraction, dropout, lr;
  std::optional<std::size_t> k, committee_size, cluster_k_max, max_epochs, patience, batch_size;
  bool cold_start = false;

  // sweep / ablate
  std::optional<std::string> budgets;
  bool no_baseline = false;
};

template <typename T>
void overlay(const std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON config file (flags override its values)");
  app->add_option("--out", f.out, "Output path");
  app->add_option("--jobs", f.jobs, "Worker threads for independent runs");
}

void add_data(CLI::App* app, Flags& f) {
  app->add_option("--data", f.data, "Dataset file (.ndjson or .csv)");
  app->add_option("--format", f.format, "ndjson | csv (default: from the extension)");
  app->add_option("--class-names", f.class_names, "Comma-separated label vocabulary");
}

void add_split(CLI::App* app, Flags& f) {
  app->add_option("--folds", f.folds, "Number of cross-validation folds");
  app->add_option("--fold", f.fold, "Test fold index");
  app->add_option("--val-fraction", f.val_fraction, "Validation share of the non-test data");
  app->add_option("--split-seed", f.split_seed, "Seed of the fold assignment");
}

void add_encoder(CLI::App* app, Flags& f) {
  app->add_option("--frames", f.frames, "Frames per sample (T)");
  app->add_option("--code-dim", f.code_dim, "Context and codeword width (h)");
  app->add_option("--codebook-size", f.codebook_size, "Number of codewords (V)");
  app->add_option("--hidden", f.hidden, "Hidden width of the context network");
}

void add_tapt(CLI::App* app, Flags& f, const std::string& prefix) {
  app->add_option("--" + prefix + "epochs", f.tapt_epochs, "TAPT epochs");
  app->add_option("--" + prefix + "batch-size", f.tapt_batch_size, "TAPT mini-batch size");
  app->add_option("--" + prefix + "lr", f.tapt_lr, "TAPT Adam learning rate");
  app->add_option("--temperature", f.temperature, "Contrastive temperature");
  app->add_option("--mask-fraction", f.mask_fraction, "Fraction of frames masked");
}

void add_al(CLI::App* app, Flags& f) {
  app->add_option("--init", f.init, "cluster | random");
  app->add_option("--init-fraction", f.init_fraction, "Share of the pool labeled up front");
  app->add_option("--k", f.k, "Samples acquired per iteration (default: 5% of the pool)");
  app->add_option("--committee-size", f.committee_size, "Dropout passes for bald");
  app->add_option("--dropout", f.dropout, "Dropout rate for bald");
  app->add_option("--cluster-k-max", f.cluster_k_max, "Largest k tried by the elbow rule");
  app->add_option("--max-epochs", f.max_epochs, "Fine-tune epoch cap");
  app->add_option("--patience", f.patience, "Early-stopping patience");
  app->add_option("--batch-size", f.batch_size, "Fine-tune mini-batch size");
  app->add_option("--lr", f.lr, "Fine-tune Adam learning rate");
  app->add_flag("--cold-start", f.cold_start, "Restart every fine-tune from the initial model");
  app->add_flag("--no-tapt", f.no_tapt, "Fine-tune from fresh weights");
  app->add_flag("--wallclock", f.wallclock, "Record real elapsed_ms instead of 0");
  add_encoder(app, f);
  add_tapt(app, f, "tapt-");
  add_split(app, f);
}

ExperimentConfig build_config(const Flags& f) {
  ExperimentConfig c;
  if (f.config) c = load_config(*f.config);

  overlay(f.data, c.data);
  if (f.format) {
    try {
      c.format = format_from_string(*f.format);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  if (f.class_names) c.class_names = parse_name_list(*f.class_names);
  overlay(f.out, c.out);
  overlay(f.seed, c.seed);
  if (f.seeds) c.seeds = parse_seed_list(*f.seeds);
  overlay(f.jobs, c.jobs);
  if (f.wallclock) c.wallclock = true;
  overlay(f.encoder, c.encoder_path);

  overlay(f.folds, c.split.fold_count);
  overlay(f.fold, c.split.fold_index);
  overlay(f.val_fraction, c.split.validation_fraction);
  overlay(f.split_seed, c.split.seed);

  overlay(f.frames, c.al.encoder.frames);
  overlay(f.code_dim, c.al.encoder.code_dim);
  overlay(f.codebook_size, c.al.encoder.codebook_size);
  overlay(f.hidden, c.al.encoder.hidden);
  overlay(f.tapt_epochs, c.tapt.epochs);
  overlay(f.tapt_batch_size, c.tapt.batch_size);
  overlay(f.tapt_lr, c.tapt.learning_rate);
  overlay(f.temperature, c.tapt.temperature);
  overlay(f.mask_fraction, c.tapt.mask_fraction);
  if (f.no_tapt) c.tapt_enabled = false;

  try {
    if (f.acq && f.acq->find(',') == std::string::npos) {
      c.al.acquisition.kind = acquisition_from_string(*f.acq);
    }
    if (f.init) c.al.init = init_mode_from_string(*f.init);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  overlay(f.budget, c.al.budget);
  overlay(f.init_fraction, c.al.init_fraction);
  overlay(f.k, c.al.acquisition_size);
  overlay(f.committee_size, c.al.acquisition.committee_size);
  overlay(f.dropout, c.al.acquisition.dropout_rate);
  overlay(f.cluster_k_max, c.al.cluster_k_max);
  overlay(f.max_epochs, c.al.fine_tune.max_epochs);
  overlay(f.patience, c.al.fine_tune.patience);
  overlay(f.batch_size, c.al.fine_tune.batch_size);
  overlay(f.lr, c.al.fine_tune.learning_rate);
  if (f.cold_start) c.al.warm_start = false;

  if (f.budgets) {
    c.sweep_budgets = parse_double_list(*f.budgets);
    c.ablate_budgets = c.sweep_budgets;
  }
  if (f.acq) c.sweep_strategies = parse_name_list(*f.acq);
  if (f.no_baseline) c.sweep_baseline = false;
  return c;
}

std::string iso_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Written once before any compute and again, finalized, at the end.
class Manifest {
 public:
  Manifest(std::string path, const std::string& command, const ExperimentConfig& config)
      : path_(std::move(path)) {
    doc_["format"] = "altune-manifest";
    doc_["version"] = 1;
    doc_["command"] = command;
    doc_["code_version"] = ALTUNE_VERSION;
    doc_["config"] = json::parse(config_to_json(config));
    doc_["seeds"] = config.seed_list();
    doc_["started_at"] = iso_now();
    doc_["finished_at"] = nullptr;
    doc_["outputs"] = json::array();
    doc_["finalized"] = false;
    flush();
  }

  void add_output(const std::string& path) { doc_["outputs"].push_back(path); }

  void finalize() {
    doc_["finished_at"] = iso_now();
    doc_["finalized"] = true;
    flush();
  }

 private:
  void flush() const { write_atomic(path_, doc_.dump(2) + "\n"); }

  std::string path_;
  json doc_;
};

std::string strip_extension(const std::string& path) {
  const fs::path p(path);
  return (p.parent_path() / p.stem()).string();
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string require_out(const ExperimentConfig& c) {
  if (c.out.empty()) throw UsageError("--out is required");
  return c.out;
}

Dataset read_input(const ExperimentConfig& c) {
  if (!c.data.empty()) {
    if (!fs::exists(c.data)) throw UsageError("data file '" + c.data + "' does not exist");
    const DataFormat fmt = c.format.value_or(format_from_path(c.data));
    return load_dataset(c.data, fmt, LoadOptions{c.class_names});
  }
  if (c.synth) return synth_pool(*c.synth).data;
  throw UsageError("--data is required (or a synth section in the config)");
}

Dataset load_input(const ExperimentConfig& c) {
  Dataset d = read_input(c);
  if (d.feature_dim() % c.al.encoder.frames != 0) {
    throw UsageError(std::to_string(d.feature_dim()) + " features do not split into " +
                     std::to_string(c.al.encoder.frames) + " frames");
  }
  return d;
}

Dataset load_labeled(const ExperimentConfig& c) {
  Dataset d = load_input(c);
  if (!d.fully_labeled()) {
    throw DatasetError("every sample needs a label: the oracle holds them for the AL loop");
  }
  return d;
}

Clock clock_for(const ExperimentConfig& c) { return c.wallclock ? wall_clock() : frozen_clock(); }

RunSpec base_spec(const ExperimentConfig& c) {
  RunSpec spec;
  spec.al = c.al;
  spec.al.seed = c.seed;
  if (c.tapt_enabled) spec.tapt = c.tapt;
  return spec;
}

std::string runlog_csv(std::span<const RunLog> logs) {
  std::ostringstream os;
  write_runlog_csv(os, logs);
  return os.str();
}

void report(std::ostream& out, const RunLog& log) {
  const auto& last = log.rows.back();
  out << log.run_id << ": labeled " << last.labeled_count << " ("
      << format_double(last.labeled_fraction) << "), UA " << format_double(log.final_metrics.ua)
      << ", WA " << format_double(log.final_metrics.wa) << "\n";
}

int cmd_synth(const Flags& f, std::ostream& out) {
  ExperimentConfig c = build_config(f);
  SynthConfig s = c.synth.value_or(SynthConfig{});
  if (!c.synth) s.seed = c.seed;
  overlay(f.seed, s.seed);
  overlay(f.classes, s.class_count);
  overlay(f.dim, s.dim);
  overlay(f.sep, s.separation);
  overlay(f.noise, s.noise_rate);
  if (f.per_class) {
    s.per_class_counts.clear();
    for (auto v : parse_seed_list(*f.per_class)) s.per_class_counts.push_back(v);
  }
  c.synth = s;
  c.validate();
  const std::string path = require_out(c);
  ensure_parent(path);
  Manifest manifest(strip_extension(path) + ".manifest.json", "synth", c);

  const SynthPool pool = synth_pool(s);
  std::ostringstream data;
  if (c.format.value_or(format_from_path(path)) == DataFormat::kCsv) {
    write_csv(data, pool.data);
  } else {
    write_ndjson(data, pool.data);
  }
  write_atomic(path, data.str());
  manifest.add_output(path);

  json truth;
  truth["class_names"] = pool.data.class_names();
  json means = json::array();
  for (std::size_t r = 0; r < pool.means.rows(); ++r) {
    const auto row = pool.means.row(r);
    means.push_back(std::vector<double>(row.begin(), row.end()));
  }
  truth["means"] = means;
  truth["flipped_ids"] = pool.flipped_ids;
  json blobs = json::object();
  for (std::size_t i = 0; i < pool.data.size(); ++i) blobs[pool.data[i].id] = pool.blob[i];
  truth["blob_of"] = blobs;
  const std::string truth_path = strip_extension(path) + ".truth.json";
  write_atomic(truth_path, truth.dump() + "\n");
  manifest.add_output(truth_path);
  manifest.finalize();
  out << "wrote " << pool.data.size() << " samples to " << path << "\n";
  return kSuccess;
}

int cmd_tapt(const Flags& f, std::ostream& out) {
  ExperimentConfig c = build_config(f);
  c.validate();
  const std::string path = require_out(c);
  const Dataset data = load_input(c);
  ensure_parent(path);
  Manifest manifest(strip_extension(path) + ".manifest.json", "tapt", c);

  // Same pool as `run` with the same split flags: normalized train part,
  // labels dropped.
  const Split parts = kfold_split(data, c.split);
  const Dataset pool = zscore_normalize(parts.train).data.without_labels();
  TaptConfig t = c.tapt;
  t.seed = c.seed;
  TaptResult r = tapt_train(EncoderModel(c.al.encoder, pool.feature_dim(), c.seed), pool, t);

  std::ostringstream ckpt;
  json meta = json::parse(config_to_json(c));
  meta.erase("out");
  save_encoder(ckpt, r.encoder, meta.dump());
  write_atomic(path, ckpt.str());
  manifest.add_output(path);

  std::ostringstream loss;
  loss << "epoch,loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) {
    loss << e << ',' << format_double(r.epoch_loss[e]) << '\n';
  }
  const std::string loss_path = strip_extension(path) + ".loss.csv";
  write_atomic(loss_path, loss.str());
  manifest.add_output(loss_path);
  manifest.finalize();
  out << "pre-trained encoder on " << pool.size() << " samples for " << t.epochs
      << " epochs; wrote " << path << "\n";
  return kSuccess;
}

int cmd_run(const Flags& f, std::ostream& out) {
  ExperimentConfig c = build_config(f);
  std::optional<EncoderModel> encoder;
  if (!c.encoder_path.empty()) {
    if (!fs::exists(c.encoder_path)) {
      throw UsageError("encoder checkpoint '" + c.encoder_path + "' does not exist");
    }
    encoder = load_encoder(c.encoder_path);
    c.al.encoder = encoder->config();
  }
  c.validate();
  const std::string dir = require_out(c);
  const Dataset data = load_labeled(c);
  if (encoder && encoder->feature_dim() != data.feature_dim()) {
    throw UsageError("encoder expects " + std::to_string(encoder->feature_dim()) +
                     " features, data has " + std::to_string(data.feature_dim()));
  }
  fs::create_directories(dir);
  Manifest manifest((fs::path(dir) / "manifest.json").string(), "run", c);

  RunSpec spec = base_spec(c);
  RunLog log;
  if (encoder) {
    PreparedFold fold = prepare_fold(data, c.split);
    log = run_al(fold.pool, fold.oracle, fold.validation, fold.test, encoder, spec.al, clock_for(c));
    spec.tapt = c.tapt;
    log.run_id = make_run_id(spec, c.split.fold_index);
    log.fold = c.split.fold_index;
  } else {
    log = run_many(data, c.split, std::span<const RunSpec>(&spec, 1), c.jobs, clock_for(c)).front();
  }
  const std::string csv = (fs::path(dir) / "runlog.csv").string();
  write_atomic(csv, runlog_csv(std::span<const RunLog>(&log, 1)));
  manifest.add_output(csv);
  manifest.finalize();
  report(out, log);
  return kSuccess;
}

int cmd_sweep(const Flags& f, std::ostream& out) {
  ExperimentConfig c = build_config(f);
  c.validate();
  const std::string dir = require_out(c);
  const Dataset data = load_labeled(c);
  fs::create_directories(dir);
  Manifest manifest((fs::path(dir) / "manifest.json").string(), "sweep", c);

  std::vector<std::string> strategies = c.sweep_strategies;
  if (c.sweep_baseline && std::find(strategies.begin(), strategies.end(), "random") ==
                              strategies.end()) {
    strategies.push_back("random");
  }
  std::vector<RunSpec> specs;
  for (const auto& name : strategies) {
    for (double budget : c.sweep_budgets) {
      for (std::uint64_t seed : c.seed_list()) {
        RunSpec s = base_spec(c);
        s.al.acquisition.kind = acquisition_from_string(name);
        s.al.budget = budget;
        s.al.seed = seed;
        specs.push_back(s);
      }
    }
  }
  const auto logs = run_many(data, c.split, specs, c.jobs, clock_for(c));

  std::ostringstream sweep;
  sweep << "run_id,strategy,pretrain,budget,seed,fold,labeled_count,labeled_fraction,ua,wa,"
           "elapsed_ms\n";
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const auto& last = logs[i].rows.back();
    sweep << logs[i].run_id << ',' << to_string(specs[i].al.acquisition.kind) << ','
          << to_string(specs[i].tapt ? Pretrain::kTaptFineTune : Pretrain::kFineTune) << ','
          << format_double(specs[i].al.budget) << ',' << logs[i].seed << ',' << logs[i].fold << ','
          << last.labeled_count << ',' << format_double(last.labeled_fraction) << ','
          << format_double(logs[i].final_metrics.ua) << ','
          << format_double(logs[i].final_metrics.wa) << ','
          << format_double(std::round(last.elapsed_ms * 1000.0) / 1000.0) << '\n';
  }
  const std::string sweep_path = (fs::path(dir) / "sweep.csv").string();
  const std::string log_path = (fs::path(dir) / "runlog.csv").string();
  write_atomic(sweep_path, sweep.str());
  write_atomic(log_path, runlog_csv(logs));
  manifest.add_output(sweep_path);
  manifest.add_output(log_path);
  manifest.finalize();
  out << "sweep: " << logs.size() << " runs written to " << sweep_path << "\n";
  return kSuccess;
}

int cmd_ablate(const Flags& f, std::ostream& out) {
  ExperimentConfig c = build_config(f);
  c.validate();
  const std::string dir = require_out(c);
  const Dataset data = load_labeled(c);
  fs::create_directories(dir);
  Manifest manifest((fs::path(dir) / "manifest.json").string(), "ablate", c);

  RunSpec base = base_spec(c);
  base.tapt = c.tapt;
  const auto seeds = c.seed_list();
  const AblationResult r =
      ablation_grid(data, c.split, base, c.ablate_budgets, seeds, c.jobs, clock_for(c));

  std::ostringstream summary;
  write_grid_summary_csv(summary, r.summary);
  std::vector<RunLog> logs;
  for (const auto& run : r.runs) logs.push_back(run.log);
  const std::string summary_path = (fs::path(dir) / "summary.csv").string();
  const std::string log_path = (fs::path(dir) / "runlog.csv").string();
  write_atomic(summary_path, summary.str());
  write_atomic(log_path, runlog_csv(logs));
  manifest.add_output(summary_path);
  manifest.add_output(log_path);
  manifest.finalize();
  out << "ablate: " << r.runs.size() << " runs, " << r.summary.size() << " cells written to "
      << summary_path << "\n";
  return kSuccess;
}

}  // namespace

void write_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write '" + tmp + "'");
    os << content;
    os.flush();
    if (!os) throw std::runtime_error("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"altune: active-learning fine-tuning with task-adaptive pre-training"};
  app.require_subcommand(1);
  Flags f;

  auto* synth = app.add_subcommand("synth", "Generate a labeled synthetic pool");
  add_common(synth, f);
  synth->add_option("--format", f.format, "ndjson | csv (default: from the extension)");
  synth->add_option("--seed", f.seed, "Generator seed");
  synth->add_option("--classes", f.classes, "Number of classes");
  synth->add_option("--dim", f.dim, "Feature dimension");
  synth->add_option("--per-class", f.per_class, "Samples per class (one value or one per class)");
  synth->add_option("--sep", f.sep, "Pairwise distance between class means");
  synth->add_option("--noise", f.noise, "Fraction of labels flipped (< 0.5)");

  auto* tapt = app.add_subcommand("tapt", "Pre-train an encoder on the unlabeled pool");
  add_common(tapt, f);
  add_data(tapt, f);
  tapt->add_option("--seed", f.seed, "Encoder and training seed");
  add_encoder(tapt, f);
  add_tapt(tapt, f, "");
  add_split(tapt, f);

  auto* run = app.add_subcommand("run", "One active-learning run");
  add_common(run, f);
  add_data(run, f);
  run->add_option("--seed", f.seed, "Run seed");
  run->add_option("--encoder", f.encoder, "Pre-trained encoder checkpoint");
  run->add_option("--acq", f.acq, "entropy | least_confidence | margin | bald | random");
  run->add_option("--budget", f.budget, "Labeled fraction at which the loop stops");
  add_al(run, f);

  auto* sweep = app.add_subcommand("sweep", "Budget sweep over strategies and seeds");
  add_common(sweep, f);
  add_data(sweep, f);
  sweep->add_option("--seed", f.seed, "Single run seed");
  sweep->add_option("--seeds", f.seeds, "Seed list, e.g. 1..10 or 1,4,9");
  sweep->add_option("--acq", f.acq, "Comma-separated strategies");
  sweep->add_option("--budgets", f.budgets, "Comma-separated budgets");
  sweep->add_flag("--no-baseline", f.no_baseline, "Do not add the random strategy");
  add_al(sweep, f);

  auto* ablate = app.add_subcommand("ablate", "Sampling x pre-training grid over budgets");
  add_common(ablate, f);
  add_data(ablate, f);
  ablate->add_option("--seed", f.seed, "Single run seed");
  ablate->add_option("--seeds", f.seeds, "Seed list, e.g. 1..10 or 1,4,9");
  ablate->add_option("--budgets", f.budgets, "Comma-separated budgets");
  add_al(ablate, f);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kConfigError;
  }

  try {
    if (synth->parsed()) return cmd_synth(f, out);
    if (tapt->parsed()) return cmd_tapt(f, out);
    if (run->parsed()) return cmd_run(f, out);
    if (sweep->parsed()) return cmd_sweep(f, out);
    return cmd_ablate(f, out);
  } catch (const UsageError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

}  // namespace altune::cli
