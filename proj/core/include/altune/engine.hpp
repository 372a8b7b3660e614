#pragma once

// Active-learning loop: clustering or random initialization, iterative
// acquisition through the label oracle, fine-tuning with early stopping, and
// UA/WA evaluation. Also the budget-sweep, ablation and k-fold harnesses.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "altune/acquisition.hpp"
#include "altune/classifier.hpp"
#include "altune/dataset.hpp"
#include "altune/tapt.hpp"

namespace altune {

class EngineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration, detected before any training.
class ConfigError : public EngineError {
 public:
  using EngineError::EngineError;
};

/// Milliseconds since an arbitrary origin.
using Clock = std::function<double()>;

Clock wall_clock();
/// Always reads 0; makes timing columns reproducible.
Clock frozen_clock();

struct Metrics {
  double ua = 0.0;
  double wa = 0.0;
  /// confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
};

/// UA is the mean recall over classes present in the confusion matrix; WA is
/// trace / total.
Metrics metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion);

/// Predictions are the argmax class (ties to the lowest index).
Metrics evaluate(const ClassifierModel& model, const Dataset& test);

struct FineTuneConfig {
  std::size_t max_epochs = 20;
  /// Training stops once more than `patience` consecutive epochs fail to
  /// improve the best validation loss.
  std::size_t patience = 5;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  double train_loss = 0.0;  // mean mini-batch loss
  double val_loss = 0.0;
};

struct FineTuneResult {
  ClassifierModel model;  // parameters from the best-validation epoch
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;
};

FineTuneResult fine_tune(ClassifierModel model, const Dataset& train, const Dataset& validation,
                         const FineTuneConfig& config);

enum class InitMode { kCluster, kRandom };

InitMode init_mode_from_string(const std::string& name);
std::string to_string(InitMode mode);

struct ALConfig {
  double init_fraction = 0.01;
  /// Samples acquired per iteration; 0 means 5% of the pool.
  std::size_t acquisition_size = 0;
  double budget = 0.20;
  AcquisitionSpec acquisition;
  InitMode init = InitMode::kCluster;
  std::size_t cluster_k_max = 10;
  bool warm_start = true;
  FineTuneConfig fine_tune;
  EncoderConfig encoder;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t acquisition_size_for(std::size_t pool_size) const;
};

struct RunLogRow {
  std::size_t iteration = 0;
  std::size_t labeled_count = 0;
  double labeled_fraction = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double ua = 0.0;
  double wa = 0.0;
  double elapsed_ms = 0.0;
  // Not part of the CSV.
  std::size_t pool_remaining = 0;
  std::vector<std::string> selected;
};

struct RunLog {
  std::string run_id;
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  std::vector<RunLogRow> rows;
  std::size_t reveal_count = 0;
  double tapt_ms = 0.0;
  Metrics final_metrics;
};

/// Runs the acquisition loop on an unlabeled `pool` whose labels sit in
/// `oracle`. `encoder` is W0' from pre-training; when absent a fresh W0 is
/// drawn from config.seed. One row is logged after every fine-tune.
RunLog run_al(const Dataset& pool, LabelOracle& oracle, const Dataset& validation,
              const Dataset& test, const std::optional<EncoderModel>& encoder,
              const ALConfig& config, const Clock& clock = wall_clock());

/// Train/validation/test of one fold: statistics from the train part
/// normalize all three, and train labels move into the oracle.
struct PreparedFold {
  Dataset pool;
  LabelOracle oracle;
  Dataset validation;
  Dataset test;
  NormStats stats;
};

PreparedFold prepare_fold(const Dataset& labeled, const SplitSpec& split);

/// One AL run; `tapt` unset means fine-tuning from fresh weights.
struct RunSpec {
  ALConfig al;
  std::optional<TaptConfig> tapt;
};

/// "s<seed>-f<fold>-<acquisition>-<init>-<tapt|ft>-b<budget>".
std::string make_run_id(const RunSpec& spec, std::size_t fold);

/// W0 for `seed`, pre-trained on `pool` when `tapt` is set (its seed is
/// replaced by `seed`).
EncoderModel prepare_encoder(const Dataset& pool, const EncoderConfig& config,
                             const std::optional<TaptConfig>& tapt, std::uint64_t seed,
                             double* tapt_ms = nullptr);

RunLog run_experiment(const Dataset& labeled, const SplitSpec& split, const RunSpec& spec,
                      const Clock& clock = wall_clock());

/// Runs `specs` on up to `jobs` threads. Pre-trained encoders are computed once
/// per distinct seed. Results are in `specs` order.
std::vector<RunLog> run_many(const Dataset& labeled, const SplitSpec& split,
                             std::span<const RunSpec> specs, std::size_t jobs = 1,
                             const Clock& clock = wall_clock());

enum class Pretrain { kFineTune, kTaptFineTune };
std::string to_string(Pretrain p);

struct GridRun {
  AcquisitionKind sampling;
  Pretrain pretrain;
  double budget;
  std::uint64_t seed;
  RunLog log;
};

struct GridSummaryRow {
  AcquisitionKind sampling;
  Pretrain pretrain;
  double budget;
  double mean_ua;
  double sd_ua;
  double mean_wa;
  double sd_wa;
  std::size_t n_seeds;
};

struct AblationResult {
  std::vector<GridRun> runs;
  std::vector<GridSummaryRow> summary;
};

/// (random, entropy) x (FT, TAPT+FT) x budgets, one run per seed per cell.
/// `base.tapt` supplies the pre-training settings for the TAPT+FT cells.
AblationResult ablation_grid(const Dataset& labeled, const SplitSpec& split, const RunSpec& base,
                             std::span<const double> budgets, std::span<const std::uint64_t> seeds,
                             std::size_t jobs = 1, const Clock& clock = wall_clock());

struct KFoldResult {
  std::vector<Metrics> per_fold;
  std::vector<RunLog> logs;
  std::vector<std::vector<std::string>> test_ids;
  double mean_ua = 0.0;
  double mean_wa = 0.0;
};

KFoldResult kfold_experiment(const Dataset& labeled, std::size_t folds, const SplitSpec& base_split,
                             const RunSpec& spec, std::size_t jobs = 1,
                             const Clock& clock = wall_clock());

/// Sample mean and standard deviation (n - 1 denominator; 0 for n < 2).
std::pair<double, double> mean_sd(std::span<const double> values);

void write_runlog_csv(std::ostream& out, std::span<const RunLog> logs);
void write_grid_summary_csv(std::ostream& out, std::span<const GridSummaryRow> rows);

}  // namespace altune
