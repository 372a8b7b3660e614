#include "altune/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "altune/format.hpp"
#include "altune/rng.hpp"

namespace altune {
namespace {

std::vector<std::size_t> labels_of(std::span<const Sample> samples) {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.label) throw EngineError("sample '" + s.id + "' is unlabeled");
    out.push_back(*s.label);
  }
  return out;
}

Matrix features_of(std::span<const Sample> samples, std::span<const std::size_t> order,
                   std::size_t begin, std::size_t end) {
  Matrix m(end - begin, samples.front().features.size());
  for (std::size_t r = begin; r < end; ++r) {
    const auto& f = samples[order[r]].features;
    std::copy(f.begin(), f.end(), m.row(r - begin).begin());
  }
  return m;
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& body) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

std::string encoder_key(const RunSpec& spec) {
  std::ostringstream os;
  const auto& e = spec.al.encoder;
  os << spec.al.seed << '|' << e.frames << ',' << e.code_dim << ',' << e.codebook_size << ','
     << e.hidden;
  if (spec.tapt) {
    const auto& t = *spec.tapt;
    os << "|tapt:" << t.epochs << ',' << t.batch_size << ',' << format_double(t.learning_rate)
       << ',' << format_double(t.temperature) << ',' << format_double(t.mask_fraction);
  }
  return os.str();
}

}  // namespace

Clock wall_clock() {
  return [] {
    using namespace std::chrono;
    return duration<double, std::milli>(steady_clock::now().time_since_epoch()).count();
  };
}

Clock frozen_clock() {
  return [] { return 0.0; };
}

Metrics metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion) {
  Metrics m;
  std::size_t total = 0;
  std::size_t correct = 0;
  double recall_sum = 0.0;
  std::size_t present = 0;
  for (std::size_t i = 0; i < confusion.size(); ++i) {
    if (confusion[i].size() != confusion.size()) throw EngineError("confusion matrix is not square");
    const std::size_t row = std::accumulate(confusion[i].begin(), confusion[i].end(), std::size_t{0});
    total += row;
    correct += confusion[i][i];
    if (row > 0) {
      recall_sum += static_cast<double>(confusion[i][i]) / static_cast<double>(row);
      ++present;
    }
  }
  if (total == 0) throw EngineError("evaluate: empty test set");
  m.wa = static_cast<double>(correct) / static_cast<double>(total);
  m.ua = recall_sum / static_cast<double>(present);
  m.confusion = std::move(confusion);
  return m;
}

Metrics evaluate(const ClassifierModel& model, const Dataset& test) {
  if (test.empty()) throw EngineError("evaluate: empty test set");
  const auto truth = labels_of(test.samples());
  const auto probs = model.predict(test.feature_matrix());
  const std::size_t c = model.class_count();
  std::vector<std::vector<std::size_t>> confusion(c, std::vector<std::size_t>(c, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= c) throw EngineError("evaluate: label outside model classes");
    ++confusion[truth[i]][probs[i].argmax()];
  }
  return metrics_from_confusion(std::move(confusion));
}

FineTuneResult fine_tune(ClassifierModel model, const Dataset& train, const Dataset& validation,
                         const FineTuneConfig& config) {
  if (train.empty()) throw EngineError("fine_tune: empty training set");
  if (validation.empty()) throw EngineError("fine_tune: empty validation set");
  if (config.batch_size == 0) throw ConfigError("fine_tune: batch size must be positive");
  const auto train_labels = labels_of(train.samples());
  const auto val_labels = labels_of(validation.samples());
  const Matrix val_x = validation.feature_matrix();

  FineTuneResult result;
  result.model = model;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  auto params = model.parameters();
  AdamState adam(AdamConfig{config.learning_rate}, params);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    auto rng = make_rng(config.seed, Stream::kFineTune, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const Matrix x = features_of(train.samples(), order, start, end);
      std::vector<std::size_t> y;
      y.reserve(end - start);
      for (std::size_t r = start; r < end; ++r) y.push_back(train_labels[order[r]]);
      GradBlocks grads = zeros_like(params);
      double loss = std::numeric_limits<double>::quiet_NaN();
      try {
        loss = model.loss(x, y, &grads);
      } catch (const NumericsError&) {
      }
      if (!std::isfinite(loss)) {
        throw EngineError("fine_tune: non-finite loss at epoch " + std::to_string(epoch) +
                          ", batch " + std::to_string(batches));
      }
      adam_step(params, grads, adam);
      total += loss;
      ++batches;
    }
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    try {
      val_loss = model.loss(val_x, val_labels);
    } catch (const NumericsError&) {
    }
    if (!std::isfinite(val_loss)) {
      throw EngineError("fine_tune: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.trace.push_back({total / static_cast<double>(batches), val_loss});
    if (val_loss < best) {
      best = val_loss;
      result.best_epoch = epoch;
      result.model = model;
      stale = 0;
    } else if (++stale > config.patience) {
      break;
    }
  }
  return result;
}

InitMode init_mode_from_string(const std::string& name) {
  if (name == "cluster") return InitMode::kCluster;
  if (name == "random") return InitMode::kRandom;
  throw ConfigError("unknown init mode '" + name + "' (expected cluster or random)");
}

std::string to_string(InitMode mode) { return mode == InitMode::kCluster ? "cluster" : "random"; }

std::string to_string(Pretrain p) { return p == Pretrain::kFineTune ? "FT" : "TAPT+FT"; }

void ALConfig::validate() const {
  if (!(init_fraction > 0.0 && init_fraction <= 1.0)) {
    throw ConfigError("init fraction must lie in (0, 1]");
  }
  if (!(budget > 0.0 && budget <= 1.0)) throw ConfigError("budget must lie in (0, 1]");
  if (budget < init_fraction) {
    throw ConfigError("budget " + format_double(budget) + " is below the init fraction " +
                      format_double(init_fraction));
  }
  if (fine_tune.batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(fine_tune.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  try {
    acquisition.validate();
  } catch (const AcquisitionError& e) {
    throw ConfigError(e.what());
  }
}

std::size_t ALConfig::acquisition_size_for(std::size_t pool_size) const {
  if (acquisition_size > 0) return acquisition_size;
  return std::max<std::size_t>(1, fraction_count(0.05, pool_size));
}

RunLog run_al(const Dataset& pool, LabelOracle& oracle, const Dataset& validation,
              const Dataset& test, const std::optional<EncoderModel>& encoder,
              const ALConfig& config, const Clock& clock) {
  config.validate();
  if (pool.empty()) throw EngineError("run_al: empty pool");
  for (const auto& s : pool.samples()) {
    if (s.label) throw EngineError("run_al: pool sample '" + s.id + "' carries a visible label");
  }
  const std::size_t n = pool.size();
  const std::size_t target = std::max<std::size_t>(1, fraction_count(config.budget, n));
  const std::size_t k = config.acquisition_size_for(n);
  const std::size_t classes = std::max(validation.class_count(), test.class_count());
  const double started = clock();

  const EncoderModel base_encoder =
      encoder ? *encoder : EncoderModel(config.encoder, pool.feature_dim(), config.seed);
  const ClassifierModel initial(base_encoder, classes, config.seed);

  // Q0
  std::vector<std::string> q0;
  if (config.init == InitMode::kCluster) {
    q0 = clustering_init(pool, config.init_fraction, config.cluster_k_max,
                         make_rng(config.seed, Stream::kInitSelection)());
  } else {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    auto rng = make_rng(config.seed, Stream::kInitSelection);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::max<std::size_t>(1, fraction_count(config.init_fraction, n)));
    for (std::size_t i : idx) q0.push_back(pool[i].id);
  }

  std::vector<bool> in_pool(n, true);
  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < n; ++i) position.emplace(pool[i].id, i);
  std::vector<Sample> labeled;
  std::size_t remaining = n;

  auto move_to_train = [&](const std::vector<std::string>& ids) {
    std::vector<Sample> picked;
    picked.reserve(ids.size());
    for (const auto& id : ids) {
      const std::size_t i = position.at(id);
      if (!in_pool[i]) throw EngineError("run_al: '" + id + "' selected twice");
      in_pool[i] = false;
      --remaining;
      picked.push_back(pool[i]);
    }
    auto revealed = oracle.reveal(picked);
    labeled.insert(labeled.end(), std::make_move_iterator(revealed.begin()),
                   std::make_move_iterator(revealed.end()));
  };

  RunLog log;
  log.seed = config.seed;
  ClassifierModel model = initial;
  auto train_and_log = [&](std::size_t iteration, std::vector<std::string> selected) {
    FineTuneConfig ft = config.fine_tune;
    ft.seed = mix_seed(config.seed, iteration);
    const Dataset train(labeled, classes, validation.class_names());
    FineTuneResult r = fine_tune(config.warm_start ? model : initial, train, validation, ft);
    model = std::move(r.model);
    const Metrics m = evaluate(model, test);
    RunLogRow row;
    row.iteration = iteration;
    row.labeled_count = labeled.size();
    row.labeled_fraction = static_cast<double>(labeled.size()) / static_cast<double>(n);
    row.train_loss = r.trace[r.best_epoch].train_loss;
    row.val_loss = r.trace[r.best_epoch].val_loss;
    row.ua = m.ua;
    row.wa = m.wa;
    row.elapsed_ms = clock() - started;
    row.pool_remaining = remaining;
    row.selected = std::move(selected);
    log.rows.push_back(std::move(row));
    log.final_metrics = m;
  };

  move_to_train(q0);
  train_and_log(0, q0);

  for (std::size_t iteration = 1; labeled.size() < target && remaining > 0; ++iteration) {
    std::vector<std::size_t> left;
    left.reserve(remaining);
    for (std::size_t i = 0; i < n; ++i) {
      if (in_pool[i]) left.push_back(i);
    }
    const Dataset current = pool.subset(left);
    auto scored = score_pool(model, current, config.acquisition, mix_seed(config.seed, iteration));
    auto chosen = select_top_k(std::move(scored), std::min(k, target - labeled.size()));
    move_to_train(chosen);
    train_and_log(iteration, std::move(chosen));
  }
  log.reveal_count = oracle.reveal_count();
  return log;
}

std::string make_run_id(const RunSpec& spec, std::size_t fold) {
  std::ostringstream os;
  os << "s" << spec.al.seed << "-f" << fold << "-" << to_string(spec.al.acquisition.kind) << "-"
     << to_string(spec.al.init) << "-" << (spec.tapt ? "tapt" : "ft") << "-b"
     << format_double(spec.al.budget);
  return os.str();
}

PreparedFold prepare_fold(const Dataset& labeled, const SplitSpec& split) {
  Split parts = kfold_split(labeled, split);
  if (parts.train.empty() || parts.validation.empty() || parts.test.empty()) {
    throw ConfigError("split leaves an empty train, validation or test part");
  }
  Normalized norm = zscore_normalize(parts.train);
  PreparedFold fold;
  fold.stats = norm.stats;
  fold.oracle = LabelOracle::mask(norm.data, fold.pool);
  fold.validation = apply_normalization(parts.validation, norm.stats);
  fold.test = apply_normalization(parts.test, norm.stats);
  return fold;
}

EncoderModel prepare_encoder(const Dataset& pool, const EncoderConfig& config,
                             const std::optional<TaptConfig>& tapt, std::uint64_t seed,
                             double* tapt_ms) {
  EncoderModel fresh(config, pool.feature_dim(), seed);
  if (!tapt) {
    if (tapt_ms) *tapt_ms = 0.0;
    return fresh;
  }
  const auto start = std::chrono::steady_clock::now();
  TaptConfig cfg = *tapt;
  cfg.seed = seed;
  TaptResult r = tapt_train(std::move(fresh), pool.without_labels(), cfg);
  if (tapt_ms) {
    *tapt_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                   .count();
  }
  return std::move(r.encoder);
}

RunLog run_experiment(const Dataset& labeled, const SplitSpec& split, const RunSpec& spec,
                      const Clock& clock) {
  return run_many(labeled, split, std::span<const RunSpec>(&spec, 1), 1, clock).front();
}

std::vector<RunLog> run_many(const Dataset& labeled, const SplitSpec& split,
                             std::span<const RunSpec> specs, std::size_t jobs, const Clock& clock) {
  for (const auto& s : specs) s.al.validate();
  const PreparedFold fold = prepare_fold(labeled, split);

  std::vector<std::string> keys;
  std::map<std::string, std::size_t> first_spec;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto key = encoder_key(specs[i]);
    if (first_spec.emplace(key, i).second) keys.push_back(key);
  }
  std::vector<EncoderModel> encoders(keys.size());
  std::vector<double> tapt_ms(keys.size(), 0.0);
  parallel_for(keys.size(), jobs, [&](std::size_t e) {
    const RunSpec& s = specs[first_spec.at(keys[e])];
    encoders[e] = prepare_encoder(fold.pool, s.al.encoder, s.tapt, s.al.seed, &tapt_ms[e]);
  });
  std::map<std::string, std::size_t> encoder_index;
  for (std::size_t e = 0; e < keys.size(); ++e) encoder_index.emplace(keys[e], e);

  std::vector<RunLog> logs(specs.size());
  parallel_for(specs.size(), jobs, [&](std::size_t i) {
    LabelOracle oracle = fold.oracle;
    const std::size_t e = encoder_index.at(encoder_key(specs[i]));
    logs[i] = run_al(fold.pool, oracle, fold.validation, fold.test, encoders[e], specs[i].al, clock);
    logs[i].run_id = make_run_id(specs[i], split.fold_index);
    logs[i].fold = split.fold_index;
    logs[i].tapt_ms = specs[i].tapt ? tapt_ms[e] : 0.0;
  });
  return logs;
}

std::pair<double, double> mean_sd(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

AblationResult ablation_grid(const Dataset& labeled, const SplitSpec& split, const RunSpec& base,
                             std::span<const double> budgets, std::span<const std::uint64_t> seeds,
                             std::size_t jobs, const Clock& clock) {
  if (!base.tapt) throw ConfigError("ablation_grid: TAPT settings are required");
  for (double b : budgets) {
    if (!(b > 0.0 && b <= 1.0)) throw ConfigError("ablation_grid: budgets must lie in (0, 1]");
  }
  const AcquisitionKind samplings[] = {AcquisitionKind::kRandom, AcquisitionKind::kEntropy};
  const Pretrain pretrains[] = {Pretrain::kFineTune, Pretrain::kTaptFineTune};

  AblationResult result;
  std::vector<RunSpec> specs;
  for (AcquisitionKind sampling : samplings) {
    for (Pretrain pretrain : pretrains) {
      for (double budget : budgets) {
        for (std::uint64_t seed : seeds) {
          RunSpec s = base;
          s.al.acquisition.kind = sampling;
          s.al.budget = budget;
          s.al.seed = seed;
          if (pretrain == Pretrain::kFineTune) s.tapt.reset();
          specs.push_back(s);
          result.runs.push_back({sampling, pretrain, budget, seed, {}});
        }
      }
    }
  }
  auto logs = run_many(labeled, split, specs, jobs, clock);
  for (std::size_t i = 0; i < logs.size(); ++i) result.runs[i].log = std::move(logs[i]);

  std::size_t i = 0;
  for (AcquisitionKind sampling : samplings) {
    for (Pretrain pretrain : pretrains) {
      for (double budget : budgets) {
        std::vector<double> ua, wa;
        for (std::size_t s = 0; s < seeds.size(); ++s, ++i) {
          ua.push_back(result.runs[i].log.final_metrics.ua);
          wa.push_back(result.runs[i].log.final_metrics.wa);
        }
        const auto [mu, su] = mean_sd(ua);
        const auto [mw, sw] = mean_sd(wa);
        result.summary.push_back({sampling, pretrain, budget, mu, su, mw, sw, seeds.size()});
      }
    }
  }
  return result;
}

KFoldResult kfold_experiment(const Dataset& labeled, std::size_t folds, const SplitSpec& base_split,
                             const RunSpec& spec, std::size_t jobs, const Clock& clock) {
  if (folds < 2) throw ConfigError("kfold_experiment: need at least 2 folds");
  KFoldResult result;
  result.logs.resize(folds);
  result.test_ids.resize(folds);
  parallel_for(folds, jobs, [&](std::size_t f) {
    SplitSpec split = base_split;
    split.fold_count = folds;
    split.fold_index = f;
    const Split parts = kfold_split(labeled, split);
    for (const auto& s : parts.test.samples()) result.test_ids[f].push_back(s.id);
    result.logs[f] = run_experiment(labeled, split, spec, clock);
  });
  std::vector<double> ua, wa;
  for (const auto& log : result.logs) {
    result.per_fold.push_back(log.final_metrics);
    ua.push_back(log.final_metrics.ua);
    wa.push_back(log.final_metrics.wa);
  }
  result.mean_ua = mean_sd(ua).first;
  result.mean_wa = mean_sd(wa).first;
  return result;
}

void write_runlog_csv(std::ostream& out, std::span<const RunLog> logs) {
  out << "run_id,seed,fold,iteration,labeled_count,labeled_fraction,train_loss,val_loss,ua,wa,"
         "elapsed_ms\n";
  for (const auto& log : logs) {
    for (const auto& r : log.rows) {
      out << log.run_id << ',' << log.seed << ',' << log.fold << ',' << r.iteration << ','
          << r.labeled_count << ',' << format_double(r.labeled_fraction) << ','
          << format_double(r.train_loss) << ',' << format_double(r.val_loss) << ','
          << format_double(r.ua) << ',' << format_double(r.wa) << ','
          << format_double(std::round(r.elapsed_ms * 1000.0) / 1000.0) << '\n';
    }
  }
}

void write_grid_summary_csv(std::ostream& out, std::span<const GridSummaryRow> rows) {
  out << "sampling,pretrain,budget,mean_ua,sd_ua,mean_wa,sd_wa,n_seeds\n";
  for (const auto& r : rows) {
    out << to_string(r.sampling) << ',' << to_string(r.pretrain) << ',' << format_double(r.budget)
        << ',' << format_double(r.mean_ua) << ',' << format_double(r.sd_ua) << ','
        << format_double(r.mean_wa) << ',' << format_double(r.sd_wa) << ',' << r.n_seeds << '\n';
  }
}

}  // namespace altune
