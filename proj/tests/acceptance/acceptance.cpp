// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Thresholds and runtime limits are fixed here.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "altune/acquisition.hpp"
#include "altune/engine.hpp"
#include "cli.hpp"
#include "support.hpp"

using namespace altune;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back(std::string(ok ? "ok   " : "MISS ") + what);
  }
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int failures = 0;

void run_criterion(int number, const std::string& title, double limit_s,
                   const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.require(false, std::string("threw: ") + e.what());
  }
  const double elapsed = seconds_since(t0);
  o.require(elapsed < limit_s, fmt("runtime %.2f s < %.0f s", elapsed, limit_s));
  if (!o.pass) ++failures;
  std::printf("criterion %d: %s  %s (%.2f s)\n", number, o.pass ? "PASS" : "FAIL", title.c_str(),
              elapsed);
  for (const auto& n : o.notes) std::printf("    %s\n", n.c_str());
  std::fflush(stdout);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Standard synthetic pool: c=4, d=32, 500 per class, separation 2.5, 10% noise.
Dataset standard_pool() {
  SynthConfig cfg;
  cfg.seed = 2024;
  return synth_pool(cfg).data;
}

SplitSpec standard_split() {
  SplitSpec s;
  s.seed = 2024;
  return s;
}

std::vector<std::uint64_t> ten_seeds() { return {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}; }

double choose2(double n) { return n * (n - 1) / 2; }

double adjusted_rand(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::map<std::pair<std::size_t, std::size_t>, double> cell;
  std::map<std::size_t, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cell[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  double index = 0, sa = 0, sb = 0;
  for (auto& [k, v] : cell) index += choose2(v);
  for (auto& [k, v] : ra) sa += choose2(v);
  for (auto& [k, v] : rb) sb += choose2(v);
  const double expected = sa * sb / choose2(static_cast<double>(a.size()));
  return (index - expected) / ((sa + sb) / 2 - expected);
}

void criterion1(Outcome& o) {
  const double h4 = score_entropy(ProbVector({0.25, 0.25, 0.25, 0.25}));
  o.require(std::abs(h4 - std::log(4.0)) < 1e-9, fmt("entropy(uniform 4) = %.12f", h4));
  const double h1 = score_entropy(ProbVector({0, 0, 1, 0}));
  o.require(h1 == 0.0, fmt("entropy(one-hot) = %g", h1));
  const double c1 = contrastive_loss(Matrix(1, 3, {0.3, -1.0, 2.0}), Matrix(1, 3, {1.0, 0.5, 0.0}));
  o.require(c1 == 0.0, fmt("contrastive loss with one pair = %g", c1));
  const std::vector<std::size_t> target{3};
  const double r8 = reconstruction_loss(Matrix(1, 8, 0.0), target);
  o.require(std::abs(r8 - std::log(8.0)) < 1e-9, fmt("reconstruction(uniform V=8) = %.12f", r8));
}

void criterion2(Outcome& o) {
  const Dataset data =
      zscore_normalize(synth_pool(testing::small_synth(4, 77)).data).data;
  const Matrix x = data.feature_matrix();
  GradCheckOptions opts;
  opts.max_checked = 200;
  opts.seed = 5;

  {
    ClassifierModel model(EncoderModel(EncoderConfig{}, 32, 3), 4, 3);
    std::vector<std::size_t> y;
    for (const auto& s : data.samples()) y.push_back(*s.label);
    auto params = model.parameters();
    GradBlocks g = zeros_like(params);
    model.loss(x, y, &g);
    const auto r = finite_diff_check([&] { return model.loss(x, y); }, params, g, opts);
    o.require(r.checked >= 100 && r.max_relative_error < 1e-4,
              fmt("classifier cross-entropy: %.0f params, max rel err %.3g", r.checked,
                  r.max_relative_error));
  }
  {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix c(8, 16), q(8, 16);
    for (auto& v : c.values()) v = n(rng);
    for (auto& v : q.values()) v = n(rng);
    Matrix gc, gq;
    contrastive_loss(c, q, 0.1, &gc, &gq);
    std::vector<ParamView> params{{"context", c.values()}, {"quantized", q.values()}};
    GradBlocks g{std::vector<double>(gc.values().begin(), gc.values().end()),
                 std::vector<double>(gq.values().begin(), gq.values().end())};
    const auto r = finite_diff_check([&] { return contrastive_loss(c, q, 0.1); }, params, g, opts);
    o.require(r.checked >= 100 && r.max_relative_error < 1e-4,
              fmt("contrastive loss: %.0f params, max rel err %.3g", r.checked,
                  r.max_relative_error));
  }
  {
    EncoderModel enc(EncoderConfig{}, 32, 11);
    std::mt19937_64 rng(4);
    std::vector<MaskPlan> masks;
    for (std::size_t i = 0; i < x.rows(); ++i) masks.push_back(make_mask(8, 0.15, rng));
    auto params = enc.trainable_parameters();
    GradBlocks g = zeros_like(params);
    tapt_batch_loss(enc, x, masks, 0.1, &g);
    const auto r = finite_diff_check([&] { return tapt_batch_loss(enc, x, masks, 0.1).total(); },
                                     params, g, opts);
    o.require(r.checked >= 100 && r.max_relative_error < 1e-4,
              fmt("combined TAPT loss: %.0f params, max rel err %.3g", r.checked,
                  r.max_relative_error));
  }
}

void criterion3(Outcome& o) {
  SynthConfig cfg;
  cfg.per_class_counts = {250};
  cfg.seed = 31;
  const Dataset labeled = synth_pool(cfg).data;
  Dataset pool;
  LabelOracle oracle = LabelOracle::mask(labeled, pool);
  cfg.per_class_counts = {25};
  cfg.seed = 32;
  const Dataset validation = synth_pool(cfg).data;
  cfg.seed = 33;
  const Dataset test = synth_pool(cfg).data;

  ALConfig al;
  al.seed = 7;
  al.acquisition_size = 50;
  const RunLog log = run_al(pool, oracle, validation, test, std::nullopt, al, frozen_clock());

  bool conserved = true, monotone = true;
  std::set<std::string> labeled_ids;
  for (std::size_t i = 0; i < log.rows.size(); ++i) {
    const auto& r = log.rows[i];
    conserved = conserved && r.labeled_count + r.pool_remaining == 1000;
    for (const auto& id : r.selected) monotone = monotone && labeled_ids.insert(id).second;
    monotone = monotone && labeled_ids.size() == r.labeled_count;
    if (i > 0) monotone = monotone && r.labeled_count > log.rows[i - 1].labeled_count;
  }
  o.require(pool.size() == 1000, fmt("pool size %.0f", static_cast<double>(pool.size())));
  o.require(conserved, "labeled + pool = 1000 at every iteration");
  o.require(monotone, "labeled set only grows, no id selected twice");
  o.require(oracle.reveal_count() == 200,
            fmt("reveal counter %.0f", static_cast<double>(oracle.reveal_count())));
  std::vector<std::size_t> counts;
  for (const auto& r : log.rows) counts.push_back(r.labeled_count);
  const bool trace = counts == std::vector<std::size_t>{10, 60, 110, 160, 200} &&
                     log.rows.back().selected.size() == 40;
  o.require(trace, "labeled counts 10, 60, 110, 160, 200 (4 rounds, last one 40)");
}

void criterion4(Outcome& o) {
  const double s = 10.0 / std::sqrt(2.0);
  const auto [three, truth3] = testing::blobs({{s, 0, 0, 0}, {0, s, 0, 0}, {0, 0, s, 0}}, 80, 12);
  const ClusterModel m = kmeans(three, 3, 7);
  const double ari = adjusted_rand(m.assignments, truth3);
  o.require(std::abs(ari - 1.0) < 1e-12, fmt("ARI on 3 blobs at 10 sigma = %.12f", ari));

  bool monotone = true;
  for (std::size_t i = 1; i < m.sse_history.size(); ++i) {
    monotone = monotone && m.sse_history[i] <= m.sse_history[i - 1];
  }
  const auto [four, truth4] =
      testing::blobs({{12, 0, 0, 0}, {0, 12, 0, 0}, {0, 0, 12, 0}, {0, 0, 0, 12}}, 60, 5);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (std::size_t k = 1; k <= 8; ++k) {
      const ClusterModel mk = kmeans(four, k, seed);
      for (std::size_t i = 1; i < mk.sse_history.size(); ++i) {
        monotone = monotone && mk.sse_history[i] <= mk.sse_history[i - 1];
      }
    }
  }
  o.require(monotone, "SSE non-increasing across Lloyd iterations");
  const std::size_t k = elbow_choose_k(four, 8, 1);
  o.require(k == 4, fmt("elbow on 4 blobs, k_max 8 -> %.0f", static_cast<double>(k)));
}

void criterion5(Outcome& o) {
  RunSpec base;
  base.tapt = TaptConfig{};
  const std::vector<double> budgets{0.2};
  const auto seeds = ten_seeds();
  const AblationResult grid =
      ablation_grid(standard_pool(), standard_split(), base, budgets, seeds, 1, frozen_clock());

  auto ua = [&](AcquisitionKind s, Pretrain p) {
    std::vector<double> out(seeds.size());
    for (const auto& g : grid.runs) {
      if (g.sampling != s || g.pretrain != p) continue;
      const auto at = std::find(seeds.begin(), seeds.end(), g.seed) - seeds.begin();
      out[static_cast<std::size_t>(at)] = g.log.final_metrics.ua;
    }
    return out;
  };
  const auto ft_rand = ua(AcquisitionKind::kRandom, Pretrain::kFineTune);
  const auto ft_ent = ua(AcquisitionKind::kEntropy, Pretrain::kFineTune);
  const auto tapt_rand = ua(AcquisitionKind::kRandom, Pretrain::kTaptFineTune);
  const auto tapt_ent = ua(AcquisitionKind::kEntropy, Pretrain::kTaptFineTune);
  o.notes.push_back(fmt("mean UA  FT+Random %.4f  FT+Entropy %.4f", mean(ft_rand), mean(ft_ent)));
  o.notes.push_back(
      fmt("mean UA  TAPT+FT+Random %.4f  TAPT+FT+Entropy %.4f", mean(tapt_rand), mean(tapt_ent)));

  auto compare = [&](const std::string& name, const std::vector<double>& hi,
                     const std::vector<double>& lo) {
    int agree = 0;
    for (std::size_t i = 0; i < hi.size(); ++i) agree += hi[i] - lo[i] >= 0.0;
    const double gap = mean(hi) - mean(lo);
    o.require(gap >= 0.0 && agree >= 7,
              name + fmt(": gap %+.4f, %.0f/10 seeds agree", gap, static_cast<double>(agree)));
  };
  compare("FT+Entropy >= FT+Random", ft_ent, ft_rand);
  compare("TAPT+FT+Random >= FT+Random", tapt_rand, ft_rand);
  compare("TAPT+FT+Entropy >= FT+Entropy", tapt_ent, ft_ent);
}

std::vector<RunSpec> recipe(double budget, InitMode init) {
  std::vector<RunSpec> specs;
  for (std::uint64_t seed : ten_seeds()) {
    RunSpec s;
    s.al.acquisition.kind = AcquisitionKind::kEntropy;
    s.al.init = init;
    s.al.budget = budget;
    s.al.seed = seed;
    s.tapt = TaptConfig{};
    specs.push_back(s);
  }
  return specs;
}

void criterion6(Outcome& o) {
  auto specs = recipe(0.1, InitMode::kCluster);
  const auto random = recipe(0.1, InitMode::kRandom);
  specs.insert(specs.end(), random.begin(), random.end());
  const auto logs = run_many(standard_pool(), standard_split(), specs, 1, frozen_clock());
  std::vector<double> cluster_ua, random_ua;
  int wins = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    cluster_ua.push_back(logs[i].final_metrics.ua);
    random_ua.push_back(logs[i + 10].final_metrics.ua);
    wins += cluster_ua.back() >= random_ua.back();
  }
  o.notes.push_back(fmt("cluster init beats random init on %.0f/10 seeds", wins));
  o.require(mean(cluster_ua) >= mean(random_ua),
            fmt("mean UA at 10%%: cluster init %.4f >= random init %.4f", mean(cluster_ua),
                mean(random_ua)));
}

void criterion7(Outcome& o) {
  const std::vector<double> budgets{0.1, 0.2, 0.6, 1.0};
  std::vector<RunSpec> specs;
  for (double b : budgets) {
    const auto r = recipe(b, InitMode::kCluster);
    specs.insert(specs.end(), r.begin(), r.end());
  }
  const auto logs = run_many(standard_pool(), standard_split(), specs, 1, wall_clock());
  std::vector<double> ua(budgets.size()), ms(budgets.size());
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    std::vector<double> u, t;
    for (std::size_t i = 0; i < 10; ++i) {
      u.push_back(logs[b * 10 + i].final_metrics.ua);
      t.push_back(logs[b * 10 + i].rows.back().elapsed_ms);
    }
    ua[b] = mean(u);
    ms[b] = mean(t);
    o.notes.push_back(fmt("budget %.0f%%: mean UA %.4f, mean AL wallclock %.1f ms",
                          budgets[b] * 100, ua[b], ms[b]));
  }
  o.require(ua[1] > ua[0], fmt("UA(20%%) %.4f > UA(10%%) %.4f", ua[1], ua[0]));
  o.require(std::abs(ua[2] - ua[3]) <= 0.02,
            fmt("|UA(60%%) - UA(100%%)| = %.4f <= 0.02", std::abs(ua[2] - ua[3])));
  o.require(ms[0] < ms[1] && ms[1] < ms[2] && ms[2] < ms[3],
            "AL wallclock increases with budget");
}

void criterion8(Outcome& o) {
  const fs::path root =
      fs::temp_directory_path() / ("altune-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  auto cli = [&](std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run_cli(args, out, err);
    if (code != 0) o.require(false, "command failed: " + err.str());
    return code;
  };
  const std::string pool = (root / "pool.ndjson").string();
  cli({"synth", "--per-class", "60", "--seed", "5", "--out", pool});
  const std::vector<std::string> quick{"--max-epochs", "3", "--tapt-epochs", "2"};
  const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> commands{
      {{"run", "--data", pool, "--seed", "3"}, {"runlog.csv"}},
      {{"run", "--data", pool, "--seed", "3", "--acq", "bald", "--init", "random"}, {"runlog.csv"}},
      {{"sweep", "--data", pool, "--seeds", "1..2", "--budgets", "0.1,0.3", "--jobs", "2"},
       {"runlog.csv", "sweep.csv"}},
      {{"ablate", "--data", pool, "--seeds", "1..2", "--budgets", "0.2", "--jobs", "2"},
       {"runlog.csv", "summary.csv"}},
  };
  int index = 0;
  for (const auto& [args, files] : commands) {
    std::vector<std::string> bytes[2];
    for (int rep = 0; rep < 2; ++rep) {
      auto a = args;
      a.insert(a.end(), quick.begin(), quick.end());
      const fs::path dir = root / ("c" + std::to_string(index) + "-" + std::to_string(rep));
      a.insert(a.end(), {"--out", dir.string()});
      cli(a);
      for (const auto& f : files) bytes[rep].push_back(testing::slurp(dir / f));
    }
    const bool same = bytes[0] == bytes[1] && !bytes[0].front().empty();
    std::string joined;
    for (const auto& s : args) joined += s + " ";
    o.require(same, "byte-identical outputs: " + joined);
    ++index;
  }
  std::string ckpt[2];
  for (int rep = 0; rep < 2; ++rep) {
    const std::string path = (root / ("enc" + std::to_string(rep) + ".ckpt")).string();
    cli({"tapt", "--data", pool, "--epochs", "3", "--seed", "7", "--out", path});
    ckpt[rep] = testing::slurp(path);
  }
  o.require(ckpt[0] == ckpt[1] && !ckpt[0].empty(), "byte-identical tapt checkpoints");
  fs::remove_all(root);
}

void criterion9(Outcome& o) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  const std::size_t counts[4] = {10, 10, 20, 60};
  const std::size_t correct[4] = {8, 6, 10, 54};
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) pairs.emplace_back(c, i < correct[c] ? c : (c + 2) % 4);
  }
  const Metrics m = evaluate(testing::echo_model(4), testing::echo_dataset(pairs, 4));
  o.require(m.wa == 0.78, fmt("WA = %.17g", m.wa));
  o.require(m.ua == 0.70, fmt("UA = %.17g", m.ua));
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  run_criterion(1, "formula unit suite", 1, criterion1);
  run_criterion(2, "gradient suite", 30, criterion2);
  run_criterion(3, "acquisition loop invariants", 120, criterion3);
  run_criterion(4, "clustering suite", 30, criterion4);
  run_criterion(5, "sampling and pre-training ordering at 20% budget", 600, criterion5);
  run_criterion(6, "clustering initialization beats random at 10% budget", 600, criterion6);
  run_criterion(7, "budget curve shape", 1200, criterion7);
  run_criterion(8, "determinism of command outputs", 600, criterion8);
  run_criterion(9, "metric oracle", 1, criterion9);
  std::printf("acceptance: %d of 9 criteria failed (%.1f s)\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
