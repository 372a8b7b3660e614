#include "altune/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "altune/rng.hpp"

namespace altune {
namespace {

double entropy_of(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

struct Assignment {
  std::vector<std::size_t> cluster;
  std::vector<double> dist2;
  double sse = 0.0;
};

Assignment assign(const Matrix& points, const Matrix& centroids) {
  Assignment a{std::vector<std::size_t>(points.rows()), std::vector<double>(points.rows()), 0.0};
  for (std::size_t i = 0; i < points.rows(); ++i) {
    std::size_t best = 0;
    double best_d = squared_distance(points.row(i), centroids.row(0));
    for (std::size_t c = 1; c < centroids.rows(); ++c) {
      const double d = squared_distance(points.row(i), centroids.row(c));
      if (d < best_d) {
        best = c;
        best_d = d;
      }
    }
    a.cluster[i] = best;
    a.dist2[i] = best_d;
    a.sse += best_d;
  }
  return a;
}

Matrix kmeanspp_seed(const Matrix& points, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = points.rows();
  Matrix centroids(k, points.cols());
  std::vector<bool> chosen(n, false);
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::size_t pick = first(rng);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      if (total <= 0.0) {
        // Every point coincides with a centroid; take the next unused one.
        pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), false) - chosen.begin());
      } else {
        const double target = unit(rng) * total;
        double acc = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += d2[i];
          if (acc > target && d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    }
    chosen[pick] = true;
    std::copy(points.row(pick).begin(), points.row(pick).end(), centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), centroids.row(c)));
    }
  }
  return centroids;
}

}  // namespace

AcquisitionKind acquisition_from_string(const std::string& name) {
  if (name == "entropy") return AcquisitionKind::kEntropy;
  if (name == "least_confidence") return AcquisitionKind::kLeastConfidence;
  if (name == "margin") return AcquisitionKind::kMargin;
  if (name == "bald") return AcquisitionKind::kCommitteeBald;
  if (name == "random") return AcquisitionKind::kRandom;
  throw AcquisitionError("unknown acquisition '" + name +
                         "' (expected entropy, least_confidence, margin, bald or random)");
}

std::string to_string(AcquisitionKind kind) {
  switch (kind) {
    case AcquisitionKind::kEntropy:
      return "entropy";
    case AcquisitionKind::kLeastConfidence:
      return "least_confidence";
    case AcquisitionKind::kMargin:
      return "margin";
    case AcquisitionKind::kCommitteeBald:
      return "bald";
    case AcquisitionKind::kRandom:
      break;
  }
  return "random";
}

void AcquisitionSpec::validate() const {
  if (kind != AcquisitionKind::kCommitteeBald) return;
  if (committee_size < 2) throw AcquisitionError("bald: committee size must be at least 2");
  if (!(dropout_rate > 0.0 && dropout_rate <= 0.5)) {
    throw AcquisitionError("bald: dropout rate must lie in (0, 0.5]");
  }
}

double score_entropy(const ProbVector& probs) { return entropy_of(probs.values()); }

double score_least_confidence(const ProbVector& probs) {
  const auto v = probs.values();
  return 1.0 - *std::max_element(v.begin(), v.end());
}

double score_margin(const ProbVector& probs) {
  if (probs.size() < 2) throw AcquisitionError("margin: need at least 2 classes");
  double first = -1.0;
  double second = -1.0;
  for (double p : probs.values()) {
    if (p > first) {
      second = first;
      first = p;
    } else if (p > second) {
      second = p;
    }
  }
  return -(first - second);
}

double bald_from_passes(std::span<const ProbVector> passes) {
  if (passes.empty()) throw AcquisitionError("bald: no committee passes");
  const std::size_t c = passes.front().size();
  std::vector<double> mean(c, 0.0);
  double mean_entropy = 0.0;
  for (const auto& p : passes) {
    if (p.size() != c) throw AcquisitionError("bald: committee passes disagree on class count");
    for (std::size_t j = 0; j < c; ++j) mean[j] += p[j];
    mean_entropy += entropy_of(p.values());
  }
  const double m = static_cast<double>(passes.size());
  for (double& v : mean) v /= m;
  return entropy_of(mean) - mean_entropy / m;
}

double score_committee_bald(const ClassifierModel& model, const Sample& sample,
                            std::size_t committee_size, double dropout_rate, std::uint64_t seed) {
  AcquisitionSpec{AcquisitionKind::kCommitteeBald, committee_size, dropout_rate}.validate();
  auto rng = make_rng(seed, Stream::kCommittee, hash_id(sample.id));
  const Matrix x(1, sample.features.size(), sample.features);
  std::vector<ProbVector> passes;
  passes.reserve(committee_size);
  for (std::size_t i = 0; i < committee_size; ++i) {
    const Matrix z = model.logits_dropout(x, dropout_rate, rng);
    passes.push_back(softmax(z.row(0)));
  }
  return bald_from_passes(passes);
}

std::vector<ScoredSample> score_pool(const ClassifierModel& model, const Dataset& pool,
                                     const AcquisitionSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<ScoredSample> out;
  out.reserve(pool.size());
  if (pool.empty()) return out;

  switch (spec.kind) {
    case AcquisitionKind::kRandom: {
      auto rng = make_rng(seed, Stream::kAcquisition);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (const auto& s : pool.samples()) out.push_back({s.id, unit(rng)});
      return out;
    }
    case AcquisitionKind::kCommitteeBald:
      for (const auto& s : pool.samples()) {
        out.push_back(
            {s.id, score_committee_bald(model, s, spec.committee_size, spec.dropout_rate, seed)});
      }
      return out;
    default:
      break;
  }

  const auto probs = model.predict(pool.feature_matrix());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    double score = 0.0;
    switch (spec.kind) {
      case AcquisitionKind::kEntropy:
        score = score_entropy(probs[i]);
        break;
      case AcquisitionKind::kLeastConfidence:
        score = score_least_confidence(probs[i]);
        break;
      default:
        score = score_margin(probs[i]);
        break;
    }
    out.push_back({pool[i].id, score});
  }
  return out;
}

std::vector<std::string> select_top_k(std::vector<ScoredSample> scored, std::size_t k) {
  for (const auto& s : scored) {
    if (!std::isfinite(s.score)) throw AcquisitionError("non-finite score for '" + s.id + "'");
  }
  k = std::min(k, scored.size());
  auto better = [](const ScoredSample& a, const ScoredSample& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    better);
  std::vector<std::string> ids;
  ids.reserve(k);
  for (std::size_t i = 0; i < k; ++i) ids.push_back(std::move(scored[i].id));
  return ids;
}

ClusterModel kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iters,
                    double tol) {
  const std::size_t n = points.rows();
  if (k == 0 || k > n) {
    throw AcquisitionError("kmeans: k=" + std::to_string(k) + " for " + std::to_string(n) +
                           " points");
  }
  auto rng = make_rng(seed, Stream::kKmeans);
  ClusterModel model;
  model.k = k;
  model.centroids = kmeanspp_seed(points, k, rng);
  Assignment a = assign(points, model.centroids);
  model.sse_history.push_back(a.sse);

  const std::size_t dim = points.cols();
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    Matrix next(k, dim);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = next.row(a.cluster[i]);
      auto src = points.row(i);
      for (std::size_t j = 0; j < dim; ++j) dst[j] += src[j];
      ++counts[a.cluster[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (double& v : next.row(c)) v /= static_cast<double>(counts[c]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      // Repair: adopt the point farthest from its (updated) centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = squared_distance(points.row(i), next.row(a.cluster[i]));
        if (counts[a.cluster[i]] > 1 && d > far_d) {
          far = i;
          far_d = d;
        }
      }
      --counts[a.cluster[far]];
      a.cluster[far] = c;
      counts[c] = 1;
      std::copy(points.row(far).begin(), points.row(far).end(), next.row(c).begin());
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      shift = std::max(shift, std::sqrt(squared_distance(next.row(c), model.centroids.row(c))));
    }
    model.centroids = std::move(next);
    a = assign(points, model.centroids);
    model.sse_history.push_back(a.sse);
    ++model.iterations;
    if (shift < tol) break;
  }
  model.assignments = std::move(a.cluster);
  model.sse = a.sse;
  return model;
}

std::size_t elbow_from_sse(std::span<const double> sse) {
  if (sse.size() < 3) throw AcquisitionError("elbow: need SSE for at least k = 1..3");
  std::size_t best_k = 2;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 2; k + 1 <= sse.size(); ++k) {
    // sse[k - 1] is SSE(k).
    const double second = (sse[k - 2] - sse[k - 1]) - (sse[k - 1] - sse[k]);
    if (second > best) {
      best = second;
      best_k = k;
    }
  }
  return best_k;
}

std::size_t elbow_choose_k(const Matrix& points, std::size_t k_max, std::uint64_t seed) {
  if (k_max < 3 || k_max > points.rows()) {
    throw AcquisitionError("elbow: k_max must lie in [3, N]");
  }
  std::vector<double> sse;
  for (std::size_t k = 1; k <= k_max; ++k) sse.push_back(kmeans(points, k, mix_seed(seed, k)).sse);
  return elbow_from_sse(sse);
}

std::vector<std::string> clustering_init(const Dataset& pool, double fraction, std::size_t k_max,
                                         std::uint64_t seed) {
  if (pool.empty()) throw AcquisitionError("clustering_init: empty pool");
  const std::size_t n = pool.size();
  const Matrix points = pool.feature_matrix();
  std::size_t k = n;
  if (n >= 3) k = elbow_choose_k(points, std::clamp<std::size_t>(k_max, 3, n), seed);
  const ClusterModel model = kmeans(points, k, mix_seed(seed, k));

  const std::size_t m = std::min(n, std::max(k, fraction_count(fraction, n)));
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < n; ++i) members[model.assignments[i]].push_back(i);

  // Largest-remainder apportionment of m over cluster sizes.
  std::vector<std::size_t> quota(k);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double exact = static_cast<double>(m) * static_cast<double>(members[c].size()) /
                         static_cast<double>(n);
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - static_cast<double>(quota[c]), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < m; ++r, ++assigned) ++quota[remainders[r].second];
  for (std::size_t c = 0; c < k; ++c) {
    if (quota[c] > 0) continue;
    std::size_t donor = 0;
    for (std::size_t d = 1; d < k; ++d) {
      if (quota[d] > quota[donor]) donor = d;
    }
    --quota[donor];
    quota[c] = 1;
  }

  std::vector<std::string> ids;
  ids.reserve(m);
  for (std::size_t c = 0; c < k; ++c) {
    auto& idx = members[c];
    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(idx.size());
    for (std::size_t i : idx) {
      ranked.emplace_back(squared_distance(points.row(i), model.centroids.row(c)), i);
    }
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return pool[a.second].id < pool[b.second].id;
    });
    for (std::size_t q = 0; q < quota[c]; ++q) ids.push_back(pool[ranked[q].second].id);
  }
  return ids;
}

}  // namespace altune
