#pragma once

// Uncertainty scoring, batch selection and clustering-based initialization.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "altune/classifier.hpp"
#include "altune/dataset.hpp"
#include "altune/numerics.hpp"

namespace altune {

class AcquisitionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AcquisitionKind { kEntropy, kLeastConfidence, kMargin, kCommitteeBald, kRandom };

/// Accepts entropy | least_confidence | margin | bald | random.
AcquisitionKind acquisition_from_string(const std::string& name);
std::string to_string(AcquisitionKind kind);

struct AcquisitionSpec {
  AcquisitionKind kind = AcquisitionKind::kEntropy;
  std::size_t committee_size = 10;  // CommitteeBald only
  double dropout_rate = 0.1;        // CommitteeBald only

  void validate() const;
};

/// Higher score = more desirable to label.
struct ScoredSample {
  std::string id;
  double score = 0.0;
};

double score_entropy(const ProbVector& probs);
double score_least_confidence(const ProbVector& probs);
/// Negated gap between the two largest probabilities.
double score_margin(const ProbVector& probs);

/// BALD estimate from committee outputs: H(mean) - mean(H).
double bald_from_passes(std::span<const ProbVector> passes);

/// BALD over `committee_size` dropout passes; the dropout RNG is derived from
/// (seed, features id) so the score does not depend on evaluation order.
double score_committee_bald(const ClassifierModel& model, const Sample& sample,
                            std::size_t committee_size, double dropout_rate, std::uint64_t seed);

/// Scores every sample of `pool` with the current model. Random assigns
/// seeded uniform scores.
std::vector<ScoredSample> score_pool(const ClassifierModel& model, const Dataset& pool,
                                     const AcquisitionSpec& spec, std::uint64_t seed);

/// First k entries of the (score desc, id asc) order. k larger than the list
/// selects everything.
std::vector<std::string> select_top_k(std::vector<ScoredSample> scored, std::size_t k);

struct ClusterModel {
  std::size_t k = 0;
  Matrix centroids;                     // k x dim
  std::vector<std::size_t> assignments; // per point, nearest centroid
  double sse = 0.0;
  /// SSE after every assignment step, first entry from the seeding.
  std::vector<double> sse_history;
  std::size_t iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. Stops when the largest centroid
/// shift drops below `tol` or after `max_iters` updates. An empty cluster
/// takes over the point farthest from its current centroid.
ClusterModel kmeans(const Matrix& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters = 100, double tol = 1e-6);

/// `sse[i]` is SSE for k = i + 1. Returns the k in [2, size-1] with the largest
/// second difference; ties go to the smallest k.
std::size_t elbow_from_sse(std::span<const double> sse);

std::size_t elbow_choose_k(const Matrix& points, std::size_t k_max, std::uint64_t seed);

/// max(k, ceil(fraction * N)) ids nearest to the k-means centroids, with
/// per-cluster quotas proportional to cluster size (largest remainder, at
/// least one each). k is picked by the elbow rule.
std::vector<std::string> clustering_init(const Dataset& pool, double fraction, std::size_t k_max,
                                         std::uint64_t seed);

}  // namespace altune
