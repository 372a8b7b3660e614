#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "altune/numerics.hpp"

namespace altune {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; `line()` is 1-based (0 when not line-specific).
class ParseError : public DatasetError {
 public:
  ParseError(std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct Sample {
  std::string id;
  std::vector<double> features;
  std::optional<std::size_t> label;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Ordered samples of one feature width. Labels, when present, lie in
/// [0, class_count). Ids are unique.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<Sample> samples, std::size_t class_count,
          std::vector<std::string> class_names = {});

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t class_count() const { return class_count_; }
  const std::vector<std::string>& class_names() const { return class_names_; }
  const std::vector<Sample>& samples() const { return samples_; }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  bool fully_labeled() const;

  /// Same samples with every label dropped.
  Dataset without_labels() const;
  /// Samples at `indices`, in the given order.
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Samples whose id is in `ids`, in dataset order.
  Dataset subset_by_ids(const std::unordered_set<std::string>& ids) const;

  /// Features as a size() x feature_dim() matrix.
  Matrix feature_matrix() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::vector<Sample> samples_;
  std::size_t class_count_ = 0;
  std::size_t feature_dim_ = 0;
  std::vector<std::string> class_names_;
};

/// ceil(fraction * n), robust to representation error in `fraction`.
std::size_t fraction_count(double fraction, std::size_t n);

enum class DataFormat { kNdjson, kCsv };

DataFormat format_from_string(const std::string& name);
/// ".csv" -> kCsv, anything else -> kNdjson.
DataFormat format_from_path(const std::string& path);

struct LoadOptions {
  /// Declared label vocabulary; labels outside it are a parse error. When
  /// empty the vocabulary is the sorted set of labels found in the file.
  std::vector<std::string> class_names;
};

Dataset read_ndjson(std::istream& in, const LoadOptions& options = {});
Dataset read_csv(std::istream& in, const LoadOptions& options = {});
Dataset load_dataset(const std::string& path, DataFormat format, const LoadOptions& options = {});

void write_ndjson(std::ostream& out, const Dataset& data);
void write_csv(std::ostream& out, const Dataset& data);

/// Per-dimension statistics from zscore_normalize. Dimensions whose std is
/// below 1e-12 are only centered.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct Normalized {
  Dataset data;
  NormStats stats;
};

Normalized zscore_normalize(const Dataset& pool);
Dataset apply_normalization(const Dataset& data, const NormStats& stats);

struct SynthConfig {
  std::size_t class_count = 4;
  std::size_t dim = 32;
  /// One entry per class, or a single entry applied to every class.
  std::vector<std::size_t> per_class_counts{500};
  double separation = 2.5;
  double noise_rate = 0.10;
  std::uint64_t seed = 0;

  std::size_t count_for(std::size_t cls) const;
  std::size_t total() const;
  /// Throws DatasetError on an invalid configuration.
  void validate() const;
};

/// Generator output together with its ground truth.
struct SynthPool {
  Dataset data;
  Matrix means;                     // class_count x dim
  std::vector<std::size_t> blob;    // blob identity per sample, dataset order
  std::vector<std::string> flipped_ids;
};

/// Unit-covariance Gaussian blobs whose means are pairwise `separation` apart
/// (scaled orthonormal directions under a seeded random rotation), with
/// round(noise_rate * N) labels flipped uniformly to a different class.
SynthPool synth_pool(const SynthConfig& config);

struct SplitSpec {
  std::size_t fold_count = 5;
  std::size_t fold_index = 0;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct Split {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Seeded k-fold split: the designated fold is the test set; a seeded
/// `validation_fraction` of the remainder is validation; the rest is train.
/// Every part keeps the input order.
Split kfold_split(const Dataset& data, const SplitSpec& spec);

/// Holds the true labels of a pool and hands them out one id at a time.
/// Not thread-safe: reveal() has a single-writer contract.
class LabelOracle {
 public:
  LabelOracle() = default;

  /// Moves every label of `labeled` into the oracle; `unlabeled` receives the
  /// same samples with labels stripped.
  static LabelOracle mask(const Dataset& labeled, Dataset& unlabeled);

  std::size_t reveal(const std::string& id);
  /// Copies of `samples` with their true labels attached.
  std::vector<Sample> reveal(std::span<const Sample> samples);

  /// Number of distinct ids revealed so far.
  std::size_t reveal_count() const { return revealed_.size(); }
  bool contains(const std::string& id) const { return hidden_.count(id) != 0; }

 private:
  std::unordered_map<std::string, std::size_t> hidden_;
  std::unordered_set<std::string> revealed_;
};

}  // namespace altune
