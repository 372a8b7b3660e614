#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>

#include <unistd.h>
#include <vector>

#include "altune/classifier.hpp"
#include "altune/dataset.hpp"
#include "altune/tapt.hpp"

namespace testing {

// Encoder + head whose prediction is the argmax of the first `classes`
// features. Two frames of width `classes`; frame 1 is ignored.
inline altune::ClassifierModel echo_model(std::size_t classes) {
  using namespace altune;
  const std::size_t d = 2 * classes;
  EncoderConfig cfg{2, classes, 2, classes};
  Matrix w1(classes, d + 2);
  for (std::size_t i = 0; i < classes; ++i) w1(i, i) = 1.0;
  Matrix w2(2 * classes, classes);
  for (std::size_t i = 0; i < classes; ++i) w2(i, i) = 1.0;
  DenseNet context({DenseLayer{w1, std::vector<double>(classes, 0.0), Activation::kTanh},
                    DenseLayer{w2, std::vector<double>(2 * classes, 0.0), Activation::kIdentity}});
  Matrix proj(classes, classes);
  for (std::size_t i = 0; i < classes; ++i) proj(i, i) = 1.0;
  Matrix words(2, classes);
  words(0, 0) = 1.0;
  words(1, 1) = 1.0;
  DenseNet recon({DenseLayer{Matrix(2, classes), {0.0, 0.0}, Activation::kIdentity}});
  EncoderModel enc(cfg, d, std::move(context), Codebook(proj, words), std::move(recon));
  Matrix head(classes, classes);
  for (std::size_t i = 0; i < classes; ++i) head(i, i) = 1.0;
  return ClassifierModel(
      enc, DenseNet({DenseLayer{head, std::vector<double>(classes, 0.0), Activation::kIdentity}}));
}

// One sample per (truth, predicted) pair, readable by echo_model.
inline altune::Dataset echo_dataset(const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                    std::size_t classes) {
  std::vector<altune::Sample> samples;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::vector<double> f(2 * classes, 0.0);
    f[pairs[i].second] = 1.0;
    std::ostringstream id;
    id << "e" << i;
    samples.push_back({id.str(), f, pairs[i].first});
  }
  return altune::Dataset(std::move(samples), classes);
}

inline altune::SynthConfig small_synth(std::size_t per_class, std::uint64_t seed,
                                       double noise = 0.1) {
  altune::SynthConfig s;
  s.class_count = 4;
  s.dim = 32;
  s.per_class_counts = {per_class};
  s.separation = 2.5;
  s.noise_rate = noise;
  s.seed = seed;
  return s;
}

// Isotropic Gaussian blobs with unit stddev around the given centres.
inline std::pair<altune::Matrix, std::vector<std::size_t>> blobs(
    const std::vector<std::vector<double>>& centres, std::size_t per_blob, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t dim = centres.front().size();
  altune::Matrix pts(centres.size() * per_blob, dim);
  std::vector<std::size_t> truth;
  for (std::size_t b = 0; b < centres.size(); ++b) {
    for (std::size_t i = 0; i < per_blob; ++i) {
      const std::size_t r = b * per_blob + i;
      for (std::size_t j = 0; j < dim; ++j) pts(r, j) = centres[b][j] + n(rng);
      truth.push_back(b);
    }
  }
  return {pts, truth};
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::size_t line_count(const std::filesystem::path& p) {
  const std::string s = slurp(p);
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("altune-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
