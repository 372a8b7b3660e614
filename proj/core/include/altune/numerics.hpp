#pragma once

// Dense-network toolkit: matrices, feed-forward layers, softmax, losses,
// Adam and finite-difference gradient verification.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace altune {

class NumericsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an input width does not match what a layer expects.
class DimensionError : public NumericsError {
 public:
  DimensionError(const std::string& where, std::size_t expected, std::size_t actual);

  std::size_t expected() const { return expected_; }
  std::size_t actual() const { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

/// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

enum class Activation { kIdentity, kRelu, kTanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct DenseLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;
  Activation activation = Activation::kIdentity;

  std::size_t in_width() const { return weight.cols(); }
  std::size_t out_width() const { return weight.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Named, mutable view over one contiguous parameter block.
struct ParamView {
  std::string name;
  std::span<double> values;
};

/// Gradient storage laid out block-for-block like a ParamView list.
using GradBlocks = std::vector<std::vector<double>>;

GradBlocks zeros_like(std::span<const ParamView> params);

class DenseNet {
 public:
  /// Per-layer activations recorded by a training forward pass.
  /// `outputs[0]` is the input batch, `outputs[i + 1]` the output of layer i.
  struct Trace {
    std::vector<Matrix> outputs;
  };

  DenseNet() = default;
  explicit DenseNet(std::vector<DenseLayer> layers);

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  /// `activations` has one entry per layer, `widths` one more than that.
  static DenseNet glorot(std::span<const std::size_t> widths,
                         std::span<const Activation> activations, std::mt19937_64& rng);

  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t param_count() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  bool empty() const { return layers_.empty(); }

  std::vector<double> forward(std::span<const double> input) const;
  Matrix forward(const Matrix& batch) const;
  Matrix forward(const Matrix& batch, Trace& trace) const;

  /// Inference pass with inverted Bernoulli dropout applied to every hidden
  /// layer output (all layers but the last).
  Matrix forward_dropout(const Matrix& batch, double rate, std::mt19937_64& rng) const;

  /// Accumulates parameter gradients into `grads` (layout of parameters())
  /// starting at block `offset`, and returns the gradient w.r.t. the input.
  Matrix backward(const Trace& trace, const Matrix& grad_output, GradBlocks& grads,
                  std::size_t offset = 0) const;

  /// Two blocks per layer: "<prefix>.<i>.weight" and "<prefix>.<i>.bias".
  std::vector<ParamView> parameters(const std::string& prefix);

  friend bool operator==(const DenseNet&, const DenseNet&) = default;

 private:
  std::vector<DenseLayer> layers_;
};

/// Probability distribution over classes; entries in [0,1] summing to 1.
class ProbVector {
 public:
  static constexpr double kSumTolerance = 1e-9;

  ProbVector() = default;
  explicit ProbVector(std::vector<double> probs);

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> values() const { return probs_; }
  std::size_t argmax() const;

 private:
  std::vector<double> probs_;
};

ProbVector softmax(std::span<const double> logits);

/// Mean negative log-likelihood of one-hot `truth` rows under `predicted`,
/// with probabilities clamped below at 1e-12.
double cross_entropy(std::span<const ProbVector> predicted, const Matrix& truth);
double cross_entropy(std::span<const ProbVector> predicted, std::span<const std::size_t> labels);

/// Softmax + cross-entropy over a logit batch. Writes d(loss)/d(logits) when
/// `grad_logits` is non-null.
double softmax_cross_entropy(const Matrix& logits, std::span<const std::size_t> labels,
                             Matrix* grad_logits = nullptr);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  GradBlocks first_moment;
  GradBlocks second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(const AdamConfig& cfg, std::span<const ParamView> params);
};

/// One bias-corrected Adam update. Throws NumericsError naming the block if
/// any gradient entry is non-finite; parameters are untouched in that case.
void adam_step(std::span<const ParamView> params, const GradBlocks& grads, AdamState& state);

struct GradCheckOptions {
  double step = 1e-5;
  /// 0 checks every parameter; otherwise a seeded random subset of this size.
  std::size_t max_checked = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst_block;
  std::size_t worst_index = 0;
};

/// Central-difference check of `analytic` against `loss` evaluated at the
/// current parameter values. Relative error is |g_a - g_n| / max(1, |g_n|).
GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<const ParamView> params, const GradBlocks& analytic,
                                  const GradCheckOptions& options = {});

double cosine_similarity(std::span<const double> a, std::span<const double> b);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace altune
