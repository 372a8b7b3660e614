#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "altune/numerics.hpp"
#include "altune/tapt.hpp"

namespace altune {

/// Encoder followed by a dense head on the frame-averaged context vectors.
/// Fine-tuning updates the context network and the head; the reconstruction
/// head and codebook are carried along untouched.
class ClassifierModel {
 public:
  ClassifierModel() = default;
  /// Head weights drawn from `seed`.
  ClassifierModel(EncoderModel encoder, std::size_t class_count, std::uint64_t seed);
  /// Explicit head; its input width must equal the code dimension.
  ClassifierModel(EncoderModel encoder, DenseNet head);

  const EncoderModel& encoder() const { return encoder_; }
  const DenseNet& head() const { return head_; }
  std::size_t class_count() const { return head_.output_width(); }
  std::size_t feature_dim() const { return encoder_.feature_dim(); }

  Matrix logits(const Matrix& features) const;
  std::vector<ProbVector> predict(const Matrix& features) const;
  ProbVector predict(std::span<const double> features) const;

  /// Logits with Bernoulli dropout on the context network's hidden units.
  Matrix logits_dropout(const Matrix& features, double rate, std::mt19937_64& rng) const;

  /// Mean cross-entropy on a labeled batch; gradient in parameters() layout.
  double loss(const Matrix& features, std::span<const std::size_t> labels,
              GradBlocks* grads = nullptr) const;

  /// Context network blocks followed by head blocks.
  std::vector<ParamView> parameters();

  friend bool operator==(const ClassifierModel&, const ClassifierModel&) = default;

 private:
  Matrix pool_frames(const Matrix& context_out) const;

  EncoderModel encoder_;
  DenseNet head_;
};

}  // namespace altune
