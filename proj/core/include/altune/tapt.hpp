#pragma once

// Task-adaptive pre-training of the frame encoder on an unlabeled pool.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "altune/dataset.hpp"
#include "altune/numerics.hpp"

namespace altune {

class TaptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EncoderConfig {
  std::size_t frames = 8;          // T; feature_dim must be divisible by it
  std::size_t code_dim = 16;       // h
  std::size_t codebook_size = 32;  // V
  std::size_t hidden = 64;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Fixed projection from frame space to code space plus V codewords.
class Codebook {
 public:
  struct Code {
    std::size_t id;
    std::vector<double> codeword;
  };

  Codebook() = default;
  /// `projection` is code_dim x frame_dim, `codewords` is size x code_dim.
  Codebook(Matrix projection, Matrix codewords);

  /// Gaussian projection scaled by 1/sqrt(frame_dim) and unit-norm codewords.
  static Codebook random(std::size_t frame_dim, std::size_t code_dim, std::size_t size,
                         std::mt19937_64& rng);

  std::size_t size() const { return codewords_.rows(); }
  std::size_t code_dim() const { return codewords_.cols(); }
  std::size_t frame_dim() const { return projection_.cols(); }
  const Matrix& projection() const { return projection_; }
  const Matrix& codewords() const { return codewords_; }

  std::vector<double> project(std::span<const double> frame) const;

  /// Nearest codeword (Euclidean, in code space) to the projected frame.
  /// Ties go to the lowest index.
  Code quantize(std::span<const double> frame) const;

  friend bool operator==(const Codebook&, const Codebook&) = default;

 private:
  Matrix projection_;
  Matrix codewords_;
};

/// Sorted, distinct masked frame indices for one sample.
struct MaskPlan {
  std::vector<std::size_t> masked;
  double fraction = 0.15;
};

/// max(1, round(fraction * frames)) indices drawn uniformly without replacement.
MaskPlan make_mask(std::size_t frames, double fraction, std::mt19937_64& rng);

/// Frame encoder: a context network over the (possibly corrupted) frame
/// sequence, a frozen codebook, and a reconstruction head from context
/// vectors to codebook logits.
///
/// The context network reads the flattened T*f frames followed by a T-wide
/// mask indicator (masked frames are zeroed) and emits T context vectors of
/// width h.
class EncoderModel {
 public:
  EncoderModel() = default;
  /// Fresh weights W0 drawn from `seed`.
  EncoderModel(const EncoderConfig& config, std::size_t feature_dim, std::uint64_t seed);
  EncoderModel(const EncoderConfig& config, std::size_t feature_dim, DenseNet context,
               Codebook codebook, DenseNet reconstruction_head);

  const EncoderConfig& config() const { return config_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t frame_dim() const { return feature_dim_ / config_.frames; }

  const DenseNet& context_net() const { return context_; }
  DenseNet& context_net() { return context_; }
  const Codebook& codebook() const { return codebook_; }
  const DenseNet& reconstruction_head() const { return reconstruction_; }
  DenseNet& reconstruction_head() { return reconstruction_; }

  /// Context-network input rows for `features`. With `masks` (one per row)
  /// the masked frames are zeroed and flagged; without, nothing is masked.
  Matrix context_input(const Matrix& features, std::span<const MaskPlan> masks = {}) const;

  /// Context network blocks followed by reconstruction head blocks.
  std::vector<ParamView> trainable_parameters();

  friend bool operator==(const EncoderModel&, const EncoderModel&) = default;

 private:
  void validate() const;

  EncoderConfig config_;
  std::size_t feature_dim_ = 0;
  DenseNet context_;
  Codebook codebook_;
  DenseNet reconstruction_;
};

/// Contrastive loss between n context vectors and their n quantized targets
/// (rows paired by position; other rows act as negatives):
///   -sum_i log( exp(sim(c_i, q_i)/t) / sum_j exp(sim(c_i, q_j)/t) )
/// with cosine similarity. Gradients are written when the pointers are set.
double contrastive_loss(const Matrix& context, const Matrix& quantized, double temperature = 0.1,
                        Matrix* grad_context = nullptr, Matrix* grad_quantized = nullptr);

/// Mean negative log-softmax probability of each target code id.
double reconstruction_loss(const Matrix& logits, std::span<const std::size_t> targets,
                           Matrix* grad_logits = nullptr);

struct TaptLoss {
  double contrastive = 0.0;
  double reconstruction = 0.0;
  double total() const { return contrastive + reconstruction; }
};

/// Combined loss on one mini-batch under fixed masks. When `grads` is set it
/// receives the gradient in the layout of trainable_parameters(); quantized
/// targets are constants (no gradient flows into the codebook).
TaptLoss tapt_batch_loss(const EncoderModel& encoder, const Matrix& features,
                         std::span<const MaskPlan> masks, double temperature,
                         GradBlocks* grads = nullptr);

struct TaptConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  double temperature = 0.1;
  double mask_fraction = 0.15;
  std::uint64_t seed = 0;
};

struct TaptResult {
  EncoderModel encoder;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// Adam on contrastive + reconstruction loss over shuffled mini-batches of
/// `pool`, re-drawing masks every epoch. Labels are never read.
TaptResult tapt_train(EncoderModel encoder, const Dataset& pool, const TaptConfig& config);

void save_encoder(std::ostream& out, const EncoderModel& encoder,
                  const std::string& config_echo_json = "{}");
void save_encoder(const std::string& path, const EncoderModel& encoder,
                  const std::string& config_echo_json = "{}");
EncoderModel load_encoder(std::istream& in);
EncoderModel load_encoder(const std::string& path);

}  // namespace altune
