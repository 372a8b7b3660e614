#include "altune/classifier.hpp"

#include "altune/rng.hpp"

namespace altune {

ClassifierModel::ClassifierModel(EncoderModel encoder, std::size_t class_count, std::uint64_t seed)
    : encoder_(std::move(encoder)) {
  if (class_count < 2) throw NumericsError("ClassifierModel: need at least 2 classes");
  auto rng = make_rng(seed, Stream::kHeadInit);
  const std::vector<std::size_t> widths{encoder_.config().code_dim, class_count};
  const std::vector<Activation> acts{Activation::kIdentity};
  head_ = DenseNet::glorot(widths, acts, rng);
}

ClassifierModel::ClassifierModel(EncoderModel encoder, DenseNet head)
    : encoder_(std::move(encoder)), head_(std::move(head)) {
  if (head_.empty() || head_.input_width() != encoder_.config().code_dim) {
    throw NumericsError("ClassifierModel: head input width must equal the code dimension");
  }
  if (head_.output_width() < 2) throw NumericsError("ClassifierModel: need at least 2 classes");
}

Matrix ClassifierModel::pool_frames(const Matrix& context_out) const {
  const std::size_t T = encoder_.config().frames;
  const std::size_t h = encoder_.config().code_dim;
  const double inv = 1.0 / static_cast<double>(T);
  Matrix pooled(context_out.rows(), h);
  for (std::size_t r = 0; r < context_out.rows(); ++r) {
    auto src = context_out.row(r);
    auto dst = pooled.row(r);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t d = 0; d < h; ++d) dst[d] += src[t * h + d];
    }
    for (double& v : dst) v *= inv;
  }
  return pooled;
}

Matrix ClassifierModel::logits(const Matrix& features) const {
  const Matrix ctx = encoder_.context_net().forward(encoder_.context_input(features));
  return head_.forward(pool_frames(ctx));
}

std::vector<ProbVector> ClassifierModel::predict(const Matrix& features) const {
  const Matrix z = logits(features);
  std::vector<ProbVector> out;
  out.reserve(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) out.push_back(softmax(z.row(r)));
  return out;
}

ProbVector ClassifierModel::predict(std::span<const double> features) const {
  Matrix one(1, features.size(), std::vector<double>(features.begin(), features.end()));
  return predict(one).front();
}

Matrix ClassifierModel::logits_dropout(const Matrix& features, double rate,
                                       std::mt19937_64& rng) const {
  const Matrix ctx =
      encoder_.context_net().forward_dropout(encoder_.context_input(features), rate, rng);
  return head_.forward(pool_frames(ctx));
}

double ClassifierModel::loss(const Matrix& features, std::span<const std::size_t> labels,
                             GradBlocks* grads) const {
  DenseNet::Trace ctx_trace;
  const Matrix ctx = encoder_.context_net().forward(encoder_.context_input(features), ctx_trace);
  DenseNet::Trace head_trace;
  const Matrix z = head_.forward(pool_frames(ctx), head_trace);
  Matrix grad_logits;
  const double value = softmax_cross_entropy(z, labels, grads ? &grad_logits : nullptr);
  if (grads) {
    const std::size_t ctx_blocks = 2 * encoder_.context_net().layers().size();
    const Matrix grad_pooled = head_.backward(head_trace, grad_logits, *grads, ctx_blocks);
    const std::size_t T = encoder_.config().frames;
    const std::size_t h = encoder_.config().code_dim;
    const double inv = 1.0 / static_cast<double>(T);
    Matrix grad_ctx(ctx.rows(), ctx.cols());
    for (std::size_t r = 0; r < ctx.rows(); ++r) {
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t d = 0; d < h; ++d) grad_ctx(r, t * h + d) = grad_pooled(r, d) * inv;
      }
    }
    encoder_.context_net().backward(ctx_trace, grad_ctx, *grads, 0);
  }
  return value;
}

std::vector<ParamView> ClassifierModel::parameters() {
  // Only the context network and head are exposed; keep the encoder's
  // reconstruction head out of the fine-tuning parameter set.
  auto params = encoder_.context_net().parameters("context");
  auto head = head_.parameters("head");
  params.insert(params.end(), head.begin(), head.end());
  return params;
}

}  // namespace altune
