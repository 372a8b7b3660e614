#include "altune/tapt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "altune/rng.hpp"

namespace altune {
namespace {

using json = nlohmann::json;

constexpr const char* kCheckpointFormat = "altune-encoder";
constexpr int kCheckpointVersion = 1;

json matrix_to_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()},
              {"values", std::vector<double>(m.values().begin(), m.values().end())}};
}

Matrix matrix_from_json(const json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("values").get<std::vector<double>>());
}

json net_to_json(const DenseNet& net) {
  json layers = json::array();
  for (const auto& l : net.layers()) {
    layers.push_back(
        {{"activation", to_string(l.activation)}, {"weight", matrix_to_json(l.weight)}, {"bias", l.bias}});
  }
  return layers;
}

DenseNet net_from_json(const json& j) {
  std::vector<DenseLayer> layers;
  for (const auto& l : j) {
    layers.push_back({matrix_from_json(l.at("weight")), l.at("bias").get<std::vector<double>>(),
                      activation_from_string(l.at("activation").get<std::string>())});
  }
  return DenseNet(std::move(layers));
}

}  // namespace

Codebook::Codebook(Matrix projection, Matrix codewords)
    : projection_(std::move(projection)), codewords_(std::move(codewords)) {
  if (codewords_.rows() < 2) throw TaptError("Codebook: need at least 2 codewords");
  if (projection_.rows() != codewords_.cols()) {
    throw DimensionError("Codebook projection", codewords_.cols(), projection_.rows());
  }
  for (std::size_t a = 0; a < codewords_.rows(); ++a) {
    for (std::size_t b = a + 1; b < codewords_.rows(); ++b) {
      if (squared_distance(codewords_.row(a), codewords_.row(b)) == 0.0) {
        throw TaptError("Codebook: codewords " + std::to_string(a) + " and " + std::to_string(b) +
                        " coincide");
      }
    }
  }
}

Codebook Codebook::random(std::size_t frame_dim, std::size_t code_dim, std::size_t size,
                          std::mt19937_64& rng) {
  if (frame_dim == 0 || code_dim == 0) throw TaptError("Codebook: zero dimension");
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix projection(code_dim, frame_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(frame_dim));
  for (double& v : projection.values()) v = normal(rng) * scale;
  Matrix codewords(size, code_dim);
  for (std::size_t k = 0; k < size; ++k) {
    auto row = codewords.row(k);
    double norm = 0.0;
    while (norm < 1e-8) {
      for (double& v : row) v = normal(rng);
      norm = l2_norm(row);
    }
    for (double& v : row) v /= norm;
  }
  return Codebook(std::move(projection), std::move(codewords));
}

std::vector<double> Codebook::project(std::span<const double> frame) const {
  if (frame.size() != frame_dim()) throw DimensionError("Codebook::project", frame_dim(), frame.size());
  std::vector<double> out(code_dim(), 0.0);
  for (std::size_t r = 0; r < code_dim(); ++r) out[r] = dot(projection_.row(r), frame);
  return out;
}

Codebook::Code Codebook::quantize(std::span<const double> frame) const {
  const auto z = project(frame);
  std::size_t best = 0;
  double best_dist = squared_distance(z, codewords_.row(0));
  for (std::size_t k = 1; k < size(); ++k) {
    const double d = squared_distance(z, codewords_.row(k));
    if (d < best_dist) {
      best = k;
      best_dist = d;
    }
  }
  auto row = codewords_.row(best);
  return {best, std::vector<double>(row.begin(), row.end())};
}

MaskPlan make_mask(std::size_t frames, double fraction, std::mt19937_64& rng) {
  if (frames < 2) throw TaptError("make_mask: need at least 2 frames");
  const auto wanted = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(frames)));
  const std::size_t count = std::clamp<std::size_t>(wanted, 1, frames);
  std::vector<std::size_t> idx(frames);
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates: the first `count` slots are a uniform draw.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, frames - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return {std::move(idx), fraction};
}

EncoderModel::EncoderModel(const EncoderConfig& config, std::size_t feature_dim, std::uint64_t seed)
    : config_(config), feature_dim_(feature_dim) {
  if (config.frames < 2 || feature_dim % config.frames != 0) {
    throw TaptError("EncoderModel: feature dim " + std::to_string(feature_dim) +
                    " is not divisible into " + std::to_string(config.frames) + " frames");
  }
  auto rng = make_rng(seed, Stream::kEncoderInit);
  const std::size_t T = config.frames;
  const std::vector<std::size_t> ctx_widths{feature_dim + T, config.hidden, T * config.code_dim};
  const std::vector<Activation> ctx_acts{Activation::kTanh, Activation::kIdentity};
  context_ = DenseNet::glorot(ctx_widths, ctx_acts, rng);
  const std::vector<std::size_t> rec_widths{config.code_dim, config.codebook_size};
  const std::vector<Activation> rec_acts{Activation::kIdentity};
  reconstruction_ = DenseNet::glorot(rec_widths, rec_acts, rng);
  auto code_rng = make_rng(seed, Stream::kCodebookInit);
  codebook_ = Codebook::random(frame_dim(), config.code_dim, config.codebook_size, code_rng);
  validate();
}

EncoderModel::EncoderModel(const EncoderConfig& config, std::size_t feature_dim, DenseNet context,
                           Codebook codebook, DenseNet reconstruction_head)
    : config_(config),
      feature_dim_(feature_dim),
      context_(std::move(context)),
      codebook_(std::move(codebook)),
      reconstruction_(std::move(reconstruction_head)) {
  validate();
}

void EncoderModel::validate() const {
  const std::size_t T = config_.frames;
  if (T < 2 || feature_dim_ % T != 0) throw TaptError("EncoderModel: bad frame layout");
  if (context_.input_width() != feature_dim_ + T) {
    throw DimensionError("EncoderModel context input", feature_dim_ + T, context_.input_width());
  }
  if (context_.output_width() != T * config_.code_dim) {
    throw DimensionError("EncoderModel context output", T * config_.code_dim, context_.output_width());
  }
  if (codebook_.code_dim() != config_.code_dim || codebook_.size() != config_.codebook_size ||
      codebook_.frame_dim() != frame_dim()) {
    throw TaptError("EncoderModel: codebook shape does not match config");
  }
  if (reconstruction_.input_width() != config_.code_dim ||
      reconstruction_.output_width() != config_.codebook_size) {
    throw TaptError("EncoderModel: reconstruction head shape does not match config");
  }
}

Matrix EncoderModel::context_input(const Matrix& features, std::span<const MaskPlan> masks) const {
  if (features.cols() != feature_dim_) {
    throw DimensionError("EncoderModel::context_input", feature_dim_, features.cols());
  }
  if (!masks.empty() && masks.size() != features.rows()) {
    throw DimensionError("EncoderModel::context_input masks", features.rows(), masks.size());
  }
  const std::size_t T = config_.frames;
  const std::size_t f = frame_dim();
  Matrix in(features.rows(), feature_dim_ + T, 0.0);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto src = features.row(r);
    auto dst = in.row(r);
    std::copy(src.begin(), src.end(), dst.begin());
    if (masks.empty()) continue;
    for (std::size_t t : masks[r].masked) {
      std::fill_n(dst.begin() + static_cast<std::ptrdiff_t>(t * f), f, 0.0);
      dst[feature_dim_ + t] = 1.0;
    }
  }
  return in;
}

std::vector<ParamView> EncoderModel::trainable_parameters() {
  auto params = context_.parameters("context");
  auto rec = reconstruction_.parameters("reconstruction");
  params.insert(params.end(), rec.begin(), rec.end());
  return params;
}

double contrastive_loss(const Matrix& context, const Matrix& quantized, double temperature,
                        Matrix* grad_context, Matrix* grad_quantized) {
  const std::size_t n = context.rows();
  if (n == 0) throw TaptError("contrastive_loss: no positions");
  if (quantized.rows() != n || quantized.cols() != context.cols()) {
    throw DimensionError("contrastive_loss", context.rows() * context.cols(),
                         quantized.rows() * quantized.cols());
  }
  const std::size_t h = context.cols();
  std::vector<double> c_norm(n), q_norm(n);
  for (std::size_t i = 0; i < n; ++i) {
    c_norm[i] = l2_norm(context.row(i));
    q_norm[i] = l2_norm(quantized.row(i));
    if (c_norm[i] == 0.0 || q_norm[i] == 0.0) {
      throw NumericsError("contrastive_loss: zero-norm vector at position " + std::to_string(i));
    }
  }
  Matrix cosine(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      cosine(i, j) = dot(context.row(i), quantized.row(j)) / (c_norm[i] * q_norm[j]);
    }
  }

  double loss = 0.0;
  Matrix coeff(n, n);  // d(loss)/d(cosine)
  for (std::size_t i = 0; i < n; ++i) {
    double top = cosine(i, 0) / temperature;
    for (std::size_t j = 1; j < n; ++j) top = std::max(top, cosine(i, j) / temperature);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(cosine(i, j) / temperature - top);
    const double lse = top + std::log(sum);
    loss += lse - cosine(i, i) / temperature;
    for (std::size_t j = 0; j < n; ++j) {
      const double p = std::exp(cosine(i, j) / temperature - lse);
      coeff(i, j) = (p - (i == j ? 1.0 : 0.0)) / temperature;
    }
  }

  // d cos(a,b)/da = (b/|b| - cos * a/|a|) / |a|
  if (grad_context) {
    *grad_context = Matrix(n, h);
    for (std::size_t i = 0; i < n; ++i) {
      auto g = grad_context->row(i);
      auto c = context.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        const double k = coeff(i, j);
        if (k == 0.0) continue;
        auto q = quantized.row(j);
        for (std::size_t d = 0; d < h; ++d) {
          g[d] += k * (q[d] / q_norm[j] - cosine(i, j) * c[d] / c_norm[i]) / c_norm[i];
        }
      }
    }
  }
  if (grad_quantized) {
    *grad_quantized = Matrix(n, h);
    for (std::size_t j = 0; j < n; ++j) {
      auto g = grad_quantized->row(j);
      auto q = quantized.row(j);
      for (std::size_t i = 0; i < n; ++i) {
        const double k = coeff(i, j);
        if (k == 0.0) continue;
        auto c = context.row(i);
        for (std::size_t d = 0; d < h; ++d) {
          g[d] += k * (c[d] / c_norm[i] - cosine(i, j) * q[d] / q_norm[j]) / q_norm[j];
        }
      }
    }
  }
  return loss;
}

double reconstruction_loss(const Matrix& logits, std::span<const std::size_t> targets,
                           Matrix* grad_logits) {
  if (logits.rows() == 0) throw TaptError("reconstruction_loss: no masked positions");
  for (std::size_t t : targets) {
    if (t >= logits.cols()) {
      throw TaptError("reconstruction_loss: target code " + std::to_string(t) +
                      " outside codebook of size " + std::to_string(logits.cols()));
    }
  }
  return softmax_cross_entropy(logits, targets, grad_logits);
}

TaptLoss tapt_batch_loss(const EncoderModel& encoder, const Matrix& features,
                         std::span<const MaskPlan> masks, double temperature, GradBlocks* grads) {
  if (masks.size() != features.rows()) {
    throw DimensionError("tapt_batch_loss masks", features.rows(), masks.size());
  }
  const std::size_t h = encoder.config().code_dim;
  const std::size_t f = encoder.frame_dim();

  DenseNet::Trace ctx_trace;
  const Matrix ctx_out = encoder.context_net().forward(encoder.context_input(features, masks), ctx_trace);

  std::size_t n = 0;
  for (const auto& m : masks) n += m.masked.size();
  Matrix zc(n, h);
  Matrix zq(n, h);
  std::vector<std::size_t> targets(n);
  std::vector<std::pair<std::size_t, std::size_t>> where(n);
  std::size_t k = 0;
  for (std::size_t b = 0; b < masks.size(); ++b) {
    for (std::size_t t : masks[b].masked) {
      auto src = ctx_out.row(b).subspan(t * h, h);
      std::copy(src.begin(), src.end(), zc.row(k).begin());
      // Targets come from the uncorrupted frame.
      const auto code = encoder.codebook().quantize(features.row(b).subspan(t * f, f));
      std::copy(code.codeword.begin(), code.codeword.end(), zq.row(k).begin());
      targets[k] = code.id;
      where[k] = {b, t};
      ++k;
    }
  }

  TaptLoss loss;
  Matrix grad_zc;
  loss.contrastive = contrastive_loss(zc, zq, temperature, grads ? &grad_zc : nullptr);

  DenseNet::Trace rec_trace;
  const Matrix logits = encoder.reconstruction_head().forward(zc, rec_trace);
  Matrix grad_logits;
  loss.reconstruction = reconstruction_loss(logits, targets, grads ? &grad_logits : nullptr);

  if (grads) {
    const std::size_t ctx_blocks = 2 * encoder.context_net().layers().size();
    const Matrix grad_zc_rec =
        encoder.reconstruction_head().backward(rec_trace, grad_logits, *grads, ctx_blocks);
    Matrix grad_out(ctx_out.rows(), ctx_out.cols());
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = grad_out.row(where[i].first).subspan(where[i].second * h, h);
      for (std::size_t d = 0; d < h; ++d) dst[d] += grad_zc(i, d) + grad_zc_rec(i, d);
    }
    encoder.context_net().backward(ctx_trace, grad_out, *grads, 0);
  }
  return loss;
}

TaptResult tapt_train(EncoderModel encoder, const Dataset& pool, const TaptConfig& config) {
  if (pool.empty()) throw TaptError("tapt_train: empty pool");
  if (pool.feature_dim() != encoder.feature_dim()) {
    throw DimensionError("tapt_train pool", encoder.feature_dim(), pool.feature_dim());
  }
  if (config.batch_size == 0) throw TaptError("tapt_train: batch size must be positive");

  TaptResult result;
  auto params = encoder.trainable_parameters();
  AdamState adam(AdamConfig{config.learning_rate}, params);
  const Matrix all = pool.feature_matrix();
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto shuffle_rng = make_rng(config.seed, Stream::kTaptShuffle, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    auto mask_rng = make_rng(config.seed, Stream::kTaptMask, epoch);
    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      Matrix batch(end - start, all.cols());
      std::vector<MaskPlan> masks;
      masks.reserve(end - start);
      for (std::size_t r = start; r < end; ++r) {
        auto src = all.row(order[r]);
        std::copy(src.begin(), src.end(), batch.row(r - start).begin());
        masks.push_back(make_mask(encoder.config().frames, config.mask_fraction, mask_rng));
      }
      GradBlocks grads = zeros_like(params);
      TaptLoss loss;
      std::string detail;
      try {
        loss = tapt_batch_loss(encoder, batch, masks, config.temperature, &grads);
      } catch (const NumericsError& e) {
        loss.contrastive = std::numeric_limits<double>::quiet_NaN();
        detail = e.what();
      }
      if (!std::isfinite(loss.total())) {
        std::ostringstream os;
        os << "tapt_train: non-finite loss at epoch " << epoch << ", batch " << batches;
        if (detail.empty()) {
          os << " (contrastive " << loss.contrastive << ", reconstruction " << loss.reconstruction
             << ")";
        } else {
          os << " (" << detail << ")";
        }
        throw TaptError(os.str());
      }
      adam_step(params, grads, adam);
      epoch_total += loss.total();
      ++batches;
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(batches));
  }
  result.encoder = std::move(encoder);
  return result;
}

void save_encoder(std::ostream& out, const EncoderModel& encoder,
                  const std::string& config_echo_json) {
  const auto& cfg = encoder.config();
  json doc;
  doc["format"] = kCheckpointFormat;
  doc["version"] = kCheckpointVersion;
  doc["config"] = {{"frames", cfg.frames},
                   {"code_dim", cfg.code_dim},
                   {"codebook_size", cfg.codebook_size},
                   {"hidden", cfg.hidden},
                   {"feature_dim", encoder.feature_dim()}};
  doc["echo"] = json::parse(config_echo_json);
  doc["context_net"] = net_to_json(encoder.context_net());
  doc["codebook"] = {{"projection", matrix_to_json(encoder.codebook().projection())},
                     {"codewords", matrix_to_json(encoder.codebook().codewords())}};
  doc["reconstruction_head"] = net_to_json(encoder.reconstruction_head());
  out << doc.dump() << '\n';
}

void save_encoder(const std::string& path, const EncoderModel& encoder,
                  const std::string& config_echo_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TaptError("cannot write checkpoint '" + path + "'");
  save_encoder(out, encoder, config_echo_json);
}

EncoderModel load_encoder(std::istream& in) {
  json doc;
  try {
    doc = json::parse(in);
    if (doc.at("format") != kCheckpointFormat) throw TaptError("not an encoder checkpoint");
    if (doc.at("version") != kCheckpointVersion) {
      throw TaptError("unsupported checkpoint version " + doc.at("version").dump());
    }
    const auto& c = doc.at("config");
    EncoderConfig cfg{c.at("frames").get<std::size_t>(), c.at("code_dim").get<std::size_t>(),
                      c.at("codebook_size").get<std::size_t>(), c.at("hidden").get<std::size_t>()};
    Codebook codebook(matrix_from_json(doc.at("codebook").at("projection")),
                      matrix_from_json(doc.at("codebook").at("codewords")));
    return EncoderModel(cfg, c.at("feature_dim").get<std::size_t>(), net_from_json(doc.at("context_net")),
                        std::move(codebook), net_from_json(doc.at("reconstruction_head")));
  } catch (const json::exception& e) {
    throw TaptError(std::string("malformed encoder checkpoint: ") + e.what());
  }
}

EncoderModel load_encoder(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TaptError("cannot open checkpoint '" + path + "'");
  return load_encoder(in);
}

}  // namespace altune
