#include "altune/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace altune {
namespace {

constexpr double kLogFloor = 1e-12;

double activate(Activation a, double z) {
  switch (a) {
    case Activation::kRelu:
      return z > 0.0 ? z : 0.0;
    case Activation::kTanh:
      return std::tanh(z);
    case Activation::kIdentity:
      break;
  }
  return z;
}

// Derivative expressed through the activation output y.
double activate_grad(Activation a, double y) {
  switch (a) {
    case Activation::kRelu:
      return y > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh:
      return 1.0 - y * y;
    case Activation::kIdentity:
      break;
  }
  return 1.0;
}

void affine(const DenseLayer& layer, const Matrix& in, Matrix& out) {
  const std::size_t n_out = layer.out_width();
  const std::size_t n_in = layer.in_width();
  out = Matrix(in.rows(), n_out);
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const double* x = in.row(r).data();
    double* y = out.row(r).data();
    for (std::size_t o = 0; o < n_out; ++o) {
      const double* w = layer.weight.row(o).data();
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * x[i];
      y[o] = activate(layer.activation, acc);
    }
  }
}

}  // namespace

DimensionError::DimensionError(const std::string& where, std::size_t expected, std::size_t actual)
    : NumericsError(where + ": expected width " + std::to_string(expected) + ", got " +
                    std::to_string(actual)),
      expected_(expected),
      actual_(actual) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw DimensionError("Matrix", rows * cols, values_.size());
  }
}

bool Matrix::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kRelu:
      return "relu";
    case Activation::kTanh:
      return "tanh";
    case Activation::kIdentity:
      break;
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity") return Activation::kIdentity;
  throw NumericsError("unknown activation '" + name + "'");
}

GradBlocks zeros_like(std::span<const ParamView> params) {
  GradBlocks out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.values.size(), 0.0);
  return out;
}

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.size() != l.out_width()) {
      throw DimensionError("DenseNet layer " + std::to_string(i) + " bias", l.out_width(),
                           l.bias.size());
    }
    if (i > 0 && layers_[i - 1].out_width() != l.in_width()) {
      throw DimensionError("DenseNet layer " + std::to_string(i) + " input",
                           layers_[i - 1].out_width(), l.in_width());
    }
    if (!l.weight.all_finite() ||
        !std::all_of(l.bias.begin(), l.bias.end(), [](double v) { return std::isfinite(v); })) {
      throw NumericsError("DenseNet layer " + std::to_string(i) + " has non-finite parameters");
    }
  }
}

DenseNet DenseNet::glorot(std::span<const std::size_t> widths,
                          std::span<const Activation> activations, std::mt19937_64& rng) {
  if (widths.size() != activations.size() + 1 || activations.empty()) {
    throw NumericsError("DenseNet::glorot: need one more width than activations");
  }
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i < activations.size(); ++i) {
    const std::size_t in = widths[i];
    const std::size_t out = widths[i + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{Matrix(out, in), std::vector<double>(out, 0.0), activations[i]};
    for (double& w : layer.weight.values()) w = dist(rng);
    layers.push_back(std::move(layer));
  }
  return DenseNet(std::move(layers));
}

std::size_t DenseNet::input_width() const {
  return layers_.empty() ? 0 : layers_.front().in_width();
}

std::size_t DenseNet::output_width() const {
  return layers_.empty() ? 0 : layers_.back().out_width();
}

std::size_t DenseNet::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<double> DenseNet::forward(std::span<const double> input) const {
  Matrix batch(1, input.size(), std::vector<double>(input.begin(), input.end()));
  Matrix out = forward(batch);
  return {out.values().begin(), out.values().end()};
}

Matrix DenseNet::forward(const Matrix& batch) const {
  if (batch.cols() != input_width()) {
    throw DimensionError("DenseNet::forward", input_width(), batch.cols());
  }
  Matrix current = batch;
  Matrix next;
  for (const auto& layer : layers_) {
    affine(layer, current, next);
    std::swap(current, next);
  }
  return current;
}

Matrix DenseNet::forward(const Matrix& batch, Trace& trace) const {
  if (batch.cols() != input_width()) {
    throw DimensionError("DenseNet::forward", input_width(), batch.cols());
  }
  trace.outputs.assign(layers_.size() + 1, Matrix());
  trace.outputs[0] = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    affine(layers_[i], trace.outputs[i], trace.outputs[i + 1]);
  }
  return trace.outputs.back();
}

Matrix DenseNet::forward_dropout(const Matrix& batch, double rate, std::mt19937_64& rng) const {
  if (batch.cols() != input_width()) {
    throw DimensionError("DenseNet::forward_dropout", input_width(), batch.cols());
  }
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  Matrix current = batch;
  Matrix next;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    affine(layers_[i], current, next);
    if (i + 1 < layers_.size()) {
      for (double& v : next.values()) v = keep(rng) ? v * scale : 0.0;
    }
    std::swap(current, next);
  }
  return current;
}

Matrix DenseNet::backward(const Trace& trace, const Matrix& grad_output, GradBlocks& grads,
                          std::size_t offset) const {
  if (grads.size() < offset + 2 * layers_.size()) {
    throw NumericsError("DenseNet::backward: gradient storage too small");
  }
  Matrix delta = grad_output;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const DenseLayer& layer = layers_[li];
    const Matrix& in = trace.outputs[li];
    const Matrix& out = trace.outputs[li + 1];
    const std::size_t n_in = layer.in_width();
    const std::size_t n_out = layer.out_width();
    if (delta.cols() != n_out || delta.rows() != out.rows()) {
      throw DimensionError("DenseNet::backward", n_out, delta.cols());
    }
    if (layer.activation != Activation::kIdentity) {
      for (std::size_t k = 0; k < delta.size(); ++k) {
        delta.values()[k] *= activate_grad(layer.activation, out.values()[k]);
      }
    }
    auto& gw = grads[offset + 2 * li];
    auto& gb = grads[offset + 2 * li + 1];
    Matrix grad_in(in.rows(), n_in);
    for (std::size_t r = 0; r < in.rows(); ++r) {
      const double* x = in.row(r).data();
      const double* d = delta.row(r).data();
      double* gx = grad_in.row(r).data();
      for (std::size_t o = 0; o < n_out; ++o) {
        const double g = d[o];
        if (g == 0.0) continue;
        gb[o] += g;
        double* gwo = gw.data() + o * n_in;
        const double* w = layer.weight.row(o).data();
        for (std::size_t i = 0; i < n_in; ++i) {
          gwo[i] += g * x[i];
          gx[i] += g * w[i];
        }
      }
    }
    delta = std::move(grad_in);
  }
  return delta;
}

std::vector<ParamView> DenseNet::parameters(const std::string& prefix) {
  std::vector<ParamView> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string base = prefix + "." + std::to_string(i);
    out.push_back({base + ".weight", layers_[i].weight.values()});
    out.push_back({base + ".bias", layers_[i].bias});
  }
  return out;
}

ProbVector::ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw NumericsError("ProbVector: empty");
  double sum = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0 && p <= 1.0)) throw NumericsError("ProbVector: entry outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    std::ostringstream os;
    os << "ProbVector: entries sum to " << sum;
    throw NumericsError(os.str());
  }
}

std::size_t ProbVector::argmax() const {
  // std::max_element returns the first maximum, i.e. ties go to the lowest index.
  return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

ProbVector softmax(std::span<const double> logits) {
  if (logits.empty()) throw NumericsError("softmax: empty input");
  const double top = *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(top)) throw NumericsError("softmax: non-finite logit");
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw NumericsError("softmax: non-finite logit");
    out[i] = std::exp(logits[i] - top);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return ProbVector(std::move(out));
}

double cross_entropy(std::span<const ProbVector> predicted, const Matrix& truth) {
  if (predicted.size() != truth.rows()) {
    throw DimensionError("cross_entropy batch", predicted.size(), truth.rows());
  }
  if (predicted.empty()) throw NumericsError("cross_entropy: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i].size() != truth.cols()) {
      throw DimensionError("cross_entropy class count", truth.cols(), predicted[i].size());
    }
    double row_sum = 0.0;
    for (std::size_t j = 0; j < truth.cols(); ++j) {
      const double y = truth(i, j);
      if (y != 0.0 && y != 1.0) throw NumericsError("cross_entropy: truth row is not one-hot");
      row_sum += y;
      if (y == 1.0) total -= std::log(std::max(predicted[i][j], kLogFloor));
    }
    if (row_sum != 1.0) throw NumericsError("cross_entropy: truth row is not one-hot");
  }
  return total / static_cast<double>(predicted.size());
}

double cross_entropy(std::span<const ProbVector> predicted, std::span<const std::size_t> labels) {
  if (predicted.empty()) throw NumericsError("cross_entropy: empty batch");
  Matrix truth(labels.size(), predicted.front().size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= truth.cols()) {
      throw NumericsError("cross_entropy: label " + std::to_string(labels[i]) +
                          " outside class count " + std::to_string(truth.cols()));
    }
    truth(i, labels[i]) = 1.0;
  }
  return cross_entropy(predicted, truth);
}

double softmax_cross_entropy(const Matrix& logits, std::span<const std::size_t> labels,
                             Matrix* grad_logits) {
  if (logits.rows() != labels.size()) {
    throw DimensionError("softmax_cross_entropy batch", logits.rows(), labels.size());
  }
  if (logits.rows() == 0) throw NumericsError("softmax_cross_entropy: empty batch");
  const double inv_k = 1.0 / static_cast<double>(logits.rows());
  if (grad_logits) *grad_logits = Matrix(logits.rows(), logits.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] >= logits.cols()) {
      throw NumericsError("softmax_cross_entropy: label " + std::to_string(labels[i]) +
                          " outside class count " + std::to_string(logits.cols()));
    }
    const ProbVector p = softmax(logits.row(i));
    total -= std::log(std::max(p[labels[i]], kLogFloor));
    if (grad_logits) {
      for (std::size_t j = 0; j < logits.cols(); ++j) {
        (*grad_logits)(i, j) = (p[j] - (j == labels[i] ? 1.0 : 0.0)) * inv_k;
      }
    }
  }
  return total * inv_k;
}

AdamState::AdamState(const AdamConfig& cfg, std::span<const ParamView> params)
    : config(cfg), first_moment(zeros_like(params)), second_moment(zeros_like(params)) {}

void adam_step(std::span<const ParamView> params, const GradBlocks& grads, AdamState& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step blocks", params.size(), grads.size());
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (grads[b].size() != params[b].values.size() ||
        state.first_moment[b].size() != params[b].values.size()) {
      throw DimensionError("adam_step block '" + params[b].name + "'", params[b].values.size(),
                           grads[b].size());
    }
    for (std::size_t i = 0; i < grads[b].size(); ++i) {
      if (!std::isfinite(grads[b][i])) {
        throw NumericsError("adam_step: non-finite gradient in block '" + params[b].name +
                            "' at index " + std::to_string(i));
      }
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    const auto& g = grads[b];
    auto p = params[b].values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<const ParamView> params, const GradBlocks& analytic,
                                  const GradCheckOptions& options) {
  if (analytic.size() != params.size()) {
    throw DimensionError("finite_diff_check blocks", params.size(), analytic.size());
  }
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (analytic[b].size() != params[b].values.size()) {
      throw DimensionError("finite_diff_check block '" + params[b].name + "'",
                           params[b].values.size(), analytic[b].size());
    }
    for (std::size_t i = 0; i < params[b].values.size(); ++i) coords.emplace_back(b, i);
  }
  if (options.max_checked > 0 && coords.size() > options.max_checked) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_checked);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckReport report;
  for (const auto& [b, i] : coords) {
    double& p = params[b].values[i];
    const double saved = p;
    p = saved + options.step;
    const double up = loss();
    p = saved - options.step;
    const double down = loss();
    p = saved;
    const double numeric = (up - down) / (2.0 * options.step);
    const double err = std::abs(analytic[b][i] - numeric) / std::max(1.0, std::abs(numeric));
    if (report.checked == 0 || err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_block = params[b].name;
      report.worst_index = i;
    }
    ++report.checked;
  }
  return report;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot", a.size(), b.size());
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("squared_distance", a.size(), b.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_similarity", a.size(), b.size());
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) throw NumericsError("cosine_similarity: zero-norm vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

}  // namespace altune
