#include "altune/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "altune/format.hpp"
#include "altune/rng.hpp"

namespace altune {
namespace {

using json = nlohmann::json;

constexpr double kDegenerateStd = 1e-12;

struct RawRow {
  std::size_t line;
  std::string id;
  std::optional<std::string> label;
  std::vector<double> features;
};

// Shared tail of both readers: arity, id uniqueness and label vocabulary.
Dataset assemble(std::vector<RawRow> rows, const LoadOptions& options) {
  if (rows.empty()) throw ParseError(0, "dataset has no samples");
  const std::size_t dim = rows.front().features.size();
  if (dim == 0) throw ParseError(rows.front().line, "sample has no features");

  std::vector<std::string> names = options.class_names;
  if (names.empty()) {
    std::set<std::string> seen;
    for (const auto& r : rows) {
      if (r.label) seen.insert(*r.label);
    }
    names.assign(seen.begin(), seen.end());
  }
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < names.size(); ++i) index.emplace(names[i], i);

  std::unordered_set<std::string> ids;
  std::vector<Sample> samples;
  samples.reserve(rows.size());
  for (auto& r : rows) {
    if (r.features.size() != dim) {
      throw ParseError(r.line, "expected " + std::to_string(dim) + " features, found " +
                                   std::to_string(r.features.size()));
    }
    if (!ids.insert(r.id).second) throw ParseError(r.line, "duplicate id '" + r.id + "'");
    Sample s{std::move(r.id), std::move(r.features), std::nullopt};
    if (r.label) {
      auto it = index.find(*r.label);
      if (it == index.end()) throw ParseError(r.line, "unknown label '" + *r.label + "'");
      s.label = it->second;
    }
    samples.push_back(std::move(s));
  }
  const std::size_t classes = names.size();
  return Dataset(std::move(samples), classes, std::move(names));
}

double parse_double(std::string_view text, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ParseError(line, "invalid number '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

std::size_t digits(std::size_t n) {
  std::size_t d = 1;
  while (n >= 10) {
    n /= 10;
    ++d;
  }
  return d;
}

std::string padded(const std::string& prefix, std::size_t value, std::size_t width) {
  std::string num = std::to_string(value);
  if (num.size() < width) num.insert(0, width - num.size(), '0');
  return prefix + num;
}

}  // namespace

ParseError::ParseError(std::size_t line, const std::string& message)
    : DatasetError(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
      line_(line) {}

Dataset::Dataset(std::vector<Sample> samples, std::size_t class_count,
                 std::vector<std::string> class_names)
    : samples_(std::move(samples)), class_count_(class_count), class_names_(std::move(class_names)) {
  if (!class_names_.empty() && class_names_.size() != class_count_) {
    throw DatasetError("class_names has " + std::to_string(class_names_.size()) +
                       " entries for " + std::to_string(class_count_) + " classes");
  }
  feature_dim_ = samples_.empty() ? 0 : samples_.front().features.size();
  std::unordered_set<std::string> ids;
  for (const auto& s : samples_) {
    if (s.features.size() != feature_dim_) {
      throw DatasetError("sample '" + s.id + "' has " + std::to_string(s.features.size()) +
                         " features, expected " + std::to_string(feature_dim_));
    }
    if (s.label && *s.label >= class_count_) {
      throw DatasetError("sample '" + s.id + "' label " + std::to_string(*s.label) +
                         " outside class count " + std::to_string(class_count_));
    }
    if (!ids.insert(s.id).second) throw DatasetError("duplicate id '" + s.id + "'");
  }
}

bool Dataset::fully_labeled() const {
  return std::all_of(samples_.begin(), samples_.end(),
                     [](const Sample& s) { return s.label.has_value(); });
}

Dataset Dataset::without_labels() const {
  Dataset out = *this;
  for (auto& s : out.samples_) s.label.reset();
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  std::vector<Sample> picked;
  picked.reserve(indices.size());
  for (std::size_t i : indices) picked.push_back(samples_.at(i));
  Dataset out;
  out.samples_ = std::move(picked);
  out.class_count_ = class_count_;
  out.feature_dim_ = feature_dim_;
  out.class_names_ = class_names_;
  return out;
}

Dataset Dataset::subset_by_ids(const std::unordered_set<std::string>& ids) const {
  std::vector<std::size_t> indices;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    if (ids.count(samples_[i].id)) indices.push_back(i);
  }
  return subset(indices);
}

Matrix Dataset::feature_matrix() const {
  Matrix m(samples_.size(), feature_dim_);
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    std::copy(samples_[i].features.begin(), samples_[i].features.end(), m.row(i).begin());
  }
  return m;
}

std::size_t fraction_count(double fraction, std::size_t n) {
  const double exact = fraction * static_cast<double>(n);
  const auto count = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  return std::min(count, n);
}

DataFormat format_from_string(const std::string& name) {
  if (name == "ndjson") return DataFormat::kNdjson;
  if (name == "csv") return DataFormat::kCsv;
  throw DatasetError("unknown data format '" + name + "' (expected ndjson or csv)");
}

DataFormat format_from_path(const std::string& path) {
  const auto dot = path.rfind('.');
  if (dot != std::string::npos && path.substr(dot) == ".csv") return DataFormat::kCsv;
  return DataFormat::kNdjson;
}

Dataset read_ndjson(std::istream& in, const LoadOptions& options) {
  std::vector<RawRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(line_no, "expected a JSON object");
    RawRow row{line_no, {}, std::nullopt, {}};
    auto id = obj.find("id");
    if (id == obj.end() || !id->is_string()) throw ParseError(line_no, "missing string 'id'");
    row.id = id->get<std::string>();
    auto label = obj.find("label");
    if (label != obj.end() && !label->is_null()) {
      if (!label->is_string()) throw ParseError(line_no, "'label' must be a string or null");
      row.label = label->get<std::string>();
    }
    auto features = obj.find("features");
    if (features == obj.end() || !features->is_array()) {
      throw ParseError(line_no, "missing array 'features'");
    }
    for (const auto& v : *features) {
      if (!v.is_number()) throw ParseError(line_no, "non-numeric feature");
      const double x = v.get<double>();
      if (!std::isfinite(x)) throw ParseError(line_no, "non-finite feature");
      row.features.push_back(x);
    }
    for (const auto& [key, _] : obj.items()) {
      if (key != "id" && key != "label" && key != "features") {
        throw ParseError(line_no, "unexpected key '" + key + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  return assemble(std::move(rows), options);
}

Dataset read_csv(std::istream& in, const LoadOptions& options) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  strip_cr(line);
  const auto header = split_commas(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
    throw ParseError(1, "header must be id,label,f0,...");
  }
  for (std::size_t j = 2; j < header.size(); ++j) {
    if (header[j] != "f" + std::to_string(j - 2)) {
      throw ParseError(1, "expected column f" + std::to_string(j - 2) + ", found '" +
                              std::string(header[j]) + "'");
    }
  }
  const std::size_t dim = header.size() - 2;
  std::vector<RawRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != dim + 2) {
      throw ParseError(line_no, "expected " + std::to_string(dim + 2) + " columns, found " +
                                    std::to_string(cells.size()));
    }
    RawRow row{line_no, std::string(cells[0]), std::nullopt, {}};
    if (row.id.empty()) throw ParseError(line_no, "empty id");
    if (!cells[1].empty()) row.label = std::string(cells[1]);
    row.features.reserve(dim);
    for (std::size_t j = 2; j < cells.size(); ++j) {
      row.features.push_back(parse_double(cells[j], line_no));
    }
    rows.push_back(std::move(row));
  }
  return assemble(std::move(rows), options);
}

Dataset load_dataset(const std::string& path, DataFormat format, const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open dataset '" + path + "'");
  return format == DataFormat::kCsv ? read_csv(in, options) : read_ndjson(in, options);
}

void write_ndjson(std::ostream& out, const Dataset& data) {
  for (const auto& s : data.samples()) {
    json obj;
    obj["id"] = s.id;
    if (s.label) {
      obj["label"] = data.class_names().empty() ? std::to_string(*s.label)
                                                : data.class_names()[*s.label];
    } else {
      obj["label"] = nullptr;
    }
    obj["features"] = s.features;
    out << obj.dump() << '\n';
  }
}

void write_csv(std::ostream& out, const Dataset& data) {
  out << "id,label";
  for (std::size_t j = 0; j < data.feature_dim(); ++j) out << ",f" << j;
  out << '\n';
  for (const auto& s : data.samples()) {
    out << s.id << ',';
    if (s.label) {
      out << (data.class_names().empty() ? std::to_string(*s.label)
                                         : data.class_names()[*s.label]);
    }
    for (double v : s.features) out << ',' << format_double(v);
    out << '\n';
  }
}

Normalized zscore_normalize(const Dataset& pool) {
  if (pool.empty()) throw DatasetError("zscore_normalize: empty pool");
  const std::size_t d = pool.feature_dim();
  const double n = static_cast<double>(pool.size());
  NormStats stats{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (const auto& s : pool.samples()) {
    for (std::size_t j = 0; j < d; ++j) stats.mean[j] += s.features[j];
  }
  for (double& m : stats.mean) m /= n;
  for (const auto& s : pool.samples()) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = s.features[j] - stats.mean[j];
      stats.stddev[j] += c * c;
    }
  }
  for (double& v : stats.stddev) v = std::sqrt(v / n);
  return {apply_normalization(pool, stats), stats};
}

Dataset apply_normalization(const Dataset& data, const NormStats& stats) {
  if (stats.mean.size() != data.feature_dim() && !data.empty()) {
    throw DatasetError("normalization statistics have " + std::to_string(stats.mean.size()) +
                       " dims, dataset has " + std::to_string(data.feature_dim()));
  }
  std::vector<Sample> out = data.samples();
  for (auto& s : out) {
    for (std::size_t j = 0; j < s.features.size(); ++j) {
      s.features[j] -= stats.mean[j];
      if (stats.stddev[j] >= kDegenerateStd) s.features[j] /= stats.stddev[j];
    }
  }
  return Dataset(std::move(out), data.class_count(), data.class_names());
}

std::size_t SynthConfig::count_for(std::size_t cls) const {
  return per_class_counts.size() == 1 ? per_class_counts.front() : per_class_counts.at(cls);
}

std::size_t SynthConfig::total() const {
  std::size_t n = 0;
  for (std::size_t c = 0; c < class_count; ++c) n += count_for(c);
  return n;
}

void SynthConfig::validate() const {
  if (class_count < 2) throw DatasetError("synth: need at least 2 classes");
  if (dim < 2) throw DatasetError("synth: need dim >= 2");
  if (class_count > dim) throw DatasetError("synth: class count may not exceed dim");
  if (per_class_counts.size() != 1 && per_class_counts.size() != class_count) {
    throw DatasetError("synth: per-class counts must have 1 or class_count entries");
  }
  for (std::size_t c = 0; c < class_count; ++c) {
    if (count_for(c) == 0) throw DatasetError("synth: every class needs at least one sample");
  }
  if (!(separation >= 0.0) || !std::isfinite(separation)) {
    throw DatasetError("synth: separation must be finite and non-negative");
  }
  if (!(noise_rate >= 0.0 && noise_rate < 0.5)) {
    throw DatasetError("synth: noise rate must lie in [0, 0.5)");
  }
}

SynthPool synth_pool(const SynthConfig& config) {
  config.validate();
  const std::size_t c = config.class_count;
  const std::size_t d = config.dim;

  // Orthonormal directions by Gram-Schmidt on Gaussian draws.
  SynthPool out;
  out.means = Matrix(c, d);
  {
    auto rng = make_rng(config.seed, Stream::kSynthMeans);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < c; ++k) {
      auto row = out.means.row(k);
      while (true) {
        for (double& v : row) v = normal(rng);
        for (std::size_t prev = 0; prev < k; ++prev) {
          const double proj = dot(row, out.means.row(prev));
          for (std::size_t j = 0; j < d; ++j) row[j] -= proj * out.means(prev, j);
        }
        const double norm = l2_norm(row);
        if (norm > 1e-6) {
          for (double& v : row) v /= norm;
          break;
        }
      }
    }
    const double scale = config.separation / std::sqrt(2.0);
    for (double& v : out.means.values()) v *= scale;
  }

  const std::size_t n = config.total();
  std::vector<std::size_t> blob;
  std::vector<std::vector<double>> features;
  blob.reserve(n);
  features.reserve(n);
  {
    auto rng = make_rng(config.seed, Stream::kSynthNoise);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < c; ++k) {
      for (std::size_t i = 0; i < config.count_for(k); ++i) {
        std::vector<double> x(d);
        for (std::size_t j = 0; j < d; ++j) x[j] = out.means(k, j) + normal(rng);
        blob.push_back(k);
        features.push_back(std::move(x));
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  {
    auto rng = make_rng(config.seed, Stream::kSynthOrder);
    std::shuffle(order.begin(), order.end(), rng);
  }

  std::vector<std::size_t> labels(n);
  for (std::size_t pos = 0; pos < n; ++pos) labels[pos] = blob[order[pos]];
  std::vector<bool> flipped(n, false);
  {
    const auto flips = static_cast<std::size_t>(std::llround(config.noise_rate * static_cast<double>(n)));
    std::vector<std::size_t> positions(n);
    std::iota(positions.begin(), positions.end(), 0);
    auto rng = make_rng(config.seed, Stream::kSynthFlip);
    std::shuffle(positions.begin(), positions.end(), rng);
    std::uniform_int_distribution<std::size_t> other(1, c - 1);
    for (std::size_t f = 0; f < flips; ++f) {
      const std::size_t pos = positions[f];
      labels[pos] = (labels[pos] + other(rng)) % c;
      flipped[pos] = true;
    }
  }

  const std::size_t id_width = std::max<std::size_t>(5, digits(n - 1));
  const std::size_t name_width = digits(c - 1);
  std::vector<std::string> names;
  for (std::size_t k = 0; k < c; ++k) names.push_back(padded("c", k, name_width));

  std::vector<Sample> samples;
  samples.reserve(n);
  out.blob.reserve(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    Sample s{padded("s", pos, id_width), std::move(features[order[pos]]), labels[pos]};
    if (flipped[pos]) out.flipped_ids.push_back(s.id);
    out.blob.push_back(blob[order[pos]]);
    samples.push_back(std::move(s));
  }
  out.data = Dataset(std::move(samples), c, std::move(names));
  return out;
}

Split kfold_split(const Dataset& data, const SplitSpec& spec) {
  const std::size_t n = data.size();
  if (spec.fold_count < 2) throw DatasetError("kfold_split: need at least 2 folds");
  if (spec.fold_count > n) {
    throw DatasetError("kfold_split: " + std::to_string(spec.fold_count) + " folds for " +
                       std::to_string(n) + " samples");
  }
  if (spec.fold_index >= spec.fold_count) {
    throw DatasetError("kfold_split: fold index " + std::to_string(spec.fold_index) +
                       " out of range");
  }
  if (!(spec.validation_fraction > 0.0 && spec.validation_fraction <= 0.5)) {
    throw DatasetError("kfold_split: validation fraction must lie in (0, 0.5]");
  }

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  {
    auto rng = make_rng(spec.seed, Stream::kSplitFolds);
    std::shuffle(perm.begin(), perm.end(), rng);
  }
  const std::size_t lo = spec.fold_index * n / spec.fold_count;
  const std::size_t hi = (spec.fold_index + 1) * n / spec.fold_count;
  std::vector<std::size_t> test(perm.begin() + static_cast<std::ptrdiff_t>(lo),
                                perm.begin() + static_cast<std::ptrdiff_t>(hi));
  std::vector<std::size_t> rest;
  rest.insert(rest.end(), perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(lo));
  rest.insert(rest.end(), perm.begin() + static_cast<std::ptrdiff_t>(hi), perm.end());
  std::sort(rest.begin(), rest.end());
  {
    auto rng = make_rng(mix_seed(spec.seed, spec.fold_index), Stream::kSplitValidation);
    std::shuffle(rest.begin(), rest.end(), rng);
  }
  const auto n_val = static_cast<std::size_t>(
      std::llround(spec.validation_fraction * static_cast<double>(rest.size())));
  std::vector<std::size_t> validation(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());

  std::sort(test.begin(), test.end());
  std::sort(validation.begin(), validation.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(validation), data.subset(test)};
}

LabelOracle LabelOracle::mask(const Dataset& labeled, Dataset& unlabeled) {
  LabelOracle oracle;
  for (const auto& s : labeled.samples()) {
    if (!s.label) throw DatasetError("LabelOracle::mask: sample '" + s.id + "' has no label");
    oracle.hidden_.emplace(s.id, *s.label);
  }
  unlabeled = labeled.without_labels();
  return oracle;
}

std::size_t LabelOracle::reveal(const std::string& id) {
  auto it = hidden_.find(id);
  if (it == hidden_.end()) throw DatasetError("LabelOracle: unknown id '" + id + "'");
  revealed_.insert(id);
  return it->second;
}

std::vector<Sample> LabelOracle::reveal(std::span<const Sample> samples) {
  for (const auto& s : samples) {
    if (!hidden_.count(s.id)) throw DatasetError("LabelOracle: unknown id '" + s.id + "'");
  }
  std::vector<Sample> out(samples.begin(), samples.end());
  for (auto& s : out) s.label = reveal(s.id);
  return out;
}

}  // namespace altune
