#include "config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "altune/format.hpp"
#include "json.hpp"

namespace altune::cli {
namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw UsageError(where + ": expected a JSON object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) throw UsageError(where + ": unknown key '" + item.key() + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& target, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError(where + "." + key + ": wrong type (" + j.at(key).dump() + ")");
  }
}

std::vector<std::uint64_t> read_seeds(const json& v) {
  if (v.is_string()) return parse_seed_list(v.get<std::string>());
  if (v.is_array()) {
    std::vector<std::uint64_t> out;
    for (const auto& e : v) {
      if (!e.is_number_unsigned()) throw UsageError("seeds: entries must be non-negative integers");
      out.push_back(e.get<std::uint64_t>());
    }
    return out;
  }
  throw UsageError("seeds: expected an array or a range string such as \"1..10\"");
}

void read_synth(const json& j, SynthConfig& s) {
  check_keys(j, {"classes", "dim", "per_class", "separation", "noise", "seed"}, "synth");
  read(j, "classes", s.class_count, "synth");
  read(j, "dim", s.dim, "synth");
  if (j.contains("per_class")) {
    const auto& v = j.at("per_class");
    if (v.is_number_unsigned()) {
      s.per_class_counts = {v.get<std::size_t>()};
    } else {
      read(j, "per_class", s.per_class_counts, "synth");
    }
  }
  read(j, "separation", s.separation, "synth");
  read(j, "noise", s.noise_rate, "synth");
  read(j, "seed", s.seed, "synth");
}

void read_tapt(const json& j, ExperimentConfig& c) {
  check_keys(j,
             {"enabled", "epochs", "batch_size", "lr", "temperature", "mask_fraction", "frames",
              "code_dim", "codebook_size", "hidden"},
             "tapt");
  read(j, "enabled", c.tapt_enabled, "tapt");
  read(j, "epochs", c.tapt.epochs, "tapt");
  read(j, "batch_size", c.tapt.batch_size, "tapt");
  read(j, "lr", c.tapt.learning_rate, "tapt");
  read(j, "temperature", c.tapt.temperature, "tapt");
  read(j, "mask_fraction", c.tapt.mask_fraction, "tapt");
  read(j, "frames", c.al.encoder.frames, "tapt");
  read(j, "code_dim", c.al.encoder.code_dim, "tapt");
  read(j, "codebook_size", c.al.encoder.codebook_size, "tapt");
  read(j, "hidden", c.al.encoder.hidden, "tapt");
}

void read_al(const json& j, ALConfig& al) {
  check_keys(j,
             {"acquisition", "init", "budget", "init_fraction", "k", "committee_size", "dropout",
              "warm_start", "cluster_k_max", "max_epochs", "patience", "batch_size", "lr"},
             "al");
  try {
    if (j.contains("acquisition")) {
      al.acquisition.kind = acquisition_from_string(j.at("acquisition").get<std::string>());
    }
    if (j.contains("init")) al.init = init_mode_from_string(j.at("init").get<std::string>());
  } catch (const json::exception&) {
    throw UsageError("al: acquisition and init must be strings");
  } catch (const std::exception& e) {
    throw UsageError(std::string("al: ") + e.what());
  }
  read(j, "budget", al.budget, "al");
  read(j, "init_fraction", al.init_fraction, "al");
  read(j, "k", al.acquisition_size, "al");
  read(j, "committee_size", al.acquisition.committee_size, "al");
  read(j, "dropout", al.acquisition.dropout_rate, "al");
  read(j, "warm_start", al.warm_start, "al");
  read(j, "cluster_k_max", al.cluster_k_max, "al");
  read(j, "max_epochs", al.fine_tune.max_epochs, "al");
  read(j, "patience", al.fine_tune.patience, "al");
  read(j, "batch_size", al.fine_tune.batch_size, "al");
  read(j, "lr", al.fine_tune.learning_rate, "al");
}

void read_split(const json& j, SplitSpec& s) {
  check_keys(j, {"folds", "fold", "validation_fraction", "seed"}, "split");
  read(j, "folds", s.fold_count, "split");
  read(j, "fold", s.fold_index, "split");
  read(j, "validation_fraction", s.validation_fraction, "split");
  read(j, "seed", s.seed, "split");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

std::uint64_t parse_u64(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw UsageError("not a non-negative integer: '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::out_of_range&) {
    throw UsageError("integer out of range: '" + s + "'");
  }
}

}  // namespace

std::vector<std::string> parse_name_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw UsageError("empty entry in list '" + text + "'");
    out.push_back(item);
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  for (const auto& item : parse_name_list(text)) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(parse_u64(item));
      continue;
    }
    const std::uint64_t lo = parse_u64(item.substr(0, dots));
    const std::uint64_t hi = parse_u64(item.substr(dots + 2));
    if (hi < lo) throw UsageError("empty seed range '" + item + "'");
    if (hi - lo > 100000) throw UsageError("seed range too long: '" + item + "'");
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : parse_name_list(text)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw UsageError("not a number: '" + item + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::uint64_t> ExperimentConfig::seed_list() const {
  return seeds.empty() ? std::vector<std::uint64_t>{seed} : seeds;
}

void ExperimentConfig::validate() const {
  if (synth) {
    try {
      synth->validate();
    } catch (const DatasetError& e) {
      throw UsageError(e.what());
    }
  }
  if (jobs == 0) throw UsageError("--jobs must be at least 1");
  if (tapt.batch_size == 0) throw UsageError("tapt batch size must be positive");
  if (!(tapt.learning_rate > 0.0)) throw UsageError("tapt learning rate must be positive");
  if (!(tapt.temperature > 0.0)) throw UsageError("temperature must be positive");
  if (!(tapt.mask_fraction > 0.0 && tapt.mask_fraction < 1.0)) {
    throw UsageError("mask fraction must lie in (0, 1)");
  }
  const auto& e = al.encoder;
  if (e.frames < 2) throw UsageError("frames must be at least 2");
  if (e.codebook_size < 2) throw UsageError("codebook size must be at least 2");
  if (e.code_dim == 0 || e.hidden == 0) throw UsageError("code_dim and hidden must be positive");
  if (split.fold_count < 2) throw UsageError("folds must be at least 2");
  if (split.fold_index >= split.fold_count) throw UsageError("fold index must be below folds");
  if (!(split.validation_fraction > 0.0 && split.validation_fraction <= 0.5)) {
    throw UsageError("validation fraction must lie in (0, 0.5]");
  }
  try {
    al.validate();
  } catch (const ConfigError& err) {
    throw UsageError(err.what());
  }
  for (const auto* list : {&sweep_budgets, &ablate_budgets}) {
    if (list->empty()) throw UsageError("budget list is empty");
    for (double b : *list) {
      if (!(b > 0.0 && b <= 1.0)) throw UsageError("budget " + format_double(b) + " outside (0, 1]");
      if (b < al.init_fraction) {
        throw UsageError("budget " + format_double(b) + " is below the init fraction");
      }
    }
  }
  for (const auto& name : sweep_strategies) {
    try {
      (void)acquisition_from_string(name);
    } catch (const std::exception& err) {
      throw UsageError(err.what());
    }
  }
}

ExperimentConfig config_from_json(const std::string& text, ExperimentConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"data", "format", "class_names", "synth", "seed", "seeds", "out", "jobs",
              "wallclock", "encoder", "tapt", "al", "split", "sweep", "ablate"},
             "config");
  read(j, "data", c.data, "config");
  if (j.contains("format")) {
    std::string f;
    read(j, "format", f, "config");
    try {
      c.format = format_from_string(f);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  read(j, "class_names", c.class_names, "config");
  if (j.contains("synth")) {
    SynthConfig s = c.synth.value_or(SynthConfig{});
    read_synth(j.at("synth"), s);
    c.synth = s;
  }
  read(j, "seed", c.seed, "config");
  if (j.contains("seeds")) c.seeds = read_seeds(j.at("seeds"));
  read(j, "out", c.out, "config");
  read(j, "jobs", c.jobs, "config");
  read(j, "wallclock", c.wallclock, "config");
  read(j, "encoder", c.encoder_path, "config");
  if (j.contains("tapt")) read_tapt(j.at("tapt"), c);
  if (j.contains("al")) read_al(j.at("al"), c.al);
  if (j.contains("split")) read_split(j.at("split"), c.split);
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    check_keys(s, {"budgets", "strategies", "baseline"}, "sweep");
    read(s, "budgets", c.sweep_budgets, "sweep");
    read(s, "strategies", c.sweep_strategies, "sweep");
    read(s, "baseline", c.sweep_baseline, "sweep");
  }
  if (j.contains("ablate")) {
    check_keys(j.at("ablate"), {"budgets"}, "ablate");
    read(j.at("ablate"), "budgets", c.ablate_budgets, "ablate");
  }
  return c;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), std::move(base));
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["data"] = c.data;
  if (c.format) j["format"] = *c.format == DataFormat::kCsv ? "csv" : "ndjson";
  j["class_names"] = c.class_names;
  if (c.synth) {
    j["synth"] = {{"classes", c.synth->class_count},
                  {"dim", c.synth->dim},
                  {"per_class", c.synth->per_class_counts},
                  {"separation", c.synth->separation},
                  {"noise", c.synth->noise_rate},
                  {"seed", c.synth->seed}};
  }
  j["seed"] = c.seed;
  j["seeds"] = c.seed_list();
  j["out"] = c.out;
  j["jobs"] = c.jobs;
  j["wallclock"] = c.wallclock;
  j["encoder"] = c.encoder_path;
  j["tapt"] = {{"enabled", c.tapt_enabled},
               {"epochs", c.tapt.epochs},
               {"batch_size", c.tapt.batch_size},
               {"lr", c.tapt.learning_rate},
               {"temperature", c.tapt.temperature},
               {"mask_fraction", c.tapt.mask_fraction},
               {"frames", c.al.encoder.frames},
               {"code_dim", c.al.encoder.code_dim},
               {"codebook_size", c.al.encoder.codebook_size},
               {"hidden", c.al.encoder.hidden}};
  const auto& al = c.al;
  j["al"] = {{"acquisition", to_string(al.acquisition.kind)},
             {"init", to_string(al.init)},
             {"budget", al.budget},
             {"init_fraction", al.init_fraction},
             {"k", al.acquisition_size},
             {"committee_size", al.acquisition.committee_size},
             {"dropout", al.acquisition.dropout_rate},
             {"warm_start", al.warm_start},
             {"cluster_k_max", al.cluster_k_max},
             {"max_epochs", al.fine_tune.max_epochs},
             {"patience", al.fine_tune.patience},
             {"batch_size", al.fine_tune.batch_size},
             {"lr", al.fine_tune.learning_rate}};
  j["split"] = {{"folds", c.split.fold_count},
                {"fold", c.split.fold_index},
                {"validation_fraction", c.split.validation_fraction},
                {"seed", c.split.seed}};
  j["sweep"] = {{"budgets", c.sweep_budgets},
                {"strategies", c.sweep_strategies},
                {"baseline", c.sweep_baseline}};
  j["ablate"] = {{"budgets", c.ablate_budgets}};
  return j.dump(2);
}

}  // namespace altune::cli
