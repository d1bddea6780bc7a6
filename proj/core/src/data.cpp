#include "upet/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace upet {

using nlohmann::json;

void DatasetSpec::validate() const {
  if (num_classes < 2) {
    throw ConfigError("dataset: need at least two classes");
  }
  if (!label_names.empty()) {
    if (label_names.size() != num_classes) {
      throw ConfigError("dataset: label name count must match class count");
    }
    for (std::size_t i = 0; i < label_names.size(); ++i) {
      for (std::size_t j = i + 1; j < label_names.size(); ++j) {
        if (label_names[i] == label_names[j]) {
          throw ConfigError("dataset: duplicate label name '" + label_names[i] + "'");
        }
      }
    }
  }
  if (feature_dim < 2 || (feature_dim & (feature_dim - 1)) != 0) {
    throw ConfigError("dataset: feature_dim must be a power of two >= 2");
  }
}

std::size_t DatasetSpec::label_index(const std::string& name) const {
  for (std::size_t i = 0; i < label_names.size(); ++i) {
    if (label_names[i] == name) {
      return i;
    }
  }
  throw DataError("dataset: unknown label '" + name + "'");
}

Vec featurize(const std::string& text, std::size_t F) {
  if (F < 2 || (F & (F - 1)) != 0) {
    throw ConfigError("featurize: F must be a power of two >= 2");
  }
  Vec v(F, 0.0);
  // FNV-1a 64-bit, fixed constants.
  constexpr std::uint64_t kOffset = 14695981039346656037ULL;
  constexpr std::uint64_t kPrime = 1099511628211ULL;
  std::uint64_t h = kOffset;
  bool in_token = false;
  bool any = false;
  auto flush = [&]() {
    if (in_token) {
      const std::size_t bucket = h & (F - 1);
      const double sign = (h >> 63) ? -1.0 : 1.0;
      v[bucket] += sign;
      any = true;
      h = kOffset;
      in_token = false;
    }
  };
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      const unsigned char lower = static_cast<unsigned char>(std::tolower(ch));
      h ^= lower;
      h *= kPrime;
      in_token = true;
    } else {
      flush();
    }
  }
  flush();
  if (!any) {
    return v;
  }
  const double norm = l2_norm(v);
  if (norm > 0.0) {
    for (double& x : v) {
      x /= norm;
    }
  }
  return v;
}

namespace {

Example make_text_example(std::size_t id, std::string text, std::optional<std::size_t> label,
                          const DatasetSpec& spec) {
  Example e;
  e.id = id;
  e.features = featurize(text, spec.feature_dim);
  e.text = std::move(text);
  e.gold_label = label;
  return e;
}

}  // namespace

std::vector<Example> load_jsonl(const std::string& path, const DatasetSpec& spec) {
  spec.validate();
  std::ifstream in(path);
  if (!in) {
    throw IoError("load_jsonl: cannot open " + path);
  }
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("load_jsonl: line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("text") || !j["text"].is_string()) {
      throw ParseError("load_jsonl: line " + std::to_string(lineno) + ": missing \"text\"");
    }
    std::optional<std::size_t> label;
    if (j.contains("label") && !j["label"].is_null()) {
      label = spec.label_index(j["label"].get<std::string>());
    }
    out.push_back(make_text_example(out.size(), j["text"].get<std::string>(), label, spec));
  }
  return out;
}

std::vector<Example> load_features_jsonl(const std::string& path, const DatasetSpec& spec) {
  spec.validate();
  std::ifstream in(path);
  if (!in) {
    throw IoError("load_features_jsonl: cannot open " + path);
  }
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("load_features_jsonl: line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("features") || !j["features"].is_array()) {
      throw ParseError("load_features_jsonl: line " + std::to_string(lineno) +
                       ": missing \"features\"");
    }
    Example e;
    e.id = out.size();
    e.features = j["features"].get<Vec>();
    if (e.features.size() != spec.feature_dim) {
      throw DataError("load_features_jsonl: line " + std::to_string(lineno) + ": expected " +
                      std::to_string(spec.feature_dim) + " features, got " +
                      std::to_string(e.features.size()));
    }
    if (j.contains("label") && !j["label"].is_null()) {
      if (j["label"].is_number_unsigned()) {
        const std::size_t c = j["label"].get<std::size_t>();
        if (c >= spec.num_classes) {
          throw DataError("load_features_jsonl: line " + std::to_string(lineno) +
                          ": label out of range");
        }
        e.gold_label = c;
      } else {
        e.gold_label = spec.label_index(j["label"].get<std::string>());
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

namespace {

// Minimal CSV field splitter with double-quote escaping.
std::vector<std::string> split_csv_line(const std::string& line, std::size_t lineno) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) {
    throw ParseError("load_csv: line " + std::to_string(lineno) + ": unterminated quote");
  }
  fields.push_back(std::move(cur));
  return fields;
}

}  // namespace

std::vector<Example> load_csv(const std::string& path, const DatasetSpec& spec) {
  spec.validate();
  std::ifstream in(path);
  if (!in) {
    throw IoError("load_csv: cannot open " + path);
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("load_csv: empty file");
  }
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
  if (line != "text,label") {
    throw ParseError("load_csv: expected header \"text,label\"");
  }
  std::vector<Example> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    const auto fields = split_csv_line(line, lineno);
    if (fields.size() != 2) {
      throw ParseError("load_csv: line " + std::to_string(lineno) + ": expected 2 fields, got " +
                       std::to_string(fields.size()));
    }
    std::optional<std::size_t> label;
    if (!fields[1].empty()) {
      label = spec.label_index(fields[1]);
    }
    out.push_back(make_text_example(out.size(), fields[0], label, spec));
  }
  return out;
}

std::pair<std::vector<Example>, std::vector<Example>> few_shot_split(
    const std::vector<Example>& pool, std::size_t n_per_class, std::size_t num_classes,
    std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!pool[i].gold_label) {
      continue;
    }
    const std::size_t c = *pool[i].gold_label;
    if (c >= num_classes) {
      throw DataError("few_shot_split: label out of range");
    }
    by_class[c].push_back(i);
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (by_class[c].size() < n_per_class) {
      std::string counts;
      for (std::size_t k = 0; k < num_classes; ++k) {
        counts += (k ? ", " : "") + std::to_string(k) + ":" + std::to_string(by_class[k].size());
      }
      throw DataError("few_shot_split: class " + std::to_string(c) + " has only " +
                      std::to_string(by_class[c].size()) + " examples, need " +
                      std::to_string(n_per_class) + " (per-class counts " + counts + ")");
    }
  }
  std::vector<char> chosen(pool.size(), 0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    Rng rng = Rng::derive(seed, {0xFE57u, c});
    auto& ids = by_class[c];
    // Fisher-Yates, take the first n_per_class
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      const std::size_t j = i + rng.next_index(ids.size() - i);
      std::swap(ids[i], ids[j]);
    }
    for (std::size_t i = 0; i < n_per_class; ++i) {
      chosen[ids[i]] = 1;
    }
  }
  std::vector<Example> labeled, rest;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    (chosen[i] ? labeled : rest).push_back(pool[i]);
  }
  return {std::move(labeled), std::move(rest)};
}

SynthData synth(const SynthSpec& spec) {
  if (spec.classes < 2) {
    throw ConfigError("synth: need at least two classes");
  }
  if (spec.dim < spec.classes) {
    throw ConfigError("synth: dim must be at least the class count");
  }
  if (!(spec.sep > 0.0)) {
    throw ConfigError("synth: sep must be positive");
  }
  if (spec.noise_rate < 0.0 || spec.noise_rate >= 1.0) {
    throw ConfigError("synth: noise_rate must be in [0, 1)");
  }
  SynthData out;
  const double scale = spec.sep / std::sqrt(2.0);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    Vec mean(spec.dim, 0.0);
    mean[c] = scale;
    out.class_means.push_back(std::move(mean));
  }
  const std::size_t n_test = spec.per_class / 5;  // 80/20
  std::size_t next_id = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    Rng rng = Rng::derive(spec.seed, {0x5A17u, c});
    std::vector<Example> points;
    points.reserve(spec.per_class);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      Example e;
      e.features.resize(spec.dim);
      for (std::size_t j = 0; j < spec.dim; ++j) {
        e.features[j] = out.class_means[c][j] + rng.next_gaussian();
      }
      e.gold_label = c;
      points.push_back(std::move(e));
    }
    Rng split_rng = Rng::derive(spec.seed, {0x5917u, c});
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
      const std::size_t j = i + split_rng.next_index(points.size() - i);
      std::swap(points[i], points[j]);
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
      (i < n_test ? out.test : out.train).push_back(std::move(points[i]));
    }
  }
  for (std::size_t i = 0; i < out.train.size(); ++i) {
    out.train[i].id = next_id++;
  }
  for (std::size_t i = 0; i < out.test.size(); ++i) {
    out.test[i].id = next_id++;
  }
  out.noisy_labels.resize(out.train.size());
  Rng noise_rng = Rng::derive(spec.seed, {0x401Eu});
  for (std::size_t i = 0; i < out.train.size(); ++i) {
    std::size_t label = *out.train[i].gold_label;
    if (spec.noise_rate > 0.0 && noise_rng.next_double() < spec.noise_rate) {
      // symmetric: uniform over the other classes
      std::size_t other = noise_rng.next_index(spec.classes - 1);
      if (other >= label) {
        ++other;
      }
      label = other;
    }
    out.noisy_labels[i] = label;
  }
  return out;
}

}  // namespace upet
