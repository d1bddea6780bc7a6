#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "upet/numeric.hpp"
#include "upet/uncertainty.hpp"

namespace upet {

struct Example {
  std::size_t id = 0;
  std::string text;
  Vec features;
  std::optional<std::size_t> gold_label;
  std::optional<std::size_t> pseudo_label;
  std::optional<SelectionScores> scores;
};

struct DatasetSpec {
  std::size_t num_classes = 2;
  std::vector<std::string> label_names;  // distinct, index = class id
  std::size_t feature_dim = 4096;        // power of two (hashing)

  void validate() const;
  std::size_t label_index(const std::string& name) const;
};

/// JSONL: one object per line, {"text": str, "label": str?}.
std::vector<Example> load_jsonl(const std::string& path, const DatasetSpec& spec);

/// CSV with header row "text,label"; empty label column means unlabeled.
std::vector<Example> load_csv(const std::string& path, const DatasetSpec& spec);

/// JSONL with precomputed features: {"features": [..], "label": str?}.
std::vector<Example> load_features_jsonl(const std::string& path, const DatasetSpec& spec);

/// Signed feature hashing: lowercase, split on non-alphanumerics, FNV-1a 64
/// per token, bucket = hash & (F-1), sign from the top hash bit, then
/// L2-normalize. Empty text maps to the zero vector.
Vec featurize(const std::string& text, std::size_t F);

/// Exactly n_per_class examples per class drawn uniformly without
/// replacement; the remainder keeps its gold labels for diagnostics.
std::pair<std::vector<Example>, std::vector<Example>> few_shot_split(
    const std::vector<Example>& pool, std::size_t n_per_class, std::size_t num_classes,
    std::uint64_t seed);

struct SynthSpec {
  std::size_t classes = 4;
  std::size_t per_class = 500;
  std::size_t dim = 16;   // features used directly, no hashing
  double sep = 3.0;       // pairwise distance between class means
  double noise_rate = 0.0;
  std::uint64_t seed = 0;
};

struct SynthData {
  std::vector<Example> train;
  std::vector<Example> test;
  /// Train labels after symmetric noise; equals the clean labels when
  /// noise_rate = 0.
  std::vector<std::size_t> noisy_labels;
  std::vector<Vec> class_means;
};

/// Gaussian class blobs with unit covariance, means on an orthogonal simplex
/// layout at pairwise distance sep; 80/20 train/test split per class.
SynthData synth(const SynthSpec& spec);

}  // namespace upet
