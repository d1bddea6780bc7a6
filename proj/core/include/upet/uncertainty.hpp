#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "upet/model.hpp"
#include "upet/numeric.hpp"

namespace upet {

/// T per-dropout-sample class distributions for one example; row t is the
/// softmax output of the t-th masked model.
struct MCPosterior {
  Mat probs;  // T x C
  std::size_t samples() const { return probs.rows; }
  std::size_t classes() const { return probs.cols; }
};

struct SelectionScores {
  std::size_t id = 0;
  std::size_t pseudo_label = 0;
  double confidence = 0.0;  // s^cf
  double certainty = 0.0;   // s^ct
  double bald_raw = 0.0;
  double weight = 0.0;      // normalized over the pool
  bool selected = false;
};

/// Draws T dropout masks (one shared mask per forward pass) and runs T
/// stochastic forwards. rate = 0 reproduces the deterministic pass in
/// every row.
MCPosterior mc_posterior(const ModelParams& p, const PELConfig& pel, const Vec& x,
                         std::size_t T, double rate, Rng& rng);

/// Row mean; bit-identical to a single row when all rows are equal.
Vec mc_mean(const MCPosterior& mc);

/// Information-gain estimate: entropy of the row mean minus the mean row
/// entropy. Exactly 0 when all rows are identical.
double bald(const MCPosterior& mc);

/// 1 - bald/ln(C), clamped to [0, 1]. Requires C >= 2.
double certainty_score(const MCPosterior& mc, std::size_t C);

/// Mean probability the masked models assign to the pseudo label.
double confidence_score(const MCPosterior& mc, std::size_t pseudo_label);

/// Fused weights s_i = (a*cf + (1-a)*ct) / sum, over (cf, ct) pairs.
Vec sampling_weights(const std::vector<std::pair<double, double>>& cf_ct, double alpha);

}  // namespace upet
