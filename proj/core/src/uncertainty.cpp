#include "upet/uncertainty.hpp"

#include <cmath>

namespace upet {

namespace {

bool all_rows_identical(const Mat& m) {
  for (std::size_t r = 1; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (m(r, c) != m(0, c)) {
        return false;
      }
    }
  }
  return true;
}

Vec row_vec(const Mat& m, std::size_t r) {
  return Vec(m.row(r), m.row(r) + m.cols);
}

}  // namespace

MCPosterior mc_posterior(const ModelParams& p, const PELConfig& pel, const Vec& x,
                         std::size_t T, double rate, Rng& rng) {
  if (T < 1) {
    throw ConfigError("mc_posterior: need at least one sample");
  }
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("mc_posterior: rate must be in [0, 1)");
  }
  MCPosterior mc;
  mc.probs = Mat(T, p.num_classes);
  PELConfig mc_pel = pel;
  mc_pel.dropout_rate = rate;
  for (std::size_t t = 0; t < T; ++t) {
    const DropoutMask mask = draw_dropout_mask(p.hidden_dim, rate, rng);
    const ForwardCache f = forward(p, mc_pel, x, &mask);
    for (std::size_t c = 0; c < p.num_classes; ++c) {
      mc.probs(t, c) = f.probs[c];
    }
  }
  return mc;
}

Vec mc_mean(const MCPosterior& mc) {
  if (all_rows_identical(mc.probs)) {
    return row_vec(mc.probs, 0);
  }
  Vec mean(mc.classes(), 0.0);
  for (std::size_t t = 0; t < mc.samples(); ++t) {
    for (std::size_t c = 0; c < mc.classes(); ++c) {
      mean[c] += mc.probs(t, c);
    }
  }
  for (double& v : mean) {
    v /= double(mc.samples());
  }
  return mean;
}

double bald(const MCPosterior& mc) {
  if (mc.samples() < 1) {
    throw std::domain_error("bald: empty posterior");
  }
  for (std::size_t t = 0; t < mc.samples(); ++t) {
    validate_prob_vector(row_vec(mc.probs, t));
  }
  if (all_rows_identical(mc.probs)) {
    return 0.0;
  }
  const double h_mean = entropy(mc_mean(mc));
  double mean_h = 0.0;
  for (std::size_t t = 0; t < mc.samples(); ++t) {
    mean_h += entropy(row_vec(mc.probs, t));
  }
  mean_h /= double(mc.samples());
  return h_mean - mean_h;
}

double certainty_score(const MCPosterior& mc, std::size_t C) {
  if (C < 2) {
    throw ConfigError("certainty_score: need at least two classes");
  }
  const double b = bald(mc);
  const double s = 1.0 - b / std::log(double(C));
  return std::clamp(s, 0.0, 1.0);
}

double confidence_score(const MCPosterior& mc, std::size_t pseudo_label) {
  if (pseudo_label >= mc.classes()) {
    throw std::domain_error("confidence_score: pseudo label out of range");
  }
  double s = 0.0;
  for (std::size_t t = 0; t < mc.samples(); ++t) {
    s += mc.probs(t, pseudo_label);
  }
  return s / double(mc.samples());
}

Vec sampling_weights(const std::vector<std::pair<double, double>>& cf_ct, double alpha) {
  if (cf_ct.empty()) {
    throw SelectionError("sampling_weights: empty pool");
  }
  if (alpha < 0.0 || alpha > 1.0) {
    throw ConfigError("sampling_weights: alpha must be in [0, 1]");
  }
  Vec w(cf_ct.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < cf_ct.size(); ++i) {
    w[i] = alpha * cf_ct[i].first + (1.0 - alpha) * cf_ct[i].second;
    sum += w[i];
  }
  if (sum <= 0.0) {
    throw SelectionError("sampling_weights: all fused scores are zero");
  }
  for (double& v : w) {
    v /= sum;
  }
  return w;
}

}  // namespace upet
