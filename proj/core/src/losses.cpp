#include "upet/losses.hpp"

#include <cmath>

namespace upet {

void LossConfig::validate() const {
  if (kind == LossKind::PHCE && tau <= 1.0) {
    throw ConfigError("loss: tau must exceed 1");
  }
  if (lambda < 0.0) {
    throw ConfigError("loss: lambda must be nonnegative");
  }
  if (lambda > 0.0 && negatives_per_anchor < 1) {
    throw ConfigError("loss: need at least one negative per anchor when lambda > 0");
  }
  if (g_temperature <= 0.0) {
    throw ConfigError("loss: g_temperature must be positive");
  }
}

double ce(double p) {
  if (!(p > 0.0)) {
    throw std::domain_error("ce: probability must be positive");
  }
  return -std::log(p);
}

double phce(double p, double tau) {
  if (tau <= 1.0) {
    throw ConfigError("phce: tau must exceed 1");
  }
  if (!(p > 0.0)) {
    throw std::domain_error("phce: probability must be positive");
  }
  if (p <= 1.0 / tau) {
    return -tau * p + std::log(tau) + 1.0;
  }
  return -std::log(p);
}

double phce_dp(double p, double tau) {
  if (tau <= 1.0) {
    throw ConfigError("phce: tau must exceed 1");
  }
  if (p <= 1.0 / tau) {
    return -tau;
  }
  return -1.0 / p;
}

double loss_value(double p, const LossConfig& cfg) {
  return cfg.kind == LossKind::CE ? ce(p) : phce(p, cfg.tau);
}

double loss_dp(double p, const LossConfig& cfg) {
  return cfg.kind == LossKind::CE ? -1.0 / p : phce_dp(p, cfg.tau);
}

double contrastive_term(const ContrastiveScores& s, ContrastiveForm form) {
  const double ep = std::exp(s.positive);
  double en = 0.0;
  for (double g : s.negatives) {
    en += std::exp(g);
  }
  en /= static_cast<double>(s.negatives.size());
  const double ratio = ep / (ep + en);
  if (form == ContrastiveForm::LiteralPaper) {
    return ratio;
  }
  return -std::log(ratio);
}

ContrastiveResult contrastive_reg(const std::vector<const Vec*>& anchors,
                                  const std::vector<const Vec*>& positives,
                                  const std::vector<std::vector<const Vec*>>& negatives,
                                  double g_temperature, ContrastiveForm form) {
  if (g_temperature <= 0.0) {
    throw ConfigError("contrastive_reg: g_temperature must be positive");
  }
  ContrastiveResult res;
  double sum = 0.0;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (positives[i] == nullptr || negatives[i].empty()) {
      ++res.skipped;
      continue;
    }
    ContrastiveScores s;
    s.positive = cosine(*anchors[i], *positives[i]) / g_temperature;
    s.negatives.reserve(negatives[i].size());
    for (const Vec* n : negatives[i]) {
      s.negatives.push_back(cosine(*anchors[i], *n) / g_temperature);
    }
    sum += contrastive_term(s, form);
    ++res.anchors;
  }
  if (res.anchors > 0) {
    res.value = sum / static_cast<double>(res.anchors);
  }
  return res;
}

}  // namespace upet
