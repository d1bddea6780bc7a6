#pragma once

#include <cstddef>
#include <vector>

#include "upet/numeric.hpp"

namespace upet {

enum class LossKind { CE, PHCE };
enum class ContrastiveForm { NegLog, LiteralPaper };

struct LossConfig {
  LossKind kind = LossKind::PHCE;
  double tau = 10.0;    // PHCE knee at p = 1/tau; requires tau > 1
  double lambda = 0.1;  // regularizer coefficient
  std::size_t negatives_per_anchor = 4;
  double g_temperature = 1.0;
  ContrastiveForm contrastive_form = ContrastiveForm::NegLog;

  void validate() const;
};

/// Negative log-likelihood of the target-class probability.
double ce(double p);

/// Partially huberised cross-entropy: linear with slope -tau below p = 1/tau,
/// -ln p above. Continuous and C1 at the knee; |d/dp| <= tau everywhere.
double phce(double p, double tau);

/// Analytic derivative of phce w.r.t. p.
double phce_dp(double p, double tau);

/// Derivative of the configured classification loss w.r.t. p.
double loss_dp(double p, const LossConfig& cfg);
double loss_value(double p, const LossConfig& cfg);

/// One anchor's similarity scores, already divided by g_temperature.
struct ContrastiveScores {
  double positive;
  Vec negatives;
};

/// Per-anchor contrastive term from precomputed similarity scores.
/// NegLog: -ln(e^{g+} / (e^{g+} + mean_k e^{g-_k})); LiteralPaper: the ratio
/// itself, as printed.
double contrastive_term(const ContrastiveScores& s, ContrastiveForm form);

struct ContrastiveResult {
  double value = 0.0;       // mean over usable anchors, 0 if none
  std::size_t anchors = 0;  // usable anchors
  std::size_t skipped = 0;  // anchors lacking a positive or negatives
};

/// Mean contrastive regularizer over anchors given hidden representations.
/// Anchors with a null positive or no negatives are skipped and counted.
ContrastiveResult contrastive_reg(const std::vector<const Vec*>& anchors,
                                  const std::vector<const Vec*>& positives,
                                  const std::vector<std::vector<const Vec*>>& negatives,
                                  double g_temperature, ContrastiveForm form);

}  // namespace upet
