#pragma once

#include <cstdint>
#include <vector>

#include "upet/data.hpp"
#include "upet/losses.hpp"
#include "upet/model.hpp"
#include "upet/uncertainty.hpp"

namespace upet {

enum class SelectionMode { Weighted, Random };

struct SelfTrainConfig {
  std::size_t iterations = 5;
  std::size_t teacher_epochs = 100;
  std::size_t student_epochs = 100;
  double alpha = 0.4;          // confidence/certainty balance
  std::size_t mc_samples = 10; // T
  double mc_rate = 0.1;        // dropout rate for the scoring pass
  LossConfig loss;
  PELConfig pel;
  std::size_t hidden_dim = 64;
  double select_fraction = 0.5;  // used when select_count == 0
  std::size_t select_count = 0;
  std::size_t subset_size = 0;   // 0 = use all of D_u
  double lr = 0.05;
  double weight_decay = 0.0;
  std::size_t batch_size = 32;
  std::uint64_t seed = 42;
  bool no_selection = false;     // D_r = D_u', scoring pass skipped
  SelectionMode selection_mode = SelectionMode::Weighted;
  double select_sharpness = 8.0; // exponent on the fused weights in the draw
  bool early_stop = true;        // stop after two consecutive student drops
  std::size_t workers = 1;       // scoring pass only
  double pseudo_noise_rate = 0.0;  // symmetric noise injected into D_r labels

  void validate() const;
};

struct IterationMetrics {
  std::size_t iteration = 0;
  double teacher_acc = 0.0;
  double student_acc = 0.0;
  double macro_f1 = 0.0;
  std::size_t n_selected = 0;
  double mean_s_cf = 0.0;
  double mean_s_ct = 0.0;
  double mean_bald = 0.0;
  double loss_final = 0.0;
};

struct EvalMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

struct RunResult {
  ModelParams teacher;  // final teacher (Algorithm return value)
  std::vector<IterationMetrics> iterations;
  double initial_teacher_acc = 0.0;
  double initial_teacher_f1 = 0.0;
};

EvalMetrics evaluate(const ModelParams& model, const PELConfig& pel,
                     const std::vector<Example>& test);

/// Argmax of the dropout-free teacher distribution, ties to the lowest
/// class index.
void pseudo_annotate(const ModelParams& teacher, const PELConfig& pel,
                     std::vector<Example>& pool);

/// MC-dropout scoring of a pseudo-annotated pool. Each example's stream is
/// derived from (seed_ctx, example id), so worker count cannot change the
/// result.
std::vector<SelectionScores> score_pool(const ModelParams& teacher, const PELConfig& pel,
                                        const std::vector<Example>& pool, std::size_t T,
                                        double rate, double alpha, std::uint64_t seed_ctx,
                                        std::size_t workers);

struct Selection {
  std::vector<std::size_t> reliable;  // indices into the pool (D_r)
  std::vector<std::size_t> hard;      // complement (D_h)
};

/// Weighted draw of n_select pool indices, stratified per predicted class
/// (quota split evenly, remainder to the largest classes, shortfall
/// resampled globally). The draw uses weight^sharpness: normalized fused
/// scores cluster tightly once the teacher is confident, so raising them to
/// a power restores contrast between reliable and doubtful examples without
/// touching the reported scores. sharpness = 1 samples proportionally.
Selection select_reliable(const std::vector<SelectionScores>& scores, std::size_t n_select,
                          Rng& rng, double sharpness = 1.0);

struct TrainItem {
  const Vec* x;
  std::size_t label;
};

/// Minibatch AdamW over the items for the given epochs. When cfg.lambda > 0
/// and hard pools are provided, anchors are paired per epoch with an easy
/// positive and hard negatives of the same pseudo class. Returns the final
/// epoch's mean loss.
double train_model(ModelParams& params, const PELConfig& pel, bool train_all,
                   const std::vector<TrainItem>& items, const std::vector<TrainItem>& hard_pool,
                   const LossConfig& loss, std::size_t epochs, double lr, double weight_decay,
                   std::size_t batch_size, std::uint64_t seed_ctx);

/// Plain-CE fine-tuning of the teacher over labeled data, everything
/// trainable.
void fine_tune_teacher(ModelParams& teacher, const PELConfig& pel,
                       const std::vector<Example>& labeled, std::size_t epochs, double lr,
                       double weight_decay, std::size_t batch_size, std::uint64_t seed_ctx);

/// The full self-training loop; returns the final teacher and per-iteration
/// metrics.
RunResult run(const SelfTrainConfig& cfg, const std::vector<Example>& labeled,
              const std::vector<Example>& unlabeled, const std::vector<Example>& test);

/// Vanilla self-training reference: pseudo-label everything, train the
/// student with plain CE, no scoring, no regularizer. Kept as a separate
/// straight-line loop so ablation flags can be checked against it.
RunResult run_vanilla_baseline(const SelfTrainConfig& cfg, const std::vector<Example>& labeled,
                               const std::vector<Example>& unlabeled,
                               const std::vector<Example>& test);

}  // namespace upet
