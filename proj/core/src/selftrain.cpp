#include "upet/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace upet {

namespace {

// Stream tags for the per-site seed derivation.
constexpr std::uint64_t kTagInit = 0;
constexpr std::uint64_t kTagTeacher = 10;
constexpr std::uint64_t kTagSubset = 20;
constexpr std::uint64_t kTagScore = 30;
constexpr std::uint64_t kTagSelect = 40;
constexpr std::uint64_t kTagNoise = 45;
constexpr std::uint64_t kTagStudentInit = 50;
constexpr std::uint64_t kTagStudentTrain = 60;

std::uint64_t subseed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return Rng::derive(seed, {a, b}).next_u64();
}

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
    const std::size_t j = i + rng.next_index(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
}

std::size_t infer_num_classes(const std::vector<Example>& labeled,
                              const std::vector<Example>& test) {
  std::size_t c = 0;
  for (const Example& e : labeled) {
    if (e.gold_label) {
      c = std::max(c, *e.gold_label + 1);
    }
  }
  for (const Example& e : test) {
    if (e.gold_label) {
      c = std::max(c, *e.gold_label + 1);
    }
  }
  if (c < 2) {
    throw DataError("self-training: could not infer at least two classes");
  }
  return c;
}

}  // namespace

void SelfTrainConfig::validate() const {
  if (select_count == 0 && !(select_fraction > 0.0 && select_fraction <= 1.0)) {
    throw ConfigError("self-training: select_fraction must be in (0, 1]");
  }
  if (mc_samples < 1) {
    throw ConfigError("self-training: mc_samples must be at least 1");
  }
  if (alpha < 0.0 || alpha > 1.0) {
    throw ConfigError("self-training: alpha must be in [0, 1]");
  }
  if (batch_size < 1) {
    throw ConfigError("self-training: batch_size must be at least 1");
  }
  if (workers < 1) {
    throw ConfigError("self-training: workers must be at least 1");
  }
  if (!(select_sharpness > 0.0)) {
    throw ConfigError("self-training: select_sharpness must be positive");
  }
  if (pseudo_noise_rate < 0.0 || pseudo_noise_rate >= 1.0) {
    throw ConfigError("self-training: pseudo_noise_rate must be in [0, 1)");
  }
  loss.validate();
}

EvalMetrics evaluate(const ModelParams& model, const PELConfig& pel,
                     const std::vector<Example>& test) {
  if (test.empty()) {
    throw DataError("evaluate: empty test set");
  }
  const std::size_t C = model.num_classes;
  std::vector<std::size_t> tp(C, 0), fp(C, 0), fn(C, 0);
  std::size_t correct = 0;
  for (const Example& e : test) {
    if (!e.gold_label) {
      throw DataError("evaluate: example " + std::to_string(e.id) + " has no gold label");
    }
    const std::size_t gold = *e.gold_label;
    const std::size_t pred = predict_class(model, pel, e.features);
    if (pred == gold) {
      ++correct;
      ++tp[gold];
    } else {
      ++fp[pred];
      ++fn[gold];
    }
  }
  EvalMetrics m;
  m.accuracy = double(correct) / double(test.size());
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    f1_sum += denom == 0 ? 0.0 : 2.0 * double(tp[c]) / double(denom);
  }
  m.macro_f1 = f1_sum / double(C);
  return m;
}

void pseudo_annotate(const ModelParams& teacher, const PELConfig& pel,
                     std::vector<Example>& pool) {
  for (Example& e : pool) {
    e.pseudo_label = predict_class(teacher, pel, e.features);
  }
}

std::vector<SelectionScores> score_pool(const ModelParams& teacher, const PELConfig& pel,
                                        const std::vector<Example>& pool, std::size_t T,
                                        double rate, double alpha, std::uint64_t seed_ctx,
                                        std::size_t workers) {
  std::vector<SelectionScores> scores(pool.size());
  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Example& e = pool[i];
      if (!e.pseudo_label) {
        throw ProcedureError("score_pool: example without pseudo label");
      }
      Rng rng = Rng::derive(seed_ctx, {e.id});
      const MCPosterior mc = mc_posterior(teacher, pel, e.features, T, rate, rng);
      SelectionScores s;
      s.id = e.id;
      s.pseudo_label = *e.pseudo_label;
      s.bald_raw = bald(mc);
      s.certainty = certainty_score(mc, teacher.num_classes);
      s.confidence = confidence_score(mc, *e.pseudo_label);
      scores[i] = s;
    }
  };
  const std::size_t n = pool.size();
  const std::size_t w = std::min(workers, std::max<std::size_t>(n, 1));
  if (w <= 1) {
    worker(0, n);
  } else {
    std::vector<std::thread> threads;
    const std::size_t chunk = (n + w - 1) / w;
    for (std::size_t t = 0; t < w; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(n, b + chunk);
      if (b < e) {
        threads.emplace_back(worker, b, e);
      }
    }
    for (auto& th : threads) {
      th.join();
    }
  }
  std::vector<std::pair<double, double>> cf_ct;
  cf_ct.reserve(n);
  for (const SelectionScores& s : scores) {
    cf_ct.emplace_back(s.confidence, s.certainty);
  }
  const Vec w_norm = sampling_weights(cf_ct, alpha);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i].weight = w_norm[i];
  }
  return scores;
}

Selection select_reliable(const std::vector<SelectionScores>& scores, std::size_t n_select,
                          Rng& rng, double sharpness) {
  const std::size_t n = scores.size();
  if (n_select > n) {
    throw SelectionError("select_reliable: n_select exceeds pool size");
  }
  if (!(sharpness > 0.0)) {
    throw ConfigError("select_reliable: sharpness must be positive");
  }
  // Sharpened draw weight, scaled by the local maximum so the power cannot
  // underflow for realistic score spreads.
  auto draw_weight = [sharpness](double w, double max_w) {
    return std::max(std::pow(w / max_w, sharpness), 1e-12);
  };
  std::vector<char> picked(n, 0);
  if (n_select > 0) {
    // group pool indices by predicted class
    std::size_t max_class = 0;
    for (const SelectionScores& s : scores) {
      max_class = std::max(max_class, s.pseudo_label);
    }
    std::vector<std::vector<std::size_t>> by_class(max_class + 1);
    for (std::size_t i = 0; i < n; ++i) {
      by_class[scores[i].pseudo_label].push_back(i);
    }
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      if (!by_class[c].empty()) {
        present.push_back(c);
      }
    }
    const std::size_t k = present.size();
    std::vector<std::size_t> quota(by_class.size(), 0);
    const std::size_t base = n_select / k;
    std::size_t rem = n_select % k;
    for (std::size_t c : present) {
      quota[c] = base;
    }
    // remainder goes to the largest class pools
    std::vector<std::size_t> by_size = present;
    std::stable_sort(by_size.begin(), by_size.end(), [&](std::size_t a, std::size_t b) {
      return by_class[a].size() > by_class[b].size();
    });
    for (std::size_t i = 0; i < rem; ++i) {
      ++quota[by_size[i % k]];
    }

    std::size_t taken = 0;
    for (std::size_t c : present) {
      const auto& ids = by_class[c];
      Vec w(ids.size());
      double max_w = 0.0;
      std::size_t positive = 0;
      for (std::size_t j = 0; j < ids.size(); ++j) {
        const double raw = scores[ids[j]].weight;
        max_w = std::max(max_w, raw);
        if (raw > 0.0) {
          ++positive;
        }
      }
      for (std::size_t j = 0; j < ids.size(); ++j) {
        const double raw = scores[ids[j]].weight;
        w[j] = raw > 0.0 ? draw_weight(raw, max_w) : 0.0;
      }
      const std::size_t take = std::min(quota[c], positive);
      if (take == 0) {
        continue;
      }
      for (std::size_t j : weighted_sample_without_replacement(w, take, rng)) {
        picked[ids[j]] = 1;
      }
      taken += take;
    }
    // shortfall: global weighted draw over the remaining positive weights
    if (taken < n_select) {
      Vec w(n, 0.0);
      double max_w = 0.0;
      std::size_t positive = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!picked[i] && scores[i].weight > 0.0) {
          max_w = std::max(max_w, scores[i].weight);
          ++positive;
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (!picked[i] && scores[i].weight > 0.0) {
          w[i] = draw_weight(scores[i].weight, max_w);
        }
      }
      const std::size_t need = n_select - taken;
      if (positive < need) {
        throw SelectionError("select_reliable: pool degenerate, only " +
                             std::to_string(taken + positive) + " selectable of " +
                             std::to_string(n_select));
      }
      for (std::size_t i : weighted_sample_without_replacement(w, need, rng)) {
        picked[i] = 1;
      }
    }
  }
  Selection sel;
  for (std::size_t i = 0; i < n; ++i) {
    (picked[i] ? sel.reliable : sel.hard).push_back(i);
  }
  return sel;
}

double train_model(ModelParams& params, const PELConfig& pel, bool train_all,
                   const std::vector<TrainItem>& items, const std::vector<TrainItem>& hard_pool,
                   const LossConfig& loss, std::size_t epochs, double lr, double weight_decay,
                   std::size_t batch_size, std::uint64_t seed_ctx) {
  if (items.empty()) {
    throw ProcedureError("train_model: empty training set");
  }
  loss.validate();
  const std::size_t n = items.size();
  const std::size_t C = params.num_classes;

  std::vector<std::vector<std::size_t>> easy_by_class(C), hard_by_class(C);
  const bool contrastive = loss.lambda > 0.0 && !hard_pool.empty();
  if (contrastive) {
    for (std::size_t i = 0; i < n; ++i) {
      easy_by_class[items[i].label].push_back(i);
    }
    for (std::size_t i = 0; i < hard_pool.size(); ++i) {
      hard_by_class[hard_pool[i].label].push_back(i);
    }
  }

  OptState opt = make_opt_state(params, lr, weight_decay);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    order[i] = i;
  }

  double epoch_loss = 0.0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    Rng shuffle_rng = Rng::derive(seed_ctx, {1, epoch});
    shuffle_indices(order, shuffle_rng);
    Rng mask_rng = Rng::derive(seed_ctx, {2, epoch});

    // positives and negatives resampled every epoch
    std::vector<std::size_t> pos_of(n, n);  // n = none
    std::vector<std::vector<std::size_t>> negs_of;
    if (contrastive) {
      negs_of.assign(n, {});
      Rng pair_rng = Rng::derive(seed_ctx, {3, epoch});
      for (std::size_t i = 0; i < n; ++i) {
        const auto& easy = easy_by_class[items[i].label];
        if (easy.size() > 1) {
          // uniform over the class pool minus the anchor itself
          std::size_t j = pair_rng.next_index(easy.size() - 1);
          std::size_t self_pos = 0;
          while (easy[self_pos] != i) {
            ++self_pos;
          }
          if (j >= self_pos) {
            ++j;
          }
          pos_of[i] = easy[j];
        }
        const auto& hard = hard_by_class[items[i].label];
        if (!hard.empty()) {
          negs_of[i].reserve(loss.negatives_per_anchor);
          for (std::size_t k = 0; k < loss.negatives_per_anchor; ++k) {
            negs_of[i].push_back(hard[pair_rng.next_index(hard.size())]);
          }
        }
      }
    }

    epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t end = std::min(n, start + batch_size);
      std::vector<DropoutMask> masks;
      std::vector<BatchItem> batch;
      batch.reserve(end - start);
      if (pel.dropout_rate > 0.0) {
        masks.reserve(end - start);
        for (std::size_t bi = start; bi < end; ++bi) {
          masks.push_back(draw_dropout_mask(params.hidden_dim, pel.dropout_rate, mask_rng));
        }
      }
      for (std::size_t bi = start; bi < end; ++bi) {
        const TrainItem& it = items[order[bi]];
        batch.push_back(
            {it.x, it.label, masks.empty() ? nullptr : &masks[bi - start]});
      }
      std::vector<ContrastItem> contrast;
      if (contrastive) {
        for (std::size_t bi = start; bi < end; ++bi) {
          const std::size_t i = order[bi];
          ContrastItem c;
          c.anchor = items[i].x;
          c.positive = pos_of[i] < n ? items[pos_of[i]].x : nullptr;
          for (std::size_t hp : negs_of[i]) {
            c.negatives.push_back(hard_pool[hp].x);
          }
          contrast.push_back(std::move(c));
        }
      }
      Gradients g;
      const double l = grad(params, pel, train_all, batch, contrast, loss, g);
      adamw_step(params, pel, train_all, opt, g);
      epoch_loss += l * double(end - start);
    }
    epoch_loss /= double(n);
  }
  return epochs == 0 ? 0.0 : epoch_loss;
}

void fine_tune_teacher(ModelParams& teacher, const PELConfig& pel,
                       const std::vector<Example>& labeled, std::size_t epochs, double lr,
                       double weight_decay, std::size_t batch_size, std::uint64_t seed_ctx) {
  if (labeled.empty()) {
    throw DataError("fine_tune_teacher: empty labeled set");
  }
  std::vector<char> seen(teacher.num_classes, 0);
  std::vector<TrainItem> items;
  items.reserve(labeled.size());
  for (const Example& e : labeled) {
    if (!e.gold_label) {
      throw DataError("fine_tune_teacher: unlabeled example in the labeled set");
    }
    seen[*e.gold_label] = 1;
    items.push_back({&e.features, *e.gold_label});
  }
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) {
      throw DataError("fine_tune_teacher: class " + std::to_string(c) +
                      " absent from the labeled set");
    }
  }
  LossConfig ce_cfg;
  ce_cfg.kind = LossKind::CE;
  ce_cfg.lambda = 0.0;
  train_model(teacher, pel, /*train_all=*/true, items, {}, ce_cfg, epochs, lr, weight_decay,
              batch_size, seed_ctx);
}

namespace {

struct LoopHooks {
  bool upet_features;  // scoring, selection, configured loss, regularizer
};

RunResult run_loop(const SelfTrainConfig& cfg, const std::vector<Example>& labeled,
                   const std::vector<Example>& unlabeled, const std::vector<Example>& test,
                   const LoopHooks& hooks) {
  cfg.validate();
  if (labeled.empty()) {
    throw DataError("self-training: empty labeled set");
  }
  const std::size_t C = infer_num_classes(labeled, test);
  const std::size_t F = labeled.front().features.size();
  const std::size_t d = cfg.hidden_dim;

  LossConfig student_loss = cfg.loss;
  if (!hooks.upet_features) {
    student_loss.kind = LossKind::CE;
    student_loss.lambda = 0.0;
  }

  Rng init_rng = Rng::derive(cfg.seed, {kTagInit});
  ModelParams w0 = init_model(cfg.pel, F, d, C, init_rng);
  if (cfg.pel.paradigm == Paradigm::Prompt) {
    std::vector<const Vec*> feats;
    std::vector<std::size_t> labels;
    for (const Example& e : labeled) {
      feats.push_back(&e.features);
      labels.push_back(*e.gold_label);
    }
    set_label_prototypes(w0, cfg.pel, feats, labels);
  }

  RunResult res;
  ModelParams teacher = w0;
  fine_tune_teacher(teacher, cfg.pel, labeled, cfg.teacher_epochs, cfg.lr, cfg.weight_decay,
                    cfg.batch_size, subseed(cfg.seed, kTagTeacher));
  {
    const EvalMetrics m0 = evaluate(teacher, cfg.pel, test);
    res.initial_teacher_acc = m0.accuracy;
    res.initial_teacher_f1 = m0.macro_f1;
  }

  double prev_student_acc = -1.0;
  std::size_t drops = 0;
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    std::vector<Example> pool;
    if (cfg.subset_size > 0 && cfg.subset_size < unlabeled.size()) {
      std::vector<std::size_t> idx(unlabeled.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
      }
      Rng sub_rng = Rng::derive(cfg.seed, {kTagSubset, it});
      shuffle_indices(idx, sub_rng);
      idx.resize(cfg.subset_size);
      std::sort(idx.begin(), idx.end());
      for (std::size_t i : idx) {
        pool.push_back(unlabeled[i]);
      }
    } else {
      pool = unlabeled;
    }
    if (pool.empty()) {
      throw DataError("self-training: empty unlabeled pool");
    }
    pseudo_annotate(teacher, cfg.pel, pool);

    Selection sel;
    std::vector<SelectionScores> scores;
    const bool select = hooks.upet_features && !cfg.no_selection;
    if (select) {
      scores = score_pool(teacher, cfg.pel, pool, cfg.mc_samples, cfg.mc_rate, cfg.alpha,
                          subseed(cfg.seed, kTagScore, it), cfg.workers);
      if (cfg.selection_mode == SelectionMode::Random) {
        for (SelectionScores& s : scores) {
          s.weight = 1.0 / double(scores.size());
        }
      }
      std::size_t n_sel = cfg.select_count > 0
                              ? std::min(cfg.select_count, pool.size())
                              : std::size_t(std::lround(cfg.select_fraction * double(pool.size())));
      n_sel = std::max<std::size_t>(1, std::min(n_sel, pool.size()));
      Rng sel_rng = Rng::derive(cfg.seed, {kTagSelect, it});
      sel = select_reliable(scores, n_sel, sel_rng, cfg.select_sharpness);
      for (std::size_t i : sel.reliable) {
        scores[i].selected = true;
      }
      for (std::size_t i = 0; i < pool.size(); ++i) {
        pool[i].scores = scores[i];
      }
    } else {
      for (std::size_t i = 0; i < pool.size(); ++i) {
        sel.reliable.push_back(i);
      }
    }
    if (sel.reliable.empty()) {
      throw ProcedureError("self-training: empty reliable set");
    }

    std::vector<std::size_t> dr_labels;
    dr_labels.reserve(sel.reliable.size());
    for (std::size_t i : sel.reliable) {
      dr_labels.push_back(*pool[i].pseudo_label);
    }
    if (cfg.pseudo_noise_rate > 0.0) {
      Rng noise_rng = Rng::derive(cfg.seed, {kTagNoise, it});
      for (std::size_t& label : dr_labels) {
        if (noise_rng.next_double() < cfg.pseudo_noise_rate) {
          std::size_t other = noise_rng.next_index(C - 1);
          if (other >= label) {
            ++other;
          }
          label = other;
        }
      }
    }
    std::vector<TrainItem> dr_items, dh_items;
    for (std::size_t k = 0; k < sel.reliable.size(); ++k) {
      dr_items.push_back({&pool[sel.reliable[k]].features, dr_labels[k]});
    }
    for (std::size_t i : sel.hard) {
      dh_items.push_back({&pool[i].features, *pool[i].pseudo_label});
    }

    ModelParams student = w0;
    Rng stud_rng = Rng::derive(cfg.seed, {kTagStudentInit, it});
    reinit_pel_blocks(student, cfg.pel, stud_rng);
    const double loss_final = train_model(
        student, cfg.pel, /*train_all=*/false, dr_items, dh_items, student_loss,
        cfg.student_epochs, cfg.lr, cfg.weight_decay, cfg.batch_size,
        subseed(cfg.seed, kTagStudentTrain, it));

    const EvalMetrics tm = evaluate(teacher, cfg.pel, test);
    const EvalMetrics sm = evaluate(student, cfg.pel, test);

    IterationMetrics row;
    row.iteration = it;
    row.teacher_acc = tm.accuracy;
    row.student_acc = sm.accuracy;
    row.macro_f1 = sm.macro_f1;
    row.n_selected = sel.reliable.size();
    if (select) {
      double cf = 0.0, ct = 0.0, b = 0.0;
      for (std::size_t i : sel.reliable) {
        cf += scores[i].confidence;
        ct += scores[i].certainty;
        b += scores[i].bald_raw;
      }
      const double inv = 1.0 / double(sel.reliable.size());
      row.mean_s_cf = cf * inv;
      row.mean_s_ct = ct * inv;
      row.mean_bald = b * inv;
    }
    row.loss_final = loss_final;
    res.iterations.push_back(row);

    if (prev_student_acc >= 0.0 && sm.accuracy < prev_student_acc) {
      ++drops;
    } else {
      drops = 0;
    }
    prev_student_acc = sm.accuracy;

    teacher = student;  // promotion copies everything, frozen blocks included
    if (cfg.early_stop && drops >= 2) {
      break;
    }
  }
  res.teacher = std::move(teacher);
  return res;
}

}  // namespace

RunResult run(const SelfTrainConfig& cfg, const std::vector<Example>& labeled,
              const std::vector<Example>& unlabeled, const std::vector<Example>& test) {
  return run_loop(cfg, labeled, unlabeled, test, {/*upet_features=*/true});
}

RunResult run_vanilla_baseline(const SelfTrainConfig& cfg, const std::vector<Example>& labeled,
                               const std::vector<Example>& unlabeled,
                               const std::vector<Example>& test) {
  return run_loop(cfg, labeled, unlabeled, test, {/*upet_features=*/false});
}

}  // namespace upet
