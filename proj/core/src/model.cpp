#include "upet/model.hpp"

#include <cmath>
#include <string>

namespace upet {

namespace {

void matvec(const Mat& w, const Vec& x, Vec& out) {
  out.assign(w.rows, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* row = w.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < w.cols; ++c) {
      s += row[c] * x[c];
    }
    out[r] = s;
  }
}

// out += w^T g
void matvec_t_acc(const Mat& w, const Vec& g, Vec& out) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* row = w.row(r);
    const double gr = g[r];
    for (std::size_t c = 0; c < w.cols; ++c) {
      out[c] += row[c] * gr;
    }
  }
}

// w += outer(a, b)
void outer_acc(Mat& w, const Vec& a, const Vec& b) {
  for (std::size_t r = 0; r < w.rows; ++r) {
    double* row = w.row(r);
    const double ar = a[r];
    for (std::size_t c = 0; c < w.cols; ++c) {
      row[c] += ar * b[c];
    }
  }
}

void axpy(double alpha, const Vec& x, Vec& y) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] += alpha * x[i];
  }
}

void fill_gaussian(double* data, std::size_t n, double std, Rng& rng) {
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = std * rng.next_gaussian();
  }
}

}  // namespace

void PELConfig::validate(std::size_t hidden_dim) const {
  if (variant == Variant::Adapter) {
    if (adapter_dim < 1 || adapter_dim > hidden_dim) {
      throw ConfigError("pel: adapter bottleneck must satisfy 1 <= m <= d");
    }
  }
  if (variant == Variant::Prefix && prefix_len < 1) {
    throw ConfigError("pel: prefix length must be at least 1");
  }
  if (variant == Variant::Ptuning && pseudo_token_count < 1) {
    throw ConfigError("pel: pseudo token count must be at least 1");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("pel: dropout rate must be in [0, 1)");
  }
  if (verbalizer_temp <= 0.0) {
    throw ConfigError("pel: verbalizer temperature must be positive");
  }
}

std::vector<TensorRef> tensor_refs(Tensors& t, const PELConfig& pel, bool train_all) {
  const bool backbone = train_all || pel.variant == Variant::Full;
  const bool head = pel.paradigm == Paradigm::Head;
  std::vector<TensorRef> refs;
  refs.reserve(11);
  refs.push_back({"backbone_w", t.backbone_w.a.data(), t.backbone_w.size(), backbone});
  refs.push_back({"backbone_b", t.backbone_b.data(), t.backbone_b.size(), backbone});
  refs.push_back({"adapter_down_w", t.adapter_down_w.a.data(), t.adapter_down_w.size(),
                  pel.uses_adapter()});
  refs.push_back({"adapter_down_b", t.adapter_down_b.data(), t.adapter_down_b.size(),
                  pel.uses_adapter()});
  refs.push_back({"adapter_up_w", t.adapter_up_w.a.data(), t.adapter_up_w.size(),
                  pel.uses_adapter()});
  refs.push_back({"adapter_up_b", t.adapter_up_b.data(), t.adapter_up_b.size(),
                  pel.uses_adapter()});
  refs.push_back({"prefix", t.prefix.a.data(), t.prefix.size(), pel.uses_prefix()});
  refs.push_back({"pseudo_tokens", t.pseudo_tokens.a.data(), t.pseudo_tokens.size(),
                  pel.uses_ptuning()});
  refs.push_back({"cls_w", t.cls_w.a.data(), t.cls_w.size(), head});
  refs.push_back({"cls_b", t.cls_b.data(), t.cls_b.size(), head});
  refs.push_back({"label_emb", t.label_emb.a.data(), t.label_emb.size(), false});
  return refs;
}

Gradients zero_like(const ModelParams& p) {
  Gradients g;
  g.backbone_w = Mat(p.backbone_w.rows, p.backbone_w.cols);
  g.backbone_b.assign(p.backbone_b.size(), 0.0);
  g.adapter_down_w = Mat(p.adapter_down_w.rows, p.adapter_down_w.cols);
  g.adapter_down_b.assign(p.adapter_down_b.size(), 0.0);
  g.adapter_up_w = Mat(p.adapter_up_w.rows, p.adapter_up_w.cols);
  g.adapter_up_b.assign(p.adapter_up_b.size(), 0.0);
  g.prefix = Mat(p.prefix.rows, p.prefix.cols);
  g.pseudo_tokens = Mat(p.pseudo_tokens.rows, p.pseudo_tokens.cols);
  g.cls_w = Mat(p.cls_w.rows, p.cls_w.cols);
  g.cls_b.assign(p.cls_b.size(), 0.0);
  g.label_emb = Mat(p.label_emb.rows, p.label_emb.cols);
  return g;
}

DropoutMask draw_dropout_mask(std::size_t d, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must be in [0, 1)");
  }
  DropoutMask mask(d);
  for (std::size_t i = 0; i < d; ++i) {
    mask[i] = rng.next_double() >= rate ? 1 : 0;
  }
  return mask;
}

ModelParams init_model(const PELConfig& pel, std::size_t F, std::size_t d, std::size_t C,
                       Rng& rng) {
  if (F < 1 || d < 1 || C < 1) {
    throw DimensionError("init_model: dimensions must be at least 1");
  }
  pel.validate(d);
  ModelParams p;
  p.feature_dim = F;
  p.hidden_dim = d;
  p.num_classes = C;

  p.backbone_w = Mat(d, F);
  fill_gaussian(p.backbone_w.a.data(), p.backbone_w.size(), 1.0 / std::sqrt(double(F)), rng);
  p.backbone_b.assign(d, 0.0);

  if (pel.uses_adapter()) {
    const std::size_t m = pel.adapter_dim;
    p.adapter_down_w = Mat(m, d);
    fill_gaussian(p.adapter_down_w.a.data(), p.adapter_down_w.size(), 0.02, rng);
    p.adapter_down_b.assign(m, 0.0);
    p.adapter_up_w = Mat(d, m);  // zero: fresh adapter is an identity residual
    p.adapter_up_b.assign(d, 0.0);
  }
  if (pel.uses_prefix()) {
    p.prefix = Mat(pel.prefix_len, d);
    fill_gaussian(p.prefix.a.data(), p.prefix.size(), 0.02, rng);
  }
  if (pel.uses_ptuning()) {
    p.pseudo_tokens = Mat(pel.pseudo_token_count, F);
    fill_gaussian(p.pseudo_tokens.a.data(), p.pseudo_tokens.size(), 0.02, rng);
  }

  p.cls_w = Mat(C, d);
  fill_gaussian(p.cls_w.a.data(), p.cls_w.size(), 0.02, rng);
  p.cls_b.assign(C, 0.0);

  p.label_emb = Mat(C, d);
  fill_gaussian(p.label_emb.a.data(), p.label_emb.size(), 0.02, rng);
  return p;
}

void reinit_pel_blocks(ModelParams& p, const PELConfig& pel, Rng& rng) {
  if (pel.uses_adapter()) {
    fill_gaussian(p.adapter_down_w.a.data(), p.adapter_down_w.size(), 0.02, rng);
    p.adapter_down_b.assign(p.adapter_down_b.size(), 0.0);
    p.adapter_up_w.a.assign(p.adapter_up_w.size(), 0.0);
    p.adapter_up_b.assign(p.adapter_up_b.size(), 0.0);
  } else if (pel.uses_prefix()) {
    fill_gaussian(p.prefix.a.data(), p.prefix.size(), 0.02, rng);
  } else if (pel.uses_ptuning()) {
    fill_gaussian(p.pseudo_tokens.a.data(), p.pseudo_tokens.size(), 0.02, rng);
  }
}

void set_label_prototypes(ModelParams& p, const PELConfig& pel,
                          const std::vector<const Vec*>& features,
                          const std::vector<std::size_t>& labels) {
  const std::size_t C = p.num_classes;
  std::vector<std::size_t> counts(C, 0);
  Mat sums(C, p.hidden_dim);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const std::size_t c = labels[i];
    if (c >= C) {
      throw DataError("label prototypes: label out of range");
    }
    const Vec h = hidden(p, pel, *features[i]);
    for (std::size_t j = 0; j < p.hidden_dim; ++j) {
      sums(c, j) += h[j];
    }
    ++counts[c];
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (counts[c] == 0) {
      throw DataError("label prototypes: class " + std::to_string(c) + " has no examples");
    }
    for (std::size_t j = 0; j < p.hidden_dim; ++j) {
      p.label_emb(c, j) = sums(c, j) / double(counts[c]);
    }
  }
}

ForwardCache forward(const ModelParams& p, const PELConfig& pel, const Vec& x,
                     const DropoutMask* mask) {
  if (x.size() != p.feature_dim) {
    throw DimensionError("forward: input dimension mismatch");
  }
  if (pel.paradigm == Paradigm::Head &&
      (p.cls_w.rows != p.num_classes || p.cls_w.cols != p.hidden_dim)) {
    throw ConfigError("forward: head parameters do not match the configuration");
  }
  if (pel.paradigm == Paradigm::Prompt &&
      (p.label_emb.rows != p.num_classes || p.label_emb.cols != p.hidden_dim)) {
    throw ConfigError("forward: label embeddings do not match the configuration");
  }
  ForwardCache f;

  f.x_eff = x;
  if (pel.uses_ptuning() && p.pseudo_tokens.rows > 0) {
    // mean of pseudo tokens added to the input
    const double inv = 1.0 / double(p.pseudo_tokens.rows);
    for (std::size_t i = 0; i < p.pseudo_tokens.rows; ++i) {
      const double* row = p.pseudo_tokens.row(i);
      for (std::size_t c = 0; c < p.feature_dim; ++c) {
        f.x_eff[c] += inv * row[c];
      }
    }
  }

  matvec(p.backbone_w, f.x_eff, f.pre);
  for (std::size_t i = 0; i < f.pre.size(); ++i) {
    f.pre[i] += p.backbone_b[i];
  }
  f.h.resize(f.pre.size());
  for (std::size_t i = 0; i < f.pre.size(); ++i) {
    f.h[i] = std::tanh(f.pre[i]);
  }

  if (pel.uses_prefix() && p.prefix.rows > 0) {
    matvec(p.prefix, f.h, f.attn_s);
    f.attn_a = softmax(f.attn_s);
    f.h_prefix = f.h;
    for (std::size_t i = 0; i < p.prefix.rows; ++i) {
      const double* row = p.prefix.row(i);
      for (std::size_t c = 0; c < p.hidden_dim; ++c) {
        f.h_prefix[c] += f.attn_a[i] * row[c];
      }
    }
  } else {
    f.h_prefix = f.h;
  }

  if (pel.uses_adapter() && p.adapter_down_w.rows > 0) {
    matvec(p.adapter_down_w, f.h_prefix, f.adapt_pre);
    for (std::size_t i = 0; i < f.adapt_pre.size(); ++i) {
      f.adapt_pre[i] += p.adapter_down_b[i];
    }
    f.adapt_act.resize(f.adapt_pre.size());
    for (std::size_t i = 0; i < f.adapt_pre.size(); ++i) {
      f.adapt_act[i] = f.adapt_pre[i] > 0.0 ? f.adapt_pre[i] : 0.0;
    }
    matvec(p.adapter_up_w, f.adapt_act, f.h_adapt);
    for (std::size_t i = 0; i < f.h_adapt.size(); ++i) {
      f.h_adapt[i] += p.adapter_up_b[i] + f.h_prefix[i];
    }
  } else {
    f.h_adapt = f.h_prefix;
  }

  f.mask = mask;
  if (mask != nullptr) {
    if (mask->size() != p.hidden_dim) {
      throw DimensionError("forward: dropout mask dimension mismatch");
    }
    f.keep_scale = 1.0 / (1.0 - pel.dropout_rate);
    f.hidden.resize(p.hidden_dim);
    for (std::size_t i = 0; i < p.hidden_dim; ++i) {
      f.hidden[i] = (*mask)[i] ? f.h_adapt[i] * f.keep_scale : 0.0;
    }
  } else {
    f.hidden = f.h_adapt;
  }

  if (pel.paradigm == Paradigm::Head) {
    matvec(p.cls_w, f.hidden, f.logits);
    for (std::size_t i = 0; i < f.logits.size(); ++i) {
      f.logits[i] += p.cls_b[i];
    }
  } else {
    matvec(p.label_emb, f.hidden, f.logits);
    for (double& v : f.logits) {
      v /= pel.verbalizer_temp;
    }
  }
  f.probs = softmax(f.logits);
  return f;
}

Vec hidden(const ModelParams& p, const PELConfig& pel, const Vec& x, const DropoutMask* mask) {
  return forward(p, pel, x, mask).hidden;
}

Vec predict_proba(const ModelParams& p, const PELConfig& pel, const Vec& x) {
  return forward(p, pel, x, nullptr).probs;
}

std::size_t predict_class(const ModelParams& p, const PELConfig& pel, const Vec& x) {
  return argmax_lowest(predict_proba(p, pel, x));
}

std::size_t trainable_param_count(const PELConfig& pel, std::size_t F, std::size_t d,
                                  std::size_t C) {
  pel.validate(d);
  const std::size_t head = pel.paradigm == Paradigm::Head ? C * d + C : 0;
  switch (pel.variant) {
    case Variant::Full:
      return F * d + d + head;
    case Variant::Adapter:
      return 2 * pel.adapter_dim * d + d + pel.adapter_dim + head;
    case Variant::Prefix:
      return pel.prefix_len * d + head;
    case Variant::Ptuning:
      return pel.pseudo_token_count * F + head;
  }
  return 0;
}

namespace {

// Backpropagates d(loss)/d(hidden) through the shared pipeline.
void backward_hidden(const ModelParams& p, const PELConfig& pel, const ForwardCache& f,
                     const Vec& grad_hidden, Gradients& g) {
  const std::size_t d = p.hidden_dim;

  Vec gha(d);
  if (f.mask != nullptr) {
    for (std::size_t i = 0; i < d; ++i) {
      gha[i] = (*f.mask)[i] ? grad_hidden[i] * f.keep_scale : 0.0;
    }
  } else {
    gha = grad_hidden;
  }

  Vec ghp;
  if (pel.uses_adapter() && p.adapter_down_w.rows > 0) {
    outer_acc(g.adapter_up_w, gha, f.adapt_act);
    axpy(1.0, gha, g.adapter_up_b);
    Vec gz(f.adapt_act.size(), 0.0);
    matvec_t_acc(p.adapter_up_w, gha, gz);
    for (std::size_t i = 0; i < gz.size(); ++i) {
      if (f.adapt_pre[i] <= 0.0) {
        gz[i] = 0.0;
      }
    }
    outer_acc(g.adapter_down_w, gz, f.h_prefix);
    axpy(1.0, gz, g.adapter_down_b);
    ghp = gha;
    matvec_t_acc(p.adapter_down_w, gz, ghp);
  } else {
    ghp = gha;
  }

  Vec gh;
  if (pel.uses_prefix() && p.prefix.rows > 0) {
    const std::size_t I = p.prefix.rows;
    Vec ga(I), gs(I);
    for (std::size_t i = 0; i < I; ++i) {
      ga[i] = 0.0;
      const double* row = p.prefix.row(i);
      for (std::size_t c = 0; c < d; ++c) {
        ga[i] += ghp[c] * row[c];
      }
    }
    double inner = 0.0;
    for (std::size_t i = 0; i < I; ++i) {
      inner += f.attn_a[i] * ga[i];
    }
    for (std::size_t i = 0; i < I; ++i) {
      gs[i] = f.attn_a[i] * (ga[i] - inner);
    }
    gh = ghp;
    for (std::size_t i = 0; i < I; ++i) {
      double* grow = g.prefix.row(i);
      const double* row = p.prefix.row(i);
      for (std::size_t c = 0; c < d; ++c) {
        grow[c] += f.attn_a[i] * ghp[c] + gs[i] * f.h[c];
        gh[c] += gs[i] * row[c];
      }
    }
  } else {
    gh = ghp;
  }

  Vec gpre(d);
  for (std::size_t i = 0; i < d; ++i) {
    gpre[i] = gh[i] * (1.0 - f.h[i] * f.h[i]);
  }
  outer_acc(g.backbone_w, gpre, f.x_eff);
  axpy(1.0, gpre, g.backbone_b);

  if (pel.uses_ptuning() && p.pseudo_tokens.rows > 0) {
    Vec gx(p.feature_dim, 0.0);
    matvec_t_acc(p.backbone_w, gpre, gx);
    const double inv = 1.0 / double(p.pseudo_tokens.rows);
    for (std::size_t i = 0; i < p.pseudo_tokens.rows; ++i) {
      double* grow = g.pseudo_tokens.row(i);
      for (std::size_t c = 0; c < p.feature_dim; ++c) {
        grow[c] += inv * gx[c];
      }
    }
  }
}

void backward_logits(const ModelParams& p, const PELConfig& pel, const ForwardCache& f,
                     const Vec& dlogits, Gradients& g) {
  Vec gh(p.hidden_dim, 0.0);
  if (pel.paradigm == Paradigm::Head) {
    outer_acc(g.cls_w, dlogits, f.hidden);
    axpy(1.0, dlogits, g.cls_b);
    matvec_t_acc(p.cls_w, dlogits, gh);
  } else {
    matvec_t_acc(p.label_emb, dlogits, gh);
    for (double& v : gh) {
      v /= pel.verbalizer_temp;
    }
  }
  backward_hidden(p, pel, f, gh, g);
}

// d(cosine(a,b))/da accumulated into out with weight w.
void cosine_grad_acc(const Vec& a, const Vec& b, double w, Vec& out) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  const double c = dot(a, b) / (na * nb);
  const double inv = 1.0 / (na * nb);
  const double self = c / (na * na);
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] += w * (b[i] * inv - self * a[i]);
  }
}

struct ContrastGrads {
  double dpos;           // d(term)/d(g+)
  Vec dneg;              // d(term)/d(g-_k)
  double value;
};

ContrastGrads contrast_term_grads(const ContrastiveScores& s, ContrastiveForm form) {
  ContrastGrads out;
  const double ep = std::exp(s.positive);
  const std::size_t n = s.negatives.size();
  Vec en(n);
  double mean_en = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    en[k] = std::exp(s.negatives[k]);
    mean_en += en[k];
  }
  mean_en /= double(n);
  const double denom = ep + mean_en;
  const double ratio = ep / denom;
  out.dneg.resize(n);
  if (form == ContrastiveForm::NegLog) {
    out.value = -std::log(ratio);
    out.dpos = -1.0 + ep / denom;
    for (std::size_t k = 0; k < n; ++k) {
      out.dneg[k] = en[k] / (double(n) * denom);
    }
  } else {
    out.value = ratio;
    out.dpos = ratio * (1.0 - ep / denom);
    for (std::size_t k = 0; k < n; ++k) {
      out.dneg[k] = -ratio * en[k] / (double(n) * denom);
    }
  }
  return out;
}

}  // namespace

double batch_loss(const ModelParams& p, const PELConfig& pel, std::span<const BatchItem> batch,
                  std::span<const ContrastItem> contrast, const LossConfig& cfg) {
  if (batch.empty()) {
    throw DimensionError("batch_loss: empty batch");
  }
  cfg.validate();
  double cls = 0.0;
  for (const BatchItem& item : batch) {
    const ForwardCache f = forward(p, pel, *item.x, item.mask);
    if (item.label >= p.num_classes) {
      throw DataError("batch_loss: label out of range");
    }
    const double py = std::max(f.probs[item.label], kProbFloor);
    cls += loss_value(py, cfg);
  }
  cls /= double(batch.size());
  if (cfg.lambda == 0.0 || contrast.empty()) {
    return cls;
  }
  std::vector<const Vec*> anchors, positives;
  std::vector<std::vector<const Vec*>> negatives;
  std::vector<Vec> storage;
  storage.reserve(contrast.size() * (2 + cfg.negatives_per_anchor));
  // Recompute hidden representations dropout-free, then defer to the
  // straight-line regularizer.
  for (const ContrastItem& it : contrast) {
    storage.push_back(hidden(p, pel, *it.anchor));
    if (it.positive != nullptr) {
      storage.push_back(hidden(p, pel, *it.positive));
    }
    for (const Vec* nx : it.negatives) {
      storage.push_back(hidden(p, pel, *nx));
    }
  }
  std::size_t cursor = 0;
  for (const ContrastItem& it : contrast) {
    anchors.push_back(&storage[cursor++]);
    if (it.positive != nullptr) {
      positives.push_back(&storage[cursor++]);
    } else {
      positives.push_back(nullptr);
    }
    std::vector<const Vec*> negs;
    for (std::size_t k = 0; k < it.negatives.size(); ++k) {
      negs.push_back(&storage[cursor++]);
    }
    negatives.push_back(std::move(negs));
  }
  const ContrastiveResult reg =
      contrastive_reg(anchors, positives, negatives, cfg.g_temperature, cfg.contrastive_form);
  return cls + cfg.lambda * reg.value;
}

double grad(const ModelParams& p, const PELConfig& pel, bool train_all,
            std::span<const BatchItem> batch, std::span<const ContrastItem> contrast,
            const LossConfig& cfg, Gradients& out) {
  if (batch.empty()) {
    throw DimensionError("grad: empty batch");
  }
  cfg.validate();
  out = zero_like(p);
  const std::size_t C = p.num_classes;
  const double inv_b = 1.0 / double(batch.size());

  double cls_loss = 0.0;
  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const BatchItem& item = batch[bi];
    if (item.label >= C) {
      throw DataError("grad: label out of range");
    }
    const ForwardCache f = forward(p, pel, *item.x, item.mask);
    const double py = std::max(f.probs[item.label], kProbFloor);
    const double lv = loss_value(py, cfg);
    if (!std::isfinite(lv)) {
      throw NumericError("grad: non-finite loss at batch index " + std::to_string(bi));
    }
    cls_loss += lv;
    const double dphi = loss_dp(py, cfg) * inv_b;
    Vec dlogits(C);
    const double pyr = f.probs[item.label];
    for (std::size_t j = 0; j < C; ++j) {
      const double delta = j == item.label ? 1.0 : 0.0;
      dlogits[j] = dphi * pyr * (delta - f.probs[j]);
    }
    backward_logits(p, pel, f, dlogits, out);
  }
  cls_loss *= inv_b;

  double reg_value = 0.0;
  if (cfg.lambda > 0.0 && !contrast.empty()) {
    std::vector<const ContrastItem*> usable;
    for (const ContrastItem& it : contrast) {
      if (it.positive != nullptr && !it.negatives.empty()) {
        usable.push_back(&it);
      }
    }
    if (!usable.empty()) {
      const double w_anchor = cfg.lambda / double(usable.size());
      for (const ContrastItem* it : usable) {
        const ForwardCache fa = forward(p, pel, *it->anchor, nullptr);
        const ForwardCache fp = forward(p, pel, *it->positive, nullptr);
        std::vector<ForwardCache> fns;
        fns.reserve(it->negatives.size());
        for (const Vec* nx : it->negatives) {
          fns.push_back(forward(p, pel, *nx, nullptr));
        }
        ContrastiveScores s;
        s.positive = cosine(fa.hidden, fp.hidden) / cfg.g_temperature;
        for (const ForwardCache& fn : fns) {
          s.negatives.push_back(cosine(fa.hidden, fn.hidden) / cfg.g_temperature);
        }
        const ContrastGrads cg = contrast_term_grads(s, cfg.contrastive_form);
        reg_value += cg.value / double(usable.size());

        const double inv_t = 1.0 / cfg.g_temperature;
        Vec ga(p.hidden_dim, 0.0);
        Vec gp(p.hidden_dim, 0.0);
        cosine_grad_acc(fa.hidden, fp.hidden, w_anchor * cg.dpos * inv_t, ga);
        cosine_grad_acc(fp.hidden, fa.hidden, w_anchor * cg.dpos * inv_t, gp);
        backward_hidden(p, pel, fp, gp, out);
        for (std::size_t k = 0; k < fns.size(); ++k) {
          Vec gn(p.hidden_dim, 0.0);
          cosine_grad_acc(fa.hidden, fns[k].hidden, w_anchor * cg.dneg[k] * inv_t, ga);
          cosine_grad_acc(fns[k].hidden, fa.hidden, w_anchor * cg.dneg[k] * inv_t, gn);
          backward_hidden(p, pel, fns[k], gn, out);
        }
        backward_hidden(p, pel, fa, ga, out);
      }
    }
  }

  // Frozen entries carry no gradient.
  for (const TensorRef& r : tensor_refs(out, pel, train_all)) {
    if (!r.trainable) {
      for (std::size_t i = 0; i < r.n; ++i) {
        r.data[i] = 0.0;
      }
    }
  }
  return cls_loss + cfg.lambda * reg_value;
}

OptState make_opt_state(const ModelParams& p, double lr, double weight_decay) {
  OptState opt;
  opt.m = zero_like(p);
  opt.v = zero_like(p);
  opt.lr = lr;
  opt.weight_decay = weight_decay;
  return opt;
}

void adamw_step(ModelParams& p, const PELConfig& pel, bool train_all, OptState& opt,
                const Gradients& g) {
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, double(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, double(opt.step));

  auto pr = tensor_refs(p, pel, train_all);
  auto gr = tensor_refs(const_cast<Gradients&>(g), pel, train_all);
  auto mr = tensor_refs(opt.m, pel, train_all);
  auto vr = tensor_refs(opt.v, pel, train_all);
  for (std::size_t t = 0; t < pr.size(); ++t) {
    if (!pr[t].trainable) {
      continue;
    }
    if (pr[t].n != gr[t].n) {
      throw DimensionError("adamw_step: gradient shape mismatch");
    }
    double* pd = pr[t].data;
    const double* gd = gr[t].data;
    double* md = mr[t].data;
    double* vd = vr[t].data;
    for (std::size_t i = 0; i < pr[t].n; ++i) {
      md[i] = opt.beta1 * md[i] + (1.0 - opt.beta1) * gd[i];
      vd[i] = opt.beta2 * vd[i] + (1.0 - opt.beta2) * gd[i] * gd[i];
      const double mhat = md[i] / bc1;
      const double vhat = vd[i] / bc2;
      pd[i] -= opt.lr * (mhat / (std::sqrt(vhat) + opt.eps) + opt.weight_decay * pd[i]);
    }
  }
}

}  // namespace upet
