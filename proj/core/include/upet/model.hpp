#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "upet/losses.hpp"
#include "upet/numeric.hpp"

namespace upet {

enum class Variant { Full, Adapter, Prefix, Ptuning };
enum class Paradigm { Head, Prompt };

struct PELConfig {
  Variant variant = Variant::Full;
  Paradigm paradigm = Paradigm::Head;
  std::size_t adapter_dim = 8;        // m (Adapter)
  std::size_t prefix_len = 4;         // I (Prefix)
  std::size_t pseudo_token_count = 4; // I (Ptuning)
  double dropout_rate = 0.1;
  double verbalizer_temp = 1.0;

  void validate(std::size_t hidden_dim) const;
  bool uses_adapter() const { return variant == Variant::Adapter; }
  bool uses_prefix() const { return variant == Variant::Prefix; }
  bool uses_ptuning() const { return variant == Variant::Ptuning; }
};

/// All parameter arrays. Blocks not used by the configured variant are
/// zero-sized. The same struct shape carries gradients and optimizer moments.
struct Tensors {
  Mat backbone_w;     // d x F
  Vec backbone_b;     // d
  Mat adapter_down_w; // m x d
  Vec adapter_down_b; // m
  Mat adapter_up_w;   // d x m
  Vec adapter_up_b;   // d
  Mat prefix;         // I x d
  Mat pseudo_tokens;  // I x F
  Mat cls_w;          // C x d
  Vec cls_b;          // C
  Mat label_emb;      // C x d, frozen verbalizer prototypes

  bool operator==(const Tensors&) const = default;
};

struct ModelParams : Tensors {
  std::size_t feature_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 0;
  std::uint64_t init_seed = 0;
};

using Gradients = Tensors;

struct TensorRef {
  const char* name;
  double* data;
  std::size_t n;
  bool trainable;
};

/// Flat views over every tensor, in a fixed traversal order, with the
/// trainability mask implied by the PEL config. train_all marks every
/// forward-path parameter trainable (teacher fine-tuning); label_emb is
/// never trainable.
std::vector<TensorRef> tensor_refs(Tensors& t, const PELConfig& pel, bool train_all);

Gradients zero_like(const ModelParams& p);

using DropoutMask = std::vector<std::uint8_t>;  // 1 = keep

DropoutMask draw_dropout_mask(std::size_t d, double rate, Rng& rng);

/// Backbone weights N(0, 1/sqrt(F)), fixed thereafter as the shared starting
/// point for teacher and student. Adapter up-projection starts at zero so a
/// fresh adapter is an identity residual; other tunable blocks N(0, 0.02).
ModelParams init_model(const PELConfig& pel, std::size_t F, std::size_t d, std::size_t C,
                       Rng& rng);

/// Redraws only the variant-specific blocks (adapter/prefix/pseudo tokens);
/// everything else keeps its current values.
void reinit_pel_blocks(ModelParams& params, const PELConfig& pel, Rng& rng);

/// Prompt-paradigm verbalizer analog: label_emb row c becomes the mean
/// dropout-free hidden vector of class-c examples. Frozen afterwards.
void set_label_prototypes(ModelParams& params, const PELConfig& pel,
                          const std::vector<const Vec*>& features,
                          const std::vector<std::size_t>& labels);

/// Everything the backward pass needs from one forward evaluation.
struct ForwardCache {
  Vec x_eff;      // F, input after the pseudo-token shift
  Vec pre;        // d, backbone pre-activation
  Vec h;          // d, tanh output
  Vec attn_s;     // I, prefix scores
  Vec attn_a;     // I, prefix softmax
  Vec h_prefix;   // d
  Vec adapt_pre;  // m
  Vec adapt_act;  // m
  Vec h_adapt;    // d
  Vec hidden;     // d, after dropout
  const DropoutMask* mask = nullptr;
  double keep_scale = 1.0;
  Vec logits;     // C
  Vec probs;      // C
};

ForwardCache forward(const ModelParams& p, const PELConfig& pel, const Vec& x,
                     const DropoutMask* mask);

/// Dropout-free hidden representation.
Vec hidden(const ModelParams& p, const PELConfig& pel, const Vec& x,
           const DropoutMask* mask = nullptr);

/// Inference distribution; never consults any Rng (no dropout).
Vec predict_proba(const ModelParams& p, const PELConfig& pel, const Vec& x);

std::size_t predict_class(const ModelParams& p, const PELConfig& pel, const Vec& x);

std::size_t trainable_param_count(const PELConfig& pel, std::size_t F, std::size_t d,
                                  std::size_t C);

struct BatchItem {
  const Vec* x;
  std::size_t label;
  const DropoutMask* mask = nullptr;
};

/// One anchor with its positive and hard negatives, as raw feature vectors;
/// hidden representations are recomputed dropout-free inside the loss.
struct ContrastItem {
  const Vec* anchor;
  const Vec* positive;
  std::vector<const Vec*> negatives;
};

/// Loss value of the combined objective: mean classification loss over the
/// batch plus lambda times the mean contrastive term over usable anchors.
double batch_loss(const ModelParams& p, const PELConfig& pel, std::span<const BatchItem> batch,
                  std::span<const ContrastItem> contrast, const LossConfig& cfg);

/// Exact gradients of the combined objective for the trainable parameters
/// (frozen entries stay zero). Returns the loss value. Deterministic given
/// the dropout masks carried by the batch.
double grad(const ModelParams& p, const PELConfig& pel, bool train_all,
            std::span<const BatchItem> batch, std::span<const ContrastItem> contrast,
            const LossConfig& cfg, Gradients& out);

struct OptState {
  Tensors m;
  Tensors v;
  std::size_t step = 0;
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

OptState make_opt_state(const ModelParams& p, double lr, double weight_decay);

/// Decoupled-weight-decay Adam update with bias correction, applied to the
/// trainable subset only.
void adamw_step(ModelParams& p, const PELConfig& pel, bool train_all, OptState& opt,
                const Gradients& g);

}  // namespace upet
