#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "incline/linalg.hpp"

namespace incline {

// ===== instrumentation sites =====
//
// Every site names one vector in the residual stream at the last prompt
// position: the post-embedding vector, a block's attention output, a block's
// feed-forward output, or the residual stream after a whole block.

enum class SiteKind { Embedding, AttnOutput, FfnOutput, Hidden };

struct SiteId {
  SiteKind kind = SiteKind::Hidden;
  int layer = 0;  // always 0 for Embedding

  auto operator<=>(const SiteId&) const = default;
};

const char* site_kind_name(SiteKind kind);          // "emb" / "attn" / "ffn" / "hidden"
SiteKind parse_site_kind(const std::string& name);  // throws ParseError

// Hidden-state edits are injected through this interface so the model layer
// stays ignorant of what an intervention computes. `count` is false when the
// engine re-derives the same logical intervention while re-processing a
// prefix during decoding; implementations must not tally those passes.
class InterventionHook {
 public:
  virtual ~InterventionHook() = default;
  virtual bool wants(const SiteId& site) const = 0;
  virtual void apply(const SiteId& site, DenseVector& h, bool count) const = 0;
};

// ===== model =====

struct ModelConfig {
  int vocab_size = 96;
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 128;
  int max_seq_len = 32;
  uint64_t seed = 1;
  bool tied = false;  // reuse token embeddings as the output projection
};

struct LayerParams {
  DenseVector ln1_g, ln1_b;
  DenseMatrix wq, wk, wv, wo;  // d x d, applied as row-vector times matrix
  DenseVector bq, bk, bv, bo;
  DenseVector ln2_g, ln2_b;
  DenseMatrix w1;  // d x d_ff
  DenseVector b1;
  DenseMatrix w2;  // d_ff x d
  DenseVector b2;
};

struct ModelParams {
  DenseMatrix tok_emb;  // vocab x d
  DenseMatrix pos_emb;  // max_seq_len x d
  std::vector<LayerParams> layers;
  DenseVector lnf_g, lnf_b;
  DenseMatrix w_out;  // d x vocab; empty when tied
};

// Vectors captured at the last prompt position, before any intervention
// touched them, plus the logits row at that position.
struct TraceRecord {
  std::map<SiteId, DenseVector> sites;
  DenseVector last_logits;
};

struct ForwardResult {
  DenseMatrix logits;  // T x vocab
  TraceRecord trace;
};

// Decoder-only transformer: pre-norm blocks, learned absolute positions,
// erf GELU feed-forward, causal attention. Everything runs in doubles and
// all loops are single-threaded with a fixed order, so two forwards of the
// same tokens produce bit-identical logits. const methods are safe to call
// from multiple threads at once.
class ToyTransformer {
 public:
  // Parameters come from a counter-based normal(0, 0.02) stream seeded by
  // config.seed, drawn in serialization order; biases and layer-norm shifts
  // start at zero, layer-norm scales at one.
  explicit ToyTransformer(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  ForwardResult forward(const std::vector<int>& tokens,
                        const InterventionHook* hook = nullptr) const;

  // Greedy argmax continuation (ties to the lowest token id). The hook fires
  // logically once per site at the original prompt's last position; the
  // intervened vector keeps influencing every later step through attention.
  std::vector<int> greedy_decode(const std::vector<int>& prompt, int max_new,
                                 const InterventionHook* hook = nullptr) const;

  // "toytx v1" checkpoint text: config keys then named tensors.
  std::string serialize() const;
  static ToyTransformer deserialize(const std::string& text);
  void save(const std::string& path) const;
  static ToyTransformer load(const std::string& path);
  std::string digest() const;

  ModelParams params;

 private:
  ModelConfig config_;
};

// ===== training =====

struct TrainItem {
  std::vector<int> tokens;
  int answer_position = 0;
  int gold = 0;
};

struct TrainConfig {
  int steps = 1200;
  double lr = 3e-3;
  int batch_size = 32;
};

struct TrainResult {
  ToyTransformer model;
  std::vector<double> losses;  // mean batch loss per step
};

// Adam (beta 0.9/0.999, eps 1e-8) on cross-entropy of the gold token at each
// item's answer position. Batches are fixed-order contiguous slices of the
// dataset, so training is deterministic; steps = 0 returns the model as-is.
TrainResult train(const ToyTransformer& model, const std::vector<TrainItem>& data,
                  const TrainConfig& config);

// ===== diagnostics =====

// Mean cross-entropy over a dataset without touching parameters.
double training_loss(const ToyTransformer& model, const std::vector<TrainItem>& data);

// Gradient of the mean loss, same accumulation path the trainer uses.
ModelParams training_gradient(const ToyTransformer& model, const std::vector<TrainItem>& data,
                              double* loss = nullptr);

}  // namespace incline
