#pragma once

#include <vector>

#include "genref/encoder.hpp"
#include "genref/nn.hpp"

namespace genref {

/// Soft spatial attention MLP, shared by every block.
struct AttentionParams {
  Tensor w_regions;  // W_av: [D, A]
  Tensor w_hidden;   // W_ah: [H, A]
  Tensor w_score;    // W_ay: [A, 1]
};

/// Parameters owned by a single block. The embedding table and attention MLP
/// live in SharedParams.
struct BlockParams {
  LstmParams attention_lstm;
  LstmParams language_lstm;
  Linear head;  // W_lh: [H, |V|], b_lh: [|V|]
};

struct SharedParams {
  EmbeddingTable embedding;
  AttentionParams attention;
};

/// Hidden and cell state of the Attention-LSTM and the Language-LSTM.
struct BlockState {
  LstmState attention;
  LstmState language;

  static BlockState zeros(std::size_t batch, std::size_t hidden);
};

struct AttentionResult {
  Tensor weights;   // alpha: [n, k]
  Tensor attended;  // V-hat: [n, D]
};

/// Single-sample form: h^a [H], regions [k, D] -> alpha [k], V-hat [D].
AttentionResult attention_step(const Tensor& attention_hidden, const Tensor& regions, const AttentionParams& params);

/// Everything a block reads that stays fixed across its time steps.
struct BlockContext {
  Tensor common;     // F: [n, D + L]
  Tensor text;       // T: [n, L]
  Tensor regions;    // V: [n * k, D]
  Tensor projected;  // V W_av: [n * k, A], computed once per forward pass
  std::size_t regions_per_sample = 0;
  bool image_enabled = true;

  std::size_t batch() const { return text.rows(); }

  static BlockContext from(const FusedFeatures& features, const AttentionParams& attention);
};

/// Batched attention over the context's regions. With the image disabled the
/// attended vector is zero and the weights are uniform.
AttentionResult attention_step(const Tensor& attention_hidden, const BlockContext& ctx, const AttentionParams& params);

struct StepOptions {
  Mode mode = Mode::eval;
  double dropout = 0.0;
  Rng* rng = nullptr;  // required when mode is train and dropout > 0
};

struct StepOutput {
  BlockState state;
  Tensor logits;  // [n, |V|]
  Tensor alpha;   // [n, k]
};

/// One time step: embed the input tokens, advance the Attention-LSTM, attend,
/// advance the Language-LSTM, project to vocabulary logits.
StepOutput block_step(const BlockParams& block, const SharedParams& shared, const BlockState& state,
                      const Tensor& summary, const BlockContext& ctx, std::span<const TokenId> tokens,
                      const StepOptions& options);

struct UnrollResult {
  std::vector<TokenSeq> tokens;                           // per sample
  std::vector<Tensor> logits;                             // per step, [n, |V|]
  Tensor summary;                                         // h^p for the next block: [n, 2H]
  std::vector<std::vector<std::vector<double>>> attention;  // [sample][step][k]
  std::vector<std::size_t> steps;                         // block steps taken per sample
  std::vector<bool> hit_eos;                              // greedy only: EOS was emitted
};

/// Feeds BOS then gold token t-1 at step t for exactly gold.true_length steps
/// per sample. `tokens` holds the argmax prediction at each step.
UnrollResult unroll_teacher_forced(const BlockParams& block, const SharedParams& shared, const Tensor& summary,
                                   const BlockContext& ctx, std::span<const TokenSeq> gold,
                                   const StepOptions& options);

/// Feeds back the argmax (lowest id on ties) until EOS or `max_len` steps. A
/// sequence that never emits EOS has EOS written over its last position.
UnrollResult unroll_greedy(const BlockParams& block, const SharedParams& shared, const Tensor& summary,
                           const BlockContext& ctx, std::size_t max_len);

/// Lowest index among the maxima of each row of `logits`.
std::vector<TokenId> argmax_rows(const Tensor& logits);

}  // namespace genref
