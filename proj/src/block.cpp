#include "genref/block.hpp"

#include <algorithm>
#include <stdexcept>

namespace genref {

BlockState BlockState::zeros(std::size_t batch, std::size_t hidden) {
  BlockState s;
  s.attention = {Tensor::zeros({batch, hidden}), Tensor::zeros({batch, hidden})};
  s.language = {Tensor::zeros({batch, hidden}), Tensor::zeros({batch, hidden})};
  return s;
}

BlockContext BlockContext::from(const FusedFeatures& features, const AttentionParams& attention) {
  BlockContext ctx;
  ctx.common = features.common;
  ctx.text = features.text;
  ctx.regions = features.regions;
  ctx.regions_per_sample = features.regions_per_sample;
  ctx.image_enabled = features.image_enabled;
  if (ctx.image_enabled) ctx.projected = matmul(features.regions, attention.w_regions);
  return ctx;
}

AttentionResult attention_step(const Tensor& attention_hidden, const BlockContext& ctx, const AttentionParams& params) {
  const std::size_t n = attention_hidden.rows();
  const std::size_t k = ctx.regions_per_sample;
  if (k == 0) throw std::invalid_argument("attention_step: no regions to attend over");
  if (ctx.regions.rows() != n * k) {
    throw ShapeError("attention_step: regions " + shape_str(ctx.regions.shape()) + " do not match batch " +
                     std::to_string(n) + " x " + std::to_string(k) + " regions");
  }
  if (!ctx.image_enabled) {
    return {Tensor::full({n, k}, 1.0 / static_cast<double>(k)), Tensor::zeros({n, ctx.regions.cols()})};
  }
  const Tensor hidden = matmul(attention_hidden, params.w_hidden);
  const Tensor act = tanh(add(ctx.projected, repeat_rows(hidden, k)));
  const Tensor scores = reshape(matmul(act, params.w_score), {n, k});
  const Tensor alpha = softmax(scores);
  return {alpha, weighted_row_sum(alpha, ctx.regions)};
}

AttentionResult attention_step(const Tensor& attention_hidden, const Tensor& regions, const AttentionParams& params) {
  if (attention_hidden.ndim() != 1 || regions.ndim() != 2) {
    throw ShapeError("attention_step: expected h^a [H] and regions [k, D], got " +
                     shape_str(attention_hidden.shape()) + " and " + shape_str(regions.shape()));
  }
  BlockContext ctx;
  ctx.regions = regions;
  ctx.regions_per_sample = regions.rows();
  ctx.projected = matmul(regions, params.w_regions);
  const Tensor h = reshape(attention_hidden, {1, attention_hidden.size()});
  auto r = attention_step(h, ctx, params);
  return {reshape(r.weights, {regions.rows()}), reshape(r.attended, {regions.cols()})};
}

StepOutput block_step(const BlockParams& block, const SharedParams& shared, const BlockState& state,
                      const Tensor& summary, const BlockContext& ctx, std::span<const TokenId> tokens,
                      const StepOptions& options) {
  const std::size_t n = ctx.batch();
  if (tokens.size() != n) {
    throw std::invalid_argument("block_step: " + std::to_string(tokens.size()) + " tokens for batch " +
                                std::to_string(n));
  }
  const std::size_t vocab = shared.embedding.weight.rows();
  for (TokenId t : tokens) {
    if (t >= vocab) throw std::out_of_range("block_step: token id " + std::to_string(t) + " outside vocabulary");
  }
  const bool drop = options.mode == Mode::train && options.dropout > 0.0;
  if (drop && options.rng == nullptr) throw std::invalid_argument("block_step: dropout in train mode needs an rng");
  auto maybe_drop = [&](const Tensor& x) { return drop ? dropout(x, options.dropout, Mode::train, *options.rng) : x; };

  const Tensor word = maybe_drop(embed(shared.embedding, tokens));
  const Tensor attention_input = concat({summary, state.language.h, ctx.common, word});
  StepOutput out;
  out.state.attention = lstm_cell_step(attention_input, state.attention, block.attention_lstm);

  const AttentionResult attn = attention_step(out.state.attention.h, ctx, shared.attention);
  const Tensor language_input = concat({summary, attn.attended, out.state.attention.h, ctx.text});
  out.state.language = lstm_cell_step(language_input, state.language, block.language_lstm);

  out.logits = linear(block.head, maybe_drop(out.state.language.h));
  out.alpha = attn.weights;
  return out;
}

std::vector<TokenId> argmax_rows(const Tensor& logits) {
  const std::size_t rows = logits.rows();
  const std::size_t cols = logits.cols();
  auto v = logits.data();
  std::vector<TokenId> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * cols;
    out[r] = static_cast<TokenId>(std::max_element(row, row + cols) - row);
  }
  return out;
}

namespace {

BlockState select_state(const std::vector<bool>& keep, const BlockState& next, const BlockState& prev) {
  if (std::all_of(keep.begin(), keep.end(), [](bool b) { return b; })) return next;
  BlockState s;
  s.attention.h = select_rows(keep, next.attention.h, prev.attention.h);
  s.attention.c = select_rows(keep, next.attention.c, prev.attention.c);
  s.language.h = select_rows(keep, next.language.h, prev.language.h);
  s.language.c = select_rows(keep, next.language.c, prev.language.c);
  return s;
}

void record_attention(UnrollResult& out, const Tensor& alpha, const std::vector<bool>& active) {
  const std::size_t k = alpha.cols();
  for (std::size_t b = 0; b < active.size(); ++b) {
    if (!active[b]) continue;
    auto row = alpha.data().subspan(b * k, k);
    out.attention[b].emplace_back(row.begin(), row.end());
  }
}

std::size_t hidden_size(const BlockParams& block) { return block.attention_lstm.hidden_size(); }

}  // namespace

UnrollResult unroll_teacher_forced(const BlockParams& block, const SharedParams& shared, const Tensor& summary,
                                   const BlockContext& ctx, std::span<const TokenSeq> gold,
                                   const StepOptions& options) {
  const std::size_t n = ctx.batch();
  if (gold.size() != n) throw std::invalid_argument("unroll_teacher_forced: gold count does not match batch");
  std::size_t longest = 0;
  for (const auto& g : gold) {
    if (g.true_length == 0 || g.ids.size() < g.true_length || g.ids[g.true_length - 1] != kEos) {
      throw std::invalid_argument("unroll_teacher_forced: malformed gold sequence");
    }
    longest = std::max(longest, g.true_length);
  }

  UnrollResult out;
  out.attention.resize(n);
  out.steps.assign(n, 0);
  std::vector<std::vector<TokenId>> predicted(n);
  BlockState state = BlockState::zeros(n, hidden_size(block));
  std::vector<TokenId> inputs(n);
  std::vector<bool> active(n);
  for (std::size_t t = 0; t < longest; ++t) {
    for (std::size_t b = 0; b < n; ++b) {
      active[b] = t < gold[b].true_length;
      inputs[b] = t == 0 ? kBos : (active[b] ? gold[b].ids[t - 1] : kPad);
    }
    StepOutput step = block_step(block, shared, state, summary, ctx, inputs, options);
    state = select_state(active, step.state, state);
    const auto best = argmax_rows(step.logits);
    for (std::size_t b = 0; b < n; ++b) {
      if (!active[b]) continue;
      predicted[b].push_back(best[b]);
      ++out.steps[b];
    }
    record_attention(out, step.alpha, active);
    out.logits.push_back(step.logits);
  }
  for (auto& p : predicted) out.tokens.push_back(TokenSeq::generated(std::move(p)));
  out.summary = concat({state.attention.h, state.language.h});
  return out;
}

UnrollResult unroll_greedy(const BlockParams& block, const SharedParams& shared, const Tensor& summary,
                           const BlockContext& ctx, std::size_t max_len) {
  if (max_len == 0) throw std::invalid_argument("unroll_greedy: max_len must be at least 1");
  const std::size_t n = ctx.batch();
  UnrollResult out;
  out.attention.resize(n);
  out.steps.assign(n, 0);
  std::vector<std::vector<TokenId>> emitted(n);
  std::vector<bool> active(n, true);
  std::vector<TokenId> inputs(n, kBos);
  BlockState state = BlockState::zeros(n, hidden_size(block));
  const StepOptions options{Mode::eval, 0.0, nullptr};
  for (std::size_t t = 0; t < max_len; ++t) {
    if (std::none_of(active.begin(), active.end(), [](bool b) { return b; })) break;
    StepOutput step = block_step(block, shared, state, summary, ctx, inputs, options);
    state = select_state(active, step.state, state);
    record_attention(out, step.alpha, active);
    out.logits.push_back(step.logits);
    const auto best = argmax_rows(step.logits);
    std::vector<bool> next_active = active;
    for (std::size_t b = 0; b < n; ++b) {
      if (!active[b]) continue;
      emitted[b].push_back(best[b]);
      ++out.steps[b];
      inputs[b] = best[b];
      if (best[b] == kEos) next_active[b] = false;
    }
    active = std::move(next_active);
  }
  for (auto& e : emitted) {
    out.hit_eos.push_back(e.back() == kEos);
    if (e.back() != kEos) e.back() = kEos;
    out.tokens.push_back(TokenSeq::generated(std::move(e)));
  }
  out.summary = concat({state.attention.h, state.language.h});
  return out;
}

}  // namespace genref
