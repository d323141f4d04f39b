#include "genref/nn.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace genref {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> kReserved = {"<pad>", "<bos>", "<eos>", "<unk>"};
  return kReserved;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------- Vocab

Vocab::Vocab(std::span<const std::string> tokens) {
  for (const auto& r : reserved_tokens()) {
    index_.emplace(r, tokens_.size());
    tokens_.push_back(r);
  }
  for (const auto& t : tokens) {
    if (index_.count(t)) continue;
    index_.emplace(t, tokens_.size());
    tokens_.push_back(t);
  }
  if (tokens_.size() < 5) throw std::invalid_argument("Vocab: needs at least one non-reserved token");
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) throw std::out_of_range("Vocab: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::uint64_t Vocab::hash() const {
  // FNV-1a over the tokens in id order, separated by 0x1f.
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& t : tokens_) {
    for (unsigned char ch : t) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    h ^= 0x1f;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<TokenId> Vocab::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& t : tokenize(text)) ids.push_back(id(t));
  ids.push_back(kEos);
  return ids;
}

std::vector<std::string> Vocab::decode_tokens(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  for (TokenId id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    out.push_back(token(id));
  }
  return out;
}

std::string Vocab::decode(std::span<const TokenId> ids) const {
  const auto toks = decode_tokens(ids);
  return join_tokens(toks);
}

// ---------------------------------------------------------------- TokenSeq

TokenSeq TokenSeq::gold(std::vector<TokenId> ids, std::size_t padded_length) {
  if (ids.empty()) throw std::invalid_argument("TokenSeq: gold sequence is empty");
  if (ids.back() != kEos) throw std::invalid_argument("TokenSeq: gold sequence must end with EOS");
  for (TokenId id : ids) {
    if (id == kPad) throw std::invalid_argument("TokenSeq: PAD inside gold content");
  }
  TokenSeq seq;
  seq.true_length = ids.size();
  seq.ids = std::move(ids);
  if (padded_length > seq.ids.size()) seq.ids.resize(padded_length, kPad);
  return seq;
}

TokenSeq TokenSeq::generated(std::vector<TokenId> ids) {
  TokenSeq seq;
  seq.true_length = ids.size();
  seq.ids = std::move(ids);
  return seq;
}

// ---------------------------------------------------------------- params

Tensor& ParamSet::add(std::string name, Tensor value) {
  for (const auto& [n, _] : entries_) {
    if (n == name) throw std::invalid_argument("ParamSet: duplicate parameter " + name);
  }
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [_, t] : entries_) out.push_back(t);
  return out;
}

std::size_t ParamSet::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

Tensor* ParamSet::find(std::string_view name) {
  for (auto& [n, t] : entries_) {
    if (n == name) return &t;
  }
  return nullptr;
}

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> data(fan_in * fan_out);
  for (double& v : data) v = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(data), true);
}

// ---------------------------------------------------------------- layers

Tensor embed(const EmbeddingTable& table, TokenId id) {
  const TokenId ids[] = {id};
  return reshape(embed(table, ids), {table.weight.cols()});
}

Tensor embed(const EmbeddingTable& table, std::span<const TokenId> ids) { return gather_rows(table.weight, ids); }

Tensor linear(const Linear& layer, const Tensor& x) { return add(matmul(x, layer.weight), layer.bias); }

LstmParams make_lstm(std::size_t input_size, std::size_t hidden_size, Rng& rng, double forget_bias) {
  LstmParams p;
  p.w_input = xavier_uniform(input_size, 4 * hidden_size, rng);
  p.w_hidden = xavier_uniform(hidden_size, 4 * hidden_size, rng);
  std::vector<double> b(4 * hidden_size, 0.0);
  std::fill(b.begin() + static_cast<std::ptrdiff_t>(hidden_size), b.begin() + static_cast<std::ptrdiff_t>(2 * hidden_size),
            forget_bias);
  p.bias = Tensor::from({4 * hidden_size}, std::move(b), true);
  return p;
}

LstmState lstm_cell_step(const Tensor& x, const LstmState& state, const LstmParams& p) {
  const std::size_t hidden = p.hidden_size();
  if (x.cols() != p.input_size()) {
    throw ShapeError("lstm_cell_step: input width " + std::to_string(x.cols()) + " does not match parameters " +
                     shape_str(p.w_input.shape()));
  }
  if (state.h.cols() != hidden || state.c.shape() != state.h.shape()) {
    throw ShapeError("lstm_cell_step: state " + shape_str(state.h.shape()) + "/" + shape_str(state.c.shape()) +
                     " does not match hidden size " + std::to_string(hidden));
  }
  const Tensor gates = add(add(matmul(x, p.w_input), matmul(state.h, p.w_hidden)), p.bias);
  const Tensor i = sigmoid(slice(gates, 0, hidden));
  const Tensor f = sigmoid(slice(gates, hidden, hidden));
  const Tensor g = tanh(slice(gates, 2 * hidden, hidden));
  const Tensor o = sigmoid(slice(gates, 3 * hidden, hidden));
  Tensor c = add(mul(f, state.c), mul(i, g));
  Tensor h = mul(o, tanh(c));
  return {std::move(h), std::move(c)};
}

Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: probability must be in [0, 1)");
  if (p == 0.0 || mode == Mode::eval) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double scale_kept = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (double& m : mask) m = keep(rng) ? scale_kept : 0.0;
  return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

// ---------------------------------------------------------------- loss

CrossEntropy masked_cross_entropy(std::span<const Tensor> logits_seq, std::span<const TokenSeq> gold) {
  const std::size_t batch = gold.size();
  if (batch == 0) throw std::invalid_argument("masked_cross_entropy: empty batch");
  for (std::size_t b = 0; b < batch; ++b) {
    if (gold[b].true_length > logits_seq.size()) {
      throw std::length_error("masked_cross_entropy: gold length " + std::to_string(gold[b].true_length) +
                              " exceeds " + std::to_string(logits_seq.size()) + " steps");
    }
  }
  CrossEntropy out;
  out.per_sample.assign(batch, 0.0);
  out.step_log_probs.resize(batch);
  Tensor total;
  std::vector<TokenId> targets(batch);
  std::vector<double> weights(batch);
  for (std::size_t t = 0; t < logits_seq.size(); ++t) {
    const Tensor& logits = logits_seq[t];
    if (logits.rows() != batch) {
      throw ShapeError("masked_cross_entropy: step " + std::to_string(t) + " logits " + shape_str(logits.shape()) +
                       " do not match batch " + std::to_string(batch));
    }
    bool any = false;
    for (std::size_t b = 0; b < batch; ++b) {
      const bool live = t < gold[b].true_length;
      targets[b] = live ? gold[b].ids[t] : 0;
      weights[b] = live ? 1.0 : 0.0;
      any = any || live;
    }
    if (!any) continue;
    const Tensor picked = pick(log_softmax(logits), targets);
    for (std::size_t b = 0; b < batch; ++b) {
      if (weights[b] == 0.0) continue;
      out.step_log_probs[b].push_back(picked.at(b));
      out.per_sample[b] -= picked.at(b);
    }
    const Tensor step = sum(mul(picked, Tensor::from({batch}, weights)));
    total = total.defined() ? add(total, step) : step;
  }
  if (!total.defined()) total = Tensor::scalar(0.0);
  out.loss = scale(total, -1.0 / static_cast<double>(batch));
  return out;
}

CrossEntropy masked_cross_entropy(std::span<const Tensor> logits_seq, const TokenSeq& gold) {
  std::vector<Tensor> rows;
  rows.reserve(logits_seq.size());
  for (const auto& l : logits_seq) rows.push_back(l.ndim() == 1 ? reshape(l, {1, l.size()}) : l);
  return masked_cross_entropy(rows, std::span<const TokenSeq>(&gold, 1));
}

}  // namespace genref
