#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "genref/tensor.hpp"

namespace genref {

using Rng = std::mt19937_64;
using TokenId = std::size_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;

std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(std::span<const std::string> tokens);

/// Closed vocabulary with fixed reserved ids: 0 <pad>, 1 <bos>, 2 <eos>, 3 <unk>.
class Vocab {
 public:
  Vocab() = default;
  // Adds `tokens` after the reserved entries, skipping duplicates and reserved
  // spellings. Requires at least one ordinary token.
  explicit Vocab(std::span<const std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // kUnk when absent
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::uint64_t hash() const;

  // Lowercased whitespace tokens followed by EOS.
  std::vector<TokenId> encode(std::string_view text) const;
  // Stops at the first EOS; PAD and BOS are skipped.
  std::string decode(std::span<const TokenId> ids) const;
  std::vector<std::string> decode_tokens(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Token ids with a true length; ids past the true length are PAD.
struct TokenSeq {
  std::vector<TokenId> ids;
  std::size_t true_length = 0;

  // Gold sequence: non-empty, PAD-free, last id EOS. Optionally right-padded.
  static TokenSeq gold(std::vector<TokenId> ids, std::size_t padded_length = 0);
  // Decoder output: kept as emitted, true length is the full length.
  static TokenSeq generated(std::vector<TokenId> ids);

  std::span<const TokenId> content() const { return {ids.data(), true_length}; }
  TokenId at(std::size_t t) const { return t < ids.size() ? ids[t] : kPad; }
  bool operator==(const TokenSeq&) const = default;
};

/// Ordered, named parameter leaves. Declaration order is the serialization order.
class ParamSet {
 public:
  Tensor& add(std::string name, Tensor value);
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t count() const;  // total scalar parameters
  Tensor* find(std::string_view name);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct EmbeddingTable {
  Tensor weight;  // [|V|, E]
};

Tensor embed(const EmbeddingTable& table, TokenId id);
Tensor embed(const EmbeddingTable& table, std::span<const TokenId> ids);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

Tensor linear(const Linear& layer, const Tensor& x);

/// Gate order in the packed matrices is input, forget, cell, output.
struct LstmParams {
  Tensor w_input;   // [In, 4H]
  Tensor w_hidden;  // [H, 4H]
  Tensor bias;      // [4H]

  std::size_t input_size() const { return w_input.shape()[0]; }
  std::size_t hidden_size() const { return w_hidden.shape()[0]; }
};

LstmParams make_lstm(std::size_t input_size, std::size_t hidden_size, Rng& rng, double forget_bias = 1.0);

struct LstmState {
  Tensor h;
  Tensor c;
};

LstmState lstm_cell_step(const Tensor& x, const LstmState& state, const LstmParams& p);

enum class Mode { train, eval };

Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng);

struct CrossEntropy {
  Tensor loss;                                  // mean over the batch of per-sample sums
  std::vector<double> per_sample;               // -sum_t log p_t for each sample
  std::vector<std::vector<double>> step_log_probs;  // [sample][t], t < true_length
};

/// Cross-entropy over a sequence of [batch, |V|] logits against `gold`. Steps
/// at or past a sample's true length contribute exactly zero.
CrossEntropy masked_cross_entropy(std::span<const Tensor> logits_seq, std::span<const TokenSeq> gold);
CrossEntropy masked_cross_entropy(std::span<const Tensor> logits_seq, const TokenSeq& gold);

}  // namespace genref
