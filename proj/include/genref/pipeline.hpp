#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "genref/block.hpp"
#include "genref/encoder.hpp"
#include "genref/nn.hpp"

namespace genref {

struct ModelSizes {
  std::size_t hidden = 64;           // H
  std::size_t attention = 32;        // A
  std::size_t embedding = 32;        // E
  std::size_t region_dim = 16;       // D
  std::size_t text_dim = 32;         // B
  std::size_t fused_dim = 24;        // L
  std::size_t regions = 6;           // k
  std::size_t vocab = 64;            // |V|
  std::size_t max_answer_len = 12;   // greedy limit for answer blocks
  std::size_t max_rationale_len = 16;  // greedy limit for rationale blocks

  bool operator==(const ModelSizes&) const = default;
};

struct PipelineConfig {
  int n_refine = 1;
  InputVariant variant = InputVariant::qic;
  ModelSizes sizes;
  double dropout = 0.5;
  std::uint64_t seed = 1;

  std::size_t block_count() const { return 2 + 2 * static_cast<std::size_t>(n_refine); }
  bool image_enabled() const { return variant_uses_image(variant); }
  bool caption_enabled() const { return variant_uses_caption(variant); }
  void validate() const;
  bool operator==(const PipelineConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelSizes& s);
void from_json(const nlohmann::json& j, ModelSizes& s);
void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

/// Sets the refinement count and modality flags on top of `base`.
PipelineConfig configure_variant(int n_refine, InputVariant variant, PipelineConfig base = {});

/// Block names in chain order: AG, RG, AR, RR, then AR2, RR2.
std::string block_name(std::size_t index);
inline bool block_is_answer(std::size_t index) { return index % 2 == 0; }

/// Samples stacked for one forward pass.
struct Batch {
  Tensor regions;   // [n * k, D]
  Tensor question;  // [n, B]
  Tensor caption;   // [n, B]
  std::vector<TokenSeq> answers;
  std::vector<TokenSeq> rationales;
  bool has_image = true;
  bool has_caption = true;

  std::size_t size() const { return answers.size(); }
};

Batch make_batch(std::span<const MultimodalInput> inputs, std::span<const TokenSeq> answers,
                 std::span<const TokenSeq> rationales);

struct LossBreakdown {
  std::vector<std::string> names;        // one per block
  std::vector<double> terms;             // batch-mean cross-entropy per block
  double total = 0.0;                    // terms summed in order
  Tensor loss;                           // differentiable total
  std::vector<std::vector<double>> per_sample;  // [block][sample] raw sums
  std::vector<std::size_t> steps;        // block steps per sample, all blocks
};

struct JointLikelihood {
  std::vector<double> factors;  // log P of each block's gold sequence
  double log_prob = 0.0;        // sum of factors
  std::vector<std::vector<double>> step_log_probs;  // [block][t]
};

struct GenerationOutput {
  std::vector<TokenSeq> answers;     // A1, A2, ...
  std::vector<TokenSeq> rationales;  // R1, R2, ...
  std::vector<std::vector<std::vector<double>>> attention;  // [block][step][k]

  const TokenSeq& final_answer() const { return answers.back(); }
  const TokenSeq& final_rationale() const { return rationales.back(); }
  bool operator==(const GenerationOutput&) const = default;
};

/// The generation-refinement network: a shared encoder, embedding table and
/// attention MLP, and a chain of stacked-LSTM blocks with their own heads.
class GenRefModel {
 public:
  explicit GenRefModel(PipelineConfig config);
  // Copies would alias parameter storage.
  GenRefModel(const GenRefModel&) = delete;
  GenRefModel& operator=(const GenRefModel&) = delete;
  GenRefModel(GenRefModel&&) = default;
  GenRefModel& operator=(GenRefModel&&) = default;

  const PipelineConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  EncoderParams& encoder() { return encoder_; }
  SharedParams& shared() { return shared_; }
  const SharedParams& shared() const { return shared_; }
  std::vector<BlockParams>& blocks() { return blocks_; }
  const std::vector<BlockParams>& blocks() const { return blocks_; }

  static std::size_t expected_param_count(const PipelineConfig& config);

  FusedFeatures encode(const Batch& batch) const;

  /// Teacher-forced pass through every block. Each block's summary is taken
  /// from its teacher-forced predecessor.
  LossBreakdown forward_train(const Batch& batch, Mode mode = Mode::eval, Rng* rng = nullptr) const;

  JointLikelihood joint_log_likelihood(const MultimodalInput& input, const TokenSeq& answer,
                                       const TokenSeq& rationale) const;

  /// Greedy chain; each block conditions on its free-running predecessor.
  std::vector<GenerationOutput> generate(const Batch& batch) const;
  GenerationOutput generate(const MultimodalInput& input) const;

 private:
  PipelineConfig config_;
  ParamSet params_;
  EncoderParams encoder_;
  SharedParams shared_;
  std::vector<BlockParams> blocks_;
};

}  // namespace genref
