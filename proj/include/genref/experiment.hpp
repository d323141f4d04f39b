#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "genref/metrics.hpp"
#include "genref/pipeline.hpp"
#include "genref/toyworld.hpp"
#include "genref/trainer.hpp"

namespace genref {

/// Which toy corpus to build and how to encode it.
struct DataConfig {
  std::uint64_t seed = 7;          // scene generator
  std::uint64_t feature_seed = 3;  // region codes and token hash vectors
  std::uint64_t split_seed = 1;
  std::size_t n_train = 2000;
  std::size_t n_val = 200;
  std::size_t k = 6;

  void validate() const;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

/// Everything needed to reproduce one training run.
struct RunConfig {
  DataConfig data;
  PipelineConfig pipeline;
  TrainConfig train;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Keys absent from `j` keep their values in `c`.
void merge_json(RunConfig& c, const nlohmann::json& j);

/// The toy-world configuration used for the learnability run: H=64, A=32,
/// E=32, batch 16, 30 epochs, with wider region and text codes than the
/// library defaults.
RunConfig toy_run_config();

struct ToyData {
  Vocab vocab;
  std::vector<toyworld::Sample> train_samples;
  std::vector<toyworld::Sample> val_samples;
  std::vector<Example> train;
  std::vector<Example> val;
};

/// Generates n_train + n_val samples, splits them, builds the vocabulary from
/// the training part, and encodes both parts with the pipeline's D, B and k.
/// Also sets `pipeline.sizes.vocab` to the vocabulary size.
ToyData make_toy_data(const DataConfig& data, PipelineConfig& pipeline);

/// Encodes samples against an existing vocabulary and pipeline sizes.
std::vector<Example> encode_samples(std::span<const toyworld::Sample> samples, const Vocab& vocab,
                                    const PipelineConfig& pipeline, std::uint64_t feature_seed);

struct EvalSummary {
  metrics::MetricReport answer;
  metrics::MetricReport rationale;
  metrics::AccuracyReport accuracy;
  double exact_match = 0.0;  // final answer, token for token
  std::size_t samples = 0;
  std::vector<std::string> warnings;
};

/// Aligned generated and gold text, one entry per sample.
struct TextPairs {
  std::vector<std::string> ids;
  std::vector<std::string> hyp_answers;
  std::vector<std::string> hyp_rationales;
  std::vector<std::string> ref_answers;
  std::vector<std::string> ref_rationales;
};

/// Overlap and embedding metrics for answers and rationales, string-level
/// exact match of the answers, and the classification harness. The harness
/// draws three distractor options per sample from other samples' gold text
/// with `seed`.
EvalSummary evaluate_texts(const TextPairs& texts, const metrics::EmbeddingProvider& provider, std::uint64_t seed);

/// Decodes final answers and rationales and scores them with evaluate_texts;
/// exact match is token for token.
EvalSummary evaluate_generations(const std::vector<GenerationOutput>& outputs, std::span<const Example> examples,
                                 const Vocab& vocab, std::uint64_t seed);

nlohmann::json eval_summary_to_json(const EvalSummary& e);

/// The embedding table used for scoring: seeded vectors over the vocabulary.
metrics::EmbeddingProvider scoring_embeddings(const Vocab& vocab, std::uint64_t seed);

struct AblationRow {
  int n_refine = 0;
  InputVariant variant = InputVariant::qic;
  double val_loss = 0.0;
  double exact_match = 0.0;
  std::map<std::string, double> answer;     // metric means
  std::map<std::string, double> rationale;  // metric means
  double seconds = 0.0;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::string table;       // aligned columns, one row per configuration
  std::string refinement;  // 1-vs-0 refinement comparison on CIDEr and ROUGE-L
};

/// Trains and evaluates every configuration of {0,1,2} x {Q+I+C, Q+I, Q+C}
/// from `base`, on the same data and seeds.
AblationResult run_ablation(const RunConfig& base, const std::function<void(const AblationRow&)>& on_row = {});

nlohmann::json ablation_to_json(const AblationResult& r);

}  // namespace genref
