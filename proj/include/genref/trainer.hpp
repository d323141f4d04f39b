#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "genref/pipeline.hpp"
#include "genref/toyworld.hpp"

namespace genref {

struct TrainConfig {
  double lr0 = 4e-4;
  double decay = 0.9;  // lr multiplier applied after every epoch
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;  // global gradient norm; <= 0 disables clipping
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean per-sample loss over the epoch
  double val_loss = 0.0;    // NaN without validation data
  double seconds = 0.0;
};

struct TrainingReport {
  std::vector<EpochStats> epochs;
  double elapsed_seconds = 0.0;
  std::filesystem::path checkpoint;  // set by the caller that saves one
  bool stopped_early = false;
};

nlohmann::json report_to_json(const TrainingReport& r);

/// One encoded training example.
struct Example {
  std::string id;
  MultimodalInput input;
  TokenSeq answer;
  TokenSeq rationale;
};

std::vector<Example> make_examples(std::span<const toyworld::Sample> samples, const Vocab& vocab,
                                   const toyworld::EncodingDims& dims, std::uint64_t feature_seed);

Batch make_batch(std::span<const Example> examples);
Batch make_batch(std::span<const Example* const> examples);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch, double loss);
  std::size_t epoch;
  std::size_t batch;
};

/// Adam over a fixed, ordered parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Applies one update with learning rate `lr`. Parameters absent from
  /// `grads` get a zero gradient.
  void step(const GradientMap& grads, double lr, double grad_scale = 1.0);
  std::size_t steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Global L2 norm of the gradients of `params`.
double gradient_norm(const GradientMap& grads, std::span<const Tensor> params);

/// Called after every epoch; returning false stops training.
using EpochCallback = std::function<bool(const EpochStats&)>;

TrainingReport train(GenRefModel& model, std::span<const Example> train_set, std::span<const Example> val_set,
                     const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Mean per-sample loss in eval mode.
double evaluate_loss(const GenRefModel& model, std::span<const Example> examples, std::size_t batch_size = 64);

/// Greedy generation over `examples`, batched.
std::vector<GenerationOutput> generate_all(const GenRefModel& model, std::span<const Example> examples,
                                           std::size_t batch_size = 64);

/// Fraction of examples whose final answer matches the gold answer token for token.
double answer_exact_match(std::span<const GenerationOutput> outputs, std::span<const Example> examples,
                          std::size_t answer_index);

// ---------------------------------------------------------------- checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  PipelineConfig config;
  std::vector<std::string> vocab;  // ordinary tokens, reserved entries excluded
  std::vector<std::pair<std::string, Tensor>> params;
};

void save_checkpoint(const GenRefModel& model, const Vocab& vocab, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Builds a model from the stored config and copies the stored parameters in.
GenRefModel load_model(const Checkpoint& ckpt);
/// Copies stored parameters into `model`; names and shapes must match exactly.
void load_params_into(GenRefModel& model, const Checkpoint& ckpt);
Vocab checkpoint_vocab(const Checkpoint& ckpt);

// ---------------------------------------------------------------- grad check

/// The small configuration used for end-to-end finite-difference checks.
PipelineConfig tiny_config(int n_refine = 1, InputVariant variant = InputVariant::qic);

struct PipelineGradCheck {
  double max_relative_error = 0.0;     // per parameter tensor, see GradCheckResult
  double max_elementwise_error = 0.0;  // diagnostic
  std::size_t checked = 0;             // scalar parameters compared
  double region_grad_max_abs = 0.0;  // largest |dL/dV|
  std::string worst_param;
};

/// Compares backward() against central differences for every scalar parameter
/// of the full chain loss on `n_samples` random inputs. The region features are
/// checked too, as one extra entry named "regions".
PipelineGradCheck grad_check_pipeline(const PipelineConfig& config, std::size_t n_samples, std::uint64_t seed = 11,
                                      double epsilon = 1e-3);

}  // namespace genref
