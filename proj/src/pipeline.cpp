#include "genref/pipeline.hpp"

#include <stdexcept>

namespace genref {

using nlohmann::json;

void to_json(json& j, const ModelSizes& s) {
  j = json{{"hidden", s.hidden},
           {"attention", s.attention},
           {"embedding", s.embedding},
           {"region_dim", s.region_dim},
           {"text_dim", s.text_dim},
           {"fused_dim", s.fused_dim},
           {"regions", s.regions},
           {"vocab", s.vocab},
           {"max_answer_len", s.max_answer_len},
           {"max_rationale_len", s.max_rationale_len}};
}

void from_json(const json& j, ModelSizes& s) {
  ModelSizes d;
  s.hidden = j.value("hidden", d.hidden);
  s.attention = j.value("attention", d.attention);
  s.embedding = j.value("embedding", d.embedding);
  s.region_dim = j.value("region_dim", d.region_dim);
  s.text_dim = j.value("text_dim", d.text_dim);
  s.fused_dim = j.value("fused_dim", d.fused_dim);
  s.regions = j.value("regions", d.regions);
  s.vocab = j.value("vocab", d.vocab);
  s.max_answer_len = j.value("max_answer_len", d.max_answer_len);
  s.max_rationale_len = j.value("max_rationale_len", d.max_rationale_len);
}

void to_json(json& j, const PipelineConfig& c) {
  j = json{{"n_refine", c.n_refine},
           {"variant", variant_name(c.variant)},
           {"sizes", c.sizes},
           {"dropout", c.dropout},
           {"seed", c.seed}};
}

void from_json(const json& j, PipelineConfig& c) {
  PipelineConfig d;
  c.n_refine = j.value("n_refine", d.n_refine);
  c.variant = parse_variant(j.value("variant", variant_name(d.variant)));
  c.sizes = j.contains("sizes") ? j.at("sizes").get<ModelSizes>() : d.sizes;
  c.dropout = j.value("dropout", d.dropout);
  c.seed = j.value("seed", d.seed);
}

void PipelineConfig::validate() const {
  if (n_refine < 0 || n_refine > 2) {
    throw std::invalid_argument("n_refine must be 0, 1 or 2, got " + std::to_string(n_refine));
  }
  const ModelSizes& s = sizes;
  if (s.hidden == 0 || s.attention == 0 || s.embedding == 0 || s.region_dim == 0 || s.text_dim == 0 ||
      s.fused_dim == 0 || s.regions == 0) {
    throw std::invalid_argument("model sizes must all be positive");
  }
  if (s.vocab < 5) throw std::invalid_argument("vocabulary must hold at least 5 entries");
  if (s.max_answer_len == 0 || s.max_rationale_len == 0) throw std::invalid_argument("maximum lengths must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0, 1)");
}

PipelineConfig configure_variant(int n_refine, InputVariant variant, PipelineConfig base) {
  base.n_refine = n_refine;
  base.variant = variant;
  base.validate();
  return base;
}

std::string block_name(std::size_t index) {
  static const char* kNames[] = {"AG", "RG", "AR", "RR"};
  if (index < 4) return kNames[index];
  const std::size_t round = index / 2;  // 2 -> second refinement
  return std::string(block_is_answer(index) ? "AR" : "RR") + std::to_string(round);
}

Batch make_batch(std::span<const MultimodalInput> inputs, std::span<const TokenSeq> answers,
                 std::span<const TokenSeq> rationales) {
  if (inputs.empty()) throw std::invalid_argument("make_batch: batch with zero samples");
  if (answers.size() != inputs.size() || rationales.size() != inputs.size()) {
    throw std::invalid_argument("make_batch: inputs, answers and rationales differ in count");
  }
  const std::size_t k = inputs[0].region_count();
  const std::size_t d = inputs[0].regions.cols();
  const std::size_t b = inputs[0].question.size();
  std::vector<double> regions, question, caption;
  regions.reserve(inputs.size() * k * d);
  Batch batch;
  for (const auto& in : inputs) {
    if (in.region_count() != k || in.regions.cols() != d || in.question.size() != b || in.caption.size() != b) {
      throw ShapeError("make_batch: samples disagree on feature shapes");
    }
    auto append = [](std::vector<double>& dst, const Tensor& t) { dst.insert(dst.end(), t.data().begin(), t.data().end()); };
    append(regions, in.regions);
    append(question, in.question);
    append(caption, in.caption);
    batch.has_image = batch.has_image && in.has_image;
    batch.has_caption = batch.has_caption && in.has_caption;
  }
  const std::size_t n = inputs.size();
  batch.regions = Tensor::from({n * k, d}, std::move(regions));
  batch.question = Tensor::from({n, b}, std::move(question));
  batch.caption = Tensor::from({n, b}, std::move(caption));
  batch.answers.assign(answers.begin(), answers.end());
  batch.rationales.assign(rationales.begin(), rationales.end());
  return batch;
}

// ---------------------------------------------------------------- model

GenRefModel::GenRefModel(PipelineConfig config) : config_(std::move(config)) {
  config_.validate();
  const ModelSizes& s = config_.sizes;
  Rng rng(config_.seed);

  shared_.embedding.weight = params_.add("embedding", xavier_uniform(s.vocab, s.embedding, rng));
  shared_.attention.w_regions = params_.add("attention.w_av", xavier_uniform(s.region_dim, s.attention, rng));
  shared_.attention.w_hidden = params_.add("attention.w_ah", xavier_uniform(s.hidden, s.attention, rng));
  shared_.attention.w_score = params_.add("attention.w_ay", xavier_uniform(s.attention, 1, rng));

  encoder_ = make_encoder(s.text_dim, s.fused_dim, rng);
  register_encoder(params_, encoder_);

  const std::size_t summary = 2 * s.hidden;
  const std::size_t attention_in = summary + s.hidden + s.region_dim + s.fused_dim + s.embedding;
  const std::size_t language_in = summary + s.region_dim + s.hidden + s.fused_dim;
  for (std::size_t i = 0; i < config_.block_count(); ++i) {
    const std::string prefix = "block" + std::to_string(i) + "." + block_name(i) + ".";
    BlockParams b;
    b.attention_lstm = make_lstm(attention_in, s.hidden, rng);
    b.language_lstm = make_lstm(language_in, s.hidden, rng);
    b.head = {xavier_uniform(s.hidden, s.vocab, rng), Tensor::zeros({s.vocab}, true)};
    b.attention_lstm.w_input = params_.add(prefix + "att_lstm.w_x", b.attention_lstm.w_input);
    b.attention_lstm.w_hidden = params_.add(prefix + "att_lstm.w_h", b.attention_lstm.w_hidden);
    b.attention_lstm.bias = params_.add(prefix + "att_lstm.b", b.attention_lstm.bias);
    b.language_lstm.w_input = params_.add(prefix + "lang_lstm.w_x", b.language_lstm.w_input);
    b.language_lstm.w_hidden = params_.add(prefix + "lang_lstm.w_h", b.language_lstm.w_hidden);
    b.language_lstm.bias = params_.add(prefix + "lang_lstm.b", b.language_lstm.bias);
    b.head.weight = params_.add(prefix + "head.w", b.head.weight);
    b.head.bias = params_.add(prefix + "head.b", b.head.bias);
    blocks_.push_back(std::move(b));
  }
}

std::size_t GenRefModel::expected_param_count(const PipelineConfig& config) {
  const ModelSizes& s = config.sizes;
  const std::size_t H = s.hidden, A = s.attention, E = s.embedding, D = s.region_dim, B = s.text_dim,
                    L = s.fused_dim, V = s.vocab;
  const std::size_t shared = V * E + D * A + H * A + A;
  const std::size_t encoder = 2 * (B * L + L) + 2 * L * L + 2 * (L * L + L);
  const std::size_t attention_in = 3 * H + D + L + E;
  const std::size_t language_in = 3 * H + D + L;
  const std::size_t lstm = (attention_in + H + 1) * 4 * H + (language_in + H + 1) * 4 * H;
  const std::size_t head = H * V + V;
  return shared + encoder + config.block_count() * (lstm + head);
}

FusedFeatures GenRefModel::encode(const Batch& batch) const {
  if (batch.size() == 0) throw std::invalid_argument("batch with zero samples");
  if (batch.regions.rows() % batch.size() != 0) throw ShapeError("batch regions do not divide evenly");
  const std::size_t k = batch.regions.rows() / batch.size();
  return encode_features(batch.regions, k, batch.question, batch.caption,
                         config_.image_enabled() && batch.has_image, config_.caption_enabled() && batch.has_caption,
                         encoder_);
}

LossBreakdown GenRefModel::forward_train(const Batch& batch, Mode mode, Rng* rng) const {
  if (batch.size() == 0) throw std::invalid_argument("forward_train: batch with zero samples");
  const std::size_t n = batch.size();
  const FusedFeatures features = encode(batch);
  const BlockContext ctx = BlockContext::from(features, shared_.attention);
  const StepOptions options{mode, mode == Mode::train ? config_.dropout : 0.0, rng};

  LossBreakdown out;
  out.steps.assign(n, 0);
  Tensor summary = Tensor::zeros({n, 2 * config_.sizes.hidden});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& gold = block_is_answer(i) ? batch.answers : batch.rationales;
    UnrollResult r = unroll_teacher_forced(blocks_[i], shared_, summary, ctx, gold, options);
    CrossEntropy ce = masked_cross_entropy(r.logits, gold);
    out.names.push_back(block_name(i));
    out.terms.push_back(ce.loss.item());
    out.per_sample.push_back(std::move(ce.per_sample));
    for (std::size_t b = 0; b < n; ++b) out.steps[b] += r.steps[b];
    out.loss = out.loss.defined() ? add(out.loss, ce.loss) : ce.loss;
    summary = r.summary;
  }
  out.total = out.loss.item();
  return out;
}

JointLikelihood GenRefModel::joint_log_likelihood(const MultimodalInput& input, const TokenSeq& answer,
                                                  const TokenSeq& rationale) const {
  NoGradGuard no_grad;
  const Batch batch = make_batch(std::span(&input, 1), std::span(&answer, 1), std::span(&rationale, 1));
  const FusedFeatures features = encode(batch);
  const BlockContext ctx = BlockContext::from(features, shared_.attention);
  const StepOptions options{Mode::eval, 0.0, nullptr};
  JointLikelihood out;
  Tensor summary = Tensor::zeros({1, 2 * config_.sizes.hidden});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& gold = block_is_answer(i) ? batch.answers : batch.rationales;
    UnrollResult r = unroll_teacher_forced(blocks_[i], shared_, summary, ctx, gold, options);
    CrossEntropy ce = masked_cross_entropy(r.logits, gold);
    double factor = 0.0;
    for (double lp : ce.step_log_probs[0]) factor += lp;
    out.factors.push_back(factor);
    out.step_log_probs.push_back(ce.step_log_probs[0]);
    out.log_prob += factor;
    summary = r.summary;
  }
  return out;
}

std::vector<GenerationOutput> GenRefModel::generate(const Batch& batch) const {
  NoGradGuard no_grad;
  const std::size_t n = batch.size();
  const FusedFeatures features = encode(batch);
  const BlockContext ctx = BlockContext::from(features, shared_.attention);
  std::vector<GenerationOutput> out(n);
  Tensor summary = Tensor::zeros({n, 2 * config_.sizes.hidden});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const bool answer = block_is_answer(i);
    const std::size_t max_len = answer ? config_.sizes.max_answer_len : config_.sizes.max_rationale_len;
    UnrollResult r = unroll_greedy(blocks_[i], shared_, summary, ctx, max_len);
    for (std::size_t b = 0; b < n; ++b) {
      (answer ? out[b].answers : out[b].rationales).push_back(r.tokens[b]);
      out[b].attention.push_back(std::move(r.attention[b]));
    }
    summary = r.summary;
  }
  return out;
}

GenerationOutput GenRefModel::generate(const MultimodalInput& input) const {
  // Gold sequences are unused by generation; placeholders satisfy make_batch.
  const TokenSeq placeholder = TokenSeq::gold({kEos});
  const Batch batch = make_batch(std::span(&input, 1), std::span(&placeholder, 1), std::span(&placeholder, 1));
  return generate(batch).front();
}

}  // namespace genref
