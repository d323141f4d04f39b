#include "genref/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace genref {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void TrainConfig::validate() const {
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw std::invalid_argument("lr0 must be positive");
  if (!(decay > 0.0 && decay <= 1.0)) throw std::invalid_argument("decay must be in (0, 1]");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr0", c.lr0},         {"decay", c.decay}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
           {"beta1", c.beta1},     {"beta2", c.beta2}, {"adam_eps", c.adam_eps},     {"clip_norm", c.clip_norm},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr0 = j.value("lr0", d.lr0);
  c.decay = j.value("decay", d.decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.seed = j.value("seed", d.seed);
}

json report_to_json(const TrainingReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    json row = {{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"seconds", e.seconds}};
    row["val_loss"] = std::isfinite(e.val_loss) ? json(e.val_loss) : json(nullptr);
    epochs.push_back(row);
  }
  return json{{"epochs", epochs},
              {"elapsed_seconds", r.elapsed_seconds},
              {"checkpoint", r.checkpoint.string()},
              {"stopped_early", r.stopped_early}};
}

std::vector<Example> make_examples(std::span<const toyworld::Sample> samples, const Vocab& vocab,
                                   const toyworld::EncodingDims& dims, std::uint64_t feature_seed) {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    out.push_back({s.id, toyworld::encode_sample(s, dims, feature_seed), TokenSeq::gold(vocab.encode(s.answer)),
                   TokenSeq::gold(vocab.encode(s.rationale))});
  }
  return out;
}

Batch make_batch(std::span<const Example* const> examples) {
  std::vector<MultimodalInput> inputs;
  std::vector<TokenSeq> answers, rationales;
  for (const Example* e : examples) {
    inputs.push_back(e->input);
    answers.push_back(e->answer);
    rationales.push_back(e->rationale);
  }
  return make_batch(inputs, answers, rationales);
}

Batch make_batch(std::span<const Example> examples) {
  std::vector<const Example*> ptrs;
  for (const auto& e : examples) ptrs.push_back(&e);
  return make_batch(std::span<const Example* const>(ptrs));
}

TrainingDiverged::TrainingDiverged(std::size_t epoch_, std::size_t batch_, double loss)
    : std::runtime_error("training diverged: non-finite loss " + std::to_string(loss) + " at epoch " +
                         std::to_string(epoch_) + ", batch " + std::to_string(batch_)),
      epoch(epoch_),
      batch(batch_) {}

// ---------------------------------------------------------------- Adam

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step(const GradientMap& grads, double lr, double grad_scale) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto g = grads.view(params_[i]);
    auto w = params_[i].mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j] * grad_scale;
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

double gradient_norm(const GradientMap& grads, std::span<const Tensor> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : grads.view(p)) sq += g * g;
  }
  return std::sqrt(sq);
}

// ---------------------------------------------------------------- training

TrainingReport train(GenRefModel& model, std::span<const Example> train_set, std::span<const Example> val_set,
                     const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();

  const std::vector<Tensor> params = model.params().tensors();
  Adam adam(params, config.beta1, config.beta2, config.adam_eps);
  Rng shuffle_rng(config.seed);
  Rng dropout_rng(config.seed ^ 0x5deece66dULL);

  TrainingReport report;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  double lr = config.lr0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<const Example*> members;
      for (std::size_t i = begin; i < end; ++i) members.push_back(&train_set[order[i]]);
      const Batch batch = make_batch(std::span<const Example* const>(members));
      const LossBreakdown loss = model.forward_train(batch, Mode::train, &dropout_rng);
      if (!std::isfinite(loss.total)) throw TrainingDiverged(epoch, batch_index, loss.total);
      const GradientMap grads = backward(loss.loss);
      const double norm = gradient_norm(grads, params);
      if (!std::isfinite(norm)) throw TrainingDiverged(epoch, batch_index, norm);
      const double scale = config.clip_norm > 0.0 && norm > config.clip_norm ? config.clip_norm / norm : 1.0;
      adam.step(grads, lr, scale);
      loss_sum += loss.total * static_cast<double>(members.size());
    }
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(train_set.size());
    stats.val_loss = val_set.empty() ? std::numeric_limits<double>::quiet_NaN()
                                     : evaluate_loss(model, val_set, std::max<std::size_t>(config.batch_size, 64));
    stats.seconds = std::chrono::duration<double>(Clock::now() - epoch_start).count();
    report.epochs.push_back(stats);
    lr *= config.decay;
    if (on_epoch && !on_epoch(stats)) {
      report.stopped_early = epoch + 1 < config.epochs;
      break;
    }
  }
  report.elapsed_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

double evaluate_loss(const GenRefModel& model, std::span<const Example> examples, std::size_t batch_size) {
  if (examples.empty()) throw std::invalid_argument("evaluate_loss: no examples");
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t begin = 0; begin < examples.size(); begin += batch_size) {
    const auto chunk = examples.subspan(begin, std::min(batch_size, examples.size() - begin));
    total += model.forward_train(make_batch(chunk)).total * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(examples.size());
}

std::vector<GenerationOutput> generate_all(const GenRefModel& model, std::span<const Example> examples,
                                           std::size_t batch_size) {
  std::vector<GenerationOutput> out;
  out.reserve(examples.size());
  for (std::size_t begin = 0; begin < examples.size(); begin += batch_size) {
    const auto chunk = examples.subspan(begin, std::min(batch_size, examples.size() - begin));
    for (auto& g : model.generate(make_batch(chunk))) out.push_back(std::move(g));
  }
  return out;
}

double answer_exact_match(std::span<const GenerationOutput> outputs, std::span<const Example> examples,
                          std::size_t answer_index) {
  if (outputs.size() != examples.size() || outputs.empty()) {
    throw std::invalid_argument("answer_exact_match: outputs and examples differ in count");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& answers = outputs[i].answers;
    if (answer_index >= answers.size()) throw std::out_of_range("answer_exact_match: no such answer block");
    const auto got = answers[answer_index].content();
    const auto want = examples[i].answer.content();
    hits += std::equal(got.begin(), got.end(), want.begin(), want.end());
  }
  return static_cast<double>(hits) / static_cast<double>(outputs.size());
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[4] = {'G', 'R', 'C', 'K'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint is truncated or corrupt: unexpected end of file reading ") + what);
    }
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const GenRefModel& model, const Vocab& vocab, const std::filesystem::path& path) {
  std::vector<std::string> words(vocab.tokens().begin() + std::min<std::size_t>(4, vocab.size()), vocab.tokens().end());
  const std::string header = json{{"config", model.config()}, {"vocab", words}}.dump();
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header.size());
  out += header;
  const auto& entries = model.params().entries();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    const auto data = t.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write checkpoint " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw CheckpointError("write failed for checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string bytes = buf.str();
  Reader r(bytes);
  if (r.bytes(4, "magic") != std::string(kMagic, 4)) throw CheckpointError("not a checkpoint file: bad magic bytes");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = r.get<std::uint64_t>("header length");
  Checkpoint ckpt;
  try {
    const json header = json::parse(r.bytes(header_len, "header"));
    ckpt.config = header.at("config").get<PipelineConfig>();
    ckpt.vocab = header.at("vocab").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is corrupt: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>("parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("parameter name length");
    std::string name = r.bytes(name_len, "parameter name");
    const auto ndim = r.get<std::uint32_t>("parameter rank");
    if (ndim > 8) throw CheckpointError("checkpoint is corrupt: parameter '" + name + "' has rank " + std::to_string(ndim));
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(r.get<std::uint64_t>("parameter shape"));
    const std::size_t n = shape_numel(shape);
    const std::string raw = r.bytes(n * sizeof(double), "parameter data");
    std::vector<double> data(n);
    std::memcpy(data.data(), raw.data(), raw.size());
    ckpt.params.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw CheckpointError("checkpoint is corrupt: trailing bytes after the last parameter");
  return ckpt;
}

void load_params_into(GenRefModel& model, const Checkpoint& ckpt) {
  const auto& entries = model.params().entries();
  if (entries.size() != ckpt.params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.params.size()) + " parameters, model expects " +
                          std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [name, target] = entries[i];
    const auto& [stored_name, stored] = ckpt.params[i];
    if (name != stored_name) {
      throw CheckpointError("checkpoint parameter " + std::to_string(i) + " is '" + stored_name + "', expected '" +
                            name + "'");
    }
    if (target.shape() != stored.shape()) {
      throw CheckpointError("shape mismatch for '" + name + "': checkpoint " + shape_str(stored.shape()) +
                            ", model " + shape_str(target.shape()));
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor target = entries[i].second;
    const auto src = ckpt.params[i].second.data();
    std::copy(src.begin(), src.end(), target.mutable_data().begin());
  }
}

GenRefModel load_model(const Checkpoint& ckpt) {
  GenRefModel model(ckpt.config);
  load_params_into(model, ckpt);
  return model;
}

Vocab checkpoint_vocab(const Checkpoint& ckpt) { return Vocab(ckpt.vocab); }

// ---------------------------------------------------------------- grad check

PipelineConfig tiny_config(int n_refine, InputVariant variant) {
  PipelineConfig c;
  c.n_refine = n_refine;
  c.variant = variant;
  c.dropout = 0.0;
  c.seed = 5;
  c.sizes.hidden = 8;
  c.sizes.attention = 4;
  c.sizes.embedding = 6;
  c.sizes.region_dim = 5;
  c.sizes.text_dim = 6;
  c.sizes.fused_dim = 4;
  c.sizes.regions = 3;
  c.sizes.vocab = 20;
  c.sizes.max_answer_len = 3;
  c.sizes.max_rationale_len = 4;
  c.validate();
  return c;
}

PipelineGradCheck grad_check_pipeline(const PipelineConfig& config, std::size_t n_samples, std::uint64_t seed,
                                      double epsilon) {
  if (n_samples == 0) throw std::invalid_argument("grad_check_pipeline: n_samples must be at least 1");
  const ModelSizes& s = config.sizes;
  GenRefModel model(config);
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto random_values = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = unit(rng);
    return v;
  };
  // Ordinary tokens only; lengths vary between 1 and the limit so masking is exercised.
  auto random_seq = [&](std::size_t max_len) {
    std::uniform_int_distribution<std::size_t> len(1, max_len);
    std::uniform_int_distribution<TokenId> tok(kUnk + 1, s.vocab - 1);
    std::vector<TokenId> ids(len(rng) - 1);
    for (auto& t : ids) t = tok(rng);
    ids.push_back(kEos);
    return TokenSeq::gold(std::move(ids));
  };
  std::vector<MultimodalInput> inputs;
  std::vector<TokenSeq> answers, rationales;
  for (std::size_t i = 0; i < n_samples; ++i) {
    MultimodalInput in;
    in.regions = Tensor::from({s.regions, s.region_dim}, random_values(s.regions * s.region_dim));
    in.question = Tensor::from({s.text_dim}, random_values(s.text_dim));
    in.caption = Tensor::from({s.text_dim}, random_values(s.text_dim));
    inputs.push_back(in);
    answers.push_back(random_seq(s.max_answer_len));
    rationales.push_back(random_seq(s.max_rationale_len));
  }
  Batch batch = make_batch(inputs, answers, rationales);
  batch.regions = batch.regions.detach(true);

  std::vector<Tensor> checked = model.params().tensors();
  checked.push_back(batch.regions);
  auto loss = [&] { return model.forward_train(batch).loss; };

  PipelineGradCheck out;
  const GradientMap grads = backward(loss());
  for (double g : grads.view(batch.regions)) out.region_grad_max_abs = std::max(out.region_grad_max_abs, std::abs(g));

  const GradCheckResult r = grad_check_detail(loss, checked, epsilon);
  const auto& entries = model.params().entries();
  out.max_relative_error = r.max_relative_error;
  out.max_elementwise_error = r.max_elementwise_error;
  out.checked = r.elements;
  out.worst_param = r.worst_param < entries.size() ? entries[r.worst_param].first : "regions";
  return out;
}

}  // namespace genref
