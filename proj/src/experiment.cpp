#include "genref/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <stdexcept>

namespace genref {

using nlohmann::json;

void DataConfig::validate() const {
  if (n_train == 0) throw std::invalid_argument("data: n_train must be positive");
  if (k == 0 || k > static_cast<std::size_t>(toyworld::kGridSize * toyworld::kGridSize)) {
    throw std::invalid_argument("data: k must be in 1..16");
  }
}

void to_json(json& j, const DataConfig& c) {
  j = json{{"seed", c.seed},       {"feature_seed", c.feature_seed}, {"n_train", c.n_train},
           {"n_val", c.n_val},     {"k", c.k}};
}

void from_json(const json& j, DataConfig& c) {
  DataConfig d;
  c.seed = j.value("seed", d.seed);
  c.feature_seed = j.value("feature_seed", d.feature_seed);
  c.n_train = j.value("n_train", d.n_train);
  c.n_val = j.value("n_val", d.n_val);
  c.k = j.value("k", d.k);
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"data", c.data}, {"pipeline", c.pipeline}, {"train", c.train}};
}

void merge_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "data" && key != "pipeline" && key != "train") {
      throw std::invalid_argument("config: unknown section '" + key + "'");
    }
    if (!value.is_object()) throw std::invalid_argument("config: section '" + key + "' must be an object");
  }
  json cur = c;
  cur.merge_patch(j);
  c.data = cur["data"].get<DataConfig>();
  c.pipeline = cur["pipeline"].get<PipelineConfig>();
  c.train = cur["train"].get<TrainConfig>();
}

RunConfig toy_run_config() {
  RunConfig c;
  c.pipeline.sizes.hidden = 64;
  c.pipeline.sizes.attention = 32;
  c.pipeline.sizes.embedding = 32;
  c.pipeline.sizes.region_dim = 32;
  c.pipeline.sizes.text_dim = 64;
  c.pipeline.sizes.fused_dim = 48;
  c.pipeline.sizes.regions = c.data.k;
  c.pipeline.dropout = 0.1;
  c.train.batch_size = 16;
  c.train.epochs = 30;
  c.train.lr0 = 3e-3;
  c.train.decay = 0.95;
  return c;
}

std::vector<Example> encode_samples(std::span<const toyworld::Sample> samples, const Vocab& vocab,
                                    const PipelineConfig& pipeline, std::uint64_t feature_seed) {
  toyworld::EncodingDims dims;
  dims.regions = pipeline.sizes.regions;
  dims.region_dim = pipeline.sizes.region_dim;
  dims.text_dim = pipeline.sizes.text_dim;
  return make_examples(samples, vocab, dims, feature_seed);
}

ToyData make_toy_data(const DataConfig& data, PipelineConfig& pipeline) {
  data.validate();
  // Samples are drawn i.i.d., so a prefix/suffix cut is already a random split.
  auto ds = toyworld::generate_dataset(data.seed, data.n_train + data.n_val, data.k);
  ToyData out;
  out.train_samples.assign(ds.samples.begin(), ds.samples.begin() + static_cast<std::ptrdiff_t>(data.n_train));
  out.val_samples.assign(ds.samples.begin() + static_cast<std::ptrdiff_t>(data.n_train), ds.samples.end());
  out.vocab = toyworld::induce_vocab(ds.samples);
  pipeline.sizes.vocab = out.vocab.size();
  pipeline.sizes.regions = data.k;
  pipeline.validate();
  out.train = encode_samples(out.train_samples, out.vocab, pipeline, data.feature_seed);
  out.val = encode_samples(out.val_samples, out.vocab, pipeline, data.feature_seed);
  return out;
}

metrics::EmbeddingProvider scoring_embeddings(const Vocab& vocab, std::uint64_t seed) {
  return metrics::EmbeddingProvider(vocab.tokens(), 32, seed);
}

namespace {

// Three options drawn from other samples' gold text, distinct from `gold` when
// the corpus allows it; the gold text sits at a random position.
std::pair<std::array<metrics::Tokens, 4>, std::size_t> make_options(const std::vector<metrics::Tokens>& pool,
                                                                     std::size_t index, std::mt19937_64& rng) {
  std::array<metrics::Tokens, 4> options;
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  const std::size_t gold_pos = std::uniform_int_distribution<std::size_t>(0, 3)(rng);
  for (std::size_t o = 0; o < 4; ++o) {
    if (o == gold_pos) {
      options[o] = pool[index];
      continue;
    }
    std::size_t j = pick(rng);
    for (int tries = 0; tries < 64 && (j == index || pool[j] == pool[index]); ++tries) j = pick(rng);
    options[o] = pool[j];
  }
  return {options, gold_pos};
}

}  // namespace

EvalSummary evaluate_texts(const TextPairs& t, const metrics::EmbeddingProvider& provider, std::uint64_t seed) {
  const std::size_t n = t.ids.size();
  if (t.hyp_answers.size() != n || t.hyp_rationales.size() != n || t.ref_answers.size() != n ||
      t.ref_rationales.size() != n) {
    throw std::invalid_argument("evaluate_texts: field sizes differ");
  }
  if (n == 0) throw std::invalid_argument("evaluate_texts: no samples");
  // An empty generation (EOS first) is scored as a single unknown token; the
  // metrics themselves reject empty input.
  std::vector<std::string> warnings;
  auto guard = [&](std::vector<std::string> texts, const char* field) {
    for (std::size_t i = 0; i < n; ++i) {
      if (tokenize(texts[i]).empty()) {
        texts[i] = "<unk>";
        warnings.push_back(std::string("empty generated ") + field + " for '" + t.ids[i] + "' scored as <unk>");
      }
    }
    return texts;
  };
  EvalSummary e;
  e.samples = n;
  e.answer = metrics::evaluate(guard(t.hyp_answers, "answer"), t.ref_answers, provider, t.ids);
  e.rationale = metrics::evaluate(guard(t.hyp_rationales, "rationale"), t.ref_rationales, provider, t.ids);
  e.warnings = warnings;

  std::vector<metrics::Tokens> pool_a, pool_r;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < n; ++i) {
    pool_a.push_back(tokenize(t.ref_answers[i]));
    pool_r.push_back(tokenize(t.ref_rationales[i]));
    exact += tokenize(t.hyp_answers[i]) == pool_a.back();
  }
  e.exact_match = static_cast<double>(exact) / static_cast<double>(n);
  std::mt19937_64 rng(seed);
  std::vector<metrics::AccuracyFlags> flags;
  for (std::size_t i = 0; i < n; ++i) {
    const auto [opt_a, gold_a] = make_options(pool_a, i, rng);
    const auto [opt_r, gold_r] = make_options(pool_r, i, rng);
    metrics::AccuracyFlags f;
    f.answer_correct = metrics::classify_by_similarity(tokenize(t.hyp_answers[i]), opt_a, provider).chosen == gold_a;
    f.rationale_correct =
        metrics::classify_by_similarity(tokenize(t.hyp_rationales[i]), opt_r, provider).chosen == gold_r;
    flags.push_back(f);
  }
  e.accuracy = metrics::accuracy_report(flags);
  return e;
}

EvalSummary evaluate_generations(const std::vector<GenerationOutput>& outputs, std::span<const Example> examples,
                                 const Vocab& vocab, std::uint64_t seed) {
  if (outputs.size() != examples.size()) throw std::invalid_argument("evaluate_generations: size mismatch");
  if (outputs.empty()) throw std::invalid_argument("evaluate_generations: no samples");
  TextPairs t;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    t.ids.push_back(examples[i].id);
    t.hyp_answers.push_back(vocab.decode(outputs[i].final_answer().content()));
    t.hyp_rationales.push_back(vocab.decode(outputs[i].final_rationale().content()));
    t.ref_answers.push_back(vocab.decode(examples[i].answer.content()));
    t.ref_rationales.push_back(vocab.decode(examples[i].rationale.content()));
  }
  EvalSummary e = evaluate_texts(t, scoring_embeddings(vocab, seed), seed);
  e.exact_match = answer_exact_match(outputs, examples, outputs.front().answers.size() - 1);
  return e;
}

json eval_summary_to_json(const EvalSummary& e) {
  return json{{"samples", e.samples},
              {"exact_match", e.exact_match},
              {"warnings", e.warnings},
              {"answer", metrics::report_to_json(e.answer)},
              {"rationale", metrics::report_to_json(e.rationale)},
              {"classification",
               {{"answer_pct", e.accuracy.answer},
                {"rationale_pct", e.accuracy.rationale},
                {"overall_pct", e.accuracy.overall}}}};
}

namespace {

std::string format_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-7s %-6s %9s %7s | %8s %8s %8s | %8s %8s %8s | %7s\n", "refine", "input",
                "val_loss", "EM", "A:CIDEr", "A:ROUGE", "A:METEOR", "R:CIDEr", "R:ROUGE", "R:METEOR", "seconds");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-7d %-6s %9.4f %7.4f | %8.4f %8.4f %8.4f | %8.4f %8.4f %8.4f | %7.1f\n",
                  r.n_refine, variant_label(r.variant).c_str(), r.val_loss, r.exact_match, r.answer.at("cider"),
                  r.answer.at("rouge_l"), r.answer.at("meteor_lite"), r.rationale.at("cider"),
                  r.rationale.at("rouge_l"), r.rationale.at("meteor_lite"), r.seconds);
    out << line;
  }
  return out.str();
}

std::string format_refinement(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  char line[256];
  out << "refinement 1 vs 0 (delta = with - without)\n";
  std::snprintf(line, sizeof line, "%-6s %12s %12s %12s %12s\n", "input", "dA:CIDEr", "dA:ROUGE", "dR:CIDEr",
                "dR:ROUGE");
  out << line;
  for (const auto& with : rows) {
    if (with.n_refine != 1) continue;
    for (const auto& without : rows) {
      if (without.n_refine != 0 || without.variant != with.variant) continue;
      std::snprintf(line, sizeof line, "%-6s %+12.4f %+12.4f %+12.4f %+12.4f\n", variant_label(with.variant).c_str(),
                    with.answer.at("cider") - without.answer.at("cider"),
                    with.answer.at("rouge_l") - without.answer.at("rouge_l"),
                    with.rationale.at("cider") - without.rationale.at("cider"),
                    with.rationale.at("rouge_l") - without.rationale.at("rouge_l"));
      out << line;
    }
  }
  return out.str();
}

}  // namespace

AblationResult run_ablation(const RunConfig& base, const std::function<void(const AblationRow&)>& on_row) {
  PipelineConfig pipeline = base.pipeline;
  const ToyData data = make_toy_data(base.data, pipeline);
  if (data.val.size() < 2) throw std::invalid_argument("ablation needs at least 2 validation samples");
  AblationResult result;
  for (int n_refine : {0, 1, 2}) {
    for (InputVariant v : {InputVariant::qic, InputVariant::qi, InputVariant::qc}) {
      const auto start = std::chrono::steady_clock::now();
      GenRefModel model(configure_variant(n_refine, v, pipeline));
      train(model, data.train, {}, base.train);
      AblationRow row;
      row.n_refine = n_refine;
      row.variant = v;
      row.val_loss = evaluate_loss(model, data.val);
      const auto summary = evaluate_generations(generate_all(model, data.val), data.val, data.vocab, base.data.seed);
      row.exact_match = summary.exact_match;
      row.answer = summary.answer.mean;
      row.rationale = summary.rationale.mean;
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (on_row) on_row(row);
      result.rows.push_back(std::move(row));
    }
  }
  result.table = format_table(result.rows);
  result.refinement = format_refinement(result.rows);
  return result;
}

json ablation_to_json(const AblationResult& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"n_refine", row.n_refine},
                    {"variant", variant_name(row.variant)},
                    {"val_loss", row.val_loss},
                    {"exact_match", row.exact_match},
                    {"answer", row.answer},
                    {"rationale", row.rationale},
                    {"seconds", row.seconds}});
  }
  return json{{"rows", rows}, {"table", r.table}, {"refinement", r.refinement}};
}

}  // namespace genref
