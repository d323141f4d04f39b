// genref: dataset generation, training, generation, evaluation, ablations,
// gradient checks, attention export and the rating service.

#include <atomic>
#include <chrono>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "genref/experiment.hpp"
#include "genref/metrics.hpp"
#include "genref/rating.hpp"
#include "genref/rating_server.hpp"
#include "genref/toyworld.hpp"
#include "genref/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace genref;

namespace {

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> rows;
  std::size_t n = 0;
  for (const auto& line : read_lines(path)) {
    ++n;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return rows;
}

/// Options every subcommand shares, plus the run manifest.
struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = "out";
  CLI::Option* seed_opt = nullptr;

  void add_to(CLI::App* app, std::uint64_t default_seed) {
    seed = default_seed;
    app->add_option("--config", config_path, "canonical JSON config file")->check(CLI::ExistingFile);
    seed_opt = app->add_option("--seed", seed, "random seed")->capture_default_str();
    app->add_option("--out", out, "output directory")->capture_default_str();
  }
  bool seed_given() const { return seed_opt->count() > 0; }
  json config_file() const { return config_path.empty() ? json::object() : json::parse(read_text(config_path)); }
};

class Manifest {
 public:
  Manifest(std::string command, const Common& common, std::vector<std::string> argv)
      : command_(std::move(command)), out_(common.out), argv_(std::move(argv)), started_(now_iso8601()) {
    fs::create_directories(out_);
    seed_ = common.seed;
  }

  void set_config(json config) { config_ = std::move(config); }
  fs::path output(const std::string& name) {
    outputs_.push_back(name);
    return out_ / name;
  }
  void write(const std::string& status, const std::string& error = {}) {
    json j = {{"command", command_}, {"argv", argv_},       {"config", config_},   {"seed", seed_},
              {"started_at", started_}, {"finished_at", now_iso8601()}, {"outputs", outputs_},
              {"status", status}};
    if (!error.empty()) j["error"] = error;
    write_atomic(out_ / "manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  fs::path out_;
  std::vector<std::string> argv_;
  std::string started_;
  json config_ = json::object();
  std::uint64_t seed_ = 0;
  std::vector<std::string> outputs_;
};

// Flags that override the run config.
struct RunFlags {
  std::string variant;
  int refine = 1;
  std::size_t epochs = 0, batch = 0, n_train = 0, n_val = 0;
  double lr = 0.0, dropout = 0.0, decay = 0.0;
  std::uint64_t data_seed = 0;
  CLI::Option *variant_opt, *refine_opt, *epochs_opt, *batch_opt, *lr_opt, *dropout_opt, *decay_opt, *n_train_opt,
      *n_val_opt, *data_seed_opt;

  void add_to(CLI::App* app) {
    variant_opt = app->add_option("--variant", variant, "input variant")->check(CLI::IsMember({"qic", "qi", "qc"}));
    refine_opt = app->add_option("--refine", refine, "refinement rounds")->check(CLI::Range(0, 2));
    epochs_opt = app->add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber);
    batch_opt = app->add_option("--batch", batch, "batch size")->check(CLI::PositiveNumber);
    lr_opt = app->add_option("--lr", lr, "initial learning rate")->check(CLI::PositiveNumber);
    dropout_opt = app->add_option("--dropout", dropout, "dropout probability")->check(CLI::Range(0.0, 0.99));
    decay_opt = app->add_option("--decay", decay, "per-epoch learning-rate factor")->check(CLI::Range(1e-9, 1.0));
    n_train_opt = app->add_option("--n-train", n_train, "training samples")->check(CLI::PositiveNumber);
    n_val_opt = app->add_option("--n-val", n_val, "validation samples");
    data_seed_opt = app->add_option("--data-seed", data_seed, "toy-world generator seed");
  }

  // Flags > config file > built-in defaults.
  RunConfig resolve(const Common& common) const {
    RunConfig c = toy_run_config();
    merge_json(c, common.config_file());
    if (variant_opt->count()) c.pipeline.variant = parse_variant(variant);
    if (refine_opt->count()) c.pipeline.n_refine = refine;
    if (epochs_opt->count()) c.train.epochs = epochs;
    if (batch_opt->count()) c.train.batch_size = batch;
    if (lr_opt->count()) c.train.lr0 = lr;
    if (dropout_opt->count()) c.pipeline.dropout = dropout;
    if (decay_opt->count()) c.train.decay = decay;
    if (n_train_opt->count()) c.data.n_train = n_train;
    if (n_val_opt->count()) c.data.n_val = n_val;
    if (data_seed_opt->count()) c.data.seed = data_seed;
    if (common.seed_given()) {
      c.pipeline.seed = common.seed;
      c.train.seed = common.seed;
    }
    c.train.validate();
    c.pipeline.validate();
    c.data.validate();
    return c;
  }
};

void print_epoch(const EpochStats& e) {
  std::cerr << "epoch " << e.epoch << " lr " << e.lr << " train_loss " << e.train_loss;
  if (std::isfinite(e.val_loss)) std::cerr << " val_loss " << e.val_loss;
  std::cerr << " (" << e.seconds << " s)\n";
}

std::vector<Example> load_examples(const fs::path& data_path, const Vocab& vocab, const PipelineConfig& pipeline,
                                   std::uint64_t feature_seed, std::vector<toyworld::Sample>* samples_out = nullptr) {
  const auto ds = toyworld::read_dataset(data_path);
  if (ds.samples.empty()) throw std::runtime_error(data_path.string() + " has no samples");
  if (samples_out) *samples_out = ds.samples;
  return encode_samples(ds.samples, vocab, pipeline, feature_seed);
}

json generation_row(const Example& ex, const toyworld::Sample& s, const GenerationOutput& g, const Vocab& vocab) {
  json answers = json::array(), rationales = json::array();
  for (const auto& a : g.answers) answers.push_back(vocab.decode(a.content()));
  for (const auto& r : g.rationales) rationales.push_back(vocab.decode(r.content()));
  return json{{"id", ex.id},
              {"question", s.question},
              {"answer", s.answer},
              {"rationale", s.rationale},
              {"generated_answer", answers.back()},
              {"generated_rationale", rationales.back()},
              {"answers", answers},
              {"rationales", rationales}};
}

// ---------------------------------------------------------------- subcommands

int cmd_data_gen(const Common& common, std::size_t n, std::size_t k, Manifest& m) {
  m.set_config({{"seed", common.seed}, {"n", n}, {"k", k}});
  const auto ds = toyworld::generate_dataset(common.seed, n, k);
  toyworld::write_dataset(ds, m.output("dataset.jsonl"));
  std::cout << "wrote " << n << " samples to " << (fs::path(common.out) / "dataset.jsonl").string() << "\n";
  return 0;
}

int cmd_train(const Common& common, const RunFlags& flags, const std::string& data_path, Manifest& m) {
  RunConfig c = flags.resolve(common);
  ToyData data;
  if (data_path.empty()) {
    data = make_toy_data(c.data, c.pipeline);
  } else {
    // The last n_val samples of the file validate; the rest train.
    const auto ds = toyworld::read_dataset(data_path);
    const std::size_t n_val = std::min(c.data.n_val, ds.samples.size() / 2);
    const auto cut = ds.samples.end() - static_cast<std::ptrdiff_t>(n_val);
    data.train_samples.assign(ds.samples.begin(), cut);
    data.val_samples.assign(cut, ds.samples.end());
    data.vocab = toyworld::induce_vocab(ds.samples);
    c.pipeline.sizes.vocab = data.vocab.size();
    c.pipeline.sizes.regions = ds.header.k;
    c.data.k = ds.header.k;
    c.data.n_train = data.train_samples.size();
    c.data.n_val = n_val;
    data.train = encode_samples(data.train_samples, data.vocab, c.pipeline, c.data.feature_seed);
    data.val = encode_samples(data.val_samples, data.vocab, c.pipeline, c.data.feature_seed);
  }
  json resolved = c;
  if (!data_path.empty()) resolved["data"]["file"] = data_path;
  m.set_config(resolved);
  write_atomic(m.output("config.json"), resolved.dump(2) + "\n");

  GenRefModel model(c.pipeline);
  std::cerr << "training " << model.params().count() << " parameters on " << data.train.size() << " samples\n";
  TrainingReport report = train(model, data.train, data.val, c.train, [](const EpochStats& e) {
    print_epoch(e);
    return true;
  });
  report.checkpoint = m.output("model.grck");
  save_checkpoint(model, data.vocab, report.checkpoint);
  write_atomic(m.output("train_report.json"), report_to_json(report).dump(2) + "\n");

  if (!data.val.empty()) {
    toyworld::Dataset val;
    val.header = {c.data.seed, data.val_samples.size(), c.data.k, toyworld::kGrammarVersion,
                  toyworld::vocab_hash_hex(data.vocab)};
    val.samples = data.val_samples;
    toyworld::write_dataset(val, m.output("val.jsonl"));
    if (data.val.size() >= 2) {
      const auto summary = evaluate_generations(generate_all(model, data.val), data.val, data.vocab, common.seed);
      write_atomic(m.output("val_eval.json"), eval_summary_to_json(summary).dump(2) + "\n");
      std::cout << "validation exact match (final answer): " << summary.exact_match << "\n";
    }
  }
  std::cout << "checkpoint: " << report.checkpoint.string() << "\n";
  return 0;
}

int cmd_generate(const Common& common, const std::string& ckpt_path, const std::string& data_path, Manifest& m) {
  RunConfig c = toy_run_config();
  merge_json(c, common.config_file());
  const Checkpoint ckpt = read_checkpoint(ckpt_path);
  const GenRefModel model = load_model(ckpt);
  const Vocab vocab = checkpoint_vocab(ckpt);
  m.set_config({{"checkpoint", ckpt_path},
                {"data", data_path},
                {"feature_seed", c.data.feature_seed},
                {"pipeline", ckpt.config}});
  std::vector<toyworld::Sample> samples;
  const auto examples = load_examples(data_path, vocab, ckpt.config, c.data.feature_seed, &samples);
  const auto outputs = generate_all(model, examples);
  std::string lines;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    lines += generation_row(examples[i], samples[i], outputs[i], vocab).dump() + "\n";
  }
  write_atomic(m.output("generations.jsonl"), lines);
  std::cout << "generated " << outputs.size() << " samples; final-answer exact match "
            << answer_exact_match(outputs, examples, outputs.front().answers.size() - 1) << "\n";
  return 0;
}

int cmd_eval(const Common& common, const std::string& hyps, const std::string& refs, const std::string& generations,
             Manifest& m) {
  if (generations.empty() == (hyps.empty() || refs.empty())) {
    throw CLI::ValidationError("eval", "give either --generations or both --hyps and --refs");
  }
  if (!generations.empty()) {
    m.set_config({{"generations", generations}, {"seed", common.seed}});
    TextPairs t;
    std::vector<std::string> vocabulary;
    for (const auto& row : read_jsonl(generations)) {
      t.ids.push_back(row.at("id").get<std::string>());
      t.hyp_answers.push_back(row.at("generated_answer").get<std::string>());
      t.hyp_rationales.push_back(row.at("generated_rationale").get<std::string>());
      t.ref_answers.push_back(row.at("answer").get<std::string>());
      t.ref_rationales.push_back(row.at("rationale").get<std::string>());
      for (const auto* text : {&t.ref_answers.back(), &t.ref_rationales.back(), &t.hyp_answers.back(),
                               &t.hyp_rationales.back()}) {
        for (auto& tok : tokenize(*text)) vocabulary.push_back(std::move(tok));
      }
    }
    const metrics::EmbeddingProvider provider(vocabulary, 32, common.seed);
    const auto summary = evaluate_texts(t, provider, common.seed);
    write_atomic(m.output("eval.json"), eval_summary_to_json(summary).dump(2) + "\n");
    const std::string table = metrics::report_table(summary.answer, "answer") +
                              metrics::report_table(summary.rationale, "rationale") + "\n" +
                              metrics::accuracy_table(summary.accuracy);
    write_atomic(m.output("eval.txt"), table);
    std::cout << table << "exact match (final answer): " << summary.exact_match << "\n";
    return 0;
  }
  m.set_config({{"hyps", hyps}, {"refs", refs}, {"seed", common.seed}});
  const auto h = read_lines(hyps);
  const auto r = read_lines(refs);
  if (h.size() != r.size()) {
    throw std::runtime_error("hypotheses (" + std::to_string(h.size()) + ") and references (" +
                             std::to_string(r.size()) + ") differ in length");
  }
  std::vector<std::string> vocabulary;
  for (const auto* lines : {&h, &r}) {
    for (const auto& line : *lines) {
      for (auto& tok : tokenize(line)) vocabulary.push_back(std::move(tok));
    }
  }
  const metrics::EmbeddingProvider provider(vocabulary, 32, common.seed);
  const auto report = metrics::evaluate(h, r, provider);
  write_atomic(m.output("eval.json"), metrics::report_to_json(report).dump(2) + "\n");
  const std::string table = metrics::report_table(report);
  write_atomic(m.output("eval.txt"), table);
  std::cout << table;
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int cmd_ablate(const Common& common, const RunFlags& flags, Manifest& m) {
  const RunConfig c = flags.resolve(common);
  m.set_config(json(c));
  const auto result = run_ablation(c, [](const AblationRow& row) {
    std::cerr << "refine " << row.n_refine << " " << variant_label(row.variant) << ": val_loss " << row.val_loss
              << " exact_match " << row.exact_match << " (" << row.seconds << " s)\n";
  });
  write_atomic(m.output("ablation.json"), ablation_to_json(result).dump(2) + "\n");
  write_atomic(m.output("ablation.txt"), result.table + "\n" + result.refinement);
  std::cout << result.table << "\n" << result.refinement;
  return 0;
}

int cmd_gradcheck(const Common& common, int refine, const std::string& variant, std::size_t samples, Manifest& m) {
  const PipelineConfig pc = tiny_config(refine, parse_variant(variant));
  m.set_config({{"pipeline", pc}, {"samples", samples}, {"seed", common.seed}, {"epsilon", 1e-3}});
  const auto start = std::chrono::steady_clock::now();
  const auto r = grad_check_pipeline(pc, samples, common.seed);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool pass = r.max_relative_error < 1e-4;
  write_atomic(m.output("gradcheck.json"), json{{"max_relative_error", r.max_relative_error},
                                                {"max_elementwise_error", r.max_elementwise_error},
                                                {"checked", r.checked},
                                                {"worst_param", r.worst_param},
                                                {"seconds", seconds},
                                                {"pass", pass}}
                                                   .dump(2) +
                                               "\n");
  std::cout << "max relative error: " << r.max_relative_error << " (" << r.checked << " scalars, worst "
            << r.worst_param << ", " << seconds << " s)\n";
  if (!pass) {
    std::cerr << "error: max relative error " << r.max_relative_error << " is not below 1e-4\n";
    return 1;
  }
  return 0;
}

std::atomic<bool> g_stop{false};

int cmd_serve(const Common& common, const std::string& items_path, const std::string& generations, int port,
              const std::string& host, std::size_t playlist_size, Manifest& m) {
  if (items_path.empty() == generations.empty()) {
    throw CLI::ValidationError("serve-ratings", "give exactly one of --items or --generations");
  }
  std::vector<rating::Item> items;
  if (!items_path.empty()) {
    for (const auto& row : read_jsonl(items_path)) items.push_back(rating::item_from_json(row));
  } else {
    for (const auto& row : read_jsonl(generations)) {
      const std::string id = row.at("id").get<std::string>();
      const std::string q = row.at("question").get<std::string>();
      items.push_back({id, q, row.at("generated_answer").get<std::string>(),
                       row.at("generated_rationale").get<std::string>(), rating::Source::generated});
      items.push_back({id, q, row.at("answer").get<std::string>(), row.at("rationale").get<std::string>(),
                       rating::Source::ground_truth});
    }
  }
  rating::StudyConfig sc;
  sc.seed = common.seed;
  sc.playlist_size = playlist_size;
  sc.log_path = m.output("ratings.jsonl");
  m.set_config({{"items", items_path}, {"generations", generations}, {"host", host}, {"port", port},
                {"playlist_size", playlist_size}, {"seed", common.seed}});
  rating::Study study(std::move(items), sc);
  rating::Server server(study);
  const int bound = server.bind(host, port);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  m.write("running");
  std::cout << "serving ratings on http://" << host << ":" << bound << "\n" << std::flush;
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  std::thread watcher([&] {
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  });
  server.run();
  g_stop = true;
  watcher.join();
  if (!study.records().empty()) {
    write_atomic(m.output("aggregate.json"), rating::aggregate_to_json(study.aggregate()).dump(2) + "\n");
  }
  return 0;
}

int cmd_attn_dump(const Common& common, const std::string& ckpt_path, const std::string& data_path,
                  std::size_t index, Manifest& m) {
  RunConfig c = toy_run_config();
  merge_json(c, common.config_file());
  const Checkpoint ckpt = read_checkpoint(ckpt_path);
  const GenRefModel model = load_model(ckpt);
  const Vocab vocab = checkpoint_vocab(ckpt);
  m.set_config({{"checkpoint", ckpt_path}, {"data", data_path}, {"index", index},
                {"feature_seed", c.data.feature_seed}});
  std::vector<toyworld::Sample> samples;
  const auto examples = load_examples(data_path, vocab, ckpt.config, c.data.feature_seed, &samples);
  if (index >= examples.size()) {
    throw std::runtime_error("index " + std::to_string(index) + " out of range (" +
                             std::to_string(examples.size()) + " samples)");
  }
  const auto g = model.generate(examples[index].input);
  json blocks = json::array();
  for (std::size_t b = 0; b < g.attention.size(); ++b) {
    const TokenSeq& seq = block_is_answer(b) ? g.answers[b / 2] : g.rationales[b / 2];
    json tokens = json::array();
    for (TokenId id : seq.content()) tokens.push_back(vocab.token(id));
    blocks.push_back({{"block", block_name(b)}, {"tokens", tokens}, {"attention", g.attention[b]}});
  }
  json cells = json::array();
  for (const auto& o : samples[index].scene.objects) cells.push_back(o.cell() + " " + o.description());
  const json out = {{"id", examples[index].id},
                    {"question", samples[index].question},
                    {"regions", cells},
                    {"blocks", blocks}};
  write_atomic(m.output("attention.json"), out.dump(2) + "\n");
  std::cout << "wrote attention for " << examples[index].id << " (" << blocks.size() << " blocks)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"genref: generation-refinement VQA with rationales"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");
  const std::vector<std::string> args(argv, argv + argc);

  std::map<std::string, Common> commons;
  auto common_for = [&](CLI::App* sub, const std::string& name, std::uint64_t seed) -> Common& {
    Common& c = commons[name];
    c.add_to(sub, seed);
    return c;
  };

  auto* data = app.add_subcommand("data", "toy-world dataset tools");
  data->require_subcommand(1);
  auto* data_gen = data->add_subcommand("gen", "generate a toy-world dataset");
  Common& data_common = common_for(data_gen, "data gen", 7);
  std::size_t n = 100, k = 6;
  data_gen->add_option("--n", n, "number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  data_gen->add_option("--k", k, "objects per scene")->capture_default_str()->check(CLI::Range(1, 16));

  auto* train_cmd = app.add_subcommand("train", "train a pipeline on toy-world data");
  Common& train_common = common_for(train_cmd, "train", 1);
  RunFlags train_flags;
  train_flags.add_to(train_cmd);
  std::string train_data;
  train_cmd->add_option("--data", train_data, "dataset JSONL (default: generate from the config)")
      ->check(CLI::ExistingFile);

  auto* gen_cmd = app.add_subcommand("generate", "greedy answers and rationales from a checkpoint");
  Common& gen_common = common_for(gen_cmd, "generate", 1);
  std::string gen_ckpt, gen_data;
  gen_cmd->add_option("--checkpoint", gen_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  gen_cmd->add_option("--data", gen_data, "dataset JSONL")->required()->check(CLI::ExistingFile);

  auto* eval_cmd = app.add_subcommand("eval", "score generated text against references");
  Common& eval_common = common_for(eval_cmd, "eval", 1);
  std::string hyps, refs, eval_generations;
  eval_cmd->add_option("--hyps", hyps, "hypotheses, one per line")->check(CLI::ExistingFile);
  eval_cmd->add_option("--refs", refs, "references, one per line")->check(CLI::ExistingFile);
  eval_cmd->add_option("--generations", eval_generations, "output of `generate`")->check(CLI::ExistingFile);

  auto* ablate_cmd = app.add_subcommand("ablate", "train and score the refinement x input-variant grid");
  Common& ablate_common = common_for(ablate_cmd, "ablate", 1);
  RunFlags ablate_flags;
  ablate_flags.add_to(ablate_cmd);

  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full pipeline");
  Common& gc_common = common_for(gc_cmd, "gradcheck", 11);
  bool tiny = false;
  int gc_refine = 1;
  std::string gc_variant = "qic";
  std::size_t gc_samples = 1;
  gc_cmd->add_flag("--tiny", tiny, "use the tiny configuration")->required();
  gc_cmd->add_option("--refine", gc_refine, "refinement rounds")->capture_default_str()->check(CLI::Range(0, 2));
  gc_cmd->add_option("--variant", gc_variant, "input variant")
      ->capture_default_str()
      ->check(CLI::IsMember({"qic", "qi", "qc"}));
  gc_cmd->add_option("--samples", gc_samples, "random samples in the loss")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  auto* serve_cmd = app.add_subcommand("serve-ratings", "run the rating study HTTP service");
  Common& serve_common = common_for(serve_cmd, "serve-ratings", 1);
  std::string items_path, serve_generations, host = "127.0.0.1";
  int port = 8080;
  std::size_t playlist_size = 50;
  serve_cmd->add_option("--items", items_path, "rating items JSONL")->check(CLI::ExistingFile);
  serve_cmd->add_option("--generations", serve_generations, "output of `generate`")->check(CLI::ExistingFile);
  serve_cmd->add_option("--port", port, "port, 0 picks a free one")->capture_default_str()->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", host, "bind address")->capture_default_str();
  serve_cmd->add_option("--playlist", playlist_size, "tasks per session")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);

  auto* attn_cmd = app.add_subcommand("attn-dump", "per-step attention weights as JSON");
  Common& attn_common = common_for(attn_cmd, "attn-dump", 1);
  std::string attn_ckpt, attn_data;
  std::size_t attn_index = 0;
  attn_cmd->add_option("--checkpoint", attn_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  attn_cmd->add_option("--data", attn_data, "dataset JSONL")->required()->check(CLI::ExistingFile);
  attn_cmd->add_option("--index", attn_index, "sample index")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  std::string name;
  if (data_gen->parsed()) {
    name = "data gen";
  } else {
    for (auto* sub : app.get_subcommands()) name = sub->get_name();
  }
  const Common* common = &commons.at(name);

  std::unique_ptr<Manifest> manifest;
  try {
    manifest = std::make_unique<Manifest>(name, *common, args);
    int code = 0;
    if (name == "data gen") code = cmd_data_gen(data_common, n, k, *manifest);
    if (name == "train") code = cmd_train(train_common, train_flags, train_data, *manifest);
    if (name == "generate") code = cmd_generate(gen_common, gen_ckpt, gen_data, *manifest);
    if (name == "eval") code = cmd_eval(eval_common, hyps, refs, eval_generations, *manifest);
    if (name == "ablate") code = cmd_ablate(ablate_common, ablate_flags, *manifest);
    if (name == "gradcheck") code = cmd_gradcheck(gc_common, gc_refine, gc_variant, gc_samples, *manifest);
    if (name == "serve-ratings") {
      code = cmd_serve(serve_common, items_path, serve_generations, port, host, playlist_size, *manifest);
    }
    if (name == "attn-dump") code = cmd_attn_dump(attn_common, attn_ckpt, attn_data, attn_index, *manifest);
    manifest->write(code == 0 ? "ok" : "failed");
    return code;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (manifest) manifest->write("failed", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (manifest) {
      try {
        manifest->write("failed", e.what());
      } catch (const std::exception&) {
      }
    }
    return 1;
  }
}
