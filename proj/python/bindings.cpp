#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "genref/experiment.hpp"
#include "genref/metrics.hpp"
#include "genref/rating.hpp"
#include "genref/toyworld.hpp"
#include "genref/trainer.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace genref;

namespace {

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::object& o) {
  return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

std::vector<toyworld::Sample> samples_from_py(const py::list& rows) {
  std::vector<toyworld::Sample> out;
  for (const auto& row : rows) out.push_back(toyworld::sample_from_json(from_py(py::reinterpret_borrow<py::object>(row))));
  return out;
}

/// A trained or loaded pipeline with its vocabulary and feature seed.
struct Model {
  GenRefModel model;
  Vocab vocab;
  std::uint64_t feature_seed;

  std::vector<Example> encode(const py::list& rows) const {
    const auto samples = samples_from_py(rows);
    return encode_samples(samples, vocab, model.config(), feature_seed);
  }

  py::list generate(const py::list& rows) const {
    const auto examples = encode(rows);
    std::vector<GenerationOutput> outputs;
    {
      py::gil_scoped_release release;
      outputs = generate_all(model, examples);
    }
    py::list result;
    for (std::size_t i = 0; i < outputs.size(); ++i) {
      py::list answers, rationales;
      for (const auto& a : outputs[i].answers) answers.append(vocab.decode(a.content()));
      for (const auto& r : outputs[i].rationales) rationales.append(vocab.decode(r.content()));
      py::dict d;
      d["id"] = examples[i].id;
      d["answers"] = answers;
      d["rationales"] = rationales;
      d["attention"] = outputs[i].attention;
      result.append(d);
    }
    return result;
  }

  py::dict loss(const py::list& rows) const {
    const auto examples = encode(rows);
    const LossBreakdown lb = model.forward_train(make_batch(std::span<const Example>(examples)));
    py::dict d;
    d["names"] = lb.names;
    d["terms"] = lb.terms;
    d["total"] = lb.total;
    return d;
  }

  py::dict evaluate(const py::list& rows, std::uint64_t seed) const {
    const auto examples = encode(rows);
    EvalSummary e;
    {
      py::gil_scoped_release release;
      e = evaluate_generations(generate_all(model, examples), examples, vocab, seed);
    }
    return to_py(eval_summary_to_json(e));
  }
};

}  // namespace

PYBIND11_MODULE(_genref, m) {
  m.doc() = "Generation-refinement VQA with rationales: toy world, pipeline, metrics";

  // toy world
  m.def(
      "generate_dataset",
      [](std::uint64_t seed, std::size_t n, std::size_t k) {
        py::list out;
        for (const auto& s : toyworld::generate_dataset(seed, n, k).samples) out.append(to_py(toyworld::sample_to_json(s)));
        return out;
      },
      py::arg("seed"), py::arg("n"), py::arg("k") = 6, "Toy-world samples as dicts.");
  m.def(
      "dataset_jsonl",
      [](std::uint64_t seed, std::size_t n, std::size_t k) {
        return toyworld::dataset_to_jsonl(toyworld::generate_dataset(seed, n, k));
      },
      py::arg("seed"), py::arg("n"), py::arg("k") = 6);
  m.def(
      "derive_answer",
      [](const py::dict& sample) {
        const auto s = toyworld::sample_from_json(from_py(sample));
        return toyworld::derive_answer(s.scene, s.question);
      },
      py::arg("sample"), "Re-derives the answer from the scene alone.");

  // metrics
  m.def("rouge_l", &metrics::rouge_l, py::arg("hyp"), py::arg("ref"), py::arg("beta") = 1.2);
  m.def("lcs_length", &metrics::lcs_length, py::arg("a"), py::arg("b"));
  m.def(
      "cider",
      [](const std::vector<metrics::Tokens>& hyps, const std::vector<metrics::Tokens>& refs) {
        const auto r = metrics::cider(hyps, refs);
        return py::make_tuple(r.scores, r.mean);
      },
      py::arg("hyps"), py::arg("refs"), "Per-sample scores and their mean.");
  m.def("meteor_lite", &metrics::meteor_lite, py::arg("hyp"), py::arg("ref"));
  m.def(
      "evaluate",
      [](const std::vector<std::string>& hyps, const std::vector<std::string>& refs, std::uint64_t seed) {
        std::vector<std::string> vocabulary;
        for (const auto* texts : {&hyps, &refs}) {
          for (const auto& t : *texts) {
            for (auto& tok : tokenize(t)) vocabulary.push_back(std::move(tok));
          }
        }
        const metrics::EmbeddingProvider provider(vocabulary, 32, seed);
        return to_py(metrics::report_to_json(metrics::evaluate(hyps, refs, provider)));
      },
      py::arg("hyps"), py::arg("refs"), py::arg("seed") = 1, "Every metric over aligned texts.");
  m.def(
      "accuracy_report",
      [](const std::vector<std::pair<bool, bool>>& flags) {
        std::vector<metrics::AccuracyFlags> f;
        for (const auto& [a, r] : flags) f.push_back({a, r});
        const auto rep = metrics::accuracy_report(f);
        py::dict d;
        d["answer"] = rep.answer;
        d["rationale"] = rep.rationale;
        d["overall"] = rep.overall;
        return d;
      },
      py::arg("flags"), "Percentages from (answer_correct, rationale_correct) pairs.");
  m.def(
      "summarize_ratings",
      [](const std::vector<int>& values) {
        const auto s = rating::summarize(values);
        return py::make_tuple(s.mean, s.std);
      },
      py::arg("values"), "Mean and sample standard deviation.");

  // pipeline
  m.def(
      "toy_run_config", [] { return to_py(json(toy_run_config())); }, "The toy learnability configuration.");
  m.def(
      "grad_check",
      [](int n_refine, const std::string& variant, std::uint64_t seed) {
        PipelineGradCheck r;
        {
          py::gil_scoped_release release;
          r = grad_check_pipeline(tiny_config(n_refine, parse_variant(variant)), 1, seed);
        }
        py::dict d;
        d["max_relative_error"] = r.max_relative_error;
        d["checked"] = r.checked;
        d["worst_param"] = r.worst_param;
        return d;
      },
      py::arg("n_refine") = 1, py::arg("variant") = "qic", py::arg("seed") = 11,
      "Finite-difference check of the tiny pipeline.");

  py::class_<Model>(m, "Model")
      .def_property_readonly("config", [](const Model& self) { return to_py(json(self.model.config())); })
      .def_property_readonly("param_count", [](const Model& self) { return self.model.params().count(); })
      .def_property_readonly("vocab", [](const Model& self) { return self.vocab.tokens(); })
      .def("generate", &Model::generate, py::arg("samples"), "Greedy answers, rationales and attention per sample.")
      .def("loss", &Model::loss, py::arg("samples"), "Teacher-forced loss terms per block (eval mode).")
      .def("evaluate", &Model::evaluate, py::arg("samples"), py::arg("seed") = 1)
      .def("save", [](const Model& self, const std::filesystem::path& path) {
        save_checkpoint(self.model, self.vocab, path);
      });

  m.def(
      "train_toy",
      [](const py::dict& overrides) {
        RunConfig c = toy_run_config();
        merge_json(c, from_py(overrides));
        ToyData data = make_toy_data(c.data, c.pipeline);
        auto model = std::make_unique<Model>(Model{GenRefModel(c.pipeline), data.vocab, c.data.feature_seed});
        TrainingReport report;
        {
          py::gil_scoped_release release;
          report = train(model->model, data.train, data.val, c.train);
        }
        return py::make_tuple(std::move(model), to_py(report_to_json(report)));
      },
      py::arg("overrides") = py::dict(),
      "Trains on toy data; `overrides` is a partial {data, pipeline, train} config. Returns (model, report).");
  m.def(
      "load_checkpoint",
      [](const std::filesystem::path& path, std::uint64_t feature_seed) {
        const Checkpoint ckpt = read_checkpoint(path);
        return std::make_unique<Model>(Model{load_model(ckpt), checkpoint_vocab(ckpt), feature_seed});
      },
      py::arg("path"), py::arg("feature_seed") = DataConfig{}.feature_seed);

  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_ValueError);
}
