#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "genref/toyworld.hpp"

using namespace genref;
using namespace genref::toyworld;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("genref_test_" + name);
}

}  // namespace

TEST_CASE("dataset generation is deterministic per seed") {
  const Dataset a = generate_dataset(7, 3, 6);
  const Dataset b = generate_dataset(7, 3, 6);
  CHECK(a.samples == b.samples);
  CHECK(dataset_to_jsonl(a) == dataset_to_jsonl(b));
  const auto pa = temp_path("det_a.jsonl"), pb = temp_path("det_b.jsonl");
  write_dataset(a, pa);
  write_dataset(b, pb);
  CHECK(read_file(pa) == read_file(pb));
  CHECK(generate_dataset(8, 3, 6).samples != a.samples);
  std::filesystem::remove(pa);
  std::filesystem::remove(pb);
}

TEST_CASE("full corpus: grammar soundness, lengths, cited evidence") {
  const Dataset ds = generate_dataset(7, 2000, 6);
  REQUIRE(ds.samples.size() == 2000);
  std::set<std::string> ids;
  std::array<int, 4> type_count{};
  for (const Sample& s : ds.samples) {
    CAPTURE(s.question);
    ids.insert(s.id);
    type_count[static_cast<int>(s.type)]++;
    CHECK(s.scene.objects.size() == 6);
    CHECK(derive_answer(s.scene, s.question) == s.answer);
    const auto answer = tokenize(s.answer);
    const auto rationale = tokenize(s.rationale);
    CHECK(answer.size() >= 4);
    CHECK(answer.size() <= 8);
    CHECK(rationale.size() >= 6);
    CHECK(rationale.size() <= 12);
    // The attribute or position the answer states appears in the rationale.
    const std::string& key = answer.back();
    CHECK(std::find(rationale.begin(), rationale.end(), key) != rationale.end());
    std::set<std::pair<int, int>> cells;
    for (const Object& o : s.scene.objects) {
      CHECK(o.row >= 0);
      CHECK(o.row < kGridSize);
      CHECK(o.col >= 0);
      CHECK(o.col < kGridSize);
      cells.insert({o.row, o.col});
    }
    CHECK(cells.size() == 6);
  }
  CHECK(ids.size() == 2000);
  for (int c : type_count) CHECK(c > 200);
  CHECK(induce_vocab(ds.samples).size() - 4 <= 60);
}

TEST_CASE("object cells and descriptions") {
  const Object o{.shape = 2, .color = 3, .size = 1, .row = 2, .col = 1};
  CHECK(o.cell() == "b3");
  CHECK(o.description() == "big yellow cone");
}

TEST_CASE("vocabulary covers every corpus token and sits inside the grammar vocabulary") {
  const Dataset ds = generate_dataset(3, 500, 6);
  const Vocab v = induce_vocab(ds.samples);
  const auto grammar = grammar_vocabulary();
  const std::set<std::string> allowed(grammar.begin(), grammar.end());
  for (const Sample& s : ds.samples) {
    for (const std::string* text : {&s.question, &s.caption, &s.answer, &s.rationale}) {
      for (const auto& tok : tokenize(*text)) {
        CHECK(v.id(tok) != kUnk);
        CHECK(allowed.count(tok) == 1);
      }
    }
  }
  CHECK(v.tokens().size() == v.size());
}

TEST_CASE("JSONL round trip reproduces the samples and the header") {
  const Dataset ds = generate_dataset(11, 25, 6);
  const Dataset back = dataset_from_jsonl(dataset_to_jsonl(ds));
  CHECK(back.samples == ds.samples);
  CHECK(back.header.seed == 11);
  CHECK(back.header.n == 25);
  CHECK(back.header.k == 6);
  CHECK(back.header.grammar_version == kGrammarVersion);
  CHECK(back.header.vocab_hash == ds.header.vocab_hash);
  const auto path = temp_path("rt.jsonl");
  write_dataset(ds, path);
  CHECK(read_dataset(path).samples == ds.samples);
  std::filesystem::remove(path);
  CHECK_THROWS(dataset_from_jsonl("{\"not\":\"a header\"}\n"));
}

TEST_CASE("sample JSON carries the documented fields") {
  const Sample s = generate_dataset(1, 1, 6).samples[0];
  const auto j = sample_to_json(s);
  for (const char* key : {"id", "scene", "question", "caption", "answer", "rationale"}) CHECK(j.contains(key));
  CHECK(sample_from_json(j) == s);
}

TEST_CASE("encoding: shapes, determinism, one changed color touches one region row") {
  const Sample s = generate_dataset(5, 1, 6).samples[0];
  const EncodingDims dims;
  const MultimodalInput a = encode_sample(s, dims, 3);
  CHECK(a.regions.shape() == Shape{6, 16});
  CHECK(a.question.shape() == Shape{32});
  CHECK(a.caption.shape() == Shape{32});
  CHECK(encode_sample(s, dims, 3).regions.to_vector() == a.regions.to_vector());
  double norm = 0.0;
  for (double x : a.question.data()) norm += x * x;
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));

  Sample t = s;
  t.scene.objects[2].color = (t.scene.objects[2].color + 1) % 4;
  const MultimodalInput b = encode_sample(t, dims, 3);
  for (std::size_t r = 0; r < 6; ++r) {
    bool same = true;
    for (std::size_t d = 0; d < 16; ++d) same = same && a.regions.at(r, d) == b.regions.at(r, d);
    CHECK(same == (r != 2));
  }
  Sample wrong_k = s;
  wrong_k.scene.objects.pop_back();
  CHECK_THROWS(encode_sample(wrong_k, dims, 3));
}

TEST_CASE("encoding is injective over a 2000-sample corpus") {
  const Dataset ds = generate_dataset(7, 2000, 6);
  std::set<std::vector<double>> seen_v;
  std::set<std::string> scenes;
  for (const Sample& s : ds.samples) {
    if (!scenes.insert(sample_to_json(s)["scene"].dump()).second) continue;
    CHECK(seen_v.insert(encode_sample(s, {}, 3).regions.to_vector()).second);
  }
}

TEST_CASE("token vectors are seeded and bounded") {
  const auto a = token_vector("tok:red", 8, 1);
  CHECK(a == token_vector("tok:red", 8, 1));
  CHECK(a != token_vector("tok:red", 8, 2));
  CHECK(a != token_vector("tok:blue", 8, 1));
  for (double x : a) CHECK(std::abs(x) <= 1.0);
}

TEST_CASE("split: rounded sizes, seeded membership, disjoint cover") {
  const Dataset ds = generate_dataset(2, 100, 6);
  const Split s = split(ds.samples, {0.8, 0.1, 0.1}, 4);
  CHECK(s.train.size() == 80);
  CHECK(s.val.size() == 10);
  CHECK(s.test.size() == 10);
  std::set<std::string> ids;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (const auto& x : *part) CHECK(ids.insert(x.id).second);
  }
  CHECK(ids.size() == 100);
  CHECK(split(ds.samples, {0.8, 0.1, 0.1}, 4).val == s.val);
  CHECK(split(ds.samples, {0.8, 0.1, 0.1}, 5).val != s.val);
  const std::vector<Sample> tiny(ds.samples.begin(), ds.samples.begin() + 3);
  CHECK_THROWS(split(tiny, {0.9, 0.05, 0.05}, 1));
  CHECK_THROWS(split(ds.samples, {0.5, 0.1, 0.1}, 1));
}
