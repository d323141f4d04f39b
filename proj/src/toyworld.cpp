#include "genref/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace genref::toyworld {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// xorshift64* stream.
class XorShift {
 public:
  explicit XorShift(std::uint64_t seed) : state_(seed ? seed : 0x2545f4914f6cdd1dULL) {}
  std::uint64_t next() {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545f4914f6cdd1dULL;
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

int index_of(const auto& names, const std::string& token) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (token == names[i]) return static_cast<int>(i);
  }
  return -1;
}

bool reading_order_less(const Object& a, const Object& b) {
  return a.row != b.row ? a.row < b.row : a.col < b.col;
}

bool same_kind(const Object& a, const Object& b) {
  return a.shape == b.shape && a.color == b.color && a.size == b.size;
}

bool is_unique(const Scene& scene, std::size_t i) {
  for (std::size_t j = 0; j < scene.objects.size(); ++j) {
    if (j != i && same_kind(scene.objects[i], scene.objects[j])) return false;
  }
  return true;
}

const Object* object_at(const Scene& scene, const std::string& cell) {
  for (const auto& o : scene.objects) {
    if (o.cell() == cell) return &o;
  }
  return nullptr;
}

const Object* object_described(const Scene& scene, const std::string& size, const std::string& color,
                               const std::string& shape) {
  const Object* found = nullptr;
  for (const auto& o : scene.objects) {
    if (kSizes[o.size] == size && kColors[o.color] == color && kShapes[o.shape] == shape) {
      if (found) throw std::invalid_argument("description '" + size + " " + color + " " + shape + "' is ambiguous");
      found = &o;
    }
  }
  if (!found) throw std::invalid_argument("no object matches '" + size + " " + color + " " + shape + "'");
  return found;
}

std::string color_answer(const Object& o) { return std::string("the ") + kShapes[o.shape] + " is " + kColors[o.color]; }
std::string shape_answer(const Object& o) { return std::string("it is a ") + kShapes[o.shape]; }
std::string position_answer(const Object& o) { return "it is at " + o.cell(); }
std::string near_answer(const Object& subject, const Object& other) {
  const char* relation = subject.row == other.row ? "left of" : "above";
  return std::string("it is ") + relation + " the " + kShapes[other.shape];
}

std::string attribute_rationale(const Object& o) { return "the object at " + o.cell() + " is a " + o.description(); }

Scene random_scene(std::size_t k, std::mt19937_64& rng) {
  std::vector<int> cells(kGridSize * kGridSize);
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  std::uniform_int_distribution<int> shape(0, kShapes.size() - 1);
  std::uniform_int_distribution<int> color(0, kColors.size() - 1);
  std::uniform_int_distribution<int> size(0, kSizes.size() - 1);
  Scene scene;
  for (std::size_t i = 0; i < k; ++i) {
    Object o;
    o.shape = shape(rng);
    o.color = color(rng);
    o.size = size(rng);
    o.row = cells[i] / kGridSize;
    o.col = cells[i] % kGridSize;
    scene.objects.push_back(o);
  }
  return scene;
}

std::size_t pick(std::size_t n, std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

// Fills question/answer/rationale for `type`; false when the scene cannot
// support that question type.
bool pose(QuestionType type, Sample& s, std::mt19937_64& rng) {
  const Scene& scene = s.scene;
  switch (type) {
    case QuestionType::color:
    case QuestionType::shape: {
      const Object& o = scene.objects[pick(scene.objects.size(), rng)];
      const bool color = type == QuestionType::color;
      s.question = std::string("what ") + (color ? "color" : "shape") + " is the object at " + o.cell() + " ?";
      s.answer = color ? color_answer(o) : shape_answer(o);
      s.rationale = attribute_rationale(o);
      return true;
    }
    case QuestionType::position: {
      std::vector<std::size_t> unique;
      for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        if (is_unique(scene, i)) unique.push_back(i);
      }
      if (unique.empty()) return false;
      const Object& o = scene.objects[unique[pick(unique.size(), rng)]];
      s.question = "where is the " + o.description() + " ?";
      s.answer = position_answer(o);
      s.rationale = "the " + o.description() + " is at " + o.cell();
      return true;
    }
    case QuestionType::near: {
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        for (std::size_t j = 0; j < scene.objects.size(); ++j) {
          const Object& a = scene.objects[i];
          const Object& b = scene.objects[j];
          if (!reading_order_less(a, b)) continue;
          if (std::abs(a.row - b.row) + std::abs(a.col - b.col) == 1) pairs.emplace_back(i, j);
        }
      }
      if (pairs.empty()) return false;
      const auto [i, j] = pairs[pick(pairs.size(), rng)];
      const Object& a = scene.objects[i];
      const Object& b = scene.objects[j];
      // Objects are named by cell: a bag of words over two full descriptions
      // would not say which attributes belong together.
      s.question = "why is the object at " + a.cell() + " near the object at " + b.cell() + " ?";
      s.answer = near_answer(a, b);
      s.rationale = std::string("the ") + kShapes[a.shape] + " is at " + a.cell() + " and the " + kShapes[b.shape] +
                    " is at " + b.cell();
      return true;
    }
  }
  return false;
}

QuestionType parse_type(const std::string& name) {
  for (auto t : {QuestionType::color, QuestionType::shape, QuestionType::position, QuestionType::near}) {
    if (question_type_name(t) == name) return t;
  }
  throw std::invalid_argument("unknown question type '" + name + "'");
}

}  // namespace

std::string Object::cell() const {
  return std::string(1, static_cast<char>('a' + col)) + std::to_string(row + 1);
}

std::string Object::description() const {
  return std::string(kSizes[size]) + " " + kColors[color] + " " + kShapes[shape];
}

std::string question_type_name(QuestionType q) {
  switch (q) {
    case QuestionType::color:
      return "color";
    case QuestionType::shape:
      return "shape";
    case QuestionType::position:
      return "position";
    case QuestionType::near:
      return "near";
  }
  return "color";
}

std::vector<std::string> grammar_vocabulary() {
  std::vector<std::string> words = {"what", "color", "shape", "is",    "the", "object", "at",    "?",
                                    "it",   "a",     "where", "why",   "near", "left",  "of",    "above",
                                    "and",  "there"};
  for (auto s : kShapes) words.emplace_back(s);
  for (auto c : kColors) words.emplace_back(c);
  for (auto z : kSizes) words.emplace_back(z);
  for (int r = 0; r < kGridSize; ++r) {
    for (int c = 0; c < kGridSize; ++c) words.push_back(Object{0, 0, 0, r, c}.cell());
  }
  return words;
}

std::string vocab_hash_hex(const Vocab& vocab) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << vocab.hash();
  return os.str();
}

Dataset generate_dataset(std::uint64_t seed, std::size_t n, std::size_t k) {
  if (n == 0) throw std::invalid_argument("generate_dataset: n must be at least 1");
  if (k == 0 || k > static_cast<std::size_t>(kGridSize * kGridSize)) {
    throw std::invalid_argument("generate_dataset: k must be in [1, 16]");
  }
  std::mt19937_64 rng(seed);
  Dataset ds;
  auto words = grammar_vocabulary();
  std::sort(words.begin(), words.end());
  ds.header = {seed, n, k, kGrammarVersion, vocab_hash_hex(Vocab(words))};
  constexpr QuestionType kTypes[] = {QuestionType::color, QuestionType::shape, QuestionType::position,
                                     QuestionType::near};
  while (ds.samples.size() < n) {
    Sample s;
    s.scene = random_scene(k, rng);
    const std::size_t first = pick(4, rng);
    bool posed = false;
    for (std::size_t attempt = 0; attempt < 4 && !posed; ++attempt) {
      s.type = kTypes[(first + attempt) % 4];
      posed = pose(s.type, s, rng);
    }
    if (!posed) continue;
    const Object& described = s.scene.objects[pick(k, rng)];
    s.caption = "there is a " + described.description() + " at " + described.cell();
    std::ostringstream id;
    id << "toy-" << seed << "-" << std::setw(6) << std::setfill('0') << ds.samples.size();
    s.id = id.str();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::string derive_answer(const Scene& scene, const std::string& question) {
  const auto t = tokenize(question);
  auto expect = [&](bool ok) {
    if (!ok) throw std::invalid_argument("question does not match any template: '" + question + "'");
  };
  expect(t.size() >= 5 && t.back() == "?");
  if (t[0] == "what") {
    expect(t.size() == 8 && t[2] == "is" && t[3] == "the" && t[4] == "object" && t[5] == "at");
    const Object* o = object_at(scene, t[6]);
    if (!o) throw std::invalid_argument("no object at " + t[6]);
    if (t[1] == "color") return color_answer(*o);
    expect(t[1] == "shape");
    return shape_answer(*o);
  }
  if (t[0] == "where") {
    expect(t.size() == 7 && t[1] == "is" && t[2] == "the");
    return position_answer(*object_described(scene, t[3], t[4], t[5]));
  }
  expect(t[0] == "why" && t.size() == 12 && t[1] == "is" && t[2] == "the" && t[3] == "object" && t[4] == "at" &&
         t[6] == "near" && t[7] == "the" && t[8] == "object" && t[9] == "at");
  const Object* a = object_at(scene, t[5]);
  const Object* b = object_at(scene, t[10]);
  if (!a || !b) throw std::invalid_argument("no object at " + (a ? t[10] : t[5]));
  return near_answer(*a, *b);
}

Vocab induce_vocab(const std::vector<Sample>& samples) {
  std::set<std::string> words;
  for (const auto& s : samples) {
    for (const auto* text : {&s.question, &s.caption, &s.answer, &s.rationale}) {
      for (auto& tok : tokenize(*text)) words.insert(std::move(tok));
    }
  }
  const std::vector<std::string> sorted(words.begin(), words.end());
  return Vocab(sorted);
}

// ---------------------------------------------------------------- JSONL

json sample_to_json(const Sample& s) {
  json objects = json::array();
  for (const auto& o : s.scene.objects) {
    objects.push_back({{"shape", kShapes[o.shape]},
                       {"color", kColors[o.color]},
                       {"size", kSizes[o.size]},
                       {"row", o.row},
                       {"col", o.col},
                       {"cell", o.cell()}});
  }
  return json{{"id", s.id},
              {"scene", {{"objects", objects}, {"grid", kGridSize}}},
              {"qtype", question_type_name(s.type)},
              {"question", s.question},
              {"caption", s.caption},
              {"answer", s.answer},
              {"rationale", s.rationale}};
}

Sample sample_from_json(const json& j) {
  Sample s;
  s.id = j.at("id").get<std::string>();
  s.type = parse_type(j.value("qtype", std::string("color")));
  s.question = j.at("question").get<std::string>();
  s.caption = j.at("caption").get<std::string>();
  s.answer = j.at("answer").get<std::string>();
  s.rationale = j.at("rationale").get<std::string>();
  for (const auto& jo : j.at("scene").at("objects")) {
    Object o;
    o.shape = index_of(kShapes, jo.at("shape").get<std::string>());
    o.color = index_of(kColors, jo.at("color").get<std::string>());
    o.size = index_of(kSizes, jo.at("size").get<std::string>());
    o.row = jo.at("row").get<int>();
    o.col = jo.at("col").get<int>();
    if (o.shape < 0 || o.color < 0 || o.size < 0 || o.row < 0 || o.row >= kGridSize || o.col < 0 ||
        o.col >= kGridSize) {
      throw std::invalid_argument("sample " + s.id + ": invalid object attributes");
    }
    s.scene.objects.push_back(o);
  }
  return s;
}

std::string dataset_to_jsonl(const Dataset& ds) {
  std::string out;
  const json header = {{"header",
                        {{"format", "genref-toyworld"},
                         {"grammar_version", ds.header.grammar_version},
                         {"seed", ds.header.seed},
                         {"n", ds.header.n},
                         {"k", ds.header.k},
                         {"vocab_hash", ds.header.vocab_hash}}}};
  out += header.dump();
  out += '\n';
  for (const auto& s : ds.samples) {
    out += sample_to_json(s).dump();
    out += '\n';
  }
  return out;
}

Dataset dataset_from_jsonl(const std::string& text) {
  Dataset ds;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    if (first && j.contains("header")) {
      const auto& h = j.at("header");
      ds.header.seed = h.value("seed", std::uint64_t{0});
      ds.header.n = h.value("n", std::size_t{0});
      ds.header.k = h.value("k", std::size_t{0});
      ds.header.grammar_version = h.value("grammar_version", kGrammarVersion);
      ds.header.vocab_hash = h.value("vocab_hash", std::string());
      first = false;
      continue;
    }
    first = false;
    ds.samples.push_back(sample_from_json(j));
  }
  if (ds.header.n == 0) ds.header.n = ds.samples.size();
  if (ds.header.k == 0 && !ds.samples.empty()) ds.header.k = ds.samples.front().scene.objects.size();
  return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << dataset_to_jsonl(ds);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return dataset_from_jsonl(buf.str());
}

// ---------------------------------------------------------------- features

std::vector<double> token_vector(const std::string& token, std::size_t dim, std::uint64_t seed) {
  XorShift gen(splitmix64(fnv1a(token) ^ splitmix64(seed)));
  std::vector<double> v(dim);
  for (double& x : v) x = 2.0 * gen.uniform() - 1.0;
  return v;
}

MultimodalInput encode_sample(const Sample& sample, const EncodingDims& dims, std::uint64_t seed) {
  const std::size_t k = dims.regions;
  if (sample.scene.objects.size() != k) {
    throw std::invalid_argument("encode_sample: sample " + sample.id + " has " +
                                std::to_string(sample.scene.objects.size()) + " objects, expected " + std::to_string(k));
  }
  std::vector<double> regions(k * dims.region_dim, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const Object& o = sample.scene.objects[i];
    const std::string codes[] = {std::string("shape:") + kShapes[o.shape], std::string("color:") + kColors[o.color],
                                 std::string("size:") + kSizes[o.size], "row:" + std::to_string(o.row),
                                 "col:" + std::to_string(o.col), "cell:" + o.cell()};
    for (const auto& code : codes) {
      const auto v = token_vector(code, dims.region_dim, seed);
      for (std::size_t d = 0; d < dims.region_dim; ++d) regions[i * dims.region_dim + d] += v[d];
    }
  }
  auto bag = [&](const std::string& text) {
    std::vector<double> acc(dims.text_dim, 0.0);
    for (const auto& tok : tokenize(text)) {
      const auto v = token_vector("tok:" + tok, dims.text_dim, seed);
      for (std::size_t d = 0; d < dims.text_dim; ++d) acc[d] += v[d];
    }
    double norm = 0.0;
    for (double x : acc) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0) {
      for (double& x : acc) x /= norm;
    }
    return acc;
  };
  MultimodalInput in;
  in.regions = Tensor::from({k, dims.region_dim}, std::move(regions));
  in.question = Tensor::from({dims.text_dim}, bag(sample.question));
  in.caption = Tensor::from({dims.text_dim}, bag(sample.caption));
  return in;
}

Split split(const std::vector<Sample>& samples, std::array<double, 3> fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  for (double f : fractions) {
    if (f < 0) throw std::invalid_argument("split: negative fraction");
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("split: fractions must sum to 1");
  const std::size_t n = samples.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_val = std::min(n - std::min(n, n_train),
                              static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n))));
  const std::size_t n_test = n - std::min(n, n_train) - n_val;
  const std::size_t sizes[] = {std::min(n, n_train), n_val, n_test};
  for (int i = 0; i < 3; ++i) {
    if (fractions[i] > 0 && sizes[i] == 0) {
      throw std::invalid_argument("split: fraction " + std::to_string(fractions[i]) + " of " + std::to_string(n) +
                                  " samples yields an empty split");
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Split out;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < sizes[0] ? out.train : (i < sizes[0] + sizes[1] ? out.val : out.test);
    dst.push_back(samples[order[i]]);
  }
  return out;
}

}  // namespace genref::toyworld
