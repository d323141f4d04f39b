#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "genref/encoder.hpp"
#include "genref/nn.hpp"

namespace genref::toyworld {

inline constexpr int kGrammarVersion = 2;
inline constexpr int kGridSize = 4;

inline constexpr std::array<const char*, 3> kShapes = {"cube", "ball", "cone"};
inline constexpr std::array<const char*, 4> kColors = {"red", "blue", "green", "yellow"};
inline constexpr std::array<const char*, 2> kSizes = {"small", "big"};

struct Object {
  int shape = 0;
  int color = 0;
  int size = 0;
  int row = 0;  // 0..3, top to bottom
  int col = 0;  // 0..3, left to right

  std::string cell() const;         // "b3": column letter, row number
  std::string description() const;  // "big red cube"
  bool operator==(const Object&) const = default;
};

struct Scene {
  std::vector<Object> objects;
  bool operator==(const Scene&) const = default;
};

enum class QuestionType { color, shape, position, near };

std::string question_type_name(QuestionType q);

struct Sample {
  std::string id;
  Scene scene;
  QuestionType type = QuestionType::color;
  std::string question;
  std::string caption;
  std::string answer;
  std::string rationale;

  bool operator==(const Sample&) const = default;
};

struct DatasetHeader {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  int grammar_version = kGrammarVersion;
  std::string vocab_hash;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Sample> samples;
};

/// Every token the grammar can produce, in a fixed order.
std::vector<std::string> grammar_vocabulary();
std::string vocab_hash_hex(const Vocab& vocab);

/// Deterministic per seed. Scenes have `k` objects on distinct cells of the
/// 4x4 grid; answers and rationales come straight from the templates.
Dataset generate_dataset(std::uint64_t seed, std::size_t n, std::size_t k);

/// Re-derives the answer to `question` from the scene alone.
std::string derive_answer(const Scene& scene, const std::string& question);

/// Vocabulary over every text field of the samples, sorted.
Vocab induce_vocab(const std::vector<Sample>& samples);

nlohmann::json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);
std::string dataset_to_jsonl(const Dataset& ds);
Dataset dataset_from_jsonl(const std::string& text);
void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

struct EncodingDims {
  std::size_t regions = 6;      // k
  std::size_t region_dim = 16;  // D
  std::size_t text_dim = 32;    // B
};

/// Region i = shape + color + size + row + column + cell codes of object i; Q and C
/// are L2-normalized sums of per-token hash vectors. Codes are seeded.
MultimodalInput encode_sample(const Sample& sample, const EncodingDims& dims, std::uint64_t seed);

/// Seeded hash vector for one token (uniform in [-1, 1]).
std::vector<double> token_vector(const std::string& token, std::size_t dim, std::uint64_t seed);

struct Split {
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

/// Seeded permutation split; sizes are rounded fractions with the remainder
/// going to test. A nonzero fraction that yields an empty split is rejected.
Split split(const std::vector<Sample>& samples, std::array<double, 3> fractions, std::uint64_t seed);

}  // namespace genref::toyworld
