#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace genref::metrics {

using Tokens = std::vector<std::string>;

/// LCS F-measure, (1 + b^2) P R / (R + b^2 P).
double rouge_l(const Tokens& hyp, const Tokens& ref, double beta = 1.2);
std::size_t lcs_length(const Tokens& a, const Tokens& b);

struct CiderResult {
  std::vector<double> scores;
  double mean = 0.0;
};

/// Plain CIDEr with one reference per sample: TF-IDF n-gram cosine averaged
/// over n = 1..4, idf = log(N / df) over the references. Unscaled, no length
/// penalty. N-grams absent from every reference use df = 1.
CiderResult cider(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs);

struct MeteorDetail {
  double score = 0.0;
  std::size_t matches = 0;
  std::size_t chunks = 0;
  double precision = 0.0;
  double recall = 0.0;
  double fmean = 0.0;
  double penalty = 0.0;
  bool exhaustive = true;  // false when the chunk search hit its budget
};

/// Exact-match unigram METEOR: maximum matches, then fewest chunks;
/// F = 10PR / (R + 9P), penalty 0.5 (chunks / m)^3.
MeteorDetail meteor_lite_detail(const Tokens& hyp, const Tokens& ref);
double meteor_lite(const Tokens& hyp, const Tokens& ref);

/// Token vectors from a fixed table; anything outside it gets the UNK vector.
class EmbeddingProvider {
 public:
  /// Seeded hash vectors for `vocabulary`, dimension `dim`.
  EmbeddingProvider(const std::vector<std::string>& vocabulary, std::size_t dim, std::uint64_t seed);
  /// Explicit table; `unk` must have the table's dimension.
  EmbeddingProvider(std::map<std::string, std::vector<double>> table, std::vector<double> unk);

  std::size_t dim() const { return unk_.size(); }
  const std::vector<double>& vector(const std::string& token) const;
  bool known(const std::string& token) const { return table_.count(token) != 0; }
  /// Multiplies every vector, UNK included, by `factor`.
  EmbeddingProvider scaled(double factor) const;

 private:
  std::map<std::string, std::vector<double>> table_;
  std::vector<double> unk_;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b, bool* zero_norm = nullptr);
std::vector<double> mean_vector(const Tokens& tokens, const EmbeddingProvider& provider);
std::vector<double> extrema_vector(const Tokens& tokens, const EmbeddingProvider& provider);

struct EmbeddingScores {
  double emb_avg = 0.0;
  double vec_extrema = 0.0;
  double greedy_match = 0.0;
  std::vector<std::string> warnings;
};

EmbeddingScores embedding_metrics(const Tokens& hyp, const Tokens& ref, const EmbeddingProvider& provider);

struct Classification {
  std::size_t chosen = 0;
  std::array<double, 4> scores{};
};

/// Picks the option whose mean-vector cosine with `generated` is largest;
/// ties go to the lowest index.
Classification classify_by_similarity(const Tokens& generated, const std::array<Tokens, 4>& options,
                                      const EmbeddingProvider& provider);

struct AccuracyFlags {
  bool answer_correct = false;
  bool rationale_correct = false;
};

struct AccuracyReport {
  double answer = 0.0;     // percent
  double rationale = 0.0;  // percent
  double overall = 0.0;    // percent with both correct
  std::size_t samples = 0;
};

AccuracyReport accuracy_report(const std::vector<AccuracyFlags>& flags);
std::string accuracy_table(const AccuracyReport& r);

inline constexpr std::array<const char*, 6> kMetricNames = {"rouge_l",  "cider",       "meteor_lite",
                                                            "emb_avg",  "vec_extrema", "greedy_match"};

struct MetricReport {
  std::vector<std::string> ids;
  std::map<std::string, std::vector<double>> per_sample;  // metric -> values
  std::map<std::string, double> mean;
  std::vector<std::string> warnings;
};

/// Every metric over aligned hypothesis/reference texts (needs >= 2 pairs for CIDEr).
MetricReport evaluate(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                      const EmbeddingProvider& provider, std::vector<std::string> ids = {});

nlohmann::json report_to_json(const MetricReport& r);
/// Aligned columns: one header row, one row of means.
std::string report_table(const MetricReport& r, const std::string& label = "mean");

}  // namespace genref::metrics
