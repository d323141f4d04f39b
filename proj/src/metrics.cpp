#include "genref/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "genref/nn.hpp"

namespace genref::metrics {

namespace {

void require_nonempty(const Tokens& t, const char* what, const char* fn) {
  if (t.empty()) throw std::invalid_argument(std::string(fn) + ": empty " + what);
}

using NgramCounts = std::map<std::string, double>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    std::string key;
    for (std::size_t j = i; j < i + n; ++j) {
      if (j > i) key += '\x1f';
      key += t[j];
    }
    out[key] += 1.0;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- ROUGE-L

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& hyp, const Tokens& ref, double beta) {
  require_nonempty(hyp, "hypothesis", "rouge_l");
  require_nonempty(ref, "reference", "rouge_l");
  const auto lcs = static_cast<double>(lcs_length(hyp, ref));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(hyp.size());
  const double r = lcs / static_cast<double>(ref.size());
  const double b2 = beta * beta;
  return (1.0 + b2) * p * r / (r + b2 * p);
}

// ---------------------------------------------------------------- CIDEr

CiderResult cider(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("cider: hypothesis and reference counts differ");
  if (refs.size() < 2) throw std::invalid_argument("cider: corpus needs at least 2 samples for document frequencies");
  const auto n_docs = static_cast<double>(refs.size());
  CiderResult out;
  out.scores.assign(hyps.size(), 0.0);
  for (std::size_t n = 1; n <= 4; ++n) {
    std::vector<NgramCounts> ref_counts;
    std::map<std::string, double> df;
    for (const auto& r : refs) {
      ref_counts.push_back(ngrams(r, n));
      for (const auto& [g, c] : ref_counts.back()) df[g] += 1.0;
    }
    auto idf = [&](const std::string& g) {
      auto it = df.find(g);
      return std::log(n_docs / (it == df.end() ? 1.0 : it->second));
    };
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      const NgramCounts h = ngrams(hyps[i], n);
      const NgramCounts& r = ref_counts[i];
      double dot = 0.0, hh = 0.0, rr = 0.0;
      for (const auto& [g, c] : h) {
        const double w = c * idf(g);
        hh += w * w;
        auto it = r.find(g);
        if (it != r.end()) dot += w * it->second * idf(g);
      }
      for (const auto& [g, c] : r) {
        const double w = c * idf(g);
        rr += w * w;
      }
      const double cos = hh > 0.0 && rr > 0.0 ? dot / (std::sqrt(hh) * std::sqrt(rr)) : 0.0;
      out.scores[i] += cos / 4.0;
    }
  }
  out.mean = std::accumulate(out.scores.begin(), out.scores.end(), 0.0) / n_docs;
  return out;
}

// ---------------------------------------------------------------- METEOR-lite

namespace {

// Branch and bound over one-to-one exact alignments of size `target`, in hyp
// order, minimizing the number of chunks.
class ChunkSearch {
 public:
  ChunkSearch(const Tokens& hyp, const Tokens& ref, std::size_t target)
      : hyp_(hyp), ref_(ref), target_(target), used_(ref.size(), false) {
    for (std::size_t i = 0; i < hyp.size(); ++i) {
      std::vector<std::size_t> c;
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (hyp[i] == ref[j]) c.push_back(j);
      }
      candidates_.push_back(std::move(c));
    }
    // Suffix bound on how many matches are still reachable.
    reachable_.assign(hyp.size() + 1, 0);
    for (std::size_t i = hyp.size(); i-- > 0;) reachable_[i] = reachable_[i + 1] + (candidates_[i].empty() ? 0 : 1);
  }

  std::size_t run(std::size_t greedy_chunks) {
    best_ = greedy_chunks;
    dfs(0, 0, 0, kNone);
    return best_;
  }
  bool exhausted() const { return nodes_ <= kBudget; }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  static constexpr std::size_t kBudget = 2'000'000;

  void dfs(std::size_t i, std::size_t matched, std::size_t chunks, std::size_t prev_ref) {
    if (++nodes_ > kBudget) return;
    if (matched == target_) {
      best_ = std::min(best_, chunks);
      return;
    }
    if (chunks >= best_) return;
    if (i == hyp_.size() || matched + reachable_[i] < target_) return;
    for (std::size_t j : candidates_[i]) {
      if (used_[j]) continue;
      used_[j] = true;
      const bool extends = prev_ref != kNone && j == prev_ref + 1;
      dfs(i + 1, matched + 1, chunks + (extends ? 0 : 1), j);
      used_[j] = false;
    }
    // Leave hyp token i unaligned; the next alignment starts a new chunk.
    dfs(i + 1, matched, chunks, kNone);
  }

  const Tokens& hyp_;
  const Tokens& ref_;
  std::size_t target_;
  std::vector<bool> used_;
  std::vector<std::vector<std::size_t>> candidates_;
  std::vector<std::size_t> reachable_;
  std::size_t best_ = 0;
  std::size_t nodes_ = 0;
};

// Left-to-right alignment to the lowest unused matching ref position,
// preferring the position right after the previous one.
std::size_t greedy_chunks(const Tokens& hyp, const Tokens& ref) {
  std::vector<bool> used(ref.size(), false);
  std::size_t chunks = 0;
  std::size_t prev = static_cast<std::size_t>(-1);
  for (const auto& tok : hyp) {
    std::size_t pick = static_cast<std::size_t>(-1);
    if (prev + 1 < ref.size() && !used[prev + 1] && ref[prev + 1] == tok) {
      pick = prev + 1;
    } else {
      for (std::size_t j = 0; j < ref.size(); ++j) {
        if (!used[j] && ref[j] == tok) {
          pick = j;
          break;
        }
      }
    }
    if (pick == static_cast<std::size_t>(-1)) {
      prev = static_cast<std::size_t>(-1);
      continue;
    }
    if (prev == static_cast<std::size_t>(-1) || pick != prev + 1) ++chunks;
    used[pick] = true;
    prev = pick;
  }
  return chunks;
}

}  // namespace

MeteorDetail meteor_lite_detail(const Tokens& hyp, const Tokens& ref) {
  require_nonempty(hyp, "hypothesis", "meteor_lite");
  require_nonempty(ref, "reference", "meteor_lite");
  std::map<std::string, std::size_t> hc, rc;
  for (const auto& t : hyp) ++hc[t];
  for (const auto& t : ref) ++rc[t];
  MeteorDetail d;
  for (const auto& [t, c] : hc) {
    auto it = rc.find(t);
    if (it != rc.end()) d.matches += std::min(c, it->second);
  }
  if (d.matches == 0) return d;
  // Greedy alignment keeps every hyp token that can match, so it already has
  // the maximum match count; the search only lowers the chunk count.
  ChunkSearch search(hyp, ref, d.matches);
  d.chunks = search.run(greedy_chunks(hyp, ref));
  d.exhaustive = search.exhausted();
  const auto m = static_cast<double>(d.matches);
  d.precision = m / static_cast<double>(hyp.size());
  d.recall = m / static_cast<double>(ref.size());
  d.fmean = 10.0 * d.precision * d.recall / (d.recall + 9.0 * d.precision);
  d.penalty = 0.5 * std::pow(static_cast<double>(d.chunks) / m, 3.0);
  d.score = d.fmean * (1.0 - d.penalty);
  return d;
}

double meteor_lite(const Tokens& hyp, const Tokens& ref) { return meteor_lite_detail(hyp, ref).score; }

// ---------------------------------------------------------------- embeddings

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<double> hashed_vector(const std::string& key, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 gen(fnv1a(key) ^ (seed * 0x9e3779b97f4a7c15ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  for (double& x : v) x = normal(gen);
  return v;
}

}  // namespace

EmbeddingProvider::EmbeddingProvider(const std::vector<std::string>& vocabulary, std::size_t dim,
                                     std::uint64_t seed) {
  if (dim == 0) throw std::invalid_argument("EmbeddingProvider: dimension must be positive");
  for (const auto& tok : vocabulary) table_[tok] = hashed_vector("tok:" + tok, dim, seed);
  unk_ = hashed_vector("<unk>", dim, seed);
}

EmbeddingProvider::EmbeddingProvider(std::map<std::string, std::vector<double>> table, std::vector<double> unk)
    : table_(std::move(table)), unk_(std::move(unk)) {
  if (unk_.empty()) throw std::invalid_argument("EmbeddingProvider: UNK vector must be non-empty");
  for (const auto& [tok, v] : table_) {
    if (v.size() != unk_.size()) {
      throw std::invalid_argument("EmbeddingProvider: vector for '" + tok + "' has dimension " +
                                  std::to_string(v.size()) + ", expected " + std::to_string(unk_.size()));
    }
  }
}

const std::vector<double>& EmbeddingProvider::vector(const std::string& token) const {
  auto it = table_.find(token);
  return it == table_.end() ? unk_ : it->second;
}

EmbeddingProvider EmbeddingProvider::scaled(double factor) const {
  auto table = table_;
  auto unk = unk_;
  for (auto& [tok, v] : table) {
    for (double& x : v) x *= factor;
  }
  for (double& x : unk) x *= factor;
  return EmbeddingProvider(std::move(table), std::move(unk));
}

double cosine(const std::vector<double>& a, const std::vector<double>& b, bool* zero_norm) {
  double dot = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) {
    if (zero_norm) *zero_norm = true;
    return 0.0;
  }
  return std::clamp(dot / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

std::vector<double> mean_vector(const Tokens& tokens, const EmbeddingProvider& provider) {
  std::vector<double> acc(provider.dim(), 0.0);
  for (const auto& t : tokens) {
    const auto& v = provider.vector(t);
    for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += v[d];
  }
  for (double& x : acc) x /= static_cast<double>(std::max<std::size_t>(tokens.size(), 1));
  return acc;
}

std::vector<double> extrema_vector(const Tokens& tokens, const EmbeddingProvider& provider) {
  std::vector<double> out(provider.dim(), 0.0);
  for (const auto& t : tokens) {
    const auto& v = provider.vector(t);
    for (std::size_t d = 0; d < out.size(); ++d) {
      if (std::abs(v[d]) > std::abs(out[d])) out[d] = v[d];
    }
  }
  return out;
}

namespace {

double greedy_direction(const Tokens& a, const Tokens& b, const EmbeddingProvider& provider) {
  double total = 0.0;
  for (const auto& x : a) {
    double best = -1.0;
    for (const auto& y : b) best = std::max(best, cosine(provider.vector(x), provider.vector(y)));
    total += best;
  }
  return total / static_cast<double>(a.size());
}

}  // namespace

EmbeddingScores embedding_metrics(const Tokens& hyp, const Tokens& ref, const EmbeddingProvider& provider) {
  require_nonempty(hyp, "hypothesis", "embedding_metrics");
  require_nonempty(ref, "reference", "embedding_metrics");
  EmbeddingScores s;
  bool zero = false;
  s.emb_avg = cosine(mean_vector(hyp, provider), mean_vector(ref, provider), &zero);
  if (zero) s.warnings.push_back("emb_avg: zero-norm sentence vector, scored 0");
  zero = false;
  s.vec_extrema = cosine(extrema_vector(hyp, provider), extrema_vector(ref, provider), &zero);
  if (zero) s.warnings.push_back("vec_extrema: zero-norm sentence vector, scored 0");
  s.greedy_match = 0.5 * (greedy_direction(hyp, ref, provider) + greedy_direction(ref, hyp, provider));
  return s;
}

Classification classify_by_similarity(const Tokens& generated, const std::array<Tokens, 4>& options,
                                      const EmbeddingProvider& provider) {
  const auto g = mean_vector(generated, provider);
  Classification c;
  for (std::size_t i = 0; i < options.size(); ++i) {
    c.scores[i] = cosine(g, mean_vector(options[i], provider));
    if (c.scores[i] > c.scores[c.chosen]) c.chosen = i;
  }
  return c;
}

AccuracyReport accuracy_report(const std::vector<AccuracyFlags>& flags) {
  if (flags.empty()) throw std::invalid_argument("accuracy_report: no samples");
  std::size_t a = 0, r = 0, both = 0;
  for (const auto& f : flags) {
    a += f.answer_correct;
    r += f.rationale_correct;
    both += f.answer_correct && f.rationale_correct;
  }
  const auto n = static_cast<double>(flags.size());
  return {100.0 * static_cast<double>(a) / n, 100.0 * static_cast<double>(r) / n,
          100.0 * static_cast<double>(both) / n, flags.size()};
}

std::string accuracy_table(const AccuracyReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::setw(10) << "Answer" << std::setw(12) << "Rationale" << std::setw(10) << "Overall" << '\n';
  os << std::setw(10) << r.answer << std::setw(12) << r.rationale << std::setw(10) << r.overall << '\n';
  return os.str();
}

// ---------------------------------------------------------------- reports

MetricReport evaluate(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                      const EmbeddingProvider& provider, std::vector<std::string> ids) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("evaluate: hypothesis and reference counts differ");
  if (ids.empty()) {
    for (std::size_t i = 0; i < hyps.size(); ++i) ids.push_back(std::to_string(i));
  }
  if (ids.size() != hyps.size()) throw std::invalid_argument("evaluate: id count differs from sample count");
  std::vector<Tokens> h, r;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    h.push_back(tokenize(hyps[i]));
    r.push_back(tokenize(refs[i]));
    if (h.back().empty() || r.back().empty()) {
      throw std::invalid_argument("evaluate: sample '" + ids[i] + "' has an empty hypothesis or reference");
    }
  }
  MetricReport rep;
  rep.ids = std::move(ids);
  const CiderResult c = cider(h, r);
  rep.per_sample["cider"] = c.scores;
  for (std::size_t i = 0; i < h.size(); ++i) {
    rep.per_sample["rouge_l"].push_back(rouge_l(h[i], r[i]));
    rep.per_sample["meteor_lite"].push_back(meteor_lite(h[i], r[i]));
    EmbeddingScores e = embedding_metrics(h[i], r[i], provider);
    rep.per_sample["emb_avg"].push_back(e.emb_avg);
    rep.per_sample["vec_extrema"].push_back(e.vec_extrema);
    rep.per_sample["greedy_match"].push_back(e.greedy_match);
    for (auto& w : e.warnings) rep.warnings.push_back(rep.ids[i] + ": " + w);
  }
  for (const auto& [name, values] : rep.per_sample) {
    rep.mean[name] = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  }
  return rep;
}

nlohmann::json report_to_json(const MetricReport& r) {
  nlohmann::json samples = nlohmann::json::array();
  for (std::size_t i = 0; i < r.ids.size(); ++i) {
    nlohmann::json s = {{"id", r.ids[i]}};
    for (const char* m : kMetricNames) s[m] = r.per_sample.at(m)[i];
    samples.push_back(s);
  }
  return {{"mean", r.mean}, {"samples", samples}, {"warnings", r.warnings}};
}

std::string report_table(const MetricReport& r, const std::string& label) {
  std::ostringstream os;
  const int first = static_cast<int>(std::max<std::size_t>(label.size(), 8)) + 2;
  os << std::left << std::setw(first) << "" << std::right;
  for (const char* m : kMetricNames) os << std::setw(14) << m;
  os << '\n' << std::left << std::setw(first) << label << std::right << std::fixed << std::setprecision(4);
  for (const char* m : kMetricNames) os << std::setw(14) << r.mean.at(m);
  os << '\n';
  return os.str();
}

}  // namespace genref::metrics
