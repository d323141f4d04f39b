#pragma once

// Independent reference implementations used by the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace genref::oracles {

using Tokens = std::vector<std::string>;

inline Tokens random_tokens(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len, int alphabet) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<int> tok(0, alphabet - 1);
  Tokens t(len(rng));
  for (auto& s : t) s = std::string(1, static_cast<char>('a' + tok(rng)));
  return t;
}

// Longest common subsequence by enumerating every subsequence of `a`.
inline std::size_t brute_force_lcs(const Tokens& a, const Tokens& b) {
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
    std::size_t j = 0, taken = 0;
    bool ok = true;
    for (std::size_t i = 0; i < a.size() && ok; ++i) {
      if (!(mask & (1u << i))) continue;
      while (j < b.size() && b[j] != a[i]) ++j;
      if (j == b.size()) ok = false;
      else {
        ++j;
        ++taken;
      }
    }
    if (ok) best = std::max(best, taken);
  }
  return best;
}

// Plain TF-IDF cosine per n, written out over explicit n-gram vectors.
inline std::vector<double> naive_cider(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs) {
  const double N = static_cast<double>(refs.size());
  std::vector<double> scores(hyps.size(), 0.0);
  for (std::size_t n = 1; n <= 4; ++n) {
    auto grams = [n](const Tokens& t) {
      std::map<std::string, double> m;
      for (std::size_t i = 0; i + n <= t.size(); ++i) {
        std::string key;
        for (std::size_t k = 0; k < n; ++k) key += t[i + k] + "\x1f";
        m[key] += 1.0;
      }
      return m;
    };
    std::map<std::string, double> df;
    for (const auto& r : refs) {
      for (const auto& [g, c] : grams(r)) df[g] += 1.0;
    }
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      const auto h = grams(hyps[i]);
      const auto r = grams(refs[i]);
      std::set<std::string> keys;
      for (const auto& kv : h) keys.insert(kv.first);
      for (const auto& kv : r) keys.insert(kv.first);
      std::vector<double> vh, vr;
      for (const auto& g : keys) {
        const double d = df.count(g) ? df[g] : 1.0;
        const double idf = std::log(N / d);
        vh.push_back((h.count(g) ? h.at(g) : 0.0) * idf);
        vr.push_back((r.count(g) ? r.at(g) : 0.0) * idf);
      }
      double dot = 0, nh = 0, nr = 0;
      for (std::size_t k = 0; k < vh.size(); ++k) {
        dot += vh[k] * vr[k];
        nh += vh[k] * vh[k];
        nr += vr[k] * vr[k];
      }
      scores[i] += (nh > 0 && nr > 0 ? dot / std::sqrt(nh * nr) : 0.0) / 4.0;
    }
  }
  return scores;
}

// Every one-to-one exact alignment: most matches, then fewest chunks.
inline std::pair<std::size_t, std::size_t> brute_force_alignment(const Tokens& hyp, const Tokens& ref) {
  std::pair<std::size_t, std::size_t> best{0, 0};
  std::vector<int> assign(hyp.size(), -1);
  std::vector<bool> used(ref.size(), false);
  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == hyp.size()) {
      std::size_t m = 0, chunks = 0;
      int prev = -2;
      for (std::size_t k = 0; k < hyp.size(); ++k) {
        if (assign[k] < 0) {
          prev = -2;
          continue;
        }
        ++m;
        if (assign[k] != prev + 1) ++chunks;
        prev = assign[k];
      }
      if (m > best.first || (m == best.first && chunks < best.second)) best = {m, chunks};
      return;
    }
    rec(i + 1);
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if (used[j] || ref[j] != hyp[i]) continue;
      used[j] = true;
      assign[i] = static_cast<int>(j);
      rec(i + 1);
      assign[i] = -1;
      used[j] = false;
    }
  };
  rec(0);
  return best;
}

// ROUGE-L F-measure recomputed from an LCS length.
inline double rouge_from_lcs(std::size_t lcs, std::size_t hyp_len, std::size_t ref_len, double beta = 1.2) {
  if (lcs == 0) return 0.0;
  const double b2 = beta * beta;
  const double p = static_cast<double>(lcs) / static_cast<double>(hyp_len);
  const double r = static_cast<double>(lcs) / static_cast<double>(ref_len);
  return (1.0 + b2) * p * r / (r + b2 * p);
}

}  // namespace genref::oracles
