#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "genref/pipeline.hpp"
#include "genref/tensor.hpp"

namespace genref::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

// Independent finite-difference oracle: returns the numeric gradient of `fn`
// with respect to every element of `param`, by central differences.
inline std::vector<double> numeric_gradient(const std::function<double()>& fn, Tensor param, double eps = 1e-5) {
  auto values = param.mutable_data();
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + eps;
    const double up = fn();
    values[i] = saved - eps;
    const double down = fn();
    values[i] = saved;
    out[i] = (up - down) / (2 * eps);
  }
  return out;
}

inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

// Analytic-vs-numeric worst error across `params` for a scalar graph builder.
inline double oracle_grad_error(const std::function<Tensor()>& build, const std::vector<Tensor>& params,
                                double eps = 1e-5) {
  const GradientMap grads = backward(build());
  double worst = 0.0;
  for (const Tensor& p : params) {
    const auto numeric = numeric_gradient([&] { return build().item(); }, p, eps);
    worst = std::max(worst, max_relative_error(grads[p].to_vector(), numeric));
  }
  return worst;
}

struct RandomBatch {
  std::vector<MultimodalInput> inputs;
  std::vector<TokenSeq> answers;
  std::vector<TokenSeq> rationales;

  Batch batch() const { return make_batch(inputs, answers, rationales); }
};

// Random features and gold sequences of random length within the config limits.
inline RandomBatch random_batch(const ModelSizes& s, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto values = [&](std::size_t count) {
    std::vector<double> v(count);
    for (double& x : v) x = unit(rng);
    return v;
  };
  auto seq = [&](std::size_t max_len) {
    std::uniform_int_distribution<std::size_t> len(1, max_len);
    std::uniform_int_distribution<TokenId> tok(kUnk + 1, s.vocab - 1);
    std::vector<TokenId> ids(len(rng) - 1);
    for (auto& t : ids) t = tok(rng);
    ids.push_back(kEos);
    return TokenSeq::gold(std::move(ids));
  };
  RandomBatch out;
  for (std::size_t i = 0; i < n; ++i) {
    MultimodalInput in;
    in.regions = Tensor::from({s.regions, s.region_dim}, values(s.regions * s.region_dim));
    in.question = Tensor::from({s.text_dim}, values(s.text_dim));
    in.caption = Tensor::from({s.text_dim}, values(s.text_dim));
    out.inputs.push_back(in);
    out.answers.push_back(seq(s.max_answer_len));
    out.rationales.push_back(seq(s.max_rationale_len));
  }
  return out;
}

inline void fill(Tensor t, double value) {
  for (double& v : t.mutable_data()) v = value;
}

}  // namespace genref::testing
