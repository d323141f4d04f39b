#include <cmath>
#include <random>

#include "doctest.h"
#include "genref/nn.hpp"
#include "test_util.hpp"

using namespace genref;
using genref::testing::oracle_grad_error;
using genref::testing::random_tensor;

namespace {

Vocab small_vocab() {
  const std::vector<std::string> words = {"the", "cube", "is", "red"};
  return Vocab(words);
}

}  // namespace

TEST_CASE("vocab keeps reserved ids and is a bijection") {
  const Vocab v = small_vocab();
  CHECK(v.size() == 8);
  CHECK(v.token(kPad) == "<pad>");
  CHECK(v.token(kBos) == "<bos>");
  CHECK(v.token(kEos) == "<eos>");
  CHECK(v.token(kUnk) == "<unk>");
  for (TokenId id = 0; id < v.size(); ++id) CHECK(v.id(v.token(id)) == id);
  CHECK(v.id("pyramid") == kUnk);
  CHECK_THROWS_AS(v.token(v.size()), std::out_of_range);
  const std::vector<std::string> none;
  CHECK_THROWS_AS(Vocab{none}, std::invalid_argument);
}

TEST_CASE("vocab encode appends EOS and decode stops there") {
  const Vocab v = small_vocab();
  const auto ids = v.encode("The cube IS red");
  REQUIRE(ids.size() == 5);
  CHECK(ids.back() == kEos);
  CHECK(v.decode(ids) == "the cube is red");
  const std::vector<TokenId> with_tail = {kBos, v.id("cube"), kEos, v.id("red"), kPad};
  CHECK(v.decode(with_tail) == "cube");
}

TEST_CASE("gold token sequences keep PAD as a suffix and end in EOS") {
  const TokenSeq s = TokenSeq::gold({5, 6, kEos}, 5);
  CHECK(s.true_length == 3);
  CHECK(s.ids == std::vector<TokenId>{5, 6, kEos, kPad, kPad});
  CHECK(s.content().size() == 3);
  CHECK_THROWS_AS(TokenSeq::gold({}), std::invalid_argument);
  CHECK_THROWS_AS(TokenSeq::gold({5, 6}), std::invalid_argument);
  CHECK_THROWS_AS(TokenSeq::gold({5, kPad, kEos}), std::invalid_argument);
}

TEST_CASE("embed selects a row and its gradient is one-hot") {
  const EmbeddingTable table{Tensor::from({5, 2}, {0, 1, 10, 11, 20, 21, 30, 31, 40, 41}, true)};
  CHECK(embed(table, TokenId{2}).to_vector() == std::vector<double>{20, 21});
  CHECK(embed(table, kPad).to_vector() == std::vector<double>{0, 1});
  const GradientMap g = backward(sum(embed(table, TokenId{3})));
  CHECK(g[table.weight].to_vector() == std::vector<double>{0, 0, 0, 0, 0, 0, 1, 1, 0, 0});
  CHECK_THROWS(embed(table, TokenId{5}));
}

TEST_CASE("lstm cell: zero parameters give zero state") {
  LstmParams p{Tensor::zeros({3, 8}), Tensor::zeros({2, 8}), Tensor::zeros({8})};
  const LstmState s = lstm_cell_step(Tensor::from({3}, {1, -2, 3}), {Tensor::zeros({2}), Tensor::zeros({2})}, p);
  CHECK(s.h.to_vector() == std::vector<double>{0, 0});
  CHECK(s.c.to_vector() == std::vector<double>{0, 0});
}

TEST_CASE("lstm cell: open forget gate and closed input gate pass memory through") {
  // Biases saturate the gates: i -> 0, f -> 1.
  std::vector<double> bias(8, 0.0);
  bias[0] = bias[1] = -1000.0;
  bias[2] = bias[3] = 1000.0;
  LstmParams p{Tensor::zeros({1, 8}), Tensor::zeros({2, 8}), Tensor::from({8}, bias)};
  const Tensor c = Tensor::from({2}, {0.7, -0.3});
  const LstmState s = lstm_cell_step(Tensor::from({1}, {4.0}), {Tensor::from({2}, {0.2, 0.1}), c}, p);
  CHECK(s.c.to_vector() == c.to_vector());
}

TEST_CASE("lstm cell: gradients match central differences and |h| <= 1") {
  std::mt19937_64 rng(3);
  Rng init(4);
  const LstmParams p = make_lstm(4, 3, init);
  const Tensor x = random_tensor({4}, rng);
  const Tensor h = random_tensor({3}, rng);
  const Tensor c = random_tensor({3}, rng, 2.0);
  const Tensor w = random_tensor({3}, rng, 1.0, false);
  auto loss = [&] {
    const LstmState s = lstm_cell_step(x, {h, c}, p);
    return add(sum(mul(s.h, w)), sum(mul(s.c, s.c)));
  };
  CHECK(oracle_grad_error(loss, {p.w_input, p.w_hidden, p.bias, x, h, c}) < 1e-4);
  for (int trial = 0; trial < 50; ++trial) {
    const LstmState s = lstm_cell_step(random_tensor({4}, rng, 50.0), {random_tensor({3}, rng, 50.0),
                                                                        random_tensor({3}, rng, 50.0)}, p);
    for (double v : s.h.data()) CHECK(std::abs(v) <= 1.0);
  }
  CHECK_THROWS_AS(lstm_cell_step(Tensor::zeros({5}), {h, c}, p), ShapeError);
}

TEST_CASE("lstm init: forget bias is one, other biases zero") {
  Rng rng(1);
  const LstmParams p = make_lstm(2, 3, rng);
  CHECK(p.bias.to_vector() == std::vector<double>{0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0});
  CHECK(p.w_input.shape() == Shape{2, 12});
  CHECK(p.w_hidden.shape() == Shape{3, 12});
}

TEST_CASE("dropout: identity in eval mode and unbiased in train mode") {
  Rng rng(9);
  const Tensor x = Tensor::full({100000}, 1.0);
  CHECK(dropout(x, 0.5, Mode::eval, rng).to_vector() == x.to_vector());
  CHECK(dropout(x, 0.0, Mode::train, rng).to_vector() == x.to_vector());
  const Tensor y = dropout(x, 0.5, Mode::train, rng);
  double mean = 0.0;
  for (double v : y.data()) {
    CHECK((v == 0.0 || v == 2.0));
    mean += v;
  }
  mean /= static_cast<double>(y.size());
  CHECK(std::abs(mean - 1.0) < 0.01);
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::train, rng), std::invalid_argument);
  CHECK_THROWS_AS(dropout(x, -0.1, Mode::train, rng), std::invalid_argument);
}

TEST_CASE("cross-entropy of uniform logits is length times ln |V|") {
  std::vector<Tensor> logits(7, Tensor::zeros({1, 20}));
  const TokenSeq gold = TokenSeq::gold({4, 5, 6, 7, 8, 9, kEos});
  const CrossEntropy ce = masked_cross_entropy(logits, gold);
  CHECK(ce.per_sample[0] == doctest::Approx(7 * std::log(20.0)).epsilon(1e-12));
  CHECK(ce.loss.item() == doctest::Approx(20.97).epsilon(1e-3));
}

TEST_CASE("cross-entropy is zero when gold has probability one") {
  std::vector<Tensor> logits;
  const std::vector<TokenId> ids = {4, 6, kEos};
  for (TokenId id : ids) {
    std::vector<double> row(8, -1e4);
    row[id] = 0.0;
    logits.push_back(Tensor::from({1, 8}, row));
  }
  CHECK(masked_cross_entropy(logits, TokenSeq::gold(ids)).loss.item() == 0.0);
}

TEST_CASE("cross-entropy matches a naive -sum log p oracle and ignores PAD steps") {
  std::mt19937_64 rng(17);
  const std::size_t V = 9, steps = 6;
  std::vector<Tensor> logits;
  for (std::size_t t = 0; t < steps; ++t) logits.push_back(random_tensor({2, V}, rng, 3.0));
  const std::vector<TokenSeq> gold = {TokenSeq::gold({4, 5, 6, kEos}, steps), TokenSeq::gold({7, 8, 4, 5, 6, kEos})};
  const CrossEntropy ce = masked_cross_entropy(logits, gold);
  for (std::size_t b = 0; b < 2; ++b) {
    double naive = 0.0, product = 1.0;
    for (std::size_t t = 0; t < gold[b].true_length; ++t) {
      double z = 0.0;
      for (std::size_t v = 0; v < V; ++v) z += std::exp(logits[t].at(b, v));
      const double p = std::exp(logits[t].at(b, gold[b].ids[t])) / z;
      naive -= std::log(p);
      product *= p;
    }
    CHECK(std::abs(ce.per_sample[b] - naive) <= 1e-9 * naive);
    CHECK(std::abs(std::exp(-ce.per_sample[b]) - product) <= 1e-9 * product);
  }
  CHECK(ce.loss.item() == doctest::Approx((ce.per_sample[0] + ce.per_sample[1]) / 2).epsilon(1e-14));

  // Changing logits where sample 0 is padded leaves its loss alone.
  auto changed = logits;
  std::vector<double> row4 = changed[4].to_vector();
  for (std::size_t v = 0; v < V; ++v) row4[v] += 100.0 * static_cast<double>(v);
  changed[4] = Tensor::from({2, V}, row4);
  CHECK(masked_cross_entropy(changed, gold).per_sample[0] == ce.per_sample[0]);

  CHECK_THROWS_AS(masked_cross_entropy(std::span(logits).first(3), gold), std::length_error);
}

TEST_CASE("param set rejects duplicate names and counts scalars") {
  ParamSet ps;
  ps.add("a", Tensor::zeros({2, 3}, true));
  ps.add("b", Tensor::zeros({4}, true));
  CHECK(ps.count() == 10);
  CHECK(ps.find("b") != nullptr);
  CHECK(ps.find("c") == nullptr);
  CHECK_THROWS_AS(ps.add("a", Tensor::zeros({1}, true)), std::invalid_argument);
}

TEST_CASE("tokenize lowercases and splits on whitespace") {
  CHECK(tokenize("  The  RED\tcube ") == std::vector<std::string>{"the", "red", "cube"});
  const std::vector<std::string> t = {"a", "b"};
  CHECK(join_tokens(t) == "a b");
}
