#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "qtseg/ops.hpp"
#include "qtseg/tensor.hpp"

using namespace qtseg;

namespace {

// Scalar probe of a non-scalar output: a fixed random weighting makes every
// output coordinate contribute to the checked loss.
Tensor probe(const Tensor& out, const Tensor& weights) {
  return ops::sum(ops::mul(out, weights));
}

Tensor param(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t = Tensor::uniform(std::move(shape), rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

void expect_grad_ok(const std::function<Tensor()>& fn, const std::vector<Tensor>& params,
                    uint64_t seed, gradcheck::Options opt = {}) {
  Rng rng(seed);
  const gradcheck::Result res = gradcheck::run(fn, params, rng, opt);
  INFO("worst coordinate: ", res.worst);
  INFO("checked ", res.coords_checked, " coords, skipped ", res.coords_skipped,
       " at kinks");
  CHECK(res.ok(opt));
  CHECK(res.max_rel_err < opt.tolerance);
}

}  // namespace

TEST_CASE("backward on a non-scalar loss is rejected; empty tape is a no-op") {
  GradTape tape;
  Tensor x = Tensor::full({2, 2}, 1.0f);
  CHECK_THROWS_AS(tape.backward(x), UsageError);
  Tensor s = Tensor::full({1}, 3.0f);
  tape.backward(s);  // no closures recorded: must not touch gradients
  CHECK_FALSE(s.has_grad());
}

TEST_CASE("gradient accumulates across two backward passes") {
  Rng rng(1);
  Tensor x = param({4}, rng);
  for (int pass = 0; pass < 2; ++pass) {
    GradTape tape;
    TapeScope scope(tape);
    Tensor loss = ops::sum(ops::mul(x, x));
    tape.backward(loss);
  }
  // d/dx sum(x^2) = 2x, run twice => 4x.
  for (int64_t i = 0; i < 4; ++i) {
    CHECK(x.grad()[static_cast<size_t>(i)] ==
          doctest::Approx(4.0f * x.data()[i]).epsilon(1e-4));
  }
}

TEST_CASE("no recording happens outside a tape scope") {
  Rng rng(2);
  Tensor x = param({4}, rng);
  Tensor y = ops::mul(x, x);
  CHECK_FALSE(y.requires_grad());
  GradTape tape;
  {
    TapeScope scope(tape);
    Tensor z = ops::mul(x, x);
    CHECK(z.requires_grad());
  }
  CHECK(tape.size() == 1);
}

TEST_CASE("elementwise op gradients") {
  Rng rng(3);
  Tensor a = param({3, 5}, rng);
  Tensor b = param({3, 5}, rng, 0.5f, 1.5f);  // away from zero for div
  Tensor w = Tensor::uniform({3, 5}, rng, -1.0f, 1.0f);

  expect_grad_ok([&] { return probe(ops::add(a, b), w); }, {a, b}, 10);
  expect_grad_ok([&] { return probe(ops::sub(a, b), w); }, {a, b}, 11);
  expect_grad_ok([&] { return probe(ops::mul(a, b), w); }, {a, b}, 12);
  expect_grad_ok([&] { return probe(ops::div(a, b), w); }, {a, b}, 13);
  expect_grad_ok([&] { return probe(ops::scale(a, -2.5f), w); }, {a}, 14);
  expect_grad_ok([&] { return probe(ops::add_scalar(a, 0.7f), w); }, {a}, 15);
  expect_grad_ok([&] { return probe(ops::sigmoid(a), w); }, {a}, 16);
  expect_grad_ok([&] { return ops::sum(a); }, {a}, 17);
  expect_grad_ok([&] { return ops::mean(ops::mul(a, a)); }, {a}, 18);
}

TEST_CASE("activation gradients") {
  Rng rng(4);
  Tensor x = param({40}, rng, -2.0f, 2.0f);
  Tensor w = Tensor::uniform({40}, rng, -1.0f, 1.0f);
  expect_grad_ok([&] { return probe(ops::activation(x, ops::Act::kSilu), w); }, {x}, 20);
  expect_grad_ok([&] { return probe(ops::activation(x, ops::Act::kGelu), w); }, {x}, 21);
  expect_grad_ok([&] { return probe(ops::activation(x, ops::Act::kRelu), w); }, {x}, 22);
}

TEST_CASE("shape op gradients") {
  Rng rng(5);
  Tensor x = param({2, 3, 4, 5}, rng);
  Tensor w1 = Tensor::uniform({2, 60}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::reshape(x, {2, 60}), w1); }, {x}, 30);

  Tensor w2 = Tensor::uniform({2, 3, 5, 4}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::matrix_transpose(x), w2); }, {x}, 31);

  Tensor y = param({2, 2, 4, 5}, rng);
  Tensor w3 = Tensor::uniform({2, 5, 4, 5}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::concat_channels({x, y}), w3); }, {x, y}, 32);

  Tensor w4 = Tensor::uniform({2, 2, 4, 5}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::slice_channels(x, 1, 3), w4); }, {x}, 33);

  Tensor z = param({3, 4}, rng);
  Tensor w5 = Tensor::uniform({5, 3, 4}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::expand_batch(z, 5), w5); }, {z}, 34);

  Tensor w6 = Tensor::uniform({2, 20, 3}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::img2seq(x), w6); }, {x}, 35);
  Tensor s = param({2, 20, 3}, rng);
  Tensor w7 = Tensor::uniform({2, 3, 4, 5}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::seq2img(s, 4, 5), w7); }, {s}, 36);
}

TEST_CASE("matmul and linear gradients") {
  Rng rng(6);
  Tensor a = param({4, 6}, rng);
  Tensor b = param({6, 3}, rng);
  Tensor w = Tensor::uniform({4, 3}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::matmul(a, b), w); }, {a, b}, 40);

  Tensor ab = param({2, 4, 6}, rng);
  Tensor bb = param({2, 6, 3}, rng);
  Tensor wb = Tensor::uniform({2, 4, 3}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::matmul(ab, bb), wb); }, {ab, bb}, 41);
  // Shared right operand accumulates gradient across the batch.
  expect_grad_ok([&] { return probe(ops::matmul(ab, b), wb); }, {ab, b}, 42);

  Tensor x = param({2, 5, 6}, rng);
  Tensor wg = param({6, 3}, rng);
  Tensor bg = param({3}, rng);
  Tensor wl = Tensor::uniform({2, 5, 3}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::linear(x, wg, bg), wl); }, {x, wg, bg}, 43);
}

TEST_CASE("softmax and attention gradients") {
  Rng rng(7);
  Tensor x = param({5, 7}, rng, -2, 2);
  Tensor w = Tensor::uniform({5, 7}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::softmax_rows(x), w); }, {x}, 50);

  Tensor img = param({4, 3, 5}, rng, -2, 2);
  Tensor wi = Tensor::uniform({4, 3, 5}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::softmax_channels(img), wi); }, {img}, 51);

  Tensor q = param({4, 8}, rng);
  Tensor k = param({6, 8}, rng);
  Tensor v = param({6, 8}, rng);
  Tensor wa = Tensor::uniform({4, 8}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::multihead_attention(q, k, v, 2), wa); },
                 {q, k, v}, 52);

  // Batched attention.
  Tensor qb = param({2, 3, 8}, rng);
  Tensor kb = param({2, 5, 8}, rng);
  Tensor vb = param({2, 5, 8}, rng);
  Tensor wab = Tensor::uniform({2, 3, 8}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::multihead_attention(qb, kb, vb, 4), wab); },
                 {qb, kb, vb}, 53);
}

TEST_CASE("convolution family gradients") {
  Rng rng(8);
  Tensor x = param({2, 3, 7, 6}, rng);
  Tensor wt = param({4, 3, 3, 3}, rng, -0.5f, 0.5f);
  Tensor bias = param({4}, rng);

  Tensor w1 = Tensor::uniform({2, 4, 7, 6}, rng, -1, 1);
  expect_grad_ok(
      [&] { return probe(ops::conv2d(x, wt, bias, 1, ops::Padding::kSame), w1); },
      {x, wt, bias}, 60);
  Tensor w2 = Tensor::uniform({2, 4, 4, 3}, rng, -1, 1);
  expect_grad_ok(
      [&] { return probe(ops::conv2d(x, wt, bias, 2, ops::Padding::kSame), w2); },
      {x, wt, bias}, 61);
  Tensor w3 = Tensor::uniform({2, 4, 5, 4}, rng, -1, 1);
  expect_grad_ok(
      [&] { return probe(ops::conv2d(x, wt, bias, 1, ops::Padding::kValid), w3); },
      {x, wt, bias}, 62);

  Tensor xt = param({3, 4, 5}, rng);
  Tensor wtt = param({3, 2, 2, 2}, rng, -0.5f, 0.5f);
  Tensor bt = param({2}, rng);
  Tensor w4 = Tensor::uniform({2, 8, 10}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::conv_transpose2d(xt, wtt, bt, 2), w4); },
                 {xt, wtt, bt}, 63);

  Tensor w5 = Tensor::uniform({2, 3, 4, 3}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::maxpool2d(x, 3, 2, true), w5); }, {x}, 64);

  Tensor w6 = Tensor::uniform({2, 3, 14, 12}, rng, -1, 1);
  expect_grad_ok(
      [&] { return probe(ops::resize(x, 2, 1, ops::ResizeMode::kNearest), w6); }, {x},
      65);
  expect_grad_ok(
      [&] { return probe(ops::resize(x, 2, 1, ops::ResizeMode::kBilinear), w6); }, {x},
      66);
}

TEST_CASE("normalization gradients") {
  Rng rng(9);
  Tensor x = param({2, 3, 4, 4}, rng);
  Tensor gamma = param({3}, rng, 0.5f, 1.5f);
  Tensor beta = param({3}, rng, -0.5f, 0.5f);
  Tensor rm = Tensor::zeros({3});
  Tensor rv = Tensor::full({3}, 1.0f);
  Tensor w = Tensor::uniform({2, 3, 4, 4}, rng, -1, 1);

  // Training mode: batch statistics are part of the graph.
  expect_grad_ok(
      [&] {
        TrainingScope train;
        return probe(ops::batch_norm(x, gamma, beta, rm, rv, 0.1f, 1e-5f), w);
      },
      {x, gamma, beta}, 70);
  // Inference mode: running stats are constants.
  expect_grad_ok(
      [&] { return probe(ops::batch_norm(x, gamma, beta, rm, rv, 0.1f, 1e-5f), w); },
      {x, gamma, beta}, 71);

  Tensor tok = param({6, 9}, rng);
  Tensor g9 = param({9}, rng, 0.5f, 1.5f);
  Tensor b9 = param({9}, rng, -0.5f, 0.5f);
  Tensor wt = Tensor::uniform({6, 9}, rng, -1, 1);
  expect_grad_ok([&] { return probe(ops::layer_norm_last(tok, g9, b9, 1e-5f), wt); },
                 {tok, g9, b9}, 72);

  Tensor gimg = param({3}, rng, 0.5f, 1.5f);
  Tensor bimg = param({3}, rng, -0.5f, 0.5f);
  expect_grad_ok(
      [&] { return probe(ops::layer_norm_channels(x, gimg, bimg, 1e-5f), w); },
      {x, gimg, bimg}, 73);
}

TEST_CASE("loss gradients") {
  Rng rng(10);
  Tensor logits = param({1, 6, 6}, rng, -2, 2);
  std::vector<float> tv(36);
  for (float& t : tv) t = rng.bernoulli(0.4f) ? 1.0f : 0.0f;
  Tensor targets = Tensor::from_data({1, 6, 6}, std::move(tv));
  expect_grad_ok([&] { return ops::bce_with_logits_mean(logits, targets); }, {logits},
                 80);

  Tensor ml = param({3, 5, 5}, rng, -2, 2);
  std::vector<float> mt(25);
  for (float& t : mt) t = static_cast<float>(rng.uniform_int(0, 2));
  Tensor mtt = Tensor::from_data({5, 5}, std::move(mt));
  expect_grad_ok([&] { return ops::softmax_ce_mean(ml, mtt); }, {ml}, 81);
}
