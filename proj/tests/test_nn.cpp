#include <doctest.h>

#include <random>

#include "cacdec/nn/adam.hpp"
#include "cacdec/nn/layers.hpp"
#include "cacdec/nn/losses.hpp"
#include "grad_check.hpp"

using namespace cacdec::nn;
using gradcheck::check_module;
using gradcheck::random_input;

namespace {

template <typename M, typename Rng>
std::unique_ptr<M> made(std::unique_ptr<M> m, Rng& rng) {
  m->init(rng);
  return m;
}

}  // namespace

TEST_CASE("conv output shapes: same padding and stride-2 downsampling") {
  std::mt19937_64 rng(1);
  Conv<float> c1(3, 8, {1, 7, 7}, {1, 1, 1}, PadMode::Reflect);
  c1.init(rng);
  Tensor<float> x(2, 3, 1, 16, 16);
  Tensor<float> y = c1.forward(x, nullptr, false);
  CHECK(y.c == 8);
  CHECK(y.h == 16);
  CHECK(y.w == 16);

  Conv<float> c2(3, 8, {1, 3, 3}, {1, 2, 2}, PadMode::Zero);
  c2.init(rng);
  Tensor<float> y2 = c2.forward(x, nullptr, false);
  CHECK(y2.h == 8);
  CHECK(y2.w == 8);

  Conv<float> c3(1, 4, {3, 3, 3}, {2, 2, 2}, PadMode::Zero);
  c3.init(rng);
  Tensor<float> x3(1, 1, 12, 12, 12);
  Tensor<float> y3 = c3.forward(x3, nullptr, false);
  CHECK(y3.d == 6);
  CHECK(y3.h == 6);
  CHECK(y3.w == 6);
}

TEST_CASE("transposed conv doubles the spatial dims exactly") {
  std::mt19937_64 rng(2);
  TConv<float> t2(6, 3, {1, 3, 3}, {1, 2, 2});
  t2.init(rng);
  Tensor<float> x(2, 6, 1, 9, 9);
  Tensor<float> y = t2.forward(x, nullptr, false);
  CHECK(y.c == 3);
  CHECK(y.h == 18);
  CHECK(y.w == 18);

  TConv<float> t3(4, 2, {3, 3, 3}, {2, 2, 2});
  t3.init(rng);
  Tensor<float> x3(1, 4, 5, 6, 7);
  Tensor<float> y3 = t3.forward(x3, nullptr, false);
  CHECK(y3.d == 10);
  CHECK(y3.h == 12);
  CHECK(y3.w == 14);
}

TEST_CASE("gradients: conv with zero and reflect padding") {
  std::mt19937_64 rng(3);
  {
    Conv<double> c(2, 3, {1, 3, 3}, {1, 1, 1}, PadMode::Zero);
    c.init(rng);
    auto x = random_input(2, 2, 1, 6, 6, 100);
    auto rep = check_module(c, x, 200);
    CHECK(rep.max_rel_err < 1e-5);
  }
  {
    Conv<double> c(2, 3, {1, 3, 3}, {1, 2, 2}, PadMode::Reflect);
    c.init(rng);
    auto x = random_input(2, 2, 1, 6, 6, 101);
    auto rep = check_module(c, x, 201);
    CHECK(rep.max_rel_err < 1e-5);
  }
  {
    Conv<double> c(1, 2, {3, 3, 3}, {2, 2, 2}, PadMode::Zero);
    c.init(rng);
    auto x = random_input(2, 1, 6, 6, 6, 102);
    auto rep = check_module(c, x, 202);
    CHECK(rep.max_rel_err < 1e-5);
  }
}

TEST_CASE("gradients: transposed conv 2D and 3D") {
  std::mt19937_64 rng(4);
  {
    TConv<double> t(3, 2, {1, 3, 3}, {1, 2, 2});
    t.init(rng);
    auto x = random_input(2, 3, 1, 5, 5, 110);
    auto rep = check_module(t, x, 210);
    CHECK(rep.max_rel_err < 1e-5);
  }
  {
    TConv<double> t(2, 2, {3, 3, 3}, {2, 2, 2});
    t.init(rng);
    auto x = random_input(1, 2, 4, 4, 4, 111);
    auto rep = check_module(t, x, 211);
    CHECK(rep.max_rel_err < 1e-5);
  }
}

TEST_CASE("gradients: norms and activations") {
  {
    BatchNorm<double> bn(3);
    auto x = random_input(3, 3, 1, 4, 4, 120);
    auto rep = check_module(bn, x, 220);
    CHECK(rep.max_rel_err < 1e-5);
  }
  {
    InstanceNorm<double> in(3);
    auto x = random_input(2, 3, 1, 5, 5, 121);
    auto rep = check_module(in, x, 221);
    CHECK(rep.max_rel_err < 1e-5);
  }
  {
    LeakyRelu<double> lr(0.2);
    auto x = random_input(2, 3, 1, 5, 5, 122);
    auto rep = check_module(lr, x, 222);
    CHECK(rep.max_rel_err < 1e-4);  // kink crossings dominate
  }
  {
    Sigmoid<double> sg;
    auto x = random_input(2, 3, 1, 5, 5, 123);
    auto rep = check_module(sg, x, 223);
    CHECK(rep.max_rel_err < 1e-5);
  }
}

TEST_CASE("gradients: dense head and resblock") {
  std::mt19937_64 rng(6);
  {
    Sequential<double> net;
    net.add<GlobalAvgPool<double>>();
    auto* d = net.add<Dense<double>>(4, 2);
    d->init(rng);
    auto x = random_input(3, 4, 1, 5, 5, 130);
    auto rep = check_module(net, x, 230);
    CHECK(rep.max_rel_err < 1e-5);
  }
  {
    ResBlock<double> rb(4, false, PadMode::Reflect, NormKind::Batch);
    rb.init(rng);
    auto x = random_input(2, 4, 1, 6, 6, 131);
    auto rep = check_module(rb, x, 231);
    CHECK(rep.max_rel_err < 1e-4);
  }
  {
    ResBlock<double> rb(3, true, PadMode::Zero, NormKind::Batch);
    rb.init(rng);
    auto x = random_input(2, 3, 4, 4, 4, 132);
    auto rep = check_module(rb, x, 232);
    CHECK(rep.max_rel_err < 1e-4);
  }
}

TEST_CASE("gradients: small composite network") {
  std::mt19937_64 rng(7);
  Sequential<double> net;
  net.add<Conv<double>>(1, 4, std::array<int, 3>{1, 3, 3}, std::array<int, 3>{1, 1, 1},
                        PadMode::Reflect)
      ->init(rng);
  net.add<BatchNorm<double>>(4);
  net.add<Relu<double>>();
  net.add<Conv<double>>(4, 6, std::array<int, 3>{1, 3, 3}, std::array<int, 3>{1, 2, 2},
                        PadMode::Reflect)
      ->init(rng);
  net.add<BatchNorm<double>>(6);
  net.add<Relu<double>>();
  net.add<TConv<double>>(6, 4, std::array<int, 3>{1, 3, 3}, std::array<int, 3>{1, 2, 2})
      ->init(rng);
  net.add<BatchNorm<double>>(4);
  net.add<Relu<double>>();
  net.add<Conv<double>>(4, 1, std::array<int, 3>{1, 3, 3}, std::array<int, 3>{1, 1, 1},
                        PadMode::Reflect)
      ->init(rng);
  net.add<Sigmoid<double>>();
  auto x = random_input(2, 1, 1, 8, 8, 140, 0.0, 1.0);
  auto rep = check_module(net, x, 240);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("loss gradients: dice, cross-entropy, L1") {
  // dice
  {
    Tensor<double> prob(2, 2, 1, 4, 4);
    Tensor<double> target(2, 1, 1, 4, 4);
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    for (auto& v : prob.v) v = u(rng);
    for (auto& v : target.v) v = u(rng) > 0.5 ? 1.0 : 0.0;
    auto l = dice_loss(prob, target);
    double h = 1e-6;
    for (size_t i : {size_t(17), size_t(20), size_t(40)}) {
      double orig = prob.v[i];
      prob.v[i] = orig + h;
      double fp = dice_loss(prob, target).value;
      prob.v[i] = orig - h;
      double fm = dice_loss(prob, target).value;
      prob.v[i] = orig;
      CHECK(gradcheck::rel_err((fp - fm) / (2 * h), l.grad.v[i]) < 1e-5);
    }
  }
  // cross entropy
  {
    Tensor<double> logits(4, 2, 1, 1, 1);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd(0, 1);
    for (auto& v : logits.v) v = nd(rng);
    std::vector<int> labels = {0, 1, 1, 0};
    auto l = softmax_cross_entropy(logits, labels);
    double h = 1e-6;
    for (size_t i = 0; i < logits.numel(); ++i) {
      double orig = logits.v[i];
      logits.v[i] = orig + h;
      double fp = softmax_cross_entropy(logits, labels).value;
      logits.v[i] = orig - h;
      double fm = softmax_cross_entropy(logits, labels).value;
      logits.v[i] = orig;
      CHECK(gradcheck::rel_err((fp - fm) / (2 * h), l.grad.v[i]) < 1e-5);
    }
  }
  // l1 against a target
  {
    Tensor<double> a(1, 1, 1, 3, 3), b(1, 1, 1, 3, 3);
    std::mt19937_64 rng(10);
    std::normal_distribution<double> nd(0, 1);
    for (auto& v : a.v) v = nd(rng);
    for (auto& v : b.v) v = nd(rng);
    auto l = l1_mean_diff(a, b);
    double h = 1e-7;
    for (size_t i = 0; i < a.numel(); ++i) {
      double orig = a.v[i];
      a.v[i] = orig + h;
      double fp = l1_mean_diff(a, b).value;
      a.v[i] = orig - h;
      double fm = l1_mean_diff(a, b).value;
      a.v[i] = orig;
      CHECK(gradcheck::rel_err((fp - fm) / (2 * h), l.grad.v[i]) < 1e-5);
    }
  }
}

TEST_CASE("dice loss definitional values") {
  Tensor<float> prob(1, 2, 1, 4, 4);
  Tensor<float> target(1, 1, 1, 4, 4);
  for (int i = 0; i < 6; ++i) {
    target.v[i] = 1.0f;
    prob.v[16 + i] = 1.0f;  // channel 1 matches target exactly
  }
  CHECK(dice_loss(prob, target).value == doctest::Approx(0.0).epsilon(1e-6));

  Tensor<float> empty_pred(1, 2, 1, 4, 4);  // all background
  double v = dice_loss(empty_pred, target).value;
  CHECK(v == doctest::Approx(1.0 - 1.0 / (6.0 + 1.0)).epsilon(1e-6));
  CHECK(v > 0.8);
}

TEST_CASE("cross entropy of a perfect one-hot prediction approaches zero") {
  Tensor<float> logits(2, 2, 1, 1, 1);
  logits.at(0, 0, 0, 0, 0) = 30.0f;
  logits.at(0, 1, 0, 0, 0) = -30.0f;
  logits.at(1, 0, 0, 0, 0) = -30.0f;
  logits.at(1, 1, 0, 0, 0) = 30.0f;
  auto l = softmax_cross_entropy(logits, {0, 1});
  CHECK(l.value == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("softmax output sums to one") {
  std::mt19937_64 rng(12);
  std::normal_distribution<float> nd(0, 3);
  Tensor<float> logits(8, 2, 1, 1, 1);
  for (auto& v : logits.v) v = nd(rng);
  Tensor<float> p = softmax_channels(logits);
  for (int n = 0; n < 8; ++n) {
    float s = p.at(n, 0, 0, 0, 0) + p.at(n, 1, 0, 0, 0);
    CHECK(std::abs(s - 1.0f) < 1e-6f);
    CHECK(p.at(n, 0, 0, 0, 0) >= 0.0f);
  }
}

TEST_CASE("batchnorm eval mode uses running stats and needs no trace") {
  std::mt19937_64 rng(13);
  BatchNorm<float> bn(2);
  Tensor<float> x(4, 2, 1, 8, 8);
  std::normal_distribution<float> nd(3.0, 2.0);
  for (auto& v : x.v) v = nd(rng);
  for (int i = 0; i < 50; ++i) bn.forward(x, nullptr, true);  // accumulate running stats
  Tensor<float> y1 = bn.forward(x, nullptr, false);
  Tensor<float> y2 = bn.forward(x, nullptr, false);
  CHECK(y1.v == y2.v);  // deterministic in eval mode
  double mean = 0;
  for (float v : y1.v) mean += v;
  mean /= y1.numel();
  CHECK(std::abs(mean) < 0.2);  // roughly standardized
}

TEST_CASE("adam drives a quadratic to zero") {
  Sequential<float> net;
  std::mt19937_64 rng(14);
  auto* d = net.add<Dense<float>>(4, 1);
  d->init(rng);
  std::vector<Param<float>> ps;
  net.params(ps);
  Adam<float> opt(ps, 0.05);
  Tensor<float> x(1, 4, 1, 1, 1);
  x.v = {1.0f, -2.0f, 0.5f, 3.0f};
  for (int it = 0; it < 400; ++it) {
    opt.zero_grad();
    Trace<float> tr;
    Tensor<float> y = net.forward(x, &tr, true);
    Tensor<float> dy = Tensor<float>::like(y);
    dy.v[0] = 2.0f * y.v[0];  // d/dy of y^2
    net.backward(dy, tr);
    opt.step();
  }
  Tensor<float> y = net.forward(x, nullptr, false);
  CHECK(std::abs(y.v[0]) < 1e-3f);
}

TEST_CASE("network forward passes are deterministic") {
  auto build = [](uint64_t seed) {
    auto net = std::make_unique<Sequential<float>>();
    std::mt19937_64 rng(seed);
    net->add<Conv<float>>(1, 4, std::array<int, 3>{1, 3, 3}, std::array<int, 3>{1, 1, 1},
                          PadMode::Reflect)
        ->init(rng);
    net->add<Relu<float>>();
    net->add<Conv<float>>(4, 1, std::array<int, 3>{1, 3, 3}, std::array<int, 3>{1, 1, 1},
                          PadMode::Reflect)
        ->init(rng);
    return net;
  };
  auto n1 = build(42), n2 = build(42);
  Tensor<float> x(3, 1, 1, 12, 12);
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : x.v) v = u(rng);
  Tensor<float> y1 = n1->forward(x, nullptr, false);
  Tensor<float> y2 = n2->forward(x, nullptr, false);
  CHECK(y1.v == y2.v);
  Tensor<float> y3 = n1->forward(x, nullptr, false);
  CHECK(y1.v == y3.v);
}
