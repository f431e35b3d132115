#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include <gridcast/gridcast.hpp>

using namespace gridcast;

namespace {

Tensor random_tensor(Shape s, Rng& rng, bool grad = true, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(s));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(s), std::move(v), grad);
}

// Weighted sum with fixed random weights, so every output coordinate matters.
Tensor probe(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

double naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int co, int bi, int r, int c) {
  const int Ci = x.dim(0), B = x.dim(1), H = x.dim(2), W = x.dim(3), k = w.dim(2), pad = k / 2;
  double acc = b ? b.data()[co] : 0.0;
  for (int ci = 0; ci < Ci; ++ci)
    for (int dr = 0; dr < k; ++dr)
      for (int dc = 0; dc < k; ++dc) {
        const int rr = r + dr - pad, cc = c + dc - pad;
        if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
        acc += w.data()[((co * Ci + ci) * k + dr) * k + dc] * x.data()[((ci * B + bi) * H + rr) * W + cc];
      }
  return acc;
}

}  // namespace

TEST(Conv, CentreTapIdentity) {
  Rng rng(1);
  const auto x = random_tensor({3, 2, 5, 4}, rng, false);
  auto w = Tensor::zeros({3, 3, 3, 3});
  for (int c = 0; c < 3; ++c) w.values()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
  const auto y = conv2d(x, w);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv, SingleOffTapShifts) {
  auto x = Tensor::zeros({1, 1, 4, 4});
  x.values()[1 * 4 + 2] = 5.0;
  auto w = Tensor::zeros({1, 1, 3, 3});
  w.values()[0] = 1.0;  // top-left tap reads (r-1, c-1)
  const auto y = conv2d(x, w);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_EQ(y.data()[r * 4 + c], (r == 2 && c == 3) ? 5.0 : 0.0);
}

TEST(Conv, MatchesLoopOracle) {
  Rng rng(2);
  for (int k : {1, 3, 5}) {
    const auto x = random_tensor({2, 3, 5, 6}, rng, false);
    const auto w = random_tensor({4, 2, k, k}, rng, false);
    const auto b = random_tensor({4}, rng, false);
    const auto y = conv2d(x, w, b);
    ASSERT_EQ(y.shape(), (Shape{4, 3, 5, 6}));
    double worst = 0.0;
    for (int co = 0; co < 4; ++co)
      for (int bi = 0; bi < 3; ++bi)
        for (int r = 0; r < 5; ++r)
          for (int c = 0; c < 6; ++c)
            worst = std::max(worst, std::abs(y.data()[((co * 3 + bi) * 5 + r) * 6 + c] - naive_conv(x, w, b, co, bi, r, c)));
    EXPECT_LT(worst, 1e-12) << "k=" << k;
  }
}

TEST(Conv, RejectsBadShapes) {
  EXPECT_THROW(conv2d(Tensor::zeros({2, 1, 4, 4}), Tensor::zeros({1, 2, 2, 2})), Error);
  EXPECT_THROW(conv2d(Tensor::zeros({2, 1, 4, 4}), Tensor::zeros({1, 3, 3, 3})), Error);
}

TEST(Conv, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  const auto x = random_tensor({2, 2, 4, 5}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const auto b = random_tensor({3}, rng);
  const auto r = random_tensor({3, 2, 4, 5}, rng, false);
  const auto rep = grad_check([&] { return probe(conv2d(x, w, b), r); }, {{"x", x}, {"w", w}, {"b", b}});
  EXPECT_TRUE(rep.passed(1e-6)) << rep.worst_tensor << " " << rep.max_rel_error;
}

TEST(Activations, Values) {
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(2.0), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
  EXPECT_GT(sigmoid(-800.0), -1e-300);
  EXPECT_TRUE(std::isfinite(sigmoid(-800.0)));
  EXPECT_EQ(sigmoid(800.0), 1.0);
  const Tensor x({4}, {-2.0, -0.5, 0.0, 3.0});
  const auto r = relu(x);
  EXPECT_EQ(std::vector<double>(r.values().begin(), r.values().end()), (std::vector<double>{0, 0, 0, 3}));
  const auto t = tanh(x);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(t.data()[i], std::tanh(x.data()[i]));
}

TEST(Activations, Gradients) {
  Rng rng(4);
  // Keep relu inputs away from the kink.
  std::vector<double> v;
  for (int i = 0; i < 20; ++i) v.push_back((i % 2 ? 1 : -1) * (0.1 + 0.05 * i));
  const Tensor x({20}, v, true);
  const auto w = random_tensor({20}, rng, false);
  for (const auto& [name, f] : std::vector<std::pair<std::string, Tensor (*)(const Tensor&)>>{
           {"sigmoid", [](const Tensor& a) { return sigmoid(a); }},
           {"tanh", [](const Tensor& a) { return tanh(a); }},
           {"relu", [](const Tensor& a) { return relu(a); }}}) {
    const auto rep = grad_check([&] { return probe(f(x), w); }, {{"x", x}});
    EXPECT_TRUE(rep.passed(1e-7)) << name << " " << rep.max_rel_error;
  }
}

TEST(Ops, StructuralGradients) {
  Rng rng(5);
  const auto x = random_tensor({3, 4, 2, 2}, rng);
  const auto y = random_tensor({3, 4, 2, 2}, rng);
  const auto bias = random_tensor({3}, rng);
  const auto wc = random_tensor({3}, rng);
  const auto wp = random_tensor({3, 2, 2}, rng);
  const auto m = random_tensor({4, 3}, rng);
  const auto r = random_tensor({3, 4, 2, 2}, rng, false);
  const auto r2 = random_tensor({3, 4, 2, 2}, rng, false);
  const auto f = [&] {
    auto a = add(mul(x, y), scale(sub(x, y), 0.7));
    a = hadamard_broadcast(add_channel_bias(a, bias), wc);
    a = hadamard_broadcast(a, wp);
    const auto parts = concat_batch({slice_batch(a, 2, 4), slice_batch(a, 0, 2)});
    const auto chans = slice_channels(parts, 1, 3);
    const auto mt = transpose2d(m);
    return add(add(probe(parts, r), probe(x, r2)),
               add(sum(mul(chans, chans)), sum(mul(reshape(mt, {12}), reshape(mt, {12})))));
  };
  const auto rep = grad_check(f, {{"x", x}, {"y", y}, {"bias", bias}, {"wc", wc}, {"wp", wp}, {"m", m}});
  EXPECT_TRUE(rep.passed(1e-6)) << rep.worst_tensor << " " << rep.max_rel_error;
}

TEST(Autodiff, SharedNodesAccumulate) {
  Tensor x({3}, {1.0, -2.0, 0.5}, true);
  sum(add(mul(x, x), x)).backward();
  for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x.data()[i] + 1);
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  Tensor x({2}, {1.0, 2.0}, true);
  NoGradGuard g;
  const auto y = sum(mul(x, x));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Autodiff, BackwardNeedsScalar) { EXPECT_THROW(Tensor({2}, {1.0, 2.0}, true).backward(), Error); }

TEST(BatchNormTest, TrainingStatistics) {
  Rng rng(6);
  const auto x = random_tensor({2, 4, 3, 3}, rng, false, -3.0, 5.0);
  BatchNorm bn(2);
  const auto y = bn.forward(x, true);
  const std::size_t n = x.size() / 2;
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0, var = 0, xm = 0, xv = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mean += y.data()[c * n + i];
      xm += x.data()[c * n + i];
    }
    mean /= n;
    xm /= n;
    for (std::size_t i = 0; i < n; ++i) {
      var += std::pow(y.data()[c * n + i] - mean, 2);
      xv += std::pow(x.data()[c * n + i] - xm, 2);
    }
    var /= n;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(var, xv / n / (xv / n + 1e-5), 1e-12);
    EXPECT_NEAR(bn.running_mean[c], 0.1 * xm, 1e-12);
    EXPECT_NEAR(bn.running_var[c], 0.9 + 0.1 * xv / (n - 1), 1e-12);
  }
}

TEST(BatchNormTest, InferenceUsesRunningStats) {
  BatchNorm bn(1);
  EXPECT_THROW(bn.forward(Tensor::zeros({1, 2, 1, 1}), false), Error);
  bn.forward(Tensor({1, 2, 1, 1}, {1.0, 3.0}), true);  // mean 2, unbiased var 2
  const auto y = bn.forward(Tensor({1, 1, 1, 1}, {2.0}), false);
  EXPECT_NEAR(y.item(), (2.0 - 0.2) / std::sqrt(1.1 + 1e-5), 1e-12);
}

TEST(BatchNormTest, Gradients) {
  Rng rng(7);
  const auto x = random_tensor({2, 3, 2, 2}, rng);
  const auto r = random_tensor({2, 3, 2, 2}, rng, false);
  BatchNorm bn(2);
  bn.gamma.values()[0] = 1.3;
  bn.beta.values()[1] = -0.4;
  const auto rep = grad_check([&] { return probe(bn.forward(x, true), r); },
                              {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}});
  EXPECT_TRUE(rep.passed(1e-5)) << rep.worst_tensor << " " << rep.max_rel_error;
  const auto rep_eval = grad_check([&] { return probe(bn.forward(x, false), r); },
                                   {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}});
  EXPECT_TRUE(rep_eval.passed(1e-6)) << rep_eval.worst_tensor << " " << rep_eval.max_rel_error;
}

TEST(Dropout, MonteCarloAndInference) {
  Rng rng(8);
  const auto x = Tensor::full({200000}, 1.0);
  const auto y = dropout(x, 0.8, true, rng);
  double mean = 0;
  std::size_t zeros = 0;
  for (double v : y.values()) {
    mean += v;
    zeros += v == 0.0;
    if (v != 0.0) EXPECT_DOUBLE_EQ(v, 5.0);
  }
  mean /= y.size();
  // Mean of scaled Bernoulli(0.2)*5: std of the mean = sqrt(0.2*0.8)*5/sqrt(n) ~ 0.0045.
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_NEAR(static_cast<double>(zeros) / y.size(), 0.8, 0.005);
  const auto z = dropout(x, 0.8, false, rng);
  EXPECT_EQ(z.node(), x.node());
  EXPECT_THROW(dropout(x, 1.0, true, rng), Error);
}

TEST(Dropout, GradientUsesSameMask) {
  Rng rng(9);
  Tensor x = Tensor::full({1000}, 2.0, true);
  const auto y = dropout(x, 0.5, true, rng);
  sum(y).backward();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], y.data()[i] / 2.0);
}

TEST(Bce, KnownValues) {
  const std::vector<double> t{1, 0, 1, 0}, all(4, 1.0);
  EXPECT_NEAR(bce_loss(Tensor::full({4}, 0.5), t, all).item(), std::numbers::ln2, 1e-15);
  const auto clamped = bce_loss(Tensor({4}, {0.0, 1.0, 1.0, 0.0}), t, all).item();
  const double lo = kProbClamp, hi = 1.0 - kProbClamp;
  EXPECT_NEAR(clamped, -(std::log(lo) + std::log(1.0 - hi) + std::log(hi) + std::log(1.0 - lo)) / 4.0, 1e-12);
  EXPECT_TRUE(std::isfinite(clamped));
  const Tensor p({4}, {0.9, 0.2, 0.3, 0.99});
  const std::vector<double> mask{1, 1, 0, 1};
  const double want = -(std::log(0.9) + std::log(0.8) + std::log(0.01)) / 3.0;
  EXPECT_NEAR(bce_loss(p, t, mask).item(), want, 1e-14);
  EXPECT_THROW(bce_loss(p, t, std::vector<double>(4, 0.0)), Error);
}

TEST(Bce, Gradient) {
  Rng rng(10);
  const auto logits = random_tensor({12}, rng, true, -2, 2);
  std::vector<double> t(12), m(12);
  for (int i = 0; i < 12; ++i) {
    t[i] = i % 3 == 0;
    m[i] = i % 5 != 0;
  }
  const auto rep = grad_check([&] { return bce_loss(sigmoid(logits), t, m); }, {{"logits", logits}});
  EXPECT_TRUE(rep.passed(1e-6)) << rep.max_rel_error;
  // Through the sigmoid the gradient is (p - t) / count.
  logits.node()->grad.clear();
  bce_loss(sigmoid(logits), t, m).backward();
  for (int i = 0; i < 12; ++i) {
    const double want = m[i] ? (sigmoid(logits.data()[i]) - t[i]) / 9.0 : 0.0;
    EXPECT_NEAR(logits.grad()[i], want, 1e-12);
  }
}

TEST(AdamTest, FirstStepMovesByLr) {
  Tensor w({3}, {1.0, 2.0, 3.0}, true);
  Adam opt({w}, {.lr = 0.01});
  sum(mul(w, Tensor({3}, {4.0, -0.5, 0.0}))).backward();
  opt.step();
  EXPECT_NEAR(w.data()[0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(w.data()[1], 2.0 + 0.01, 1e-9);
  EXPECT_DOUBLE_EQ(w.data()[2], 3.0);
  EXPECT_EQ(opt.step_count(), 1);
}

TEST(AdamTest, NoGradientLeavesParameter) {
  Tensor w({2}, {1.0, -1.0}, true);
  Adam opt({w});
  opt.step();
  opt.step();
  EXPECT_EQ(w.data()[0], 1.0);
  EXPECT_EQ(w.data()[1], -1.0);
}

TEST(AdamTest, ThreeStepRecurrence) {
  Tensor w({1}, {0.5}, true);
  const AdamConfig cfg{.lr = 0.1, .beta1 = 0.8, .beta2 = 0.95, .eps = 1e-6};
  Adam opt({w}, cfg);
  double x = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 3; ++t) {
    opt.zero_grad();
    sum(mul(mul(w, w), w)).backward();  // d/dw w^3 = 3w^2
    opt.step();
    const double g = 3 * x * x;
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    x -= cfg.lr * (m / (1 - std::pow(cfg.beta1, t))) / (std::sqrt(v / (1 - std::pow(cfg.beta2, t))) + cfg.eps);
    EXPECT_NEAR(w.data()[0], x, 1e-14) << "step " << t;
  }
}

TEST(GradCheck, QuadraticPasses) {
  Tensor x({5}, {0.3, -1.2, 2.0, 0.0, 4.5}, true);
  const auto rep = grad_check([&] { return sum(mul(x, x)); }, {{"x", x}});
  EXPECT_TRUE(rep.passed(1e-8)) << rep.max_rel_error;
  EXPECT_EQ(rep.coords_checked, 5u);
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x.data()[i]);
}

TEST(GradCheck, CatchesWrongBackward) {
  Tensor x({4}, {0.3, -1.2, 2.0, 0.7}, true);
  // x^2 with a deliberately wrong derivative of 3x.
  const auto broken = [](const Tensor& a) {
    std::vector<double> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * a.data()[i];
    return detail::make_result(a.shape(), std::move(v), {a}, [](Node& o) {
      if (double* g = detail::grad_of(o, 0))
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * 3 * o.parents[0]->value[i];
    });
  };
  const auto rep = grad_check([&] { return sum(broken(x)); }, {{"x", x}});
  EXPECT_FALSE(rep.passed(1e-3));
  EXPECT_NEAR(rep.max_rel_error, 1.0 / 3.0, 1e-6);
  EXPECT_EQ(rep.worst_tensor, "x");
}

TEST(GradCheck, SubsamplesCoordinates) {
  Rng rng(11);
  const auto x = random_tensor({100}, rng);
  const auto rep =
      grad_check([&] { return sum(mul(x, x)); }, {{"x", x}}, {.max_coords_per_tensor = 7, .seed = 2});
  EXPECT_EQ(rep.coords_checked, 7u);
}

TEST(CheckpointFormat, RoundTrip) {
  Rng rng(12);
  auto a = random_tensor({2, 3}, rng);
  auto b = random_tensor({4}, rng);
  std::vector<double> buf{1.5, 2.5};
  const auto bytes = encode_checkpoint(make_checkpoint("{\"k\":1}", {{"a", a}, {"b", b}}, {{"buf", &buf}}));
  const auto ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.metadata, "{\"k\":1}");
  auto a2 = Tensor::zeros({2, 3}, true);
  auto b2 = Tensor::zeros({4}, true);
  std::vector<double> buf2(2, 0.0);
  load_checkpoint(ck, {{"a", a2}, {"b", b2}}, {{"buf", &buf2}});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a2.data()[i], a.data()[i]);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(b2.data()[i], b.data()[i]);
  EXPECT_EQ(buf2, buf);
  auto wrong = Tensor::zeros({3, 2}, true);
  EXPECT_THROW(load_checkpoint(ck, {{"a", wrong}}, {}), Error);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), Error);
  EXPECT_THROW(decode_checkpoint("XXXXXXXX" + bytes.substr(8)), Error);
}
