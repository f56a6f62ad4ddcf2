#include <doctest.h>

#include <cmath>

#include "facegan/autodiff.hpp"
#include "test_util.hpp"

using namespace facegan;
using facegan::testing::random_tensor;

namespace {

// Independent reference implementations, written against the raw index
// definitions rather than the im2col/GEMM path.

Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  const int n = x.dim(0), c1 = x.dim(1), h = x.dim(2), wd = x.dim(3), c2 = w.dim(0), k = w.dim(2), p = k / 2;
  Tensor<double> out({n, c2, h, wd});
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < c2; ++o)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < wd; ++xx) {
          double acc = b[o];
          for (int i = 0; i < c1; ++i)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int sy = y + ky - p, sx = xx + kx - p;
                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                acc += w[((o * c1 + i) * k + ky) * k + kx] * x[((s * c1 + i) * h + sy) * wd + sx];
              }
          out[((s * c2 + o) * h + y) * wd + xx] = acc;
        }
  return out;
}

Tensor<double> naive_pool(const Tensor<double>& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<double> out({n, c, h / 2, w / 2});
  for (int p = 0; p < n * c; ++p)
    for (int y = 0; y < h / 2; ++y)
      for (int xx = 0; xx < w / 2; ++xx) {
        double acc = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) acc += x[(p * h + 2 * y + dy) * w + 2 * xx + dx];
        out[(p * (h / 2) + y) * (w / 2) + xx] = acc / 4.0;
      }
  return out;
}

Tensor<double> naive_upsample(const Tensor<double>& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<double> out({n, c, 2 * h, 2 * w});
  for (int p = 0; p < n * c; ++p)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) out[(p * 2 * h + 2 * y + dy) * 2 * w + 2 * xx + dx] = x[(p * h + y) * w + xx];
  return out;
}

void check_close(const Tensor<double>& a, const Tensor<double>& b, double tol) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst <= tol);
}

}  // namespace

TEST_CASE("conv2d examples") {
  Graph<double> g;
  SUBCASE("centered delta kernel is the identity") {
    Tensor<double> w({1, 1, 3, 3});
    w[4] = 1.0;
    auto x = g.leaf(Tensor<double>({1, 1, 3, 3}, 1.0));
    auto y = conv2d(x, g.leaf(w), g.leaf(Tensor<double>({1})));
    CHECK(y.value() == x.value());
  }
  SUBCASE("zero weight yields the bias") {
    auto x = g.leaf(random_tensor({2, 3, 4, 4}, 1));
    auto y = conv2d(x, g.leaf(Tensor<double>({2, 3, 3, 3})), g.leaf(Tensor<double>({2}, 0.75)));
    for (double v : y.value().data()) CHECK(v == 0.75);
  }
  SUBCASE("2x2 input with all-ones kernel") {
    Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    Tensor<double> w({1, 1, 3, 3}, 1.0);
    Tensor<double> b({1});
    auto y = conv2d(g.leaf(x), g.leaf(w), g.leaf(b));
    const auto expected = naive_conv(x, w, b);
    check_close(y.value(), expected, 1e-14);
    for (double v : y.value().data()) CHECK(v == 10.0);
  }
  SUBCASE("random 3x3 and 1x1 kernels match the direct loop") {
    for (int k : {1, 3}) {
      auto x = random_tensor({2, 3, 5, 6}, 7);
      auto w = random_tensor({4, 3, k, k}, 8);
      auto b = random_tensor({4}, 9);
      auto y = conv2d(g.leaf(x), g.leaf(w), g.leaf(b));
      check_close(y.value(), naive_conv(x, w, b), 1e-12);
    }
  }
  SUBCASE("shape mismatch names the dimensions") {
    auto x = g.leaf(Tensor<double>({1, 2, 4, 4}));
    auto w = g.leaf(Tensor<double>({1, 3, 3, 3}));
    CHECK_THROWS_WITH_AS(conv2d(x, w, g.leaf(Tensor<double>({1}))),
                         doctest::Contains("3 input channels, input has 2"), ShapeError);
  }
}

TEST_CASE("avg_pool2 and upsample_nearest2") {
  Graph<double> g;
  auto c = g.leaf(Tensor<double>({1, 2, 4, 4}, 3.5));
  for (double v : avg_pool2(c).value().data()) CHECK(v == 3.5);

  auto block = g.leaf(Tensor<double>({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  CHECK(avg_pool2(block).value()[0] == 2.5);

  auto r = random_tensor({2, 3, 4, 4}, 11);
  check_close(avg_pool2(g.leaf(r)).value(), naive_pool(r), 1e-14);

  CHECK_THROWS_AS(avg_pool2(g.leaf(Tensor<double>({1, 1, 3, 4}))), ShapeError);

  auto one = upsample_nearest2(g.leaf(Tensor<double>({1, 1, 1, 1}, 1.0)));
  CHECK(one.shape() == Shape{1, 1, 2, 2});
  for (double v : one.value().data()) CHECK(v == 1.0);

  auto r3 = random_tensor({1, 2, 3, 3}, 12);
  check_close(upsample_nearest2(g.leaf(r3)).value(), naive_upsample(r3), 0.0);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto x = g.leaf(random_tensor({2, 3, 5, 7}, seed));
    CHECK(avg_pool2(upsample_nearest2(x)).value() == x.value());
  }
}

TEST_CASE("activations") {
  Graph<double> g;
  auto z = g.leaf(Tensor<double>({1}, 0.0));
  CHECK(elu(z).value()[0] == 0.0);
  CHECK(facegan::tanh(z).value()[0] == 0.0);
  CHECK(elu(g.leaf(Tensor<double>({1}, -1.0))).value()[0] == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
  CHECK(elu(g.leaf(Tensor<double>({1}, -50.0))).value()[0] == doctest::Approx(-1.0).epsilon(1e-15));
  auto t = facegan::tanh(g.leaf(random_tensor({100}, 3, -5, 5)));
  for (double v : t.value().data()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("fully_connected") {
  Graph<double> g;
  Tensor<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  auto x = random_tensor({2, 3}, 5);
  CHECK(fully_connected(g.leaf(x), g.leaf(eye), g.leaf(Tensor<double>({3}))).value() == x);

  auto b = random_tensor({2}, 6);
  auto zero_in = fully_connected(g.leaf(Tensor<double>({4, 3})), g.leaf(random_tensor({2, 3}, 1)), g.leaf(b));
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 2; ++c) CHECK(zero_in.value()[r * 2 + c] == b[c]);

  auto w = random_tensor({3, 3}, 7);
  auto bias = random_tensor({3}, 8);
  auto y = fully_connected(g.leaf(x), g.leaf(w), g.leaf(bias));
  for (int r = 0; r < 2; ++r)
    for (int o = 0; o < 3; ++o) {
      double acc = bias[o];
      for (int i = 0; i < 3; ++i) acc += w[o * 3 + i] * x[r * 3 + i];
      CHECK(y.value()[r * 3 + o] == doctest::Approx(acc).epsilon(1e-14));
    }
  CHECK_THROWS_AS(fully_connected(g.leaf(x), g.leaf(Tensor<double>({3, 4})), g.leaf(Tensor<double>({3}))),
                  ShapeError);
}

TEST_CASE("l1_mean") {
  Graph<double> g;
  auto a = g.leaf(random_tensor({3, 4}, 1));
  CHECK(l1_mean(a, a).value()[0] == 0.0);
  auto p = g.leaf(Tensor<double>({2}, std::vector<double>{1, -1}));
  CHECK(l1_mean(p, g.leaf(Tensor<double>({2}))).value()[0] == 1.0);

  auto ra = random_tensor({5, 7}, 2);
  auto rb = random_tensor({5, 7}, 3);
  double acc = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) acc += std::abs(ra[i] - rb[i]);
  auto va = g.leaf(ra), vb = g.leaf(rb);
  CHECK(l1_mean(va, vb).value()[0] == doctest::Approx(acc / 35.0).epsilon(1e-14));
  CHECK(l1_mean(va, vb).value()[0] == l1_mean(vb, va).value()[0]);
  CHECK_THROWS_AS(l1_mean(va, g.leaf(Tensor<double>({7, 5}))), ShapeError);

  // subgradient at equality is zero
  Graph<double> g2;
  auto x = g2.leaf(Tensor<double>({3}, 0.5), true);
  auto y = g2.leaf(Tensor<double>({3}, 0.5));
  auto loss = l1_mean(x, y);
  g2.backward(loss);
  const auto gx = g2.gradient(x);
  for (double v : gx.data()) CHECK(v == 0.0);
}

TEST_CASE("backward basics") {
  Graph<double> g;
  auto x = g.leaf(random_tensor({2, 3}, 4), true);
  auto p = g.leaf(random_tensor({5}, 5), true);
  auto loss = sum(x);
  g.backward(loss);
  const auto gx = g.gradient(x);
  for (double v : gx.data()) CHECK(v == 1.0);
  const auto gp = g.gradient(p);
  for (double v : gp.data()) CHECK(v == 0.0);
  CHECK_THROWS_AS(g.backward(x), ShapeError);
}

TEST_CASE("non-finite values are surfaced") {
  Graph<double> g;
  Tensor<double> t({2});
  t[1] = std::nan("");
  CHECK_THROWS_AS(g.leaf(t), NumericalError);
}

TEST_CASE("operator gradients match central differences over 10 seeds") {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto target = random_tensor({2, 3, 4, 4}, 1000 + seed);
    const std::vector<std::pair<const char*, GradCheckFn>> cases = {
        {"conv3", [&](Graph<double>& g, std::span<const Var<double>> v) {
           return l1_mean(conv2d(v[0], v[1], v[2]), g.leaf(target));
         }},
        {"conv1", [&](Graph<double>& g, std::span<const Var<double>> v) {
           return l1_mean(conv2d(v[0], v[3], v[2]), g.leaf(target));
         }},
        {"pool+up", [&](Graph<double>& g, std::span<const Var<double>> v) {
           return l1_mean(upsample_nearest2(avg_pool2(v[0])), g.leaf(random_tensor({2, 2, 4, 4}, seed)));
         }},
        {"elu", [&](Graph<double>& g, std::span<const Var<double>> v) {
           return l1_mean(elu(v[0]), g.leaf(random_tensor({2, 2, 4, 4}, seed + 1)));
         }},
        {"tanh", [&](Graph<double>& g, std::span<const Var<double>> v) {
           return l1_mean(facegan::tanh(v[0]), g.leaf(random_tensor({2, 2, 4, 4}, seed + 2)));
         }},
        {"fc", [&](Graph<double>& g, std::span<const Var<double>> v) {
           auto flat = reshape(v[0], {2, 32});
           return l1_mean(fully_connected(flat, v[4], v[5]), g.leaf(random_tensor({2, 3}, seed + 3)));
         }},
        {"add+concat", [&](Graph<double>& g, std::span<const Var<double>> v) {
           auto cat = concat_channels(v[0], add(v[0], v[0]));
           return sum(axpy(elu(cat), 0.3, facegan::tanh(cat)));
           (void)g;
         }},
    };
    std::vector<Tensor<double>> inputs = {
        random_tensor({2, 2, 4, 4}, seed),      random_tensor({3, 2, 3, 3}, seed + 10),
        random_tensor({3}, seed + 20),          random_tensor({3, 2, 1, 1}, seed + 30),
        random_tensor({3, 32}, seed + 40),      random_tensor({3}, seed + 50)};
    for (const auto& [name, fn] : cases) {
      const auto r = check_gradients(fn, inputs, 1e-4);
      INFO(std::string(name) << " seed " << seed << " worst " << r.worst_input);
      CHECK(r.max_rel_error < 1e-4);
      worst = std::max(worst, r.max_rel_error);
    }
  }
  MESSAGE("max relative error over operators: " << worst);
}

TEST_CASE("composite conv-ELU-pool-FC gradients") {
  const auto target = random_tensor({1, 2}, 77);
  GradCheckFn net = [&](Graph<double>& g, std::span<const Var<double>> v) {
    auto h = avg_pool2(elu(conv2d(v[0], v[1], v[2])));
    auto out = fully_connected(reshape(h, {1, 3 * 2 * 2}), v[3], v[4]);
    return l1_mean(out, g.leaf(target));
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::vector<Tensor<double>> in = {random_tensor({1, 2, 4, 4}, seed), random_tensor({3, 2, 3, 3}, seed + 1),
                                      random_tensor({3}, seed + 2), random_tensor({2, 12}, seed + 3),
                                      random_tensor({2}, seed + 4)};
    CHECK(check_gradients(net, in, 1e-4).max_rel_error < 1e-4);
  }
}

TEST_CASE("forward is deterministic") {
  auto run = [] {
    Graph<float> g;
    auto x = g.leaf(random_tensor<float>({2, 3, 8, 8}, 1));
    auto y = avg_pool2(elu(conv2d(x, g.leaf(random_tensor<float>({4, 3, 3, 3}, 2)), g.leaf(random_tensor<float>({4}, 3)))));
    return y.value();
  };
  CHECK(run() == run());
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Parameter<float>> ps{{"p", random_tensor<float>({4}, 1), Tensor<float>({4}), false}};
    const auto before = ps[0].value;
    Adam<float> adam;
    for (int i = 0; i < 3; ++i) adam.step(ps, 1e-3);
    CHECK(ps[0].value == before);
  }
  SUBCASE("first step moves by about lr against the gradient") {
    for (double gval : {0.3, -2.0, 1e-3}) {
      std::vector<Parameter<double>> ps{{"p", Tensor<double>({1}, 1.0), Tensor<double>({1}, gval), false}};
      Adam<double> adam;
      adam.step(ps, 0.01);
      const double delta = ps[0].value[0] - 1.0;
      CHECK(std::abs(delta) == doctest::Approx(0.01 * std::abs(gval) / (std::abs(gval) + 1e-8)).epsilon(1e-12));
      CHECK(std::abs(delta) == doctest::Approx(0.01).epsilon(1e-4));
      CHECK((delta < 0) == (gval > 0));
    }
  }
  SUBCASE("three-step trajectory matches a scalar reference") {
    const double grads[3] = {0.5, -0.25, 1.5};
    const double lr = 0.05, b1 = 0.5, b2 = 0.999, eps = 1e-8;
    double p = 2.0, m = 0, v = 0;
    std::vector<Parameter<double>> ps{{"p", Tensor<double>({1}, 2.0), Tensor<double>({1}), false}};
    Adam<double> adam;
    for (int t = 1; t <= 3; ++t) {
      m = b1 * m + (1 - b1) * grads[t - 1];
      v = b2 * v + (1 - b2) * grads[t - 1] * grads[t - 1];
      const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
      p -= lr * mh / (std::sqrt(vh) + eps);
      ps[0].grad[0] = grads[t - 1];
      adam.step(ps, lr);
      CHECK(ps[0].value[0] == doctest::Approx(p).epsilon(1e-12));
    }
    CHECK(adam.steps() == 3);
  }
  SUBCASE("frozen parameters stay bit-identical") {
    std::vector<Parameter<float>> ps{{"a", random_tensor<float>({8}, 1), random_tensor<float>({8}, 2), true},
                                     {"b", random_tensor<float>({8}, 3), random_tensor<float>({8}, 4), false}};
    const auto frozen_before = ps[0].value;
    const auto free_before = ps[1].value;
    Adam<float> adam;
    for (int i = 0; i < 25; ++i) adam.step(ps, 1e-2);
    CHECK(ps[0].value == frozen_before);
    CHECK_FALSE(ps[1].value == free_before);
  }
  SUBCASE("missing gradient is an error") {
    std::vector<Parameter<float>> ps{{"w", Tensor<float>({2}), Tensor<float>(), false}};
    Adam<float> adam;
    CHECK_THROWS_WITH(adam.step(ps, 1e-3), doctest::Contains("missing gradient for parameter w"));
  }
}
