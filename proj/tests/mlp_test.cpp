#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "busctl/mlp.hpp"

using namespace busctl;

namespace {

/// Loss = sum_o c_o * out_o, so d(loss)/d(out) = c.
double linear_loss(const Mlp& net, const Vector& x, const Vector& c) { return c.dot(net.forward(x)); }

}  // namespace

TEST(Mlp, ParameterCountAndShapes) {
  Mlp net({7, 64, 64, 3});
  EXPECT_EQ(net.parameter_count(), 64 * 8 + 64 * 65 + 3 * 65);
  EXPECT_EQ(net.weights(0).rows(), 64);
  EXPECT_EQ(net.weights(0).cols(), 7);
  EXPECT_EQ(net.bias(2).size(), 3);
  EXPECT_THROW(Mlp({4}), ConfigError);
  EXPECT_THROW(Mlp({4, 0, 1}), ConfigError);
}

TEST(Mlp, ForwardMatchesHandComputation) {
  Mlp net({2, 2, 1});
  net.weights(0) << 0.5, -1.0, 0.25, 2.0;
  net.bias(0) << 0.1, -0.2;
  net.weights(1) << 1.5, -0.5;
  net.bias(1) << 0.3;
  Vector x(2);
  x << 0.4, -0.3;
  const double h0 = std::tanh(0.5 * 0.4 - 1.0 * -0.3 + 0.1);
  const double h1 = std::tanh(0.25 * 0.4 + 2.0 * -0.3 - 0.2);
  EXPECT_NEAR(net.forward(x)(0), 1.5 * h0 - 0.5 * h1 + 0.3, 1e-15);
  Mlp::Cache cache;
  EXPECT_EQ(net.forward(x, cache)(0), net.forward(x)(0));
  EXPECT_EQ(cache.activations.size(), 3u);
}

TEST(Mlp, InitializationIsSeededAndScaled) {
  Mlp a({7, 16, 3}), b({7, 16, 3});
  a.initialize(5, 0.01);
  b.initialize(5, 0.01);
  EXPECT_EQ(a.parameters(), b.parameters());
  EXPECT_TRUE(a.bias(0).isZero());
  const double first = std::sqrt(6.0 / 23.0), last = 0.01 * std::sqrt(6.0 / 19.0);
  EXPECT_LE(a.weights(0).cwiseAbs().maxCoeff(), first);
  EXPECT_LE(a.weights(1).cwiseAbs().maxCoeff(), last);
  b.initialize(6, 0.01);
  EXPECT_NE(a.parameters(), b.parameters());
}

TEST(Mlp, BackwardMatchesCentralDifferences) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 50; ++trial) {
    Mlp net({5, 8, 6, 3});
    net.initialize(static_cast<std::uint64_t>(trial) + 100, 1.0);
    Vector x(5), c(3);
    for (auto& v : x) v = n01(rng);
    for (auto& v : c) v = n01(rng);
    Mlp::Cache cache;
    net.forward(x, cache);
    Vector grad = Vector::Zero(net.parameter_count());
    net.backward(cache, c, grad);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < net.parameter_count(); ++i) {
      const double saved = net.parameters()(i);
      net.parameters()(i) = saved + h;
      const double up = linear_loss(net, x, c);
      net.parameters()(i) = saved - h;
      const double down = linear_loss(net, x, c);
      net.parameters()(i) = saved;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(grad(i), fd, 1e-4 * std::max(1.0, std::abs(fd))) << "trial " << trial << " param " << i;
    }
  }
}

TEST(Mlp, BackwardAccumulates) {
  Mlp net({3, 4, 2});
  net.initialize(1, 1.0);
  Vector x = Vector::Ones(3), g = Vector::Ones(2);
  Mlp::Cache cache;
  net.forward(x, cache);
  Vector once = Vector::Zero(net.parameter_count()), twice = once;
  net.backward(cache, g, once);
  net.backward(cache, g, twice);
  net.backward(cache, g, twice);
  EXPECT_TRUE(twice.isApprox(2.0 * once));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Vector p(3), g(3);
  p << 1.0, -2.0, 0.5;
  g << 0.3, -7.0, 1e-3;
  AdamState st(3, 1e-3);
  optimizer_step(p, g, st);
  // Bias-corrected m/sqrt(v) is sign(g) on the first step, up to epsilon.
  EXPECT_NEAR(p(0), 1.0 - 1e-3, 1e-10);
  EXPECT_NEAR(p(1), -2.0 + 1e-3, 1e-10);
  EXPECT_NEAR(p(2), 0.5 - 1e-3, 1e-7);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, MatchesReferenceRecursion) {
  Vector p = Vector::Zero(1), g(1);
  AdamState st(1, 0.1);
  double m = 0, v = 0, x = 0;
  for (int t = 1; t <= 20; ++t) {
    const double grad = std::sin(t) + 0.5;
    g(0) = grad;
    optimizer_step(p, g, st);
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p(0), x, 1e-12);
  }
}

TEST(Adam, ShapeMismatchThrows) {
  Vector p = Vector::Zero(2), g = Vector::Zero(3);
  AdamState st(2, 0.1);
  EXPECT_THROW(optimizer_step(p, g, st), std::logic_error);
}
