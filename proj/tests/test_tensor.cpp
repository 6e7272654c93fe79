#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "camp/gradcheck.hpp"
#include "camp/ops.hpp"
#include "camp/synth.hpp"

using namespace camp;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, bool grad = true, double scale = 1.0) {
  SplitMix64 rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return Tensor<double>(std::move(shape), std::move(v), grad);
}

// Analytic gradient of f at x through the tape.
Tensor<double> tape_grad(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x) {
  x.drop_grad();
  GradTape<double> tape;
  Tensor<double> out;
  {
    GradTape<double>::Scope scope(tape);
    out = f(x);
  }
  tape.backward(out);
  auto g = Tensor<double>::zeros(x.shape());
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), g.data_mut().begin());
  return g;
}

double max_rel_error(const Tensor<double>& a, const Tensor<double>& n) {
  return compare_gradients<double>(a.data(), n.data(), 1e-6).max_rel_error;
}

void expect_grad_matches(const std::function<Tensor<double>(const Tensor<double>&)>& f, Tensor<double> x,
                         double tol = 1e-4) {
  const auto analytic = tape_grad(f, x);
  const auto numeric = finite_diff_grad<double>([&](const Tensor<double>& t) { return f(t).item(); }, x, 1e-3);
  EXPECT_LT(max_rel_error(analytic, numeric), tol);
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), DimensionError);
  EXPECT_THROW(Tensor<float>({0, 3}, {}), DimensionError);
  Tensor<float> t({2, 3}, std::vector<float>(6, 1.0f));
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Tensor, CopiesShareStorageCloneDoesNot) {
  Tensor<float> a({2}, {1, 2});
  Tensor<float> b = a;
  b.data_mut()[0] = 5;
  EXPECT_EQ(a.data()[0], 5);
  auto c = a.clone();
  c.data_mut()[0] = 7;
  EXPECT_EQ(a.data()[0], 5);
}

TEST(Matmul, IdentityAndProjector) {
  Tensor<float> eye({2, 2}, {1, 0, 0, 1});
  Tensor<float> m({2, 2}, {1, 2, 3, 4});
  auto r = matmul(eye, m);
  EXPECT_EQ(std::vector<float>(r.data().begin(), r.data().end()), (std::vector<float>{1, 2, 3, 4}));
  Tensor<float> p({2, 2}, {1, 0, 0, 0});
  Tensor<float> n({2, 2}, {5, 6, 7, 8});
  auto s = matmul(p, n);
  EXPECT_EQ(std::vector<float>(s.data().begin(), s.data().end()), (std::vector<float>{5, 6, 0, 0}));
}

TEST(Matmul, MatchesNaiveTripleLoop) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto a = random_tensor({3, 4}, seed, false);
    auto b = random_tensor({4, 2}, seed + 100, false);
    auto c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
        EXPECT_NEAR(c.at(i, j), s, 1e-6);
      }
    }
  }
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  EXPECT_THROW(matmul(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({2, 3})), DimensionError);
}

TEST(Softmax, Examples) {
  auto a = softmax(Tensor<double>({2}, {0, 0}));
  EXPECT_NEAR(a.data()[0], 0.5, 1e-12);
  EXPECT_NEAR(a.data()[1], 0.5, 1e-12);
  auto b = softmax(Tensor<double>({3}, {std::log(1.0), std::log(2.0), std::log(3.0)}));
  EXPECT_NEAR(b.data()[0], 1.0 / 6, 1e-12);
  EXPECT_NEAR(b.data()[1], 2.0 / 6, 1e-12);
  EXPECT_NEAR(b.data()[2], 3.0 / 6, 1e-12);
  auto c = softmax(Tensor<float>({2}, {1000, 0}));
  EXPECT_NEAR(c.data()[0], 1.0f, 1e-6);
  EXPECT_NEAR(c.data()[1], 0.0f, 1e-6);
}

TEST(Softmax, RowsSumToOneForLargeInputs) {
  SplitMix64 rng(3);
  std::vector<float> v(20 * 17);
  for (auto& x : v) x = static_cast<float>((rng.uniform() * 2 - 1) * 1e4);
  auto s = softmax(Tensor<float>({20, 17}, v));
  for (std::size_t r = 0; r < 20; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 17; ++c) {
      EXPECT_GE(s.at(r, c), 0.0f);
      sum += s.at(r, c);
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(LayerNorm, Examples) {
  auto g = Tensor<double>::full({3}, 1.0), b = Tensor<double>::zeros({3});
  auto y = layer_norm(Tensor<double>({1, 3}, {5, 5, 5}), g, b, 1e-5);
  for (double v : y.data()) EXPECT_NEAR(v, 0.0, 1e-12);
  auto g2 = Tensor<double>::full({2}, 1.0), b2 = Tensor<double>::zeros({2});
  auto z = layer_norm(Tensor<double>({1, 2}, {1, -1}), g2, b2, 1e-12);
  EXPECT_NEAR(z.data()[0], 1.0, 1e-9);
  EXPECT_NEAR(z.data()[1], -1.0, 1e-9);
}

TEST(LayerNorm, InputGradientMatchesFiniteDifferences) {
  auto g = random_tensor({5}, 11, false), b = random_tensor({5}, 12, false);
  auto w = random_tensor({4, 5}, 13, false);
  expect_grad_matches([&](const Tensor<double>& x) { return sum(mul(layer_norm(x, g, b, 1e-5), w)); },
                      random_tensor({4, 5}, 14));
}

TEST(L2Normalize, Examples) {
  auto a = l2_normalize(Tensor<double>({1, 2}, {3, 4}));
  EXPECT_NEAR(a.data()[0], 0.6, 1e-12);
  EXPECT_NEAR(a.data()[1], 0.8, 1e-12);
  auto u = l2_normalize(Tensor<double>({1, 3}, {0, 1, 0}));
  EXPECT_NEAR(u.data()[1], 1.0, 1e-12);
  int warnings = 0;
  static int* counter = nullptr;
  counter = &warnings;
  set_warning_sink([](const char*) { ++*counter; });
  auto z = l2_normalize(Tensor<double>({1, 2}, {0, 0}), 1e-8);
  set_warning_sink(nullptr);
  for (double v : z.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_GE(warnings, 1);
}

TEST(GatherRows, Examples) {
  Tensor<float> x({3, 2}, {0, 1, 10, 11, 20, 21});
  const std::vector<std::size_t> last{2}, ident{0, 1, 2}, dup{1, 1};
  auto a = gather_rows(x, std::span<const std::size_t>(last));
  EXPECT_EQ(a.at(0, 0), 20);
  auto b = gather_rows(x, std::span<const std::size_t>(ident));
  EXPECT_TRUE(std::equal(b.data().begin(), b.data().end(), x.data().begin()));
  auto c = gather_rows(x, std::span<const std::size_t>(dup));
  EXPECT_EQ(c.at(0, 1), 11);
  EXPECT_EQ(c.at(1, 1), 11);
  const std::vector<std::size_t> bad{3};
  EXPECT_THROW(gather_rows(x, std::span<const std::size_t>(bad)), IndexError);
}

TEST(Backward, DotProductGradient) {
  Tensor<double> x({3}, {1, 2, 3}, true);
  Tensor<double> y({3}, {4, -5, 6}, false);
  GradTape<double> tape;
  Tensor<double> loss;
  {
    GradTape<double>::Scope s(tape);
    loss = sum(mul(x, y));
  }
  tape.backward(loss);
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{4, -5, 6}));
  EXPECT_FALSE(y.has_grad());
}

TEST(Backward, L2NormalizeSumMatchesFiniteDifferences) {
  expect_grad_matches([](const Tensor<double>& x) { return sum(l2_normalize(x)); },
                      Tensor<double>({1, 2}, {3, 4}, true));
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor<double> x({2}, {1, 2}, true);
  GradTape<double> tape;
  Tensor<double> y;
  {
    GradTape<double>::Scope s(tape);
    y = scale(x, 2.0);
  }
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, CallingTwiceAccumulates) {
  Tensor<double> x({2}, {1, 2}, true);
  for (int i = 0; i < 2; ++i) {
    GradTape<double> tape;
    Tensor<double> y;
    {
      GradTape<double>::Scope s(tape);
      y = sum(scale(x, 3.0));
    }
    tape.backward(y);
  }
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Backward, FanOutSumsConsumerGradients) {
  auto x = random_tensor({2, 3}, 5);
  auto f1 = [](const Tensor<double>& t) { return sum(exp(t)); };
  auto f2 = [](const Tensor<double>& t) { return sum(mul(t, t)); };
  auto f3 = [](const Tensor<double>& t) { return sum(gelu(t)); };
  const auto g1 = tape_grad(f1, x), g2 = tape_grad(f2, x), g3 = tape_grad(f3, x);
  const auto all = tape_grad([&](const Tensor<double>& t) { return add(add(f1(t), f2(t)), f3(t)); }, x);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_NEAR(all.data()[i], g1.data()[i] + g2.data()[i] + g3.data()[i], 1e-12);
  }
}

TEST(Backward, NanForwardThrows) {
  Tensor<float> x({2}, {1e30f, 1.0f});
  EXPECT_THROW(exp(scale(x, 1e10f)), NumericError);
}

TEST(FiniteDiff, Examples) {
  auto g = finite_diff_grad<double>([](const Tensor<double>& x) { return x.item() * x.item(); },
                                    Tensor<double>::scalar(3.0), 1e-3);
  EXPECT_NEAR(g.item(), 6.0, 1e-6);
  auto z = finite_diff_grad<double>([](const Tensor<double>& x) { return sum(softmax(x)).item(); },
                                    random_tensor({5}, 1), 1e-3);
  for (double v : z.data()) EXPECT_NEAR(v, 0.0, 1e-9);
  EXPECT_THROW(finite_diff_grad<double>([](const Tensor<double>&) { return 0.0; }, random_tensor({1}, 1), 0.0),
               ConfigError);
}

// Every differentiable op against central differences, 20 seeds each.
class OpGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(OpGradient, AllOpsMatchFiniteDifferences) {
  const std::uint64_t seed = GetParam();
  auto w = random_tensor({3, 4}, seed + 1000, false);
  auto w2 = random_tensor({4, 3}, seed + 2000, false);
  auto bias = random_tensor({3}, seed + 3000, false);
  auto x = random_tensor({3, 4}, seed);
  auto weigh = [&](const Tensor<double>& t) { return sum(mul(t, w)); };
  expect_grad_matches([&](const Tensor<double>& t) { return sum(mul(matmul(t, w2), matmul(t, w2))); }, x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) { return weigh(matmul_nt(matmul(t, w2), w2)); }, x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) { return sum(mul(linear(t, w2, bias), linear(t, w2, bias))); },
                      x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) { return sum(mul(transpose(t), transpose(w))); }, x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) { return weigh(gelu(t)); }, x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) { return weigh(exp(scale(t, 0.5))); }, x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) { return weigh(softmax(t)); }, x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) { return sum(mul(logsumexp_rows(t), bias)); }, x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) { return weigh(l2_normalize(t)); }, x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) { return weigh(sub(t, mul(t, t))); }, x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) { return mean(mul(t, t)); }, x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) { return sum(mul(diag(matmul(t, w2)), bias)); }, x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) {
    const std::vector<std::size_t> idx{2, 0, 2};
    return weigh(gather_rows(t, std::span<const std::size_t>(idx)));
  }, x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) {
    const std::vector<Tensor<double>> parts{t, scale(t, 2.0)};
    return sum(mul(concat_cols(std::span<const Tensor<double>>(parts)), concat_cols(std::span<const Tensor<double>>(
                                                                            std::vector<Tensor<double>>{w, w}))));
  }, x, 1e-3);
  expect_grad_matches([&](const Tensor<double>& t) { return sum(mul(group_sum_rows(reshape(t, {6, 2}), 3),
                                                                    group_sum_rows(reshape(w, {6, 2}), 3))); },
                      x, 1e-3);
  auto s = random_tensor({1}, seed + 4000);
  expect_grad_matches([&](const Tensor<double>& t) { return weigh(mul_scalar(x, t)); }, s, 1e-3);
  auto g = random_tensor({4}, seed + 5000);
  expect_grad_matches([&](const Tensor<double>& t) {
    return weigh(layer_norm(x, t, Tensor<double>::zeros({4}), 1e-5));
  }, g, 1e-3);
  auto row = random_tensor({4}, seed + 6000);
  expect_grad_matches([&](const Tensor<double>& t) { return weigh(add(x, t)); }, row, 1e-3);
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range<std::uint64_t>(0, 20));

TEST(Attention, MaskedAttentionGradientMatchesFiniteDifferences) {
  AttentionLayout layout;
  auto mask = std::make_shared<std::vector<std::uint8_t>>(std::vector<std::uint8_t>{
      1, 0, 0, 0, 1, 1, 0, 0, 1, 0, 1, 0, 1, 0, 1, 1});
  layout.add_group(4, mask);
  layout.add_group(2, nullptr);
  auto q = random_tensor({6, 4}, 1), k = random_tensor({6, 4}, 2), v = random_tensor({6, 4}, 3);
  auto w = random_tensor({6, 4}, 4, false);
  auto f = [&](const Tensor<double>& qq, const Tensor<double>& kk, const Tensor<double>& vv) {
    return sum(mul(masked_attention(qq, kk, vv, 2, layout), w));
  };
  expect_grad_matches([&](const Tensor<double>& t) { return f(t, k, v); }, q, 1e-4);
  expect_grad_matches([&](const Tensor<double>& t) { return f(q, t, v); }, k, 1e-4);
  expect_grad_matches([&](const Tensor<double>& t) { return f(q, k, t); }, v, 1e-4);
}

TEST(Attention, PoolGradientAndWeights) {
  auto query = random_tensor({1, 4}, 1), keys = random_tensor({7, 4}, 2), values = random_tensor({7, 4}, 3);
  const std::vector<std::size_t> lengths{3, 4};
  auto w = random_tensor({2, 4}, 4, false);
  auto f = [&](const Tensor<double>& qq, const Tensor<double>& kk, const Tensor<double>& vv) {
    return sum(mul(attention_pool(qq, kk, vv, 2, std::span<const std::size_t>(lengths)), w));
  };
  expect_grad_matches([&](const Tensor<double>& t) { return f(t, keys, values); }, query, 1e-4);
  expect_grad_matches([&](const Tensor<double>& t) { return f(query, t, values); }, keys, 1e-4);
  expect_grad_matches([&](const Tensor<double>& t) { return f(query, keys, t); }, values, 1e-4);
  std::vector<double> weights;
  attention_pool(query, keys, values, 2, std::span<const std::size_t>(lengths), &weights);
  ASSERT_EQ(weights.size(), 2u * 3 + 2u * 4);
  std::size_t off = 0;
  for (std::size_t len : lengths) {
    for (std::size_t h = 0; h < 2; ++h) {
      double s = 0;
      for (std::size_t i = 0; i < len; ++i) s += weights[off + h * len + i];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    off += 2 * len;
  }
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  auto x = random_tensor({5, 8}, 9, false);
  auto w = random_tensor({8, 8}, 10, false);
  auto a = gelu(layer_norm(matmul(x, w), Tensor<double>::full({8}, 1.0), Tensor<double>::zeros({8}), 1e-5));
  auto b = gelu(layer_norm(matmul(x, w), Tensor<double>::full({8}, 1.0), Tensor<double>::zeros({8}), 1e-5));
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}
