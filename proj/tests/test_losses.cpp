#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "camp/gradcheck.hpp"
#include "camp/losses.hpp"
#include "camp/synth.hpp"

using namespace camp;

namespace {

int g_warnings = 0;
void count_warning(const char*) { ++g_warnings; }

Tensor<double> unit_rows(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> d(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double n = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      d[r * cols + c] = rng.normal();
      n += d[r * cols + c] * d[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) d[r * cols + c] /= std::sqrt(n);
  }
  return Tensor<double>({rows, cols}, d);
}

double dot(const Tensor<double>& a, std::size_t i, const Tensor<double>& b, std::size_t j) {
  double s = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) s += a.at(i, c) * b.at(j, c);
  return s;
}

// -(1/B) sum_i log(exp(a_i.b_i/tau) / sum_j exp(a_i.b_j/tau) [+ exp(a_i.n_j/tau)])
double naive_infonce(const Tensor<double>& a, const Tensor<double>& b, const Tensor<double>* n, double tau) {
  const std::size_t B = a.rows();
  double total = 0;
  for (std::size_t i = 0; i < B; ++i) {
    double denom = 0;
    for (std::size_t j = 0; j < B; ++j) {
      denom += std::exp(dot(a, i, b, j) / tau);
      if (n) denom += std::exp(dot(a, i, *n, j) / tau);
    }
    total -= std::log(std::exp(dot(a, i, b, i) / tau) / denom);
  }
  return total / static_cast<double>(B);
}

Tensor<double> permute_rows(const Tensor<double>& t, const std::vector<std::size_t>& perm) {
  std::vector<double> d(t.numel());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) d[r * t.cols() + c] = t.at(perm[r], c);
  }
  return Tensor<double>(t.shape(), d);
}

}  // namespace

TEST(ContrastiveLoss, UniformSimilaritiesGiveLogB) {
  for (std::size_t B : {2, 4, 8}) {
    // every row identical: all logits equal
    auto p = Tensor<double>({B, 3}, std::vector<double>(B * 3, 0.0));
    auto q = p.clone();
    for (std::size_t r = 0; r < B; ++r) {
      p.data_mut()[r * 3] = 1.0;
      q.data_mut()[r * 3 + 1] = 1.0;
    }
    const auto t = contrastive_loss(p, q, logit_scale_from_tau<double>(0.07));
    EXPECT_NEAR(t.l_t2i.item(), std::log(double(B)), 1e-6);
    EXPECT_NEAR(t.l_i2t.item(), std::log(double(B)), 1e-6);
    EXPECT_NEAR(t.l_con.item(), std::log(double(B)), 1e-6);
  }
  const auto p = Tensor<double>({4, 2}, {1, 0, 1, 0, 1, 0, 1, 0});
  EXPECT_NEAR(contrastive_loss(p, p, logit_scale_from_tau<double>(0.5)).l_con.item(), 1.386294, 1e-6);
}

TEST(ContrastiveLoss, NearOneHotIsNearZero) {
  const auto p = Tensor<double>({2, 2}, {1, 0, 0, 1});
  EXPECT_LT(contrastive_loss(p, p, logit_scale_from_tau<double>(0.01)).l_con.item(), 1e-6);
}

TEST(ContrastiveLoss, MatchesNaiveLoopOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = unit_rows(5, 7, 10 + seed), q = unit_rows(5, 7, 20 + seed);
    const double tau = 0.07 + 0.1 * double(seed);
    const auto t = contrastive_loss(p, q, logit_scale_from_tau<double>(tau));
    const double t2i = naive_infonce(p, q, nullptr, tau), i2t = naive_infonce(q, p, nullptr, tau);
    EXPECT_NEAR(t.l_t2i.item(), t2i, 1e-6);
    EXPECT_NEAR(t.l_i2t.item(), i2t, 1e-6);
    EXPECT_NEAR(t.l_con.item(), 0.5 * (t2i + i2t), 1e-6);
    EXPECT_GE(t.l_con.item(), 0.0);
  }
}

TEST(ContrastiveLoss, DecreasesAsDiagonalSimilarityGrows) {
  // p_i = cos(a) e_i + sin(a) e_{B}, q_i = e_i: off-diagonals stay 0
  const std::size_t B = 4;
  double prev = 1e9;
  for (double a : {1.4, 1.0, 0.6, 0.2, 0.0}) {
    std::vector<double> pd((B) * (B + 1), 0.0), qd((B) * (B + 1), 0.0);
    for (std::size_t i = 0; i < B; ++i) {
      pd[i * (B + 1) + i] = std::cos(a);
      pd[i * (B + 1) + B] = std::sin(a);
      qd[i * (B + 1) + i] = 1.0;
    }
    const auto l = contrastive_loss(Tensor<double>({B, B + 1}, pd), Tensor<double>({B, B + 1}, qd),
                                    logit_scale_from_tau<double>(0.1))
                       .l_con.item();
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(ContrastiveLoss, ErrorsAndWarnings) {
  EXPECT_THROW(logit_scale_from_tau<double>(0.0), ConfigError);
  EXPECT_THROW(logit_scale_from_tau<double>(-1.0), ConfigError);
  g_warnings = 0;
  set_warning_sink(count_warning);
  const auto p = Tensor<double>({2, 2}, {2, 0, 0, 1});
  contrastive_loss(p, p, logit_scale_from_tau<double>(0.1));
  set_warning_sink(nullptr);
  EXPECT_GE(g_warnings, 1);
}

TEST(DiversityLoss, Examples) {
  EXPECT_NEAR(diversity_loss(Tensor<double>({2, 2}, {0.3, 0.4, 0.3, 0.4}), 2).item(), 1.0, 1e-12);
  EXPECT_NEAR(diversity_loss(Tensor<double>({2, 2}, {1, 0, 0, 1}), 2).item(), 0.0, 1e-12);
  EXPECT_NEAR(diversity_loss(Tensor<double>({3, 2}, {1, 0, 0, 1, -1, 0}), 3).item(), -1.0 / 3, 1e-12);
  EXPECT_EQ(diversity_loss(Tensor<double>({1, 2}, {1, 0}), 1).item(), 0.0);
  EXPECT_THROW(diversity_loss(Tensor<double>({3, 2}, std::vector<double>(6, 1.0)), 2), DimensionError);
}

TEST(DiversityLoss, MatchesPairwiseCosineOracleAndStaysInRange) {
  const std::size_t B = 3, K = 4, w = 5;
  SplitMix64 rng(3);
  std::vector<double> d(B * K * w);
  for (auto& x : d) x = rng.normal();
  const Tensor<double> seg({B * K, w}, d);
  double oracle = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < K; ++i) {
      for (std::size_t j = 0; j < K; ++j) {
        if (i == j) continue;
        const auto r = b * K + i, s = b * K + j;
        oracle += dot(seg, r, seg, s) / std::sqrt(dot(seg, r, seg, r) * dot(seg, s, seg, s));
      }
    }
  }
  oracle /= double(B * K * (K - 1));
  const double l = diversity_loss(seg, K).item();
  EXPECT_NEAR(l, oracle, 1e-12);
  EXPECT_GE(l, -1.0);
  EXPECT_LE(l, 1.0);
}

TEST(NegationLoss, DenominatorDoublingAndVanishingNegatives) {
  const auto q = unit_rows(4, 6, 1), p = unit_rows(4, 6, 2);
  const auto s = logit_scale_from_tau<double>(0.2);
  const double i2t = contrastive_loss(p, q, s).l_i2t.item();
  EXPECT_NEAR(negation_loss(q, p, p, s).item(), i2t + std::log(2.0), 1e-6);
  // negations antipodal to every q: exp(-2/tau) with tau small vanishes
  const auto s_small = logit_scale_from_tau<double>(0.005);
  const auto one = Tensor<double>({4, 2}, {1, 0, 1, 0, 1, 0, 1, 0});
  const auto p2 = Tensor<double>({4, 2}, {1, 0, 0.6, 0.8, 0.8, 0.6, 0, 1});
  const auto neg = Tensor<double>({4, 2}, {-1, 0, -1, 0, -1, 0, -1, 0});
  EXPECT_NEAR(negation_loss(one, p2, neg, s_small).item(), contrastive_loss(p2, one, s_small).l_i2t.item(), 1e-9);
}

TEST(NegationLoss, MatchesNaiveLoopOracleAndBoundsI2t) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto q = unit_rows(4, 6, 30 + seed), p = unit_rows(4, 6, 40 + seed), n = unit_rows(4, 6, 50 + seed);
    const double tau = 0.1;
    const auto s = logit_scale_from_tau<double>(tau);
    const double l = negation_loss(q, p, n, s).item();
    EXPECT_NEAR(l, naive_infonce(q, p, &n, tau), 1e-6);
    EXPECT_GE(l, contrastive_loss(p, q, s).l_i2t.item());
  }
}

TEST(TotalLoss, Composition) {
  const auto q = unit_rows(4, 6, 1), p = unit_rows(4, 6, 2), n = unit_rows(4, 6, 3);
  const auto s = logit_scale_from_tau<double>(0.07);
  const auto con = contrastive_loss(p, q, s);
  const auto div = Tensor<double>::scalar(0.5);
  const auto neg = negation_loss(q, p, n, s);
  const auto none = total_loss(con, div, neg, 0.0, 0.0, s);
  EXPECT_EQ(none.total.item(), con.l_con.item());
  const auto full = total_loss(con, div, neg, kDefaultAlpha, kDefaultBeta, s);
  EXPECT_NEAR(full.total.item(), con.l_con.item() + 0.1 * 0.5 + 0.1 * neg.item(), 1e-12);
  EXPECT_TRUE(full.breakdown.has_neg);
  EXPECT_NEAR(full.breakdown.tau, 0.07, 1e-12);
  EXPECT_EQ(kDefaultAlpha, 0.1);
  EXPECT_EQ(kDefaultBeta, 0.1);

  ContrastiveTerms<double> fixed;
  fixed.l_con = Tensor<double>::scalar(2.0);
  fixed.l_t2i = fixed.l_i2t = fixed.l_con;
  const auto arith = total_loss(fixed, Tensor<double>::scalar(0.5), Tensor<double>(), 0.1, 0.0, s);
  EXPECT_NEAR(arith.total.item(), 2.05, 1e-12);
  EXPECT_FALSE(arith.breakdown.has_neg);
}

TEST(TotalLoss, GradientIsSumOfComponentGradients) {
  const std::size_t B = 3, K = 2, D = 6;
  SplitMix64 rng(11);
  std::vector<double> wd(D * D);
  for (auto& x : wd) x = 0.4 * rng.normal();
  Tensor<double> w({D, D}, wd, true);
  const auto raw_p = unit_rows(B * K, D / K, 5), raw_n = unit_rows(B * K, D / K, 6), q_in = unit_rows(B, D, 7);
  const auto s = logit_scale_from_tau<double>(0.2);

  enum Part { con, div, neg, total };
  auto grad_of = [&](Part part) {
    w.drop_grad();
    GradTape<double> tape;
    Tensor<double> loss;
    {
      GradTape<double>::Scope scope(tape);
      // the parameter feeds both the vision rows and the segment rows
      const auto q = l2_normalize(matmul(q_in, w));
      const auto seg = matmul(reshape(raw_p, {B, D}), w);
      const auto segments = reshape(seg, {B * K, D / K});
      const auto p = l2_normalize(seg);
      const auto n = l2_normalize(matmul(reshape(raw_n, {B, D}), w));
      const auto c = contrastive_loss(p, q, s);
      const auto d = diversity_loss(segments, K);
      const auto ng = negation_loss(q, p, n, s);
      switch (part) {
        case con: loss = c.l_con; break;
        case div: loss = d; break;
        case neg: loss = ng; break;
        case total: loss = total_loss(c, d, ng, 0.1, 0.1, s).total; break;
      }
    }
    tape.backward(loss);
    return std::vector<double>(w.grad().begin(), w.grad().end());
  };
  const auto gc = grad_of(con), gd = grad_of(div), gn = grad_of(neg), gt = grad_of(total);
  for (std::size_t i = 0; i < gt.size(); ++i) EXPECT_NEAR(gt[i], gc[i] + 0.1 * gd[i] + 0.1 * gn[i], 1e-10);
}

TEST(Losses, PermutationEquivariance) {
  const auto q = unit_rows(6, 4, 1), p = unit_rows(6, 4, 2), n = unit_rows(6, 4, 3);
  const auto seg = unit_rows(12, 2, 4);
  const auto s = logit_scale_from_tau<double>(0.1);
  std::vector<std::size_t> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  SplitMix64 rng(9);
  rng.shuffle(perm);
  std::vector<std::size_t> seg_perm;
  for (auto b : perm) {
    seg_perm.push_back(2 * b);
    seg_perm.push_back(2 * b + 1);
  }
  const auto pq = permute_rows(q, perm), pp = permute_rows(p, perm), pn = permute_rows(n, perm);
  EXPECT_NEAR(contrastive_loss(p, q, s).l_con.item(), contrastive_loss(pp, pq, s).l_con.item(), 1e-6);
  EXPECT_NEAR(negation_loss(q, p, n, s).item(), negation_loss(pq, pp, pn, s).item(), 1e-6);
  EXPECT_NEAR(diversity_loss(seg, 2).item(), diversity_loss(permute_rows(seg, seg_perm), 2).item(), 1e-6);
}

TEST(Losses, TemperatureGradientMatchesFiniteDifferences) {
  const auto q = unit_rows(5, 6, 1), p = unit_rows(5, 6, 2);
  const double tau = 0.15;
  auto s = Tensor<double>::scalar(1.0 / tau, true);
  GradTape<double> tape;
  Tensor<double> l;
  {
    GradTape<double>::Scope scope(tape);
    l = contrastive_loss(p, q, s).l_con;
  }
  tape.backward(l);
  const double analytic = s.grad()[0] * (-1.0 / (tau * tau));  // ds/dtau = -1/tau^2
  const double h = 1e-6;
  const double numeric = (contrastive_loss(p, q, logit_scale_from_tau<double>(tau + h)).l_con.item() -
                          contrastive_loss(p, q, logit_scale_from_tau<double>(tau - h)).l_con.item()) /
                         (2 * h);
  EXPECT_LT(std::abs(analytic - numeric) / std::abs(numeric), 1e-3);
}
