#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "camp/errors.hpp"
#include "camp/eval.hpp"
#include "camp/trainer.hpp"

using namespace camp;

namespace {

std::vector<float> random_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<float> v(n * d);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

// rank = #rows scoring strictly higher + #rows scoring equal with lower index
std::size_t brute_rank(const std::vector<float>& q, const std::vector<float>& g, std::size_t d, std::size_t qi,
                       std::size_t truth) {
  auto score = [&](std::size_t gi) {
    float s = 0;
    for (std::size_t c = 0; c < d; ++c) s += q[qi * d + c] * g[gi * d + c];
    return s;
  };
  const float t = score(truth);
  std::size_t rank = 0;
  for (std::size_t gi = 0; gi < g.size() / d; ++gi) {
    const float s = score(gi);
    if (s > t || (s == t && gi < truth)) ++rank;
  }
  return rank;
}

struct Run {
  int code;
  std::string out;
};

Run run_cli(const std::string& args) {
  const std::string cmd = std::string(CAMP_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string out;
  char buf[512];
  while (pipe && std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pipe ? pclose(pipe) : -1;
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

const std::string kTinyArch =
    "--set embed_dim=24 --set text_hidden=32 --set text_layers=2 --set text_heads=2 --set unfrozen_layers=1 "
    "--set vision_width=16 --set vision_layers=1 --set vision_heads=2 --set mlp_ratio=2 --set batch_size=8 ";

}  // namespace

TEST(Recall, SelfRetrievalIsPerfect) {
  const auto q = random_rows(10, 8, 1);
  std::vector<std::size_t> truth(10);
  for (std::size_t i = 0; i < 10; ++i) truth[i] = i;
  // random rows are not unit-norm; normalize so self-similarity is maximal
  auto n = q;
  for (std::size_t r = 0; r < 10; ++r) {
    float s = 0;
    for (std::size_t c = 0; c < 8; ++c) s += n[r * 8 + c] * n[r * 8 + c];
    for (std::size_t c = 0; c < 8; ++c) n[r * 8 + c] /= std::sqrt(s);
  }
  EXPECT_EQ(recall_at_k(n, n, 8, truth, 1), 1.0);
}

TEST(Recall, ShiftedTruthOnOrthonormalRowsIsZero) {
  std::vector<float> eye(16 * 16, 0.0f);
  for (std::size_t i = 0; i < 16; ++i) eye[i * 16 + i] = 1.0f;
  std::vector<std::size_t> truth(16);
  for (std::size_t i = 0; i < 16; ++i) truth[i] = (i + 1) % 16;
  EXPECT_EQ(recall_at_k(eye, eye, 16, truth, 1), 0.0);
  EXPECT_EQ(recall_at_k(eye, eye, 16, truth, 16), 1.0);
}

TEST(Recall, KLargerThanGalleryIsError) {
  const auto g = random_rows(3, 4, 2);
  const std::vector<std::size_t> truth{0, 1, 2};
  EXPECT_THROW(recall_at_k(g, g, 4, truth, 4), ConfigError);
}

TEST(Recall, TiesGoToLowerIndex) {
  // every gallery row identical: true item i ranks i
  const std::vector<float> q{1, 0}, g{1, 0, 1, 0, 1, 0};
  EXPECT_EQ(true_ranks(q, g, 2, std::vector<std::size_t>{0}), (std::vector<std::size_t>{0}));
  EXPECT_EQ(true_ranks(q, g, 2, std::vector<std::size_t>{2}), (std::vector<std::size_t>{2}));
  EXPECT_EQ(recall_at_k(q, g, 2, std::vector<std::size_t>{1}, 1), 0.0);
  EXPECT_EQ(recall_at_k(q, g, 2, std::vector<std::size_t>{1}, 2), 1.0);
}

TEST(Recall, MatchesBruteForceOracle) {
  SplitMix64 pick(5);
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    const std::size_t Q = 1 + pick.next() % 100, G = 1 + pick.next() % 100, d = 1 + pick.next() % 12;
    auto q = random_rows(Q, d, 100 + trial), g = random_rows(G, d, 200 + trial);
    // coarse rounding produces exact ties
    if (trial % 3 == 0) {
      for (auto& x : q) x = std::round(x);
      for (auto& x : g) x = std::round(x);
    }
    std::vector<std::size_t> truth(Q);
    for (auto& t : truth) t = pick.next() % G;
    const auto ranks = true_ranks(q, g, d, truth);
    for (std::size_t i = 0; i < Q; ++i) ASSERT_EQ(ranks[i], brute_rank(q, g, d, i, truth[i])) << trial;
    for (std::size_t k : {std::size_t{1}, std::size_t{5}, G}) {
      if (k > G) continue;
      std::size_t hits = 0;
      for (std::size_t i = 0; i < Q; ++i) hits += brute_rank(q, g, d, i, truth[i]) < k;
      ASSERT_EQ(recall_at_k(q, g, d, truth, k), double(hits) / double(Q));
    }
  }
}

TEST(Evaluate, ReportsAreOrderedAndUntrainedIsNearChance) {
  TrainConfig cfg;
  cfg.seed = 3;
  const auto model = Model<float>::init(cfg);
  const auto [train, eval] = dataset_for(cfg);
  const auto e = embed_samples(model, eval);
  const auto reports = evaluate_retrieval(e);
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[0].direction, "text-to-image");
  EXPECT_EQ(reports[1].direction, "image-to-text");
  for (const auto& r : reports) {
    EXPECT_EQ(r.n_queries, 48u);
    EXPECT_LE(r.r1, r.r5);
    EXPECT_LE(r.r5, r.r10);
    EXPECT_LE(r.r10, 1.0);
    // chance is 1/48; 12 hits would be far outside binomial noise
    EXPECT_LT(r.r1, 0.25);
  }
  const auto again = evaluate_retrieval(embed_samples(model, eval));
  EXPECT_EQ(again[0].r1, reports[0].r1);
  EXPECT_EQ(again[1].r10, reports[1].r10);
  const auto table = format_reports(reports);
  EXPECT_EQ(table.substr(0, table.find('\n')).find("direction"), 0u);
}

TEST(Evaluate, SegmentCosineOfIdenticalSegmentsIsOne) {
  Embeddings e;
  e.n = 2;
  e.segments = {1, 0, 1, 0, 0, 2, 0, 3};
  EXPECT_NEAR(mean_segment_cosine(e, 2), 1.0, 1e-6);
  e.segments = {1, 0, 0, 1, 1, 1, -1, -1};
  EXPECT_NEAR(mean_segment_cosine(e, 2), -0.5, 1e-6);
}

TEST(Cli, ExitCodes) {
  const auto dir = std::filesystem::temp_directory_path() / "camp_cli_test";
  std::filesystem::remove_all(dir);
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  EXPECT_EQ(run_cli("train --k 5 --steps 1 --out " + dir.string()).code, 2);  // 96 % 5 != 0
  EXPECT_EQ(run_cli("train --set no_such_key=1 --out " + dir.string()).code, 2);
  EXPECT_EQ(run_cli("eval " + (dir / "missing.camp").string()).code, 2);

  const auto trained = run_cli("train --k 3 --steps 2 " + kTinyArch + "--out " + dir.string());
  ASSERT_EQ(trained.code, 0) << trained.out;
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint.camp"));
  std::ifstream metrics(dir / "metrics.tsv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(metrics, line)) ++lines;
  EXPECT_EQ(lines, 2u);

  const auto ev = run_cli("eval " + (dir / "checkpoint.camp").string());
  EXPECT_EQ(ev.code, 0);
  EXPECT_NE(ev.out.find("text-to-image"), std::string::npos);
  EXPECT_EQ(run_cli("eval " + (dir / "checkpoint.camp").string()).out, ev.out);

  std::ofstream(dir / "junk.camp") << "not a checkpoint";
  EXPECT_EQ(run_cli("eval " + (dir / "junk.camp").string()).code, 3);

  const auto maps = run_cli("attnmaps " + (dir / "checkpoint.camp").string() + " --ids 0 --out " + (dir / "maps").string());
  EXPECT_EQ(maps.code, 0);
  EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir / "maps"), {}), 6);
  EXPECT_EQ(run_cli("attnmaps " + (dir / "checkpoint.camp").string() + " --ids 144").code, 2);

  EXPECT_EQ(run_cli("equivcheck --k 2 --seeds 2").code, 0);
  EXPECT_EQ(run_cli("equivcheck --k 3 --seeds 1 --negation-modes off --no-position-reset").code, 1);
  EXPECT_EQ(run_cli("equivcheck --negation-modes sometimes").code, 2);
  std::filesystem::remove_all(dir);
}
