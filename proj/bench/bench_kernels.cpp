// Serial vs OpenMP kernels, reference vs fast attention, and single-pass vs
// K single-prompt text forwards.
#include <benchmark/benchmark.h>

#include <omp.h>

#include <vector>

#include "camp/kernels.hpp"
#include "camp/model.hpp"

using namespace camp;

namespace {

std::vector<float> randn(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

// args: m (= n = k), threads (0 = all)
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const int threads = static_cast<int>(state.range(1));
  kernels::set_num_threads(threads == 0 ? omp_get_num_procs() : threads);
  const auto a = randn(n * n, 1), b = randn(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    kernels::gemm<float>(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
  kernels::set_num_threads(0);
}
BENCHMARK(BM_Gemm)->ArgsProduct({{64, 256, 512}, {1, 0}})->ArgNames({"n", "threads"});

void BM_GemmReference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = randn(n * n, 1), b = randn(n * n, 2);
  std::vector<float> c(n * n);
  for (auto _ : state) {
    kernels::gemm_reference<float>(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_GemmReference)->Arg(64)->Arg(256)->ArgName("n");

// one batch of 32 prompt-masked sequences at K = 6
struct AttentionInput {
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<kernels::AttentionGroup> groups;
  std::vector<float> q, k, v, out, probs;
  std::size_t heads = 4, width = 64;

  AttentionInput() {
    std::size_t offset = 0;
    for (int b = 0; b < 32; ++b) {
      const auto seq = layout_sequence(12, std::vector<std::size_t>(6, 12));
      masks.push_back(build_mask(seq).bits);
      groups.push_back({offset, seq.size(), nullptr});
      offset += seq.size();
    }
    for (std::size_t g = 0; g < groups.size(); ++g) groups[g].mask = masks[g].data();
    q = randn(offset * width, 1);
    k = randn(offset * width, 2);
    v = randn(offset * width, 3);
    out.resize(offset * width);
    probs.resize(kernels::attention_probs_size(groups, heads));
  }
};

void BM_AttentionReference(benchmark::State& state) {
  AttentionInput in;
  for (auto _ : state) {
    kernels::attention_forward_reference<float>(in.groups, in.heads, in.width, in.q.data(), in.k.data(),
                                                in.v.data(), in.out.data(), in.probs.data());
    benchmark::DoNotOptimize(in.out.data());
  }
}
BENCHMARK(BM_AttentionReference)->Unit(benchmark::kMillisecond);

void BM_AttentionFast(benchmark::State& state) {
  const int threads = static_cast<int>(state.range(0));
  kernels::set_num_threads(threads == 0 ? omp_get_num_procs() : threads);
  AttentionInput in;
  for (auto _ : state) {
    kernels::attention_forward<float>(in.groups, in.heads, in.width, in.q.data(), in.k.data(), in.v.data(),
                                      in.out.data(), in.probs.data());
    benchmark::DoNotOptimize(in.out.data());
  }
  kernels::set_num_threads(0);
}
BENCHMARK(BM_AttentionFast)->Arg(1)->Arg(0)->ArgName("threads")->Unit(benchmark::kMillisecond);

std::vector<std::string> captions(std::size_t n) {
  std::vector<std::string> out;
  const auto all = all_factors();
  for (std::size_t i = 0; i < n; ++i) out.push_back(caption_of(all[(i * 37) % all.size()]));
  return out;
}

Model<float> text_model(std::size_t k) {
  TrainConfig cfg;
  cfg.k = k;
  cfg.include_negation = false;
  return Model<float>::init(cfg);
}

void BM_TextSinglePass(benchmark::State& state) {
  const auto m = text_model(static_cast<std::size_t>(state.range(0)));
  const auto seqs = m.sequences(captions(32));
  for (auto _ : state) benchmark::DoNotOptimize(m.text.forward_singlepass(seqs).pooled.data().data());
}
BENCHMARK(BM_TextSinglePass)->Arg(1)->Arg(3)->Arg(6)->ArgName("k")->Unit(benchmark::kMillisecond);

void BM_TextMultiPass(benchmark::State& state) {
  const auto m = text_model(static_cast<std::size_t>(state.range(0)));
  const auto seqs = m.sequences(captions(32));
  for (auto _ : state) benchmark::DoNotOptimize(m.text.forward_multipass(seqs).pooled.data().data());
}
BENCHMARK(BM_TextMultiPass)->Arg(1)->Arg(3)->Arg(6)->ArgName("k")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
