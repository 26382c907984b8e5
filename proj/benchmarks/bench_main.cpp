// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <memory>
#include <vector>

#include "genclip/encoder.hpp"
#include "genclip/metrics.hpp"
#include "genclip/prompting.hpp"
#include "genclip/rng.hpp"
#include "genclip/scoring.hpp"

using namespace genclip;

namespace {

Grid random_grid(std::uint64_t seed, int side) {
  Rng r(seed);
  Grid g(side, side);
  for (auto& v : g.values) v = r.uniform();
  return g;
}

Grid square_mask(int side) {
  Grid m(side, side, 0.0);
  for (int y = side / 4; y < side / 2; ++y)
    for (int x = side / 4; x < side / 2; ++x) m.at(y, x) = 1.0;
  return m;
}

void BM_GaussianSmooth(benchmark::State& state) {
  const Grid g = random_grid(1, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(gaussian_smooth(g, 9.0));
}
BENCHMARK(BM_GaussianSmooth)->Arg(128)->Arg(518)->Unit(benchmark::kMillisecond);

void BM_ImageScore(benchmark::State& state) {
  const Grid g = random_grid(2, 518);
  for (auto _ : state) benchmark::DoNotOptimize(image_score(g, 500, 2500));
}
BENCHMARK(BM_ImageScore)->Unit(benchmark::kMicrosecond);

void BM_RocAuc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng r(3);
  std::vector<double> s(n);
  std::vector<int> l(n);
  for (std::size_t i = 0; i < n; ++i) {
    l[i] = r.uniform() < 0.1;
    s[i] = r.uniform() + 0.3 * l[i];
  }
  for (auto _ : state) benchmark::DoNotOptimize(roc_auc(s, l));
}
BENCHMARK(BM_RocAuc)->Arg(1 << 16)->Arg(1 << 20)->Unit(benchmark::kMillisecond);

void BM_Aupro(benchmark::State& state) {
  const int side = 256;
  std::vector<Grid> maps, masks;
  for (int i = 0; i < static_cast<int>(state.range(0)); ++i) {
    maps.push_back(random_grid(10 + i, side));
    masks.push_back(square_mask(side));
  }
  for (auto _ : state) benchmark::DoNotOptimize(aupro(maps, masks));
}
BENCHMARK(BM_Aupro)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_EncodeImage(benchmark::State& state) {
  EncoderSpec spec;  // default 518 px geometry
  const auto enc = make_synthetic_encoder(spec);
  const Image image(spec.image_size, spec.image_size, 3, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(enc->encode_image(image));
}
BENCHMARK(BM_EncodeImage)->Unit(benchmark::kMillisecond);

void BM_EncodeText(benchmark::State& state) {
  const auto enc = make_synthetic_encoder(EncoderSpec{});
  const TokenSequence seq = enc->tokenizer().encode("a photo of a damaged candle object .");
  for (auto _ : state) benchmark::DoNotOptimize(enc->encode_text(seq));
}
BENCHMARK(BM_EncodeText)->Unit(benchmark::kMicrosecond);

void BM_Infer(benchmark::State& state) {
  EncoderSpec spec;
  std::shared_ptr<const FrozenEncoder> enc = make_synthetic_encoder(spec);
  const InferenceSession session(enc, PromptBank::initialize(spec, 1), ScoringConfig{}, CnfConfig{});
  const Image image(spec.image_size, spec.image_size, 3, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(session.infer(image, "candle"));
}
BENCHMARK(BM_Infer)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
