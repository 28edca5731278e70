#include <benchmark/benchmark.h>

#include "virtview/render.hpp"
#include "virtview/synthdata.hpp"

using namespace virtview;

namespace {

const Frame& hand() {
  static const Frame f = generate_dataset(SynthHandSpec::default_hand(), 1, 2024).frames[0];
  return f;
}

void BM_RenderAll(benchmark::State& state) {
  const Frame& f = hand();
  const PointCloud cloud = unproject(f.depth);
  const VirtualViewSet views = sample_virtual_views(f.centroid_mm, 5, 5);
  const int threads = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(render_all(cloud, views, f.depth.intrinsics, RenderConfig{}, threads));
  }
  state.counters["points"] = static_cast<double>(cloud.points.size());
  state.counters["views/s"] = benchmark::Counter(25.0 * state.iterations(), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_RenderAll)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();

void BM_RenderOne(benchmark::State& state) {
  const Frame& f = hand();
  const PointCloud cloud = unproject(f.depth);
  const VirtualViewSet views = sample_virtual_views(f.centroid_mm, 5, 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(render_depth(cloud, views[0], f.depth.intrinsics, RenderConfig{}));
  }
}
BENCHMARK(BM_RenderOne)->Unit(benchmark::kMicrosecond);

void BM_CropHand(benchmark::State& state) {
  const Frame& f = hand();
  CropConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(crop_hand(f.depth, f.centroid_mm, cfg));
}
BENCHMARK(BM_CropHand)->Unit(benchmark::kMicrosecond);

}  // namespace
