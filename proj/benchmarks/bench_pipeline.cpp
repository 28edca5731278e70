#include <benchmark/benchmark.h>

#include <vector>

#include "virtview/confidence.hpp"
#include "virtview/estimator.hpp"
#include "virtview/fusion.hpp"
#include "virtview/synthdata.hpp"

using namespace virtview;

namespace {

const Dataset& frames() {
  static const Dataset ds = generate_dataset(SynthHandSpec::default_hand(), 8, 2024);
  return ds;
}

TeacherConfig oracle_teacher() {
  TeacherConfig c;
  c.in_channels = kOracleFeatureChannels;
  c.in_height = c.in_width = kOracleFeatureSide;
  return c;
}

// Untrained weights: timing does not depend on what the networks learned.
struct Fixture {
  OracleEstimator oracle{OracleNoiseModel{2.0, 8.0, 1}};
  TeacherParams teacher = TeacherParams::initialize(oracle_teacher(), 1);
  StudentParams student = StudentParams::initialize(StudentConfig{}, 2);
  Models models{&oracle, &teacher, &student};
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void run_pipeline(benchmark::State& state, SelectionMode mode) {
  PipelineConfig cfg;
  cfg.mode = mode;
  cfg.num_selected = static_cast<int>(state.range(0));
  cfg.validate();
  const auto& ds = frames().frames;
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(infer(frame_input(ds[i++ % ds.size()]), cfg, fixture().models));
  }
  state.counters["fps"] = benchmark::Counter(static_cast<double>(state.iterations()), benchmark::Counter::kIsRate);
}

void BM_Uniform(benchmark::State& state) { run_pipeline(state, SelectionMode::Uniform); }
void BM_SelectTeacher(benchmark::State& state) { run_pipeline(state, SelectionMode::SelectTeacher); }
void BM_SelectLight(benchmark::State& state) { run_pipeline(state, SelectionMode::SelectLight); }
void BM_Random(benchmark::State& state) { run_pipeline(state, SelectionMode::Random); }

BENCHMARK(BM_Uniform)->Arg(1)->Arg(3)->Arg(9)->Arg(25)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SelectTeacher)->Arg(1)->Arg(3)->Arg(9)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SelectLight)->Arg(1)->Arg(3)->Arg(9)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Random)->Arg(3)->Unit(benchmark::kMillisecond);

void BM_AnchorEstimate(benchmark::State& state) {
  const EstimatorParams p = EstimatorParams::initialize(A2JConfig{}, 3);
  const Frame& f = frames().frames[0];
  const NormalizedCrop crop = crop_hand(f.depth, f.centroid_mm, CropConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(estimate(crop, p));
}
BENCHMARK(BM_AnchorEstimate)->Unit(benchmark::kMillisecond);

void BM_TeacherConfidence(benchmark::State& state) {
  std::vector<nn::FeatureMap> features(25, nn::FeatureMap(kOracleFeatureChannels, kOracleFeatureSide,
                                                          kOracleFeatureSide));
  for (std::size_t v = 0; v < features.size(); ++v) features[v].data.setConstant(0.01 * static_cast<double>(v));
  for (auto _ : state) benchmark::DoNotOptimize(teacher_confidence(features, fixture().teacher));
}
BENCHMARK(BM_TeacherConfidence)->Unit(benchmark::kMicrosecond);

void BM_StudentConfidence(benchmark::State& state) {
  const Frame& f = frames().frames[0];
  const NormalizedCrop crop = crop_hand(f.depth, f.centroid_mm, CropConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(student_confidence(crop, fixture().student));
}
BENCHMARK(BM_StudentConfidence)->Unit(benchmark::kMicrosecond);

}  // namespace
