#include <benchmark/benchmark.h>

#include "da4lg/dataset.hpp"
#include "da4lg/encoder.hpp"
#include "da4lg/model.hpp"
#include "da4lg/training.hpp"

using namespace da4lg;

namespace {

GroundingDataset& bench_dataset() {
    static GroundingDataset ds = [] {
        SynthSpec spec;
        spec.seed = 7;
        spec.n_objects = 8;
        spec.n_references = 16;
        spec.image_size = 32;
        spec.views = 4;
        return generate_synthetic(spec);
    }();
    return ds;
}

GroundingModel bench_model() {
    const auto& ds = bench_dataset();
    ModelConfig mc;
    mc.image_size = ds.image_size();
    mc.patch_size = 8;
    return build_model(mc, ds.vocabulary, 7, TrainingPolicy{});
}

void BM_VisionForward(benchmark::State& state) {
    GroundingModel model = bench_model();
    const ViewImage& view = bench_dataset().objects.begin()->second.views[0];
    for (auto _ : state)
        benchmark::DoNotOptimize(encode_vision(model.vision, view));
}
BENCHMARK(BM_VisionForward);

void BM_DomainForward(benchmark::State& state) {
    GroundingModel model = bench_model();
    const ViewImage& view = bench_dataset().objects.begin()->second.views[0];
    for (auto _ : state)
        benchmark::DoNotOptimize(encode_domain(model.domain, view));
}
BENCHMARK(BM_DomainForward);

void BM_TrainStep(benchmark::State& state) {
    const auto& ds = bench_dataset();
    GroundingModel model = bench_model();
    TrainConfig cfg;
    cfg.batch_size = 8;
    FeatureCache cache = build_feature_cache(model, ds, ViewMode::multi, 0);
    AdamOptimizer opt(cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps);
    auto refs = ds.split_refs(Split::train);
    refs.resize(std::min<std::size_t>(refs.size(), 8));
    for (auto _ : state)
        benchmark::DoNotOptimize(train_step(model, ds, refs, cache, cfg, opt));
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
