// Serial reference vs OpenMP kernels on the default synthetic dataset.

#include <benchmark/benchmark.h>

#include "ltc/kernels.hpp"
#include "ltc/pipeline.hpp"
#include "ltc/synthgen.hpp"
#include "ltc/vit.hpp"

namespace {

const ltc::SynthDataset& dataset() {
    static const ltc::SynthDataset d = ltc::generate(ltc::SynthConfig{});
    return d;
}

std::vector<ltc::kernels::LensPair> lens_pairs(const ltc::SynthDataset& d) {
    std::vector<ltc::kernels::LensPair> pairs;
    for (const auto& s : d.manifest.samples) pairs.emplace_back(s.class_index, 1 - s.class_index);
    return pairs;
}

void BM_ImportanceMaps(benchmark::State& state) {
    const auto& d = dataset();
    const auto pairs = lens_pairs(d);
    const int threads = static_cast<int>(state.range(0));
    for (auto _ : state) {
        auto maps = threads == 0 ? ltc::kernels::importance_maps_serial(d.records, pairs, d.class_bank)
                                 : ltc::kernels::importance_maps_parallel(d.records, pairs, d.class_bank, threads);
        benchmark::DoNotOptimize(maps.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.records.size()));
}

void BM_CorrectAndClassify(benchmark::State& state) {
    const auto& d = dataset();
    const ltc::HeadSet p_s{{{3, 6}}, ltc::HeadSetKind::p_s};
    const ltc::HeadSet p_y{{{3, 1}, {2, 4}}, ltc::HeadSetKind::p_y};
    const auto plan = ltc::make_plan(p_s, p_y, d.records, &d.concept_bank);
    ltc::LtcOptions o;
    o.threads = static_cast<int>(state.range(0));
    for (auto _ : state) {
        auto preds = o.threads == 0 ? ltc::kernels::correct_and_classify_serial(d.records, plan, d.class_bank, o)
                                    : ltc::kernels::correct_and_classify_parallel(d.records, plan, d.class_bank, o);
        benchmark::DoNotOptimize(preds.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.records.size()));
}

void BM_Decompose(benchmark::State& state) {
    const ltc::TinyVitConfig cfg{4, 4, 32, 64, 12, 16};
    const auto w = ltc::random_vit(cfg, 7);
    std::vector<std::string> ids;
    for (int i = 0; i < 64; ++i) ids.push_back("img" + std::to_string(1000 + i));
    const auto patches = ltc::random_patches(ids, 16, cfg.patch_dim, 11);
    const int threads = static_cast<int>(state.range(0));
    for (auto _ : state) {
        auto recs = threads == 0 ? ltc::kernels::decompose_all_serial(w, patches, true)
                                 : ltc::kernels::decompose_all_parallel(w, patches, true, threads);
        benchmark::DoNotOptimize(recs.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ids.size()));
}

// Argument 0 selects the serial reference; positive values are OpenMP thread
// counts. Wall-clock timing, since worker threads do not show up in the
// main thread's CPU time.
BENCHMARK(BM_ImportanceMaps)->Arg(0)->Arg(1)->Arg(2)->Arg(4)->UseRealTime();
BENCHMARK(BM_CorrectAndClassify)->Arg(0)->Arg(1)->Arg(2)->Arg(4)->UseRealTime();
BENCHMARK(BM_Decompose)->Arg(0)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

} // namespace

BENCHMARK_MAIN();
