#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "ltc/corrector.hpp"
#include "ltc/error.hpp"
#include "ltc/locator.hpp"
#include "ltc/pipeline.hpp"
#include "ltc/synthgen.hpp"
#include "ltc/vit.hpp"
#include "support.hpp"

using namespace ltc;

namespace {

SynthConfig small_config() {
    SynthConfig c;
    c.n_samples = {60, 60, 60, 60};
    return c;
}

double accuracy_where(const SynthDataset& d, bool positive) {
    int hit = 0, total = 0;
    for (std::size_t i = 0; i < d.records.size(); ++i) {
        const auto& s = d.manifest.samples[i];
        if ((d.manifest.positive_pairs.at(s.spurious_index) == s.class_index) != positive) continue;
        ++total;
        hit += classify(d.records[i].full_embedding, d.class_bank).predicted == s.class_index;
    }
    return static_cast<double>(hit) / total;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace

TEST_CASE("generation is deterministic and reconstructs exactly") {
    auto cfg = small_config();
    cfg.with_tokens = true;
    const auto a = generate(cfg), b = generate(cfg);
    REQUIRE(a.records.size() == 240);
    CHECK(a.records == b.records);
    CHECK(a.manifest == b.manifest);
    for (const auto& r : a.records) {
        CHECK(r.reconstruction_error() <= 1e-5);
        CHECK(r.token_sum_error() <= 1e-5);
    }
    CHECK(std::is_sorted(a.records.begin(), a.records.end(),
                         [](const auto& x, const auto& y) { return x.sample_id < y.sample_id; }));
    cfg.seed = 1;
    CHECK(generate(cfg).records != a.records);
}

TEST_CASE("configs round trip through JSON and reject bad input") {
    auto cfg = small_config();
    cfg.planted_sy = {{{1, 2}}, HeadSetKind::planted};
    cfg.noise_sigma = 0.35;
    cfg.seed = 77;
    const auto back = synth_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));
    CHECK(generate(back).records == generate(cfg).records);

    auto j = to_json(cfg);
    j["surprise"] = 1;
    CHECK_THROWS_AS(synth_config_from_json(j), ValidationError);
    j = to_json(cfg);
    j["n_samples"] = 10;
    CHECK(synth_config_from_json(j).n_samples == std::vector<int>{10, 10, 10, 10});

    auto overlap = cfg;
    overlap.planted_s = overlap.planted_y;
    CHECK_THROWS_AS(overlap.validate(), ValidationError);
    auto tiny = cfg;
    tiny.model_spec.joint_dim = 3;
    CHECK_THROWS_AS(tiny.validate(), ValidationError);
}

TEST_CASE("noise-free data with a dominant spurious head splits G_P and G_N cleanly") {
    auto cfg = small_config();
    cfg.noise_sigma = 0.0;
    cfg.jitter = 0.0;
    cfg.spurious_strength = 2.0;
    const auto d = generate(cfg);
    CHECK(accuracy_where(d, true) == 1.0);
    CHECK(accuracy_where(d, false) == 0.0);
}

TEST_CASE("zero signal gives chance accuracy") {
    auto cfg = small_config();
    cfg.n_samples = {250, 250, 250, 250};
    cfg.signal_strength = 0.0;
    const auto d = generate(cfg);
    int hit = 0;
    for (std::size_t i = 0; i < d.records.size(); ++i)
        hit += classify(d.records[i].full_embedding, d.class_bank).predicted == d.manifest.samples[i].class_index;
    CHECK(hit / 1000.0 == doctest::Approx(0.5).epsilon(0.12));
}

TEST_CASE("planted heads push toward the label on correctly classified G_N samples") {
    const auto d = generate(SynthConfig{});
    double v_y = 0.0, v_s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < d.records.size(); ++i) {
        const auto& s = d.manifest.samples[i];
        if (d.manifest.positive_pairs.at(s.spurious_index) == s.class_index) continue;
        if (classify(d.records[i].full_embedding, d.class_bank).predicted != s.class_index) continue;
        const auto diff = logit_difference_map(d.records[i], d.class_bank.at(s.class_index), d.class_bank.at(1 - s.class_index));
        for (const auto& p : d.truth.planted_y.positions) v_y += diff.at(p);
        for (const auto& p : d.truth.planted_s.positions) v_s += diff.at(p);
        ++n;
    }
    REQUIRE(n > 0);
    CHECK(v_y / n > 0.0);
    CHECK(v_s / n < 0.0);
}

TEST_CASE("spurious attributes are recoverable from the embeddings") {
    const auto d = generate(SynthConfig{});
    int hit = 0;
    for (std::size_t i = 0; i < d.records.size(); ++i)
        hit += predict_spurious(d.records[i].full_embedding, d.spurious_bank) == d.manifest.samples[i].spurious_index;
    CHECK(static_cast<double>(hit) / d.records.size() >= 0.99);
}

TEST_CASE("set and recovery scores") {
    const HeadSet truth{{{1, 1}}, HeadSetKind::planted};
    const auto perfect = set_score(truth, truth);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    const auto empty = set_score(HeadSet{}, truth);
    CHECK_FALSE(empty.precision_defined);
    CHECK(empty.precision == 0.0);
    CHECK(empty.recall == 0.0);
    const auto extra = set_score(HeadSet{{{1, 1}, {0, 0}}, HeadSetKind::p_s}, truth);
    CHECK(extra.precision == doctest::Approx(0.5));
    CHECK(extra.recall == 1.0);

    GroundTruth gt{{{{0, 1}}, HeadSetKind::planted}, {{{2, 2}}, HeadSetKind::planted}, {{{3, 3}}, HeadSetKind::planted}};
    const auto r = recovery_score(HeadSet{{{2, 2}}, HeadSetKind::p_s}, HeadSet{{{0, 1}}, HeadSetKind::p_y}, gt);
    CHECK(r.s.recall == doctest::Approx(0.5));  // SY head counts toward the spurious truth
    CHECK(r.s.precision == 1.0);
    CHECK(r.y.recall == 1.0);
}

TEST_CASE("the default dataset recovers the planted heads") {
    const auto d = generate(SynthConfig{});
    const auto r = locate(d.records, d.manifest, d.class_bank, nullptr, {});
    const auto score = recovery_score(r.p_s(), r.p_y(), d.truth);
    CHECK(score.s.recall == 1.0);
    CHECK(score.y.recall == 1.0);
    CHECK(score.s.precision == 1.0);
    CHECK(score.y.precision == 1.0);
}

TEST_CASE("the direct spurious task separates the S head from the association head") {
    SynthConfig cfg;
    cfg.planted_sy = {{{1, 2}}, HeadSetKind::planted};
    cfg.association_strength = 0.6;
    const auto d = generate(cfg);
    LocateOptions o;
    o.spurious_task = true;
    const auto r = locate(d.records, d.manifest, d.class_bank, &d.spurious_bank, o);
    REQUIRE(r.p_s_direct.has_value());
    CHECK(r.p_s_direct->positions == cfg.planted_s.positions);
    CHECK(r.states.p_s.contains({1, 2}));
}

TEST_CASE("sweeps mark grid points without G_N as invalid") {
    SweepSpec spec;
    spec.base = small_config();
    spec.base.n_samples = {60, 0, 0, 60};
    spec.parameter = "gn_fraction";
    spec.values = {0.5, 1.0};
    const auto rows = sweep(spec);
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) {
        CHECK_FALSE(r.valid);
        CHECK_FALSE(r.note.empty());
    }
    spec.values = {1.0};
    CHECK_THROWS_AS(sweep(spec), ValidationError);
    spec.values = {0.5, 1.0};
    spec.parameter = "jitter";
    CHECK_THROWS_AS(sweep(spec), ValidationError);
}

TEST_CASE("the full-fraction sweep row equals a direct run") {
    SweepSpec spec;
    spec.base = small_config();
    spec.values = {0.5, 1.0};
    const auto rows = sweep(spec);
    REQUIRE(rows.size() == 2);
    const auto d = generate(spec.base);
    const auto r = locate(d.records, d.manifest, d.class_bank, nullptr, {});
    const auto direct = recovery_score(r.p_s(), r.p_y(), d.truth);
    CHECK(rows[1].valid);
    CHECK(rows[1].recovery.s.recall == direct.s.recall);
    CHECK(rows[1].recovery.y.recall == direct.y.recall);
    CHECK(rows[1].recovery.s.precision == direct.s.precision);

    testing::TempDir dir;
    write_sweep_csv(rows, dir / "sweep.csv");
    std::ifstream in(dir / "sweep.csv");
    int lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == 3);
}

TEST_CASE("median recall does not fall as the signal-to-noise ratio grows") {
    SweepSpec spec;
    spec.base = small_config();
    spec.parameter = "signal_strength";
    spec.values = {0.005, 0.01, 0.02, 0.04, 1.0};
    spec.n_seeds = 10;
    const auto rows = sweep(spec);
    std::vector<double> medians;
    for (double v : spec.values) {
        std::vector<double> recalls;
        for (const auto& r : rows)
            if (r.value == v) recalls.push_back(r.valid ? 0.5 * (r.recovery.s.recall + r.recovery.y.recall) : 0.0);
        medians.push_back(median(recalls));
    }
    for (std::size_t i = 1; i < medians.size(); ++i) CHECK(medians[i] >= medians[i - 1]);
    CHECK(medians.front() < 1.0);
    CHECK(medians.back() == 1.0);
}

TEST_CASE("dataset and encoder artifacts land on disk") {
    testing::TempDir dir;
    auto cfg = small_config();
    write_synth_dataset(generate(cfg), cfg, dir.path());
    for (const char* f : {"store/manifest.json", "manifest.csv", "class_bank.json", "spurious_bank.json",
                          "concept_bank.json", "truth.json"})
        CHECK(std::filesystem::exists(dir / f));
    const auto store = read_store(dir / "store");
    CHECK(store.records == generate(cfg).records);

    cfg.kind = "vit";
    write_synth_vit(cfg, dir / "vit");
    CHECK(std::filesystem::exists(dir / "vit/patches.json"));
    CHECK(read_patches(dir / "vit/patches.json").size() == 240);
    CHECK_THROWS_AS(generate(cfg), ValidationError);
}
