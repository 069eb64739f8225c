#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "ltc/corrector.hpp"
#include "ltc/error.hpp"
#include "ltc/linalg.hpp"
#include "support.hpp"

using namespace ltc;

namespace {

using Pair = std::pair<std::vector<float>, std::vector<float>>;

HeadSet heads(std::vector<HeadPos> p, HeadSetKind k = HeadSetKind::planted) { return {std::move(p), k}; }

DiscriminativeVectors vectors_of(std::vector<Pair> pairs) { return build_discriminative_vectors(pairs); }

std::vector<ActivationRecord> random_records(std::mt19937_64& rng, int n, int L, int H, int d) {
    std::vector<ActivationRecord> out;
    for (int i = 0; i < n; ++i) out.push_back(testing::random_record(rng, "r" + std::to_string(i), L, H, d));
    return out;
}

double dot(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * b[i];
    return s;
}

} // namespace

TEST_CASE("mean states match an independent elementwise mean") {
    std::mt19937_64 rng(1);
    auto recs = random_records(rng, 3, 2, 3, 4);
    const auto p_s = heads({{1, 2}, {0, 0}});
    const auto means = compute_mean_states(recs, p_s);
    REQUIRE(means.size() == 2);
    for (std::size_t k = 0; k < 2; ++k)
        for (int c = 0; c < 4; ++c) {
            double s = 0.0;
            for (const auto& r : recs) s += r.head(p_s.positions[k])[static_cast<std::size_t>(c)];
            CHECK(means[k][static_cast<std::size_t>(c)] == doctest::Approx(s / 3).epsilon(1e-6));
        }

    // v and -v average to zero.
    auto a = ActivationRecord::zeros("a", 2, 2, 3), b = a;
    a.head(1, 1)[0] = 2.5f;
    a.head(1, 1)[2] = -1.0f;
    b.head(1, 1)[0] = -2.5f;
    b.head(1, 1)[2] = 1.0f;
    const std::vector<ActivationRecord> pm{a, b};
    CHECK(compute_mean_states(pm, heads({{1, 1}}))[0] == std::vector<float>{0, 0, 0});
    const std::vector<ActivationRecord> same{a, a, a};
    CHECK(compute_mean_states(same, heads({{1, 1}}))[0] == std::vector<float>(a.head(1, 1).begin(), a.head(1, 1).end()));
    CHECK_THROWS_AS(compute_mean_states(std::span<const ActivationRecord>{}, p_s), ValidationError);
}

TEST_CASE("mean ablation flattens the ablated states and keeps the rest") {
    std::mt19937_64 rng(2);
    auto recs = random_records(rng, 20, 3, 4, 5);
    CorrectionPlan plan;
    plan.p_s = heads({{2, 1}, {0, 3}});
    plan.mean_states = compute_mean_states(recs, plan.p_s);

    std::vector<ActivationRecord> ablated;
    for (const auto& r : recs) ablated.push_back(mean_ablate(r, plan));

    for (const auto& p : plan.p_s.positions)
        for (int c = 0; c < 5; ++c) {
            const float first = ablated[0].head(p)[static_cast<std::size_t>(c)];
            for (const auto& r : ablated) CHECK(r.head(p)[static_cast<std::size_t>(c)] == first);
        }
    for (std::size_t i = 0; i < recs.size(); ++i) {
        for (int l = 0; l < 3; ++l)
            for (int h = 0; h < 4; ++h)
                if (!plan.p_s.contains({l, h})) CHECK(std::ranges::equal(ablated[i].head(l, h), recs[i].head(l, h)));
        CHECK(ablated[i].reconstruction_error() <= 1e-5);
    }

    SUBCASE("dataset means are preserved") {
        const auto after = compute_mean_states(ablated, plan.p_s);
        for (std::size_t k = 0; k < after.size(); ++k)
            for (std::size_t c = 0; c < 5; ++c) CHECK(after[k][c] == doctest::Approx(plan.mean_states[k][c]).epsilon(1e-6));
    }
    SUBCASE("a second pass changes nothing") {
        CorrectionPlan again = plan;
        again.mean_states = compute_mean_states(ablated, plan.p_s);
        for (const auto& r : ablated) {
            const auto twice = mean_ablate(r, again);
            for (const auto& p : plan.p_s.positions)
                for (std::size_t c = 0; c < 5; ++c) CHECK(twice.head(p)[c] == doctest::Approx(r.head(p)[c]).epsilon(1e-6));
        }
    }
    SUBCASE("identical records are a no-op") {
        const std::vector<ActivationRecord> copies(4, recs[0]);
        CorrectionPlan p2 = plan;
        p2.mean_states = compute_mean_states(copies, plan.p_s);
        CHECK(mean_ablate(recs[0], p2) == recs[0]);
    }
    SUBCASE("an empty plan is bit-exact") {
        CHECK(mean_ablate(recs[3], CorrectionPlan{}) == recs[3]);
    }
    SUBCASE("out-of-range positions are rejected") {
        CorrectionPlan bad = plan;
        bad.p_s = heads({{5, 0}, {0, 0}});
        CHECK_THROWS_AS(mean_ablate(recs[0], bad), ValidationError);
    }
}

TEST_CASE("discriminative vectors are normalized differences") {
    const auto a = vectors_of({{{2, 0}, {0, 0}}});
    CHECK(a.vectors[0] == std::vector<float>{1, 0});
    const auto b = vectors_of({{{1, 1}, {1, -1}}});
    CHECK(b.vectors[0][0] == doctest::Approx(0.0));
    CHECK(b.vectors[0][1] == doctest::Approx(1.0));
    CHECK_THROWS_AS(vectors_of({{{1, 2}, {1, 2}}}), ValidationError);

    std::mt19937_64 rng(4);
    std::vector<Pair> many;
    for (int i = 0; i < 30; ++i) many.emplace_back(testing::gaussian(rng, 7), testing::gaussian(rng, 7));
    for (const auto& u : vectors_of(many).vectors) CHECK(std::abs(linalg::norm(u) - 1.0) <= 1e-6);
}

TEST_CASE("knowledge injection doubles the component along u") {
    auto r = ActivationRecord::zeros("k", 1, 2, 2);
    r.head(0, 0)[0] = 3.0f;
    r.head(0, 0)[1] = 4.0f;
    r.head(0, 1)[1] = 1.0f;
    r.resum();
    const auto u = vectors_of({{{1, 0}, {0, 0}}});
    const auto out = knowledge_inject(r, heads({{0, 0}, {0, 1}}), u);
    CHECK(out.head(0, 0)[0] == doctest::Approx(6.0));
    CHECK(out.head(0, 0)[1] == doctest::Approx(4.0));
    CHECK(out.head(0, 1)[1] == 1.0f);  // orthogonal state untouched
    CHECK(out.head(0, 1)[0] == 0.0f);
    CHECK(out.full_embedding[0] == doctest::Approx(6.0));
    CHECK(out.full_embedding[1] == doctest::Approx(5.0));

    auto par = ActivationRecord::zeros("p", 1, 1, 2);
    par.head(0, 0)[0] = 1.0f;
    par.resum();
    CHECK(knowledge_inject(par, heads({{0, 0}}), u).head(0, 0)[0] == doctest::Approx(2.0));

    DiscriminativeVectors wrong_dim;
    wrong_dim.vectors = {{1, 0, 0}};
    CHECK_THROWS_AS(knowledge_inject(r, heads({{0, 0}}), wrong_dim), ValidationError);
}

TEST_CASE("knowledge injection algebra on random states") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto rec = testing::random_record(rng, "x", 3, 3, 6);
        const auto dv = vectors_of({{testing::gaussian(rng, 6), testing::gaussian(rng, 6)}});
        const auto& u = dv.vectors[0];
        const auto p_y = heads({{static_cast<int>(rng() % 3), static_cast<int>(rng() % 3)}});
        const auto out = knowledge_inject(rec, p_y, dv);
        for (int l = 0; l < 3; ++l)
            for (int h = 0; h < 3; ++h) {
                const auto before = rec.head(l, h), after = out.head(l, h);
                if (!p_y.contains({l, h})) {
                    CHECK(std::ranges::equal(before, after));
                    continue;
                }
                const double along0 = dot(before, u), along1 = dot(after, u);
                CHECK(along1 == doctest::Approx(2 * along0).epsilon(1e-5));
                for (std::size_t k = 0; k < 6; ++k) {
                    const double orth0 = before[k] - along0 * u[k], orth1 = after[k] - along1 * u[k];
                    CHECK(std::abs(orth1 - orth0) <= 1e-5);
                }
            }
        CHECK(out.reconstruction_error() <= 1e-5);
    }
}

TEST_CASE("classify uses cosine logits with a lowest-index tie rule") {
    const auto bank = testing::bank_of({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    const std::vector<float> e{0, 2, 0};
    const auto p = classify(e, bank);
    CHECK(p.predicted == 1);
    CHECK(p.logits[1] == doctest::Approx(1.0));
    CHECK(p.logits[0] == doctest::Approx(0.0));

    const auto twins = testing::bank_of({{0, 1}, {0, 1}});
    const std::vector<float> f{1, 1};
    CHECK(classify(f, twins).predicted == 0);
    CHECK(classify(f, twins).margin == doctest::Approx(0.0));

    const std::vector<float> zero{0, 0, 0};
    CHECK_THROWS_AS(classify(zero, bank), ValidationError);
    CHECK_THROWS_AS(classify(e, bank, 0.0), ValidationError);
    CHECK_THROWS_AS(classify(e, TextBank{}), ValidationError);

    const auto one = testing::bank_of({{1, 0, 0}});
    CHECK(classify(e, one).margin == doctest::Approx(1.0));
}

TEST_CASE("classification margins match a brute-force softmax") {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 100; ++trial) {
        const int n_classes = 2 + static_cast<int>(rng() % 5);
        std::vector<std::vector<float>> vs;
        for (int c = 0; c < n_classes; ++c) vs.push_back(testing::gaussian(rng, 8));
        const auto bank = testing::bank_of(vs);
        auto e = testing::gaussian(rng, 8);
        const double t = trial % 2 ? 1.0 : 0.01 + 0.5 * static_cast<double>(trial % 7);

        std::vector<double> logits;
        for (const auto& v : vs) logits.push_back(dot(e, v) / (linalg::norm(e) * linalg::norm(v)));
        double mx = *std::max_element(logits.begin(), logits.end()), z = 0.0;
        std::vector<double> p;
        for (double l : logits) p.push_back(std::exp((l - mx) / t)), z += p.back();
        for (auto& x : p) x /= z;
        auto sorted = p;
        std::sort(sorted.rbegin(), sorted.rend());

        const auto pred = classify(e, bank, t);
        CHECK(pred.predicted == static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin()));
        CHECK(pred.margin == doctest::Approx(sorted[0] - sorted[1]).epsilon(1e-9));
        CHECK(pred.margin >= 0.0);
        for (int c = 0; c < n_classes; ++c) CHECK(pred.logits[c] == doctest::Approx(logits[c]).epsilon(1e-6));

        for (auto& x : e) x *= 37.5f;
        CHECK(classify(e, bank, t).predicted == pred.predicted);
    }
}

TEST_CASE("best_other skips the excluded class") {
    Prediction p;
    p.logits = {0.3, 0.9, 0.9, 0.1};
    CHECK(p.best_other(1) == 2);
    CHECK(p.best_other(0) == 1);
    p.logits = {0.5};
    CHECK(p.best_other(0) == -1);
}

TEST_CASE("predict_spurious picks the closest prompt") {
    const auto bank = testing::bank_of({{1, 0}, {0, 1}}, BankKind::spurious_prompt);
    const std::vector<float> water{0, 1}, mid{1, 1};
    CHECK(predict_spurious(water, bank) == 1);
    CHECK(predict_spurious(mid, bank) == 0);
}

TEST_CASE("confusion map counts the most frequent wrong prediction") {
    DatasetManifest m;
    m.class_names = {"A", "B", "C", "D"};
    m.spurious_names = {"x"};
    m.positive_pairs = {{0, 0}};
    std::vector<Prediction> preds;
    auto add = [&](int y, int pred, Split split = Split::easy) {
        const auto id = "s" + std::to_string(m.samples.size());
        m.samples.push_back({id, y, 0, split});
        Prediction p;
        p.sample_id = id;
        p.predicted = pred;
        preds.push_back(p);
    };
    for (int i = 0; i < 3; ++i) add(0, 1);
    add(0, 2);
    add(0, 0);
    add(1, 1);                // B is never wrong
    add(2, 3), add(2, 0);     // C ties between A and D, lower index wins
    add(3, 2, Split::hard);   // hard split ignored when an easy split exists
    const auto cm = build_confusion_map(preds, m);
    CHECK(cm.at(0) == 1);
    CHECK_FALSE(cm.contains(1));
    CHECK(cm.at(2) == 0);
    CHECK_FALSE(cm.contains(3));

    preds.pop_back();
    CHECK_THROWS_AS(build_confusion_map(preds, m), ValidationError);
}

TEST_CASE("concept banks split into unscoped and class-scoped pairs") {
    TextBank bank;
    bank.kind = BankKind::concept_pair;
    bank.add("beak:pos", {1, 0, 0});
    bank.add("beak:neg", {-1, 0, 0});
    bank.add("cat/fur:pos", {0, 2, 0});
    bank.add("cat/fur:neg", {0, -1, 0});
    bank.add("2/wing:neg", {0, 0, -3});
    bank.add("2/wing:pos", {0, 0, 3});
    const auto classes = testing::bank_of({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    TextBank named = classes;
    named.labels = {"dog", "cat", "bird"};
    const auto cp = concept_pairs_from_bank(bank, &named);
    REQUIRE(cp.unscoped.vectors.size() == 1);
    CHECK(cp.unscoped.vectors[0] == std::vector<float>{1, 0, 0});
    REQUIRE(cp.by_class.size() == 2);
    CHECK(cp.by_class.at(1).vectors[0] == std::vector<float>{0, 1, 0});
    CHECK(cp.by_class.at(2).vectors[0] == std::vector<float>{0, 0, 1});

    // Pseudo-label hits its own scope, or the scope whose counter class it is.
    const std::map<int, int> confusion{{1, 0}};
    CHECK(select_vectors(cp, confusion, 2)->vectors[0] == std::vector<float>{0, 0, 1});
    CHECK(select_vectors(cp, confusion, 0)->vectors[0] == std::vector<float>{0, 1, 0});
    CHECK_FALSE(select_vectors(cp, {}, 0).has_value());

    TextBank broken;
    broken.add("x:pos", {1, 0});
    CHECK_THROWS_AS(concept_pairs_from_bank(broken), ValidationError);
    broken.add("x:maybe", {0, 1});
    CHECK_THROWS_AS(concept_pairs_from_bank(broken), ValidationError);
}

TEST_CASE("mode names parse in both short and long forms") {
    for (auto m : {LtcMode::zero_shot, LtcMode::ma_only, LtcMode::ki_only, LtcMode::full, LtcMode::random_control})
        CHECK(ltc_mode_from_string(to_string(m)) == m);
    CHECK(ltc_mode_from_string("ma_only") == LtcMode::ma_only);
    CHECK(ltc_mode_from_string("random_control") == LtcMode::random_control);
    CHECK_THROWS_AS(ltc_mode_from_string("partial"), ValidationError);
}

TEST_CASE("random control draws distinct positions deterministically") {
    CorrectionPlan plan;
    plan.p_s = heads({{0, 0}, {0, 1}}, HeadSetKind::p_s);
    plan.p_y = heads({{1, 1}}, HeadSetKind::p_y);
    std::set<std::vector<HeadPos>> seen;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto r = randomize_plan(plan, 3, 4, seed);
        CHECK(r.p_s.size() == 2);
        CHECK(r.p_y.size() == 1);
        std::set<HeadPos> all(r.p_s.positions.begin(), r.p_s.positions.end());
        all.insert(r.p_y.positions.begin(), r.p_y.positions.end());
        CHECK(all.size() == 3);
        for (const auto& p : all) CHECK((p.layer < 3 && p.head < 4));
        CHECK(randomize_plan(plan, 3, 4, seed).p_s.positions == r.p_s.positions);
        auto key = r.p_s.positions;
        key.insert(key.end(), r.p_y.positions.begin(), r.p_y.positions.end());
        seen.insert(key);
    }
    CHECK(seen.size() > 30);
    CHECK_THROWS_AS(randomize_plan(plan, 1, 2, 0), ValidationError);
}

TEST_CASE("apply_ltc modes") {
    std::mt19937_64 rng(7);
    auto recs = random_records(rng, 12, 2, 3, 4);
    const auto bank = testing::bank_of({testing::gaussian(rng, 4), testing::gaussian(rng, 4), testing::gaussian(rng, 4)});
    std::vector<Prediction> zs;
    for (const auto& r : recs) zs.push_back(classify(r.full_embedding, bank, 1.0, r.sample_id));

    SUBCASE("empty plans reproduce zero-shot exactly") {
        for (auto mode : {LtcMode::zero_shot, LtcMode::ma_only, LtcMode::ki_only, LtcMode::full}) {
            LtcOptions o;
            o.mode = mode;
            const auto out = apply_ltc(recs, CorrectionPlan{}, bank, o);
            REQUIRE(out.size() == zs.size());
            for (std::size_t i = 0; i < zs.size(); ++i) {
                CHECK(out[i].predicted == zs[i].predicted);
                CHECK(out[i].logits == zs[i].logits);
                CHECK(out[i].sample_id == zs[i].sample_id);
            }
        }
    }
    SUBCASE("full mode equals ablation followed by injection") {
        CorrectionPlan plan;
        plan.p_s = heads({{1, 2}});
        plan.p_y = heads({{0, 1}, {1, 0}});
        plan.vectors = vectors_of({{bank.vectors[0], bank.vectors[1]}});
        LtcOptions o;
        const auto out = apply_ltc(recs, plan, bank, o);
        plan.mean_states = compute_mean_states(recs, plan.p_s);
        for (std::size_t i = 0; i < recs.size(); ++i) {
            const auto manual = knowledge_inject(mean_ablate(recs[i], plan), plan);
            const auto expect = classify(manual.full_embedding, bank);
            CHECK(out[i].predicted == expect.predicted);
            for (std::size_t c = 0; c < 3; ++c) CHECK(out[i].logits[c] == doctest::Approx(expect.logits[c]).epsilon(1e-6));
        }
    }
    SUBCASE("zero ablation sets the states to zero") {
        CorrectionPlan plan;
        plan.p_s = heads({{0, 0}});
        const auto z = correct_record(recs[0], [&] {
            auto p = plan;
            p.mean_states = {std::vector<float>(4, 0.0f)};
            return p;
        }(), LtcMode::ma_only);
        LtcOptions o;
        o.mode = LtcMode::ma_only;
        o.zero_ablate = true;
        const auto out = apply_ltc(std::span(recs).first(1), plan, bank, o);
        CHECK(out[0].logits == classify(z.full_embedding, bank).logits);
    }
}
