#include <doctest.h>

#include <cmath>
#include <random>

#include "ltc/error.hpp"
#include "ltc/linalg.hpp"
#include "ltc/vit.hpp"
#include "support.hpp"

using namespace ltc;

namespace {

Matrix identity(int n) {
    auto m = Matrix::zeros(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0f;
    return m;
}

// 1 layer, 1 head, d_model = 2, W_V = W_O = I, zero queries/keys (uniform
// attention), zero MLP, bypassed layernorms, identity projection.
ViTWeights identity_vit() {
    ViTWeights w;
    w.d_model = 2;
    w.n_heads = 1;
    w.patch_dim = 2;
    w.d_ff = 2;
    w.joint_dim = 2;
    w.ln_mode = LayerNormMode::bypass;
    w.patch_embed = identity(2);
    w.cls_token = {1.0f, 0.0f};
    EncoderLayer layer;
    layer.ln1 = LayerNormParams::identity(2);
    layer.ln2 = LayerNormParams::identity(2);
    layer.heads.push_back({Matrix::zeros(2, 2), Matrix::zeros(2, 2), identity(2), identity(2)});
    layer.mlp_in = Matrix::zeros(2, 2);
    layer.mlp_out = Matrix::zeros(2, 2);
    w.layers.push_back(layer);
    w.ln_final = LayerNormParams::identity(2);
    w.projection = identity(2);
    return w;
}

double relative_error(std::span<const float> a, std::span<const float> b) {
    double num = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) num += (double(a[k]) - b[k]) * (double(a[k]) - b[k]);
    return std::sqrt(num) / linalg::norm(b);
}

} // namespace

TEST_CASE("uniform attention with identity value-output averages the tokens") {
    const auto w = identity_vit();
    const std::vector<float> patch{0.0f, 2.0f};
    const auto dec = forward_decomposed(w, patch, 1, "x");
    // Tokens (1, 0) and (0, 2) with weights 1/2 each.
    CHECK(dec.trace.attention_weight(0, 0, 0) == doctest::Approx(0.5));
    CHECK(dec.trace.attention_weight(0, 0, 1) == doctest::Approx(0.5));
    CHECK(dec.trace.msa_outputs[0][0] == doctest::Approx(0.5));
    CHECK(dec.trace.msa_outputs[0][1] == doctest::Approx(1.0));
    CHECK(dec.record.head(0, 0)[0] == doctest::Approx(0.5));
    CHECK(dec.record.head(0, 0)[1] == doctest::Approx(1.0));
    CHECK(dec.record.residual_base[0] == doctest::Approx(1.0));
    CHECK(dec.record.residual_base[1] == doctest::Approx(0.0));
    // CLS stream after the layer: (1, 0) + (0.5, 1).
    const auto plain = forward_plain(w, patch, 1);
    CHECK(plain[0] == doctest::Approx(1.5));
    CHECK(plain[1] == doctest::Approx(1.0));
    CHECK(dec.record.full_embedding == plain);
}

TEST_CASE("zero weights except the CLS token give the projected layernormed CLS") {
    auto w = random_vit({1, 2, 4, 8, 3, 3}, 3);
    for (auto& layer : w.layers) {
        for (auto& h : layer.heads)
            for (auto* m : {&h.query, &h.key, &h.value, &h.output}) std::fill(m->data.begin(), m->data.end(), 0.0f);
        std::fill(layer.mlp_in.data.begin(), layer.mlp_in.data.end(), 0.0f);
        std::fill(layer.mlp_out.data.begin(), layer.mlp_out.data.end(), 0.0f);
    }
    std::fill(w.patch_embed.data.begin(), w.patch_embed.data.end(), 0.0f);
    const std::vector<float> patches(6, 0.7f);

    // Hand layernorm of the CLS token.
    const auto& x = w.cls_token;
    double mean = 0.0, var = 0.0;
    for (float v : x) mean += v;
    mean /= 4;
    for (float v : x) var += (v - mean) * (v - mean);
    var /= 4;
    std::vector<double> ln(4);
    for (int k = 0; k < 4; ++k)
        ln[k] = (x[k] - mean) / std::sqrt(var + w.ln_eps) * w.ln_final.gain[k] + w.ln_final.bias[k];
    std::vector<double> expected(3, 0.0);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) expected[r] += w.projection(r, c) * ln[c];

    const auto dec = forward_decomposed(w, patches, 2, "z");
    for (int r = 0; r < 3; ++r) CHECK(dec.record.full_embedding[r] == doctest::Approx(expected[r]).epsilon(1e-6));
    for (float v : dec.record.contributions) CHECK(v == 0.0f);
}

TEST_CASE("decomposition matches the plain forward on random encoders") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 25; ++trial) {
        TinyVitConfig cfg;
        cfg.n_layers = 1 + trial % 4;
        cfg.n_heads = 1 << (trial % 3);
        cfg.d_model = cfg.n_heads * (2 + trial % 3);
        cfg.d_ff = 2 * cfg.d_model;
        cfg.patch_dim = 3 + trial % 4;
        cfg.joint_dim = 2 + trial % 5;
        const auto w = random_vit(cfg, 1000 + trial);
        const int n = 1 + trial % 6;
        const auto patches = testing::gaussian(rng, static_cast<std::size_t>(n * cfg.patch_dim));
        const auto plain = forward_plain(w, patches, n);
        const auto dec = forward_decomposed(w, patches, n, "r", true);
        CAPTURE(trial);
        CHECK(relative_error(dec.record.full_embedding, plain) <= 1e-5);
        CHECK(dec.record.reconstruction_error() <= 1e-4);
        CHECK(dec.record.token_sum_error() <= 1e-5);

        const auto& tr = dec.trace;
        for (int l = 0; l < cfg.n_layers; ++l) {
            for (int h = 0; h < cfg.n_heads; ++h) {
                double s = 0.0;
                for (int j = 0; j <= n; ++j) s += tr.attention_weight(l, h, j);
                CHECK(std::abs(s - 1.0) <= 1e-6);
            }
            double worst = 0.0;
            for (std::size_t k = 0; k < tr.mid_states[l].size(); ++k) {
                worst = std::max(worst, std::abs(tr.mid_states[l][k] - tr.msa_outputs[l][k] - tr.states[l][k]));
                worst = std::max(worst, std::abs(tr.states[l + 1][k] - tr.mlp_outputs[l][k] - tr.mid_states[l][k]));
            }
            CHECK(worst <= 1e-5);
        }
    }
}

TEST_CASE("head contributions sum over tokens to the CLS attention output") {
    const auto w = random_vit({2, 2, 8, 16, 6, 4}, 9);
    std::mt19937_64 rng(1);
    const auto patches = testing::gaussian(rng, 4 * 6);
    const auto tr = forward_decomposed(w, patches, 4, "t").trace;
    for (int l = 0; l < 2; ++l)
        for (int r = 0; r < 8; ++r) {
            double s = 0.0;
            for (int h = 0; h < 2; ++h)
                for (int j = 0; j < 5; ++j) s += tr.token_contribution(l, h, j)[r];
            CHECK(s == doctest::Approx(tr.msa_outputs[l][r]).epsilon(1e-9));
        }
}

TEST_CASE("bypass layernorm mode also decomposes exactly") {
    auto w = random_vit({2, 2, 8, 16, 5, 3}, 21);
    w.ln_mode = LayerNormMode::bypass;
    std::mt19937_64 rng(5);
    const auto patches = testing::gaussian(rng, 3 * 5, 0.5);
    const auto dec = forward_decomposed(w, patches, 3, "b");
    CHECK(relative_error(dec.record.full_embedding, forward_plain(w, patches, 3)) <= 1e-5);
    CHECK(dec.record.reconstruction_error() <= 1e-4);
}

TEST_CASE("forward passes are deterministic") {
    const auto w = random_vit({}, 4);
    const std::vector<float> zeros(3 * 6, 0.0f);
    CHECK(forward_plain(w, zeros, 3) == forward_plain(w, zeros, 3));
    const auto a = forward_decomposed(w, zeros, 3, "d");
    const auto b = forward_decomposed(w, zeros, 3, "d");
    CHECK(a.record == b.record);
    CHECK(a.trace.head_token_contributions == b.trace.head_token_contributions);
}

TEST_CASE("without tokens the record carries no token tensor") {
    const auto w = random_vit({}, 4);
    const std::vector<float> p(2 * 6, 0.3f);
    const auto rec = forward_decomposed(w, p, 2, "n", false).record;
    CHECK_FALSE(rec.has_tokens());
    CHECK(rec.token_contributions.empty());
}

TEST_CASE("overflowing activations raise a numeric error naming the location") {
    // Values near the float maximum compound past the double range within a few layers.
    auto w = random_vit({4, 1, 2, 4, 2, 2}, 8);
    w.ln_mode = LayerNormMode::bypass;
    auto blow_up = [](Matrix& m) { std::fill(m.data.begin(), m.data.end(), 1e38f); };
    blow_up(w.patch_embed);
    for (auto& layer : w.layers) {
        blow_up(layer.heads[0].value);
        blow_up(layer.heads[0].output);
    }
    const std::vector<float> p{1e38f, 1e38f};
    try {
        (void)forward_decomposed(w, p, 1, "boom");
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("layer") != std::string::npos);
    }
    CHECK_THROWS_AS(forward_plain(w, p, 1), NumericError);
}

TEST_CASE("malformed weights and patches are validation errors") {
    auto w = random_vit({}, 2);
    const std::vector<float> p(6, 0.0f);
    CHECK_THROWS_AS(forward_plain(w, p, 2), ValidationError);  // wrong patch count
    std::vector<float> bad(6, 0.0f);
    bad[3] = std::nanf("");
    CHECK_THROWS_AS(forward_plain(w, bad, 1), ValidationError);
    w.layers[0].heads[0].value.data[0] = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(w.validate(), ValidationError);
}

TEST_CASE("weights and patch sets round trip through files") {
    testing::TempDir dir;
    const auto w = random_vit({2, 2, 8, 16, 6, 4}, 77);
    write_weights(w, dir / "w");
    CHECK(read_weights(dir / "w") == w);

    const auto ps = random_patches({"a", "b", "c"}, 4, 6, 3);
    write_patches(ps, dir / "p.json");
    CHECK(read_patches(dir / "p.json") == ps);
    CHECK(ps.sample(1).size() == 24u);
    CHECK_THROWS_AS(read_weights(dir / "missing"), IoError);
}
