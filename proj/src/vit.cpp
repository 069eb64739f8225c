#include "ltc/vit.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ltc/binio.hpp"
#include "ltc/error.hpp"
#include "ltc/linalg.hpp"

namespace ltc {

namespace fs = std::filesystem;
using binio::json;

namespace {

using Row = std::vector<double>;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

struct LayerNormStats {
    double mean = 0.0;
    double inv_sigma = 1.0;
};

// Applies the layernorm to one row and returns the statistics it used.
LayerNormStats layer_norm(std::span<const double> x, const LayerNormParams& p, LayerNormMode mode, double eps,
                          std::span<double> out) {
    const std::size_t n = x.size();
    LayerNormStats st;
    if (mode == LayerNormMode::standard) {
        double mu = 0.0;
        for (double v : x) mu += v;
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (double v : x) var += (v - mu) * (v - mu);
        var /= static_cast<double>(n);
        st.mean = mu;
        st.inv_sigma = 1.0 / std::sqrt(var + eps);
        for (std::size_t k = 0; k < n; ++k) out[k] = (x[k] - mu) * st.inv_sigma * p.gain[k] + p.bias[k];
    } else {
        for (std::size_t k = 0; k < n; ++k) out[k] = x[k] * p.gain[k] + p.bias[k];
    }
    return st;
}

// Linear part of a layernorm whose statistics were frozen on the full stream:
// centering is applied to the part itself, scaling uses the frozen sigma.
Row frozen_linear(std::span<const double> part, const LayerNormParams& p, LayerNormMode mode, double inv_sigma) {
    const std::size_t n = part.size();
    Row out(n);
    if (mode == LayerNormMode::standard) {
        double mu = 0.0;
        for (double v : part) mu += v;
        mu /= static_cast<double>(n);
        for (std::size_t k = 0; k < n; ++k) out[k] = (part[k] - mu) * inv_sigma * p.gain[k];
    } else {
        for (std::size_t k = 0; k < n; ++k) out[k] = part[k] * p.gain[k];
    }
    return out;
}

// y = M x
void matvec(const Matrix& m, std::span<const double> x, std::span<double> y) {
    for (int r = 0; r < m.rows; ++r) {
        double s = 0.0;
        const float* row = m.data.data() + static_cast<std::size_t>(r) * m.cols;
        for (int c = 0; c < m.cols; ++c) s += static_cast<double>(row[c]) * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] = s;
    }
}

Row matvec(const Matrix& m, std::span<const double> x) {
    Row y(static_cast<std::size_t>(m.rows));
    matvec(m, x, y);
    return y;
}

std::span<const double> row_of(const std::vector<double>& buf, int row, int width) {
    return std::span<const double>(buf).subspan(static_cast<std::size_t>(row) * width, static_cast<std::size_t>(width));
}

std::span<double> row_of(std::vector<double>& buf, int row, int width) {
    return std::span<double>(buf).subspan(static_cast<std::size_t>(row) * width, static_cast<std::size_t>(width));
}

void require_finite(std::span<const double> v, const std::string& where) {
    if (!linalg::all_finite(v)) throw NumericError("non-finite value at " + where);
}

std::string where(int layer, int head) {
    return "layer " + std::to_string(layer) + " head " + std::to_string(head);
}

// z^0: CLS followed by embedded patches.
std::vector<double> embed_tokens(const ViTWeights& w, std::span<const float> patches, int n_patches) {
    if (n_patches < 1) throw ValidationError("forward: need at least one patch");
    if (patches.size() != static_cast<std::size_t>(n_patches) * w.patch_dim)
        throw ValidationError("forward: patch buffer has " + std::to_string(patches.size()) + " values, expected " +
                              std::to_string(static_cast<std::size_t>(n_patches) * w.patch_dim));
    if (!linalg::all_finite(patches)) throw ValidationError("forward: patches contain non-finite values");
    const int T = n_patches + 1, dm = w.d_model;
    std::vector<double> z(static_cast<std::size_t>(T) * dm);
    auto cls = row_of(z, 0, dm);
    std::copy(w.cls_token.begin(), w.cls_token.end(), cls.begin());
    for (int i = 0; i < n_patches; ++i) {
        const auto p = linalg::to_double(patches.subspan(static_cast<std::size_t>(i) * w.patch_dim,
                                                         static_cast<std::size_t>(w.patch_dim)));
        matvec(w.patch_embed, p, row_of(z, i + 1, dm));
    }
    return z;
}

void softmax_inplace(std::span<double> s) {
    const double mx = *std::max_element(s.begin(), s.end());
    double sum = 0.0;
    for (double& v : s) {
        v = std::exp(v - mx);
        sum += v;
    }
    for (double& v : s) v /= sum;
}

std::vector<double> mlp_block(const ViTWeights& w, const EncoderLayer& layer, const std::vector<double>& zhat, int T,
                              int layer_index) {
    const int dm = w.d_model;
    std::vector<double> out(static_cast<std::size_t>(T) * dm);
    Row normed(static_cast<std::size_t>(dm)), hidden(static_cast<std::size_t>(w.d_ff));
    for (int i = 0; i < T; ++i) {
        layer_norm(row_of(zhat, i, dm), layer.ln2, w.ln_mode, w.ln_eps, normed);
        matvec(layer.mlp_in, normed, hidden);
        for (double& v : hidden) v = gelu(v);
        matvec(layer.mlp_out, hidden, row_of(out, i, dm));
    }
    require_finite(out, "layer " + std::to_string(layer_index) + " mlp");
    return out;
}

} // namespace

// ---------------------------------------------------------------------------

ModelSpec ViTWeights::model_spec(int n_tokens) const {
    return ModelSpec{n_layers(), n_heads, n_tokens, d_model, joint_dim};
}

void ViTWeights::validate() const {
    const auto fail = [](const std::string& what) { throw ValidationError("vit weights: " + what); };
    if (d_model < 1 || n_heads < 1 || patch_dim < 1 || d_ff < 1 || joint_dim < 1) fail("dimensions must be >= 1");
    if (layers.empty()) fail("need at least one layer");
    if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
    const int dh = d_head();
    const auto check_matrix = [&](const Matrix& m, int r, int c, const std::string& name) {
        if (m.rows != r || m.cols != c || m.data.size() != static_cast<std::size_t>(r) * c)
            fail(name + " has shape " + std::to_string(m.rows) + "x" + std::to_string(m.cols) + ", expected " +
                 std::to_string(r) + "x" + std::to_string(c));
        if (!linalg::all_finite(m.data)) fail(name + " has non-finite entries");
    };
    const auto check_ln = [&](const LayerNormParams& p, const std::string& name) {
        if (p.gain.size() != static_cast<std::size_t>(d_model) || p.bias.size() != static_cast<std::size_t>(d_model))
            fail(name + " has wrong width");
        if (!linalg::all_finite(p.gain) || !linalg::all_finite(p.bias)) fail(name + " has non-finite entries");
    };
    check_matrix(patch_embed, d_model, patch_dim, "patch_embed");
    if (cls_token.size() != static_cast<std::size_t>(d_model) || !linalg::all_finite(cls_token)) fail("cls_token");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const auto tag = "layer " + std::to_string(l) + " ";
        check_ln(layer.ln1, tag + "ln1");
        check_ln(layer.ln2, tag + "ln2");
        if (layer.heads.size() != static_cast<std::size_t>(n_heads)) fail(tag + "head count");
        for (std::size_t h = 0; h < layer.heads.size(); ++h) {
            const auto& hd = layer.heads[h];
            const auto htag = tag + "head " + std::to_string(h) + " ";
            check_matrix(hd.query, dh, d_model, htag + "W_Q");
            check_matrix(hd.key, dh, d_model, htag + "W_K");
            check_matrix(hd.value, dh, d_model, htag + "W_V");
            check_matrix(hd.output, d_model, dh, htag + "W_O");
        }
        check_matrix(layer.mlp_in, d_ff, d_model, tag + "mlp_in");
        check_matrix(layer.mlp_out, d_model, d_ff, tag + "mlp_out");
    }
    check_ln(ln_final, "ln_f");
    check_matrix(projection, joint_dim, d_model, "proj");
}

std::span<const double> ResidualTrace::token_contribution(int layer, int head, int token) const {
    const auto off = ((static_cast<std::size_t>(layer) * n_heads + head) * n_token_slots + token) * d_model;
    return std::span<const double>(head_token_contributions).subspan(off, static_cast<std::size_t>(d_model));
}

double ResidualTrace::attention_weight(int layer, int head, int token) const {
    return attention[(static_cast<std::size_t>(layer) * n_heads + head) * n_token_slots + token];
}

// ---------------------------------------------------------------------------

std::vector<float> forward_plain(const ViTWeights& w, std::span<const float> patches, int n_patches) {
    w.validate();
    const int T = n_patches + 1, dm = w.d_model, dh = w.d_head(), H = w.n_heads;
    std::vector<double> z = embed_tokens(w, patches, n_patches);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<double> normed(static_cast<std::size_t>(T) * dm);
    for (int l = 0; l < w.n_layers(); ++l) {
        const auto& layer = w.layers[static_cast<std::size_t>(l)];
        for (int i = 0; i < T; ++i) layer_norm(row_of(z, i, dm), layer.ln1, w.ln_mode, w.ln_eps, row_of(normed, i, dm));

        // Concatenated head outputs [T x d_model], then one pass through the full W_O.
        std::vector<double> concat(static_cast<std::size_t>(T) * dm, 0.0);
        for (int h = 0; h < H; ++h) {
            const auto& hd = layer.heads[static_cast<std::size_t>(h)];
            std::vector<double> q(static_cast<std::size_t>(T) * dh), k(q.size()), v(q.size());
            for (int i = 0; i < T; ++i) {
                matvec(hd.query, row_of(normed, i, dm), row_of(q, i, dh));
                matvec(hd.key, row_of(normed, i, dm), row_of(k, i, dh));
                matvec(hd.value, row_of(normed, i, dm), row_of(v, i, dh));
            }
            Row scores(static_cast<std::size_t>(T));
            for (int i = 0; i < T; ++i) {
                for (int j = 0; j < T; ++j) scores[static_cast<std::size_t>(j)] = linalg::dot(row_of(q, i, dh), row_of(k, j, dh)) * scale;
                softmax_inplace(scores);
                for (int j = 0; j < T; ++j)
                    for (int c = 0; c < dh; ++c)
                        concat[static_cast<std::size_t>(i) * dm + static_cast<std::size_t>(h) * dh + c] +=
                            scores[static_cast<std::size_t>(j)] * v[static_cast<std::size_t>(j) * dh + c];
            }
        }
        for (int i = 0; i < T; ++i) {
            for (int r = 0; r < dm; ++r) {
                double s = 0.0;
                for (int h = 0; h < H; ++h) {
                    const auto& o = layer.heads[static_cast<std::size_t>(h)].output;
                    for (int c = 0; c < dh; ++c)
                        s += static_cast<double>(o(r, c)) * concat[static_cast<std::size_t>(i) * dm + static_cast<std::size_t>(h) * dh + c];
                }
                z[static_cast<std::size_t>(i) * dm + r] += s;
            }
        }
        require_finite(z, "layer " + std::to_string(l) + " attention");
        const auto mlp = mlp_block(w, layer, z, T, l);
        for (std::size_t k = 0; k < z.size(); ++k) z[k] += mlp[k];
    }
    Row final_cls(static_cast<std::size_t>(dm));
    layer_norm(row_of(z, 0, dm), w.ln_final, w.ln_mode, w.ln_eps, final_cls);
    auto out = matvec(w.projection, final_cls);
    require_finite(out, "final projection");
    return linalg::to_float(out);
}

Decomposition forward_decomposed(const ViTWeights& w, std::span<const float> patches, int n_patches,
                                 const std::string& sample_id, bool with_tokens) {
    w.validate();
    const int L = w.n_layers(), H = w.n_heads, T = n_patches + 1, dm = w.d_model, dh = w.d_head(), d = w.joint_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Decomposition out;
    auto& tr = out.trace;
    tr.n_layers = L;
    tr.n_heads = H;
    tr.n_token_slots = T;
    tr.d_model = dm;
    tr.head_token_contributions.assign(static_cast<std::size_t>(L) * H * T * dm, 0.0);
    tr.attention.assign(static_cast<std::size_t>(L) * H * T, 0.0);
    tr.states.push_back(embed_tokens(w, patches, n_patches));

    std::vector<double> normed(static_cast<std::size_t>(T) * dm);
    for (int l = 0; l < L; ++l) {
        const auto& layer = w.layers[static_cast<std::size_t>(l)];
        const auto& z = tr.states.back();
        for (int i = 0; i < T; ++i) layer_norm(row_of(z, i, dm), layer.ln1, w.ln_mode, w.ln_eps, row_of(normed, i, dm));

        std::vector<double> msa(static_cast<std::size_t>(T) * dm, 0.0);
        for (int h = 0; h < H; ++h) {
            const auto& hd = layer.heads[static_cast<std::size_t>(h)];
            // Value-output image of every token: W_O^h W_V^h LN(z_j).
            std::vector<double> q(static_cast<std::size_t>(T) * dh), k(q.size()), vo(static_cast<std::size_t>(T) * dm);
            Row v(static_cast<std::size_t>(dh));
            for (int j = 0; j < T; ++j) {
                matvec(hd.query, row_of(normed, j, dm), row_of(q, j, dh));
                matvec(hd.key, row_of(normed, j, dm), row_of(k, j, dh));
                matvec(hd.value, row_of(normed, j, dm), v);
                matvec(hd.output, v, row_of(vo, j, dm));
            }
            Row a(static_cast<std::size_t>(T));
            for (int i = 0; i < T; ++i) {
                for (int j = 0; j < T; ++j) a[static_cast<std::size_t>(j)] = linalg::dot(row_of(q, i, dh), row_of(k, j, dh)) * scale;
                softmax_inplace(a);
                auto dst = row_of(msa, i, dm);
                for (int j = 0; j < T; ++j) {
                    const double aj = a[static_cast<std::size_t>(j)];
                    const auto src = row_of(vo, j, dm);
                    if (i == 0) {
                        tr.attention[(static_cast<std::size_t>(l) * H + h) * T + j] = aj;
                        auto c = std::span<double>(tr.head_token_contributions)
                                     .subspan(((static_cast<std::size_t>(l) * H + h) * T + j) * dm, static_cast<std::size_t>(dm));
                        for (int r = 0; r < dm; ++r) c[static_cast<std::size_t>(r)] = aj * src[static_cast<std::size_t>(r)];
                    }
                    for (int r = 0; r < dm; ++r) dst[static_cast<std::size_t>(r)] += aj * src[static_cast<std::size_t>(r)];
                }
            }
            require_finite(vo, where(l, h));
            require_finite(a, where(l, h));
        }
        std::vector<double> zhat = z;
        for (std::size_t k2 = 0; k2 < zhat.size(); ++k2) zhat[k2] += msa[k2];
        require_finite(zhat, "layer " + std::to_string(l) + " attention");
        auto mlp = mlp_block(w, layer, zhat, T, l);
        std::vector<double> next = zhat;
        for (std::size_t k2 = 0; k2 < next.size(); ++k2) next[k2] += mlp[k2];

        tr.msa_outputs.push_back(std::move(msa));
        tr.mid_states.push_back(std::move(zhat));
        tr.mlp_outputs.push_back(std::move(mlp));
        tr.states.push_back(std::move(next));
    }

    // Final layernorm with statistics frozen from the true CLS stream.
    const auto cls_final = row_of(tr.states.back(), 0, dm);
    Row ln_out(static_cast<std::size_t>(dm));
    const auto st = layer_norm(cls_final, w.ln_final, w.ln_mode, w.ln_eps, ln_out);

    auto& rec = out.record;
    rec = ActivationRecord::zeros(sample_id, L, H, d, with_tokens ? T : 0);
    rec.full_embedding = linalg::to_float(matvec(w.projection, ln_out));

    const auto project = [&](std::span<const double> part) {
        return matvec(w.projection, frozen_linear(part, w.ln_final, w.ln_mode, st.inv_sigma));
    };

    for (int l = 0; l < L; ++l)
        for (int h = 0; h < H; ++h) {
            Row head_sum(static_cast<std::size_t>(dm), 0.0);
            for (int j = 0; j < T; ++j) {
                const auto c = tr.token_contribution(l, h, j);
                for (int r = 0; r < dm; ++r) head_sum[static_cast<std::size_t>(r)] += c[static_cast<std::size_t>(r)];
                if (with_tokens) {
                    const auto p = project(c);
                    std::copy(p.begin(), p.end(), rec.token(l, h, j).begin());
                }
            }
            const auto p = project(head_sum);
            std::copy(p.begin(), p.end(), rec.head(l, h).begin());
        }

    // Everything outside attention heads: embedding, MLPs, and the final bias.
    Row rest(static_cast<std::size_t>(d), 0.0);
    const auto accumulate = [&](const Row& v) {
        for (int k2 = 0; k2 < d; ++k2) rest[static_cast<std::size_t>(k2)] += v[static_cast<std::size_t>(k2)];
    };
    accumulate(project(row_of(tr.states.front(), 0, dm)));
    for (int l = 0; l < L; ++l) accumulate(project(row_of(tr.mlp_outputs[static_cast<std::size_t>(l)], 0, dm)));
    const Row bias(w.ln_final.bias.begin(), w.ln_final.bias.end());
    accumulate(matvec(w.projection, bias));
    rec.residual_base = linalg::to_float(rest);

    if (!linalg::all_finite(rec.full_embedding)) throw NumericError("non-finite value at final projection");
    return out;
}

// ---------------------------------------------------------------------------

ViTWeights random_vit(const TinyVitConfig& c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto fill = [&](int r, int cols, double s) {
        Matrix m = Matrix::zeros(r, cols);
        for (auto& v : m.data) v = static_cast<float>(normal(rng) * s);
        return m;
    };
    const auto ln = [&](int dm) {
        LayerNormParams p = LayerNormParams::identity(dm);
        for (auto& g : p.gain) g = static_cast<float>(1.0 + 0.1 * normal(rng));
        for (auto& b : p.bias) b = static_cast<float>(0.1 * normal(rng));
        return p;
    };

    ViTWeights w;
    w.d_model = c.d_model;
    w.n_heads = c.n_heads;
    w.patch_dim = c.patch_dim;
    w.d_ff = c.d_ff;
    w.joint_dim = c.joint_dim;
    const int dh = c.d_model / c.n_heads;
    w.patch_embed = fill(c.d_model, c.patch_dim, 1.0 / std::sqrt(c.patch_dim));
    w.cls_token.resize(static_cast<std::size_t>(c.d_model));
    for (auto& v : w.cls_token) v = static_cast<float>(normal(rng));
    for (int l = 0; l < c.n_layers; ++l) {
        EncoderLayer layer;
        layer.ln1 = ln(c.d_model);
        for (int h = 0; h < c.n_heads; ++h) {
            AttentionHead hd;
            hd.query = fill(dh, c.d_model, 1.0 / std::sqrt(c.d_model));
            hd.key = fill(dh, c.d_model, 1.0 / std::sqrt(c.d_model));
            hd.value = fill(dh, c.d_model, 1.0 / std::sqrt(c.d_model));
            hd.output = fill(c.d_model, dh, 1.0 / std::sqrt(c.d_model));
            layer.heads.push_back(std::move(hd));
        }
        layer.ln2 = ln(c.d_model);
        layer.mlp_in = fill(c.d_ff, c.d_model, 1.0 / std::sqrt(c.d_model));
        layer.mlp_out = fill(c.d_model, c.d_ff, 1.0 / std::sqrt(c.d_ff));
        w.layers.push_back(std::move(layer));
    }
    w.ln_final = ln(c.d_model);
    w.projection = fill(c.joint_dim, c.d_model, 1.0 / std::sqrt(c.d_model));
    w.validate();
    return w;
}

std::span<const float> PatchSet::sample(std::size_t i) const {
    const auto n = static_cast<std::size_t>(n_patches) * patch_dim;
    return std::span<const float>(data).subspan(i * n, n);
}

PatchSet random_patches(std::vector<std::string> ids, int n_patches, int patch_dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    PatchSet ps;
    ps.sample_ids = std::move(ids);
    ps.n_patches = n_patches;
    ps.patch_dim = patch_dim;
    ps.data.resize(ps.sample_ids.size() * static_cast<std::size_t>(n_patches) * patch_dim);
    for (auto& v : ps.data) v = static_cast<float>(normal(rng));
    return ps;
}

// ---------------------------------------------------------------------------
// Weight files

namespace {

constexpr int kWeightsSchemaVersion = 1;

const char* ln_mode_name(LayerNormMode m) { return m == LayerNormMode::standard ? "standard" : "bypass"; }

LayerNormMode ln_mode_from(const std::string& s) {
    if (s == "standard") return LayerNormMode::standard;
    if (s == "bypass") return LayerNormMode::bypass;
    throw CorruptStoreError("unknown layernorm mode '" + s + "'");
}

void append(std::vector<float>& dst, const std::vector<float>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

} // namespace

void write_weights(const ViTWeights& w, const fs::path& dir) {
    w.validate();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

    const auto L = static_cast<std::size_t>(w.n_layers()), H = static_cast<std::size_t>(w.n_heads),
               dm = static_cast<std::size_t>(w.d_model), dh = static_cast<std::size_t>(w.d_head()),
               dff = static_cast<std::size_t>(w.d_ff);
    json files, sums;
    const auto put = [&](const std::string& name, const std::vector<float>& flat, std::vector<std::size_t> shape) {
        const auto file = name + ".bin";
        files[name] = binio::tensor_entry(file, shape);
        sums[name] = binio::write_f32(dir / file, flat);
    };

    std::vector<float> ln1g, ln1b, ln2g, ln2b, q, k, v, o, min, mout;
    for (const auto& layer : w.layers) {
        append(ln1g, layer.ln1.gain);
        append(ln1b, layer.ln1.bias);
        append(ln2g, layer.ln2.gain);
        append(ln2b, layer.ln2.bias);
        for (const auto& hd : layer.heads) {
            append(q, hd.query.data);
            append(k, hd.key.data);
            append(v, hd.value.data);
            append(o, hd.output.data);
        }
        append(min, layer.mlp_in.data);
        append(mout, layer.mlp_out.data);
    }
    put("patch_embed", w.patch_embed.data, {dm, static_cast<std::size_t>(w.patch_dim)});
    put("cls_token", w.cls_token, {dm});
    put("ln1.g", ln1g, {L, dm});
    put("ln1.b", ln1b, {L, dm});
    put("ln2.g", ln2g, {L, dm});
    put("ln2.b", ln2b, {L, dm});
    put("attn.q", q, {L, H, dh, dm});
    put("attn.k", k, {L, H, dh, dm});
    put("attn.v", v, {L, H, dh, dm});
    put("attn.o", o, {L, H, dm, dh});
    put("mlp.in", min, {L, dff, dm});
    put("mlp.out", mout, {L, dm, dff});
    put("ln_f.g", w.ln_final.gain, {dm});
    put("ln_f.b", w.ln_final.bias, {dm});
    put("proj", w.projection.data, {static_cast<std::size_t>(w.joint_dim), dm});

    json manifest{{"schema_version", kWeightsSchemaVersion},
                  {"dims",
                   {{"n_layers", L},
                    {"n_heads", H},
                    {"d_model", dm},
                    {"d_ff", dff},
                    {"patch_dim", w.patch_dim},
                    {"joint_dim", w.joint_dim}}},
                  {"layernorm", ln_mode_name(w.ln_mode)},
                  {"ln_eps", w.ln_eps},
                  {"tensor_files", files},
                  {"checksums", sums}};
    binio::write_json(dir / "weights.json", manifest);
}

ViTWeights read_weights(const fs::path& dir) {
    const auto mpath = dir / "weights.json";
    if (!fs::exists(mpath)) throw IoError("weights directory " + dir.string() + " has no weights.json");
    const json m = binio::read_json(mpath);
    ViTWeights w;
    std::size_t L = 0;
    json files, sums;
    try {
        if (m.at("schema_version").get<int>() != kWeightsSchemaVersion)
            throw CorruptStoreError("unsupported weights schema_version");
        const auto& dims = m.at("dims");
        L = dims.at("n_layers").get<std::size_t>();
        w.n_heads = dims.at("n_heads").get<int>();
        w.d_model = dims.at("d_model").get<int>();
        w.d_ff = dims.at("d_ff").get<int>();
        w.patch_dim = dims.at("patch_dim").get<int>();
        w.joint_dim = dims.at("joint_dim").get<int>();
        w.ln_mode = ln_mode_from(m.at("layernorm").get<std::string>());
        w.ln_eps = m.at("ln_eps").get<double>();
        files = m.at("tensor_files");
        sums = m.at("checksums");
    } catch (const json::exception& e) {
        throw CorruptStoreError("weights manifest is missing fields: " + std::string(e.what()));
    }
    if (L < 1 || w.n_heads < 1 || w.d_model < 1 || w.d_model % w.n_heads != 0 || w.d_ff < 1 || w.patch_dim < 1 ||
        w.joint_dim < 1)
        throw CorruptStoreError("weights manifest has invalid dims");

    const auto H = static_cast<std::size_t>(w.n_heads), dm = static_cast<std::size_t>(w.d_model),
               dh = static_cast<std::size_t>(w.d_head()), dff = static_cast<std::size_t>(w.d_ff);
    const auto get = [&](const std::string& name, std::vector<std::size_t> shape) {
        if (!files.contains(name)) throw CorruptStoreError("weights manifest lacks '" + name + "'");
        const auto& e = files.at(name);
        binio::check_tensor_entry(e, name);
        if (e.at("shape").get<std::vector<std::size_t>>() != shape)
            throw CorruptStoreError("weights field '" + name + "' has unexpected shape");
        return binio::read_f32(dir / e.at("file").get<std::string>(), binio::shape_count(e), sums.value(name, std::string{}));
    };
    const auto slice = [](const std::vector<float>& flat, std::size_t index, std::size_t n) {
        return std::vector<float>(flat.begin() + static_cast<std::ptrdiff_t>(index * n),
                                  flat.begin() + static_cast<std::ptrdiff_t>((index + 1) * n));
    };
    const auto mat = [&](std::vector<float> data, std::size_t r, std::size_t c) {
        return Matrix{static_cast<int>(r), static_cast<int>(c), std::move(data)};
    };

    w.patch_embed = mat(get("patch_embed", {dm, static_cast<std::size_t>(w.patch_dim)}), dm, static_cast<std::size_t>(w.patch_dim));
    w.cls_token = get("cls_token", {dm});
    const auto ln1g = get("ln1.g", {L, dm}), ln1b = get("ln1.b", {L, dm});
    const auto ln2g = get("ln2.g", {L, dm}), ln2b = get("ln2.b", {L, dm});
    const auto q = get("attn.q", {L, H, dh, dm}), k = get("attn.k", {L, H, dh, dm}), v = get("attn.v", {L, H, dh, dm});
    const auto o = get("attn.o", {L, H, dm, dh});
    const auto min = get("mlp.in", {L, dff, dm}), mout = get("mlp.out", {L, dm, dff});
    for (std::size_t l = 0; l < L; ++l) {
        EncoderLayer layer;
        layer.ln1 = {slice(ln1g, l, dm), slice(ln1b, l, dm)};
        layer.ln2 = {slice(ln2g, l, dm), slice(ln2b, l, dm)};
        for (std::size_t h = 0; h < H; ++h) {
            const auto idx = l * H + h;
            layer.heads.push_back({mat(slice(q, idx, dh * dm), dh, dm), mat(slice(k, idx, dh * dm), dh, dm),
                                   mat(slice(v, idx, dh * dm), dh, dm), mat(slice(o, idx, dm * dh), dm, dh)});
        }
        layer.mlp_in = mat(slice(min, l, dff * dm), dff, dm);
        layer.mlp_out = mat(slice(mout, l, dm * dff), dm, dff);
        w.layers.push_back(std::move(layer));
    }
    w.ln_final = {get("ln_f.g", {dm}), get("ln_f.b", {dm})};
    w.projection = mat(get("proj", {static_cast<std::size_t>(w.joint_dim), dm}), static_cast<std::size_t>(w.joint_dim), dm);
    try {
        w.validate();
    } catch (const ValidationError& e) {
        throw CorruptStoreError(e.what());
    }
    return w;
}

void write_patches(const PatchSet& ps, const fs::path& path) {
    if (ps.n_patches < 1 || ps.patch_dim < 1) throw ValidationError("patch set: dims must be >= 1");
    if (ps.data.size() != ps.size() * static_cast<std::size_t>(ps.n_patches) * ps.patch_dim)
        throw ValidationError("patch set: data size disagrees with dims");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto blob = path;
    blob.replace_extension(".bin");
    const auto crc = binio::write_f32(blob, ps.data);
    json j{{"schema_version", 1},
           {"sample_ids", ps.sample_ids},
           {"n_patches", ps.n_patches},
           {"patch_dim", ps.patch_dim},
           {"tensor", binio::tensor_entry(blob.filename().string(),
                                          {ps.size(), static_cast<std::size_t>(ps.n_patches), static_cast<std::size_t>(ps.patch_dim)})},
           {"checksum", crc}};
    binio::write_json(path, j);
}

PatchSet read_patches(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("patch file " + path.string() + " does not exist");
    const json j = binio::read_json(path);
    PatchSet ps;
    json entry;
    std::string crc;
    try {
        ps.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
        ps.n_patches = j.at("n_patches").get<int>();
        ps.patch_dim = j.at("patch_dim").get<int>();
        entry = j.at("tensor");
        crc = j.value("checksum", std::string{});
    } catch (const json::exception& e) {
        throw CorruptStoreError(path.string() + ": malformed patch manifest (" + e.what() + ")");
    }
    binio::check_tensor_entry(entry, "patches");
    ps.data = binio::read_f32(path.parent_path() / entry.at("file").get<std::string>(),
                              ps.size() * static_cast<std::size_t>(ps.n_patches) * ps.patch_dim, crc);
    return ps;
}

} // namespace ltc
