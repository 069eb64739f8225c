#pragma once

// Minimal pre-LN ViT image encoder (CLIP layout, no masking, no biases on the
// linear maps) with an exact per-head / per-token direct-effect decomposition.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ltc/tensorstore.hpp"
#include "ltc/types.hpp"

namespace ltc {

/// Row-major float matrix.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<float> data;

    static Matrix zeros(int r, int c) { return {r, c, std::vector<float>(static_cast<std::size_t>(r) * c, 0.0f)}; }
    float operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
    float& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    bool operator==(const Matrix&) const = default;
};

/// `standard` normalizes by the row mean and variance. `bypass` skips the
/// normalization and applies only gain and bias, which makes hand-checkable
/// fixtures possible.
enum class LayerNormMode { standard, bypass };

struct LayerNormParams {
    std::vector<float> gain;
    std::vector<float> bias;

    static LayerNormParams identity(int d) {
        return {std::vector<float>(static_cast<std::size_t>(d), 1.0f), std::vector<float>(static_cast<std::size_t>(d), 0.0f)};
    }
    bool operator==(const LayerNormParams&) const = default;
};

struct AttentionHead {
    Matrix query;   // [d_head x d_model]
    Matrix key;     // [d_head x d_model]
    Matrix value;   // [d_head x d_model]
    Matrix output;  // [d_model x d_head], this head's slice of W_O
    bool operator==(const AttentionHead&) const = default;
};

struct EncoderLayer {
    LayerNormParams ln1;
    std::vector<AttentionHead> heads;
    LayerNormParams ln2;
    Matrix mlp_in;   // [d_ff x d_model]
    Matrix mlp_out;  // [d_model x d_ff]
    bool operator==(const EncoderLayer&) const = default;
};

struct ViTWeights {
    int d_model = 0;
    int n_heads = 0;
    int patch_dim = 0;
    int d_ff = 0;
    int joint_dim = 0;
    LayerNormMode ln_mode = LayerNormMode::standard;
    double ln_eps = 1e-5;

    Matrix patch_embed;  // [d_model x patch_dim]
    std::vector<float> cls_token;
    std::vector<EncoderLayer> layers;
    LayerNormParams ln_final;
    Matrix projection;  // [joint_dim x d_model]

    int n_layers() const { return static_cast<int>(layers.size()); }
    int d_head() const { return n_heads > 0 ? d_model / n_heads : 0; }
    ModelSpec model_spec(int n_tokens) const;
    /// Shape and finiteness checks; throws ValidationError.
    void validate() const;
    bool operator==(const ViTWeights&) const = default;
};

/// Everything the decomposed forward pass saw. Row-major, double precision.
/// T = N + 1 token slots with CLS at slot 0.
struct ResidualTrace {
    int n_layers = 0;
    int n_heads = 0;
    int n_token_slots = 0;
    int d_model = 0;

    std::vector<std::vector<double>> states;       // L + 1 entries (z^0 .. z^L), each [T x d_model]
    std::vector<std::vector<double>> mid_states;   // L entries (post-attention), each [T x d_model]
    std::vector<std::vector<double>> msa_outputs;  // L entries, each [T x d_model]
    std::vector<std::vector<double>> mlp_outputs;  // L entries, each [T x d_model]
    std::vector<double> head_token_contributions;  // [L, H, T, d_model], CLS query row
    std::vector<double> attention;                 // [L, H, T], CLS query row

    std::span<const double> token_contribution(int layer, int head, int token) const;
    double attention_weight(int layer, int head, int token) const;
};

struct Decomposition {
    ResidualTrace trace;
    ActivationRecord record;
};

/// Undecomposed encoder: returns the projected CLS embedding [joint_dim].
/// Independent code path used as the oracle for forward_decomposed.
std::vector<float> forward_plain(const ViTWeights& weights, std::span<const float> patches, int n_patches);

/// Forward pass that records every head's per-token CLS contribution and maps
/// it through the final layernorm (statistics frozen from the true stream) and
/// the projection. MLP and embedding terms are folded into residual_base.
Decomposition forward_decomposed(const ViTWeights& weights, std::span<const float> patches, int n_patches,
                                 const std::string& sample_id, bool with_tokens = true);

struct TinyVitConfig {
    int n_layers = 2;
    int n_heads = 2;
    int d_model = 8;
    int d_ff = 16;
    int patch_dim = 6;
    int joint_dim = 4;
};

/// Random weights with fan-in scaled Gaussian entries and jittered layernorms.
ViTWeights random_vit(const TinyVitConfig& config, std::uint64_t seed);

/// Pre-extracted patch vectors for a batch of images.
struct PatchSet {
    std::vector<std::string> sample_ids;
    int n_patches = 0;
    int patch_dim = 0;
    std::vector<float> data;  // [M, n_patches, patch_dim]

    std::size_t size() const { return sample_ids.size(); }
    std::span<const float> sample(std::size_t i) const;
    bool operator==(const PatchSet&) const = default;
};

PatchSet random_patches(std::vector<std::string> ids, int n_patches, int patch_dim, std::uint64_t seed);

/// `<dir>/weights.json` + one blob per field (patch_embed, cls_token, ln1.g,
/// ln1.b, ln2.g, ln2.b, attn.q, attn.k, attn.v, attn.o, mlp.in, mlp.out,
/// ln_f.g, ln_f.b, proj).
void write_weights(const ViTWeights& weights, const std::filesystem::path& dir);
ViTWeights read_weights(const std::filesystem::path& dir);

/// `<path>` JSON manifest + sibling `.bin` blob.
void write_patches(const PatchSet& patches, const std::filesystem::path& path);
PatchSet read_patches(const std::filesystem::path& path);

} // namespace ltc
