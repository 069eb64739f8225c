#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ltc/tensorstore.hpp"
#include "ltc/types.hpp"

namespace ltc {

/// Which head set a heatmap or attribution was computed against.
enum class HeadRole { z_sy, z_y, z_s, full };

const char* to_string(HeadRole r);
HeadRole head_role_from_string(const std::string& s);

/// Per-patch logit contribution toward one text embedding, CLS excluded.
/// Square patch counts render as rows x cols grids, others as a single row.
struct Heatmap {
    std::string sample_id;
    HeadRole role = HeadRole::full;
    int rows = 0;
    int cols = 0;
    bool square = false;
    std::vector<double> values;  // row-major, rows * cols == n_patches

    double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

Heatmap spatial_heatmap(const ActivationRecord& record, const HeadSet& heads, std::span<const float> text_embedding,
                        HeadRole role = HeadRole::full);

void write_heatmap_csv(const Heatmap& map, const std::filesystem::path& path);
/// 8-bit binary PGM, min-max scaled (a constant map renders mid-gray).
void write_heatmap_pgm(const Heatmap& map, const std::filesystem::path& path);

/// Text embedding of a caption restricted to a subset of its tokens.
/// Bit i of the mask keeps token i.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual int n_tokens() const = 0;
    virtual int dim() const = 0;
    virtual std::vector<float> embed(std::uint64_t mask) const = 0;
};

/// Embedding of a subset = base + sum of the kept tokens' vectors.
class LinearProvider final : public EmbeddingProvider {
public:
    explicit LinearProvider(std::vector<std::vector<float>> token_vectors, std::vector<float> base = {});
    int n_tokens() const override { return static_cast<int>(tokens_.size()); }
    int dim() const override { return dim_; }
    std::vector<float> embed(std::uint64_t mask) const override;

private:
    std::vector<std::vector<float>> tokens_;
    std::vector<float> base_;
    int dim_ = 0;
};

/// File-backed table: `<path>` JSON maps hex masks to row offsets in a
/// sibling float32 blob. Unlisted masks throw ValidationError.
class TableProvider final : public EmbeddingProvider {
public:
    static TableProvider load(const std::filesystem::path& path);
    static void write(const std::filesystem::path& path, std::span<const std::string> tokens, int dim,
                      const std::map<std::uint64_t, std::vector<float>>& entries);

    int n_tokens() const override { return static_cast<int>(tokens_.size()); }
    int dim() const override { return dim_; }
    const std::vector<std::string>& tokens() const { return tokens_; }
    std::vector<float> embed(std::uint64_t mask) const override;

private:
    std::vector<std::string> tokens_;
    int dim_ = 0;
    std::unordered_map<std::uint64_t, std::size_t> rows_;
    std::vector<float> blob_;
};

enum class ShapleyMethod { automatic, exact, sampled };

const char* to_string(ShapleyMethod m);
ShapleyMethod shapley_method_from_string(const std::string& s);

inline constexpr int kExactShapleyMaxTokens = 10;

struct TokenAttribution {
    std::string sample_id;
    std::vector<std::string> caption_tokens;
    std::vector<double> phi;
    HeadRole role = HeadRole::full;
    int n_permutations = 0;  // 0 under exact enumeration
    std::uint64_t seed = 0;
    bool exact = false;
    double value_full = 0.0;
    double value_empty = 0.0;
};

/// Shapley values of v(mask) = <head_sum, provider.embed(mask)>. `automatic`
/// enumerates exactly up to kExactShapleyMaxTokens tokens and samples
/// permutations beyond that. The permutation stream depends only on
/// (seed, sample_id).
TokenAttribution shapley_text(std::span<const float> head_sum, const EmbeddingProvider& provider, int n_permutations,
                              std::uint64_t seed, ShapleyMethod method = ShapleyMethod::automatic,
                              const std::string& sample_id = {});

enum class TokenAttribute { y, s, other };

const char* to_string(TokenAttribute a);

/// phi / caption length, averaged within each attribute class. Classes with
/// no tokens are absent from the result.
std::map<std::string, double> attribute_summary(const TokenAttribution& attribution,
                                                std::span<const TokenAttribute> attributes);

/// How often each token string holds the highest phi (first index on ties).
std::map<std::string, int> top_feature_counts(std::span<const TokenAttribution> attributions);

} // namespace ltc
