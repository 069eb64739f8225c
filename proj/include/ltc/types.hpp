#pragma once

#include <compare>
#include <cstddef>
#include <string>
#include <vector>

namespace ltc {

/// Dimensions shared by an encoder and every activation record it produces.
struct ModelSpec {
    int n_layers = 0;
    int n_heads = 0;
    int n_tokens = 0;   // patch tokens, CLS excluded
    int embed_dim = 0;  // residual width
    int joint_dim = 0;  // width after the image projection

    void validate() const;
    int n_positions() const { return n_layers * n_heads; }
    bool operator==(const ModelSpec&) const = default;
};

struct HeadPos {
    int layer = 0;
    int head = 0;
    auto operator<=>(const HeadPos&) const = default;
};

std::string to_string(HeadPos p);

enum class HeadSetKind { p_star, p_y, p_s, planted };

const char* to_string(HeadSetKind k);
HeadSetKind head_set_kind_from_string(const std::string& s);

/// Ordered set of head positions. Order carries meaning (descending score for
/// located sets), so this is a vector with a uniqueness check rather than std::set.
struct HeadSet {
    std::vector<HeadPos> positions;
    HeadSetKind kind = HeadSetKind::planted;

    std::size_t size() const { return positions.size(); }
    bool empty() const { return positions.empty(); }
    bool contains(HeadPos p) const;

    /// Throws ValidationError on out-of-range or duplicate positions.
    void validate(int n_layers, int n_heads) const;
};

} // namespace ltc
