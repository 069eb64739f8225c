#include "ltc/types.hpp"

#include <algorithm>

#include "ltc/error.hpp"

namespace ltc {

void ModelSpec::validate() const {
    if (n_layers < 1 || n_heads < 1 || n_tokens < 1 || embed_dim < 1 || joint_dim < 1)
        throw ValidationError("model spec: every dimension must be >= 1");
    if (embed_dim % n_heads != 0)
        throw ValidationError("model spec: embed_dim " + std::to_string(embed_dim) +
                              " is not divisible by n_heads " + std::to_string(n_heads));
}

std::string to_string(HeadPos p) {
    return "L" + std::to_string(p.layer) + "H" + std::to_string(p.head);
}

const char* to_string(HeadSetKind k) {
    switch (k) {
    case HeadSetKind::p_star: return "p_star";
    case HeadSetKind::p_y: return "p_y";
    case HeadSetKind::p_s: return "p_s";
    case HeadSetKind::planted: return "planted";
    }
    return "?";
}

HeadSetKind head_set_kind_from_string(const std::string& s) {
    if (s == "p_star") return HeadSetKind::p_star;
    if (s == "p_y") return HeadSetKind::p_y;
    if (s == "p_s") return HeadSetKind::p_s;
    if (s == "planted") return HeadSetKind::planted;
    throw ValidationError("unknown head set kind '" + s + "'");
}

bool HeadSet::contains(HeadPos p) const {
    return std::find(positions.begin(), positions.end(), p) != positions.end();
}

void HeadSet::validate(int n_layers, int n_heads) const {
    std::vector<HeadPos> sorted = positions;
    for (const auto& p : sorted) {
        if (p.layer < 0 || p.layer >= n_layers || p.head < 0 || p.head >= n_heads)
            throw ValidationError("head position " + to_string(p) + " outside model dims " +
                                  std::to_string(n_layers) + "x" + std::to_string(n_heads));
    }
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ValidationError("head set contains duplicate positions");
}

} // namespace ltc
