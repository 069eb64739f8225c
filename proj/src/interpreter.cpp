#include "ltc/interpreter.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "ltc/binio.hpp"
#include "ltc/error.hpp"
#include "ltc/linalg.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace ltc {

const char* to_string(HeadRole r) {
    switch (r) {
    case HeadRole::z_sy: return "Z_SY";
    case HeadRole::z_y: return "Z_Y";
    case HeadRole::z_s: return "Z_S";
    case HeadRole::full: return "full";
    }
    return "?";
}

HeadRole head_role_from_string(const std::string& s) {
    if (s == "Z_SY" || s == "sy") return HeadRole::z_sy;
    if (s == "Z_Y" || s == "y") return HeadRole::z_y;
    if (s == "Z_S" || s == "s") return HeadRole::z_s;
    if (s == "full") return HeadRole::full;
    throw ValidationError("unknown head role '" + s + "'");
}

// ---------------------------------------------------------------------------
// Heatmaps

Heatmap spatial_heatmap(const ActivationRecord& record, const HeadSet& heads, std::span<const float> text_embedding,
                        HeadRole role) {
    if (!record.has_tokens())
        throw ValidationError("heatmap for " + record.sample_id + ": store has no token contributions");
    if (text_embedding.size() != static_cast<std::size_t>(record.dim))
        throw ValidationError("heatmap: text embedding dimension mismatch");
    heads.validate(record.n_layers, record.n_heads);
    const int n = record.n_token_slots - 1;
    Heatmap m;
    m.sample_id = record.sample_id;
    m.role = role;
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    m.square = side * side == n;
    m.rows = m.square ? side : 1;
    m.cols = m.square ? side : n;
    m.values.assign(static_cast<std::size_t>(n), 0.0);
    // Accumulate the head sum per token first, then take one inner product,
    // so the map is linear in the head set up to float summation order.
    std::vector<double> sum(static_cast<std::size_t>(record.dim));
    for (int i = 1; i <= n; ++i) {
        std::fill(sum.begin(), sum.end(), 0.0);
        for (const auto& p : heads.positions) {
            const auto t = record.token(p.layer, p.head, i);
            for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += t[k];
        }
        m.values[static_cast<std::size_t>(i - 1)] = linalg::dot(sum, text_embedding);
    }
    return m;
}

void write_heatmap_csv(const Heatmap& map, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(9);
    for (int r = 0; r < map.rows; ++r) {
        for (int c = 0; c < map.cols; ++c) out << (c ? "," : "") << map.at(r, c);
        out << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

void write_heatmap_pgm(const Heatmap& map, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "P5\n" << map.cols << ' ' << map.rows << "\n255\n";
    double lo = 0.0, hi = 0.0;
    if (!map.values.empty()) {
        const auto [mn, mx] = std::minmax_element(map.values.begin(), map.values.end());
        lo = *mn;
        hi = *mx;
    }
    for (double v : map.values) {
        const double unit = hi > lo ? (v - lo) / (hi - lo) : 0.5;
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(unit * 255.0))));
    }
    if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Providers

LinearProvider::LinearProvider(std::vector<std::vector<float>> token_vectors, std::vector<float> base)
    : tokens_(std::move(token_vectors)), base_(std::move(base)) {
    if (tokens_.size() > 63) throw ValidationError("linear provider supports at most 63 tokens");
    dim_ = !tokens_.empty() ? static_cast<int>(tokens_.front().size()) : static_cast<int>(base_.size());
    for (const auto& t : tokens_)
        if (static_cast<int>(t.size()) != dim_) throw ValidationError("linear provider: token vectors differ in dimension");
    if (base_.empty()) base_.assign(static_cast<std::size_t>(dim_), 0.0f);
    if (static_cast<int>(base_.size()) != dim_) throw ValidationError("linear provider: base dimension mismatch");
}

std::vector<float> LinearProvider::embed(std::uint64_t mask) const {
    std::vector<double> acc(base_.begin(), base_.end());
    for (std::size_t i = 0; i < tokens_.size(); ++i)
        if (mask >> i & 1u)
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += tokens_[i][k];
    return linalg::to_float(acc);
}

namespace {

std::string mask_hex(std::uint64_t mask) {
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(mask));
    return buf;
}

std::uint64_t parse_mask(const std::string& s) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(s, &used, 16);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw CorruptStoreError("provider table: bad mask '" + s + "'");
    return v;
}

} // namespace

void TableProvider::write(const fs::path& path, std::span<const std::string> tokens, int dim,
                          const std::map<std::uint64_t, std::vector<float>>& entries) {
    if (tokens.size() > 63) throw ValidationError("provider table supports at most 63 tokens");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::vector<float> flat;
    json index = json::object();
    std::size_t row = 0;
    for (const auto& [mask, v] : entries) {
        if (static_cast<int>(v.size()) != dim) throw ValidationError("provider table: vector dimension mismatch");
        if (mask >> tokens.size()) throw ValidationError("provider table: mask uses bits beyond the caption");
        flat.insert(flat.end(), v.begin(), v.end());
        index[mask_hex(mask)] = row++;
    }
    auto blob = path;
    blob.replace_extension(".bin");
    const auto crc = binio::write_f32(blob, flat);
    binio::write_json(path, json{{"schema_version", kStoreSchemaVersion},
                                 {"tokens", std::vector<std::string>(tokens.begin(), tokens.end())},
                                 {"dim", dim},
                                 {"entries", index},
                                 {"tensor", binio::tensor_entry(blob.filename().string(), {row, static_cast<std::size_t>(dim)})},
                                 {"checksum", crc}});
}

TableProvider TableProvider::load(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("provider table " + path.string() + " does not exist");
    const json j = binio::read_json(path);
    TableProvider p;
    json entry;
    std::string crc;
    try {
        p.tokens_ = j.at("tokens").get<std::vector<std::string>>();
        p.dim_ = j.at("dim").get<int>();
        for (const auto& [key, row] : j.at("entries").items()) p.rows_[parse_mask(key)] = row.get<std::size_t>();
        entry = j.at("tensor");
        crc = j.value("checksum", std::string{});
    } catch (const json::exception& e) {
        throw CorruptStoreError(path.string() + ": malformed provider table (" + e.what() + ")");
    }
    binio::check_tensor_entry(entry, "provider table");
    const auto n_rows = binio::shape_count(entry) / std::max<std::size_t>(1, static_cast<std::size_t>(p.dim_));
    for (const auto& [mask, row] : p.rows_)
        if (row >= n_rows) throw CorruptStoreError(path.string() + ": entry " + mask_hex(mask) + " points past the blob");
    p.blob_ = binio::read_f32(path.parent_path() / entry.at("file").get<std::string>(), binio::shape_count(entry), crc);
    return p;
}

std::vector<float> TableProvider::embed(std::uint64_t mask) const {
    const auto it = rows_.find(mask);
    if (it == rows_.end()) throw ValidationError("provider table has no embedding for mask " + mask_hex(mask));
    const auto off = static_cast<std::ptrdiff_t>(it->second * static_cast<std::size_t>(dim_));
    return std::vector<float>(blob_.begin() + off, blob_.begin() + off + dim_);
}

// ---------------------------------------------------------------------------
// Shapley values

const char* to_string(ShapleyMethod m) {
    switch (m) {
    case ShapleyMethod::automatic: return "auto";
    case ShapleyMethod::exact: return "exact";
    case ShapleyMethod::sampled: return "sampled";
    }
    return "?";
}

ShapleyMethod shapley_method_from_string(const std::string& s) {
    if (s == "auto") return ShapleyMethod::automatic;
    if (s == "exact") return ShapleyMethod::exact;
    if (s == "sampled") return ShapleyMethod::sampled;
    throw ValidationError("unknown Shapley method '" + s + "'");
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

class ValueCache {
public:
    ValueCache(std::span<const float> head_sum, const EmbeddingProvider& p) : head_sum_(head_sum), provider_(p) {}

    double operator()(std::uint64_t mask) {
        if (const auto it = cache_.find(mask); it != cache_.end()) return it->second;
        const auto e = provider_.embed(mask);
        const double v = linalg::dot(head_sum_, e);
        cache_.emplace(mask, v);
        return v;
    }

private:
    std::span<const float> head_sum_;
    const EmbeddingProvider& provider_;
    std::unordered_map<std::uint64_t, double> cache_;
};

constexpr int kExactHardLimit = 20;

} // namespace

TokenAttribution shapley_text(std::span<const float> head_sum, const EmbeddingProvider& provider, int n_permutations,
                              std::uint64_t seed, ShapleyMethod method, const std::string& sample_id) {
    const int n = provider.n_tokens();
    if (n < 0 || n > 63) throw ValidationError("shapley: caption must have 0..63 tokens");
    if (static_cast<int>(head_sum.size()) != provider.dim())
        throw ValidationError("shapley: head sum dimension differs from provider");
    const bool exact = method == ShapleyMethod::exact || (method == ShapleyMethod::automatic && n <= kExactShapleyMaxTokens);
    if (exact && n > kExactHardLimit)
        throw ValidationError("shapley: exact enumeration limited to " + std::to_string(kExactHardLimit) + " tokens");
    if (!exact && n_permutations < 1) throw ValidationError("shapley: n_permutations must be at least 1");

    TokenAttribution a;
    a.sample_id = sample_id;
    a.seed = seed;
    a.exact = exact;
    a.phi.assign(static_cast<std::size_t>(n), 0.0);
    ValueCache v(head_sum, provider);
    const std::uint64_t full = n == 0 ? 0 : (~0ull >> (64 - n));
    a.value_full = v(full);
    a.value_empty = v(0);

    if (exact) {
        // weight(|S|) = |S|! (n - |S| - 1)! / n!
        std::vector<double> weight(static_cast<std::size_t>(std::max(n, 1)));
        for (int s = 0; s < n; ++s)
            weight[static_cast<std::size_t>(s)] =
                std::exp(std::lgamma(s + 1.0) + std::lgamma(static_cast<double>(n - s)) - std::lgamma(n + 1.0));
        std::vector<double> table(std::size_t{1} << n);
        for (std::uint64_t m = 0; m <= full; ++m) table[m] = v(m);
        for (int i = 0; i < n; ++i) {
            const std::uint64_t bit = 1ull << i;
            double acc = 0.0;
            for (std::uint64_t m = 0; m <= full; ++m) {
                if (m & bit) continue;
                acc += weight[static_cast<std::size_t>(std::popcount(m))] * (table[m | bit] - table[m]);
            }
            a.phi[static_cast<std::size_t>(i)] = acc;
        }
        return a;
    }

    a.n_permutations = n_permutations;
    std::mt19937_64 rng(seed ^ fnv1a(sample_id));
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int p = 0; p < n_permutations; ++p) {
        std::iota(order.begin(), order.end(), 0);
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(i + 1))]);
        std::uint64_t mask = 0;
        double prev = a.value_empty;
        for (int t : order) {
            mask |= 1ull << t;
            const double cur = v(mask);
            a.phi[static_cast<std::size_t>(t)] += cur - prev;
            prev = cur;
        }
    }
    for (auto& x : a.phi) x /= n_permutations;
    return a;
}

const char* to_string(TokenAttribute a) {
    switch (a) {
    case TokenAttribute::y: return "Y";
    case TokenAttribute::s: return "S";
    case TokenAttribute::other: return "other";
    }
    return "?";
}

std::map<std::string, double> attribute_summary(const TokenAttribution& attribution,
                                                std::span<const TokenAttribute> attributes) {
    if (attributes.size() != attribution.phi.size())
        throw ValidationError("attribute_summary: attributes must cover every token");
    const double len = static_cast<double>(attribution.phi.size());
    std::map<std::string, std::pair<double, int>> acc;
    for (std::size_t i = 0; i < attributes.size(); ++i) {
        auto& [sum, count] = acc[to_string(attributes[i])];
        sum += attribution.phi[i] / len;
        ++count;
    }
    std::map<std::string, double> out;
    for (const auto& [key, sc] : acc) out[key] = sc.first / sc.second;
    return out;
}

std::map<std::string, int> top_feature_counts(std::span<const TokenAttribution> attributions) {
    std::map<std::string, int> counts;
    for (const auto& a : attributions) {
        if (a.phi.empty()) continue;
        const auto best = static_cast<std::size_t>(std::max_element(a.phi.begin(), a.phi.end()) - a.phi.begin());
        const auto name = best < a.caption_tokens.size() ? a.caption_tokens[best] : "token" + std::to_string(best);
        ++counts[name];
    }
    return counts;
}

} // namespace ltc
