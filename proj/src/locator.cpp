#include "ltc/locator.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "ltc/error.hpp"
#include "ltc/linalg.hpp"

namespace ltc {

const char* to_string(MapNormalization n) {
    switch (n) {
    case MapNormalization::raw: return "raw";
    case MapNormalization::one_hot: return "one_hot";
    case MapNormalization::dataset_mean_normalized: return "dataset_mean_normalized";
    }
    return "?";
}

const char* to_string(Subgroup g) {
    switch (g) {
    case Subgroup::PC: return "G_PC";
    case Subgroup::PW: return "G_PW";
    case Subgroup::NC: return "G_NC";
    case Subgroup::NW: return "G_NW";
    case Subgroup::unknown: return "unknown";
    }
    return "?";
}

ContributionMap ContributionMap::zeros(int layers, int heads, MapNormalization n) {
    return {layers, heads, std::vector<double>(static_cast<std::size_t>(layers) * heads, 0.0), n};
}

HeadPos ContributionMap::argmax() const {
    if (values.empty()) throw ValidationError("argmax of an empty contribution map");
    // max_element returns the first maximum, and row-major order is lexicographic.
    const auto it = std::max_element(values.begin(), values.end());
    const auto idx = static_cast<int>(it - values.begin());
    return {idx / n_heads, idx % n_heads};
}

double ContributionMap::sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

double logit_lens(std::span<const float> state, std::span<const float> text_embedding) {
    return linalg::dot(state, text_embedding);
}

ContributionMap logit_difference_map(const ActivationRecord& record, std::span<const float> text_y,
                                     std::span<const float> text_ybar) {
    if (text_y.size() != static_cast<std::size_t>(record.dim) || text_ybar.size() != static_cast<std::size_t>(record.dim))
        throw ValidationError("importance map: text embedding dimension does not match record");
    // LL(y) - LL(ybar) = <state, t_y - t_ybar>
    std::vector<double> diff(text_y.size());
    for (std::size_t k = 0; k < diff.size(); ++k)
        diff[k] = static_cast<double>(text_y[k]) - static_cast<double>(text_ybar[k]);
    auto map = ContributionMap::zeros(record.n_layers, record.n_heads);
    for (int l = 0; l < record.n_layers; ++l)
        for (int h = 0; h < record.n_heads; ++h) map.at(l, h) = linalg::dot(record.head(l, h), diff);
    return map;
}

ContributionMap importance_map(const ActivationRecord& record, std::span<const float> text_y,
                               std::span<const float> text_ybar) {
    const auto raw = logit_difference_map(record, text_y, text_ybar);
    auto one_hot = ContributionMap::zeros(record.n_layers, record.n_heads, MapNormalization::one_hot);
    const auto best = raw.argmax();
    one_hot.at(best.layer, best.head) = 1.0;
    return one_hot;
}

ContributionMap aggregate_importance(std::span<const ContributionMap> maps) {
    if (maps.empty()) throw ValidationError("aggregate_importance: empty map list");
    auto out = ContributionMap::zeros(maps.front().n_layers, maps.front().n_heads, MapNormalization::dataset_mean_normalized);
    for (const auto& m : maps) {
        if (m.n_layers != out.n_layers || m.n_heads != out.n_heads)
            throw ValidationError("aggregate_importance: maps have different dims");
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += m.values[i];
    }
    for (auto& v : out.values) v /= static_cast<double>(maps.size());
    const double total = out.sum();
    if (total <= 0.0) throw ValidationError("aggregate_importance: maps carry no mass");
    for (auto& v : out.values) v /= total;
    return out;
}

std::vector<GroupedSample> partition_groups(const DatasetManifest& manifest, std::span<const int> predictions,
                                            const std::map<int, int>& positive_pairs) {
    if (predictions.size() != manifest.samples.size())
        throw ValidationError("partition_groups: " + std::to_string(predictions.size()) + " predictions for " +
                              std::to_string(manifest.samples.size()) + " samples");
    std::vector<GroupedSample> out;
    out.reserve(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto& s = manifest.samples[i];
        const auto it = positive_pairs.find(s.spurious_index);
        if (it == positive_pairs.end())
            throw ValidationError("partition_groups: spurious index " + std::to_string(s.spurious_index) +
                                  " has no positive pair");
        GroupedSample g;
        g.sample_id = s.sample_id;
        g.y_star = s.class_index;
        g.s = s.spurious_index;
        g.a_sy = it->second == s.class_index ? 1 : -1;
        if (predictions[i] < 0) {
            g.correctness = Correctness::unknown;
            g.subgroup = Subgroup::unknown;
        } else {
            g.correctness = predictions[i] == s.class_index ? Correctness::correct : Correctness::wrong;
            const bool c = g.correctness == Correctness::correct;
            g.subgroup = g.positive() ? (c ? Subgroup::PC : Subgroup::PW) : (c ? Subgroup::NC : Subgroup::NW);
        }
        out.push_back(std::move(g));
    }
    return out;
}

namespace {

struct Scored {
    HeadPos pos;
    double score;
};

// Descending score, ties to the smaller (layer, head).
void rank(std::vector<Scored>& v) {
    std::stable_sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.pos < b.pos;
    });
}

HeadSet to_set(const std::vector<Scored>& v, HeadSetKind kind, std::vector<double>* scores = nullptr) {
    HeadSet s;
    s.kind = kind;
    for (const auto& x : v) {
        s.positions.push_back(x.pos);
        if (scores) scores->push_back(x.score);
    }
    return s;
}

void check_same_dims(const ContributionMap& a, const ContributionMap& b) {
    if (a.n_layers != b.n_layers || a.n_heads != b.n_heads)
        throw ValidationError("contribution maps have different dims");
}

} // namespace

HeadSet select_pstar(const ContributionMap& aggregated) {
    std::vector<Scored> v;
    for (int l = 0; l < aggregated.n_layers; ++l)
        for (int h = 0; h < aggregated.n_heads; ++h)
            if (aggregated.at(l, h) > 0.0) v.push_back({{l, h}, aggregated.at(l, h)});
    rank(v);
    return to_set(v, HeadSetKind::p_star);
}

double gamma_threshold(const HeadSet& pstar_nw, const HeadSet& pstar_nc) {
    std::set<HeadPos> u(pstar_nw.positions.begin(), pstar_nw.positions.end());
    u.insert(pstar_nc.positions.begin(), pstar_nc.positions.end());
    if (u.empty()) throw ValidationError("gamma threshold undefined: both P* sets are empty");
    return 1.0 / static_cast<double>(u.size());
}

LocatedStates locate_states(const ContributionMap& v_nw, const ContributionMap& v_nc, double gamma) {
    if (!(gamma > 0.0)) throw ValidationError("locate_states: gamma must be positive");
    check_same_dims(v_nw, v_nc);
    std::vector<Scored> s, y;
    for (int l = 0; l < v_nw.n_layers; ++l)
        for (int h = 0; h < v_nw.n_heads; ++h) {
            const double d = v_nw.at(l, h) - v_nc.at(l, h);
            if (d > gamma) s.push_back({{l, h}, d});
            if (-d > gamma) y.push_back({{l, h}, -d});
        }
    rank(s);
    rank(y);
    LocatedStates out;
    out.p_s = to_set(s, HeadSetKind::p_s, &out.s_scores);
    out.p_y = to_set(y, HeadSetKind::p_y, &out.y_scores);
    return out;
}

HeadSet locate_spurious_direct(const ContributionMap& v_c, double gamma) {
    if (!(gamma > 0.0)) throw ValidationError("locate_spurious_direct: gamma must be positive");
    std::vector<Scored> s;
    for (int l = 0; l < v_c.n_layers; ++l)
        for (int h = 0; h < v_c.n_heads; ++h)
            if (v_c.at(l, h) > gamma) s.push_back({{l, h}, v_c.at(l, h)});
    rank(s);
    return to_set(s, HeadSetKind::p_s);
}

HeadSet top1(const HeadSet& set) {
    HeadSet out;
    out.kind = set.kind;
    if (!set.empty()) out.positions.push_back(set.positions.front());
    return out;
}

} // namespace ltc
