#include "ltc/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ltc/error.hpp"
#include "ltc/kernels.hpp"

using json = nlohmann::json;

namespace ltc {

const char* to_string(LensTarget t) { return t == LensTarget::predicted ? "predicted" : "true_class"; }

LensTarget lens_target_from_string(const std::string& s) {
    if (s == "predicted") return LensTarget::predicted;
    if (s == "true_class" || s == "true") return LensTarget::true_class;
    throw ValidationError("unknown lens target '" + s + "'");
}

std::vector<int> predicted_classes(std::span<const Prediction> predictions) {
    std::vector<int> out;
    out.reserve(predictions.size());
    for (const auto& p : predictions) out.push_back(p.predicted);
    return out;
}

std::vector<GroupedSample> evaluation_groups(const DatasetManifest& manifest, std::span<const Prediction> predictions) {
    const auto pred = predicted_classes(predictions);
    return partition_groups(manifest, pred, manifest.positive_pairs);
}

namespace {

// Keeps round(fraction * |G_N|) G_N samples (at least one when fraction > 0),
// chosen by a seeded shuffle and returned in dataset order.
std::vector<bool> subsample_gn(const std::vector<GroupedSample>& groups, double fraction, std::uint64_t seed) {
    std::vector<bool> keep(groups.size(), true);
    if (fraction >= 1.0) return keep;
    std::vector<std::size_t> gn;
    for (std::size_t i = 0; i < groups.size(); ++i)
        if (!groups[i].positive()) gn.push_back(i);
    for (auto i : gn) keep[i] = false;
    auto n_keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(gn.size())));
    if (fraction > 0.0 && !gn.empty()) n_keep = std::max<std::size_t>(n_keep, 1);
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n_keep; ++i) {
        const auto j = i + static_cast<std::size_t>(rng() % (gn.size() - i));
        std::swap(gn[i], gn[j]);
        keep[gn[i]] = true;
    }
    return keep;
}

ContributionMap subgroup_map(std::span<const ActivationRecord> records, const std::vector<std::size_t>& idx,
                             const std::vector<kernels::LensPair>& all_pairs, const TextBank& bank, int threads) {
    std::vector<ActivationRecord> subset;
    std::vector<kernels::LensPair> pairs;
    subset.reserve(idx.size());
    for (auto i : idx) {
        subset.push_back(records[i]);
        pairs.push_back(all_pairs[i]);
    }
    const auto maps = kernels::importance_maps(subset, pairs, bank, threads);
    return aggregate_importance(maps);
}

} // namespace

LocateResult locate(std::span<const ActivationRecord> records, const DatasetManifest& manifest,
                    const TextBank& class_bank, const TextBank* spurious_bank, const LocateOptions& o) {
    if (records.size() != manifest.samples.size())
        throw ValidationError("locate: store has " + std::to_string(records.size()) + " records but manifest has " +
                              std::to_string(manifest.samples.size()) + " samples");
    if (records.empty()) throw ValidationError("locate: empty dataset");
    if (!(o.gn_fraction > 0.0 && o.gn_fraction <= 1.0)) throw ValidationError("locate: gn_fraction must be in (0, 1]");
    if ((o.infer_spurious || o.spurious_task) && !spurious_bank)
        throw ValidationError("locate: spurious bank required for spurious inference or the spurious task");
    for (std::size_t i = 0; i < records.size(); ++i)
        if (records[i].sample_id != manifest.samples[i].sample_id)
            throw ValidationError("locate: record " + records[i].sample_id + " does not match manifest row " +
                                  manifest.samples[i].sample_id);

    LocateResult r;
    r.target = o.target;
    r.zero_shot = kernels::classify_all(records, class_bank, o.temperature, o.threads);

    DatasetManifest grouped = manifest;
    if (o.infer_spurious)
        for (std::size_t i = 0; i < records.size(); ++i)
            grouped.samples[i].spurious_index = predict_spurious(records[i].full_embedding, *spurious_bank);
    r.groups = partition_groups(grouped, predicted_classes(r.zero_shot), grouped.positive_pairs);

    std::vector<kernels::LensPair> pairs(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const int y = o.target == LensTarget::predicted ? r.zero_shot[i].predicted : r.groups[i].y_star;
        pairs[i] = {y, r.zero_shot[i].best_other(y)};
        if (pairs[i].second < 0) throw ValidationError("locate: class bank needs at least two classes");
    }

    const auto keep = subsample_gn(r.groups, o.gn_fraction, o.seed);
    std::vector<std::size_t> nw, nc;
    for (std::size_t i = 0; i < r.groups.size(); ++i) {
        switch (r.groups[i].subgroup) {
        case Subgroup::PC: ++r.counts.pc; break;
        case Subgroup::PW: ++r.counts.pw; break;
        case Subgroup::NC:
            ++r.counts.nc;
            if (keep[i]) nc.push_back(i);
            break;
        case Subgroup::NW:
            ++r.counts.nw;
            if (keep[i]) nw.push_back(i);
            break;
        case Subgroup::unknown: break;
        }
    }
    r.counts.nc_used = nc.size();
    r.counts.nw_used = nw.size();
    if (nw.empty() || nc.empty())
        throw EmptySubgroupError("locate: " + std::string(nw.empty() ? "G_NW" : "G_NC") +
                                 " is empty; check the positive pairs and the group labels (G_NW=" +
                                 std::to_string(nw.size()) + ", G_NC=" + std::to_string(nc.size()) + ")");

    r.v_nw = subgroup_map(records, nw, pairs, class_bank, o.threads);
    r.v_nc = subgroup_map(records, nc, pairs, class_bank, o.threads);
    r.pstar_nw = select_pstar(r.v_nw);
    r.pstar_nc = select_pstar(r.v_nc);
    r.gamma = gamma_threshold(r.pstar_nw, r.pstar_nc);
    r.states = locate_states(r.v_nw, r.v_nc, r.gamma);

    if (o.spurious_task) {
        // Classify the spurious attribute itself; the class-task gamma is reused.
        const auto sp = kernels::classify_all(records, *spurious_bank, o.temperature, o.threads);
        std::vector<std::size_t> correct;
        std::vector<kernels::LensPair> sp_pairs(records.size());
        for (std::size_t i = 0; i < records.size(); ++i) {
            const int s = manifest.samples[i].spurious_index;
            sp_pairs[i] = {s, sp[i].best_other(s)};
            if (sp[i].predicted == s) correct.push_back(i);
        }
        if (correct.empty()) throw EmptySubgroupError("locate: no sample has its spurious attribute classified correctly");
        if (sp_pairs.front().second < 0) throw ValidationError("locate: spurious bank needs at least two prompts");
        r.v_spurious = subgroup_map(records, correct, sp_pairs, *spurious_bank, o.threads);
        r.p_s_direct = locate_spurious_direct(*r.v_spurious, r.gamma);
    }

    if (o.top1) {
        r.states.p_s = top1(r.states.p_s);
        r.states.p_y = top1(r.states.p_y);
        r.states.s_scores.resize(r.states.p_s.size());
        r.states.y_scores.resize(r.states.p_y.size());
        if (r.p_s_direct) r.p_s_direct = top1(*r.p_s_direct);
    }
    return r;
}

CorrectionPlan make_plan(const HeadSet& p_s, const HeadSet& p_y, std::span<const ActivationRecord> mean_records,
                         const TextBank* concept_bank) {
    CorrectionPlan plan;
    plan.p_s = p_s;
    plan.p_y = p_y;
    if (!p_s.empty()) plan.mean_states = compute_mean_states(mean_records, p_s);
    if (concept_bank) plan.vectors = concept_pairs_from_bank(*concept_bank).unscoped;
    return plan;
}

// ---------------------------------------------------------------------------
// JSON

json to_json(const HeadSet& set) {
    json arr = json::array();
    for (const auto& p : set.positions) arr.push_back({p.layer, p.head});
    return arr;
}

HeadSet head_set_from_json(const json& j, HeadSetKind kind) {
    HeadSet s;
    s.kind = kind;
    try {
        for (const auto& e : j) {
            const auto v = e.get<std::vector<int>>();
            if (v.size() != 2) throw ValidationError("head position must be a [layer, head] pair");
            s.positions.push_back({v[0], v[1]});
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed head set: ") + e.what());
    }
    return s;
}

json to_json(const ContributionMap& m) {
    return {{"n_layers", m.n_layers}, {"n_heads", m.n_heads}, {"normalization", to_string(m.normalization)},
            {"values", m.values}};
}

ContributionMap contribution_map_from_json(const json& j) {
    try {
        ContributionMap m;
        m.n_layers = j.at("n_layers").get<int>();
        m.n_heads = j.at("n_heads").get<int>();
        m.values = j.at("values").get<std::vector<double>>();
        const auto norm = j.value("normalization", std::string("raw"));
        m.normalization = norm == "one_hot"                   ? MapNormalization::one_hot
                          : norm == "dataset_mean_normalized" ? MapNormalization::dataset_mean_normalized
                                                              : MapNormalization::raw;
        if (m.values.size() != static_cast<std::size_t>(m.n_layers) * m.n_heads)
            throw ValidationError("contribution map size disagrees with its dims");
        return m;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed contribution map: ") + e.what());
    }
}

json to_json(const LocateResult& r) {
    json j{{"p_s", to_json(r.p_s())},
           {"p_y", to_json(r.p_y())},
           {"p_s_contrastive", to_json(r.states.p_s)},
           {"gamma", r.gamma},
           {"s_scores", r.states.s_scores},
           {"y_scores", r.states.y_scores},
           {"pstar_nw", to_json(r.pstar_nw)},
           {"pstar_nc", to_json(r.pstar_nc)},
           {"v_nw", to_json(r.v_nw)},
           {"v_nc", to_json(r.v_nc)},
           {"lens_target", to_string(r.target)},
           {"subgroups",
            {{"G_PC", r.counts.pc},
             {"G_PW", r.counts.pw},
             {"G_NC", r.counts.nc},
             {"G_NW", r.counts.nw},
             {"G_NC_used", r.counts.nc_used},
             {"G_NW_used", r.counts.nw_used}}}};
    if (r.p_s_direct) j["p_s_direct"] = to_json(*r.p_s_direct);
    if (r.v_spurious) j["v_spurious"] = to_json(*r.v_spurious);
    return j;
}

HeadsFile heads_from_json(const json& j) {
    if (!j.is_object() || !j.contains("p_s") || !j.contains("p_y"))
        throw ValidationError("heads file must contain p_s and p_y");
    HeadsFile h;
    h.p_s = head_set_from_json(j.at("p_s"), HeadSetKind::p_s);
    h.p_y = head_set_from_json(j.at("p_y"), HeadSetKind::p_y);
    h.gamma = j.value("gamma", 0.0);
    return h;
}

json to_json(const Prediction& p) {
    return {{"sample_id", p.sample_id}, {"predicted", p.predicted}, {"margin", p.margin}, {"logits", p.logits}};
}

Prediction prediction_from_json(const json& j) {
    try {
        Prediction p;
        p.sample_id = j.at("sample_id").get<std::string>();
        p.predicted = j.at("predicted").get<int>();
        p.margin = j.value("margin", 0.0);
        p.logits = j.value("logits", std::vector<double>{});
        return p;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed prediction: ") + e.what());
    }
}

json to_json(const GroupMetrics& m) {
    json cells = json::array();
    json per_group = json::object();
    for (const auto& c : m.cells) {
        cells.push_back({{"class_index", c.class_index},
                         {"spurious_index", c.spurious_index},
                         {"size", c.size},
                         {"correct", c.correct},
                         {"accuracy", c.accuracy()}});
        per_group["y" + std::to_string(c.class_index) + "_s" + std::to_string(c.spurious_index)] = c.accuracy();
    }
    json j{{"average", m.average}, {"gap", m.gap}, {"two_split", m.two_split}, {"cells", cells},
           {"per_group_accuracy", per_group}, {"warnings", m.warnings}};
    j["worst_group"] = m.worst_group ? json(*m.worst_group) : json(nullptr);
    if (m.easy_accuracy) j["easy_accuracy"] = *m.easy_accuracy;
    return j;
}

} // namespace ltc
