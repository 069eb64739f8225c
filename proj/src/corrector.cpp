#include "ltc/corrector.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ltc/error.hpp"
#include "ltc/kernels.hpp"
#include "ltc/linalg.hpp"

namespace ltc {

int Prediction::best_other(int excluded) const {
    int best = -1;
    for (int c = 0; c < static_cast<int>(logits.size()); ++c) {
        if (c == excluded) continue;
        if (best < 0 || logits[static_cast<std::size_t>(c)] > logits[static_cast<std::size_t>(best)]) best = c;
    }
    return best;
}

std::vector<std::vector<float>> compute_mean_states(std::span<const ActivationRecord> records, const HeadSet& p_s) {
    if (records.empty()) throw ValidationError("compute_mean_states: empty record list");
    const auto& first = records.front();
    p_s.validate(first.n_layers, first.n_heads);
    std::vector<std::vector<float>> means;
    means.reserve(p_s.size());
    for (const auto& pos : p_s.positions) {
        std::vector<double> acc(static_cast<std::size_t>(first.dim), 0.0);
        for (const auto& r : records) {
            if (r.dim != first.dim || r.n_layers != first.n_layers || r.n_heads != first.n_heads)
                throw ValidationError("compute_mean_states: records have different dims");
            const auto st = r.head(pos);
            for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += st[k];
        }
        for (auto& v : acc) v /= static_cast<double>(records.size());
        means.push_back(linalg::to_float(acc));
    }
    return means;
}

namespace {

// Overwrites one head state and shifts full_embedding by the change, so
// untouched records keep bit-identical embeddings.
void replace_state(ActivationRecord& r, HeadPos pos, std::span<const double> next) {
    auto st = r.head(pos);
    for (std::size_t k = 0; k < st.size(); ++k) {
        const auto updated = static_cast<float>(next[k]);
        if (updated == st[k]) continue;
        r.full_embedding[k] = static_cast<float>(static_cast<double>(r.full_embedding[k]) + static_cast<double>(updated) -
                                                 static_cast<double>(st[k]));
        st[k] = updated;
    }
}

void check_position(const ActivationRecord& r, HeadPos p) {
    if (p.layer < 0 || p.layer >= r.n_layers || p.head < 0 || p.head >= r.n_heads)
        throw ValidationError("position " + to_string(p) + " outside model dims");
}

} // namespace

ActivationRecord mean_ablate(const ActivationRecord& record, const CorrectionPlan& plan) {
    if (plan.mean_states.size() != plan.p_s.size())
        throw ValidationError("mean_ablate: plan has " + std::to_string(plan.mean_states.size()) + " mean states for " +
                              std::to_string(plan.p_s.size()) + " positions");
    ActivationRecord out = record;
    for (std::size_t i = 0; i < plan.p_s.size(); ++i) {
        const auto pos = plan.p_s.positions[i];
        check_position(out, pos);
        if (plan.mean_states[i].size() != static_cast<std::size_t>(out.dim))
            throw ValidationError("mean_ablate: mean state dimension mismatch");
        replace_state(out, pos, linalg::to_double(plan.mean_states[i]));
    }
    return out;
}

DiscriminativeVectors build_discriminative_vectors(
    std::span<const std::pair<std::vector<float>, std::vector<float>>> pairs) {
    DiscriminativeVectors out;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& [a, b] = pairs[i];
        if (a.size() != b.size()) throw ValidationError("discriminative pair " + std::to_string(i) + ": dimension mismatch");
        std::vector<double> diff(a.size());
        for (std::size_t k = 0; k < a.size(); ++k) diff[k] = static_cast<double>(a[k]) - static_cast<double>(b[k]);
        const double n = linalg::norm(diff);
        if (!(n > 0.0) || !std::isfinite(n))
            throw ValidationError("discriminative pair " + std::to_string(i) + " is degenerate (zero difference)");
        for (auto& v : diff) v /= n;
        out.vectors.push_back(linalg::to_float(diff));
        out.source_labels.emplace_back("pair" + std::to_string(i) + ":pos", "pair" + std::to_string(i) + ":neg");
    }
    return out;
}

ActivationRecord knowledge_inject(const ActivationRecord& record, const HeadSet& p_y, const DiscriminativeVectors& vectors) {
    ActivationRecord out = record;
    for (const auto& u : vectors.vectors) {
        if (u.size() != static_cast<std::size_t>(out.dim)) throw ValidationError("knowledge_inject: vector dimension mismatch");
        const double uu = linalg::dot(u, u);
        if (!(uu > 0.0)) throw ValidationError("knowledge_inject: zero discriminative vector");
        for (const auto& pos : p_y.positions) {
            check_position(out, pos);
            const auto st = out.head(pos);
            const double coef = linalg::dot(st, u) / uu;
            std::vector<double> next(st.begin(), st.end());
            for (std::size_t k = 0; k < next.size(); ++k) next[k] += coef * u[k];
            replace_state(out, pos, next);
        }
    }
    return out;
}

ActivationRecord knowledge_inject(const ActivationRecord& record, const CorrectionPlan& plan) {
    return knowledge_inject(record, plan.p_y, plan.vectors);
}

namespace {

std::vector<double> cosine_logits(std::span<const float> embedding, const TextBank& bank) {
    if (bank.empty()) throw ValidationError("classify: empty text bank");
    if (embedding.size() != static_cast<std::size_t>(bank.dim()))
        throw ValidationError("classify: embedding dimension " + std::to_string(embedding.size()) + " vs bank " +
                              std::to_string(bank.dim()));
    const double en = linalg::norm(embedding);
    if (!(en > 0.0)) throw ValidationError("classify: zero-norm embedding");
    if (!std::isfinite(en)) throw NumericError("classify: non-finite embedding");
    std::vector<double> logits(bank.size());
    for (std::size_t c = 0; c < bank.size(); ++c) {
        const auto t = bank.at(static_cast<int>(c));
        logits[c] = linalg::dot(embedding, t) / (en * linalg::norm(t));
    }
    return logits;
}

int first_argmax(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

} // namespace

Prediction classify(std::span<const float> embedding, const TextBank& class_bank, double temperature,
                    std::string sample_id) {
    if (!(temperature > 0.0)) throw ValidationError("classify: temperature must be positive");
    Prediction p;
    p.sample_id = std::move(sample_id);
    p.logits = cosine_logits(embedding, class_bank);
    p.predicted = first_argmax(p.logits);
    const double mx = p.logits[static_cast<std::size_t>(p.predicted)];
    double z = 0.0;
    for (double l : p.logits) z += std::exp((l - mx) / temperature);
    const int runner = p.best_other(p.predicted);
    const double p_top = 1.0 / z;
    const double p_run = runner < 0 ? 0.0 : std::exp((p.logits[static_cast<std::size_t>(runner)] - mx) / temperature) / z;
    p.margin = p_top - p_run;
    return p;
}

int predict_spurious(std::span<const float> embedding, const TextBank& spurious_bank) {
    return first_argmax(cosine_logits(embedding, spurious_bank));
}

std::map<int, int> build_confusion_map(std::span<const Prediction> predictions, const DatasetManifest& manifest) {
    if (predictions.size() != manifest.samples.size())
        throw ValidationError("build_confusion_map: predictions and manifest differ in length");
    const bool has_easy = std::any_of(manifest.samples.begin(), manifest.samples.end(),
                                      [](const ManifestSample& s) { return s.split == Split::easy; });
    std::map<int, std::map<int, int>> counts;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto& s = manifest.samples[i];
        if (has_easy && s.split != Split::easy) continue;
        if (predictions[i].predicted != s.class_index) ++counts[s.class_index][predictions[i].predicted];
    }
    std::map<int, int> out;
    for (const auto& [target, wrong] : counts) {
        // std::map iterates keys ascending, so strict > keeps the lowest index on ties.
        int best = -1, best_count = 0;
        for (const auto& [cls, n] : wrong)
            if (n > best_count) {
                best = cls;
                best_count = n;
            }
        if (best >= 0) out[target] = best;
    }
    return out;
}

ConceptPairs concept_pairs_from_bank(const TextBank& bank, const TextBank* class_bank) {
    struct Pending {
        std::string key;
        const std::vector<float>* pos = nullptr;
        const std::vector<float>* neg = nullptr;
    };
    std::vector<Pending> pending;
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const auto& label = bank.labels[i];
        const auto colon = label.rfind(':');
        if (colon == std::string::npos) throw ValidationError("concept label '" + label + "' lacks :pos/:neg suffix");
        const auto key = label.substr(0, colon), suffix = label.substr(colon + 1);
        if (suffix != "pos" && suffix != "neg")
            throw ValidationError("concept label '" + label + "' must end with :pos or :neg");
        auto it = std::find_if(pending.begin(), pending.end(), [&](const Pending& p) { return p.key == key; });
        if (it == pending.end()) {
            pending.push_back({key});
            it = pending.end() - 1;
        }
        (suffix == "pos" ? it->pos : it->neg) = &bank.vectors[i];
    }
    ConceptPairs out;
    for (const auto& p : pending) {
        if (!p.pos || !p.neg) throw ValidationError("concept '" + p.key + "' is missing its :pos or :neg half");
        const std::pair<std::vector<float>, std::vector<float>> pair{*p.pos, *p.neg};
        auto dv = build_discriminative_vectors(std::span(&pair, 1));
        dv.source_labels.front() = {p.key + ":pos", p.key + ":neg"};

        const auto slash = p.key.find('/');
        DiscriminativeVectors* target = &out.unscoped;
        if (slash != std::string::npos) {
            const auto scope = p.key.substr(0, slash);
            int cls = class_bank ? class_bank->index_of(scope) : -1;
            if (cls < 0) {
                try {
                    std::size_t used = 0;
                    cls = std::stoi(scope, &used);
                    if (used != scope.size()) cls = -1;
                } catch (const std::exception&) {
                    cls = -1;
                }
            }
            if (cls < 0) throw ValidationError("concept scope '" + scope + "' is neither a class label nor an index");
            target = &out.by_class[cls];
        }
        target->vectors.push_back(std::move(dv.vectors.front()));
        target->source_labels.push_back(std::move(dv.source_labels.front()));
    }
    return out;
}

std::optional<DiscriminativeVectors> select_vectors(const ConceptPairs& pairs, const std::map<int, int>& confusion,
                                                    int pseudo_label) {
    if (const auto it = pairs.by_class.find(pseudo_label); it != pairs.by_class.end()) return it->second;
    for (const auto& [target, counter] : confusion)
        if (counter == pseudo_label)
            if (const auto it = pairs.by_class.find(target); it != pairs.by_class.end()) return it->second;
    return std::nullopt;
}

const char* to_string(LtcMode m) {
    switch (m) {
    case LtcMode::zero_shot: return "zero_shot";
    case LtcMode::ma_only: return "ma";
    case LtcMode::ki_only: return "ki";
    case LtcMode::full: return "full";
    case LtcMode::random_control: return "random";
    }
    return "?";
}

LtcMode ltc_mode_from_string(const std::string& s) {
    if (s == "zero_shot" || s == "zs" || s == "none") return LtcMode::zero_shot;
    if (s == "ma" || s == "ma_only") return LtcMode::ma_only;
    if (s == "ki" || s == "ki_only") return LtcMode::ki_only;
    if (s == "full") return LtcMode::full;
    if (s == "random" || s == "random_control") return LtcMode::random_control;
    throw ValidationError("unknown correction mode '" + s + "'");
}

CorrectionPlan randomize_plan(const CorrectionPlan& plan, int n_layers, int n_heads, std::uint64_t seed) {
    const auto total = static_cast<std::size_t>(n_layers) * n_heads;
    const auto need = plan.p_s.size() + plan.p_y.size();
    if (need > total) throw ValidationError("random control: more positions requested than heads exist");
    std::vector<int> all(total);
    for (std::size_t i = 0; i < total; ++i) all[i] = static_cast<int>(i);
    std::mt19937_64 rng(seed);
    // Partial Fisher-Yates with explicit modulo draws keeps the stream portable.
    for (std::size_t i = 0; i < need; ++i) {
        const auto j = i + static_cast<std::size_t>(rng() % (total - i));
        std::swap(all[i], all[j]);
    }
    CorrectionPlan out;
    out.vectors = plan.vectors;
    out.p_s.kind = HeadSetKind::p_s;
    out.p_y.kind = HeadSetKind::p_y;
    for (std::size_t i = 0; i < need; ++i) {
        const HeadPos p{all[i] / n_heads, all[i] % n_heads};
        (i < plan.p_s.size() ? out.p_s : out.p_y).positions.push_back(p);
    }
    return out;
}

ActivationRecord correct_record(const ActivationRecord& record, const CorrectionPlan& plan, LtcMode mode,
                                const DiscriminativeVectors* vectors_override) {
    const bool ma = mode == LtcMode::ma_only || mode == LtcMode::full || mode == LtcMode::random_control;
    const bool ki = mode == LtcMode::ki_only || mode == LtcMode::full || mode == LtcMode::random_control;
    if (!ma && !ki) return record;
    ActivationRecord out = ma ? mean_ablate(record, plan) : record;
    if (ki) out = knowledge_inject(out, plan.p_y, vectors_override ? *vectors_override : plan.vectors);
    return out;
}

std::vector<Prediction> apply_ltc(std::span<const ActivationRecord> records, const CorrectionPlan& plan,
                                  const TextBank& class_bank, const LtcOptions& options) {
    if (records.empty()) return {};
    const auto& first = records.front();
    CorrectionPlan effective = options.mode == LtcMode::random_control
                                   ? randomize_plan(plan, first.n_layers, first.n_heads, options.seed)
                                   : plan;
    effective.p_s.validate(first.n_layers, first.n_heads);
    effective.p_y.validate(first.n_layers, first.n_heads);
    const bool needs_means = options.mode == LtcMode::ma_only || options.mode == LtcMode::full ||
                             options.mode == LtcMode::random_control;
    if (needs_means) {
        if (options.zero_ablate) {
            effective.mean_states.assign(effective.p_s.size(), std::vector<float>(static_cast<std::size_t>(first.dim), 0.0f));
        } else if (effective.mean_states.size() != effective.p_s.size() || options.mode == LtcMode::random_control) {
            effective.mean_states = compute_mean_states(records, effective.p_s);
        }
    }
    return kernels::correct_and_classify(records, effective, class_bank, options);
}

} // namespace ltc
