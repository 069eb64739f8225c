#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ltc/tensorstore.hpp"
#include "ltc/types.hpp"

namespace ltc {

/// Unit-norm class-discriminative directions u_i, applied in list order.
struct DiscriminativeVectors {
    std::vector<std::vector<float>> vectors;
    std::vector<std::pair<std::string, std::string>> source_labels;

    bool empty() const { return vectors.empty(); }
};

/// Everything Locate-Then-Correct needs at inference time.
struct CorrectionPlan {
    HeadSet p_s;
    HeadSet p_y;
    std::vector<std::vector<float>> mean_states;  // one row per p_s position
    DiscriminativeVectors vectors;
};

struct Prediction {
    std::string sample_id;
    std::vector<double> logits;
    int predicted = 0;
    double margin = 0.0;  // softmax(logits / t)[top1] - [top2]

    /// Highest-logit class other than `excluded` (lowest index on ties), -1 if none.
    int best_other(int excluded) const;
};

/// Mean of the state at each p_s position over `records` (deterministic order).
std::vector<std::vector<float>> compute_mean_states(std::span<const ActivationRecord> records, const HeadSet& p_s);

/// Replaces p_s states with the plan's means and updates full_embedding by the delta.
ActivationRecord mean_ablate(const ActivationRecord& record, const CorrectionPlan& plan);

/// u_i = (a_i - b_i) / ||a_i - b_i||. Throws ValidationError on a degenerate pair.
DiscriminativeVectors build_discriminative_vectors(std::span<const std::pair<std::vector<float>, std::vector<float>>> pairs);

/// For each u in order and each p_y state z: z <- z + u <z,u>/<u,u>.
ActivationRecord knowledge_inject(const ActivationRecord& record, const CorrectionPlan& plan);
ActivationRecord knowledge_inject(const ActivationRecord& record, const HeadSet& p_y, const DiscriminativeVectors& vectors);

/// Zero-shot prediction: cosine logits, argmax (lowest index on ties), softmax margin.
Prediction classify(std::span<const float> embedding, const TextBank& class_bank, double temperature = 1.0,
                    std::string sample_id = {});

/// Index of the spurious prompt with highest cosine similarity.
int predict_spurious(std::span<const float> embedding, const TextBank& spurious_bank);

/// Target class -> most frequent wrong prediction (lowest index on ties).
/// Uses the `easy` split when the manifest has one, otherwise every sample.
std::map<int, int> build_confusion_map(std::span<const Prediction> predictions, const DatasetManifest& manifest);

/// Concept-bank pairs grouped by scope. Labels look like `name:pos` / `name:neg`
/// (binary tasks) or `<class>/name:pos` for multi-class scoped pairs.
struct ConceptPairs {
    DiscriminativeVectors unscoped;
    std::map<int, DiscriminativeVectors> by_class;
};

ConceptPairs concept_pairs_from_bank(const TextBank& concept_bank, const TextBank* class_bank = nullptr);

/// Picks discriminative vectors for a pseudo-label via the confusion map: the
/// scope whose key or mapped counter-class equals the pseudo-label. nullopt
/// when the pseudo-label misses the map.
std::optional<DiscriminativeVectors> select_vectors(const ConceptPairs& pairs, const std::map<int, int>& confusion,
                                                    int pseudo_label);

enum class LtcMode { zero_shot, ma_only, ki_only, full, random_control };

const char* to_string(LtcMode m);
LtcMode ltc_mode_from_string(const std::string& s);

struct LtcOptions {
    LtcMode mode = LtcMode::full;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    bool zero_ablate = false;
    int threads = 1;
    /// Multi-class KI: per-sample vector selection from zero-shot pseudo-labels.
    const ConceptPairs* scoped_pairs = nullptr;
    const std::map<int, int>* confusion = nullptr;
};

/// Draws |p_s| + |p_y| distinct uniformly random positions (seeded); the first
/// |p_s| become the ablation set and the rest the injection set.
CorrectionPlan randomize_plan(const CorrectionPlan& plan, int n_layers, int n_heads, std::uint64_t seed);

/// Corrects one record according to `mode` (MA then KI).
ActivationRecord correct_record(const ActivationRecord& record, const CorrectionPlan& plan, LtcMode mode,
                                const DiscriminativeVectors* vectors_override = nullptr);

/// Full Locate-Then-Correct inference over a dataset. Mean states are taken
/// from the plan when present, otherwise computed over `records`.
std::vector<Prediction> apply_ltc(std::span<const ActivationRecord> records, const CorrectionPlan& plan,
                                  const TextBank& class_bank, const LtcOptions& options);

} // namespace ltc
