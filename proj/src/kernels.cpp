#include "ltc/kernels.hpp"

#include <exception>
#include <omp.h>

#include "ltc/error.hpp"

namespace ltc::kernels {

namespace {

// Runs body(i) for i in [0, n) on `threads` OpenMP threads. Exceptions cannot
// cross the parallel region, so they are parked per index and the one from
// the lowest index is rethrown, matching what the serial loop would raise.
template <typename Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
    std::vector<std::exception_ptr> errors(n);
    const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (long long i = 0; i < count; ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

ContributionMap one_map(const ActivationRecord& r, LensPair p, const TextBank& bank) {
    if (p.first < 0 || p.first >= static_cast<int>(bank.size()) || p.second < 0 ||
        p.second >= static_cast<int>(bank.size()))
        throw ValidationError("importance map for " + r.sample_id + ": class index outside bank");
    return importance_map(r, bank.at(p.first), bank.at(p.second));
}

void check_pairs(std::span<const ActivationRecord> records, std::span<const LensPair> pairs) {
    if (records.size() != pairs.size()) throw ValidationError("importance maps: records and class pairs differ in length");
}

ActivationRecord without_tokens(const ActivationRecord& r) {
    ActivationRecord out;
    out.sample_id = r.sample_id;
    out.n_layers = r.n_layers;
    out.n_heads = r.n_heads;
    out.dim = r.dim;
    out.contributions = r.contributions;
    out.residual_base = r.residual_base;
    out.full_embedding = r.full_embedding;
    return out;
}

Prediction correct_one(const ActivationRecord& r, const CorrectionPlan& plan, const TextBank& bank,
                       const LtcOptions& o) {
    if (o.mode == LtcMode::zero_shot) return classify(r.full_embedding, bank, o.temperature, r.sample_id);
    LtcMode mode = o.mode;
    std::optional<DiscriminativeVectors> selected;
    if (o.scoped_pairs && o.confusion && mode != LtcMode::ma_only) {
        const int pseudo = classify(r.full_embedding, bank, o.temperature).predicted;
        selected = select_vectors(*o.scoped_pairs, *o.confusion, pseudo);
        if (!selected) mode = mode == LtcMode::ki_only ? LtcMode::zero_shot : LtcMode::ma_only;
    }
    const auto corrected = correct_record(without_tokens(r), plan, mode, selected ? &*selected : nullptr);
    return classify(corrected.full_embedding, bank, o.temperature, r.sample_id);
}

} // namespace

std::vector<ContributionMap> importance_maps_serial(std::span<const ActivationRecord> records,
                                                    std::span<const LensPair> pairs, const TextBank& bank) {
    check_pairs(records, pairs);
    std::vector<ContributionMap> out;
    out.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) out.push_back(one_map(records[i], pairs[i], bank));
    return out;
}

std::vector<ContributionMap> importance_maps_parallel(std::span<const ActivationRecord> records,
                                                      std::span<const LensPair> pairs, const TextBank& bank,
                                                      int threads) {
    check_pairs(records, pairs);
    std::vector<ContributionMap> out(records.size());
    parallel_for(records.size(), threads, [&](std::size_t i) { out[i] = one_map(records[i], pairs[i], bank); });
    return out;
}

std::vector<ContributionMap> importance_maps(std::span<const ActivationRecord> records,
                                             std::span<const LensPair> pairs, const TextBank& bank, int threads) {
    return threads > 1 ? importance_maps_parallel(records, pairs, bank, threads)
                       : importance_maps_serial(records, pairs, bank);
}

std::vector<Prediction> classify_all_serial(std::span<const ActivationRecord> records, const TextBank& bank,
                                            double temperature) {
    std::vector<Prediction> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(classify(r.full_embedding, bank, temperature, r.sample_id));
    return out;
}

std::vector<Prediction> classify_all_parallel(std::span<const ActivationRecord> records, const TextBank& bank,
                                              double temperature, int threads) {
    std::vector<Prediction> out(records.size());
    parallel_for(records.size(), threads, [&](std::size_t i) {
        out[i] = classify(records[i].full_embedding, bank, temperature, records[i].sample_id);
    });
    return out;
}

std::vector<Prediction> classify_all(std::span<const ActivationRecord> records, const TextBank& bank,
                                     double temperature, int threads) {
    return threads > 1 ? classify_all_parallel(records, bank, temperature, threads)
                       : classify_all_serial(records, bank, temperature);
}

std::vector<ActivationRecord> decompose_all_serial(const ViTWeights& weights, const PatchSet& patches,
                                                   bool with_tokens) {
    std::vector<ActivationRecord> out;
    out.reserve(patches.size());
    for (std::size_t i = 0; i < patches.size(); ++i)
        out.push_back(forward_decomposed(weights, patches.sample(i), patches.n_patches, patches.sample_ids[i],
                                         with_tokens)
                          .record);
    return out;
}

std::vector<ActivationRecord> decompose_all_parallel(const ViTWeights& weights, const PatchSet& patches,
                                                     bool with_tokens, int threads) {
    std::vector<ActivationRecord> out(patches.size());
    parallel_for(patches.size(), threads, [&](std::size_t i) {
        out[i] = forward_decomposed(weights, patches.sample(i), patches.n_patches, patches.sample_ids[i], with_tokens)
                     .record;
    });
    return out;
}

std::vector<ActivationRecord> decompose_all(const ViTWeights& weights, const PatchSet& patches, bool with_tokens,
                                            int threads) {
    return threads > 1 ? decompose_all_parallel(weights, patches, with_tokens, threads)
                       : decompose_all_serial(weights, patches, with_tokens);
}

std::vector<Prediction> correct_and_classify_serial(std::span<const ActivationRecord> records,
                                                    const CorrectionPlan& plan, const TextBank& bank,
                                                    const LtcOptions& options) {
    std::vector<Prediction> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(correct_one(r, plan, bank, options));
    return out;
}

std::vector<Prediction> correct_and_classify_parallel(std::span<const ActivationRecord> records,
                                                      const CorrectionPlan& plan, const TextBank& bank,
                                                      const LtcOptions& options) {
    std::vector<Prediction> out(records.size());
    parallel_for(records.size(), options.threads,
                 [&](std::size_t i) { out[i] = correct_one(records[i], plan, bank, options); });
    return out;
}

std::vector<Prediction> correct_and_classify(std::span<const ActivationRecord> records, const CorrectionPlan& plan,
                                             const TextBank& bank, const LtcOptions& options) {
    return options.threads > 1 ? correct_and_classify_parallel(records, plan, bank, options)
                               : correct_and_classify_serial(records, plan, bank, options);
}

} // namespace ltc::kernels
