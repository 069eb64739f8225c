#pragma once

// Per-sample batch kernels. Each has a serial reference and an OpenMP
// version; both produce bit-identical results because every output slot is
// computed by exactly one iteration and no reduction crosses samples.

#include <span>
#include <utility>
#include <vector>

#include "ltc/corrector.hpp"
#include "ltc/locator.hpp"
#include "ltc/tensorstore.hpp"
#include "ltc/vit.hpp"

namespace ltc::kernels {

/// (target class, contrast class) per record for importance maps.
using LensPair = std::pair<int, int>;

std::vector<ContributionMap> importance_maps_serial(std::span<const ActivationRecord> records,
                                                    std::span<const LensPair> pairs, const TextBank& bank);
std::vector<ContributionMap> importance_maps_parallel(std::span<const ActivationRecord> records,
                                                      std::span<const LensPair> pairs, const TextBank& bank,
                                                      int threads);
std::vector<ContributionMap> importance_maps(std::span<const ActivationRecord> records,
                                             std::span<const LensPair> pairs, const TextBank& bank, int threads);

std::vector<Prediction> classify_all_serial(std::span<const ActivationRecord> records, const TextBank& bank,
                                            double temperature);
std::vector<Prediction> classify_all_parallel(std::span<const ActivationRecord> records, const TextBank& bank,
                                              double temperature, int threads);
std::vector<Prediction> classify_all(std::span<const ActivationRecord> records, const TextBank& bank,
                                     double temperature, int threads);

std::vector<ActivationRecord> decompose_all_serial(const ViTWeights& weights, const PatchSet& patches,
                                                   bool with_tokens);
std::vector<ActivationRecord> decompose_all_parallel(const ViTWeights& weights, const PatchSet& patches,
                                                     bool with_tokens, int threads);
std::vector<ActivationRecord> decompose_all(const ViTWeights& weights, const PatchSet& patches, bool with_tokens,
                                            int threads);

/// Corrects and classifies every record under a finished plan (means already
/// filled in, random positions already drawn). Thread count from options.
std::vector<Prediction> correct_and_classify_serial(std::span<const ActivationRecord> records,
                                                    const CorrectionPlan& plan, const TextBank& bank,
                                                    const LtcOptions& options);
std::vector<Prediction> correct_and_classify_parallel(std::span<const ActivationRecord> records,
                                                      const CorrectionPlan& plan, const TextBank& bank,
                                                      const LtcOptions& options);
std::vector<Prediction> correct_and_classify(std::span<const ActivationRecord> records, const CorrectionPlan& plan,
                                             const TextBank& bank, const LtcOptions& options);

} // namespace ltc::kernels
