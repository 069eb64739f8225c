#pragma once

// Locate and correct over whole datasets, plus the JSON forms of their results.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltc/corrector.hpp"
#include "ltc/evaluator.hpp"
#include "ltc/locator.hpp"
#include "ltc/tensorstore.hpp"

namespace ltc {

/// Class that per-sample importance maps are read toward. `predicted` uses
/// the zero-shot prediction and contrasts it with the runner-up; `true_class`
/// uses the label and contrasts it with the best other class.
enum class LensTarget { predicted, true_class };

const char* to_string(LensTarget t);
LensTarget lens_target_from_string(const std::string& s);

struct LocateOptions {
    LensTarget target = LensTarget::predicted;
    bool top1 = false;
    double gn_fraction = 1.0;  // share of G_N samples used for locating
    std::uint64_t seed = 0;    // drives G_N subsampling
    bool infer_spurious = false;  // replace s with the spurious-bank prediction
    bool spurious_task = false;   // also locate Z_S directly on the spurious task
    double temperature = 1.0;
    int threads = 1;
};

struct SubgroupCounts {
    std::size_t pc = 0, pw = 0, nc = 0, nw = 0;
    std::size_t nc_used = 0, nw_used = 0;
};

struct LocateResult {
    std::vector<Prediction> zero_shot;
    std::vector<GroupedSample> groups;
    SubgroupCounts counts;
    ContributionMap v_nw, v_nc;
    HeadSet pstar_nw, pstar_nc;
    double gamma = 0.0;
    LocatedStates states;
    std::optional<ContributionMap> v_spurious;  // spurious-task map over correct samples
    std::optional<HeadSet> p_s_direct;
    LensTarget target = LensTarget::predicted;

    /// p_s used for correction: the direct set when the spurious task ran.
    const HeadSet& p_s() const { return p_s_direct ? *p_s_direct : states.p_s; }
    const HeadSet& p_y() const { return states.p_y; }
};

/// Records and manifest must be aligned (same sample order).
LocateResult locate(std::span<const ActivationRecord> records, const DatasetManifest& manifest,
                    const TextBank& class_bank, const TextBank* spurious_bank, const LocateOptions& options);

/// Plan with means over `mean_records` and unscoped concept vectors.
CorrectionPlan make_plan(const HeadSet& p_s, const HeadSet& p_y, std::span<const ActivationRecord> mean_records,
                         const TextBank* concept_bank);

std::vector<int> predicted_classes(std::span<const Prediction> predictions);

/// Groups for evaluation: true labels, predictions from `predictions`.
std::vector<GroupedSample> evaluation_groups(const DatasetManifest& manifest, std::span<const Prediction> predictions);

nlohmann::json to_json(const HeadSet& set);
HeadSet head_set_from_json(const nlohmann::json& j, HeadSetKind kind);
nlohmann::json to_json(const ContributionMap& map);
ContributionMap contribution_map_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LocateResult& result);

/// p_s / p_y from a heads.json document (the correction sets).
struct HeadsFile {
    HeadSet p_s;
    HeadSet p_y;
    double gamma = 0.0;
};
HeadsFile heads_from_json(const nlohmann::json& j);

nlohmann::json to_json(const Prediction& p);
Prediction prediction_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GroupMetrics& m);

} // namespace ltc
