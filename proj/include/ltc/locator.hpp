#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ltc/tensorstore.hpp"
#include "ltc/types.hpp"

namespace ltc {

enum class MapNormalization { raw, one_hot, dataset_mean_normalized };

const char* to_string(MapNormalization n);

/// L x H grid of per-head scores.
struct ContributionMap {
    int n_layers = 0;
    int n_heads = 0;
    std::vector<double> values;
    MapNormalization normalization = MapNormalization::raw;

    static ContributionMap zeros(int layers, int heads, MapNormalization n = MapNormalization::raw);
    double at(int layer, int head) const { return values[static_cast<std::size_t>(layer) * n_heads + head]; }
    double& at(int layer, int head) { return values[static_cast<std::size_t>(layer) * n_heads + head]; }
    double at(HeadPos p) const { return at(p.layer, p.head); }
    /// First position (row-major) holding the maximum value.
    HeadPos argmax() const;
    double sum() const;
    bool operator==(const ContributionMap&) const = default;
};

/// Inner product of a (pre-projected) state with a text embedding.
double logit_lens(std::span<const float> state, std::span<const float> text_embedding);

/// Raw per-head logit differences LL(l,h,y) - LL(l,h,ybar).
ContributionMap logit_difference_map(const ActivationRecord& record, std::span<const float> text_y,
                                     std::span<const float> text_ybar);

/// One-hot map at the argmax of the logit differences. Ties go to the
/// lexicographically smallest (layer, head).
ContributionMap importance_map(const ActivationRecord& record, std::span<const float> text_y,
                               std::span<const float> text_ybar);

/// Entrywise mean of one-hot maps, renormalized to sum to one.
ContributionMap aggregate_importance(std::span<const ContributionMap> maps);

enum class Correctness { correct, wrong, unknown };
enum class Subgroup { PC, PW, NC, NW, unknown };

const char* to_string(Subgroup g);

struct GroupedSample {
    std::string sample_id;
    int y_star = 0;
    int s = 0;
    int a_sy = 1;  // +1 when (s, y*) is a positive pair, -1 otherwise
    Correctness correctness = Correctness::unknown;
    Subgroup subgroup = Subgroup::unknown;

    bool positive() const { return a_sy > 0; }
};

/// Assigns a_sy, correctness and subgroup. A negative prediction means "unknown".
std::vector<GroupedSample> partition_groups(const DatasetManifest& manifest, std::span<const int> predictions,
                                            const std::map<int, int>& positive_pairs);

/// Support of an aggregated map, ordered by descending value then (layer, head).
HeadSet select_pstar(const ContributionMap& aggregated);

/// 1 / |P*_NW u P*_NC|.
double gamma_threshold(const HeadSet& pstar_nw, const HeadSet& pstar_nc);

struct LocatedStates {
    HeadSet p_s;
    HeadSet p_y;
    std::vector<double> s_scores;  // v_nw - v_nc at each p_s position
    std::vector<double> y_scores;  // v_nc - v_nw at each p_y position
};

/// Contrastive isolation: p_s where v_nw - v_nc > gamma, p_y where v_nc - v_nw > gamma.
LocatedStates locate_states(const ContributionMap& v_nw, const ContributionMap& v_nc, double gamma);

/// Positions of a spurious-task map (correct samples) exceeding gamma.
HeadSet locate_spurious_direct(const ContributionMap& v_c_on_spurious_task, double gamma);

/// Keeps only the highest-scoring position of a located set.
HeadSet top1(const HeadSet& set);

} // namespace ltc
