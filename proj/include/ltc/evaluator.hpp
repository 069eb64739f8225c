#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltc/corrector.hpp"
#include "ltc/locator.hpp"

namespace ltc {

struct GroupCell {
    int class_index = 0;
    int spurious_index = 0;
    std::size_t size = 0;
    std::size_t correct = 0;
    double accuracy() const { return size ? static_cast<double>(correct) / static_cast<double>(size) : 0.0; }
};

/// Worst-group / average / gap. In two-split mode `average` is hard-split
/// accuracy, `gap` is easy minus hard, and `worst_group` is absent.
struct GroupMetrics {
    std::vector<GroupCell> cells;  // non-empty (class, spurious) cells, sorted
    std::optional<double> worst_group;
    double average = 0.0;
    double gap = 0.0;
    bool two_split = false;
    std::optional<double> easy_accuracy;
    std::vector<std::string> warnings;
};

/// Accuracy per (y*, s) cell. When n_classes and n_spurious are positive the
/// full grid is expected and missing cells produce a warning.
GroupMetrics group_metrics(std::span<const GroupedSample> samples, std::span<const int> predictions,
                           int n_classes = 0, int n_spurious = 0);

/// Easy/hard evaluation: Avg = acc(hard), Gap = acc(easy) - acc(hard).
GroupMetrics group_metrics_two_split(std::span<const GroupedSample> samples, std::span<const int> predictions,
                                     std::span<const Split> splits);

/// Bias values are on a 0..100 scale.
struct BiasReport {
    std::map<std::string, double> per_occupation_bias;
    double overall_bias = 0.0;
    std::vector<std::string> top_k_occupations;  // descending bias, ties to lower index
    double top_k_bias = 0.0;                      // mean bias over top_k_occupations
    std::vector<std::string> excluded;            // occupations lacking one gender
};

/// Occupation = class index, gender = spurious index in {0, 1}.
BiasReport bias_metric(std::span<const GroupedSample> samples, std::span<const int> predictions,
                       std::span<const std::string> occupations, int top_k = 10);

struct SkewReport {
    std::map<std::string, double> per_query_skew;  // 0..100 ln(n_groups)
    double mean_skew = 0.0;
    int k = 0;
};

/// ranked[q] is query q's retrieval list, best first.
SkewReport max_skew(std::span<const std::vector<std::string>> ranked, std::span<const std::string> query_names,
                    const std::map<std::string, int>& group_of, int k, int n_groups);

struct MarginHistograms {
    int bins = 0;
    std::vector<std::size_t> positive;  // G_P
    std::vector<std::size_t> negative;  // G_N
};

/// Bins over [0, 1]; a margin of exactly 1 lands in the last bin.
MarginHistograms margin_histogram(std::span<const Prediction> predictions, std::span<const GroupedSample> samples,
                                  int bins);

} // namespace ltc
