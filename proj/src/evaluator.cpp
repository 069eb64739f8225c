#include "ltc/evaluator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "ltc/error.hpp"

namespace ltc {

namespace {

void check_aligned(std::size_t a, std::size_t b, const char* what) {
    if (a != b)
        throw ValidationError(std::string(what) + ": " + std::to_string(a) + " samples vs " + std::to_string(b) +
                              " predictions");
}

} // namespace

GroupMetrics group_metrics(std::span<const GroupedSample> samples, std::span<const int> predictions, int n_classes,
                           int n_spurious) {
    check_aligned(samples.size(), predictions.size(), "group_metrics");
    if (samples.empty()) throw ValidationError("group_metrics: no samples");
    std::map<std::pair<int, int>, GroupCell> cells;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        auto& c = cells[{samples[i].y_star, samples[i].s}];
        c.class_index = samples[i].y_star;
        c.spurious_index = samples[i].s;
        ++c.size;
        if (predictions[i] == samples[i].y_star) {
            ++c.correct;
            ++correct;
        }
    }
    GroupMetrics m;
    for (const auto& [key, cell] : cells) m.cells.push_back(cell);
    for (int y = 0; y < n_classes; ++y)
        for (int s = 0; s < n_spurious; ++s)
            if (!cells.count({y, s}))
                m.warnings.push_back("group (class " + std::to_string(y) + ", spurious " + std::to_string(s) +
                                     ") is empty and excluded from the worst group");
    double wg = 1.0;
    for (const auto& c : m.cells) wg = std::min(wg, c.accuracy());
    m.worst_group = wg;
    m.average = static_cast<double>(correct) / static_cast<double>(samples.size());
    m.gap = m.average - wg;
    return m;
}

GroupMetrics group_metrics_two_split(std::span<const GroupedSample> samples, std::span<const int> predictions,
                                     std::span<const Split> splits) {
    check_aligned(samples.size(), predictions.size(), "group_metrics");
    check_aligned(samples.size(), splits.size(), "group_metrics splits");
    std::size_t n_easy = 0, ok_easy = 0, n_hard = 0, ok_hard = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const bool ok = predictions[i] == samples[i].y_star;
        if (splits[i] == Split::easy) {
            ++n_easy;
            ok_easy += ok;
        } else if (splits[i] == Split::hard) {
            ++n_hard;
            ok_hard += ok;
        }
    }
    if (!n_easy || !n_hard) throw ValidationError("two-split evaluation needs both easy and hard samples");
    GroupMetrics m;
    m.two_split = true;
    m.easy_accuracy = static_cast<double>(ok_easy) / static_cast<double>(n_easy);
    m.average = static_cast<double>(ok_hard) / static_cast<double>(n_hard);
    m.gap = *m.easy_accuracy - m.average;
    return m;
}

BiasReport bias_metric(std::span<const GroupedSample> samples, std::span<const int> predictions,
                       std::span<const std::string> occupations, int top_k) {
    check_aligned(samples.size(), predictions.size(), "bias_metric");
    if (top_k <= 0) throw ValidationError("bias_metric: top_k must be positive");
    const auto n_occ = occupations.size();
    std::vector<std::array<std::size_t, 2>> total(n_occ, {0, 0}), correct(n_occ, {0, 0});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const int o = samples[i].y_star, g = samples[i].s;
        if (o < 0 || o >= static_cast<int>(n_occ))
            throw ValidationError("bias_metric: occupation index " + std::to_string(o) + " out of range");
        if (g != 0 && g != 1) throw ValidationError("bias_metric: gender index must be 0 or 1");
        ++total[static_cast<std::size_t>(o)][static_cast<std::size_t>(g)];
        if (predictions[i] == o) ++correct[static_cast<std::size_t>(o)][static_cast<std::size_t>(g)];
    }
    BiasReport r;
    std::vector<std::pair<double, std::size_t>> ranked;
    double sum = 0.0;
    for (std::size_t o = 0; o < n_occ; ++o) {
        if (!total[o][0] || !total[o][1]) {
            if (total[o][0] || total[o][1]) r.excluded.push_back(occupations[o]);
            continue;
        }
        const double a0 = static_cast<double>(correct[o][0]) / static_cast<double>(total[o][0]);
        const double a1 = static_cast<double>(correct[o][1]) / static_cast<double>(total[o][1]);
        const double b = 100.0 * std::abs(a0 - a1);
        r.per_occupation_bias[occupations[o]] = b;
        ranked.emplace_back(b, o);
        sum += b;
    }
    if (ranked.empty()) throw ValidationError("bias_metric: no occupation has both genders");
    r.overall_bias = sum / static_cast<double>(ranked.size());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    const auto k = std::min(ranked.size(), static_cast<std::size_t>(top_k));
    double top_sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        r.top_k_occupations.push_back(occupations[ranked[i].second]);
        top_sum += ranked[i].first;
    }
    r.top_k_bias = top_sum / static_cast<double>(k);
    return r;
}

SkewReport max_skew(std::span<const std::vector<std::string>> ranked, std::span<const std::string> query_names,
                    const std::map<std::string, int>& group_of, int k, int n_groups) {
    if (k <= 0) throw ValidationError("max_skew: k must be positive");
    if (n_groups <= 0) throw ValidationError("max_skew: n_groups must be positive");
    if (ranked.size() != query_names.size()) throw ValidationError("max_skew: query names and lists differ in length");
    if (ranked.empty()) throw ValidationError("max_skew: no queries");
    SkewReport r;
    r.k = k;
    double sum = 0.0;
    for (std::size_t q = 0; q < ranked.size(); ++q) {
        const auto& list = ranked[q];
        if (list.size() < static_cast<std::size_t>(k))
            throw ValidationError("max_skew: query '" + query_names[q] + "' has fewer than k results");
        std::vector<int> counts(static_cast<std::size_t>(n_groups), 0);
        for (int i = 0; i < k; ++i) {
            const auto it = group_of.find(list[static_cast<std::size_t>(i)]);
            if (it == group_of.end()) throw ValidationError("max_skew: unknown id '" + list[static_cast<std::size_t>(i)] + "'");
            if (it->second < 0 || it->second >= n_groups)
                throw ValidationError("max_skew: group of '" + it->first + "' out of range");
            ++counts[static_cast<std::size_t>(it->second)];
        }
        double best = -std::numeric_limits<double>::infinity();
        for (int c : counts)
            if (c > 0) best = std::max(best, std::log(static_cast<double>(c) * n_groups / k));
        const double skew = 100.0 * best;
        r.per_query_skew[query_names[q]] = skew;
        sum += skew;
    }
    r.mean_skew = sum / static_cast<double>(ranked.size());
    return r;
}

MarginHistograms margin_histogram(std::span<const Prediction> predictions, std::span<const GroupedSample> samples,
                                  int bins) {
    check_aligned(samples.size(), predictions.size(), "margin_histogram");
    if (bins <= 0) throw ValidationError("margin_histogram: bins must be positive");
    MarginHistograms h;
    h.bins = bins;
    h.positive.assign(static_cast<std::size_t>(bins), 0);
    h.negative.assign(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double m = predictions[i].margin;
        if (!(m >= 0.0 && m <= 1.0)) throw ValidationError("margin_histogram: margin outside [0, 1]");
        const auto b = std::min(static_cast<int>(m * bins), bins - 1);
        (samples[i].positive() ? h.positive : h.negative)[static_cast<std::size_t>(b)]++;
    }
    return h;
}

} // namespace ltc
