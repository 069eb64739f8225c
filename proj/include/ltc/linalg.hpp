#pragma once

// Small dense helpers over contiguous ranges (vector, span, array).
// Everything accumulates in double regardless of element type.

#include <cmath>
#include <cstddef>
#include <ranges>
#include <string>
#include <vector>

#include "ltc/error.hpp"

namespace ltc::linalg {

template <std::ranges::contiguous_range A, std::ranges::contiguous_range B>
double dot(const A& a, const B& b) {
    const auto n = std::ranges::size(a);
    if (n != std::ranges::size(b))
        throw ValidationError("dot: dimension mismatch (" + std::to_string(n) + " vs " +
                              std::to_string(std::ranges::size(b)) + ")");
    const auto* pa = std::ranges::data(a);
    const auto* pb = std::ranges::data(b);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(pa[i]) * static_cast<double>(pb[i]);
    return s;
}

template <std::ranges::contiguous_range A>
double norm(const A& a) {
    return std::sqrt(dot(a, a));
}

template <std::ranges::contiguous_range A>
bool all_finite(const A& a) {
    for (const auto& x : a)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

template <std::ranges::contiguous_range A>
std::vector<double> to_double(const A& a) {
    return std::vector<double>(std::ranges::begin(a), std::ranges::end(a));
}

template <std::ranges::contiguous_range A>
std::vector<float> to_float(const A& a) {
    std::vector<float> out;
    out.reserve(std::ranges::size(a));
    for (const auto& x : a) out.push_back(static_cast<float>(x));
    return out;
}

} // namespace ltc::linalg
