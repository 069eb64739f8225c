#pragma once

#include <atomic>
#include <unistd.h>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "ltc/tensorstore.hpp"

namespace testing {

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("ltc_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::vector<float> gaussian(std::mt19937_64& rng, std::size_t n, double sd = 1.0) {
    std::normal_distribution<double> normal(0.0, sd);
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(normal(rng));
    return v;
}

/// Record with Gaussian head states and residual, consistent full embedding.
inline ltc::ActivationRecord random_record(std::mt19937_64& rng, const std::string& id, int layers, int heads, int dim,
                                           int token_slots = 0) {
    auto r = ltc::ActivationRecord::zeros(id, layers, heads, dim, token_slots);
    r.contributions = gaussian(rng, r.contributions.size());
    r.residual_base = gaussian(rng, r.residual_base.size());
    if (token_slots > 0) {
        // Head state = sum of its token slots, so the token invariant holds.
        r.token_contributions = gaussian(rng, r.token_contributions.size());
        for (int l = 0; l < layers; ++l)
            for (int h = 0; h < heads; ++h) {
                auto st = r.head(l, h);
                for (int k = 0; k < dim; ++k) {
                    double s = 0.0;
                    for (int i = 0; i < token_slots; ++i) s += r.token(l, h, i)[static_cast<std::size_t>(k)];
                    st[static_cast<std::size_t>(k)] = static_cast<float>(s);
                }
            }
    }
    r.resum();
    return r;
}

inline ltc::TextBank bank_of(std::vector<std::vector<float>> vectors, ltc::BankKind kind = ltc::BankKind::class_prompt) {
    ltc::TextBank b;
    b.kind = kind;
    for (std::size_t i = 0; i < vectors.size(); ++i) b.add("c" + std::to_string(i), std::move(vectors[i]));
    return b;
}

} // namespace testing
