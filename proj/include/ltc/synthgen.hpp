#pragma once

// Planted-bias synthetic activations with known head roles.
//
// Binary task: classes {0, 1}, spurious values {0, 1}, spurious value s is
// positively paired with class s. Directions c_0, c_1 (class) and e_0, e_1
// (spurious) are orthonormal. Per sample (y*, s):
//   planted_y heads:   signal * (1 + jitter z1) * c_{y*}
//   planted_s heads:   spurious_strength * signal * (1 + jitter z2) * e_s
//   planted_sy heads:  sy_strength * signal * (1 + jitter z2) * c_{pair(s)}
//   every other head:  association_strength / n_other * signal * (1 + jitter z2) * c_{pair(s)} + noise
// Noise is isotropic Gaussian with expected norm noise_sigma per head.
// Class prompts lean toward their paired spurious direction, which is what
// makes the negatively associated groups fail zero-shot.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltc/locator.hpp"
#include "ltc/pipeline.hpp"
#include "ltc/tensorstore.hpp"
#include "ltc/types.hpp"

namespace ltc {

struct SynthConfig {
    std::string kind = "activations";  // or "vit": random tiny encoder weights + patches
    ModelSpec model_spec{4, 8, 16, 64, 64};
    HeadSet planted_y{{{3, 1}, {2, 4}}, HeadSetKind::planted};
    HeadSet planted_s{{{3, 6}}, HeadSetKind::planted};
    HeadSet planted_sy{{}, HeadSetKind::planted};
    /// Samples per (class, spurious) cell, index = 2 * class + spurious.
    std::vector<int> n_samples{200, 200, 200, 200};
    double signal_strength = 1.0;
    double noise_sigma = 0.2;
    double spurious_strength = 1.0;
    double association_strength = 1.6;
    double sy_strength = 1.0;
    double jitter = 0.3;
    double text_spurious_alignment = 1.0;
    int n_concepts = 1;
    double concept_noise = 0.05;
    bool with_tokens = false;
    Split split = Split::val;
    std::uint64_t seed = 0;        // per-sample draws
    std::uint64_t world_seed = 0;  // directions and text banks
    int patch_dim = 12;            // vit kind only

    void validate() const;
};

nlohmann::json to_json(const SynthConfig& c);
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct GroundTruth {
    HeadSet planted_y;
    HeadSet planted_s;
    HeadSet planted_sy;
};

struct SynthDataset {
    std::vector<ActivationRecord> records;  // sorted by sample_id, aligned with manifest
    DatasetManifest manifest;
    TextBank class_bank;
    TextBank spurious_bank;
    TextBank concept_bank;
    GroundTruth truth;
};

SynthDataset generate(const SynthConfig& config);

/// Writes store/, manifest.csv, class_bank.json, spurious_bank.json,
/// concept_bank.json and truth.json under `dir`.
void write_synth_dataset(const SynthDataset& data, const SynthConfig& config, const std::filesystem::path& dir);

/// Writes weights/, patches.json, manifest.csv and class/spurious/concept
/// banks for the `vit` kind so the decompose path can be exercised.
void write_synth_vit(const SynthConfig& config, const std::filesystem::path& dir);

struct SetScore {
    double precision = 0.0;
    double recall = 0.0;
    bool precision_defined = true;  // false when the located set is empty
};

struct RecoveryScore {
    SetScore s;
    SetScore y;
};

SetScore set_score(const HeadSet& located, const HeadSet& truth);

/// p_s against planted_s + planted_sy, p_y against planted_y.
RecoveryScore recovery_score(const HeadSet& p_s, const HeadSet& p_y, const GroundTruth& truth);

struct SweepSpec {
    std::string parameter = "gn_fraction";  // gn_fraction | noise_sigma | signal_strength
    std::vector<double> values;
    int n_seeds = 1;
    SynthConfig base;
    LocateOptions locate;
};

struct SweepRow {
    std::string parameter;
    double value = 0.0;
    std::uint64_t seed = 0;
    bool valid = true;
    std::string note;
    RecoveryScore recovery;
    double wg_zero_shot = 0.0;
    double wg_full = 0.0;
    double gap_zero_shot = 0.0;
    double gap_full = 0.0;
};

/// Locate on a validation draw and correct a separate test draw per grid
/// point and seed. Grid points whose located subgroups are empty are kept
/// as invalid rows.
std::vector<SweepRow> sweep(const SweepSpec& spec);

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path);

} // namespace ltc
