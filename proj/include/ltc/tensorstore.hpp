#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ltc/types.hpp"

namespace ltc {

/// Per-head CLS contributions of one image, already in the joint embedding space.
///
/// Layout is row-major: `contributions[(l * H + h) * d + k]` and
/// `token_contributions[((l * H + h) * T + i) * d + k]` with T = N + 1 (CLS at i = 0).
struct ActivationRecord {
    std::string sample_id;
    int n_layers = 0;
    int n_heads = 0;
    int dim = 0;
    int n_token_slots = 0;  // N + 1 when token_contributions is present, else 0

    std::vector<float> contributions;
    std::vector<float> token_contributions;
    std::vector<float> residual_base;
    std::vector<float> full_embedding;

    static ActivationRecord zeros(std::string id, int layers, int heads, int dim, int token_slots = 0);

    bool has_tokens() const { return n_token_slots > 0; }

    std::span<const float> head(int layer, int h) const;
    std::span<float> head(int layer, int h);
    std::span<const float> head(HeadPos p) const { return head(p.layer, p.head); }
    std::span<float> head(HeadPos p) { return head(p.layer, p.head); }
    std::span<const float> token(int layer, int h, int i) const;
    std::span<float> token(int layer, int h, int i);

    /// full_embedding = residual_base + sum of all head contributions.
    void resum();
    /// ||sum + residual - full|| / ||full||.
    double reconstruction_error() const;
    /// Worst |sum_i token(l,h,i) - head(l,h)| over all heads and coordinates.
    double token_sum_error() const;

    /// Throws ValidationError if buffers disagree with the declared dims or `spec`.
    void check_dims(const ModelSpec& spec) const;

    bool operator==(const ActivationRecord&) const = default;
};

enum class BankKind { class_prompt, spurious_prompt, concept_pair, caption_subset };

const char* to_string(BankKind k);
BankKind bank_kind_from_string(const std::string& s);

/// Labelled text embeddings. Label order is significant: it is the class index.
struct TextBank {
    BankKind kind = BankKind::class_prompt;
    std::vector<std::string> labels;
    std::vector<std::vector<float>> vectors;

    /// Rejects non-finite entries, zero vectors and dimension changes.
    void add(std::string label, std::vector<float> v);
    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }
    int dim() const { return vectors.empty() ? 0 : static_cast<int>(vectors.front().size()); }
    int index_of(const std::string& label) const;  // -1 if absent
    std::span<const float> at(int i) const { return vectors.at(static_cast<std::size_t>(i)); }
    void validate() const;
};

enum class Split { val, test, easy, hard };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestSample {
    std::string sample_id;
    int class_index = 0;
    int spurious_index = 0;
    Split split = Split::val;

    bool operator==(const ManifestSample&) const = default;
};

/// Sample metadata. `positive_pairs` maps a spurious index to the class it is
/// positively associated with (water -> waterbird).
struct DatasetManifest {
    std::vector<ManifestSample> samples;
    std::vector<std::string> class_names;
    std::vector<std::string> spurious_names;
    std::map<int, int> positive_pairs;

    void validate() const;
    /// Samples reordered to match `ids`; throws ValidationError on a missing id.
    DatasetManifest aligned_to(std::span<const std::string> ids) const;
    bool operator==(const DatasetManifest&) const = default;
};

struct ReconstructionViolation {
    std::string sample_id;
    double relative_error = 0.0;
};

struct StoreReadOptions {
    double tolerance = 1e-4;
    /// Escalate reconstruction violations to CorruptStoreError.
    bool strict = false;
};

struct Store {
    ModelSpec spec;
    std::vector<ActivationRecord> records;
    std::vector<ReconstructionViolation> violations;

    std::vector<std::string> sample_ids() const;
};

inline constexpr int kStoreSchemaVersion = 1;

/// Writes manifest.json + contributions.bin, residual.bin, embedding.bin
/// (+ tokens.bin when every record carries token contributions). Records are
/// written sorted by sample_id.
void write_store(std::span<const ActivationRecord> records, const ModelSpec& spec,
                 const std::filesystem::path& dir);

Store read_store(const std::filesystem::path& dir, const StoreReadOptions& options = {});

/// A bank lives in `<path>` (JSON manifest) plus `<path minus extension>.bin`.
void write_text_bank(const TextBank& bank, const std::filesystem::path& path);
TextBank read_text_bank(const std::filesystem::path& path);

/// CSV with `#classes=`, `#spurious=`, `#positive_pairs=` header lines and
/// columns sample_id,class_index,spurious_index,split.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

} // namespace ltc
