#include "ltc/tensorstore.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ltc/binio.hpp"
#include "ltc/error.hpp"
#include "ltc/linalg.hpp"

namespace ltc {

namespace fs = std::filesystem;
using binio::json;

// ---------------------------------------------------------------------------
// ActivationRecord

ActivationRecord ActivationRecord::zeros(std::string id, int layers, int heads, int d, int token_slots) {
    ActivationRecord r;
    r.sample_id = std::move(id);
    r.n_layers = layers;
    r.n_heads = heads;
    r.dim = d;
    r.n_token_slots = token_slots;
    r.contributions.assign(static_cast<std::size_t>(layers) * heads * d, 0.0f);
    if (token_slots > 0)
        r.token_contributions.assign(static_cast<std::size_t>(layers) * heads * token_slots * d, 0.0f);
    r.residual_base.assign(static_cast<std::size_t>(d), 0.0f);
    r.full_embedding.assign(static_cast<std::size_t>(d), 0.0f);
    return r;
}

std::span<const float> ActivationRecord::head(int layer, int h) const {
    const auto off = (static_cast<std::size_t>(layer) * n_heads + h) * dim;
    return std::span<const float>(contributions).subspan(off, static_cast<std::size_t>(dim));
}

std::span<float> ActivationRecord::head(int layer, int h) {
    const auto off = (static_cast<std::size_t>(layer) * n_heads + h) * dim;
    return std::span<float>(contributions).subspan(off, static_cast<std::size_t>(dim));
}

std::span<const float> ActivationRecord::token(int layer, int h, int i) const {
    const auto off = ((static_cast<std::size_t>(layer) * n_heads + h) * n_token_slots + i) * dim;
    return std::span<const float>(token_contributions).subspan(off, static_cast<std::size_t>(dim));
}

std::span<float> ActivationRecord::token(int layer, int h, int i) {
    const auto off = ((static_cast<std::size_t>(layer) * n_heads + h) * n_token_slots + i) * dim;
    return std::span<float>(token_contributions).subspan(off, static_cast<std::size_t>(dim));
}

static std::vector<double> summed(const ActivationRecord& r) {
    std::vector<double> s(r.residual_base.begin(), r.residual_base.end());
    for (int l = 0; l < r.n_layers; ++l)
        for (int h = 0; h < r.n_heads; ++h) {
            const auto c = r.head(l, h);
            for (int k = 0; k < r.dim; ++k) s[static_cast<std::size_t>(k)] += c[static_cast<std::size_t>(k)];
        }
    return s;
}

void ActivationRecord::resum() {
    full_embedding = linalg::to_float(summed(*this));
}

double ActivationRecord::reconstruction_error() const {
    const auto s = summed(*this);
    double num = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        const double e = s[k] - full_embedding[k];
        num += e * e;
    }
    const double den = linalg::norm(full_embedding);
    if (den == 0.0) return num == 0.0 ? 0.0 : std::sqrt(num);
    return std::sqrt(num) / den;
}

double ActivationRecord::token_sum_error() const {
    if (!has_tokens()) return 0.0;
    double worst = 0.0;
    for (int l = 0; l < n_layers; ++l)
        for (int h = 0; h < n_heads; ++h) {
            std::vector<double> s(static_cast<std::size_t>(dim), 0.0);
            for (int i = 0; i < n_token_slots; ++i) {
                const auto t = token(l, h, i);
                for (int k = 0; k < dim; ++k) s[static_cast<std::size_t>(k)] += t[static_cast<std::size_t>(k)];
            }
            const auto c = head(l, h);
            for (int k = 0; k < dim; ++k)
                worst = std::max(worst, std::abs(s[static_cast<std::size_t>(k)] - c[static_cast<std::size_t>(k)]));
        }
    return worst;
}

void ActivationRecord::check_dims(const ModelSpec& spec) const {
    const auto fail = [&](const std::string& what) {
        throw ValidationError("record '" + sample_id + "': " + what);
    };
    if (n_layers != spec.n_layers || n_heads != spec.n_heads || dim != spec.joint_dim)
        fail("dims " + std::to_string(n_layers) + "x" + std::to_string(n_heads) + "x" + std::to_string(dim) +
             " do not match model spec");
    const auto d = static_cast<std::size_t>(dim);
    if (contributions.size() != static_cast<std::size_t>(n_layers) * n_heads * d) fail("contributions size");
    if (residual_base.size() != d) fail("residual_base size");
    if (full_embedding.size() != d) fail("full_embedding size");
    if (n_token_slots != 0) {
        if (n_token_slots != spec.n_tokens + 1) fail("token slot count must be n_tokens + 1");
        if (token_contributions.size() != static_cast<std::size_t>(n_layers) * n_heads * n_token_slots * d)
            fail("token_contributions size");
    } else if (!token_contributions.empty()) {
        fail("token_contributions present without token slots");
    }
}

// ---------------------------------------------------------------------------
// Store

std::vector<std::string> Store::sample_ids() const {
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const auto& r : records) ids.push_back(r.sample_id);
    return ids;
}

static json spec_to_json(const ModelSpec& s) {
    return json{{"n_layers", s.n_layers}, {"n_heads", s.n_heads}, {"n_tokens", s.n_tokens},
                {"embed_dim", s.embed_dim}, {"joint_dim", s.joint_dim}};
}

static ModelSpec spec_from_json(const json& j) {
    ModelSpec s;
    s.n_layers = j.at("n_layers").get<int>();
    s.n_heads = j.at("n_heads").get<int>();
    s.n_tokens = j.at("n_tokens").get<int>();
    s.embed_dim = j.at("embed_dim").get<int>();
    s.joint_dim = j.at("joint_dim").get<int>();
    return s;
}

void write_store(std::span<const ActivationRecord> records, const ModelSpec& spec, const fs::path& dir) {
    spec.validate();
    std::set<std::string> seen;
    for (const auto& r : records) {
        r.check_dims(spec);
        if (!seen.insert(r.sample_id).second) throw ValidationError("duplicate sample_id '" + r.sample_id + "'");
    }
    const bool with_tokens = !records.empty() && records.front().has_tokens();
    for (const auto& r : records)
        if (r.has_tokens() != with_tokens)
            throw ValidationError("token contributions must be present on all records or none");

    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return records[a].sample_id < records[b].sample_id; });

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create store directory " + dir.string() + ": " + ec.message());

    const auto m = records.size();
    const auto L = static_cast<std::size_t>(spec.n_layers), H = static_cast<std::size_t>(spec.n_heads),
               d = static_cast<std::size_t>(spec.joint_dim), T = static_cast<std::size_t>(spec.n_tokens + 1);

    std::vector<float> contrib, residual, embedding, tokens;
    contrib.reserve(m * L * H * d);
    residual.reserve(m * d);
    embedding.reserve(m * d);
    json ids = json::array();
    for (auto i : order) {
        const auto& r = records[i];
        ids.push_back(r.sample_id);
        contrib.insert(contrib.end(), r.contributions.begin(), r.contributions.end());
        residual.insert(residual.end(), r.residual_base.begin(), r.residual_base.end());
        embedding.insert(embedding.end(), r.full_embedding.begin(), r.full_embedding.end());
        if (with_tokens) tokens.insert(tokens.end(), r.token_contributions.begin(), r.token_contributions.end());
    }

    json files, sums;
    files["contributions"] = binio::tensor_entry("contributions.bin", {m, L, H, d});
    sums["contributions"] = binio::write_f32(dir / "contributions.bin", contrib);
    files["residual"] = binio::tensor_entry("residual.bin", {m, d});
    sums["residual"] = binio::write_f32(dir / "residual.bin", residual);
    files["embedding"] = binio::tensor_entry("embedding.bin", {m, d});
    sums["embedding"] = binio::write_f32(dir / "embedding.bin", embedding);
    if (with_tokens) {
        files["tokens"] = binio::tensor_entry("tokens.bin", {m, L, H, T, d});
        sums["tokens"] = binio::write_f32(dir / "tokens.bin", tokens);
    } else {
        std::filesystem::remove(dir / "tokens.bin", ec);
    }

    json manifest{{"schema_version", kStoreSchemaVersion},
                  {"model_spec", spec_to_json(spec)},
                  {"sample_ids", ids},
                  {"tensor_files", files},
                  {"checksums", sums}};
    binio::write_json(dir / "manifest.json", manifest);
}

Store read_store(const fs::path& dir, const StoreReadOptions& options) {
    const auto manifest_path = dir / "manifest.json";
    if (!fs::exists(manifest_path)) throw IoError("store " + dir.string() + " has no manifest.json");
    const json manifest = binio::read_json(manifest_path);

    Store store;
    std::vector<std::string> ids;
    json files, sums;
    try {
        if (manifest.at("schema_version").get<int>() != kStoreSchemaVersion)
            throw CorruptStoreError("unsupported store schema_version");
        store.spec = spec_from_json(manifest.at("model_spec"));
        ids = manifest.at("sample_ids").get<std::vector<std::string>>();
        files = manifest.at("tensor_files");
        sums = manifest.at("checksums");
    } catch (const json::exception& e) {
        throw CorruptStoreError("store manifest is missing fields: " + std::string(e.what()));
    }
    try {
        store.spec.validate();
    } catch (const ValidationError& e) {
        throw CorruptStoreError(std::string("store manifest: ") + e.what());
    }

    const auto m = ids.size();
    const auto& s = store.spec;
    const auto L = static_cast<std::size_t>(s.n_layers), H = static_cast<std::size_t>(s.n_heads),
               d = static_cast<std::size_t>(s.joint_dim), T = static_cast<std::size_t>(s.n_tokens + 1);

    const auto load = [&](const std::string& field, std::vector<std::size_t> shape) {
        if (!files.contains(field)) throw CorruptStoreError("store manifest lacks tensor '" + field + "'");
        const auto& entry = files.at(field);
        binio::check_tensor_entry(entry, field);
        if (entry.at("shape").get<std::vector<std::size_t>>() != shape)
            throw CorruptStoreError("tensor '" + field + "' shape disagrees with model spec");
        std::size_t count = 1;
        for (auto x : shape) count *= x;
        return binio::read_f32(dir / entry.at("file").get<std::string>(), count, sums.value(field, std::string{}));
    };

    const auto contrib = load("contributions", {m, L, H, d});
    const auto residual = load("residual", {m, d});
    const auto embedding = load("embedding", {m, d});
    const bool with_tokens = files.contains("tokens");
    std::vector<float> tokens;
    if (with_tokens) tokens = load("tokens", {m, L, H, T, d});

    store.records.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        ActivationRecord r;
        r.sample_id = ids[i];
        r.n_layers = s.n_layers;
        r.n_heads = s.n_heads;
        r.dim = s.joint_dim;
        r.n_token_slots = with_tokens ? static_cast<int>(T) : 0;
        const auto cs = L * H * d;
        r.contributions.assign(contrib.begin() + static_cast<std::ptrdiff_t>(i * cs),
                               contrib.begin() + static_cast<std::ptrdiff_t>((i + 1) * cs));
        r.residual_base.assign(residual.begin() + static_cast<std::ptrdiff_t>(i * d),
                               residual.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
        r.full_embedding.assign(embedding.begin() + static_cast<std::ptrdiff_t>(i * d),
                                embedding.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
        if (with_tokens) {
            const auto ts = L * H * T * d;
            r.token_contributions.assign(tokens.begin() + static_cast<std::ptrdiff_t>(i * ts),
                                         tokens.begin() + static_cast<std::ptrdiff_t>((i + 1) * ts));
        }
        const double err = r.reconstruction_error();
        if (!(err <= options.tolerance)) store.violations.push_back({r.sample_id, err});
        store.records.push_back(std::move(r));
    }
    if (options.strict && !store.violations.empty()) {
        const auto& v = store.violations.front();
        throw CorruptStoreError("reconstruction invariant violated for '" + v.sample_id + "' (relative error " +
                                std::to_string(v.relative_error) + "), " + std::to_string(store.violations.size()) +
                                " record(s) affected");
    }
    return store;
}

// ---------------------------------------------------------------------------
// TextBank

const char* to_string(BankKind k) {
    switch (k) {
    case BankKind::class_prompt: return "class_prompt";
    case BankKind::spurious_prompt: return "spurious_prompt";
    case BankKind::concept_pair: return "concept_pair";
    case BankKind::caption_subset: return "caption_subset";
    }
    return "?";
}

BankKind bank_kind_from_string(const std::string& s) {
    if (s == "class_prompt") return BankKind::class_prompt;
    if (s == "spurious_prompt") return BankKind::spurious_prompt;
    if (s == "concept_pair") return BankKind::concept_pair;
    if (s == "caption_subset") return BankKind::caption_subset;
    throw ValidationError("unknown bank kind '" + s + "'");
}

static void check_bank_vector(const std::string& label, const std::vector<float>& v) {
    if (v.empty()) throw ValidationError("text bank entry '" + label + "' is empty");
    if (!linalg::all_finite(v)) throw ValidationError("text bank entry '" + label + "' has non-finite values");
    if (linalg::norm(v) == 0.0) throw ValidationError("text bank entry '" + label + "' is a zero vector");
}

void TextBank::add(std::string label, std::vector<float> v) {
    check_bank_vector(label, v);
    if (!vectors.empty() && v.size() != vectors.front().size())
        throw ValidationError("text bank entry '" + label + "' has dimension " + std::to_string(v.size()) +
                              ", bank has " + std::to_string(vectors.front().size()));
    labels.push_back(std::move(label));
    vectors.push_back(std::move(v));
}

int TextBank::index_of(const std::string& label) const {
    const auto it = std::find(labels.begin(), labels.end(), label);
    return it == labels.end() ? -1 : static_cast<int>(it - labels.begin());
}

void TextBank::validate() const {
    if (labels.size() != vectors.size()) throw ValidationError("text bank label/vector count mismatch");
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        check_bank_vector(labels[i], vectors[i]);
        if (vectors[i].size() != vectors.front().size()) throw ValidationError("text bank dimensions differ");
    }
}

static fs::path bank_blob_path(const fs::path& path) {
    auto blob = path;
    blob.replace_extension(".bin");
    if (blob == path) blob += ".bin";
    return blob;
}

void write_text_bank(const TextBank& bank, const fs::path& path) {
    bank.validate();
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const auto d = static_cast<std::size_t>(bank.dim());
    std::vector<float> flat;
    flat.reserve(bank.size() * d);
    for (const auto& v : bank.vectors) flat.insert(flat.end(), v.begin(), v.end());
    const auto blob = bank_blob_path(path);
    const auto crc = binio::write_f32(blob, flat);
    json j{{"schema_version", kStoreSchemaVersion},
           {"kind", to_string(bank.kind)},
           {"dim", d},
           {"labels", bank.labels},
           {"tensor", binio::tensor_entry(blob.filename().string(), {bank.size(), d})},
           {"checksum", crc}};
    binio::write_json(path, j);
}

TextBank read_text_bank(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("text bank " + path.string() + " does not exist");
    const json j = binio::read_json(path);
    TextBank bank;
    std::vector<std::string> labels;
    std::size_t d = 0;
    json entry;
    std::string crc;
    try {
        bank.kind = bank_kind_from_string(j.at("kind").get<std::string>());
        labels = j.at("labels").get<std::vector<std::string>>();
        d = j.at("dim").get<std::size_t>();
        entry = j.at("tensor");
        crc = j.value("checksum", std::string{});
    } catch (const json::exception& e) {
        throw CorruptStoreError(path.string() + ": malformed text bank manifest (" + e.what() + ")");
    }
    binio::check_tensor_entry(entry, "text bank");
    if (entry.at("shape").get<std::vector<std::size_t>>() != std::vector<std::size_t>{labels.size(), d})
        throw CorruptStoreError(path.string() + ": bank shape disagrees with labels");
    const auto blob = path.parent_path() / entry.at("file").get<std::string>();
    const auto flat = binio::read_f32(blob, labels.size() * d, crc);
    for (std::size_t i = 0; i < labels.size(); ++i)
        bank.add(labels[i], std::vector<float>(flat.begin() + static_cast<std::ptrdiff_t>(i * d),
                                               flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * d)));
    return bank;
}

// ---------------------------------------------------------------------------
// DatasetManifest

const char* to_string(Split s) {
    switch (s) {
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::easy: return "easy";
    case Split::hard: return "hard";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    if (s == "easy") return Split::easy;
    if (s == "hard") return Split::hard;
    throw ValidationError("unknown split '" + s + "'");
}

void DatasetManifest::validate() const {
    const int nc = static_cast<int>(class_names.size()), ns = static_cast<int>(spurious_names.size());
    std::set<std::string> seen;
    for (const auto& s : samples) {
        if (s.class_index < 0 || s.class_index >= nc)
            throw ValidationError("sample '" + s.sample_id + "': class index out of range");
        if (s.spurious_index < 0 || s.spurious_index >= ns)
            throw ValidationError("sample '" + s.sample_id + "': spurious index out of range");
        if (!seen.insert(s.sample_id).second) throw ValidationError("duplicate sample_id '" + s.sample_id + "'");
    }
    for (const auto& [sp, cls] : positive_pairs)
        if (sp < 0 || sp >= ns || cls < 0 || cls >= nc)
            throw ValidationError("positive pair " + std::to_string(sp) + ":" + std::to_string(cls) + " out of range");
}

DatasetManifest DatasetManifest::aligned_to(std::span<const std::string> ids) const {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < samples.size(); ++i) index.emplace(samples[i].sample_id, i);
    DatasetManifest out = *this;
    out.samples.clear();
    out.samples.reserve(ids.size());
    for (const auto& id : ids) {
        const auto it = index.find(id);
        if (it == index.end()) throw ValidationError("sample '" + id + "' is not in the dataset manifest");
        out.samples.push_back(samples[it->second]);
    }
    return out;
}

static std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, sep)) out.push_back(item);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

static std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
    manifest.validate();
    for (const auto* names : {&manifest.class_names, &manifest.spurious_names})
        for (const auto& n : *names)
            if (n.find_first_of(";,\n") != std::string::npos)
                throw ValidationError("name '" + n + "' contains a reserved delimiter");
    for (const auto& s : manifest.samples)
        if (s.sample_id.find_first_of(",\n") != std::string::npos)
            throw ValidationError("sample_id '" + s.sample_id + "' contains a reserved delimiter");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "#classes=" << join(manifest.class_names, ';') << '\n';
    out << "#spurious=" << join(manifest.spurious_names, ';') << '\n';
    std::vector<std::string> pairs;
    for (const auto& [sp, cls] : manifest.positive_pairs) pairs.push_back(std::to_string(sp) + ":" + std::to_string(cls));
    out << "#positive_pairs=" << join(pairs, ';') << '\n';
    out << "sample_id,class_index,spurious_index,split\n";
    for (const auto& s : manifest.samples)
        out << s.sample_id << ',' << s.class_index << ',' << s.spurious_index << ',' << to_string(s.split) << '\n';
    if (!out) throw IoError("write failed on " + path.string());
}

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset manifest " + path.string());
    DatasetManifest m;
    std::string line;
    bool header_seen = false;
    std::size_t line_no = 0;
    const auto parse_int = [&](const std::string& s) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": bad integer '" + s + "'");
        }
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.front() == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const auto key = line.substr(1, eq - 1), value = line.substr(eq + 1);
            if (key == "classes") m.class_names = split_on(value, ';');
            else if (key == "spurious") m.spurious_names = split_on(value, ';');
            else if (key == "positive_pairs") {
                for (const auto& p : split_on(value, ';')) {
                    const auto colon = p.find(':');
                    if (colon == std::string::npos) throw ValidationError("bad positive pair '" + p + "'");
                    m.positive_pairs[parse_int(p.substr(0, colon))] = parse_int(p.substr(colon + 1));
                }
            }
            continue;
        }
        if (!header_seen) {
            header_seen = true;
            if (line != "sample_id,class_index,spurious_index,split")
                throw ValidationError(path.string() + ": unexpected header '" + line + "'");
            continue;
        }
        const auto cols = split_on(line, ',');
        if (cols.size() != 4)
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 4 columns");
        m.samples.push_back({cols[0], parse_int(cols[1]), parse_int(cols[2]), split_from_string(cols[3])});
    }
    if (!header_seen) throw ValidationError(path.string() + ": missing header line");
    m.validate();
    return m;
}

} // namespace ltc
