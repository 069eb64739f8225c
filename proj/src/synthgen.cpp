#include "ltc/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "ltc/binio.hpp"
#include "ltc/error.hpp"
#include "ltc/kernels.hpp"
#include "ltc/linalg.hpp"
#include "ltc/vit.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace ltc {

namespace {

using Vec = std::vector<double>;

const std::vector<std::string> kClassNames{"landbird", "waterbird"};
const std::vector<std::string> kSpuriousNames{"land", "water"};

void normalize(Vec& v) {
    const double n = linalg::norm(v);
    if (!(n > 0.0)) throw NumericError("synthgen: degenerate direction");
    for (auto& x : v) x /= n;
}

// Gram-Schmidt over Gaussian draws.
std::vector<Vec> orthonormal(int count, int dim, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Vec> out;
    while (static_cast<int>(out.size()) < count) {
        Vec v(static_cast<std::size_t>(dim));
        for (auto& x : v) x = normal(rng);
        for (const auto& u : out) {
            const double p = linalg::dot(v, u);
            for (std::size_t k = 0; k < v.size(); ++k) v[k] -= p * u[k];
        }
        if (linalg::norm(v) < 1e-6) continue;
        normalize(v);
        out.push_back(std::move(v));
    }
    return out;
}

HeadSet planted_from_json(const json& j) { return head_set_from_json(j, HeadSetKind::planted); }

std::string sample_name(Split split, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%06zu", to_string(split), index);
    return buf;
}

struct World {
    Vec c[2];
    Vec e[2];
    TextBank class_bank;
    TextBank spurious_bank;
    TextBank concept_bank;
};

World make_world(const SynthConfig& cfg) {
    const int d = cfg.model_spec.joint_dim;
    std::mt19937_64 rng(cfg.world_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto dirs = orthonormal(4, d, rng);
    World w;
    w.c[0] = dirs[0];
    w.c[1] = dirs[1];
    w.e[0] = dirs[2];
    w.e[1] = dirs[3];
    w.class_bank.kind = BankKind::class_prompt;
    w.spurious_bank.kind = BankKind::spurious_prompt;
    w.concept_bank.kind = BankKind::concept_pair;
    for (int y = 0; y < 2; ++y) {
        Vec t = w.c[y];
        for (std::size_t k = 0; k < t.size(); ++k) t[k] += cfg.text_spurious_alignment * w.e[y][k];
        normalize(t);
        w.class_bank.add(kClassNames[static_cast<std::size_t>(y)], linalg::to_float(t));
        w.spurious_bank.add(kSpuriousNames[static_cast<std::size_t>(y)], linalg::to_float(w.e[y]));
    }
    const double jitter = cfg.concept_noise / std::sqrt(static_cast<double>(d));
    for (int i = 0; i < cfg.n_concepts; ++i)
        for (int y : {1, 0}) {
            Vec v = w.c[y];
            for (auto& x : v) x += jitter * normal(rng);
            normalize(v);
            w.concept_bank.add("concept" + std::to_string(i) + (y == 1 ? ":pos" : ":neg"), linalg::to_float(v));
        }
    return w;
}

// Splits `state` over token slots in proportion to `weights`, assigning the
// float remainder to the last weighted slot so slot sums track the head state.
void spread(ActivationRecord& r, int l, int h, std::span<const float> state, const std::vector<double>& weights) {
    int last = -1;
    for (int i = 0; i < static_cast<int>(weights.size()); ++i)
        if (weights[static_cast<std::size_t>(i)] > 0.0) last = i;
    std::vector<double> used(state.size(), 0.0);
    for (int i = 0; i < last; ++i) {
        const double wi = weights[static_cast<std::size_t>(i)];
        if (wi <= 0.0) continue;
        auto t = r.token(l, h, i);
        for (std::size_t k = 0; k < state.size(); ++k) {
            t[k] = static_cast<float>(wi * state[k]);
            used[k] += t[k];
        }
    }
    auto t = r.token(l, h, last);
    for (std::size_t k = 0; k < state.size(); ++k) t[k] = static_cast<float>(state[k] - used[k]);
}

std::vector<double> region_weights(int n_patches, bool object) {
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_patches))));
    std::vector<double> w(static_cast<std::size_t>(n_patches) + 1, 0.0);
    int count = 0;
    for (int p = 0; p < n_patches; ++p) {
        bool in_object;
        if (side * side == n_patches) {
            const int r = p / side, c = p % side;
            in_object = r >= side / 4 && r < side - side / 4 && c >= side / 4 && c < side - side / 4;
        } else {
            in_object = p < n_patches / 2;
        }
        if (in_object == object) {
            w[static_cast<std::size_t>(p) + 1] = 1.0;
            ++count;
        }
    }
    if (count == 0) std::fill(w.begin() + 1, w.end(), 1.0), count = n_patches;
    for (auto& x : w) x /= count;
    return w;
}

} // namespace

void SynthConfig::validate() const {
    model_spec.validate();
    if (kind != "activations" && kind != "vit") throw ValidationError("synth kind must be 'activations' or 'vit'");
    if (kind == "activations" && model_spec.joint_dim < 4)
        throw ValidationError("synth: joint_dim " + std::to_string(model_spec.joint_dim) +
                              " cannot host 2 class + 2 spurious orthonormal directions (need >= 4)");
    const int L = model_spec.n_layers, H = model_spec.n_heads;
    planted_y.validate(L, H);
    planted_s.validate(L, H);
    planted_sy.validate(L, H);
    for (const auto& p : planted_y.positions)
        if (planted_s.contains(p) || planted_sy.contains(p))
            throw ValidationError("synth: planted sets overlap at " + to_string(p));
    for (const auto& p : planted_s.positions)
        if (planted_sy.contains(p)) throw ValidationError("synth: planted sets overlap at " + to_string(p));
    if (n_samples.size() != 4) throw ValidationError("synth: n_samples needs 4 per-cell counts");
    for (int n : n_samples)
        if (n < 0) throw ValidationError("synth: negative sample count");
    if (!(signal_strength >= 0.0)) throw ValidationError("synth: signal_strength must be >= 0");
    if (!(noise_sigma >= 0.0)) throw ValidationError("synth: noise_sigma must be >= 0");
    if (!(jitter >= 0.0)) throw ValidationError("synth: jitter must be >= 0");
    if (n_concepts < 1) throw ValidationError("synth: n_concepts must be >= 1");
    if (patch_dim < 1) throw ValidationError("synth: patch_dim must be >= 1");
}

json to_json(const SynthConfig& c) {
    return {{"kind", c.kind},
            {"model_spec",
             {{"n_layers", c.model_spec.n_layers},
              {"n_heads", c.model_spec.n_heads},
              {"n_tokens", c.model_spec.n_tokens},
              {"embed_dim", c.model_spec.embed_dim},
              {"joint_dim", c.model_spec.joint_dim}}},
            {"planted_y", to_json(c.planted_y)},
            {"planted_s", to_json(c.planted_s)},
            {"planted_sy", to_json(c.planted_sy)},
            {"n_samples", c.n_samples},
            {"signal_strength", c.signal_strength},
            {"noise_sigma", c.noise_sigma},
            {"spurious_strength", c.spurious_strength},
            {"association_strength", c.association_strength},
            {"sy_strength", c.sy_strength},
            {"jitter", c.jitter},
            {"text_spurious_alignment", c.text_spurious_alignment},
            {"n_concepts", c.n_concepts},
            {"concept_noise", c.concept_noise},
            {"with_tokens", c.with_tokens},
            {"split", to_string(c.split)},
            {"seed", c.seed},
            {"world_seed", c.world_seed},
            {"patch_dim", c.patch_dim}};
}

SynthConfig synth_config_from_json(const json& j) {
    if (!j.is_object()) throw ValidationError("synth config must be a JSON object");
    static const std::vector<std::string> known{
        "kind",        "model_spec",           "planted_y",   "planted_s",    "planted_sy",    "n_samples",
        "signal_strength", "noise_sigma",      "spurious_strength", "association_strength", "sy_strength",
        "jitter",      "text_spurious_alignment", "n_concepts", "concept_noise", "with_tokens", "split",
        "seed",        "world_seed",           "patch_dim"};
    for (const auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ValidationError("synth config: unknown field '" + key + "'");
    SynthConfig c;
    try {
        c.kind = j.value("kind", c.kind);
        if (j.contains("model_spec")) {
            const auto& m = j.at("model_spec");
            c.model_spec.n_layers = m.value("n_layers", c.model_spec.n_layers);
            c.model_spec.n_heads = m.value("n_heads", c.model_spec.n_heads);
            c.model_spec.n_tokens = m.value("n_tokens", c.model_spec.n_tokens);
            c.model_spec.embed_dim = m.value("embed_dim", c.model_spec.embed_dim);
            c.model_spec.joint_dim = m.value("joint_dim", c.model_spec.joint_dim);
        }
        if (j.contains("planted_y")) c.planted_y = planted_from_json(j.at("planted_y"));
        if (j.contains("planted_s")) c.planted_s = planted_from_json(j.at("planted_s"));
        if (j.contains("planted_sy")) c.planted_sy = planted_from_json(j.at("planted_sy"));
        if (j.contains("n_samples")) {
            const auto& n = j.at("n_samples");
            c.n_samples = n.is_number() ? std::vector<int>(4, n.get<int>()) : n.get<std::vector<int>>();
        }
        c.signal_strength = j.value("signal_strength", c.signal_strength);
        c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
        c.spurious_strength = j.value("spurious_strength", c.spurious_strength);
        c.association_strength = j.value("association_strength", c.association_strength);
        c.sy_strength = j.value("sy_strength", c.sy_strength);
        c.jitter = j.value("jitter", c.jitter);
        c.text_spurious_alignment = j.value("text_spurious_alignment", c.text_spurious_alignment);
        c.n_concepts = j.value("n_concepts", c.n_concepts);
        c.concept_noise = j.value("concept_noise", c.concept_noise);
        c.with_tokens = j.value("with_tokens", c.with_tokens);
        if (j.contains("split")) c.split = split_from_string(j.at("split").get<std::string>());
        c.seed = j.value("seed", c.seed);
        c.world_seed = j.value("world_seed", c.world_seed);
        c.patch_dim = j.value("patch_dim", c.patch_dim);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("synth config: ") + e.what());
    }
    c.validate();
    return c;
}

SynthDataset generate(const SynthConfig& cfg) {
    cfg.validate();
    if (cfg.kind != "activations") throw ValidationError("generate: only the activations kind produces records");
    const int L = cfg.model_spec.n_layers, H = cfg.model_spec.n_heads, d = cfg.model_spec.joint_dim;
    const int N = cfg.model_spec.n_tokens;
    const World world = make_world(cfg);

    SynthDataset out;
    out.class_bank = world.class_bank;
    out.spurious_bank = world.spurious_bank;
    out.concept_bank = world.concept_bank;
    out.truth = {cfg.planted_y, cfg.planted_s, cfg.planted_sy};
    out.manifest.class_names = kClassNames;
    out.manifest.spurious_names = kSpuriousNames;
    out.manifest.positive_pairs = {{0, 0}, {1, 1}};

    const int n_planted = static_cast<int>(cfg.planted_y.size() + cfg.planted_s.size() + cfg.planted_sy.size());
    const int n_other = L * H - n_planted;
    const double diffuse = n_other > 0 ? cfg.association_strength / n_other : 0.0;
    const double noise_sd = cfg.noise_sigma / std::sqrt(static_cast<double>(d));
    const auto object_w = region_weights(N, true);
    const auto background_w = region_weights(N, false);
    const std::vector<double> uniform_w(static_cast<std::size_t>(N) + 1, 1.0 / (N + 1));

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t index = 0;
    Vec state(static_cast<std::size_t>(d));
    for (int cell = 0; cell < 4; ++cell) {
        const int y = cell / 2, s = cell % 2;
        const int paired = out.manifest.positive_pairs.at(s);
        for (int j = 0; j < cfg.n_samples[static_cast<std::size_t>(cell)]; ++j, ++index) {
            const double a = cfg.signal_strength * (1.0 + cfg.jitter * normal(rng));
            const double b = cfg.signal_strength * (1.0 + cfg.jitter * normal(rng));
            auto rec = ActivationRecord::zeros(sample_name(cfg.split, index), L, H, d, cfg.with_tokens ? N + 1 : 0);
            for (int l = 0; l < L; ++l)
                for (int h = 0; h < H; ++h) {
                    const HeadPos p{l, h};
                    const std::vector<double>* weights = &uniform_w;
                    if (cfg.planted_y.contains(p)) {
                        for (int k = 0; k < d; ++k) state[static_cast<std::size_t>(k)] = a * world.c[y][static_cast<std::size_t>(k)];
                        weights = &object_w;
                    } else if (cfg.planted_s.contains(p)) {
                        for (int k = 0; k < d; ++k)
                            state[static_cast<std::size_t>(k)] = cfg.spurious_strength * b * world.e[s][static_cast<std::size_t>(k)];
                        weights = &background_w;
                    } else if (cfg.planted_sy.contains(p)) {
                        for (int k = 0; k < d; ++k)
                            state[static_cast<std::size_t>(k)] = cfg.sy_strength * b * world.c[paired][static_cast<std::size_t>(k)];
                        weights = &object_w;
                    } else {
                        for (int k = 0; k < d; ++k)
                            state[static_cast<std::size_t>(k)] = diffuse * b * world.c[paired][static_cast<std::size_t>(k)];
                    }
                    for (auto& x : state) x += noise_sd * normal(rng);
                    auto dst = rec.head(l, h);
                    for (int k = 0; k < d; ++k) dst[static_cast<std::size_t>(k)] = static_cast<float>(state[static_cast<std::size_t>(k)]);
                    if (cfg.with_tokens) spread(rec, l, h, dst, *weights);
                }
            for (auto& v : rec.residual_base) v = static_cast<float>(noise_sd * normal(rng));
            rec.resum();
            out.manifest.samples.push_back({rec.sample_id, y, s, cfg.split});
            out.records.push_back(std::move(rec));
        }
    }
    // Zero-padded ids make generation order the sorted order the store uses.
    return out;
}

void write_synth_dataset(const SynthDataset& data, const SynthConfig& cfg, const fs::path& dir) {
    write_store(data.records, cfg.model_spec, dir / "store");
    write_manifest(data.manifest, dir / "manifest.csv");
    write_text_bank(data.class_bank, dir / "class_bank.json");
    write_text_bank(data.spurious_bank, dir / "spurious_bank.json");
    write_text_bank(data.concept_bank, dir / "concept_bank.json");
    binio::write_json(dir / "truth.json", json{{"planted_y", to_json(data.truth.planted_y)},
                                                {"planted_s", to_json(data.truth.planted_s)},
                                                {"planted_sy", to_json(data.truth.planted_sy)}});
}

void write_synth_vit(const SynthConfig& cfg, const fs::path& dir) {
    cfg.validate();
    const auto& m = cfg.model_spec;
    TinyVitConfig vc{m.n_layers, m.n_heads, m.embed_dim, 2 * m.embed_dim, cfg.patch_dim, m.joint_dim};
    write_weights(random_vit(vc, cfg.world_seed), dir / "weights");

    DatasetManifest manifest;
    manifest.class_names = kClassNames;
    manifest.spurious_names = kSpuriousNames;
    manifest.positive_pairs = {{0, 0}, {1, 1}};
    std::vector<std::string> ids;
    std::size_t index = 0;
    for (int cell = 0; cell < 4; ++cell)
        for (int j = 0; j < cfg.n_samples[static_cast<std::size_t>(cell)]; ++j, ++index) {
            ids.push_back(sample_name(cfg.split, index));
            manifest.samples.push_back({ids.back(), cell / 2, cell % 2, cfg.split});
        }
    write_patches(random_patches(ids, m.n_tokens, cfg.patch_dim, cfg.seed), dir / "patches.json");
    write_manifest(manifest, dir / "manifest.csv");

    std::mt19937_64 rng(cfg.world_seed ^ 0x5bd1e995ull);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto draw = [&] {
        std::vector<float> v(static_cast<std::size_t>(m.joint_dim));
        for (auto& x : v) x = static_cast<float>(normal(rng));
        return v;
    };
    TextBank classes, spurious, concepts;
    classes.kind = BankKind::class_prompt;
    spurious.kind = BankKind::spurious_prompt;
    concepts.kind = BankKind::concept_pair;
    for (int y = 0; y < 2; ++y) {
        classes.add(kClassNames[static_cast<std::size_t>(y)], draw());
        spurious.add(kSpuriousNames[static_cast<std::size_t>(y)], draw());
    }
    concepts.add("concept0:pos", classes.vectors[1]);
    concepts.add("concept0:neg", classes.vectors[0]);
    write_text_bank(classes, dir / "class_bank.json");
    write_text_bank(spurious, dir / "spurious_bank.json");
    write_text_bank(concepts, dir / "concept_bank.json");
}

// ---------------------------------------------------------------------------
// Recovery

SetScore set_score(const HeadSet& located, const HeadSet& truth) {
    std::size_t hit = 0;
    for (const auto& p : located.positions) hit += truth.contains(p);
    SetScore s;
    s.precision_defined = !located.empty();
    s.precision = located.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(located.size());
    s.recall = truth.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(truth.size());
    return s;
}

RecoveryScore recovery_score(const HeadSet& p_s, const HeadSet& p_y, const GroundTruth& truth) {
    HeadSet spurious = truth.planted_s;
    for (const auto& p : truth.planted_sy.positions)
        if (!spurious.contains(p)) spurious.positions.push_back(p);
    return {set_score(p_s, spurious), set_score(p_y, truth.planted_y)};
}

// ---------------------------------------------------------------------------
// Sweeps

std::vector<SweepRow> sweep(const SweepSpec& spec) {
    if (spec.values.size() < 2) throw ValidationError("sweep needs at least 2 grid points");
    if (spec.n_seeds < 1) throw ValidationError("sweep needs at least 1 seed");
    if (spec.parameter != "gn_fraction" && spec.parameter != "noise_sigma" && spec.parameter != "signal_strength")
        throw ValidationError("sweep parameter must be gn_fraction, noise_sigma or signal_strength");
    std::vector<SweepRow> rows;
    for (double value : spec.values)
        for (int i = 0; i < spec.n_seeds; ++i) {
            SweepRow row;
            row.parameter = spec.parameter;
            row.value = value;
            row.seed = spec.base.seed + static_cast<std::uint64_t>(i);
            SynthConfig val = spec.base;
            val.kind = "activations";
            val.seed = row.seed;
            val.world_seed = spec.base.world_seed + static_cast<std::uint64_t>(i);
            val.split = Split::val;
            LocateOptions lo = spec.locate;
            lo.seed = row.seed;
            if (spec.parameter == "gn_fraction") lo.gn_fraction = value;
            if (spec.parameter == "noise_sigma") val.noise_sigma = value;
            if (spec.parameter == "signal_strength") val.signal_strength = value;
            SynthConfig test = val;
            test.split = Split::test;
            test.seed = val.seed + 0x9e3779b97f4a7c15ull;

            const auto vd = generate(val);
            LocateResult located;
            try {
                located = locate(vd.records, vd.manifest, vd.class_bank, &vd.spurious_bank, lo);
            } catch (const EmptySubgroupError& e) {
                row.valid = false;
                row.note = e.what();
                rows.push_back(std::move(row));
                continue;
            }
            row.recovery = recovery_score(located.p_s(), located.p_y(), vd.truth);

            const auto td = generate(test);
            const auto plan = make_plan(located.p_s(), located.p_y(), td.records, &td.concept_bank);
            LtcOptions opts;
            opts.threads = lo.threads;
            opts.mode = LtcMode::zero_shot;
            const auto zs = apply_ltc(td.records, plan, td.class_bank, opts);
            opts.mode = LtcMode::full;
            const auto full = apply_ltc(td.records, plan, td.class_bank, opts);
            const auto gz = group_metrics(evaluation_groups(td.manifest, zs), predicted_classes(zs), 2, 2);
            const auto gf = group_metrics(evaluation_groups(td.manifest, full), predicted_classes(full), 2, 2);
            row.wg_zero_shot = gz.worst_group.value_or(0.0);
            row.wg_full = gf.worst_group.value_or(0.0);
            row.gap_zero_shot = gz.gap;
            row.gap_full = gf.gap;
            rows.push_back(std::move(row));
        }
    return rows;
}

void write_sweep_csv(std::span<const SweepRow> rows, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "parameter,value,seed,valid,recall_s,precision_s,recall_y,precision_y,wg_zero_shot,wg_full,gap_zero_shot,"
           "gap_full,note\n";
    out.precision(10);
    for (const auto& r : rows) {
        std::string note = r.note;
        std::replace(note.begin(), note.end(), ',', ';');
        out << r.parameter << ',' << r.value << ',' << r.seed << ',' << (r.valid ? 1 : 0) << ',' << r.recovery.s.recall
            << ',' << r.recovery.s.precision << ',' << r.recovery.y.recall << ',' << r.recovery.y.precision << ','
            << r.wg_zero_shot << ',' << r.wg_full << ',' << r.gap_zero_shot << ',' << r.gap_full << ',' << note << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

} // namespace ltc
