#include "ltc/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ltc/binio.hpp"
#include "ltc/corrector.hpp"
#include "ltc/error.hpp"
#include "ltc/evaluator.hpp"
#include "ltc/interpreter.hpp"
#include "ltc/kernels.hpp"
#include "ltc/linalg.hpp"
#include "ltc/pipeline.hpp"
#include "ltc/synthgen.hpp"
#include "ltc/tensorstore.hpp"
#include "ltc/vit.hpp"

#ifndef LTC_VERSION
#define LTC_VERSION "dev"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace ltc::cli {

std::string version_string() { return std::string("ltc ") + LTC_VERSION; }

namespace {

// Reproducibility record written next to every run's outputs.
struct RunRecord {
    std::string subcommand;
    json config = json::object();
    json inputs = json::array();
    json outputs = json::array();
    std::uint64_t seed = 0;
    int threads = 1;
};

json path_entry(const fs::path& p) {
    json e{{"path", p.string()}};
    if (fs::is_directory(p)) {
        if (fs::exists(p / "manifest.json")) e["manifest_crc32"] = binio::file_crc32_hex(p / "manifest.json");
    } else if (fs::exists(p)) {
        e["crc32"] = binio::file_crc32_hex(p);
    }
    return e;
}

fs::path run_manifest_path(const fs::path& out) {
    if (fs::is_directory(out)) return out / "run_manifest.json";
    auto p = out;
    p.replace_extension(".run.json");
    return p;
}

void write_run_manifest(const RunRecord& r, const fs::path& out, double seconds) {
    binio::write_json(run_manifest_path(out), json{{"subcommand", r.subcommand},
                                                   {"config", r.config},
                                                   {"inputs", r.inputs},
                                                   {"outputs", r.outputs},
                                                   {"seed", r.seed},
                                                   {"threads", r.threads},
                                                   {"version", version_string()},
                                                   {"wall_time_s", seconds}});
}

DatasetManifest aligned_manifest(const fs::path& path, std::span<const std::string> ids) {
    return read_manifest(path).aligned_to(ids);
}

int parse_class(const std::string& s, const TextBank& bank) {
    if (const int i = bank.index_of(s); i >= 0) return i;
    try {
        std::size_t used = 0;
        const int i = std::stoi(s, &used);
        if (used == s.size() && i >= 0 && i < static_cast<int>(bank.size())) return i;
    } catch (const std::exception&) {
    }
    throw ValidationError("class '" + s + "' is neither a bank label nor a valid index");
}

void check_threads(int threads) {
    if (threads < 1) throw ValidationError("--threads must be >= 1");
}

// ---------------------------------------------------------------------------

struct DecomposeArgs {
    std::string weights, patches, out;
    bool with_tokens = false;
    int threads = 1;
};

void run_decompose(const DecomposeArgs& a, RunRecord& rr, std::ostream& out) {
    check_threads(a.threads);
    const auto w = read_weights(a.weights);
    const auto ps = read_patches(a.patches);
    if (ps.patch_dim != w.patch_dim)
        throw ValidationError("patch_dim " + std::to_string(ps.patch_dim) + " does not match weights (" +
                              std::to_string(w.patch_dim) + ")");
    const auto records = kernels::decompose_all(w, ps, a.with_tokens, a.threads);
    write_store(records, w.model_spec(ps.n_patches), a.out);
    rr.config = {{"weights", a.weights}, {"patches", a.patches}, {"with_tokens", a.with_tokens}};
    rr.inputs = {path_entry(a.weights), path_entry(a.patches)};
    rr.outputs = {path_entry(a.out)};
    double worst = 0.0;
    for (const auto& r : records) worst = std::max(worst, r.reconstruction_error());
    out << "decomposed " << records.size() << " samples, worst reconstruction error " << worst << "\n";
}

struct LocateArgs {
    std::string store, manifest, class_bank, spurious_bank, out, target = "predicted";
    bool spurious_task = false, infer_spurious = false, top1 = false;
    double gn_fraction = 1.0, temperature = 1.0;
    std::uint64_t seed = 0;
    int threads = 1;
};

void run_locate(const LocateArgs& a, RunRecord& rr, std::ostream& out) {
    check_threads(a.threads);
    const auto store = read_store(a.store);
    const auto ids = store.sample_ids();
    const auto manifest = aligned_manifest(a.manifest, ids);
    const auto classes = read_text_bank(a.class_bank);
    std::optional<TextBank> spurious;
    if (!a.spurious_bank.empty()) spurious = read_text_bank(a.spurious_bank);
    LocateOptions o;
    o.target = lens_target_from_string(a.target);
    o.top1 = a.top1;
    o.gn_fraction = a.gn_fraction;
    o.seed = a.seed;
    o.infer_spurious = a.infer_spurious;
    o.spurious_task = a.spurious_task;
    o.temperature = a.temperature;
    o.threads = a.threads;
    const auto result = locate(store.records, manifest, classes, spurious ? &*spurious : nullptr, o);
    rr.config = {{"store", a.store},         {"manifest", a.manifest},       {"class_bank", a.class_bank},
                 {"spurious_bank", a.spurious_bank}, {"lens_target", a.target}, {"spurious_task", a.spurious_task},
                 {"infer_spurious", a.infer_spurious}, {"top1", a.top1},      {"gn_fraction", a.gn_fraction},
                 {"temperature", a.temperature}};
    auto j = to_json(result);
    j["config"] = rr.config;
    j["model_spec"] = {{"n_layers", store.spec.n_layers}, {"n_heads", store.spec.n_heads}};
    binio::write_json(a.out, j);
    rr.inputs = {path_entry(a.store), path_entry(a.manifest), path_entry(a.class_bank)};
    if (!a.spurious_bank.empty()) rr.inputs.push_back(path_entry(a.spurious_bank));
    rr.outputs = {path_entry(a.out)};
    const auto names = [](const HeadSet& s) {
        std::string t;
        for (const auto& p : s.positions) t += (t.empty() ? "" : " ") + to_string(p);
        return t.empty() ? std::string("(none)") : t;
    };
    out << "p_s: " << names(result.p_s()) << "\np_y: " << names(result.p_y()) << "\ngamma: " << result.gamma << "\n";
}

struct CorrectArgs {
    std::string store, heads, class_bank, concept_bank, manifest, means_store, out, mode = "full";
    bool zero_ablate = false;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    int threads = 1;
};

void run_correct(const CorrectArgs& a, RunRecord& rr, std::ostream& out) {
    check_threads(a.threads);
    const auto store = read_store(a.store);
    const auto heads = heads_from_json(binio::read_json(a.heads));
    const auto classes = read_text_bank(a.class_bank);
    LtcOptions o;
    o.mode = ltc_mode_from_string(a.mode);
    o.temperature = a.temperature;
    o.seed = a.seed;
    o.zero_ablate = a.zero_ablate;
    o.threads = a.threads;

    std::optional<Store> means;
    if (!a.means_store.empty()) means = read_store(a.means_store);
    const auto& mean_records = means ? means->records : store.records;
    std::optional<TextBank> concepts;
    if (!a.concept_bank.empty()) concepts = read_text_bank(a.concept_bank);
    auto plan = make_plan(heads.p_s, heads.p_y, mean_records, nullptr);

    ConceptPairs pairs;
    std::map<int, int> confusion;
    if (concepts) {
        pairs = concept_pairs_from_bank(*concepts, &classes);
        plan.vectors = pairs.unscoped;
        if (!pairs.by_class.empty()) {
            if (a.manifest.empty()) throw ValidationError("class-scoped concept pairs need --manifest for the confusion map");
            const auto manifest = aligned_manifest(a.manifest, store.sample_ids());
            const auto zs = kernels::classify_all(store.records, classes, a.temperature, a.threads);
            confusion = build_confusion_map(zs, manifest);
            o.scoped_pairs = &pairs;
            o.confusion = &confusion;
        }
    }
    const bool needs_vectors = o.mode == LtcMode::ki_only || o.mode == LtcMode::full || o.mode == LtcMode::random_control;
    if (needs_vectors && plan.vectors.empty() && !o.scoped_pairs)
        throw ValidationError(std::string("mode '") + a.mode + "' needs --concept-bank with :pos/:neg pairs");
    const auto preds = apply_ltc(store.records, plan, classes, o);

    rr.config = {{"store", a.store},           {"heads", a.heads},         {"class_bank", a.class_bank},
                 {"concept_bank", a.concept_bank}, {"mode", to_string(o.mode)}, {"zero_ablate", a.zero_ablate},
                 {"temperature", a.temperature}, {"means_from", means ? a.means_store : a.store},
                 {"manifest", a.manifest}};
    json arr = json::array();
    for (const auto& p : preds) arr.push_back(to_json(p));
    binio::write_json(a.out, json{{"mode", to_string(o.mode)}, {"temperature", a.temperature}, {"config", rr.config},
                                  {"predictions", arr}});
    rr.inputs = {path_entry(a.store), path_entry(a.heads), path_entry(a.class_bank)};
    if (concepts) rr.inputs.push_back(path_entry(a.concept_bank));
    if (means) rr.inputs.push_back(path_entry(a.means_store));
    rr.outputs = {path_entry(a.out)};
    out << "corrected " << preds.size() << " samples with mode " << to_string(o.mode) << "\n";
}

struct EvaluateArgs {
    std::string preds, manifest, metric = "wg", rankings, csv, out;
    int k = 10, top = 10, bins = 10;
    bool two_split = false;
};

std::vector<Prediction> read_predictions(const fs::path& path) {
    const auto j = binio::read_json(path);
    if (!j.contains("predictions") || !j.at("predictions").is_array())
        throw ValidationError(path.string() + ": missing predictions array");
    std::vector<Prediction> out;
    for (const auto& e : j.at("predictions")) out.push_back(prediction_from_json(e));
    return out;
}

void run_evaluate(const EvaluateArgs& a, RunRecord& rr, std::ostream& out, std::ostream& err) {
    const auto full_manifest = read_manifest(a.manifest);
    rr.config = {{"preds", a.preds}, {"manifest", a.manifest}, {"metric", a.metric}, {"k", a.k},
                 {"top", a.top},     {"bins", a.bins},         {"two_split", a.two_split}};
    rr.inputs = {path_entry(a.manifest)};
    json result;
    std::ostringstream summary;
    if (a.metric == "skew") {
        if (a.rankings.empty()) throw ValidationError("--metric skew needs --rankings");
        const auto r = binio::read_json(a.rankings);
        std::vector<std::string> names;
        std::vector<std::vector<std::string>> lists;
        try {
            for (const auto& [q, list] : r.at("queries").items()) {
                names.push_back(q);
                lists.push_back(list.get<std::vector<std::string>>());
            }
        } catch (const json::exception& e) {
            throw ValidationError(std::string("malformed rankings file: ") + e.what());
        }
        std::map<std::string, int> group_of;
        for (const auto& s : full_manifest.samples) group_of[s.sample_id] = s.spurious_index;
        const auto rep = max_skew(lists, names, group_of, a.k, static_cast<int>(full_manifest.spurious_names.size()));
        result = {{"per_query_skew", rep.per_query_skew}, {"mean_skew", rep.mean_skew}, {"k", rep.k}};
        rr.inputs.push_back(path_entry(a.rankings));
        summary << "MaxSkew@" << a.k << ": " << rep.mean_skew;
    } else {
        const auto preds = read_predictions(a.preds);
        rr.inputs.push_back(path_entry(a.preds));
        std::vector<std::string> ids;
        for (const auto& p : preds) ids.push_back(p.sample_id);
        const auto manifest = full_manifest.aligned_to(ids);
        const auto groups = evaluation_groups(manifest, preds);
        const auto pred = predicted_classes(preds);
        if (a.metric == "wg") {
            const bool has_easy = std::any_of(manifest.samples.begin(), manifest.samples.end(),
                                              [](const ManifestSample& s) { return s.split == Split::easy; });
            GroupMetrics m;
            if (a.two_split || has_easy) {
                std::vector<Split> splits;
                for (const auto& s : manifest.samples) splits.push_back(s.split);
                m = group_metrics_two_split(groups, pred, splits);
            } else {
                m = group_metrics(groups, pred, static_cast<int>(manifest.class_names.size()),
                                  static_cast<int>(manifest.spurious_names.size()));
            }
            result = to_json(m);
            summary << "WG " << (m.worst_group ? std::to_string(*m.worst_group) : std::string("-")) << "  Avg "
                    << m.average << "  Gap " << m.gap;
            for (const auto& w : m.warnings) err << "warning: " << w << "\n";
        } else if (a.metric == "bias") {
            const auto rep = bias_metric(groups, pred, manifest.class_names, a.top);
            result = {{"per_occupation_bias", rep.per_occupation_bias}, {"overall_bias", rep.overall_bias},
                      {"top_k_occupations", rep.top_k_occupations},     {"top_k_bias", rep.top_k_bias},
                      {"excluded", rep.excluded}};
            for (const auto& e : rep.excluded) err << "warning: occupation '" << e << "' lacks a gender, excluded\n";
            summary << "Bias " << rep.overall_bias << "  top-" << a.top << " " << rep.top_k_bias;
        } else if (a.metric == "margins") {
            const auto h = margin_histogram(preds, groups, a.bins);
            result = {{"bins", h.bins}, {"G_P", h.positive}, {"G_N", h.negative}};
            if (!a.csv.empty()) {
                std::ofstream csv(a.csv);
                if (!csv) throw IoError("cannot write " + a.csv);
                csv << "bin_lo,bin_hi,G_P,G_N\n";
                for (int b = 0; b < h.bins; ++b)
                    csv << static_cast<double>(b) / h.bins << ',' << static_cast<double>(b + 1) / h.bins << ','
                        << h.positive[static_cast<std::size_t>(b)] << ',' << h.negative[static_cast<std::size_t>(b)]
                        << '\n';
                rr.outputs.push_back(path_entry(a.csv));
            }
            summary << "margin histograms over " << a.bins << " bins";
        } else {
            throw ValidationError("--metric must be wg, bias, skew or margins");
        }
    }
    binio::write_json(a.out, json{{"metric", a.metric}, {"config", rr.config}, {"result", result}});
    rr.outputs.push_back(path_entry(a.out));
    out << summary.str() << "\n";
}

struct InterpretArgs {
    std::string store, heads, class_bank, cls, role = "full", provider, attributes, method = "auto", out;
    std::vector<std::string> samples;
    bool pgm = false;
    int permutations = 2000;
    std::uint64_t seed = 0;
};

HeadSet role_heads(const json& heads_json, HeadRole role, const ModelSpec& spec) {
    const auto heads = heads_from_json(heads_json);
    switch (role) {
    case HeadRole::z_s: return heads.p_s;
    case HeadRole::z_y: return heads.p_y;
    case HeadRole::z_sy: {
        if (!heads_json.contains("p_s_direct") || !heads_json.contains("p_s_contrastive"))
            throw ValidationError("Z_SY needs a heads file produced with --spurious-task");
        const auto direct = head_set_from_json(heads_json.at("p_s_direct"), HeadSetKind::p_s);
        HeadSet sy;
        for (const auto& p : head_set_from_json(heads_json.at("p_s_contrastive"), HeadSetKind::p_s).positions)
            if (!direct.contains(p)) sy.positions.push_back(p);
        return sy;
    }
    case HeadRole::full: {
        HeadSet all;
        for (int l = 0; l < spec.n_layers; ++l)
            for (int h = 0; h < spec.n_heads; ++h) all.positions.push_back({l, h});
        return all;
    }
    }
    return {};
}

std::vector<const ActivationRecord*> pick_records(const Store& store, const std::vector<std::string>& ids) {
    std::vector<const ActivationRecord*> out;
    if (ids.empty()) {
        for (const auto& r : store.records) out.push_back(&r);
        return out;
    }
    for (const auto& id : ids) {
        const auto it = std::find_if(store.records.begin(), store.records.end(),
                                     [&](const ActivationRecord& r) { return r.sample_id == id; });
        if (it == store.records.end()) throw ValidationError("sample '" + id + "' is not in the store");
        out.push_back(&*it);
    }
    return out;
}

void run_heatmap(const InterpretArgs& a, RunRecord& rr, std::ostream& out) {
    const auto store = read_store(a.store);
    const auto heads_json = binio::read_json(a.heads);
    const auto classes = read_text_bank(a.class_bank);
    const auto role = head_role_from_string(a.role);
    const auto set = role_heads(heads_json, role, store.spec);
    const int cls = parse_class(a.cls, classes);
    fs::create_directories(a.out);
    json listing = json::array();
    for (const auto* r : pick_records(store, a.samples)) {
        const auto m = spatial_heatmap(*r, set, classes.at(cls), role);
        const auto csv = fs::path(a.out) / (r->sample_id + ".csv");
        write_heatmap_csv(m, csv);
        rr.outputs.push_back(path_entry(csv));
        if (a.pgm) {
            const auto pgm = fs::path(a.out) / (r->sample_id + ".pgm");
            write_heatmap_pgm(m, pgm);
            rr.outputs.push_back(path_entry(pgm));
        }
        listing.push_back({{"sample_id", m.sample_id}, {"rows", m.rows}, {"cols", m.cols}, {"square", m.square},
                           {"values", m.values}});
    }
    rr.config = {{"store", a.store}, {"heads", a.heads}, {"class_bank", a.class_bank}, {"class", a.cls},
                 {"role", to_string(role)}, {"pgm", a.pgm}, {"samples", a.samples}};
    binio::write_json(fs::path(a.out) / "heatmaps.json",
                      json{{"role", to_string(role)}, {"class", cls}, {"heatmaps", listing}});
    rr.outputs.push_back(path_entry(fs::path(a.out) / "heatmaps.json"));
    rr.inputs = {path_entry(a.store), path_entry(a.heads), path_entry(a.class_bank)};
    out << "wrote " << listing.size() << " heatmaps to " << a.out << "\n";
}

std::vector<TokenAttribute> parse_attributes(const std::string& s) {
    std::vector<TokenAttribute> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) {
        if (item == "Y" || item == "y") out.push_back(TokenAttribute::y);
        else if (item == "S" || item == "s") out.push_back(TokenAttribute::s);
        else if (item == "other" || item == "O" || item == "o") out.push_back(TokenAttribute::other);
        else throw ValidationError("token attribute must be Y, S or other, got '" + item + "'");
    }
    return out;
}

void run_shap(const InterpretArgs& a, RunRecord& rr, std::ostream& out) {
    if (a.samples.size() != 1) throw ValidationError("interpret shap needs exactly one --sample");
    const auto store = read_store(a.store);
    const auto heads_json = binio::read_json(a.heads);
    const auto role = head_role_from_string(a.role);
    const auto set = role_heads(heads_json, role, store.spec);
    const auto provider = TableProvider::load(a.provider);
    const auto* rec = pick_records(store, a.samples).front();
    set.validate(rec->n_layers, rec->n_heads);
    std::vector<double> sum(static_cast<std::size_t>(rec->dim), 0.0);
    for (const auto& p : set.positions) {
        const auto st = rec->head(p);
        for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += st[k];
    }
    const auto head_sum = linalg::to_float(sum);
    auto attr = shapley_text(head_sum, provider, a.permutations, a.seed, shapley_method_from_string(a.method),
                             rec->sample_id);
    attr.caption_tokens = provider.tokens();
    attr.role = role;
    json j{{"sample_id", attr.sample_id}, {"tokens", attr.caption_tokens}, {"phi", attr.phi},
           {"role", to_string(role)},     {"exact", attr.exact},           {"n_permutations", attr.n_permutations},
           {"seed", attr.seed},           {"value_full", attr.value_full}, {"value_empty", attr.value_empty}};
    if (!a.attributes.empty()) j["attribute_summary"] = attribute_summary(attr, parse_attributes(a.attributes));
    rr.config = {{"store", a.store}, {"heads", a.heads}, {"provider", a.provider}, {"role", to_string(role)},
                 {"sample", a.samples.front()}, {"permutations", a.permutations}, {"method", a.method},
                 {"attributes", a.attributes}};
    binio::write_json(a.out, j);
    rr.inputs = {path_entry(a.store), path_entry(a.heads), path_entry(a.provider)};
    rr.outputs = {path_entry(a.out)};
    out << "phi sum " << std::accumulate(attr.phi.begin(), attr.phi.end(), 0.0) << " vs v(full)-v(empty) "
        << attr.value_full - attr.value_empty << "\n";
}

struct SynthArgs {
    std::string config, out;
    std::optional<std::uint64_t> seed;
};

void run_synth(const SynthArgs& a, RunRecord& rr, std::ostream& out) {
    SynthConfig cfg;
    if (!a.config.empty()) {
        cfg = synth_config_from_json(binio::read_json(a.config));
        rr.inputs = {path_entry(a.config)};
    }
    if (a.seed) cfg.seed = *a.seed;
    cfg.validate();
    fs::create_directories(a.out);
    if (cfg.kind == "vit") {
        write_synth_vit(cfg, a.out);
    } else {
        const auto data = generate(cfg);
        write_synth_dataset(data, cfg, a.out);
    }
    binio::write_json(fs::path(a.out) / "config.json", to_json(cfg));
    rr.config = to_json(cfg);
    rr.seed = cfg.seed;
    rr.outputs = {path_entry(a.out)};
    out << "synthesized " << cfg.kind << " dataset in " << a.out << "\n";
}

struct SweepArgs {
    std::string config, out;
    int threads = 1;
};

void run_sweep(const SweepArgs& a, RunRecord& rr, std::ostream& out) {
    check_threads(a.threads);
    const auto j = binio::read_json(a.config);
    SweepSpec spec;
    try {
        spec.parameter = j.value("parameter", spec.parameter);
        spec.values = j.at("values").get<std::vector<double>>();
        spec.n_seeds = j.value("n_seeds", spec.n_seeds);
        if (j.contains("base")) spec.base = synth_config_from_json(j.at("base"));
        if (j.contains("locate")) {
            const auto& l = j.at("locate");
            spec.locate.target = lens_target_from_string(l.value("lens_target", std::string("predicted")));
            spec.locate.top1 = l.value("top1", false);
            spec.locate.spurious_task = l.value("spurious_task", false);
            spec.locate.gn_fraction = l.value("gn_fraction", 1.0);
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("sweep config: ") + e.what());
    }
    spec.locate.threads = a.threads;
    const auto rows = sweep(spec);
    write_sweep_csv(rows, a.out);
    rr.config = j;
    rr.seed = spec.base.seed;
    rr.inputs = {path_entry(a.config)};
    rr.outputs = {path_entry(a.out)};
    const auto invalid = std::count_if(rows.begin(), rows.end(), [](const SweepRow& r) { return !r.valid; });
    out << "swept " << rows.size() << " rows (" << invalid << " invalid) into " << a.out << "\n";
}

int exit_code(const std::exception& e) {
    if (dynamic_cast<const NumericError*>(&e)) return 3;
    if (dynamic_cast<const IoError*>(&e)) return 2;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return 2;
    return 1;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Locate-then-correct toolkit for attention-head debiasing", "ltc"};
    app.set_version_flag("--version", version_string());
    app.require_subcommand(1);

    DecomposeArgs dec;
    auto* c_dec = app.add_subcommand("decompose", "Per-head decomposition of a ViT over a patch set");
    c_dec->add_option("--weights", dec.weights, "weights directory")->required();
    c_dec->add_option("--patches", dec.patches, "patch set JSON")->required();
    c_dec->add_option("--out", dec.out, "output store directory")->required();
    c_dec->add_flag("--with-tokens", dec.with_tokens, "also store per-token contributions");
    c_dec->add_option("--threads", dec.threads, "worker threads");

    LocateArgs loc;
    auto* c_loc = app.add_subcommand("locate", "Locate spurious and class heads");
    c_loc->add_option("--store", loc.store)->required();
    c_loc->add_option("--manifest", loc.manifest)->required();
    c_loc->add_option("--class-bank", loc.class_bank)->required();
    c_loc->add_option("--spurious-bank", loc.spurious_bank);
    c_loc->add_flag("--spurious-task", loc.spurious_task, "also locate Z_S on the spurious task");
    c_loc->add_flag("--infer-spurious", loc.infer_spurious, "group by predicted spurious attribute");
    c_loc->add_flag("--top1", loc.top1, "keep only the top state of each set");
    c_loc->add_option("--lens-target", loc.target, "predicted | true_class");
    c_loc->add_option("--gn-fraction", loc.gn_fraction, "share of G_N samples used");
    c_loc->add_option("--seed", loc.seed);
    c_loc->add_option("--temperature", loc.temperature);
    c_loc->add_option("--threads", loc.threads);
    c_loc->add_option("--out", loc.out, "heads.json")->required();

    CorrectArgs cor;
    auto* c_cor = app.add_subcommand("correct", "Mean-ablate and inject, then classify");
    c_cor->add_option("--store", cor.store)->required();
    c_cor->add_option("--heads", cor.heads)->required();
    c_cor->add_option("--class-bank", cor.class_bank)->required();
    c_cor->add_option("--concept-bank", cor.concept_bank);
    c_cor->add_option("--manifest", cor.manifest, "needed for class-scoped concept pairs");
    c_cor->add_option("--means-store", cor.means_store, "store to take mean states from");
    c_cor->add_option("--mode", cor.mode, "full | ma | ki | random | none");
    c_cor->add_flag("--zero-ablate", cor.zero_ablate);
    c_cor->add_option("--temperature", cor.temperature);
    c_cor->add_option("--seed", cor.seed);
    c_cor->add_option("--threads", cor.threads);
    c_cor->add_option("--out", cor.out, "preds.json")->required();

    EvaluateArgs ev;
    auto* c_ev = app.add_subcommand("evaluate", "Metrics over predictions");
    c_ev->add_option("--preds", ev.preds);
    c_ev->add_option("--manifest", ev.manifest)->required();
    c_ev->add_option("--metric", ev.metric, "wg | bias | skew | margins");
    c_ev->add_option("--rankings", ev.rankings, "retrieval lists for skew");
    c_ev->add_option("--k", ev.k);
    c_ev->add_option("--top", ev.top);
    c_ev->add_option("--bins", ev.bins);
    c_ev->add_option("--csv", ev.csv, "margin histogram CSV");
    c_ev->add_flag("--two-split", ev.two_split, "easy/hard evaluation");
    c_ev->add_option("--out", ev.out)->required();

    InterpretArgs in;
    auto* c_in = app.add_subcommand("interpret", "Heatmaps and Shapley attributions");
    c_in->require_subcommand(1);
    auto* c_hm = c_in->add_subcommand("heatmap", "Per-patch contribution maps");
    auto* c_sh = c_in->add_subcommand("shap", "Shapley values over caption tokens");
    for (auto* c : {c_hm, c_sh}) {
        c->add_option("--store", in.store)->required();
        c->add_option("--heads", in.heads)->required();
        c->add_option("--role", in.role, "full | Z_S | Z_Y | Z_SY");
        c->add_option("--sample", in.samples);
        c->add_option("--out", in.out)->required();
    }
    c_hm->add_option("--class-bank", in.class_bank)->required();
    c_hm->add_option("--class", in.cls, "class label or index")->required();
    c_hm->add_flag("--pgm", in.pgm);
    c_sh->add_option("--provider", in.provider, "caption subset table")->required();
    c_sh->add_option("--permutations", in.permutations);
    c_sh->add_option("--method", in.method, "auto | exact | sampled");
    c_sh->add_option("--seed", in.seed);
    c_sh->add_option("--attributes", in.attributes, "comma list of Y/S/other per token");

    SynthArgs sy;
    std::uint64_t synth_seed = 0;
    auto* c_sy = app.add_subcommand("synth", "Generate a planted-bias dataset");
    c_sy->add_option("--config", sy.config);
    auto* seed_opt = c_sy->add_option("--seed", synth_seed);
    c_sy->add_option("--out", sy.out)->required();

    SweepArgs sw;
    auto* c_sw = app.add_subcommand("sweep", "Recovery and accuracy over a parameter grid");
    c_sw->add_option("--config", sw.config)->required();
    c_sw->add_option("--threads", sw.threads);
    c_sw->add_option("--out", sw.out, "CSV")->required();

    std::vector<const char*> argv;
    argv.push_back("ltc");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        err << app.help();
        return 1;
    }

    const auto start = std::chrono::steady_clock::now();
    RunRecord rr;
    fs::path out_path;
    try {
        if (c_dec->parsed()) {
            rr.subcommand = "decompose";
            rr.threads = dec.threads;
            out_path = dec.out;
            run_decompose(dec, rr, out);
        } else if (c_loc->parsed()) {
            rr.subcommand = "locate";
            rr.threads = loc.threads;
            rr.seed = loc.seed;
            out_path = loc.out;
            run_locate(loc, rr, out);
        } else if (c_cor->parsed()) {
            rr.subcommand = "correct";
            rr.threads = cor.threads;
            rr.seed = cor.seed;
            out_path = cor.out;
            run_correct(cor, rr, out);
        } else if (c_ev->parsed()) {
            rr.subcommand = "evaluate";
            out_path = ev.out;
            run_evaluate(ev, rr, out, err);
        } else if (c_hm->parsed()) {
            rr.subcommand = "interpret heatmap";
            out_path = in.out;
            run_heatmap(in, rr, out);
        } else if (c_sh->parsed()) {
            rr.subcommand = "interpret shap";
            rr.seed = in.seed;
            out_path = in.out;
            run_shap(in, rr, out);
        } else if (c_sy->parsed()) {
            rr.subcommand = "synth";
            if (seed_opt->count()) sy.seed = synth_seed;
            out_path = sy.out;
            run_synth(sy, rr, out);
        } else if (c_sw->parsed()) {
            rr.subcommand = "sweep";
            rr.threads = sw.threads;
            out_path = sw.out;
            run_sweep(sw, rr, out);
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        write_run_manifest(rr, out_path, secs);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code(e);
    }
    return 0;
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

} // namespace ltc::cli
