#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ltc/cli.hpp"
#include "ltc/synthgen.hpp"
#include "ltc/vit.hpp"
#include "support.hpp"

using nlohmann::json;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = ltc::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

json read(const std::filesystem::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("version and help succeed") {
    const auto v = run({"--version"});
    CHECK(v.code == 0);
    CHECK(v.out.find(ltc::cli::version_string()) != std::string::npos);
    CHECK(v.out.rfind("ltc ", 0) == 0);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("usage errors exit 1 with usage text") {
    const auto r = run({"locate", "--bogus"});
    CHECK(r.code == 1);
    CHECK_FALSE(r.err.empty());
    CHECK(run({}).code == 1);
    CHECK(run({"frobnicate"}).code == 1);
}

TEST_CASE("missing inputs exit 2") {
    testing::TempDir dir;
    const auto r = run({"locate", "--store", (dir / "nope").string(), "--manifest", (dir / "m.csv").string(),
                        "--class-bank", (dir / "b.json").string(), "--out", (dir / "h.json").string()});
    CHECK(r.code == 2);
    CHECK_FALSE(r.err.empty());
}

TEST_CASE("numeric failures exit 3") {
    testing::TempDir dir;
    auto w = ltc::random_vit({4, 1, 2, 4, 2, 2}, 8);
    w.ln_mode = ltc::LayerNormMode::bypass;
    w.patch_embed.data.assign(w.patch_embed.data.size(), 1e38f);
    for (auto& l : w.layers) {
        l.heads[0].value.data.assign(l.heads[0].value.data.size(), 1e38f);
        l.heads[0].output.data.assign(l.heads[0].output.data.size(), 1e38f);
    }
    ltc::write_weights(w, dir / "w");
    ltc::PatchSet ps;
    ps.sample_ids = {"a"};
    ps.n_patches = 1;
    ps.patch_dim = 2;
    ps.data = {1e38f, 1e38f};
    ltc::write_patches(ps, dir / "p.json");
    const auto r = run({"decompose", "--weights", (dir / "w").string(), "--patches", (dir / "p.json").string(), "--out",
                        (dir / "store").string()});
    CHECK(r.code == 3);
    CHECK(r.err.find("layer") != std::string::npos);
}

TEST_CASE("end-to-end pipeline on synthetic data improves worst-group accuracy") {
    testing::TempDir dir;
    const auto d = dir.path();
    const auto p = [&](const char* name) { return (d / name).string(); };

    REQUIRE(run({"synth", "--seed", "0", "--out", p("data")}).code == 0);
    CHECK(std::filesystem::exists(d / "data/run_manifest.json"));

    REQUIRE(run({"locate", "--store", p("data/store"), "--manifest", p("data/manifest.csv"), "--class-bank",
                 p("data/class_bank.json"), "--out", p("heads.json")})
                .code == 0);
    const auto heads = read(d / "heads.json");
    CHECK(heads.at("p_s").size() == 1);
    CHECK(heads.at("p_y").size() == 2);
    CHECK(std::filesystem::exists(d / "heads.run.json"));

    double wg[2] = {0, 0};
    const char* modes[2] = {"none", "full"};
    for (int i = 0; i < 2; ++i) {
        const std::string preds = p(i ? "full.json" : "zs.json"), report = p(i ? "full_wg.json" : "zs_wg.json");
        REQUIRE(run({"correct", "--store", p("data/store"), "--heads", p("heads.json"), "--class-bank",
                     p("data/class_bank.json"), "--concept-bank", p("data/concept_bank.json"), "--mode", modes[i],
                     "--out", preds})
                    .code == 0);
        REQUIRE(run({"evaluate", "--preds", preds, "--manifest", p("data/manifest.csv"), "--metric", "wg", "--out",
                     report})
                    .code == 0);
        wg[i] = read(report).at("result").at("worst_group").get<double>();
    }
    CHECK(wg[1] > wg[0]);

    SUBCASE("single-threaded reruns are bit-exact and threads do not change predictions") {
        const auto args = [&](const std::string& out, const char* threads) {
            return std::vector<std::string>{"correct", "--store", p("data/store"), "--heads", p("heads.json"),
                                            "--class-bank", p("data/class_bank.json"), "--concept-bank",
                                            p("data/concept_bank.json"), "--threads", threads, "--out", out};
        };
        REQUIRE(run(args(p("again.json"), "1")).code == 0);
        REQUIRE(run(args(p("again2.json"), "1")).code == 0);
        REQUIRE(run(args(p("threaded.json"), "4")).code == 0);
        CHECK(slurp(d / "again.json") == slurp(d / "again2.json"));
        CHECK(read(d / "again.json").at("predictions") == read(d / "threaded.json").at("predictions"));
    }
    SUBCASE("margins and heatmap outputs") {
        REQUIRE(run({"evaluate", "--preds", p("zs.json"), "--manifest", p("data/manifest.csv"), "--metric", "margins",
                     "--bins", "5", "--out", p("margins.json")})
                    .code == 0);
        const auto m = read(d / "margins.json").at("result");
        std::size_t total = 0;
        for (const auto& key : {"G_P", "G_N"})
            for (const auto& c : m.at(key)) total += c.get<std::size_t>();
        CHECK(total == 800);
        // The synthetic store carries no token tensor.
        CHECK(run({"interpret", "heatmap", "--store", p("data/store"), "--heads", p("heads.json"), "--class-bank",
                   p("data/class_bank.json"), "--class", "waterbird", "--out", p("maps")})
                  .code == 1);
    }
}

TEST_CASE("synth configs and sweeps run from files") {
    testing::TempDir dir;
    ltc::SynthConfig c;
    c.n_samples = {30, 30, 30, 30};
    c.with_tokens = true;
    c.model_spec.n_tokens = 9;
    {
        std::ofstream(dir / "cfg.json") << ltc::to_json(c).dump();
        std::ofstream(dir / "sweep.json") << json{{"parameter", "gn_fraction"}, {"values", {0.5, 1.0}}, {"base", ltc::to_json(c)}}.dump();
    }
    REQUIRE(run({"synth", "--config", (dir / "cfg.json").string(), "--out", (dir / "data").string()}).code == 0);
    REQUIRE(run({"locate", "--store", (dir / "data/store").string(), "--manifest", (dir / "data/manifest.csv").string(),
                 "--class-bank", (dir / "data/class_bank.json").string(), "--out", (dir / "heads.json").string()})
                .code == 0);
    const auto hm = run({"interpret", "heatmap", "--store", (dir / "data/store").string(), "--heads",
                         (dir / "heads.json").string(), "--class-bank", (dir / "data/class_bank.json").string(),
                         "--class", "1", "--role", "Z_S", "--sample", "val000000", "--pgm", "--out",
                         (dir / "maps").string()});
    CHECK(hm.code == 0);
    CHECK(std::filesystem::exists(dir / "maps/val000000.csv"));
    CHECK(std::filesystem::exists(dir / "maps/val000000.pgm"));

    CHECK(run({"sweep", "--config", (dir / "sweep.json").string(), "--out", (dir / "sweep.csv").string()}).code == 0);
    CHECK(std::filesystem::exists(dir / "sweep.csv"));
    CHECK(std::filesystem::exists(dir / "sweep.run.json"));

    std::ofstream(dir / "bad.json") << R"({"values": [1.0, 2.0], "parameter": "nonsense"})";
    CHECK(run({"sweep", "--config", (dir / "bad.json").string(), "--out", (dir / "x.csv").string()}).code == 1);
}

TEST_CASE("run manifests record the subcommand, version and input checksums") {
    testing::TempDir dir;
    REQUIRE(run({"synth", "--seed", "3", "--out", (dir / "data").string()}).code == 0);
    const auto m = read(dir / "data/run_manifest.json");
    CHECK(m.at("subcommand") == "synth");
    CHECK(m.at("version").get<std::string>() == ltc::cli::version_string());
    CHECK(m.contains("wall_time_s"));
    CHECK(m.contains("config"));
}
