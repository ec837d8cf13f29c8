#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "heta/corpus.h"
#include "heta/error.h"
#include "heta/lm.h"
#include "heta/report.h"
#include "heta/theory.h"

using namespace heta;
using namespace heta::report;

namespace {

lm::Model tiny_model(uint64_t seed = 31) {
    lm::ModelConfig c;
    c.layers = 2;
    c.heads = 2;
    c.d = 8;
    c.vocab = 16;
    c.maxlen = 8;
    c.seed = seed;
    lm::Vocab v = corpus::build_default_vocab(16, 2, 2);
    return lm::Model::init_random(c, v);
}

const std::vector<int64_t> kTokens = {4, 9, 12, 6, 3};
constexpr int64_t kTarget = 11;

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(static_cast<bool>(f));
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    REQUIRE(static_cast<bool>(f));
    f << text;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/heta_report_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

core::HetaConfig spicy_config() {
    core::HetaConfig cfg;
    cfg.variant = core::Variant::LowRankWindowed;
    cfg.beta = 0.2;
    cfg.gamma = 0.8;
    cfg.scheme = info::MaskScheme::Mean;
    cfg.window = 4;
    cfg.stride = 2;
    cfg.samples = 4;
    cfg.rank = 2;
    cfg.seed = 12345678901234567ULL;
    cfg.exact_tail = false;
    return cfg;
}

}  // namespace

TEST_CASE("attribution reports round-trip byte for byte") {
    lm::Model model = tiny_model();
    core::HetaConfig cfg = spicy_config();
    core::AttributionVector av = core::attribute(model, kTokens, kTarget, cfg);

    AttributionRecord rec =
        attribution_record("inst-0", kTokens, av, {{"curvature", 12.5}, {"gate", 1.25}});
    core::HetaConfig plain;
    core::AttributionVector av2 = core::attribute(model, kTokens, kTarget, plain);
    AttributionRecord rec2 = attribution_record("inst-1", kTokens, av2, {});

    TempFile f("attr.jsonl");
    save_attributions({rec, rec2}, f.path);
    std::string first = slurp(f.path);

    std::vector<AttributionRecord> back = load_attributions(f.path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "inst-0");
    CHECK(back[0].tokens == kTokens);
    CHECK(back[0].target == kTarget);
    CHECK(back[0].target_pos == av.target_pos);
    CHECK(back[0].attr == rec.attr);
    CHECK(back[0].m == rec.m);
    CHECK(back[0].s == rec.s);
    CHECK(back[0].i == rec.i);
    CHECK(back[0].tau_hat == rec.tau_hat);
    CHECK(back[0].hvp_count == rec.hvp_count);
    CHECK(back[0].timings_ms.at("curvature") == 12.5);

    // The resolved configuration echoes exactly, including the big seed.
    CHECK(back[0].config.variant == core::Variant::LowRankWindowed);
    CHECK(back[0].config.beta == 0.2);
    CHECK(back[0].config.gamma == 0.8);
    CHECK(back[0].config.scheme == info::MaskScheme::Mean);
    CHECK(back[0].config.window == 4);
    CHECK(back[0].config.stride == 2);
    CHECK(back[0].config.samples == 4);
    CHECK(back[0].config.rank == 2);
    CHECK(back[0].config.seed == 12345678901234567ULL);
    CHECK_FALSE(back[0].config.exact_tail);

    save_attributions(back, f.path);
    CHECK(slurp(f.path) == first);
}

TEST_CASE("attribution record rejects mismatched score lengths") {
    lm::Model model = tiny_model();
    core::AttributionVector av = core::attribute(model, kTokens, kTarget, core::HetaConfig{});
    std::vector<int64_t> wrong = {4, 9, 12};
    CHECK_THROWS_AS(attribution_record("x", wrong, av, {}), ShapeError);
}

TEST_CASE("loaders report the offending line or record") {
    TempFile f("broken.jsonl");

    // Truncated mid-record: the parse error carries the 1-based line number.
    spit(f.path,
         "{\"schema_version\":1,\"name\":\"a\",\"instance\":\"i\",\"lhs\":0.0,\"rhs\":1.0}\n"
         "{\"schema_version\":1,\"name\":\"b\",\"ins");
    try {
        load_bounds(f.path);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }

    // Unknown schema version is rejected outright, also with the line.
    spit(f.path, "{\"schema_version\":99,\"name\":\"a\",\"instance\":\"i\",\"lhs\":0,\"rhs\":1}\n");
    try {
        load_bounds(f.path);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        std::string msg = e.what();
        CHECK(msg.find(":1:") != std::string::npos);
        CHECK(msg.find("99") != std::string::npos);
    }

    // A well-formed line missing a field names the record.
    spit(f.path, "{\"schema_version\":1,\"name\":\"a\",\"instance\":\"i\",\"lhs\":0.0}\n");
    try {
        load_bounds(f.path);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }

    // Score arrays must match the token count.
    spit(f.path,
         "{\"schema_version\":1,\"id\":\"x\",\"tokens\":[1,2,3],\"target\":5,"
         "\"target_pos\":2,\"attr\":[0.0],\"m\":[0.0],\"s\":[0.0],\"i\":[0.0],"
         "\"degenerate_gate\":false,\"degenerate_path\":false,\"tau_hat\":0.0,"
         "\"hvp_count\":0,\"config\":{\"variant\":\"full\",\"beta\":0.5,\"gamma\":0.5,"
         "\"scheme\":\"sentinel\",\"window\":32,\"stride\":16,\"layer_subset\":[],"
         "\"samples\":8,\"rank\":8,\"seed\":0,\"exact_tail\":true},\"timings_ms\":{}}\n");
    try {
        load_attributions(f.path);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }
}

TEST_CASE("eval reports aggregate per method and round-trip") {
    std::vector<EvalRecord> records = {
        {"a", "full", {{"dsa", 0.5}, {"f1", 1.0}}},
        {"b", "full", {{"dsa", 0.7}, {"f1", 0.0}}},
        {"a", "grad", {{"dsa", 0.1}}},
    };
    EvalReport rep = aggregate_eval(records);

    const MetricAggregate& dsa = rep.aggregates.at("full").at("dsa");
    CHECK(dsa.n == 2);
    CHECK(dsa.mean == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(dsa.stddev == doctest::Approx(std::sqrt(0.02)).epsilon(1e-12));
    CHECK(dsa.se == doctest::Approx(std::sqrt(0.02) / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(rep.aggregates.at("grad").at("dsa").n == 1);
    CHECK(rep.aggregates.at("grad").at("dsa").stddev == 0.0);

    TempFile f("eval.jsonl");
    save_eval(rep, f.path);
    std::string first = slurp(f.path);
    EvalReport back = load_eval(f.path);
    REQUIRE(back.records.size() == 3);
    CHECK(back.records[0].id == "a");
    CHECK(back.records[0].metrics.at("dsa") == 0.5);
    CHECK(back.aggregates.at("full").at("dsa").mean == dsa.mean);
    save_eval(back, f.path);
    CHECK(slurp(f.path) == first);

    TempFile s("eval_summary.json");
    save_eval_summary(rep, s.path);
    std::string summary = slurp(s.path);
    CHECK(summary.find("\"full\"") != std::string::npos);
    CHECK(summary.find("\"dsa\"") != std::string::npos);
    CHECK(summary.find("\"mean\"") != std::string::npos);
    CHECK(summary.back() == '\n');
}

TEST_CASE("bound reports persist the raw numbers and recheck on load") {
    std::vector<theory::BoundReport> reps = {
        theory::make_bound("pinsker-floor", 0.1, 0.5, "i0"),
        theory::make_bound("pinsker-floor", 0.2, 0.25, "i1"),
        theory::make_bound("gate-simplex", 2.0, 1.0, "i0"),  // violated
    };

    TempFile f("bounds.jsonl");
    save_bounds(reps, f.path);
    std::string first = slurp(f.path);

    std::vector<theory::BoundReport> back = load_bounds(f.path);
    REQUIRE(back.size() == 3);
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].name == reps[i].name);
        CHECK(back[i].lhs == reps[i].lhs);
        CHECK(back[i].rhs == reps[i].rhs);
        CHECK(back[i].satisfied == reps[i].satisfied);
        CHECK(back[i].slack == reps[i].slack);
    }
    CHECK_FALSE(back[2].satisfied);

    save_bounds(back, f.path);
    CHECK(slurp(f.path) == first);
}

TEST_CASE("bound markdown rolls up by check name") {
    std::vector<theory::BoundReport> reps = {
        theory::make_bound("pinsker-floor", 0.1, 0.5, "i0"),
        theory::make_bound("pinsker-floor", 0.2, 0.25, "i1"),
        theory::make_bound("gate-simplex", 2.0, 1.0, "i0"),
    };
    std::string md = bounds_markdown(reps);

    CHECK(md.find("| check | count | violated | min slack |") != std::string::npos);
    CHECK(md.find("| pinsker-floor | 2 | 0 | 0.05 |") != std::string::npos);
    CHECK(md.find("| gate-simplex | 1 | 1 | -1 |") != std::string::npos);
    CHECK(md.find("| total | 3 | 1 | |") != std::string::npos);

    std::string empty = bounds_markdown({});
    CHECK(empty.find("| total | 0 | 0 | |") != std::string::npos);
}
