#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "heta/corpus.h"
#include "heta/error.h"
#include "heta/heta.h"
#include "heta/lm.h"

using namespace heta;
using namespace heta::core;

namespace {

lm::Model tiny_model(uint64_t seed = 23) {
    lm::ModelConfig c;
    c.layers = 2;
    c.heads = 2;
    c.d = 8;
    c.vocab = 16;
    c.maxlen = 16;
    c.seed = seed;
    lm::Vocab v = corpus::build_default_vocab(16, 2, 2);
    return lm::Model::init_random(c, v);
}

const std::vector<int64_t> kTokens = {4, 9, 12, 6, 3};
constexpr int64_t kTarget = 11;

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.numel() == b.numel());
    double m = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::fabs(a.at(i) - b.at(i)));
    return m;
}

HetaConfig base_config(Variant v) {
    HetaConfig cfg;
    cfg.variant = v;
    cfg.samples = 2;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("combiner reproduces the worked two-token example") {
    // Gate [0.5, 0.5], curvature [2, 0], information [0, 1] with equal
    // weights 0.5 must score the first token 0.5 and the second 0.25.
    HetaConfig cfg;
    CHECK(reconstruct_score(cfg, 2, 0.5, 2.0, 0.0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(reconstruct_score(cfg, 2, 0.5, 0.0, 1.0) == doctest::Approx(0.25).epsilon(1e-12));

    cfg.variant = Variant::TransitionOnly;
    CHECK(reconstruct_score(cfg, 2, 0.5, 2.0, 0.0) == 0.5);
    cfg.variant = Variant::HessianOnly;
    CHECK(reconstruct_score(cfg, 2, 0.5, 2.0, 0.0) == 2.0);
    cfg.variant = Variant::KlOnly;
    CHECK(reconstruct_score(cfg, 2, 0.5, 2.0, 1.0) == 1.0);
    cfg.variant = Variant::NoGate;
    CHECK(reconstruct_score(cfg, 2, 0.5, 2.0, 1.0) == doctest::Approx(1.5).epsilon(1e-12));
    cfg.variant = Variant::UniformGate;
    CHECK(reconstruct_score(cfg, 3, 0.5, 2.0, 1.0) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("a zero gate forces a zero score no matter the other components") {
    HetaConfig cfg;
    for (double s : {0.0, 1.0, 1e12}) {
        for (double i : {0.0, 3.5, 1e9}) {
            CHECK(reconstruct_score(cfg, 4, 0.0, s, i) == 0.0);
        }
    }
}

TEST_CASE("config validation rejects inconsistent settings") {
    HetaConfig cfg;
    CHECK_NOTHROW(cfg.validate());

    cfg.beta = 0.0;
    cfg.gamma = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.variant = Variant::TransitionOnly;
    CHECK_NOTHROW(cfg.validate());

    cfg = HetaConfig{};
    cfg.beta = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = HetaConfig{};
    cfg.variant = Variant::Windowed;
    cfg.window = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.window = 4;
    cfg.stride = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.stride = 5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.stride = 4;
    CHECK_NOTHROW(cfg.validate());

    cfg = HetaConfig{};
    cfg.variant = Variant::LayerSubset;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.layer_subset = {1};
    CHECK_NOTHROW(cfg.validate());

    cfg = HetaConfig{};
    cfg.layer_subset = {1};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = HetaConfig{};
    cfg.samples = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = HetaConfig{};
    cfg.variant = Variant::LowRank;
    cfg.rank = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("variant names round-trip") {
    for (Variant v : {Variant::Full, Variant::LowRank, Variant::LayerSubset, Variant::Windowed,
                      Variant::LowRankWindowed, Variant::GradSquared, Variant::TransitionOnly,
                      Variant::HessianOnly, Variant::KlOnly, Variant::NoGate,
                      Variant::UniformGate}) {
        CHECK(variant_from_name(variant_name(v)) == v);
    }
    CHECK_THROWS_AS(variant_from_name("fancy"), ConfigError);
}

TEST_CASE("window layout tiles the sources and stops at the boundary") {
    auto ws = window_layout(8, 4, 2);
    REQUIRE(ws.size() == 3);
    CHECK(ws[0].begin == 0);
    CHECK(ws[0].end == 4);
    CHECK(ws[1].begin == 2);
    CHECK(ws[1].end == 6);
    CHECK(ws[2].begin == 4);
    CHECK(ws[2].end == 8);

    ws = window_layout(7, 4, 2);
    REQUIRE(ws.size() == 3);
    CHECK(ws[2].begin == 4);
    CHECK(ws[2].end == 7);

    ws = window_layout(5, 8, 4);
    REQUIRE(ws.size() == 1);
    CHECK(ws[0].begin == 0);
    CHECK(ws[0].end == 5);

    ws = window_layout(6, 3, 3);
    REQUIRE(ws.size() == 2);
    CHECK(ws[1].begin == 3);
    CHECK(ws[1].end == 6);

    CHECK_THROWS_AS(window_layout(0, 4, 2), ConfigError);
    CHECK_THROWS_AS(window_layout(8, 1, 1), ConfigError);
    CHECK_THROWS_AS(window_layout(8, 4, 0), ConfigError);
    CHECK_THROWS_AS(window_layout(8, 4, 5), ConfigError);
}

TEST_CASE("window token slices keep their readout") {
    std::vector<int64_t> toks = {1, 2, 3, 4, 5, 6};
    Window w{1, 3};
    auto got = window_tokens(toks, w);
    CHECK(got == std::vector<int64_t>({2, 3, 6}));

    w = Window{0, 5};
    got = window_tokens(toks, w);
    CHECK(got == toks);

    CHECK_THROWS_AS(window_tokens(toks, Window{0, 6}), ConfigError);
    CHECK_THROWS_AS(window_tokens(toks, Window{2, 2}), ConfigError);
    CHECK_THROWS_AS(window_tokens(toks, Window{-1, 2}), ConfigError);
}

TEST_CASE("full attribution decomposes into the single-component runs") {
    lm::Model m = tiny_model();
    const int64_t N = static_cast<int64_t>(kTokens.size());

    AttributionVector full = attribute(m, kTokens, kTarget, base_config(Variant::Full));
    AttributionVector mt = attribute(m, kTokens, kTarget, base_config(Variant::TransitionOnly));
    AttributionVector hs = attribute(m, kTokens, kTarget, base_config(Variant::HessianOnly));
    AttributionVector kl = attribute(m, kTokens, kTarget, base_config(Variant::KlOnly));

    CHECK(max_abs_diff(full.m, mt.m) == 0.0);
    CHECK(max_abs_diff(full.s, hs.s) == 0.0);
    CHECK(max_abs_diff(full.i, kl.i) == 0.0);

    for (int64_t k = 0; k < N; ++k) {
        double want = full.m.at(k) * (0.5 * full.s.at(k) + 0.5 * full.i.at(k));
        CHECK(full.attr.at(k) == doctest::Approx(want).epsilon(1e-12));
        CHECK(full.attr.at(k) >= 0.0);
        CHECK(full.nu.at(k) == 1.0);
    }

    CHECK(max_abs_diff(mt.attr, mt.m) == 0.0);
    CHECK(max_abs_diff(hs.attr, hs.s) == 0.0);
    CHECK(max_abs_diff(kl.attr, kl.i) == 0.0);

    // Unused components stay zeroed rather than carrying stale values.
    for (int64_t k = 0; k < N; ++k) {
        CHECK(mt.s.at(k) == 0.0);
        CHECK(mt.i.at(k) == 0.0);
        CHECK(hs.m.at(k) == 0.0);
        CHECK(kl.m.at(k) == 0.0);
    }

    // The readout position is never masked, so its information term is zero
    // and its score rides on the gate and curvature alone.
    CHECK(full.i.at(N - 1) == 0.0);
    CHECK(full.attr.at(N - 1) ==
          doctest::Approx(full.m.at(N - 1) * 0.5 * full.s.at(N - 1)).epsilon(1e-12));

    CHECK_FALSE(full.degenerate_gate);
    CHECK(full.target_pos == N - 1);
    CHECK(full.target == kTarget);
}

TEST_CASE("ablation algebra ties the weighted variants together") {
    lm::Model m = tiny_model();
    const int64_t N = static_cast<int64_t>(kTokens.size());

    HetaConfig bs = base_config(Variant::NoGate);
    bs.beta = 1.0;
    bs.gamma = 0.0;
    AttributionVector ng_s = attribute(m, kTokens, kTarget, bs);
    AttributionVector hs = attribute(m, kTokens, kTarget, base_config(Variant::HessianOnly));
    CHECK(max_abs_diff(ng_s.attr, hs.attr) == 0.0);

    HetaConfig bi = base_config(Variant::NoGate);
    bi.beta = 0.0;
    bi.gamma = 1.0;
    AttributionVector ng_i = attribute(m, kTokens, kTarget, bi);
    AttributionVector kl = attribute(m, kTokens, kTarget, base_config(Variant::KlOnly));
    CHECK(max_abs_diff(ng_i.attr, kl.attr) == 0.0);

    AttributionVector ng = attribute(m, kTokens, kTarget, base_config(Variant::NoGate));
    AttributionVector ug = attribute(m, kTokens, kTarget, base_config(Variant::UniformGate));
    for (int64_t k = 0; k < N; ++k) {
        CHECK(ug.attr.at(k) ==
              doctest::Approx(ng.attr.at(k) / static_cast<double>(N - 1)).epsilon(1e-12));
        CHECK(ng.m.at(k) == 1.0);
        CHECK(ug.m.at(k) == doctest::Approx(1.0 / static_cast<double>(N - 1)).epsilon(1e-15));
    }
}

TEST_CASE("zero value paths degenerate the gate and zero the scores") {
    lm::Model m = tiny_model();
    for (auto& layer : m.layers) {
        std::fill(layer.wv.data(), layer.wv.data() + layer.wv.numel(), 0.0);
        std::fill(layer.bv.data(), layer.bv.data() + layer.bv.numel(), 0.0);
    }
    AttributionVector r = attribute(m, kTokens, kTarget, base_config(Variant::Full));
    CHECK(r.degenerate_gate);
    for (int64_t k = 0; k < r.attr.numel(); ++k) {
        CHECK(r.m.at(k) == 0.0);
        CHECK(r.attr.at(k) == 0.0);
    }
}

TEST_CASE("a window covering the whole sequence reproduces the plain run") {
    lm::Model m = tiny_model();

    HetaConfig win = base_config(Variant::Windowed);
    win.window = 8;
    win.stride = 4;
    AttributionVector w = attribute(m, kTokens, kTarget, win);
    AttributionVector f = attribute(m, kTokens, kTarget, base_config(Variant::Full));

    CHECK(max_abs_diff(w.attr, f.attr) == 0.0);
    CHECK(max_abs_diff(w.m, f.m) == 0.0);
    CHECK(max_abs_diff(w.s, f.s) == 0.0);
    CHECK(max_abs_diff(w.i, f.i) == 0.0);
    for (int64_t k = 0; k < w.nu.numel(); ++k) CHECK(w.nu.at(k) == 1.0);

    HetaConfig lrw = base_config(Variant::LowRankWindowed);
    lrw.window = 8;
    lrw.stride = 4;
    lrw.rank = 4;
    AttributionVector lw = attribute(m, kTokens, kTarget, lrw);
    HetaConfig lr = base_config(Variant::LowRank);
    lr.rank = 4;
    AttributionVector lo = attribute(m, kTokens, kTarget, lr);
    CHECK(max_abs_diff(lw.attr, lo.attr) == 0.0);
    CHECK(lw.tau_hat == lo.tau_hat);
}

TEST_CASE("half-overlapping windows double-cover the interior") {
    lm::Model m = tiny_model();
    std::vector<int64_t> toks = {4, 9, 12, 6, 3, 10, 5, 13, 2, 7};
    const int64_t N = static_cast<int64_t>(toks.size());

    HetaConfig cfg = base_config(Variant::Windowed);
    cfg.window = 4;
    cfg.stride = 2;
    cfg.samples = 1;
    AttributionVector r = attribute(m, toks, 11, cfg);

    // Nine sources, windows [0,4) [2,6) [4,8) [6,9): the interior is visited
    // twice, the edges once, the readout rides along with every window.
    CHECK(r.nu.at(0) == 1.0);
    CHECK(r.nu.at(1) == 1.0);
    for (int64_t k = 2; k <= 7; ++k) CHECK(r.nu.at(k) == 2.0);
    CHECK(r.nu.at(8) == 1.0);
    CHECK(r.nu.at(N - 1) == 4.0);

    // Curvature runs on the full context, so window averaging returns it
    // unchanged; the gate stays a per-window average in [0, 1].
    HetaConfig fc = base_config(Variant::Full);
    fc.samples = 1;
    AttributionVector f = attribute(m, toks, 11, fc);
    CHECK(max_abs_diff(r.s, f.s) <= 1e-12);
    for (int64_t k = 0; k < N; ++k) {
        CHECK(r.m.at(k) >= 0.0);
        CHECK(r.m.at(k) <= 1.0);
    }
    CHECK(r.i.at(N - 1) == 0.0);
}

TEST_CASE("span attribution sums its teacher-forced pieces") {
    lm::Model m = tiny_model();
    std::vector<int64_t> toks = {4, 9, 12, 6, 3, 10};
    const int64_t N = static_cast<int64_t>(toks.size());

    HetaConfig cfg = base_config(Variant::Full);
    cfg.samples = 1;

    AttributionVector span = attribute_span(m, toks, 3, 2, cfg);
    std::vector<int64_t> p1(toks.begin(), toks.begin() + 3);
    std::vector<int64_t> p2(toks.begin(), toks.begin() + 4);
    AttributionVector a1 = attribute(m, p1, toks[3], cfg);
    AttributionVector a2 = attribute(m, p2, toks[4], cfg);

    for (int64_t k = 0; k < N; ++k) {
        double want = 0.0;
        if (k < a1.attr.numel()) want += a1.attr.at(k);
        if (k < a2.attr.numel()) want += a2.attr.at(k);
        CHECK(span.attr.at(k) == want);
    }
    CHECK(span.attr.at(4) == 0.0);
    CHECK(span.attr.at(5) == 0.0);
    CHECK(span.hvp_count == a1.hvp_count + a2.hvp_count);
    CHECK(span.target_pos == 3);
    CHECK(span.target == toks[3]);

    AttributionVector one = attribute_span(m, toks, 3, 1, cfg);
    for (int64_t k = 0; k < a1.attr.numel(); ++k) {
        CHECK(one.attr.at(k) == a1.attr.at(k));
        CHECK(one.m.at(k) == a1.m.at(k));
        CHECK(one.s.at(k) == a1.s.at(k));
        CHECK(one.i.at(k) == a1.i.at(k));
    }
    for (int64_t k = a1.attr.numel(); k < N; ++k) CHECK(one.attr.at(k) == 0.0);

    CHECK_THROWS_AS(attribute_span(m, toks, 0, 2, cfg), ConfigError);
    CHECK_THROWS_AS(attribute_span(m, toks, 3, 0, cfg), ConfigError);
    CHECK_THROWS_AS(attribute_span(m, toks, 3, 4, cfg), ConfigError);
}

TEST_CASE("span runs pool the sketch tails in quadrature") {
    lm::Model m = tiny_model();
    std::vector<int64_t> toks = {4, 9, 12, 6, 3};

    HetaConfig cfg = base_config(Variant::LowRank);
    cfg.rank = 2;
    cfg.samples = 2;

    AttributionVector span = attribute_span(m, toks, 3, 2, cfg);
    std::vector<int64_t> p1(toks.begin(), toks.begin() + 3);
    std::vector<int64_t> p2(toks.begin(), toks.begin() + 4);
    AttributionVector a1 = attribute(m, p1, toks[3], cfg);
    AttributionVector a2 = attribute(m, p2, toks[4], cfg);

    double want = std::sqrt(a1.tau_hat * a1.tau_hat + a2.tau_hat * a2.tau_hat);
    CHECK(span.tau_hat == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("gradient-squared variant runs without curvature probes") {
    lm::Model m = tiny_model();
    HetaConfig cfg = base_config(Variant::GradSquared);
    AttributionVector r = attribute(m, kTokens, kTarget, cfg);
    CHECK(r.hvp_count == 0);
    CHECK(r.tau_hat == 0.0);

    curv::CurvatureConfig cc;
    cc.mode = curv::Mode::GradSquared;
    cc.seed = cfg.seed;
    curv::SensitivityVector sv = block_sensitivity(m, kTokens, kTarget, cc);
    CHECK(max_abs_diff(r.s, sv.s) == 0.0);
}

TEST_CASE("layer-subset variant restricts both the gate and the curvature") {
    lm::Model m = tiny_model();

    HetaConfig top = base_config(Variant::LayerSubset);
    top.layer_subset = {1};
    AttributionVector rt = attribute(m, kTokens, kTarget, top);
    CHECK(rt.hvp_count ==
          top.samples * static_cast<int64_t>(kTokens.size()));

    HetaConfig both = base_config(Variant::LayerSubset);
    both.layer_subset = {0, 1};
    AttributionVector rb = attribute(m, kTokens, kTarget, both);
    AttributionVector rf = attribute(m, kTokens, kTarget, base_config(Variant::Full));

    CHECK(max_abs_diff(rb.m, rf.m) <= 1e-12);
    CHECK(max_abs_diff(rb.s, rf.s) <= 1e-9);
    CHECK(max_abs_diff(rb.attr, rf.attr) <= 1e-9);
    CHECK(max_abs_diff(rt.s, rf.s) > 1e-8);

    HetaConfig bad = base_config(Variant::LayerSubset);
    bad.layer_subset = {0};
    CHECK_THROWS_AS(attribute(m, kTokens, kTarget, bad), ConfigError);
}

TEST_CASE("repeat runs are bit-identical and seeds matter") {
    lm::Model m = tiny_model();
    HetaConfig cfg = base_config(Variant::LowRankWindowed);
    cfg.window = 3;
    cfg.stride = 2;
    cfg.rank = 2;
    cfg.seed = 5;

    AttributionVector a = attribute(m, kTokens, kTarget, cfg);
    AttributionVector b = attribute(m, kTokens, kTarget, cfg);
    CHECK(max_abs_diff(a.attr, b.attr) == 0.0);
    CHECK(max_abs_diff(a.s_variance, b.s_variance) == 0.0);
    CHECK(a.tau_hat == b.tau_hat);

    cfg.seed = 6;
    AttributionVector c = attribute(m, kTokens, kTarget, cfg);
    CHECK(max_abs_diff(a.s, c.s) > 0.0);
}

TEST_CASE("attribution rejects degenerate inputs") {
    lm::Model m = tiny_model();
    HetaConfig cfg = base_config(Variant::Full);
    CHECK_THROWS_AS(attribute(m, {4}, kTarget, cfg), ConfigError);
    HetaConfig bad = cfg;
    bad.beta = 0.0;
    bad.gamma = 0.0;
    CHECK_THROWS_AS(attribute(m, kTokens, kTarget, bad), ConfigError);
}

TEST_CASE("weight fitting recovers a planted combination") {
    std::vector<SubsetObservation> obs;
    const std::vector<double> us = {1.0, 2.0, 0.5, 3.0, 1.5};
    const std::vector<double> vs = {0.5, 0.25, 2.0, 1.0, 0.75};
    for (size_t j = 0; j < us.size(); ++j)
        obs.push_back({us[j], vs[j], 1.0 * us[j] + 0.0 * vs[j]});

    FitResult fit = fit_weights(obs);
    CHECK(fit.beta == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(fit.gamma == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));
    CHECK(fit.loss <= 1e-12);
    CHECK_FALSE(fit.collinear);

    obs.clear();
    for (size_t j = 0; j < us.size(); ++j)
        obs.push_back({us[j], vs[j], 0.3 * us[j] + 0.7 * vs[j]});
    fit = fit_weights(obs);
    CHECK(fit.beta == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(fit.gamma == doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("weight fitting clamps to the feasible quadrant") {
    // The unconstrained optimum has a negative second weight; the constrained
    // answer must sit on an axis and beat a dense grid over the quadrant.
    std::vector<SubsetObservation> obs;
    const std::vector<double> us = {1.0, 2.0, 0.5, 3.0, 1.5};
    const std::vector<double> vs = {0.5, 0.25, 2.0, 1.0, 0.75};
    for (size_t j = 0; j < us.size(); ++j)
        obs.push_back({us[j], vs[j], 1.0 * us[j] - 0.5 * vs[j]});

    FitResult fit = fit_weights(obs);
    CHECK(fit.gamma == 0.0);
    CHECK(fit.beta >= 0.0);

    double grid_best = 1e300;
    for (int bi = 0; bi <= 200; ++bi) {
        for (int gi = 0; gi <= 200; ++gi) {
            grid_best = std::min(grid_best, fit_loss(obs, bi * 0.01, gi * 0.01));
        }
    }
    CHECK(fit.loss <= grid_best + 1e-9);
}

TEST_CASE("weight fitting flags collinear features") {
    std::vector<SubsetObservation> obs;
    for (double u : {1.0, 2.0, 3.0, 4.0}) obs.push_back({u, 2.0 * u, 3.0 * u});
    FitResult fit = fit_weights(obs);
    CHECK(fit.collinear);
    CHECK(fit.beta >= 0.0);
    CHECK(fit.gamma >= 0.0);
    // Either axis explains the planted target exactly up to the shared scale.
    CHECK(fit.loss <= fit_loss(obs, 3.0, 0.0) + 1e-12);

    CHECK_THROWS_AS(fit_weights({}), ConfigError);
    CHECK_THROWS_AS(fit_loss({}, 0.5, 0.5), ConfigError);
}
