#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "heta/corpus.h"
#include "heta/error.h"
#include "heta/kahan.h"
#include "heta/lm.h"
#include "heta/metrics.h"

using namespace heta;
using namespace heta::metrics;

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

// Positions: seg1 = {0,1}, seg2 = {3,4,5}, support = {3,4}, question = {7,8}.
CuratedInstance demo_instance() {
    CuratedInstance inst;
    inst.segment1 = {0, 1};
    inst.segment2 = {3, 4, 5};
    inst.support = {3, 4};
    inst.question = {7, 8};
    inst.target = 2;
    return inst;
}

}  // namespace

TEST_CASE("dsa reproduces the hand-worked mass splits") {
    CuratedInstance inst = demo_instance();
    Tensor attr = Tensor::vec(10);

    // All mass on the support.
    attr.at(3) = 0.7;
    attr.at(4) = 0.3;
    CHECK(dsa(attr, inst) == doctest::Approx(1.0).epsilon(1e-12));

    // All mass on the distractor segment.
    attr = Tensor::vec(10);
    attr.at(0) = 0.2;
    attr.at(1) = 0.8;
    CHECK(dsa(attr, inst) == doctest::Approx(-1.0).epsilon(1e-12));

    // 0.6 on support, 0.3 on segment 1, 0.1 elsewhere in segment 2.
    attr = Tensor::vec(10);
    attr.at(3) = 0.4;
    attr.at(4) = 0.2;
    attr.at(0) = 0.3;
    attr.at(5) = 0.1;
    CHECK(dsa(attr, inst) == doctest::Approx(0.3).epsilon(1e-12));

    // Mass outside the two segments is ignored by the score.
    attr.at(7) = 5.0;
    attr.at(9) = 2.0;
    CHECK(dsa(attr, inst) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("dsa rejects degenerate and malformed inputs") {
    CuratedInstance inst = demo_instance();
    Tensor zero = Tensor::vec(10);
    CHECK_THROWS_AS(dsa(zero, inst), ConfigError);

    Tensor neg = Tensor::vec(10);
    neg.at(3) = 1.0;
    neg.at(0) = -0.1;
    CHECK_THROWS_AS(dsa(neg, inst), ConfigError);

    Tensor ok = Tensor::vec(10);
    ok.at(3) = 1.0;
    CuratedInstance bad = inst;
    bad.support = {0};  // support outside segment 2
    CHECK_THROWS_AS(dsa(ok, bad), ConfigError);
    bad = inst;
    bad.support.clear();
    CHECK_THROWS_AS(dsa(ok, bad), ConfigError);
    bad = inst;
    bad.segment1 = {3};  // overlaps segment 2
    CHECK_THROWS_AS(dsa(ok, bad), ConfigError);
    bad = inst;
    bad.segment2.push_back(99);  // outside the vector
    CHECK_THROWS_AS(dsa(ok, bad), ConfigError);
}

TEST_CASE("curated_from_tokens maps the token layout to position sets") {
    corpus::InstanceTokens it;
    it.input = std::vector<int64_t>(12, 5);
    it.target = 7;
    it.seg1_begin = 0;
    it.seg1_end = 4;
    it.seg2_begin = 5;
    it.seg2_end = 9;
    it.support_global = {6, 7};

    CuratedInstance inst = curated_from_tokens(it);
    CHECK(inst.segment1 == std::vector<int64_t>{0, 1, 2, 3});
    CHECK(inst.segment2 == std::vector<int64_t>{5, 6, 7, 8});
    CHECK(inst.support == std::vector<int64_t>{6, 7});
    CHECK(inst.question == std::vector<int64_t>{10, 11});
    CHECK(inst.target == 7);

    // A realistic record goes through the same path.
    corpus::CorpusSpec spec;
    spec.n_records = 1;
    spec.seg1_len = 2;
    spec.seg2_len = 2;
    spec.n_answers = 2;
    spec.n_questions = 2;
    lm::Vocab v = corpus::build_default_vocab(16, 2, 2);
    auto recs = corpus::generate_planted_corpus(spec, v, 3);
    corpus::InstanceTokens real = corpus::instance_tokens(recs[0], v);
    CuratedInstance ri = curated_from_tokens(real);
    CHECK(ri.segment1.size() == 2);
    CHECK(ri.segment2.size() == 2);
    CHECK_FALSE(ri.support.empty());
    CHECK_FALSE(ri.question.empty());
}

TEST_CASE("normalize_unit scales by the max and keeps zeros") {
    Tensor a = Tensor::from_vec({0.0, 2.0, 4.0});
    Tensor u = normalize_unit(a);
    CHECK(u.at(0) == 0.0);
    CHECK(u.at(1) == 0.5);
    CHECK(u.at(2) == 1.0);

    Tensor z = Tensor::vec(3);
    Tensor uz = normalize_unit(z);
    for (int64_t i = 0; i < 3; ++i) CHECK(uz.at(i) == 0.0);

    Tensor neg = Tensor::from_vec({-1.0, 1.0});
    CHECK_THROWS_AS(normalize_unit(neg), ConfigError);
}

TEST_CASE("soft scores collapse to the zeroed-context drop at the extremes") {
    lm::Model model = tiny_model();
    const int64_t N = static_cast<int64_t>(kTokens.size());

    lm::ForwardTrace tr = model.forward(kTokens);
    double g_orig = model.target_logprob(tr, kTarget);

    Tensor emb = model.embed(kTokens);
    for (int64_t i = 0; i < N - 1; ++i)
        for (int64_t c = 0; c < emb.cols(); ++c) emb.at(i, c) = 0.0;
    lm::ForwardOptions fo;
    fo.emb_override = emb;
    lm::ForwardTrace tz = model.forward(kTokens, fo);
    double g_zeroed = model.target_logprob(tz, kTarget);

    Tensor ones = Tensor::vec(N);
    for (int64_t i = 0; i < N; ++i) ones.at(i) = 1.0;
    SoftScores s1 = soft_nc_ns(model, kTokens, kTarget, ones);
    CHECK(s1.soft_nc == g_orig - g_zeroed);
    CHECK(s1.soft_ns == 0.0);

    Tensor zeros = Tensor::vec(N);
    SoftScores s0 = soft_nc_ns(model, kTokens, kTarget, zeros);
    CHECK(s0.soft_nc == 0.0);
    CHECK(s0.soft_ns == s1.soft_nc);

    Tensor out_of_range = Tensor::vec(N);
    out_of_range.at(0) = 1.5;
    CHECK_THROWS_AS(soft_nc_ns(model, kTokens, kTarget, out_of_range), ConfigError);
}

TEST_CASE("perturbation curves satisfy their endpoint identities") {
    lm::Model model = tiny_model();
    const int64_t N = static_cast<int64_t>(kTokens.size());
    const int64_t C = N - 1;

    Tensor attr = Tensor::from_vec({0.4, 0.1, 0.9, 0.2, 0.0});
    PerturbationCurves pc = perturbation_curves(model, kTokens, kTarget, attr);

    CHECK(static_cast<int64_t>(pc.morf.size()) == C);
    CHECK(static_cast<int64_t>(pc.lerf.size()) == C);
    CHECK(static_cast<int64_t>(pc.ins.size()) == C);
    CHECK(pc.p_orig > 0.0);
    CHECK(pc.p_orig <= 1.0);
    for (int64_t k = 0; k < C; ++k) {
        CHECK(pc.morf[k] >= 0.0);
        CHECK(pc.morf[k] <= 1.0);
        CHECK(pc.lerf[k] >= 0.0);
        CHECK(pc.ins[k] >= 0.0);
    }

    // Restoring every context token is the unmasked forward; deleting every
    // context token is the fully masked one, whichever order got us there.
    CHECK(pc.ins[C - 1] == pc.p_orig);
    CHECK(pc.morf[C - 1] == pc.p_all_masked);
    CHECK(pc.lerf[C - 1] == pc.p_all_masked);

    // Area bookkeeping.
    CHECK(pc.aopc_del == doctest::Approx(pc.p_orig - pc.morf_area).epsilon(1e-12));
    CHECK(pc.abpc == doctest::Approx(pc.lerf_area - pc.morf_area).epsilon(1e-12));
}

TEST_CASE("identical scores make deletion order moot") {
    lm::Model model = tiny_model();
    const int64_t N = static_cast<int64_t>(kTokens.size());
    Tensor flat = Tensor::vec(N);
    for (int64_t i = 0; i < N; ++i) flat.at(i) = 0.25;

    PerturbationCurves pc = perturbation_curves(model, kTokens, kTarget, flat);
    for (size_t k = 0; k < pc.morf.size(); ++k) CHECK(pc.morf[k] == pc.lerf[k]);
    CHECK(pc.abpc == 0.0);
}

TEST_CASE("perturbation curves reject bad shapes and targets") {
    lm::Model model = tiny_model();
    Tensor attr = Tensor::vec(5);
    CHECK_THROWS_AS(perturbation_curves(model, {4, 9}, kTarget, Tensor::vec(2)), ConfigError);
    CHECK_THROWS_AS(perturbation_curves(model, kTokens, kTarget, Tensor::vec(3)), ShapeError);
    CHECK_THROWS_AS(perturbation_curves(model, kTokens, 99, attr), ConfigError);
}

TEST_CASE("sensitivity is zero for a constant scorer and linear in the noise") {
    lm::Model model = tiny_model();
    const int64_t N = static_cast<int64_t>(kTokens.size());

    AttrFn constant = [&](const Tensor&) {
        Tensor a = Tensor::vec(N);
        for (int64_t i = 0; i < N; ++i) a.at(i) = 0.5;
        return a;
    };
    CHECK(sensitivity(model, kTokens, constant, 0.05, 4, 11) == 0.0);

    // Signed row sums respond linearly to the perturbation, and the noise
    // realization is fixed by the seed, so doubling delta doubles the spread.
    AttrFn row_sums = [&](const Tensor& emb) {
        Tensor a = Tensor::vec(emb.rows());
        for (int64_t i = 0; i < emb.rows(); ++i) {
            KahanSum s;
            for (int64_t c = 0; c < emb.cols(); ++c) s.add(emb.at(i, c));
            a.at(i) = s.value();
        }
        return a;
    };
    double s1 = sensitivity(model, kTokens, row_sums, 0.01, 6, 11);
    double s2 = sensitivity(model, kTokens, row_sums, 0.02, 6, 11);
    CHECK(s1 > 0.0);
    CHECK(s2 == doctest::Approx(2.0 * s1).epsilon(1e-9));

    CHECK_THROWS_AS(sensitivity(model, kTokens, constant, 0.0, 4, 11), ConfigError);
    CHECK_THROWS_AS(sensitivity(model, kTokens, constant, 0.05, 1, 11), ConfigError);
}

TEST_CASE("spearman handles ties, constants, and malformed alignments") {
    Tensor a = Tensor::from_vec({1.0, 2.0, 2.0, 3.0});
    Tensor b = Tensor::from_vec({10.0, 20.0, 30.0, 40.0});
    std::vector<std::pair<int64_t, int64_t>> id = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};

    // Ranks {1, 2.5, 2.5, 4} against {1, 2, 3, 4}: rho = sqrt(0.9).
    CHECK(spearman_rho(a, b, id) == doctest::Approx(0.9486832980505138).epsilon(1e-12));

    Tensor rev = Tensor::from_vec({40.0, 30.0, 20.0, 10.0});
    CHECK(spearman_rho(b, rev, id) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(spearman_rho(b, b, id) == doctest::Approx(1.0).epsilon(1e-12));

    Tensor flat = Tensor::from_vec({7.0, 7.0, 7.0, 7.0});
    CHECK(spearman_rho(flat, flat, id) == 1.0);
    CHECK(spearman_rho(flat, b, id) == 0.0);

    CHECK_THROWS_AS(spearman_rho(a, b, {{0, 0}, {1, 1}}), ConfigError);
    std::vector<std::pair<int64_t, int64_t>> dup = {{0, 0}, {0, 1}, {2, 2}};
    CHECK_THROWS_AS(spearman_rho(a, b, dup), ConfigError);
    std::vector<std::pair<int64_t, int64_t>> oob = {{0, 0}, {1, 1}, {9, 2}};
    CHECK_THROWS_AS(spearman_rho(a, b, oob), ConfigError);
}

TEST_CASE("top-k selection skips the readout and breaks ties low") {
    // Highest raw score sits on the readout; it must never be selected.
    Tensor attr = Tensor::from_vec({0.1, 0.5, 0.5, 0.9});
    CHECK(top_k_positions(attr, 2) == std::vector<int64_t>{1, 2});
    CHECK(top_k_positions(attr, 5) == std::vector<int64_t>{1, 2, 0});
    CHECK_THROWS_AS(top_k_positions(attr, 0), ConfigError);
    CHECK_THROWS_AS(top_k_positions(Tensor::vec(1), 1), ConfigError);
}

TEST_CASE("alignment F1 against the annotated set") {
    // Top-2 = {1, 2}; annotation {2, 0}: one hit, F1 = 2*1/(2+2).
    Tensor attr = Tensor::from_vec({0.1, 0.5, 0.4, 0.9});
    CHECK(alignment_f1(attr, {2, 0}, 2) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(alignment_f1(attr, {1, 2}, 2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(alignment_f1(attr, {0}, 1) == 0.0);
    CHECK_THROWS_AS(alignment_f1(attr, {}, 2), ConfigError);
    CHECK_THROWS_AS(alignment_f1(attr, {99}, 2), ConfigError);
}

TEST_CASE("greedy decoding is the argmax and ignores the seed") {
    lm::Model model = tiny_model();
    lm::ForwardTrace tr = model.forward(kTokens);
    int64_t best = 0;
    for (int64_t v = 1; v < tr.p_orig.numel(); ++v)
        if (tr.logits.at(tr.T - 1, v) > tr.logits.at(tr.T - 1, best)) best = v;

    DecodeConfig greedy;
    greedy.temperature = 0.0;
    for (uint64_t s : {0ull, 1ull, 77ull}) {
        greedy.seed = s;
        CHECK(sample_next(model, kTokens, greedy) == best);
    }

    // A single-token filter pins sampling to the same argmax.
    DecodeConfig k1;
    k1.top_k = 1;
    k1.seed = 5;
    CHECK(sample_next(model, kTokens, k1) == best);
    DecodeConfig p_tiny;
    p_tiny.top_p = 1e-9;
    p_tiny.seed = 5;
    CHECK(sample_next(model, kTokens, p_tiny) == best);

    // Same seed, same draw.
    DecodeConfig warm;
    warm.temperature = 1.3;
    warm.seed = 42;
    CHECK(sample_next(model, kTokens, warm) == sample_next(model, kTokens, warm));
}

TEST_CASE("decoding config validation") {
    lm::Model model = tiny_model();
    DecodeConfig c;
    c.temperature = -1.0;
    CHECK_THROWS_AS(sample_next(model, kTokens, c), ConfigError);
    c = DecodeConfig{};
    c.top_p = 0.0;
    CHECK_THROWS_AS(sample_next(model, kTokens, c), ConfigError);
    c = DecodeConfig{};
    c.top_p = 1.5;
    CHECK_THROWS_AS(sample_next(model, kTokens, c), ConfigError);
    c = DecodeConfig{};
    c.top_k = -2;
    CHECK_THROWS_AS(sample_next(model, kTokens, c), ConfigError);
    CHECK_THROWS_AS(sample_next(model, {}, DecodeConfig{}), ConfigError);
}

TEST_CASE("a greedy sweep is perfectly stable") {
    lm::Model model = tiny_model();
    std::vector<std::vector<int64_t>> prompts = {{4, 9, 12}, {6, 3, 4, 9}};
    std::vector<SweepCell> cells(2);
    cells[0].temperature = 0.0;
    cells[1].temperature = 0.0;
    cells[1].top_k = 3;
    std::vector<uint64_t> seeds = {1, 2, 3};

    InstanceMetricFn metric = [](const std::vector<int64_t>&, int64_t tok) {
        return static_cast<double>(tok);
    };
    SweepResult r = decoding_stability_sweep(model, prompts, cells, seeds, metric);
    CHECK(r.per_cell.size() == 2);
    CHECK(r.per_cell[0].size() == 3);
    CHECK(r.delta_percent == 0.0);
    for (const auto& row : r.per_cell)
        for (double v : row) CHECK(v == r.per_cell[0][0]);

    // Warm sampling across seeds generally moves the metric.
    std::vector<SweepCell> warm(1);
    warm[0].temperature = 2.0;
    SweepResult rw = decoding_stability_sweep(model, prompts, warm, seeds, metric);
    CHECK(rw.delta_percent >= 0.0);

    CHECK_THROWS_AS(decoding_stability_sweep(model, prompts, {}, seeds, metric), ConfigError);
    CHECK_THROWS_AS(decoding_stability_sweep(model, prompts, cells, {7}, metric), ConfigError);
    CHECK_THROWS_AS(decoding_stability_sweep(model, {}, cells, seeds, metric), ConfigError);
}

TEST_CASE("aggregate matches hand arithmetic") {
    Aggregate a = aggregate({1.0, 2.0, 3.0, 4.0});
    CHECK(a.n == 4);
    CHECK(a.mean == doctest::Approx(2.5).epsilon(1e-15));
    CHECK(a.std == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));
    CHECK(a.se == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-15));

    Aggregate one = aggregate({3.0});
    CHECK(one.mean == 3.0);
    CHECK(one.std == 0.0);
    CHECK(one.se == 0.0);
    CHECK_THROWS_AS(aggregate({}), ConfigError);
}

TEST_CASE("paired t-test reproduces the frozen tail value") {
    // Differences {1,2,3,4,5}: t = 3 / (sqrt(2.5)/sqrt(5)) with 4 dof.
    std::vector<double> a = {2.0, 4.0, 6.0, 8.0, 10.0};
    std::vector<double> b = {1.0, 2.0, 3.0, 4.0, 5.0};
    double p = paired_t_pvalue_one_sided(a, b);
    CHECK(p == doctest::Approx(0.006617799781841345).epsilon(1e-9));

    // The two one-sided tails add to one.
    CHECK(p + paired_t_pvalue_one_sided(b, a) == doctest::Approx(1.0).epsilon(1e-12));

    // Degenerate spreads.
    CHECK(paired_t_pvalue_one_sided({2.0, 3.0}, {1.0, 2.0}) == 0.0);
    CHECK(paired_t_pvalue_one_sided({1.0, 2.0}, {2.0, 3.0}) == 1.0);
    CHECK(paired_t_pvalue_one_sided({1.0, 2.0}, {1.0, 2.0}) == 0.5);

    CHECK_THROWS_AS(paired_t_pvalue_one_sided({1.0}, {2.0}), ConfigError);
    CHECK_THROWS_AS(paired_t_pvalue_one_sided({1.0, 2.0}, {2.0}), ShapeError);
}

TEST_CASE("bootstrap interval brackets the mean and is reproducible") {
    std::vector<double> flat = {5.0, 5.0, 5.0, 5.0};
    auto [lo, hi] = bootstrap_mean_ci(flat, 200, 9);
    CHECK(lo == 5.0);
    CHECK(hi == 5.0);

    std::vector<double> spread = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    auto ci1 = bootstrap_mean_ci(spread, 500, 9);
    auto ci2 = bootstrap_mean_ci(spread, 500, 9);
    CHECK(ci1 == ci2);
    CHECK(ci1.first <= 3.5);
    CHECK(ci1.second >= 3.5);
    CHECK(ci1.first < ci1.second);

    auto narrow = bootstrap_mean_ci(spread, 500, 9, 0.5);
    CHECK(narrow.first >= ci1.first);
    CHECK(narrow.second <= ci1.second);

    CHECK_THROWS_AS(bootstrap_mean_ci({}, 100, 9), ConfigError);
    CHECK_THROWS_AS(bootstrap_mean_ci(spread, 1, 9), ConfigError);
    CHECK_THROWS_AS(bootstrap_mean_ci(spread, 100, 9, 1.5), ConfigError);
}
