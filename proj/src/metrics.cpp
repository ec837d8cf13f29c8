#include "heta/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

#include "heta/error.h"
#include "heta/kahan.h"
#include "heta/rng.h"

namespace heta::metrics {

namespace {

void check_positions(const std::vector<int64_t>& pos, int64_t limit, const char* what) {
    for (int64_t p : pos)
        if (p < 0 || p >= limit)
            throw ConfigError(std::string(what) + ": position " + std::to_string(p) +
                              " outside the attribution vector");
}

double kahan_sum_at(const Tensor& attr, const std::vector<int64_t>& pos) {
    KahanSum s;
    for (int64_t p : pos) s.add(attr.at(p));
    return s.value();
}

// Positions sorted by score, ties toward the lowest index.
std::vector<int64_t> order_by_score(const Tensor& attr, int64_t count, bool descending) {
    std::vector<int64_t> idx(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        if (attr.at(a) == attr.at(b)) return a < b;
        return descending ? attr.at(a) > attr.at(b) : attr.at(a) < attr.at(b);
    });
    return idx;
}

double target_probability(const lm::Model& model, const std::vector<int64_t>& tokens,
                          int64_t target, const Tensor& emb) {
    lm::ForwardOptions fo;
    fo.emb_override = emb;
    lm::ForwardTrace tr = model.forward(tokens, fo);
    if (target < 0 || target >= tr.p_orig.numel())
        throw ConfigError("metrics: target token outside the vocabulary");
    return tr.p_orig.at(target);
}

// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(const std::vector<double>& vals) {
    const size_t n = vals.size();
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](size_t a, size_t b) { return vals[a] < vals[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && vals[idx[j + 1]] == vals[idx[i]]) ++j;
        double mean_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[idx[k]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

// Regularized incomplete beta by Lentz's continued fraction.
double betacf(double a, double b, double x) {
    const double tiny = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 3e-16) break;
    }
    return h;
}

double reg_inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log1p(-x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

// P(T_nu > t) for Student's t.
double t_tail(double t, double nu) {
    double x = nu / (nu + t * t);
    double half = 0.5 * reg_inc_beta(0.5 * nu, 0.5, x);
    return t >= 0.0 ? half : 1.0 - half;
}

}  // namespace

void CuratedInstance::validate() const {
    if (support.empty()) throw ConfigError("instance: empty support set");
    if (target < 0) throw ConfigError("instance: missing target");
    std::set<int64_t> s2(segment2.begin(), segment2.end());
    for (int64_t p : support)
        if (!s2.count(p))
            throw ConfigError("instance: support position " + std::to_string(p) +
                              " outside segment 2");
    for (int64_t p : segment1)
        if (s2.count(p))
            throw ConfigError("instance: segments overlap at position " + std::to_string(p));
}

CuratedInstance curated_from_tokens(const corpus::InstanceTokens& inst) {
    CuratedInstance out;
    for (int64_t p = inst.seg1_begin; p < inst.seg1_end; ++p) out.segment1.push_back(p);
    for (int64_t p = inst.seg2_begin; p < inst.seg2_end; ++p) out.segment2.push_back(p);
    out.support = inst.support_global;
    for (int64_t p = inst.seg2_end + 1; p < static_cast<int64_t>(inst.input.size()); ++p)
        out.question.push_back(p);
    out.target = inst.target;
    out.validate();
    return out;
}

double dsa(const Tensor& attr, const CuratedInstance& inst) {
    inst.validate();
    check_positions(inst.segment1, attr.numel(), "dsa segment 1");
    check_positions(inst.segment2, attr.numel(), "dsa segment 2");
    for (int64_t p : inst.segment1)
        if (attr.at(p) < 0.0) throw ConfigError("dsa: negative attribution mass");
    for (int64_t p : inst.segment2)
        if (attr.at(p) < 0.0) throw ConfigError("dsa: negative attribution mass");

    double z = kahan_sum_at(attr, inst.segment1) + kahan_sum_at(attr, inst.segment2);
    if (z <= 0.0) throw ConfigError("dsa: no attribution mass on the segments");
    return (kahan_sum_at(attr, inst.support) - kahan_sum_at(attr, inst.segment1)) / z;
}

Tensor normalize_unit(const Tensor& attr) {
    double mx = 0.0;
    for (int64_t i = 0; i < attr.numel(); ++i) {
        if (attr.at(i) < 0.0) throw ConfigError("normalize_unit: negative score");
        mx = std::max(mx, attr.at(i));
    }
    Tensor out = attr.clone();
    if (mx == 0.0) return out;
    for (int64_t i = 0; i < out.numel(); ++i) out.at(i) /= mx;
    return out;
}

SoftScores soft_nc_ns(const lm::Model& model, const std::vector<int64_t>& tokens, int64_t target,
                      const Tensor& attr) {
    const int64_t N = static_cast<int64_t>(tokens.size());
    if (N < 2) throw ConfigError("soft_nc_ns: need at least one context token");
    if (attr.numel() != N) throw ShapeError("soft_nc_ns: attribution length mismatch");
    for (int64_t i = 0; i < N; ++i)
        if (attr.at(i) < 0.0 || attr.at(i) > 1.0)
            throw ConfigError("soft_nc_ns: scores must lie in [0, 1]");

    Tensor base = model.embed(tokens);
    auto logprob_scaled = [&](bool keep_attr) {
        Tensor e = base.clone();
        for (int64_t i = 0; i < N - 1; ++i) {
            double f = keep_attr ? attr.at(i) : 1.0 - attr.at(i);
            for (int64_t c = 0; c < e.cols(); ++c) e.at(i, c) *= f;
        }
        lm::ForwardOptions fo;
        fo.emb_override = e;
        lm::ForwardTrace tr = model.forward(tokens, fo);
        return model.target_logprob(tr, target);
    };

    lm::ForwardTrace tr = model.forward(tokens);
    double g_orig = model.target_logprob(tr, target);

    SoftScores out;
    out.soft_nc = g_orig - logprob_scaled(false);
    out.soft_ns = g_orig - logprob_scaled(true);
    return out;
}

PerturbationCurves perturbation_curves(const lm::Model& model,
                                       const std::vector<int64_t>& tokens, int64_t target,
                                       const Tensor& attr) {
    const int64_t N = static_cast<int64_t>(tokens.size());
    if (N < 3) throw ConfigError("perturbation_curves: need at least two context tokens");
    if (attr.numel() != N) throw ShapeError("perturbation_curves: attribution length mismatch");
    const int64_t C = N - 1;

    Tensor base = model.embed(tokens);
    Tensor sent = model.sentinel_embedding();
    const int64_t d = base.cols();

    auto prob_masked = [&](const std::vector<int64_t>& masked) {
        Tensor e = base.clone();
        for (int64_t p : masked)
            std::memcpy(e.data() + p * d, sent.data(), static_cast<size_t>(d) * sizeof(double));
        return target_probability(model, tokens, target, e);
    };

    PerturbationCurves out;
    out.p_orig = prob_masked({});
    std::vector<int64_t> all(static_cast<size_t>(C));
    for (int64_t i = 0; i < C; ++i) all[static_cast<size_t>(i)] = i;
    out.p_all_masked = prob_masked(all);

    std::vector<int64_t> desc = order_by_score(attr, C, true);
    std::vector<int64_t> asc = order_by_score(attr, C, false);

    std::vector<int64_t> acc;
    for (int64_t k = 0; k < C; ++k) {
        acc.push_back(desc[static_cast<size_t>(k)]);
        out.morf.push_back(prob_masked(acc));
    }
    acc.clear();
    for (int64_t k = 0; k < C; ++k) {
        acc.push_back(asc[static_cast<size_t>(k)]);
        out.lerf.push_back(prob_masked(acc));
    }
    for (int64_t k = 0; k < C; ++k) {
        std::vector<int64_t> masked;
        std::set<int64_t> kept(desc.begin(), desc.begin() + k + 1);
        for (int64_t i = 0; i < C; ++i)
            if (!kept.count(i)) masked.push_back(i);
        out.ins.push_back(prob_masked(masked));
    }

    KahanSum morf_a, lerf_a, del_a, ins_a;
    for (int64_t k = 0; k < C; ++k) {
        morf_a.add(out.morf[static_cast<size_t>(k)]);
        lerf_a.add(out.lerf[static_cast<size_t>(k)]);
        del_a.add(out.p_orig - out.morf[static_cast<size_t>(k)]);
        ins_a.add(out.ins[static_cast<size_t>(k)] - out.p_all_masked);
    }
    double inv = 1.0 / static_cast<double>(C);
    out.morf_area = morf_a.value() * inv;
    out.lerf_area = lerf_a.value() * inv;
    out.abpc = out.lerf_area - out.morf_area;
    out.aopc_del = del_a.value() * inv;
    out.aopc_ins = ins_a.value() * inv;
    return out;
}

double sensitivity(const lm::Model& model, const std::vector<int64_t>& tokens,
                   const AttrFn& attr_fn, double delta, int64_t n_samples, uint64_t seed) {
    if (delta <= 0.0) throw ConfigError("sensitivity: delta must be positive");
    if (n_samples < 2) throw ConfigError("sensitivity: need at least two samples");

    Tensor base = model.embed(tokens);
    std::vector<Tensor> attrs;
    attrs.reserve(static_cast<size_t>(n_samples));
    for (int64_t j = 0; j < n_samples; ++j) {
        Rng rng(derive_seed(seed, seed_tag::kNoise, static_cast<uint64_t>(j)));
        Tensor noisy = base.clone();
        for (int64_t k = 0; k < noisy.numel(); ++k) noisy.data()[k] += delta * rng.next_normal();
        Tensor a = attr_fn(noisy);
        if (!attrs.empty() && a.numel() != attrs.front().numel())
            throw ShapeError("sensitivity: attribution length changed across samples");
        attrs.push_back(a);
    }

    const int64_t len = attrs.front().numel();
    KahanSum total;
    for (int64_t i = 0; i < len; ++i) {
        KahanSum mean_s;
        for (const Tensor& a : attrs) mean_s.add(a.at(i));
        double mean = mean_s.value() / static_cast<double>(n_samples);
        KahanSum var_s;
        for (const Tensor& a : attrs) var_s.add((a.at(i) - mean) * (a.at(i) - mean));
        total.add(std::sqrt(var_s.value() / static_cast<double>(n_samples - 1)));
    }
    return total.value() / static_cast<double>(len);
}

double spearman_rho(const Tensor& attr_a, const Tensor& attr_b,
                    const std::vector<std::pair<int64_t, int64_t>>& alignment) {
    if (alignment.size() < 3) throw ConfigError("spearman: need at least three aligned tokens");
    std::set<int64_t> seen_a, seen_b;
    std::vector<double> va, vb;
    for (auto [ia, ib] : alignment) {
        if (ia < 0 || ia >= attr_a.numel() || ib < 0 || ib >= attr_b.numel())
            throw ConfigError("spearman: alignment index outside the vectors");
        if (!seen_a.insert(ia).second || !seen_b.insert(ib).second)
            throw ConfigError("spearman: alignment must be a bijection");
        va.push_back(attr_a.at(ia));
        vb.push_back(attr_b.at(ib));
    }

    std::vector<double> ra = average_ranks(va), rb = average_ranks(vb);
    const double n = static_cast<double>(ra.size());
    KahanSum sa, sb;
    for (size_t i = 0; i < ra.size(); ++i) {
        sa.add(ra[i]);
        sb.add(rb[i]);
    }
    double ma = sa.value() / n, mb = sb.value() / n;
    KahanSum cov, var_a, var_b;
    for (size_t i = 0; i < ra.size(); ++i) {
        cov.add((ra[i] - ma) * (rb[i] - mb));
        var_a.add((ra[i] - ma) * (ra[i] - ma));
        var_b.add((rb[i] - mb) * (rb[i] - mb));
    }
    if (var_a.value() == 0.0 && var_b.value() == 0.0) return 1.0;
    if (var_a.value() == 0.0 || var_b.value() == 0.0) return 0.0;
    return cov.value() / std::sqrt(var_a.value() * var_b.value());
}

std::vector<int64_t> top_k_positions(const Tensor& attr, int64_t k) {
    if (k < 1) throw ConfigError("top_k_positions: k must be at least 1");
    const int64_t C = attr.numel() - 1;
    if (C < 1) throw ConfigError("top_k_positions: no context positions");
    std::vector<int64_t> order = order_by_score(attr, C, true);
    order.resize(static_cast<size_t>(std::min(k, C)));
    return order;
}

double alignment_f1(const Tensor& attr, const std::vector<int64_t>& gold, int64_t k) {
    if (gold.empty()) throw ConfigError("alignment_f1: empty annotated set");
    check_positions(gold, attr.numel(), "alignment_f1 annotation");
    std::vector<int64_t> top = top_k_positions(attr, k);
    std::set<int64_t> gold_set(gold.begin(), gold.end());
    int64_t hits = 0;
    for (int64_t p : top)
        if (gold_set.count(p)) ++hits;
    return 2.0 * static_cast<double>(hits) /
           static_cast<double>(top.size() + gold_set.size());
}

int64_t sample_next(const lm::Model& model, const std::vector<int64_t>& prompt,
                    const DecodeConfig& cfg) {
    if (prompt.empty()) throw ConfigError("sample_next: empty prompt");
    if (cfg.temperature < 0.0) throw ConfigError("sample_next: negative temperature");
    if (cfg.top_p <= 0.0 || cfg.top_p > 1.0)
        throw ConfigError("sample_next: top_p must lie in (0, 1]");
    if (cfg.top_k < 0) throw ConfigError("sample_next: negative top_k");

    lm::ForwardTrace tr = model.forward(prompt);
    const int64_t V = tr.p_orig.numel();
    const int64_t row = tr.T - 1;

    if (cfg.temperature == 0.0) {
        int64_t best = 0;
        for (int64_t v = 1; v < V; ++v)
            if (tr.logits.at(row, v) > tr.logits.at(row, best)) best = v;
        return best;
    }

    double mx = tr.logits.at(row, 0) / cfg.temperature;
    for (int64_t v = 1; v < V; ++v) mx = std::max(mx, tr.logits.at(row, v) / cfg.temperature);
    std::vector<double> p(static_cast<size_t>(V));
    KahanSum z;
    for (int64_t v = 0; v < V; ++v) {
        p[static_cast<size_t>(v)] = std::exp(tr.logits.at(row, v) / cfg.temperature - mx);
        z.add(p[static_cast<size_t>(v)]);
    }
    for (double& q : p) q /= z.value();

    std::vector<int64_t> order(static_cast<size_t>(V));
    for (int64_t v = 0; v < V; ++v) order[static_cast<size_t>(v)] = v;
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (p[static_cast<size_t>(a)] == p[static_cast<size_t>(b)]) return a < b;
        return p[static_cast<size_t>(a)] > p[static_cast<size_t>(b)];
    });

    size_t keep = order.size();
    if (cfg.top_k > 0) keep = std::min<size_t>(keep, static_cast<size_t>(cfg.top_k));
    if (cfg.top_p < 1.0) {
        KahanSum cum;
        size_t k = 0;
        while (k < keep) {
            cum.add(p[static_cast<size_t>(order[k])]);
            ++k;
            if (cum.value() >= cfg.top_p) break;
        }
        keep = k;
    }

    KahanSum kept_mass;
    for (size_t k = 0; k < keep; ++k) kept_mass.add(p[static_cast<size_t>(order[k])]);
    double u = Rng(derive_seed(cfg.seed, seed_tag::kDecode)).next_uniform() * kept_mass.value();
    KahanSum cum;
    for (size_t k = 0; k < keep; ++k) {
        cum.add(p[static_cast<size_t>(order[k])]);
        if (u < cum.value()) return order[k];
    }
    return order[keep - 1];
}

SweepResult decoding_stability_sweep(const lm::Model& model,
                                     const std::vector<std::vector<int64_t>>& prompts,
                                     const std::vector<SweepCell>& cells,
                                     const std::vector<uint64_t>& seeds,
                                     const InstanceMetricFn& metric_fn) {
    if (cells.empty()) throw ConfigError("sweep: empty decoding grid");
    if (seeds.size() < 2) throw ConfigError("sweep: need at least two seeds");
    if (prompts.empty()) throw ConfigError("sweep: no prompts");

    SweepResult out;
    out.per_cell.resize(cells.size());
    double vmin = 0.0, vmax = 0.0;
    KahanSum vsum;
    bool first = true;
    for (size_t ci = 0; ci < cells.size(); ++ci) {
        for (size_t si = 0; si < seeds.size(); ++si) {
            KahanSum acc;
            for (size_t pi = 0; pi < prompts.size(); ++pi) {
                DecodeConfig dc;
                dc.temperature = cells[ci].temperature;
                dc.top_p = cells[ci].top_p;
                dc.top_k = cells[ci].top_k;
                dc.seed = derive_seed(seeds[si], seed_tag::kDecode, ci, pi);
                int64_t tok = sample_next(model, prompts[pi], dc);
                double v = metric_fn(prompts[pi], tok);
                if (!std::isfinite(v)) throw NumericsError("sweep: non-finite metric value");
                acc.add(v);
            }
            double cell_value = acc.value() / static_cast<double>(prompts.size());
            out.per_cell[ci].push_back(cell_value);
            vmin = first ? cell_value : std::min(vmin, cell_value);
            vmax = first ? cell_value : std::max(vmax, cell_value);
            vsum.add(cell_value);
            first = false;
        }
    }

    double spread = vmax - vmin;
    if (spread == 0.0) {
        out.delta_percent = 0.0;
    } else {
        double mean = vsum.value() / static_cast<double>(cells.size() * seeds.size());
        out.delta_percent = 100.0 * spread / std::max(std::fabs(mean), 1e-12);
    }
    return out;
}

Aggregate aggregate(const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("aggregate: no values");
    Aggregate out;
    out.n = static_cast<int64_t>(values.size());
    KahanSum s;
    for (double v : values) s.add(v);
    out.mean = s.value() / static_cast<double>(out.n);
    if (out.n >= 2) {
        KahanSum var;
        for (double v : values) var.add((v - out.mean) * (v - out.mean));
        out.std = std::sqrt(var.value() / static_cast<double>(out.n - 1));
        out.se = out.std / std::sqrt(static_cast<double>(out.n));
    }
    return out;
}

double paired_t_pvalue_one_sided(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ShapeError("paired test: length mismatch");
    if (a.size() < 2) throw ConfigError("paired test: need at least two pairs");
    std::vector<double> diff(a.size());
    for (size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    Aggregate agg = aggregate(diff);
    if (agg.std == 0.0) {
        if (agg.mean > 0.0) return 0.0;
        if (agg.mean < 0.0) return 1.0;
        return 0.5;
    }
    double t = agg.mean / agg.se;
    return t_tail(t, static_cast<double>(agg.n - 1));
}

std::pair<double, double> bootstrap_mean_ci(const std::vector<double>& values, int64_t n_boot,
                                            uint64_t seed, double level) {
    if (values.empty()) throw ConfigError("bootstrap: no values");
    if (n_boot < 2) throw ConfigError("bootstrap: need at least two resamples");
    if (level <= 0.0 || level >= 1.0) throw ConfigError("bootstrap: level must lie in (0, 1)");

    Rng rng(derive_seed(seed, seed_tag::kMisc));
    std::vector<double> means;
    means.reserve(static_cast<size_t>(n_boot));
    for (int64_t b = 0; b < n_boot; ++b) {
        KahanSum s;
        for (size_t i = 0; i < values.size(); ++i)
            s.add(values[rng.next_below(values.size())]);
        means.push_back(s.value() / static_cast<double>(values.size()));
    }
    std::sort(means.begin(), means.end());
    double alpha = 0.5 * (1.0 - level);
    auto pick = [&](double q) {
        double pos = q * static_cast<double>(means.size() - 1);
        return means[static_cast<size_t>(std::llround(pos))];
    };
    return {pick(alpha), pick(1.0 - alpha)};
}

}  // namespace heta::metrics
