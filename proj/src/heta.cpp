#include "heta/heta.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "heta/error.h"
#include "heta/kahan.h"

namespace heta::core {

namespace {

struct VariantNeeds {
    bool gate = false;
    bool curvature = false;
    bool information = false;
};

VariantNeeds needs_of(const HetaConfig& cfg) {
    VariantNeeds n;
    switch (cfg.variant) {
        case Variant::TransitionOnly:
            n.gate = true;
            break;
        case Variant::HessianOnly:
            n.curvature = true;
            break;
        case Variant::KlOnly:
            n.information = true;
            break;
        case Variant::NoGate:
        case Variant::UniformGate:
            n.curvature = cfg.beta > 0.0;
            n.information = cfg.gamma > 0.0;
            break;
        default:
            n.gate = true;
            n.curvature = cfg.beta > 0.0;
            n.information = cfg.gamma > 0.0;
            break;
    }
    return n;
}

curv::CurvatureConfig curvature_config(const HetaConfig& cfg) {
    curv::CurvatureConfig c;
    c.samples = cfg.samples;
    c.seed = cfg.seed;
    c.exact_tail = cfg.exact_tail;
    c.emb_override = cfg.emb_override;
    switch (cfg.variant) {
        case Variant::LowRank:
        case Variant::LowRankWindowed:
            c.mode = curv::Mode::LowRank;
            c.rank = cfg.rank;
            break;
        case Variant::LayerSubset:
            c.mode = curv::Mode::LayerSubset;
            c.layer_subset = cfg.layer_subset;
            break;
        case Variant::GradSquared:
            c.mode = curv::Mode::GradSquared;
            break;
        default:
            c.mode = curv::Mode::ExactHvp;
            break;
    }
    return c;
}

Tensor ones(int64_t n) {
    Tensor t = Tensor::vec(n);
    for (int64_t i = 0; i < n; ++i) t.at(i) = 1.0;
    return t;
}

void check_result(const AttributionVector& out) {
    if (!out.attr.all_finite() || !out.m.all_finite() || !out.s.all_finite() ||
        !out.i.all_finite())
        throw NumericsError("attribute: non-finite score");
    for (int64_t k = 0; k < out.attr.numel(); ++k)
        if (out.attr.at(k) < 0.0) throw NumericsError("attribute: negative score");
}

}  // namespace

const char* variant_name(Variant v) {
    switch (v) {
        case Variant::Full: return "full";
        case Variant::LowRank: return "lr";
        case Variant::LayerSubset: return "ls";
        case Variant::Windowed: return "win";
        case Variant::LowRankWindowed: return "lr+win";
        case Variant::GradSquared: return "gs";
        case Variant::TransitionOnly: return "transition-only";
        case Variant::HessianOnly: return "hessian-only";
        case Variant::KlOnly: return "kl-only";
        case Variant::NoGate: return "no-gate";
        case Variant::UniformGate: return "uniform-gate";
    }
    throw ConfigError("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& name) {
    for (Variant v :
         {Variant::Full, Variant::LowRank, Variant::LayerSubset, Variant::Windowed,
          Variant::LowRankWindowed, Variant::GradSquared, Variant::TransitionOnly,
          Variant::HessianOnly, Variant::KlOnly, Variant::NoGate, Variant::UniformGate})
        if (name == variant_name(v)) return v;
    throw ConfigError("unknown variant '" + name + "'");
}

void HetaConfig::validate() const {
    if (beta < 0.0 || gamma < 0.0) throw ConfigError("config: beta and gamma must be >= 0");
    if (variant != Variant::TransitionOnly && beta + gamma <= 0.0)
        throw ConfigError("config: beta + gamma must be positive for this variant");
    if (windowed()) {
        if (window < 2) throw ConfigError("config: window must be at least 2");
        if (stride < 1 || stride > window)
            throw ConfigError("config: stride must be in [1, window]");
    }
    if (variant == Variant::LayerSubset && layer_subset.empty())
        throw ConfigError("config: LayerSubset variant needs a layer subset");
    if (variant != Variant::LayerSubset && !layer_subset.empty())
        throw ConfigError("config: layer subset is only valid for the LayerSubset variant");
    if (samples < 1) throw ConfigError("config: samples must be positive");
    if ((variant == Variant::LowRank || variant == Variant::LowRankWindowed) && rank < 1)
        throw ConfigError("config: rank must be positive");
}

double reconstruct_score(const HetaConfig& cfg, int64_t T, double m, double s, double i) {
    switch (cfg.variant) {
        case Variant::TransitionOnly: return m;
        case Variant::HessianOnly: return s;
        case Variant::KlOnly: return i;
        case Variant::NoGate: return cfg.beta * s + cfg.gamma * i;
        case Variant::UniformGate:
            return (cfg.beta * s + cfg.gamma * i) / static_cast<double>(T - 1);
        default: return m * (cfg.beta * s + cfg.gamma * i);
    }
}

std::vector<Window> window_layout(int64_t n_sources, int64_t window, int64_t stride) {
    if (n_sources < 1) throw ConfigError("window_layout: no source positions");
    if (window < 2) throw ConfigError("window_layout: window must be at least 2");
    if (stride < 1 || stride > window) throw ConfigError("window_layout: bad stride");
    std::vector<Window> out;
    for (int64_t a = 0;; a += stride) {
        Window w;
        w.begin = a;
        w.end = std::min(a + window, n_sources);
        out.push_back(w);
        if (w.end == n_sources) break;
    }
    return out;
}

std::vector<int64_t> window_tokens(const std::vector<int64_t>& tokens, const Window& w) {
    const int64_t n = static_cast<int64_t>(tokens.size());
    if (w.begin < 0 || w.end <= w.begin || w.end > n - 1)
        throw ConfigError("window_tokens: window out of range");
    std::vector<int64_t> out(tokens.begin() + w.begin, tokens.begin() + w.end);
    out.push_back(tokens.back());
    return out;
}

AttributionVector attribute(const lm::Model& model, const std::vector<int64_t>& tokens,
                            int64_t target, const HetaConfig& cfg) {
    cfg.validate();
    const int64_t N = static_cast<int64_t>(tokens.size());
    if (N < 2) throw ConfigError("attribute: need at least one context token");
    if (cfg.emb_override &&
        (cfg.emb_override->rows() != N || cfg.emb_override->cols() != model.config().d))
        throw ShapeError("attribute: emb_override must be [tokens, d]");

    AttributionVector out;
    out.config = cfg;
    out.target_pos = N - 1;
    out.target = target;
    out.attr = Tensor::vec(N);
    out.m = Tensor::vec(N);
    out.s = Tensor::vec(N);
    out.i = Tensor::vec(N);
    out.s_variance = Tensor::vec(N);
    out.nu = ones(N);

    const VariantNeeds need = needs_of(cfg);

    if (need.curvature) {
        curv::SensitivityVector sv = block_sensitivity(model, tokens, target,
                                                       curvature_config(cfg));
        out.s = sv.s;
        out.s_variance = sv.variance;
        out.hvp_count += sv.hvp_count;
        out.tau_hat = sv.tau_hat;
    }

    if (!cfg.windowed()) {
        lm::ForwardTrace trace;
        if (need.gate || need.information) {
            lm::ForwardOptions fo;
            fo.emb_override = cfg.emb_override;
            trace = model.forward(tokens, fo);
            model.target_logprob(trace, target);
        }
        if (need.gate) {
            std::vector<int64_t> layers = cfg.variant == Variant::LayerSubset
                                              ? cfg.layer_subset
                                              : gate::all_layers(trace);
            gate::RolloutResult rr = gate::transition_gate(trace, N - 1, layers);
            out.m = rr.m_gate;
            out.degenerate_gate = rr.degenerate;
        }
        if (need.information) {
            info::InfoConfig icfg;
            icfg.scheme = cfg.scheme;
            out.i = token_information(model, trace, icfg).i;
        }
    } else {
        Tensor acc_m = Tensor::vec(N), acc_s = Tensor::vec(N), acc_i = Tensor::vec(N);
        Tensor visits = Tensor::vec(N);
        for (const Window& w : window_layout(N - 1, cfg.window, cfg.stride)) {
            std::vector<int64_t> wtoks = window_tokens(tokens, w);
            const int64_t len = static_cast<int64_t>(wtoks.size());
            lm::ForwardOptions wfo;
            if (cfg.emb_override) {
                Tensor rows = Tensor::mat(len, model.config().d);
                for (int64_t p = 0; p < len; ++p) {
                    int64_t src = p < len - 1 ? w.begin + p : N - 1;
                    for (int64_t c = 0; c < rows.cols(); ++c)
                        rows.at(p, c) = cfg.emb_override->at(src, c);
                }
                wfo.emb_override = rows;
            }
            lm::ForwardTrace wtrace = model.forward(wtoks, wfo);
            model.target_logprob(wtrace, target);

            gate::RolloutResult rr = gate::transition_gate(wtrace, len - 1,
                                                           gate::all_layers(wtrace));
            out.degenerate_gate = out.degenerate_gate || rr.degenerate;

            info::InfoResult ir;
            if (need.information) {
                info::InfoConfig icfg;
                icfg.scheme = cfg.scheme;
                ir = token_information(model, wtrace, icfg);
            }

            for (int64_t p = 0; p < len; ++p) {
                int64_t g = p < len - 1 ? w.begin + p : N - 1;
                visits.at(g) += 1.0;
                acc_m.at(g) += rr.m_gate.at(p);
                acc_s.at(g) += out.s.at(g);
                if (need.information && p < len - 1) acc_i.at(g) += ir.i.at(p);
            }
        }
        for (int64_t k = 0; k < N; ++k) {
            double dn = std::max(1.0, visits.at(k));
            out.m.at(k) = acc_m.at(k) / dn;
            out.s.at(k) = acc_s.at(k) / dn;
            out.i.at(k) = acc_i.at(k) / dn;
            out.nu.at(k) = visits.at(k);
        }
    }

    for (int64_t k = 0; k < N; ++k)
        out.attr.at(k) = reconstruct_score(cfg, N, out.m.at(k), out.s.at(k), out.i.at(k));

    if (cfg.variant == Variant::NoGate) out.m = ones(N);
    if (cfg.variant == Variant::UniformGate) {
        out.m = Tensor::vec(N);
        for (int64_t k = 0; k < N; ++k) out.m.at(k) = 1.0 / static_cast<double>(N - 1);
    }

    check_result(out);
    return out;
}

AttributionVector attribute_span(const lm::Model& model, const std::vector<int64_t>& tokens,
                                 int64_t span_start, int64_t span_len, const HetaConfig& cfg) {
    const int64_t N = static_cast<int64_t>(tokens.size());
    if (span_start < 1) throw ConfigError("attribute_span: span needs context before it");
    if (span_len < 1 || span_start + span_len > N)
        throw ConfigError("attribute_span: span outside the sequence");

    AttributionVector out;
    out.config = cfg;
    out.target_pos = span_start;
    out.target = tokens[static_cast<size_t>(span_start)];
    out.attr = Tensor::vec(N);
    out.m = Tensor::vec(N);
    out.s = Tensor::vec(N);
    out.i = Tensor::vec(N);
    out.s_variance = Tensor::vec(N);
    out.nu = Tensor::vec(N);

    double tau_sq = 0.0;
    for (int64_t k = 0; k < span_len; ++k) {
        std::vector<int64_t> prefix(tokens.begin(), tokens.begin() + span_start + k);
        AttributionVector one = attribute(model, prefix, tokens[static_cast<size_t>(span_start + k)],
                                          cfg);
        for (int64_t p = 0; p < one.attr.numel(); ++p) {
            out.attr.at(p) += one.attr.at(p);
            out.m.at(p) += one.m.at(p);
            out.s.at(p) += one.s.at(p);
            out.i.at(p) += one.i.at(p);
            out.s_variance.at(p) += one.s_variance.at(p);
            out.nu.at(p) += one.nu.at(p);
        }
        out.degenerate_gate = out.degenerate_gate || one.degenerate_gate;
        out.hvp_count += one.hvp_count;
        tau_sq += one.tau_hat * one.tau_hat;
    }
    out.tau_hat = std::sqrt(tau_sq);
    return out;
}

double fit_loss(const std::vector<SubsetObservation>& obs, double beta, double gamma) {
    if (obs.empty()) throw ConfigError("fit_loss: no observations");
    KahanSum s;
    for (const SubsetObservation& o : obs) {
        double r = o.delta_g - beta * o.sum_gated_s - gamma * o.sum_gated_i;
        s.add(r * r);
    }
    return s.value() / static_cast<double>(obs.size());
}

FitResult fit_weights(const std::vector<SubsetObservation>& obs) {
    if (obs.empty()) throw ConfigError("fit_weights: no observations");
    KahanSum suu, suv, svv, suy, svy;
    for (const SubsetObservation& o : obs) {
        suu.add(o.sum_gated_s * o.sum_gated_s);
        suv.add(o.sum_gated_s * o.sum_gated_i);
        svv.add(o.sum_gated_i * o.sum_gated_i);
        suy.add(o.sum_gated_s * o.delta_g);
        svy.add(o.sum_gated_i * o.delta_g);
    }
    const double det = suu.value() * svv.value() - suv.value() * suv.value();

    FitResult best;
    best.collinear = det <= 1e-10 * suu.value() * svv.value();

    auto consider = [&](double b, double g, bool& have) {
        if (b < 0.0 || g < 0.0) return;
        double l = fit_loss(obs, b, g);
        if (!have || l < best.loss) {
            best.beta = b;
            best.gamma = g;
            best.loss = l;
            have = true;
        }
    };
    bool have = false;
    consider(0.0, 0.0, have);
    if (suu.value() > 0.0) consider(std::max(0.0, suy.value() / suu.value()), 0.0, have);
    if (svv.value() > 0.0) consider(0.0, std::max(0.0, svy.value() / svv.value()), have);
    if (!best.collinear) {
        double b = (svv.value() * suy.value() - suv.value() * svy.value()) / det;
        double g = (suu.value() * svy.value() - suv.value() * suy.value()) / det;
        // fp dust on an exactly-axis-borne optimum
        if (b > -1e-12 && g > -1e-12) consider(std::max(0.0, b), std::max(0.0, g), have);
    }
    return best;
}

}  // namespace heta::core
