#include "heta/theory.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>

#include "heta/baselines.h"
#include "heta/curvature.h"
#include "heta/error.h"
#include "heta/info.h"
#include "heta/kahan.h"
#include "heta/metrics.h"
#include "heta/rng.h"

namespace heta::theory {

namespace {

double l1_distance(const Tensor& p, const Tensor& q) {
    if (p.numel() != q.numel()) throw ShapeError("l1_distance: length mismatch");
    KahanSum s;
    for (int64_t i = 0; i < p.numel(); ++i) s.add(std::fabs(p.at(i) - q.at(i)));
    return s.value();
}

double min_entry(const Tensor& p) {
    double m = p.at(0);
    for (int64_t i = 1; i < p.numel(); ++i) m = std::min(m, p.at(i));
    return m;
}

// relu(x1 + x2 - 2), the two-feature hinge whose flat quadrant defeats
// pointwise gradients.
double hinge(const Tensor& x) { return std::max(0.0, x.at(0) + x.at(1) - 2.0); }

Tensor hinge_grad(const Tensor& x) {
    Tensor g = Tensor::vec(2);
    if (x.at(0) + x.at(1) - 2.0 > 0.0) {
        g.at(0) = 1.0;
        g.at(1) = 1.0;
    }
    return g;
}

bool variant_uses_gate(core::Variant v) {
    switch (v) {
        case core::Variant::Full:
        case core::Variant::LowRank:
        case core::Variant::LayerSubset:
        case core::Variant::Windowed:
        case core::Variant::LowRankWindowed:
        case core::Variant::GradSquared:
        case core::Variant::TransitionOnly:
            return true;
        default:
            return false;
    }
}

double logprob_with_rows_masked(const lm::Model& model, const std::vector<int64_t>& tokens,
                                int64_t target, const Tensor& base_rows, const Tensor& mask_row,
                                const std::vector<int64_t>& masked) {
    Tensor e = base_rows.clone();
    for (int64_t p : masked)
        for (int64_t c = 0; c < e.cols(); ++c) e.at(p, c) = mask_row.at(c);
    lm::ForwardOptions fo;
    fo.emb_override = e;
    lm::ForwardTrace tr = model.forward(tokens, fo);
    return model.target_logprob(tr, target);
}

// Largest block singular value via Eigen, for the off-diagonal interaction
// sum of the additivity bound.
double block_sigma_max(const Tensor& h, int64_t d, int64_t bi, int64_t bj) {
    Eigen::MatrixXd b(d, d);
    for (int64_t r = 0; r < d; ++r)
        for (int64_t c = 0; c < d; ++c) b(r, c) = h.at(bi * d + r, bj * d + c);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(b);
    return svd.singularValues()(0);
}

}  // namespace

BoundReport make_bound(const std::string& name, double lhs, double rhs,
                       const std::string& instance) {
    BoundReport r;
    r.name = name;
    r.lhs = lhs;
    r.rhs = rhs;
    r.satisfied = lhs <= rhs + kBoundTol;
    r.slack = rhs - lhs;
    r.instance = instance;
    return r;
}

BoundSummary summarize(const std::vector<BoundReport>& reports) {
    BoundSummary s;
    s.checked = static_cast<int64_t>(reports.size());
    bool first = true;
    for (const BoundReport& r : reports) {
        if (!r.satisfied) {
            ++s.violated;
            s.violations.push_back(r);
        }
        if (first || r.slack < s.min_slack) {
            s.min_slack = r.slack;
            s.tightest_name = r.name;
            first = false;
        }
    }
    return s;
}

std::vector<BoundReport> a1_demos() {
    const std::string id = "closed-form";
    std::vector<BoundReport> out;

    Tensor x0 = Tensor::from_vec({0.0, 0.0});
    Tensor g0 = hinge_grad(x0);
    out.push_back(make_bound("relu-flat-gradient",
                             std::max(std::fabs(g0.at(0)), std::fabs(g0.at(1))), 0.0, id));

    Tensor xr = Tensor::from_vec({2.1, 0.0});
    out.push_back(make_bound("relu-offset-output", std::fabs(hinge(xr) - 0.1), 0.0, id));

    // Straight path from [-1,-1] to [0,0]: pre-activation -4 + 2a stays
    // negative through a = 1, so the path integral vanishes.
    out.push_back(make_bound("flat-path-preactivation", -4.0 + 2.0 * 1.0, 0.0, id));
    Tensor xb = Tensor::from_vec({-1.0, -1.0});
    Tensor ig_flat = base::ig_midpoint(hinge_grad, x0, xb, 32);
    out.push_back(make_bound(
        "flat-path-integrated-gradient",
        std::max(std::fabs(ig_flat.at(0)), std::fabs(ig_flat.at(1))), 0.0, id));

    // The same baseline toward [2.1, 0] crosses the hinge, so the integral
    // picks up strictly positive mass.
    Tensor ig_cross = base::ig_midpoint(hinge_grad, xr, xb, 32);
    out.push_back(make_bound("crossing-path-integrated-gradient", 0.0, ig_cross.at(0), id));

    // softplus(x1 + x2 - 2) deep in its tail: gradient norm sigma(-10) * ||w||.
    double sig = 1.0 / (1.0 + std::exp(10.0));
    out.push_back(make_bound("softplus-tail-gradient", sig * std::sqrt(2.0), 1e-4, id));
    return out;
}

std::vector<BoundReport> instance_theorem_reports(const lm::Model& model,
                                                  const std::vector<int64_t>& tokens,
                                                  int64_t target, const core::HetaConfig& cfg,
                                                  const std::string& instance_id) {
    cfg.validate();
    if (cfg.windowed())
        throw ConfigError("theorem reports: windowed variants are covered by the "
                          "approximation-error decomposition");
    if (cfg.variant == core::Variant::TransitionOnly)
        throw ConfigError("theorem reports: the gate-only variant has no information term");
    if (cfg.gamma <= 0.0) throw ConfigError("theorem reports: gamma must be positive");

    core::AttributionVector av = core::attribute(model, tokens, target, cfg);

    lm::ForwardTrace tr = model.forward(tokens);
    model.target_logprob(tr, target);
    info::InfoConfig ic;
    ic.scheme = cfg.scheme;
    info::InfoResult ir = info::token_information(model, tr, ic);

    const int64_t N = static_cast<int64_t>(tokens.size());
    std::vector<BoundReport> out;
    for (int64_t i = 0; i < N - 1; ++i) {
        double floor = av.m.at(i) * cfg.gamma * 0.5 * ir.tv.at(i) * ir.tv.at(i);
        out.push_back(make_bound("pinsker-floor", floor, av.attr.at(i), instance_id));
    }

    if (variant_uses_gate(cfg.variant)) {
        for (int64_t i = 0; i < N; ++i)
            if (av.m.at(i) == 0.0)
                out.push_back(make_bound("gate-causality", av.attr.at(i), 0.0, instance_id));
        if (!av.degenerate_gate) {
            KahanSum zm;
            for (int64_t i = 0; i < N; ++i) zm.add(av.m.at(i));
            out.push_back(make_bound("gate-simplex", std::fabs(zm.value() - 1.0), 0.0,
                                     instance_id));
        }
    }
    return out;
}

std::vector<BoundReport> norm_bound_reports(const lm::Model& model,
                                            const std::vector<int64_t>& tokens, int64_t target,
                                            int64_t samples, uint64_t seed,
                                            const std::string& instance_id) {
    Tensor h = curv::dense_hessian(model, tokens, target);
    const int64_t n = h.rows();

    KahanSum l1, fsq;
    for (int64_t i = 0; i < h.numel(); ++i) {
        l1.add(std::fabs(h.data()[i]));
        fsq.add(h.data()[i] * h.data()[i]);
    }
    double h_l1 = l1.value();
    double h_f = std::sqrt(fsq.value());

    curv::CurvatureConfig cc;
    cc.mode = curv::Mode::ExactHvp;
    cc.samples = samples;
    cc.seed = seed;
    curv::SensitivityVector sv = curv::block_sensitivity(model, tokens, target, cc);

    std::vector<BoundReport> out;
    for (int64_t i = 0; i < sv.s.numel(); ++i)
        out.push_back(make_bound("block-mass-vs-total-curvature", sv.s.at(i), h_l1,
                                 instance_id));
    out.push_back(make_bound("total-curvature-vs-frobenius", h_l1,
                             static_cast<double>(n) * h_f, instance_id));
    return out;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ShapeError("loglog_slope: length mismatch");
    std::vector<double> lx, ly;
    for (size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0 && y[i] > 0.0) {
            lx.push_back(std::log(x[i]));
            ly.push_back(std::log(y[i]));
        }
    }
    if (lx.size() < 2) throw ConfigError("loglog_slope: fewer than two positive pairs");

    const double n = static_cast<double>(lx.size());
    KahanSum sx, sy;
    for (size_t i = 0; i < lx.size(); ++i) {
        sx.add(lx[i]);
        sy.add(ly[i]);
    }
    double mx = sx.value() / n, my = sy.value() / n;
    KahanSum cov, var;
    for (size_t i = 0; i < lx.size(); ++i) {
        cov.add((lx[i] - mx) * (ly[i] - my));
        var.add((lx[i] - mx) * (lx[i] - mx));
    }
    if (var.value() == 0.0) throw ConfigError("loglog_slope: all abscissae equal");
    return cov.value() / var.value();
}

TaylorReport taylor_remainder_check(const lm::Model& model, const std::vector<int64_t>& tokens,
                                    int64_t target, int64_t token,
                                    const std::vector<double>& eps_grid, uint64_t seed) {
    const int64_t N = static_cast<int64_t>(tokens.size());
    const int64_t d = model.config().d;
    if (token < 0 || token >= N) throw ConfigError("remainder check: token out of range");
    if (eps_grid.size() < 2) throw ConfigError("remainder check: need at least two step sizes");
    for (double e : eps_grid)
        if (e <= 0.0 || e > 0.1)
            throw ConfigError("remainder check: step sizes must lie in (0, 0.1]");

    lm::ForwardTrace tr = model.forward(tokens);
    double g0 = model.target_logprob(tr, target);
    ad::Id gid = tr.graph->gradients(tr.gnode, {tr.emb})[0];
    Tensor grad = tr.graph->val(gid);

    Rng rng(derive_seed(seed, seed_tag::kNoise, static_cast<uint64_t>(token)));
    Tensor u = Tensor::vec(d);
    double nrm = 0.0;
    while (nrm == 0.0) {
        KahanSum sq;
        for (int64_t c = 0; c < d; ++c) {
            u.at(c) = rng.next_normal();
            sq.add(u.at(c) * u.at(c));
        }
        nrm = std::sqrt(sq.value());
    }
    for (int64_t c = 0; c < d; ++c) u.at(c) /= nrm;

    KahanSum dds;
    for (int64_t c = 0; c < d; ++c) dds.add(grad.at(token, c) * u.at(c));
    double dd = dds.value();

    TaylorReport out;
    out.eps = eps_grid;
    for (double e : eps_grid) {
        Tensor rows = tr.emb_values.clone();
        for (int64_t c = 0; c < d; ++c) rows.at(token, c) += e * u.at(c);
        lm::ForwardOptions fo;
        fo.emb_override = rows;
        lm::ForwardTrace tp = model.forward(tokens, fo);
        double gp = model.target_logprob(tp, target);
        out.remainder.push_back(std::fabs(gp - g0 - e * dd));
    }

    // Spectral radius of the token's diagonal Hessian block by power
    // iteration on norm growth (robust to sign-alternating top eigenvalues).
    ad::HvpContext ctx(*tr.graph, tr.gnode, tr.emb);
    Tensor v = Tensor::vec(d);
    for (int64_t c = 0; c < d; ++c) v.at(c) = rng.next_normal();
    double lam = 0.0, prev = -1.0;
    for (int iter = 0; iter < 50; ++iter) {
        KahanSum sq;
        for (int64_t c = 0; c < d; ++c) sq.add(v.at(c) * v.at(c));
        double vn = std::sqrt(sq.value());
        if (vn == 0.0 || !std::isfinite(vn))
            throw NumericsError("remainder check: power iteration found no direction");
        Tensor probe = Tensor::mat(N, d);
        for (int64_t c = 0; c < d; ++c) probe.at(token, c) = v.at(c) / vn;
        Tensor hv = ctx.hvp(probe);
        KahanSum hsq;
        for (int64_t c = 0; c < d; ++c) {
            v.at(c) = hv.at(token, c);
            hsq.add(v.at(c) * v.at(c));
        }
        lam = std::sqrt(hsq.value());
        if (!std::isfinite(lam))
            throw NumericsError("remainder check: power iteration produced a non-finite value");
        if (prev >= 0.0 && std::fabs(lam - prev) <= 1e-8 * std::max(1.0, lam)) {
            out.power_converged = true;
            break;
        }
        prev = lam;
    }
    out.lambda_hat = lam;

    out.slope = loglog_slope(out.eps, out.remainder);
    out.reports.push_back(
        make_bound("remainder-slope-window", std::fabs(out.slope - 2.0), 0.3, "slope"));
    for (size_t j = 0; j < out.eps.size(); ++j)
        out.reports.push_back(make_bound("remainder-envelope", out.remainder[j],
                                         0.5 * lam * out.eps[j] * out.eps[j],
                                         "eps=" + std::to_string(out.eps[j])));
    return out;
}

AdditivityReport additivity_residual(const lm::Model& model, const std::vector<int64_t>& tokens,
                                     int64_t target, const core::AttributionVector& av,
                                     bool dense_oracle) {
    const int64_t N = static_cast<int64_t>(tokens.size());
    if (av.attr.numel() != N) throw ShapeError("additivity: attribution length mismatch");

    lm::ForwardTrace tr = model.forward(tokens);
    double g0 = model.target_logprob(tr, target);
    Tensor mask = info::mask_vector(model, tr, av.config.scheme);

    std::vector<int64_t> all_context;
    for (int64_t i = 0; i < N - 1; ++i) all_context.push_back(i);
    double g_masked =
        logprob_with_rows_masked(model, tokens, target, tr.emb_values, mask, all_context);

    AdditivityReport out;
    KahanSum s;
    for (int64_t i = 0; i < N - 1; ++i) s.add(av.attr.at(i));
    out.attr_sum = s.value();
    out.delta_g = g0 - g_masked;
    out.residual = std::fabs(out.attr_sum - out.delta_g);
    out.ratio = out.residual / std::max(std::fabs(out.delta_g), 1e-12);

    if (dense_oracle) {
        const int64_t d = model.config().d;
        Tensor h = curv::dense_hessian(model, tokens, target);
        std::vector<double> dx(static_cast<size_t>(N), 0.0);
        for (int64_t i = 0; i < N - 1; ++i) {
            KahanSum sq;
            for (int64_t c = 0; c < d; ++c) {
                double diff = tr.emb_values.at(i, c) - mask.at(c);
                sq.add(diff * diff);
            }
            dx[static_cast<size_t>(i)] = std::sqrt(sq.value());
        }
        KahanSum off;
        for (int64_t i = 0; i < N - 1; ++i)
            for (int64_t j = 0; j < N - 1; ++j)
                if (i != j && dx[static_cast<size_t>(i)] > 0.0 &&
                    dx[static_cast<size_t>(j)] > 0.0)
                    off.add(dx[static_cast<size_t>(i)] * block_sigma_max(h, d, i, j) *
                            dx[static_cast<size_t>(j)]);
        out.oracle_offdiag = 0.5 * off.value();
        out.oracle_enabled = true;
    }
    return out;
}

std::vector<core::SubsetObservation> subset_observations(const lm::Model& model,
                                                         const std::vector<int64_t>& tokens,
                                                         int64_t target,
                                                         const core::AttributionVector& av,
                                                         int64_t n_spans, uint64_t seed) {
    const int64_t N = static_cast<int64_t>(tokens.size());
    const int64_t C = N - 1;
    if (C < 1) throw ConfigError("subset observations: no context tokens");
    if (av.attr.numel() != N) throw ShapeError("subset observations: attribution length mismatch");
    if (n_spans < 0) throw ConfigError("subset observations: negative span count");

    lm::ForwardTrace tr = model.forward(tokens);
    double g0 = model.target_logprob(tr, target);
    Tensor mask = info::mask_vector(model, tr, av.config.scheme);

    std::vector<std::vector<int64_t>> subsets;
    for (int64_t i = 0; i < C; ++i) subsets.push_back({i});
    for (int64_t j = 0; j < n_spans; ++j) {
        Rng rng(derive_seed(seed, seed_tag::kSubset, static_cast<uint64_t>(j)));
        int64_t len = 2 + static_cast<int64_t>(rng.next_below(
                              static_cast<uint64_t>(std::max<int64_t>(1, C - 1))));
        len = std::min(len, C);
        int64_t start = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(C - len + 1)));
        std::vector<int64_t> span;
        for (int64_t p = start; p < start + len; ++p) span.push_back(p);
        subsets.push_back(std::move(span));
    }

    std::vector<core::SubsetObservation> out;
    out.reserve(subsets.size());
    for (const auto& sub : subsets) {
        core::SubsetObservation ob;
        KahanSum gs, gi;
        for (int64_t p : sub) {
            gs.add(av.m.at(p) * av.s.at(p));
            gi.add(av.m.at(p) * av.i.at(p));
        }
        ob.sum_gated_s = gs.value();
        ob.sum_gated_i = gi.value();
        ob.delta_g =
            g0 - logprob_with_rows_masked(model, tokens, target, tr.emb_values, mask, sub);
        out.push_back(ob);
    }
    return out;
}

std::vector<LrwinCell> lrwin_error_decomposition(const lm::Model& model,
                                                 const std::vector<int64_t>& tokens,
                                                 int64_t target, const core::HetaConfig& base,
                                                 const std::vector<int64_t>& ranks,
                                                 const std::vector<int64_t>& windows) {
    if (ranks.empty() || windows.empty())
        throw ConfigError("approximation decomposition: empty rank or window grid");
    const int64_t N = static_cast<int64_t>(tokens.size());
    const int64_t d = model.config().d;

    core::HetaConfig full_cfg = base;
    full_cfg.variant = core::Variant::Full;
    core::AttributionVector av_full = core::attribute(model, tokens, target, full_cfg);

    lm::ForwardTrace tr = model.forward(tokens);
    model.target_logprob(tr, target);
    info::InfoConfig ic;
    ic.scheme = base.scheme;
    ic.capture_distributions = true;
    info::InfoResult ir = info::token_information(model, tr, ic);

    double mu_full = min_entry(tr.p_orig);
    for (int64_t i = 0; i < N - 1; ++i)
        mu_full = std::min(mu_full, min_entry(ir.p_masked[static_cast<size_t>(i)]));

    std::vector<LrwinCell> out;
    for (int64_t k : ranks) {
        for (int64_t w : windows) {
            core::HetaConfig acfg = base;
            acfg.variant = core::Variant::LowRankWindowed;
            acfg.rank = k;
            acfg.window = w;
            acfg.stride = std::max<int64_t>(1, w / 2);
            core::AttributionVector av_a = core::attribute(model, tokens, target, acfg);

            LrwinCell cell;
            cell.rank = k;
            cell.window = w;
            cell.tau_hat = av_a.tau_hat;
            for (int64_t i = 0; i < N; ++i)
                cell.eps_m = std::max(cell.eps_m, std::fabs(av_full.m.at(i) - av_a.m.at(i)));

            double mu = mu_full;
            std::vector<double> eps_mask(static_cast<size_t>(N), 0.0);
            auto layout = core::window_layout(N - 1, acfg.window, acfg.stride);
            for (const core::Window& win : layout) {
                std::vector<int64_t> wtoks = core::window_tokens(tokens, win);
                lm::ForwardTrace wtr = model.forward(wtoks);
                model.target_logprob(wtr, target);
                cell.eps_orig = std::max(cell.eps_orig, l1_distance(tr.p_orig, wtr.p_orig));
                mu = std::min(mu, min_entry(wtr.p_orig));

                info::InfoConfig icw;
                icw.scheme = base.scheme;
                icw.capture_distributions = true;
                info::InfoResult irw = info::token_information(model, wtr, icw);
                for (int64_t p = 0; p < win.end - win.begin; ++p) {
                    int64_t gidx = win.begin + p;
                    const Tensor& full_pm = ir.p_masked[static_cast<size_t>(gidx)];
                    const Tensor& win_pm = irw.p_masked[static_cast<size_t>(p)];
                    eps_mask[static_cast<size_t>(gidx)] = std::max(
                        eps_mask[static_cast<size_t>(gidx)], l1_distance(full_pm, win_pm));
                    mu = std::min(mu, min_entry(win_pm));
                }
            }
            if (mu <= 0.0)
                throw NumericsError(
                    "approximation decomposition: a readout distribution hit the "
                    "simplex boundary");
            cell.mu_hat = mu;

            for (int64_t i = 0; i < N - 1; ++i) {
                double lhs = std::fabs(av_full.attr.at(i) - av_a.attr.at(i));
                double rhs = cell.eps_m * (base.beta * av_full.s.at(i) +
                                           base.gamma * av_full.i.at(i)) +
                             base.beta * std::sqrt(static_cast<double>(d)) * cell.tau_hat +
                             (base.gamma / mu) *
                                 (cell.eps_orig + eps_mask[static_cast<size_t>(i)]);
                cell.per_token.push_back(make_bound(
                    "approx-error-bound", lhs, rhs,
                    "k=" + std::to_string(k) + ",w=" + std::to_string(w) +
                        ",i=" + std::to_string(i)));
            }
            out.push_back(std::move(cell));
        }
    }
    return out;
}

std::vector<MethodIntervention> deletion_intervention_check(
    const lm::Model& model, const std::vector<corpus::InstanceTokens>& instances,
    const std::vector<std::pair<std::string, AttrMethod>>& methods, int64_t k, uint64_t seed) {
    if (instances.empty()) throw ConfigError("intervention check: no instances");
    if (methods.empty()) throw ConfigError("intervention check: no methods");
    if (k < 1) throw ConfigError("intervention check: k must be at least 1");

    std::vector<MethodIntervention> out(methods.size());
    for (size_t m = 0; m < methods.size(); ++m) out[m].method = methods[m].first;

    std::vector<double> random_drops;
    for (size_t idx = 0; idx < instances.size(); ++idx) {
        const std::vector<int64_t>& tokens = instances[idx].input;
        const int64_t target = instances[idx].target;
        const int64_t N = static_cast<int64_t>(tokens.size());
        const int64_t C = N - 1;
        if (C < 3 || k > C)
            throw ConfigError("intervention check: instance too short for k tokens");

        lm::ForwardTrace tr = model.forward(tokens);
        double g0 = model.target_logprob(tr, target);
        Tensor sent = model.sentinel_embedding();

        info::InfoConfig ic;
        ic.scheme = info::MaskScheme::Sentinel;
        info::InfoResult ir = info::token_information(model, tr, ic);

        auto joint_drop = [&](const std::vector<int64_t>& masked) {
            return g0 - logprob_with_rows_masked(model, tokens, target, tr.emb_values, sent,
                                                 masked);
        };

        // One shared random-k control per instance, drawn without replacement.
        Rng rng(derive_seed(seed, seed_tag::kSubset, static_cast<uint64_t>(idx)));
        std::vector<int64_t> pool(static_cast<size_t>(C));
        for (int64_t i = 0; i < C; ++i) pool[static_cast<size_t>(i)] = i;
        for (int64_t i = 0; i < k; ++i) {
            int64_t j = i + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(C - i)));
            std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
        }
        std::vector<int64_t> random_set(pool.begin(), pool.begin() + k);
        random_drops.push_back(joint_drop(random_set));

        std::vector<std::pair<int64_t, int64_t>> pairs;
        for (int64_t i = 0; i < C; ++i) pairs.push_back({i, i});

        for (size_t m = 0; m < methods.size(); ++m) {
            Tensor attr = methods[m].second(tokens, target);
            if (attr.numel() != N)
                throw ShapeError("intervention check: attribution length mismatch");
            out[m].rho.push_back(metrics::spearman_rho(attr, ir.delta, pairs));
            out[m].top_drop.push_back(joint_drop(metrics::top_k_positions(attr, k)));
        }
    }

    for (MethodIntervention& mi : out) {
        mi.random_drop = random_drops;
        mi.mean_rho = metrics::aggregate(mi.rho).mean;
        mi.p_value = metrics::paired_t_pvalue_one_sided(mi.top_drop, mi.random_drop);
    }
    return out;
}

}  // namespace heta::theory
