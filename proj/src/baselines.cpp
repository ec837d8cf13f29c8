#include "heta/baselines.h"

#include <cmath>
#include <cstring>

#include "heta/error.h"
#include "heta/gate.h"
#include "heta/kahan.h"

namespace heta::base {

namespace {

Tensor logprob_gradient(const lm::Model& model, const std::vector<int64_t>& tokens,
                        int64_t target, const std::optional<Tensor>& emb_override,
                        double* g_out = nullptr) {
    lm::ForwardOptions fo;
    fo.emb_override = emb_override;
    lm::ForwardTrace tr = model.forward(tokens, fo);
    double g = model.target_logprob(tr, target);
    if (g_out) *g_out = g;
    ad::Id gid = tr.graph->gradients(tr.gnode, {tr.emb})[0];
    return tr.graph->val(gid).clone();
}

Tensor baseline_rows(const lm::Model& model, const Tensor& x, info::MaskScheme scheme) {
    const int64_t T = x.rows();
    const int64_t d = x.cols();
    Tensor out = Tensor::mat(T, d);
    if (scheme == info::MaskScheme::Zero) return out;
    Tensor row = Tensor::vec(d);
    if (scheme == info::MaskScheme::Mean) {
        for (int64_t c = 0; c < d; ++c) {
            KahanSum s;
            for (int64_t i = 0; i < T; ++i) s.add(x.at(i, c));
            row.at(c) = s.value() / static_cast<double>(T);
        }
    } else {
        row = model.sentinel_embedding();
    }
    for (int64_t i = 0; i < T; ++i)
        std::memcpy(out.data() + i * d, row.data(), static_cast<size_t>(d) * sizeof(double));
    return out;
}

Tensor row_abs_sums(const Tensor& mat) {
    Tensor out = Tensor::vec(mat.rows());
    for (int64_t i = 0; i < mat.rows(); ++i) {
        KahanSum s;
        for (int64_t c = 0; c < mat.cols(); ++c) s.add(std::fabs(mat.at(i, c)));
        out.at(i) = s.value();
    }
    return out;
}

}  // namespace

const char* method_name(Method m) {
    switch (m) {
        case Method::Grad: return "grad";
        case Method::InputXGrad: return "input-x-grad";
        case Method::IntegratedGradients: return "ig";
        case Method::AttnRollout: return "attn-rollout";
    }
    throw ConfigError("method_name: unknown method");
}

Method method_from_name(const std::string& name) {
    for (Method m : {Method::Grad, Method::InputXGrad, Method::IntegratedGradients,
                     Method::AttnRollout})
        if (name == method_name(m)) return m;
    throw ConfigError("unknown baseline method '" + name + "'");
}

void BaselineConfig::validate() const {
    if (ig_steps < 2) throw ConfigError("baseline: ig_steps must be at least 2");
}

Tensor ig_midpoint(const std::function<Tensor(const Tensor&)>& grad_fn, const Tensor& x,
                   const Tensor& x_baseline, int64_t steps) {
    if (steps < 1) throw ConfigError("ig_midpoint: steps must be positive");
    if (x.rows() != x_baseline.rows() || x.cols() != x_baseline.cols())
        throw ShapeError("ig_midpoint: input and baseline shapes differ");

    const int64_t n = x.numel();
    std::vector<KahanSum> acc(static_cast<size_t>(n));
    Tensor point = x.clone();
    for (int64_t t = 0; t < steps; ++t) {
        double alpha = (static_cast<double>(t) + 0.5) / static_cast<double>(steps);
        for (int64_t j = 0; j < n; ++j)
            point.data()[j] =
                x_baseline.data()[j] + alpha * (x.data()[j] - x_baseline.data()[j]);
        Tensor g = grad_fn(point);
        if (g.numel() != n) throw ShapeError("ig_midpoint: gradient shape differs");
        for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)].add(g.data()[j]);
    }

    Tensor out = x.clone();
    for (int64_t j = 0; j < n; ++j)
        out.data()[j] = (x.data()[j] - x_baseline.data()[j]) * acc[static_cast<size_t>(j)].value() /
                        static_cast<double>(steps);
    return out;
}

IgRun ig_path(const lm::Model& model, const std::vector<int64_t>& tokens, int64_t target,
              info::MaskScheme scheme, int64_t steps,
              const std::optional<Tensor>& emb_override) {
    if (steps < 2) throw ConfigError("ig_path: steps must be at least 2");
    const int64_t T = static_cast<int64_t>(tokens.size());
    const int64_t d = model.config().d;

    IgRun run;
    Tensor x = emb_override ? emb_override->clone() : model.embed(tokens);
    Tensor xb = baseline_rows(model, x, scheme);

    run.degenerate = true;
    for (int64_t j = 0; j < T * d && run.degenerate; ++j)
        run.degenerate = x.data()[j] == xb.data()[j];

    lm::ForwardOptions fo_in;
    fo_in.emb_override = emb_override;
    lm::ForwardTrace tr_in = model.forward(tokens, fo_in);
    run.f_input = model.target_logprob(tr_in, target);
    if (run.degenerate) {
        run.f_baseline = run.f_input;
        run.ig = Tensor::mat(T, d);
        return run;
    }

    lm::ForwardOptions fo;
    fo.emb_override = xb;
    lm::ForwardTrace tr_b = model.forward(tokens, fo);
    run.f_baseline = model.target_logprob(tr_b, target);

    auto grad_fn = [&](const Tensor& point) {
        return logprob_gradient(model, tokens, target, point);
    };
    run.ig = ig_midpoint(grad_fn, x, xb, steps);
    return run;
}

core::AttributionVector baseline_attribute(const lm::Model& model,
                                           const std::vector<int64_t>& tokens, int64_t target,
                                           const BaselineConfig& cfg) {
    cfg.validate();
    const int64_t N = static_cast<int64_t>(tokens.size());
    if (N < 2) throw ConfigError("baseline_attribute: need at least one context token");

    if (cfg.emb_override &&
        (cfg.emb_override->rows() != N || cfg.emb_override->cols() != model.config().d))
        throw ShapeError("baseline_attribute: emb_override must be [tokens, d]");

    core::AttributionVector out;
    out.target_pos = N - 1;
    out.target = target;
    out.m = Tensor::vec(N);
    out.s = Tensor::vec(N);
    out.i = Tensor::vec(N);
    out.s_variance = Tensor::vec(N);
    out.nu = Tensor::vec(N);
    for (int64_t k = 0; k < N; ++k) out.nu.at(k) = 1.0;

    switch (cfg.method) {
        case Method::Grad: {
            Tensor grad = logprob_gradient(model, tokens, target, cfg.emb_override);
            out.attr = row_abs_sums(grad);
            break;
        }
        case Method::InputXGrad: {
            lm::ForwardOptions fo;
            fo.emb_override = cfg.emb_override;
            lm::ForwardTrace tr = model.forward(tokens, fo);
            model.target_logprob(tr, target);
            ad::Id gid = tr.graph->gradients(tr.gnode, {tr.emb})[0];
            const Tensor& grad = tr.graph->val(gid);
            out.attr = Tensor::vec(N);
            for (int64_t i = 0; i < N; ++i) {
                KahanSum s;
                for (int64_t c = 0; c < grad.cols(); ++c)
                    s.add(std::fabs(tr.emb_values.at(i, c) * grad.at(i, c)));
                out.attr.at(i) = s.value();
            }
            break;
        }
        case Method::IntegratedGradients: {
            IgRun run = ig_path(model, tokens, target, cfg.ig_baseline, cfg.ig_steps,
                                cfg.emb_override);
            out.attr = row_abs_sums(run.ig);
            out.degenerate_path = run.degenerate;
            break;
        }
        case Method::AttnRollout: {
            lm::ForwardOptions fo;
            fo.emb_override = cfg.emb_override;
            lm::ForwardTrace tr = model.forward(tokens, fo);
            out.attr = gate::mix_product_row(tr, N - 1);
            out.m = out.attr;
            break;
        }
    }

    if (!out.attr.all_finite()) throw NumericsError("baseline_attribute: non-finite score");
    for (int64_t k = 0; k < N; ++k)
        if (out.attr.at(k) < 0.0) throw NumericsError("baseline_attribute: negative score");
    return out;
}

std::vector<double> ig_convergence_residuals(const lm::Model& model,
                                             const std::vector<int64_t>& tokens, int64_t target,
                                             info::MaskScheme scheme,
                                             const std::vector<int64_t>& steps_list) {
    if (steps_list.size() < 2)
        throw ConfigError("ig_convergence_residuals: need at least two step counts");
    std::vector<double> out;
    out.reserve(steps_list.size());
    for (int64_t steps : steps_list) {
        IgRun run = ig_path(model, tokens, target, scheme, steps);
        KahanSum total;
        for (int64_t j = 0; j < run.ig.numel(); ++j) total.add(run.ig.data()[j]);
        out.push_back(std::fabs(total.value() - (run.f_input - run.f_baseline)));
    }
    return out;
}

}  // namespace heta::base
