#include "heta/info.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "heta/error.h"
#include "heta/kahan.h"

namespace heta::info {

namespace {

std::vector<int64_t> checked_positions(const std::vector<int64_t>& want, int64_t T) {
    std::vector<int64_t> p = want;
    if (p.empty()) {
        p.resize(static_cast<size_t>(T - 1));
        std::iota(p.begin(), p.end(), 0);
        return p;
    }
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    for (int64_t i : p) {
        if (i < 0 || i >= T)
            throw ConfigError("token_information: position " + std::to_string(i) +
                              " out of range for T=" + std::to_string(T));
        if (i == T - 1)
            throw ConfigError("token_information: the readout position is not maskable");
    }
    return p;
}

}  // namespace

double kl_from_logs(const Tensor& logp_p, const Tensor& logp_q) {
    if (logp_p.rank() != 1 || !logp_p.same_shape(logp_q))
        throw ShapeError("kl_from_logs: expected two log-prob vectors of one shape");
    KahanSum s;
    for (int64_t v = 0; v < logp_p.cols(); ++v)
        s.add(std::exp(logp_p.at(v)) * (logp_p.at(v) - logp_q.at(v)));
    double kl = s.value();
    if (kl < -1e-9) throw NumericsError("kl_from_logs: divergence came out negative");
    return std::max(0.0, kl);
}

const char* scheme_name(MaskScheme s) {
    switch (s) {
        case MaskScheme::Zero: return "zero";
        case MaskScheme::Mean: return "mean";
        case MaskScheme::Sentinel: return "sentinel";
    }
    throw ConfigError("scheme_name: unknown mask scheme");
}

MaskScheme scheme_from_name(const std::string& name) {
    if (name == "zero") return MaskScheme::Zero;
    if (name == "mean") return MaskScheme::Mean;
    if (name == "sentinel") return MaskScheme::Sentinel;
    throw ConfigError("scheme_from_name: unknown mask scheme '" + name + "'");
}

Tensor mask_vector(const lm::Model& model, const lm::ForwardTrace& trace, MaskScheme scheme) {
    const int64_t d = trace.emb_values.cols();
    switch (scheme) {
        case MaskScheme::Zero:
            return Tensor::vec(d);
        case MaskScheme::Mean: {
            Tensor m = Tensor::vec(d);
            for (int64_t c = 0; c < d; ++c) {
                KahanSum s;
                for (int64_t r = 0; r < trace.T; ++r) s.add(trace.emb_values.at(r, c));
                m.at(c) = s.value() / static_cast<double>(trace.T);
            }
            return m;
        }
        case MaskScheme::Sentinel:
            return model.sentinel_embedding();
    }
    throw ConfigError("mask_vector: unknown scheme");
}

InfoResult token_information(const lm::Model& model, const lm::ForwardTrace& trace,
                             const InfoConfig& cfg) {
    if (trace.target < 0)
        throw ConfigError("token_information: trace needs a target (call target_logprob first)");
    const int64_t T = trace.T;
    const int64_t d = trace.emb_values.cols();

    InfoResult out;
    out.i = Tensor::vec(T);
    out.tv = Tensor::vec(T);
    out.delta = Tensor::vec(T);
    out.delta_pos = Tensor::vec(T);

    if (T < 2) throw ConfigError("token_information: need at least one context token");
    const Tensor& lp_orig = trace.graph->val(trace.logp);
    const double g_orig = lp_orig.at(trace.target);
    Tensor mask = mask_vector(model, trace, cfg.scheme);
    if (cfg.capture_distributions) out.p_masked.resize(static_cast<size_t>(T));

    for (int64_t pos : checked_positions(cfg.positions, T)) {
        Tensor emb = trace.emb_values.clone();
        std::memcpy(emb.data() + pos * d, mask.data(), sizeof(double) * static_cast<size_t>(d));
        lm::ForwardOptions fo;
        fo.emb_override = std::move(emb);
        lm::ForwardTrace masked = model.forward(trace.tokens, fo);
        const Tensor& lp_masked = masked.graph->val(masked.logp);

        out.i.at(pos) = kl_from_logs(lp_orig, lp_masked);
        KahanSum l1;
        for (int64_t v = 0; v < lp_orig.cols(); ++v)
            l1.add(std::fabs(trace.p_orig.at(v) - masked.p_orig.at(v)));
        out.tv.at(pos) = l1.value();
        out.delta.at(pos) = g_orig - lp_masked.at(trace.target);
        out.delta_pos.at(pos) = std::max(0.0, out.delta.at(pos));
        if (cfg.capture_distributions) out.p_masked[static_cast<size_t>(pos)] = masked.p_orig;
    }
    return out;
}

}  // namespace heta::info
