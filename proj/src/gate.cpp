#include "heta/gate.h"

#include <algorithm>
#include <cmath>

#include "heta/kahan.h"

namespace heta::gate {

namespace {

// (head-average of A at layer l, plus identity) / 2 — the residual-lane mix
// used for every layer above the entry edge.
Tensor residual_mix(const std::vector<Tensor>& heads_at_layer, int64_t T) {
    Tensor e = Tensor::mat(T, T);
    double inv_h = 1.0 / static_cast<double>(heads_at_layer.size());
    for (const Tensor& a : heads_at_layer)
        for (int64_t i = 0; i < T * T; ++i) e.data()[i] += a.data()[i];
    for (int64_t i = 0; i < T * T; ++i) e.data()[i] *= 0.5 * inv_h;
    for (int64_t i = 0; i < T; ++i) e.at(i, i) += 0.5;
    return e;
}

// row_vec * M, both over [T]; plain accumulation is fine at these sizes but
// keep it compensated so evaluation order can never matter.
Tensor vecmat(const Tensor& v, const Tensor& m) {
    int64_t T = v.numel();
    Tensor out = Tensor::vec(T);
    for (int64_t c = 0; c < T; ++c) {
        KahanSum s;
        for (int64_t r = 0; r < T; ++r) s.add(v.at(r) * m.at(r, c));
        out.at(c) = s.value();
    }
    return out;
}

std::vector<int64_t> checked_subset(const lm::ForwardTrace& trace,
                                    const std::vector<int64_t>& layer_subset) {
    if (layer_subset.empty()) throw ConfigError("rollout: empty layer subset");
    int64_t L = static_cast<int64_t>(trace.attn.size());
    std::vector<int64_t> subset = layer_subset;
    std::sort(subset.begin(), subset.end());
    subset.erase(std::unique(subset.begin(), subset.end()), subset.end());
    for (int64_t l : subset)
        if (l < 0 || l >= L)
            throw ConfigError("rollout: layer index " + std::to_string(l) +
                              " outside 0.." + std::to_string(L - 1));
    return subset;
}

}  // namespace

std::vector<int64_t> all_layers(const lm::ForwardTrace& trace) {
    std::vector<int64_t> out(trace.attn.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int64_t>(i);
    return out;
}

std::vector<std::vector<Tensor>> rollout_to_target(const lm::ForwardTrace& trace,
                                                   int64_t readout_pos,
                                                   const std::vector<int64_t>& layer_subset) {
    const int64_t T = trace.T;
    if (readout_pos < 0 || readout_pos >= T)
        throw ConfigError("rollout: readout position outside the sequence");
    std::vector<int64_t> subset = checked_subset(trace, layer_subset);
    const int64_t L = static_cast<int64_t>(trace.attn.size());

    // Row `readout_pos` of the product of residual mixes from the top down to
    // (but not including) layer l, built incrementally: row(l) = row(l+1) * E^(l+1).
    std::vector<Tensor> top_row(static_cast<size_t>(L));
    Tensor row = Tensor::vec(T);
    row.at(readout_pos) = 1.0;
    for (int64_t l = L - 1; l >= 0; --l) {
        top_row[static_cast<size_t>(l)] = row;
        if (l > 0) row = vecmat(row, residual_mix(trace.attn[static_cast<size_t>(l)], T));
    }

    std::vector<std::vector<Tensor>> phi;
    phi.reserve(subset.size());
    for (int64_t l : subset) {
        std::vector<Tensor> per_head;
        const Tensor& above = top_row[static_cast<size_t>(l)];
        for (const Tensor& a : trace.attn[static_cast<size_t>(l)])
            per_head.push_back(vecmat(above, a));
        phi.push_back(std::move(per_head));
    }
    return phi;
}

RolloutResult transition_gate(const lm::ForwardTrace& trace, int64_t readout_pos,
                              const std::vector<int64_t>& layer_subset) {
    std::vector<int64_t> subset = checked_subset(trace, layer_subset);
    RolloutResult res;
    res.phi = rollout_to_target(trace, readout_pos, subset);

    const int64_t T = trace.T;
    Tensor raw = Tensor::vec(T);
    std::vector<KahanSum> acc(static_cast<size_t>(T));
    for (size_t si = 0; si < subset.size(); ++si) {
        size_t l = static_cast<size_t>(subset[si]);
        for (size_t h = 0; h < res.phi[si].size(); ++h) {
            const Tensor& phi = res.phi[si][h];
            const Tensor& norms = trace.value_out_l1[l][h];
            for (int64_t i = 0; i < T; ++i)
                acc[static_cast<size_t>(i)].add(phi.at(i) * norms.at(i));
        }
    }
    KahanSum zsum;
    for (int64_t i = 0; i < T; ++i) {
        raw.at(i) = acc[static_cast<size_t>(i)].value();
        if (raw.at(i) < 0.0 && raw.at(i) > -1e-15) raw.at(i) = 0.0;  // rounding guard
        zsum.add(raw.at(i));
    }
    res.z = zsum.value();

    res.m_gate = Tensor::vec(T);
    if (res.z <= 0.0) {
        res.degenerate = true;
        res.z = std::max(res.z, 0.0);
        return res;  // gate stays all-zero: no causal mass reaches the readout
    }
    for (int64_t i = 0; i < T; ++i) res.m_gate.at(i) = raw.at(i) / res.z;
    return res;
}

RolloutResult transition_gate(const lm::ForwardTrace& trace) {
    return transition_gate(trace, trace.T - 1, all_layers(trace));
}

Tensor mix_product_row(const lm::ForwardTrace& trace, int64_t readout_pos) {
    const int64_t T = trace.T;
    if (readout_pos < 0 || readout_pos >= T)
        throw ConfigError("rollout: readout position outside the sequence");
    Tensor row = Tensor::vec(T);
    row.at(readout_pos) = 1.0;
    for (int64_t l = static_cast<int64_t>(trace.attn.size()) - 1; l >= 0; --l)
        row = vecmat(row, residual_mix(trace.attn[static_cast<size_t>(l)], T));
    return row;
}

}  // namespace heta::gate
