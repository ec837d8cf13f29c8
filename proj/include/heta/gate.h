#pragma once

#include <cstdint>
#include <vector>

#include "heta/lm.h"
#include "heta/tensor.h"

namespace heta::gate {

// Attention flow i -> readout position, aggregated over paths through the
// layer stack, weighted by per-token value-projection mass, normalized onto
// the simplex.
struct RolloutResult {
    // phi[s][h] is a length-T vector: path mass from each source position to
    // the readout position entering at selected layer s (trace layer order),
    // head h.
    std::vector<std::vector<Tensor>> phi;
    double z = 0.0;
    Tensor m_gate;           // [T], sums to 1 unless degenerate
    bool degenerate = false;  // z == 0: no causal mass, gate forced to zero
};

// Path mass per (selected layer, head, source): the raw per-head attention
// edge enters at the selected layer, every layer above mixes attention with
// the residual lane as (A_avg + I)/2, composed top-down to the readout row.
// layer_subset holds 0-based layer indices; empty is an error.
std::vector<std::vector<Tensor>> rollout_to_target(const lm::ForwardTrace& trace,
                                                   int64_t readout_pos,
                                                   const std::vector<int64_t>& layer_subset);

RolloutResult transition_gate(const lm::ForwardTrace& trace, int64_t readout_pos,
                              const std::vector<int64_t>& layer_subset);

// All layers, readout at the last input position.
RolloutResult transition_gate(const lm::ForwardTrace& trace);

std::vector<int64_t> all_layers(const lm::ForwardTrace& trace);

// Readout row of the residual-mix product over all layers: plain attention
// rollout, no value weighting and no normalization beyond the mix rule. Rows
// of every factor sum to one, so the result lies on the simplex by itself.
Tensor mix_product_row(const lm::ForwardTrace& trace, int64_t readout_pos);

}  // namespace heta::gate
