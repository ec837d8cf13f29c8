#pragma once

#include <cstdint>
#include <vector>

#include "heta/lm.h"
#include "heta/tensor.h"

namespace heta::info {

// What replaces a token's embedding row when it is masked out. Masking always
// happens before positions are added.
enum class MaskScheme { Zero, Mean, Sentinel };

const char* scheme_name(MaskScheme s);
MaskScheme scheme_from_name(const std::string& name);

struct InfoConfig {
    MaskScheme scheme = MaskScheme::Sentinel;
    // Context positions to evaluate; empty = all of 0..T-2. The readout
    // position itself is never maskable.
    std::vector<int64_t> positions;
    // Keep each masked readout distribution (for bound diagnostics).
    bool capture_distributions = false;
};

struct InfoResult {
    Tensor i;          // [T] KL of the original readout from the masked one
    Tensor tv;         // [T] l1 distance between the two readouts, in [0,2]
    Tensor delta;      // [T] signed drop of the target log-probability
    Tensor delta_pos;  // [T] positive part of delta
    // Masked readout distributions per position, only when captured;
    // unevaluated slots stay empty.
    std::vector<Tensor> p_masked;
};

// KL divergence between two distributions given as log-probability vectors,
// natural log, compensated summation.
double kl_from_logs(const Tensor& logp_p, const Tensor& logp_q);

// The embedding row used as the mask for this trace under the given scheme.
// Mean is the mean of the rows actually fed to the trace, so truncated-window
// runs mask with their own window mean.
Tensor mask_vector(const lm::Model& model, const lm::ForwardTrace& trace, MaskScheme scheme);

// Per-token information flow: re-run the model with token i's embedding row
// masked and measure how far the readout distribution moves. The trace must
// have its target set (target_logprob) so the probability drop is defined.
InfoResult token_information(const lm::Model& model, const lm::ForwardTrace& trace,
                             const InfoConfig& cfg);

}  // namespace heta::info
