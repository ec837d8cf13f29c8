#pragma once

#include <cstdint>
#include <string>
#include <optional>
#include <vector>

#include "heta/curvature.h"
#include "heta/gate.h"
#include "heta/info.h"
#include "heta/lm.h"
#include "heta/tensor.h"

namespace heta::core {

// Attribution configurations: the full combiner, its efficiency
// approximations, and the single-component ablations.
enum class Variant {
    Full,
    LowRank,          // sketched curvature
    LayerSubset,      // top-layers-only gate and curvature
    Windowed,         // Algorithm-style window accumulation
    LowRankWindowed,  // both approximations together
    GradSquared,      // squared gradients in place of curvature
    TransitionOnly,   // gate alone
    HessianOnly,      // curvature alone
    KlOnly,           // information alone
    NoGate,           // weighted sum without the gate
    UniformGate,      // constant 1/(T-1) in place of the gate
};

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct HetaConfig {
    Variant variant = Variant::Full;
    double beta = 0.5;
    double gamma = 0.5;
    info::MaskScheme scheme = info::MaskScheme::Sentinel;
    int64_t window = 32;  // windowed variants
    int64_t stride = 16;
    std::vector<int64_t> layer_subset;  // LayerSubset variant only
    int64_t samples = 8;                // curvature probes per token
    int64_t rank = 8;                   // low-rank sketch width
    uint64_t seed = 0;
    bool exact_tail = true;
    // Attribute at these embedding rows instead of the token table's ([N,d]);
    // the sensitivity metric perturbs inputs through this. Windowed variants
    // slice the matching rows per window.
    std::optional<Tensor> emb_override;

    bool windowed() const {
        return variant == Variant::Windowed || variant == Variant::LowRankWindowed;
    }
    void validate() const;
};

struct AttributionVector {
    Tensor attr;        // [T] per-token scores, all >= 0
    Tensor m;           // [T] gate factor actually applied (zeros when unused)
    Tensor s;           // [T] curvature component
    Tensor i;           // [T] information component
    Tensor s_variance;  // [T] probe variance diagnostic
    Tensor nu;          // [T] window visit counts (ones when not windowed)
    int64_t target_pos = -1;
    int64_t target = -1;
    bool degenerate_gate = false;
    bool degenerate_path = false;  // path methods: the baseline equals the input
    double tau_hat = 0.0;  // low-rank tail estimate when applicable
    int64_t hvp_count = 0;
    HetaConfig config;
};

// The per-token combination rule for each variant; the decomposition audit
// re-derives scores through this. T is the sequence length.
double reconstruct_score(const HetaConfig& cfg, int64_t T, double m, double s, double i);

AttributionVector attribute(const lm::Model& model, const std::vector<int64_t>& tokens,
                            int64_t target, const HetaConfig& cfg);

// Multi-token target: sums the single-target attributions of each span token,
// each computed on its own prefix with teacher forcing. Spans need at least
// one context token before them.
AttributionVector attribute_span(const lm::Model& model, const std::vector<int64_t>& tokens,
                                 int64_t span_start, int64_t span_len, const HetaConfig& cfg);

// Source-position windows [begin, end); every window gets the readout token
// appended when run. Also used by the bound diagnostics to replay windows.
struct Window {
    int64_t begin = 0;
    int64_t end = 0;
};
std::vector<Window> window_layout(int64_t n_sources, int64_t window, int64_t stride);
std::vector<int64_t> window_tokens(const std::vector<int64_t>& tokens, const Window& w);

// Weight fitting: observations pair a masked token subset's measured
// log-prob drop with the subset's summed gated components.
struct SubsetObservation {
    double sum_gated_s = 0.0;  // sum over the subset of M[i] * S[i]
    double sum_gated_i = 0.0;  // sum over the subset of M[i] * I[i]
    double delta_g = 0.0;      // g(X) - g(X with the subset masked)
};

struct FitResult {
    double beta = 0.0;
    double gamma = 0.0;
    double loss = 0.0;
    bool collinear = false;
};

double fit_loss(const std::vector<SubsetObservation>& obs, double beta, double gamma);
// Least squares over beta, gamma >= 0 (closed form for two variables).
FitResult fit_weights(const std::vector<SubsetObservation>& obs);

}  // namespace heta::core
