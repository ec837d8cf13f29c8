#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "heta/heta.h"
#include "heta/info.h"
#include "heta/lm.h"
#include "heta/tensor.h"

namespace heta::base {

// Reference attribution methods the combined score is compared against.
enum class Method { Grad, InputXGrad, IntegratedGradients, AttnRollout };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

struct BaselineConfig {
    Method method = Method::Grad;
    int64_t ig_steps = 32;
    info::MaskScheme ig_baseline = info::MaskScheme::Zero;
    // Score these embedding rows instead of the token table's ([N,d]); the
    // sensitivity metric perturbs inputs through this.
    std::optional<Tensor> emb_override;

    void validate() const;  // ig_steps >= 2
};

// Midpoint-rule Riemann sum of grad_fn along the straight path from
// x_baseline to x, multiplied elementwise by (x - x_baseline). grad_fn must
// return the gradient of the scored scalar at the given point, same shape.
Tensor ig_midpoint(const std::function<Tensor(const Tensor&)>& grad_fn, const Tensor& x,
                   const Tensor& x_baseline, int64_t steps);

// One integrated-gradients run over the token-embedding matrix.
struct IgRun {
    Tensor ig;                // [T,d] signed path-integral terms
    double f_input = 0.0;     // target log-prob at the real embeddings
    double f_baseline = 0.0;  // target log-prob at the baseline embeddings
    bool degenerate = false;  // every baseline row equals its input row
};
IgRun ig_path(const lm::Model& model, const std::vector<int64_t>& tokens, int64_t target,
              info::MaskScheme scheme, int64_t steps,
              const std::optional<Tensor>& emb_override = std::nullopt);

// Per-token scores under the configured method: l1 of the gradient rows, l1
// of input (.) gradient rows, l1 of the integrated-gradients rows, or the
// plain attention-rollout row. All outputs are nonnegative.
core::AttributionVector baseline_attribute(const lm::Model& model,
                                           const std::vector<int64_t>& tokens, int64_t target,
                                           const BaselineConfig& cfg);

// Completeness residual |sum(IG) - (f(x) - f(x'))| per step count; needs at
// least two counts so convergence is observable.
std::vector<double> ig_convergence_residuals(const lm::Model& model,
                                             const std::vector<int64_t>& tokens, int64_t target,
                                             info::MaskScheme scheme,
                                             const std::vector<int64_t>& steps_list);

}  // namespace heta::base
