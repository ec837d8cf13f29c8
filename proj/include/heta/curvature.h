#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "heta/lm.h"
#include "heta/rng.h"
#include "heta/tensor.h"

namespace heta::curv {

enum class Mode {
    ExactHvp,     // Hutchinson probes through true Hessian-vector products
    LowRank,      // randomized per-block range sketch, probes run through it
    LayerSubset,  // curvature of the top layers wrt the residual stream
    GradSquared,  // squared gradient row norms (first-order stand-in)
    GaussNewton,  // J^T F J with F the softmax covariance at the readout
};

struct CurvatureConfig {
    Mode mode = Mode::ExactHvp;
    int64_t samples = 8;  // Rademacher probes per token block
    int64_t rank = 8;     // LowRank sketch width
    // LayerSubset only: which layers stay differentiable. Must be a contiguous
    // slice ending at the top layer; everything below is frozen.
    std::vector<int64_t> layer_subset;
    uint64_t seed = 0;
    // LowRank: spend d extra HVPs per block to make the tail estimate exact.
    bool exact_tail = true;
    // Token blocks to evaluate; empty means all positions.
    std::vector<int64_t> blocks;
    // Evaluate at these embedding rows instead of the token table's ([T,d]);
    // the sensitivity metric perturbs inputs through this.
    std::optional<Tensor> emb_override;
};

struct SensitivityVector {
    Tensor s;         // [T]; zero outside the evaluated blocks
    Tensor variance;  // [T] unbiased sample variance of the per-probe estimates
    std::vector<int64_t> blocks;  // blocks actually evaluated, ascending
    int64_t hvp_count = 0;        // operator applications spent
    double tau_hat = 0.0;         // LowRank: sqrt of summed squared block tails
    Tensor tau_block;             // LowRank: per-block Frobenius tail, [T]
};

// Per-token curvature scores of g = log P(target | tokens) against the
// embedding (or, for LayerSubset, the residual stream entering the lowest
// kept layer). Probe randomness is a fixed per-token stream derived from
// cfg.seed, so results do not depend on which blocks are evaluated together.
SensitivityVector block_sensitivity(const lm::Model& model, const std::vector<int64_t>& tokens,
                                    int64_t target, const CurvatureConfig& cfg);

// r -> J^T F J r where J is the Jacobian of the readout logits wrt the
// embedding and F = diag(p) - p p^T. Built once per trace; each apply costs
// three backward passes and leaves the tape as it found it.
class GaussNewtonOperator {
  public:
    explicit GaussNewtonOperator(lm::ForwardTrace& trace);
    Tensor apply(const Tensor& r);  // [T,d] -> [T,d]
    int64_t applies() const { return applies_; }

  private:
    ad::Graph& g_;
    ad::Id emb_;
    ad::Id z_row_;
    ad::Id u_;
    ad::Id w_;  // d(z.u)/dX, kept on tape as a function of the u leaf
    Tensor p_;
    size_t mark_;
    int64_t T_ = 0, d_ = 0;
    int64_t applies_ = 0;
};

// Dense [T*d, T*d] Hessian of the target log-probability wrt the flattened
// embedding, assembled column by column from basis HVPs. Oracle-sized only:
// refuses T*d > 256.
Tensor dense_hessian(const lm::Model& model, const std::vector<int64_t>& tokens, int64_t target);

// Exact E ||B r||_1 over a Rademacher vector r by enumerating all 2^d sign
// patterns. Refuses d > 16.
double exact_expected_block_mass(const Tensor& block);

struct RangeSketch {
    Tensor q;    // [dim, rank] orthonormal columns; rank can fall below k
    Tensor qtb;  // [rank, dim], rows are (B q_j)^T
};

// Randomized range finder for a symmetric operator given as a matvec on [dim]
// vectors: Q spans B G for Gaussian G with k columns drawn from rng, and qtb
// holds Q^T B via k more matvecs. A zero response yields an empty sketch.
RangeSketch lowrank_range_approx(const std::function<Tensor(const Tensor&)>& matvec, int64_t dim,
                                 int64_t k, Rng& rng);

}  // namespace heta::curv
