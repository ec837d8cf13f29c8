#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "heta/corpus.h"
#include "heta/heta.h"
#include "heta/lm.h"
#include "heta/tensor.h"

namespace heta::theory {

// Every provable statement is evaluated as lhs <= rhs (+ tolerance) and
// reported with its margin, so violations carry the numbers that broke them.
inline constexpr double kBoundTol = 1e-9;

struct BoundReport {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    bool satisfied = false;  // lhs <= rhs + kBoundTol
    double slack = 0.0;      // rhs - lhs
    std::string instance;
};

BoundReport make_bound(const std::string& name, double lhs, double rhs,
                       const std::string& instance);

struct BoundSummary {
    int64_t checked = 0;
    int64_t violated = 0;
    double min_slack = 0.0;       // tightest margin seen (can be negative)
    std::string tightest_name;    // which bound had it
    std::vector<BoundReport> violations;
};
BoundSummary summarize(const std::vector<BoundReport>& reports);

// Closed-form demonstrations on f(x) = relu(x1 + x2 - 2): flat-region
// gradient and flat-path integrated gradients vanish while the function
// responds nearby, a crossing path restores positive attribution, and the
// softplus variant keeps a sub-1e-4 gradient deep in its tail. Deviations
// land in lhs with rhs 0, so exactness is visible in the report itself.
std::vector<BoundReport> a1_demos();

// Per-instance theorem checks on one attribution run (gamma must be > 0):
//   pinsker-floor     attr[i] >= m[i] * gamma * l1_shift[i]^2 / 2
//   gate-causality    m[i] == 0 implies attr[i] == 0
//   gate-simplex      |sum m - 1| <= 1e-9 (skipped when the gate degenerates)
std::vector<BoundReport> instance_theorem_reports(const lm::Model& model,
                                                  const std::vector<int64_t>& tokens,
                                                  int64_t target, const core::HetaConfig& cfg,
                                                  const std::string& instance_id);

// Dense-oracle norm chain on a tiny instance (T*d <= 256): every token's
// Hutchinson mass stays below the entrywise l1 norm of the full Hessian,
// which in turn stays below T*d times its Frobenius norm.
std::vector<BoundReport> norm_bound_reports(const lm::Model& model,
                                            const std::vector<int64_t>& tokens, int64_t target,
                                            int64_t samples, uint64_t seed,
                                            const std::string& instance_id);

// Second-order remainder of the target log-probability along a fixed random
// unit direction in one token's embedding block. lambda_hat is the block's
// spectral radius from up to 50 power-iteration steps (tolerance 1e-8; a
// zero or non-finite operator response is an error). The slope report is the
// acceptance check; the per-epsilon envelopes against lambda_hat/2 * eps^2
// are diagnostics (the mean-value point is not observable).
struct TaylorReport {
    double lambda_hat = 0.0;
    bool power_converged = false;
    std::vector<double> eps;
    std::vector<double> remainder;
    double slope = 0.0;  // log-log fit of remainder against eps
    std::vector<BoundReport> reports;
};
TaylorReport taylor_remainder_check(const lm::Model& model, const std::vector<int64_t>& tokens,
                                    int64_t target, int64_t token,
                                    const std::vector<double>& eps_grid, uint64_t seed);

// Least-squares slope of log(y) against log(x); pairs with nonpositive
// entries are dropped, fewer than two surviving points is an error.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// How far the context attributions are from summing to the full-mask drop,
// with the off-diagonal curvature term assembled densely when requested
// (tiny instances only).
struct AdditivityReport {
    double attr_sum = 0.0;
    double delta_g = 0.0;  // g(X) - g(all context masked)
    double residual = 0.0;
    double ratio = 0.0;  // residual relative to |delta_g|
    double oracle_offdiag = 0.0;
    bool oracle_enabled = false;
};
AdditivityReport additivity_residual(const lm::Model& model, const std::vector<int64_t>& tokens,
                                     int64_t target, const core::AttributionVector& av,
                                     bool dense_oracle);

// Masked-subset observations for weight fitting and additivity studies:
// every context singleton plus n_spans random contiguous context spans, each
// measured with one joint-masked forward under the attribution's scheme.
std::vector<core::SubsetObservation> subset_observations(const lm::Model& model,
                                                         const std::vector<int64_t>& tokens,
                                                         int64_t target,
                                                         const core::AttributionVector& av,
                                                         int64_t n_spans, uint64_t seed);

// Approximation-error decomposition for the sketched + windowed variant
// against the exact run: per context token,
//   |attr - attr~| <= eps_m * (beta s + gamma i)
//                     + beta sqrt(d) tau_hat
//                     + (gamma / mu_hat) (eps_orig + eps_mask[i])
// where eps_m is the measured max gate discrepancy, eps_orig / eps_mask are
// the largest per-window l1 readout shifts, and mu_hat is the smallest
// probability seen across every distribution entering the comparison
// (softmax keeps it positive; zero is an internal error).
struct LrwinCell {
    int64_t rank = 0;
    int64_t window = 0;
    double eps_m = 0.0;
    double eps_orig = 0.0;
    double mu_hat = 1.0;
    double tau_hat = 0.0;
    std::vector<BoundReport> per_token;
};
std::vector<LrwinCell> lrwin_error_decomposition(const lm::Model& model,
                                                 const std::vector<int64_t>& tokens,
                                                 int64_t target, const core::HetaConfig& base,
                                                 const std::vector<int64_t>& ranks,
                                                 const std::vector<int64_t>& windows);

// Rank-vs-intervention agreement: correlation between each method's scores
// and the per-token sentinel deletion drops, plus the drop from jointly
// deleting the method's top k against a shared random-k control.
using AttrMethod = std::function<Tensor(const std::vector<int64_t>& tokens, int64_t target)>;

struct MethodIntervention {
    std::string method;
    std::vector<double> rho;         // per instance
    std::vector<double> top_drop;    // per instance, joint top-k deletion
    std::vector<double> random_drop; // per instance, joint random-k deletion
    double mean_rho = 0.0;
    double p_value = 1.0;  // one-sided: top-k drop exceeds random-k drop
};
std::vector<MethodIntervention> deletion_intervention_check(
    const lm::Model& model, const std::vector<corpus::InstanceTokens>& instances,
    const std::vector<std::pair<std::string, AttrMethod>>& methods, int64_t k, uint64_t seed);

}  // namespace heta::theory
