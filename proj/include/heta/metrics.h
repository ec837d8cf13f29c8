#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "heta/corpus.h"
#include "heta/lm.h"
#include "heta/tensor.h"

namespace heta::metrics {

// One curated instance: which input positions form the distractor segment,
// which form the evidence segment, where the annotated support sits, and the
// answer token the attribution is asked to explain.
struct CuratedInstance {
    std::vector<int64_t> segment1;  // distractor input positions
    std::vector<int64_t> segment2;  // evidence input positions
    std::vector<int64_t> support;   // annotated subset of segment2
    std::vector<int64_t> question;  // question input positions
    int64_t target = -1;

    void validate() const;
};

CuratedInstance curated_from_tokens(const corpus::InstanceTokens& inst);

// Support mass minus distractor mass after normalizing the attribution to a
// simplex over segment-1 + segment-2; always in [-1, 1]. Zero mass over the
// two segments is an error (degenerate attribution).
double dsa(const Tensor& attr, const CuratedInstance& inst);

// Scales scores into [0, 1] by the max entry; an all-zero vector stays zero.
Tensor normalize_unit(const Tensor& attr);

// Log-prob drops when context embeddings are scaled down by the attribution:
// soft_nc scales row i by (1 - attr[i]) (suppress what the method deems
// important), soft_ns by attr[i] (keep only what it deems important). The
// readout row is never scaled. Entries must lie in [0, 1].
struct SoftScores {
    double soft_nc = 0.0;
    double soft_ns = 0.0;
};
SoftScores soft_nc_ns(const lm::Model& model, const std::vector<int64_t>& tokens, int64_t target,
                      const Tensor& attr);

// Deletion / insertion curves over the context positions, sentinel masking,
// rank order by score with ties broken toward the lowest index. Curves hold
// the target probability after each of the T-1 steps.
//   morf: delete highest-scored first      lerf: delete lowest-scored first
//   ins:  restore highest-scored first into a fully masked context
//   abpc     = mean(lerf - morf)           (positive when ranking is faithful)
//   aopc_del = mean(p_orig - morf)         aopc_ins = mean(ins - p_all_masked)
struct PerturbationCurves {
    std::vector<double> morf, lerf, ins;
    double p_orig = 0.0;
    double p_all_masked = 0.0;
    double morf_area = 0.0;
    double lerf_area = 0.0;
    double abpc = 0.0;
    double aopc_del = 0.0;
    double aopc_ins = 0.0;
};
PerturbationCurves perturbation_curves(const lm::Model& model,
                                       const std::vector<int64_t>& tokens, int64_t target,
                                       const Tensor& attr);

// Mean per-token standard deviation of the attribution when Gaussian noise of
// scale delta is added to the token embeddings n_samples times. attr_fn must
// score the given embedding rows (see emb_override on the attribution
// configs).
using AttrFn = std::function<Tensor(const Tensor& emb)>;
double sensitivity(const lm::Model& model, const std::vector<int64_t>& tokens,
                   const AttrFn& attr_fn, double delta, int64_t n_samples, uint64_t seed);

// Spearman rank correlation between two attributions over aligned positions
// (pairs of indices into a and b; must be a bijection, at least 3 pairs).
// Average ranks under ties; two constant rankings count as perfectly aligned.
double spearman_rho(const Tensor& attr_a, const Tensor& attr_b,
                    const std::vector<std::pair<int64_t, int64_t>>& alignment);

// Top-k context positions by score (ties toward the lowest index). The last
// position is the readout and is never a candidate.
std::vector<int64_t> top_k_positions(const Tensor& attr, int64_t k);

// F1 of top-k context positions against the annotated set.
double alignment_f1(const Tensor& attr, const std::vector<int64_t>& gold, int64_t k);

// One next-token draw. temperature 0 is greedy (argmax, lowest id on ties);
// top_k 0 disables the top-k filter; top_p 1 keeps the full tail.
struct DecodeConfig {
    double temperature = 1.0;
    double top_p = 1.0;
    int64_t top_k = 0;
    uint64_t seed = 0;
};
int64_t sample_next(const lm::Model& model, const std::vector<int64_t>& prompt,
                    const DecodeConfig& cfg);

// Decoding-stability sweep: for every grid cell and seed, decode one
// continuation per prompt, score it with metric_fn, and average over prompts.
// delta_percent is the max-minus-min spread of those cell values relative to
// their mean magnitude, in percent; identical cells give exactly zero.
struct SweepCell {
    double temperature = 1.0;
    double top_p = 1.0;
    int64_t top_k = 0;
};
struct SweepResult {
    std::vector<std::vector<double>> per_cell;  // [cell][seed]
    double delta_percent = 0.0;
};
using InstanceMetricFn = std::function<double(const std::vector<int64_t>& prompt, int64_t target)>;
SweepResult decoding_stability_sweep(const lm::Model& model,
                                     const std::vector<std::vector<int64_t>>& prompts,
                                     const std::vector<SweepCell>& cells,
                                     const std::vector<uint64_t>& seeds,
                                     const InstanceMetricFn& metric_fn);

// Corpus aggregation: mean, unbiased std (zero when n < 2), standard error.
struct Aggregate {
    double mean = 0.0;
    double std = 0.0;
    double se = 0.0;
    int64_t n = 0;
};
Aggregate aggregate(const std::vector<double>& values);

// One-sided paired test that mean(a - b) > 0; exact Student-t tail.
double paired_t_pvalue_one_sided(const std::vector<double>& a, const std::vector<double>& b);

// Percentile bootstrap interval for the mean.
std::pair<double, double> bootstrap_mean_ci(const std::vector<double>& values, int64_t n_boot,
                                            uint64_t seed, double level = 0.95);

}  // namespace heta::metrics
