#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "heta/graph.h"
#include "heta/rng.h"
#include "heta/tensor.h"

namespace heta::lm {

struct ModelConfig {
    int64_t layers = 4;
    int64_t heads = 4;
    int64_t d = 64;
    int64_t vocab = 512;
    int64_t maxlen = 128;
    uint64_t seed = 20240901;

    int64_t head_dim() const { return d / heads; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Whitespace tokenizer over a fixed vocabulary. Ids 0..2 are reserved.
class Vocab {
  public:
    static constexpr int64_t kUnk = 0;
    static constexpr int64_t kSentinel = 1;
    static constexpr int64_t kSep = 2;

    Vocab() = default;
    explicit Vocab(std::vector<std::string> tokens);

    int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
    const std::string& token(int64_t id) const;
    int64_t id(const std::string& tok) const;  // kUnk if unknown
    bool contains(const std::string& tok) const { return map_.count(tok) > 0; }

    std::vector<int64_t> encode(const std::string& text) const;
    std::string decode(const std::vector<int64_t>& ids) const;

    // FNV-1a over the token list; used for checkpoint/corpus compatibility.
    uint64_t hash() const;
    std::string hash_hex() const;

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

    const std::vector<std::string>& tokens() const { return tokens_; }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int64_t> map_;
};

struct LayerParams {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv;  // [d,d] and [d]
    Tensor wo, bo;                  // [d,d] (head h occupies rows h*dh..(h+1)*dh), [d]
    Tensor ln2_g, ln2_b;
    Tensor w1, b1;  // [d,4d], [4d]
    Tensor w2, b2;  // [4d,d], [d]
};

struct ForwardOptions {
    // When true, parameters enter the graph as differentiable leaves and the
    // trace records their ids (training). Otherwise they are constants.
    bool params_trainable = false;
    // Replaces the token-embedding matrix (same shape [T,d]) before positions
    // are added; used by masking and window truncation.
    std::optional<Tensor> emb_override;
    // Splices a fresh differentiable leaf into the residual stream right
    // before the given layer. Everything below the leaf is frozen: gradients
    // taken against it see only the computation from that layer upward.
    std::optional<int64_t> activation_leaf_layer;
};

// Everything one forward pass exposes. Holds the tape so gradients/HVPs of the
// target log-probability can be taken later against the embedding leaf.
struct ForwardTrace {
    std::shared_ptr<ad::Graph> graph;
    ad::Id emb = ad::kNoId;      // [T,d] token-embedding leaf (positions added after)
    ad::Id act_leaf = ad::kNoId; // [T,d] residual-stream leaf (activation_leaf_layer)
    ad::Id logp = ad::kNoId;     // [V] log-softmax at the readout position
    ad::Id logits_id = ad::kNoId;
    std::vector<ad::Id> param_ids;  // only when params_trainable

    int64_t T = 0;
    std::vector<int64_t> tokens;
    Tensor emb_values;  // the [T,d] actually fed in
    Tensor logits;      // [T,V] values
    Tensor p_orig;      // [V] next-token distribution at the readout position
    // Per (layer, head): causal attention matrix [T,T] and the per-source-token
    // l1 norms of V^{(l,h)} W_O^{(l,h)} rows, [T].
    std::vector<std::vector<Tensor>> attn;
    std::vector<std::vector<Tensor>> value_out_l1;

    // Set by target_logprob().
    ad::Id gnode = ad::kNoId;
    int64_t target = -1;
    double g = 0.0;
};

class Model {
  public:
    Model() = default;
    Model(ModelConfig cfg, uint64_t vocab_hash);

    static Model init_random(const ModelConfig& cfg, const Vocab& vocab);

    const ModelConfig& config() const { return cfg_; }
    uint64_t vocab_hash() const { return vocab_hash_; }

    // Token-embedding rows for the given ids (no positions), [T,d].
    Tensor embed(const std::vector<int64_t>& tokens) const;
    // Mean of this instance's token-embedding rows, [d].
    Tensor mean_embedding(const std::vector<int64_t>& tokens) const;
    Tensor sentinel_embedding() const;

    ForwardTrace forward(const std::vector<int64_t>& tokens,
                         const ForwardOptions& opt = {}) const;

    // g(X) = log P(target | x_<T) at the last input position. Adds the pick
    // node to the trace and caches value/ids for gradient work.
    double target_logprob(ForwardTrace& trace, int64_t target) const;

    // Fixed flat order used by checkpoints and the trainer.
    void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each_param(const std::function<void(const std::string&, const Tensor&)>& fn) const;
    int64_t param_count() const;

    void save(const std::string& path) const;
    static Model load(const std::string& path);

    Tensor wte, wpe;
    std::vector<LayerParams> layers;
    Tensor lnf_g, lnf_b;
    Tensor wu;  // [d, V]

  private:
    ModelConfig cfg_;
    uint64_t vocab_hash_ = 0;
};

struct TrainConfig {
    int64_t epochs = 30;
    int64_t batch = 16;
    double lr = 3e-3;
    double lr_min = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    double target_holdout_acc = 0.9;
    double holdout_frac = 0.1;
    uint64_t seed = 7;
    bool verbose = false;
};

struct TrainStats {
    int64_t epochs_run = 0;
    double final_loss = 0.0;
    double holdout_acc = 0.0;
};

// One (input tokens, next-token target) pair.
struct TrainExample {
    std::vector<int64_t> tokens;
    int64_t target;
};

// Adam on the answer-position cross-entropy. Throws ConvergenceError if the
// held-out accuracy gate is not reached within the epoch budget.
TrainStats train_model(Model& model, const std::vector<TrainExample>& examples,
                       const TrainConfig& tcfg);

double holdout_accuracy(const Model& model, const std::vector<TrainExample>& examples);

}  // namespace heta::lm
