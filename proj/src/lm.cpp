#include "heta/lm.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

namespace heta::lm {

void ModelConfig::validate() const {
    if (layers < 1) throw ConfigError("model config: layers must be >= 1");
    if (heads < 1 || d % heads != 0)
        throw ConfigError("model config: d must be divisible by heads");
    if (vocab < 2) throw ConfigError("model config: vocab must be >= 2");
    if (maxlen < 2) throw ConfigError("model config: max length must be >= 2");
}

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    if (tokens_.size() < 3) throw ConfigError("vocab: needs at least the 3 reserved tokens");
    if (tokens_[0] != "<unk>" || tokens_[1] != "<sentinel>" || tokens_[2] != "<s>")
        throw ConfigError("vocab: ids 0,1,2 must be <unk>, <sentinel>, <s>");
    for (size_t i = 0; i < tokens_.size(); ++i) {
        auto [it, fresh] = map_.emplace(tokens_[i], static_cast<int64_t>(i));
        if (!fresh) throw ConfigError("vocab: duplicate token '" + tokens_[i] + "'");
    }
}

const std::string& Vocab::token(int64_t id) const {
    if (id < 0 || id >= size()) throw ConfigError("vocab: id out of range");
    return tokens_[static_cast<size_t>(id)];
}

int64_t Vocab::id(const std::string& tok) const {
    auto it = map_.find(tok);
    return it == map_.end() ? kUnk : it->second;
}

std::vector<int64_t> Vocab::encode(const std::string& text) const {
    std::vector<int64_t> out;
    std::istringstream ss(text);
    std::string tok;
    while (ss >> tok) out.push_back(id(tok));
    return out;
}

std::string Vocab::decode(const std::vector<int64_t>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += token(ids[i]);
    }
    return out;
}

uint64_t Vocab::hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    auto eat = [&h](unsigned char c) {
        h ^= c;
        h *= 0x100000001b3ull;
    };
    for (const std::string& t : tokens_) {
        for (char c : t) eat(static_cast<unsigned char>(c));
        eat('\n');
    }
    return h;
}

std::string Vocab::hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
}

// ---------------------------------------------------------------------------
// Model

Model::Model(ModelConfig cfg, uint64_t vocab_hash) : cfg_(cfg), vocab_hash_(vocab_hash) {
    cfg_.validate();
}

Model Model::init_random(const ModelConfig& cfg, const Vocab& vocab) {
    cfg.validate();
    if (vocab.size() != cfg.vocab)
        throw IncompatibleError("init: vocab size does not match model config");
    Model m(cfg, vocab.hash());
    Rng rng(derive_seed(cfg.seed, seed_tag::kInit));

    auto normal_fill = [&rng](Tensor& t, double std) {
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = std * rng.next_normal();
    };
    auto ones = [](Tensor& t) {
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = 1.0;
    };

    const int64_t d = cfg.d;
    const double w_std = 0.02;
    const double resid_std = w_std / std::sqrt(2.0 * static_cast<double>(cfg.layers));

    m.wte = Tensor::mat(cfg.vocab, d);
    normal_fill(m.wte, w_std);
    m.wpe = Tensor::mat(cfg.maxlen, d);
    normal_fill(m.wpe, w_std);

    m.layers.resize(static_cast<size_t>(cfg.layers));
    for (LayerParams& lp : m.layers) {
        lp.ln1_g = Tensor::vec(d);
        ones(lp.ln1_g);
        lp.ln1_b = Tensor::vec(d);
        lp.wq = Tensor::mat(d, d);
        normal_fill(lp.wq, w_std);
        lp.bq = Tensor::vec(d);
        lp.wk = Tensor::mat(d, d);
        normal_fill(lp.wk, w_std);
        lp.bk = Tensor::vec(d);
        lp.wv = Tensor::mat(d, d);
        normal_fill(lp.wv, w_std);
        lp.bv = Tensor::vec(d);
        lp.wo = Tensor::mat(d, d);
        normal_fill(lp.wo, resid_std);
        lp.bo = Tensor::vec(d);
        lp.ln2_g = Tensor::vec(d);
        ones(lp.ln2_g);
        lp.ln2_b = Tensor::vec(d);
        lp.w1 = Tensor::mat(d, 4 * d);
        normal_fill(lp.w1, w_std);
        lp.b1 = Tensor::vec(4 * d);
        lp.w2 = Tensor::mat(4 * d, d);
        normal_fill(lp.w2, resid_std);
        lp.b2 = Tensor::vec(d);
    }
    m.lnf_g = Tensor::vec(d);
    ones(m.lnf_g);
    m.lnf_b = Tensor::vec(d);
    m.wu = Tensor::mat(d, cfg.vocab);
    normal_fill(m.wu, w_std);
    return m;
}

void Model::for_each_param(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("wte", wte);
    fn("wpe", wpe);
    for (size_t l = 0; l < layers.size(); ++l) {
        std::string p = "L" + std::to_string(l) + ".";
        LayerParams& lp = layers[l];
        fn(p + "ln1_g", lp.ln1_g);
        fn(p + "ln1_b", lp.ln1_b);
        fn(p + "wq", lp.wq);
        fn(p + "bq", lp.bq);
        fn(p + "wk", lp.wk);
        fn(p + "bk", lp.bk);
        fn(p + "wv", lp.wv);
        fn(p + "bv", lp.bv);
        fn(p + "wo", lp.wo);
        fn(p + "bo", lp.bo);
        fn(p + "ln2_g", lp.ln2_g);
        fn(p + "ln2_b", lp.ln2_b);
        fn(p + "w1", lp.w1);
        fn(p + "b1", lp.b1);
        fn(p + "w2", lp.w2);
        fn(p + "b2", lp.b2);
    }
    fn("lnf_g", lnf_g);
    fn("lnf_b", lnf_b);
    fn("wu", wu);
}

void Model::for_each_param(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
    const_cast<Model*>(this)->for_each_param(
        [&fn](const std::string& n, Tensor& t) { fn(n, t); });
}

int64_t Model::param_count() const {
    int64_t n = 0;
    for_each_param([&n](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

Tensor Model::embed(const std::vector<int64_t>& tokens) const {
    const int64_t T = static_cast<int64_t>(tokens.size());
    Tensor out = Tensor::mat(T, cfg_.d);
    for (int64_t i = 0; i < T; ++i) {
        int64_t t = tokens[static_cast<size_t>(i)];
        if (t < 0 || t >= cfg_.vocab)
            throw ConfigError("embed: token id " + std::to_string(t) + " out of vocab");
        std::memcpy(out.data() + i * cfg_.d, wte.data() + t * cfg_.d,
                    sizeof(double) * static_cast<size_t>(cfg_.d));
    }
    return out;
}

Tensor Model::mean_embedding(const std::vector<int64_t>& tokens) const {
    Tensor emb = embed(tokens);
    Tensor out = Tensor::vec(cfg_.d);
    for (int64_t i = 0; i < emb.rows(); ++i)
        for (int64_t c = 0; c < cfg_.d; ++c) out.at(c) += emb.at(i, c);
    for (int64_t c = 0; c < cfg_.d; ++c) out.at(c) /= static_cast<double>(emb.rows());
    return out;
}

Tensor Model::sentinel_embedding() const {
    Tensor out = Tensor::vec(cfg_.d);
    std::memcpy(out.data(), wte.data() + Vocab::kSentinel * cfg_.d,
                sizeof(double) * static_cast<size_t>(cfg_.d));
    return out;
}

ForwardTrace Model::forward(const std::vector<int64_t>& tokens,
                            const ForwardOptions& opt) const {
    const int64_t T = static_cast<int64_t>(tokens.size());
    if (T < 1) throw ConfigError("forward: empty token sequence");
    if (T > cfg_.maxlen)
        throw ConfigError("forward: sequence length " + std::to_string(T) +
                          " exceeds max length " + std::to_string(cfg_.maxlen));
    for (int64_t t : tokens)
        if (t < 0 || t >= cfg_.vocab)
            throw ConfigError("forward: token id " + std::to_string(t) + " out of vocab");

    ForwardTrace tr;
    tr.graph = std::make_shared<ad::Graph>();
    ad::Graph& gr = *tr.graph;
    tr.T = T;
    tr.tokens = tokens;

    std::unordered_map<std::string, ad::Id> pid;
    for_each_param([&](const std::string& n, const Tensor& t) {
        ad::Id i = opt.params_trainable ? gr.leaf(t) : gr.constant(t);
        pid[n] = i;
        if (opt.params_trainable) tr.param_ids.push_back(i);
    });

    Tensor embv = opt.emb_override ? *opt.emb_override : embed(tokens);
    if (embv.rank() != 2 || embv.rows() != T || embv.cols() != cfg_.d)
        throw ShapeError("forward: embedding override must be [T,d]");
    tr.emb_values = embv;
    tr.emb = gr.leaf(embv);

    Tensor pos = Tensor::mat(T, cfg_.d);
    std::memcpy(pos.data(), wpe.data(), sizeof(double) * static_cast<size_t>(T * cfg_.d));
    ad::Id h = gr.add(tr.emb, gr.constant(std::move(pos)));

    const int64_t dh = cfg_.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const double ln_eps = 1e-5;

    tr.attn.resize(static_cast<size_t>(cfg_.layers));
    tr.value_out_l1.resize(static_cast<size_t>(cfg_.layers));

    if (opt.activation_leaf_layer &&
        (*opt.activation_leaf_layer < 0 || *opt.activation_leaf_layer >= cfg_.layers))
        throw ConfigError("forward: activation_leaf_layer out of range");

    for (int64_t l = 0; l < cfg_.layers; ++l) {
        if (opt.activation_leaf_layer && *opt.activation_leaf_layer == l) {
            h = gr.leaf(gr.val(h).clone());
            tr.act_leaf = h;
        }
        std::string p = "L" + std::to_string(l) + ".";
        ad::Id a = gr.layernorm(h, pid[p + "ln1_g"], pid[p + "ln1_b"], ln_eps);
        ad::Id q = gr.add_rowvec(gr.matmul(a, pid[p + "wq"]), pid[p + "bq"]);
        ad::Id k = gr.add_rowvec(gr.matmul(a, pid[p + "wk"]), pid[p + "bk"]);
        ad::Id v = gr.add_rowvec(gr.matmul(a, pid[p + "wv"]), pid[p + "bv"]);

        const Tensor& wo_vals = layers[static_cast<size_t>(l)].wo;
        ad::Id attn_sum = ad::kNoId;
        for (int64_t hh = 0; hh < cfg_.heads; ++hh) {
            ad::Id qh = gr.slice_cols(q, hh * dh, (hh + 1) * dh);
            ad::Id kh = gr.slice_cols(k, hh * dh, (hh + 1) * dh);
            ad::Id vh = gr.slice_cols(v, hh * dh, (hh + 1) * dh);
            ad::Id scores = gr.scalar_mul(gr.matmul(qh, gr.transpose(kh)), inv_sqrt_dh);
            ad::Id att = gr.softmax_causal(scores);
            tr.attn[static_cast<size_t>(l)].push_back(gr.val(att));

            auto rows = std::make_shared<std::vector<int64_t>>();
            for (int64_t r = hh * dh; r < (hh + 1) * dh; ++r) rows->push_back(r);
            ad::Id woh = gr.index_rows(pid[p + "wo"], rows);
            ad::Id outh = gr.matmul(gr.matmul(att, vh), woh);
            attn_sum = (attn_sum == ad::kNoId) ? outh : gr.add(attn_sum, outh);

            // Row l1 norms of V^{(l,h)} W_O^{(l,h)} for the semantic gate;
            // plain arithmetic on values, off the tape.
            const Tensor& vhv = gr.val(vh);
            Tensor norms = Tensor::vec(T);
            for (int64_t i = 0; i < T; ++i) {
                double s = 0.0;
                for (int64_t c = 0; c < cfg_.d; ++c) {
                    double acc = 0.0;
                    for (int64_t kk = 0; kk < dh; ++kk)
                        acc += vhv.at(i, kk) * wo_vals.at(hh * dh + kk, c);
                    s += std::fabs(acc);
                }
                norms.at(i) = s;
            }
            tr.value_out_l1[static_cast<size_t>(l)].push_back(std::move(norms));
        }
        h = gr.add(h, gr.add_rowvec(attn_sum, pid[p + "bo"]));

        ad::Id m_in = gr.layernorm(h, pid[p + "ln2_g"], pid[p + "ln2_b"], ln_eps);
        ad::Id hid = gr.gelu(gr.add_rowvec(gr.matmul(m_in, pid[p + "w1"]), pid[p + "b1"]));
        ad::Id mlp = gr.add_rowvec(gr.matmul(hid, pid[p + "w2"]), pid[p + "b2"]);
        h = gr.add(h, mlp);
    }

    ad::Id xf = gr.layernorm(h, pid["lnf_g"], pid["lnf_b"], ln_eps);
    tr.logits_id = gr.matmul(xf, pid["wu"]);
    tr.logits = gr.val(tr.logits_id);
    tr.logp = gr.log_softmax_vec(gr.row(tr.logits_id, T - 1));

    const Tensor& lp = gr.val(tr.logp);
    tr.p_orig = Tensor::vec(cfg_.vocab);
    for (int64_t i = 0; i < cfg_.vocab; ++i) tr.p_orig.at(i) = std::exp(lp.at(i));
    return tr;
}

double Model::target_logprob(ForwardTrace& trace, int64_t target) const {
    if (target < 0 || target >= cfg_.vocab)
        throw ConfigError("target_logprob: target token out of vocab");
    if (trace.gnode != ad::kNoId && trace.target == target) return trace.g;
    trace.gnode = trace.graph->pick(trace.logp, target);
    trace.target = target;
    trace.g = trace.graph->val(trace.gnode).item();
    return trace.g;
}

}  // namespace heta::lm
