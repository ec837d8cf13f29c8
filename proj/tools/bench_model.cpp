// Timing probe for the forward/gradient/HVP pipeline at desk scale. Informs
// the probe-count defaults used by the attribution configs.
#include <chrono>
#include <cstdio>

#include "heta/corpus.h"
#include "heta/lm.h"

using namespace heta;
using namespace heta::lm;
using Clock = std::chrono::steady_clock;

static double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

int main() {
    Vocab vocab = corpus::build_default_vocab(512);
    ModelConfig cfg;  // desk defaults: L=4 H=4 d=64 vocab=512
    Model m = Model::init_random(cfg, vocab);

    corpus::CorpusSpec cs;
    cs.n_records = 1;
    auto recs = corpus::generate_planted_corpus(cs, vocab, 1);
    corpus::InstanceTokens it = corpus::instance_tokens(recs[0], vocab);
    std::printf("T = %zu tokens, params = %lld\n", it.input.size(),
                static_cast<long long>(m.param_count()));

    const int warm = 3, reps = 50;
    for (int i = 0; i < warm; ++i) m.forward(it.input);
    auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) m.forward(it.input);
    double fwd_ms = ms_since(t0) / reps;

    ForwardTrace tr = m.forward(it.input);
    m.target_logprob(tr, it.target);
    std::printf("forward tape nodes: %zu\n", tr.graph->size());

    t0 = Clock::now();
    ad::HvpContext ctx(*tr.graph, tr.gnode, tr.emb);
    double grad_ms = ms_since(t0);
    std::printf("tape after first gradient: %zu nodes\n", tr.graph->size());

    Tensor v = Tensor::mat(tr.T, cfg.d);
    for (int64_t i = 0; i < v.numel(); ++i) v.data()[i] = (i % 3 == 0) ? 1.0 : -1.0;
    for (int i = 0; i < warm; ++i) ctx.hvp(v);
    t0 = Clock::now();
    for (int i = 0; i < reps; ++i) ctx.hvp(v);
    double hvp_ms = ms_since(t0) / reps;

    // Trainable forward+backward (what one training example costs).
    t0 = Clock::now();
    for (int i = 0; i < 10; ++i) {
        ForwardTrace tt = m.forward(it.input, {.params_trainable = true});
        m.target_logprob(tt, it.target);
        tt.graph->gradients(tt.gnode, tt.param_ids);
    }
    double train_ms = ms_since(t0) / 10;

    std::printf("forward:            %8.3f ms\n", fwd_ms);
    std::printf("first gradient:     %8.3f ms (one-time per trace)\n", grad_ms);
    std::printf("hvp per probe:      %8.3f ms\n", hvp_ms);
    std::printf("train fwd+bwd:      %8.3f ms\n", train_ms);
    std::printf("est. attribution cost at m=4 probes x %lld tokens: %8.1f ms\n",
                static_cast<long long>(it.input.size() - 1),
                hvp_ms * 4 * static_cast<double>(it.input.size() - 1));
    return 0;
}
