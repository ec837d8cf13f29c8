#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "heta/lm.h"

namespace heta::lm {

namespace {

int64_t argmax_row(const Tensor& logits, int64_t row) {
    int64_t best = 0;
    double bv = logits.at(row, 0);
    for (int64_t c = 1; c < logits.cols(); ++c)
        if (logits.at(row, c) > bv) {
            bv = logits.at(row, c);
            best = c;
        }
    return best;
}

}  // namespace

double holdout_accuracy(const Model& model, const std::vector<TrainExample>& examples) {
    if (examples.empty()) return 0.0;
    int64_t hits = 0;
    for (const TrainExample& ex : examples) {
        ForwardTrace tr = model.forward(ex.tokens);
        if (argmax_row(tr.logits, tr.T - 1) == ex.target) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(examples.size());
}

TrainStats train_model(Model& model, const std::vector<TrainExample>& examples,
                       const TrainConfig& tcfg) {
    if (examples.size() < 10) throw ConfigError("train: need at least 10 examples");

    Rng rng(derive_seed(tcfg.seed, seed_tag::kTrain));
    std::vector<size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.next_below(i)]);

    size_t n_hold = std::max<size_t>(1, static_cast<size_t>(
                                            std::llround(tcfg.holdout_frac *
                                                         static_cast<double>(order.size()))));
    std::vector<TrainExample> hold, train;
    for (size_t i = 0; i < order.size(); ++i)
        (i < n_hold ? hold : train).push_back(examples[order[i]]);

    // Flat Adam state across the canonical parameter order.
    std::vector<Tensor*> params;
    model.for_each_param([&](const std::string&, Tensor& t) { params.push_back(&t); });
    int64_t nparam = 0;
    for (Tensor* t : params) nparam += t->numel();
    std::vector<double> grad(static_cast<size_t>(nparam), 0.0);
    std::vector<double> m1(static_cast<size_t>(nparam), 0.0);
    std::vector<double> m2(static_cast<size_t>(nparam), 0.0);

    TrainStats stats;
    int64_t step = 0;
    const int64_t total_steps = std::max<int64_t>(
        1, tcfg.epochs * static_cast<int64_t>((train.size() + tcfg.batch - 1) / tcfg.batch));

    for (int64_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        for (size_t i = train.size(); i > 1; --i)
            std::swap(train[i - 1], train[rng.next_below(i)]);

        double epoch_loss = 0.0;
        size_t pos = 0;
        while (pos < train.size()) {
            size_t bsz = std::min<size_t>(static_cast<size_t>(tcfg.batch), train.size() - pos);
            std::fill(grad.begin(), grad.end(), 0.0);
            ForwardOptions fo;
            fo.params_trainable = true;
            for (size_t b = 0; b < bsz; ++b) {
                const TrainExample& ex = train[pos + b];
                ForwardTrace tr = model.forward(ex.tokens, fo);
                model.target_logprob(tr, ex.target);
                epoch_loss += -tr.g;
                std::vector<ad::Id> gs = tr.graph->gradients(tr.gnode, tr.param_ids);
                size_t off = 0;
                for (size_t pidx = 0; pidx < params.size(); ++pidx) {
                    const Tensor& gt = tr.graph->val(gs[pidx]);
                    // loss = -g, so accumulate the negated gradient
                    for (int64_t k = 0; k < gt.numel(); ++k) grad[off + static_cast<size_t>(k)] -= gt.data()[k];
                    off += static_cast<size_t>(gt.numel());
                }
            }
            double inv_b = 1.0 / static_cast<double>(bsz);
            double norm_sq = 0.0;
            for (double& gv : grad) {
                gv *= inv_b;
                norm_sq += gv * gv;
            }
            double clip = 1.0;
            if (tcfg.grad_clip > 0.0 && std::sqrt(norm_sq) > tcfg.grad_clip)
                clip = tcfg.grad_clip / std::sqrt(norm_sq);

            ++step;
            double frac = static_cast<double>(step) / static_cast<double>(total_steps);
            double lr = tcfg.lr_min + 0.5 * (tcfg.lr - tcfg.lr_min) *
                                          (1.0 + std::cos(3.14159265358979323846 * frac));
            double bc1 = 1.0 - std::pow(tcfg.beta1, static_cast<double>(step));
            double bc2 = 1.0 - std::pow(tcfg.beta2, static_cast<double>(step));

            size_t off = 0;
            for (Tensor* t : params) {
                double* w = t->data();
                for (int64_t k = 0; k < t->numel(); ++k) {
                    double gv = grad[off + static_cast<size_t>(k)] * clip;
                    double& mm = m1[off + static_cast<size_t>(k)];
                    double& vv = m2[off + static_cast<size_t>(k)];
                    mm = tcfg.beta1 * mm + (1.0 - tcfg.beta1) * gv;
                    vv = tcfg.beta2 * vv + (1.0 - tcfg.beta2) * gv * gv;
                    w[k] -= lr * (mm / bc1) / (std::sqrt(vv / bc2) + tcfg.adam_eps);
                }
                off += static_cast<size_t>(t->numel());
            }
            pos += bsz;
        }

        stats.epochs_run = epoch + 1;
        stats.final_loss = epoch_loss / static_cast<double>(train.size());
        stats.holdout_acc = holdout_accuracy(model, hold);
        if (tcfg.verbose)
            std::printf("epoch %3lld  loss %.4f  holdout acc %.3f\n",
                        static_cast<long long>(epoch + 1), stats.final_loss, stats.holdout_acc);
        if (stats.holdout_acc >= tcfg.target_holdout_acc) return stats;
    }
    throw ConvergenceError("train: held-out accuracy " + std::to_string(stats.holdout_acc) +
                           " below target " + std::to_string(tcfg.target_holdout_acc) +
                           " after " + std::to_string(tcfg.epochs) + " epochs");
}

}  // namespace heta::lm
