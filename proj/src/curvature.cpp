#include "heta/curvature.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "heta/error.h"
#include "heta/kahan.h"

namespace heta::curv {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EVec = Eigen::VectorXd;

std::vector<int64_t> checked_blocks(const std::vector<int64_t>& want, int64_t T) {
    std::vector<int64_t> b = want;
    if (b.empty()) {
        b.resize(static_cast<size_t>(T));
        std::iota(b.begin(), b.end(), 0);
        return b;
    }
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    for (int64_t i : b)
        if (i < 0 || i >= T)
            throw ConfigError("block_sensitivity: block " + std::to_string(i) +
                              " out of range for T=" + std::to_string(T));
    return b;
}

double row_l1(const Tensor& m, int64_t r) {
    KahanSum s;
    for (int64_t c = 0; c < m.cols(); ++c) s.add(std::fabs(m.at(r, c)));
    return s.value();
}

void fill_signs(Rng& rng, std::vector<double>& signs) {
    for (double& v : signs) v = rng.next_rademacher();
}

struct ProbeStats {
    double mean = 0.0;
    double variance = 0.0;
};

// Runs the fixed per-token Rademacher stream: probe k maps the k-th batch of
// d signs through `est`. Every mode that consumes this stream must draw
// exactly d values per probe so streams line up across modes.
ProbeStats probe_loop(int64_t token, int64_t m, uint64_t seed, int64_t d,
                      const std::function<double(const std::vector<double>&)>& est) {
    Rng rng(derive_seed(seed, seed_tag::kHutchinson, static_cast<uint64_t>(token)));
    std::vector<double> signs(static_cast<size_t>(d));
    std::vector<double> vals(static_cast<size_t>(m));
    KahanSum mean_sum;
    for (int64_t k = 0; k < m; ++k) {
        fill_signs(rng, signs);
        vals[static_cast<size_t>(k)] = est(signs);
        mean_sum.add(vals[static_cast<size_t>(k)]);
    }
    ProbeStats st;
    st.mean = mean_sum.value() / static_cast<double>(m);
    if (m >= 2) {
        KahanSum dev;
        for (double v : vals) dev.add((v - st.mean) * (v - st.mean));
        st.variance = dev.value() / static_cast<double>(m - 1);
    }
    return st;
}

Tensor block_probe(int64_t T, int64_t d, int64_t i, const double* v) {
    Tensor p = Tensor::mat(T, d);
    std::memcpy(p.data() + i * d, v, sizeof(double) * static_cast<size_t>(d));
    return p;
}

void check_layer_subset(const std::vector<int64_t>& subset, int64_t layers) {
    if (subset.empty()) throw ConfigError("curvature: LayerSubset mode needs a layer subset");
    std::vector<int64_t> s = subset;
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    if (s.front() < 0 || s.back() >= layers)
        throw ConfigError("curvature: layer subset index out of range");
    if (s.back() != layers - 1 || s.back() - s.front() + 1 != static_cast<int64_t>(s.size()))
        throw ConfigError(
            "curvature: layer subset must be a contiguous slice ending at the top layer");
}

}  // namespace

GaussNewtonOperator::GaussNewtonOperator(lm::ForwardTrace& trace)
    : g_(*trace.graph), emb_(trace.emb) {
    if (trace.logits_id == ad::kNoId) throw ConfigError("gauss-newton: trace has no logits");
    T_ = trace.T;
    d_ = trace.emb_values.cols();
    p_ = trace.p_orig;
    const int64_t V = p_.cols();
    z_row_ = g_.row(trace.logits_id, T_ - 1);
    u_ = g_.leaf(Tensor::vec(V));
    ad::Id phi = g_.dot(z_row_, u_);
    w_ = g_.gradients(phi, {emb_})[0];
    mark_ = g_.mark();
}

Tensor GaussNewtonOperator::apply(const Tensor& r) {
    if (r.rank() != 2 || r.rows() != T_ || r.cols() != d_)
        throw ShapeError("gauss-newton apply: probe must be [T,d]");
    ad::Id psi = g_.sum(g_.mul(w_, g_.constant(r)));
    ad::Id jy = g_.gradients(psi, {u_})[0];
    const Tensor& y = g_.val(jy);
    const int64_t V = p_.cols();
    KahanSum pty;
    for (int64_t j = 0; j < V; ++j) pty.add(p_.at(j) * y.at(j));
    Tensor fy = Tensor::vec(V);
    for (int64_t j = 0; j < V; ++j) fy.at(j) = p_.at(j) * y.at(j) - p_.at(j) * pty.value();
    ad::Id res = g_.gradients(g_.dot(z_row_, g_.constant(std::move(fy))), {emb_})[0];
    Tensor out = g_.val(res).clone();
    g_.truncate(mark_);
    ++applies_;
    return out;
}

RangeSketch lowrank_range_approx(const std::function<Tensor(const Tensor&)>& matvec, int64_t dim,
                                 int64_t k, Rng& rng) {
    if (k < 1) throw ConfigError("range finder: rank must be positive");
    EMat y(dim, k);
    Tensor g = Tensor::vec(dim);
    for (int64_t j = 0; j < k; ++j) {
        for (int64_t i = 0; i < dim; ++i) g.at(i) = rng.next_normal();
        Tensor by = matvec(g);
        for (int64_t i = 0; i < dim; ++i) y(i, j) = by.at(i);
    }

    RangeSketch sk;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(y);
    const int64_t q = qr.rank();
    sk.q = Tensor::mat(dim, q);
    sk.qtb = Tensor::mat(q, dim);
    if (q == 0) return sk;

    Eigen::MatrixXd qmat = qr.householderQ() * Eigen::MatrixXd::Identity(dim, q);
    Tensor col = Tensor::vec(dim);
    for (int64_t j = 0; j < q; ++j) {
        for (int64_t i = 0; i < dim; ++i) {
            sk.q.at(i, j) = qmat(i, j);
            col.at(i) = qmat(i, j);
        }
        Tensor bq = matvec(col);
        for (int64_t i = 0; i < dim; ++i) sk.qtb.at(j, i) = bq.at(i);
    }
    return sk;
}

Tensor dense_hessian(const lm::Model& model, const std::vector<int64_t>& tokens, int64_t target) {
    const int64_t T = static_cast<int64_t>(tokens.size());
    const int64_t d = model.config().d;
    const int64_t n = T * d;
    if (n > 256)
        throw ConfigError("dense_hessian: T*d=" + std::to_string(n) + " exceeds the oracle cap");

    lm::ForwardTrace tr = model.forward(tokens);
    model.target_logprob(tr, target);
    ad::HvpContext ctx(*tr.graph, tr.gnode, tr.emb);

    Tensor h = Tensor::mat(n, n);
    Tensor probe = Tensor::mat(T, d);
    for (int64_t j = 0; j < n; ++j) {
        probe.data()[j] = 1.0;
        Tensor col = ctx.hvp(probe);
        for (int64_t i = 0; i < n; ++i) h.at(i, j) = col.data()[i];
        probe.data()[j] = 0.0;
    }
    return h;
}

double exact_expected_block_mass(const Tensor& block) {
    if (block.rank() != 2 || block.rows() != block.cols())
        throw ShapeError("exact_expected_block_mass: block must be square");
    const int64_t d = block.rows();
    if (d > 16) throw ConfigError("exact_expected_block_mass: d > 16 enumeration refused");

    const uint64_t patterns = 1ull << d;
    std::vector<double> r(static_cast<size_t>(d));
    KahanSum total;
    for (uint64_t bits = 0; bits < patterns; ++bits) {
        for (int64_t j = 0; j < d; ++j)
            r[static_cast<size_t>(j)] = (bits >> j) & 1ull ? 1.0 : -1.0;
        KahanSum mass;
        for (int64_t i = 0; i < d; ++i) {
            KahanSum row;
            for (int64_t j = 0; j < d; ++j)
                row.add(block.at(i, j) * r[static_cast<size_t>(j)]);
            mass.add(std::fabs(row.value()));
        }
        total.add(mass.value());
    }
    return total.value() / static_cast<double>(patterns);
}

SensitivityVector block_sensitivity(const lm::Model& model, const std::vector<int64_t>& tokens,
                                    int64_t target, const CurvatureConfig& cfg) {
    const int64_t T = static_cast<int64_t>(tokens.size());
    const int64_t d = model.config().d;
    if (cfg.mode != Mode::GradSquared && cfg.samples < 1)
        throw ConfigError("curvature: samples must be positive");
    if (cfg.mode == Mode::LowRank && cfg.rank < 1)
        throw ConfigError("curvature: rank must be positive");
    if (cfg.mode != Mode::LayerSubset && !cfg.layer_subset.empty())
        throw ConfigError("curvature: layer_subset is only valid in LayerSubset mode");

    SensitivityVector out;
    out.s = Tensor::vec(T);
    out.variance = Tensor::vec(T);
    out.tau_block = Tensor::vec(T);
    out.blocks = checked_blocks(cfg.blocks, T);

    if (cfg.mode == Mode::GradSquared) {
        lm::ForwardOptions fog;
        fog.emb_override = cfg.emb_override;
        lm::ForwardTrace tr = model.forward(tokens, fog);
        model.target_logprob(tr, target);
        ad::Id gid = tr.graph->gradients(tr.gnode, {tr.emb})[0];
        const Tensor& grad = tr.graph->val(gid);
        for (int64_t i : out.blocks) {
            KahanSum s;
            for (int64_t c = 0; c < d; ++c) s.add(grad.at(i, c) * grad.at(i, c));
            out.s.at(i) = s.value();
        }
        return out;
    }

    lm::ForwardOptions fo;
    fo.emb_override = cfg.emb_override;
    if (cfg.mode == Mode::LayerSubset) {
        check_layer_subset(cfg.layer_subset, model.config().layers);
        fo.activation_leaf_layer = *std::min_element(cfg.layer_subset.begin(),
                                                     cfg.layer_subset.end());
    }
    lm::ForwardTrace tr = model.forward(tokens, fo);
    model.target_logprob(tr, target);

    if (cfg.mode == Mode::GaussNewton) {
        GaussNewtonOperator gn(tr);
        for (int64_t i : out.blocks) {
            ProbeStats st = probe_loop(i, cfg.samples, cfg.seed, d,
                                       [&](const std::vector<double>& signs) {
                                           Tensor hv = gn.apply(block_probe(T, d, i, signs.data()));
                                           return row_l1(hv, i);
                                       });
            out.s.at(i) = st.mean;
            out.variance.at(i) = st.variance;
        }
        out.hvp_count = gn.applies();
        return out;
    }

    const ad::Id leaf = cfg.mode == Mode::LayerSubset ? tr.act_leaf : tr.emb;
    ad::HvpContext ctx(*tr.graph, tr.gnode, leaf);

    if (cfg.mode == Mode::LowRank) {
        KahanSum tail_sq;
        for (int64_t i : out.blocks) {
            int64_t calls = 0;
            auto matvec = [&](const Tensor& v) {
                ++calls;
                Tensor hv = ctx.hvp(block_probe(T, d, i, v.data()));
                Tensor row_i = Tensor::vec(d);
                std::memcpy(row_i.data(), hv.data() + i * d,
                            sizeof(double) * static_cast<size_t>(d));
                return row_i;
            };
            Rng range_rng(derive_seed(cfg.seed, seed_tag::kRange, static_cast<uint64_t>(i)));
            RangeSketch sk = lowrank_range_approx(matvec, d, cfg.rank, range_rng);
            const int64_t q = sk.q.cols();

            Eigen::Map<const EMat> qm(sk.q.data(), d, q);
            Eigen::Map<const EMat> qtb(sk.qtb.data(), q, d);
            EMat approx = qm * qtb;  // d x d, rank q

            ProbeStats st = probe_loop(i, cfg.samples, cfg.seed, d,
                                       [&](const std::vector<double>& signs) {
                                           Eigen::Map<const EVec> r(signs.data(), d);
                                           EVec br = approx * r;
                                           KahanSum l1;
                                           for (int64_t c = 0; c < d; ++c)
                                               l1.add(std::fabs(br(c)));
                                           return l1.value();
                                       });
            out.s.at(i) = st.mean;
            out.variance.at(i) = st.variance;

            double sketch_sq = qtb.squaredNorm();
            double tau_sq;
            if (cfg.exact_tail) {
                KahanSum frob_sq;
                Tensor basis = Tensor::vec(d);
                for (int64_t j = 0; j < d; ++j) {
                    basis.at(j) = 1.0;
                    Tensor bj = matvec(basis);
                    frob_sq.add(l2_norm_sq(bj));
                    basis.at(j) = 0.0;
                }
                tau_sq = frob_sq.value() - sketch_sq;
            } else {
                // Unbiased Gaussian estimate of the residual Frobenius mass:
                // E ||(B - QQ^T B) g||^2 = ||B - QQ^T B||_F^2.
                KahanSum est;
                const int64_t extra = 2;
                Tensor g = Tensor::vec(d);
                for (int64_t t = 0; t < extra; ++t) {
                    for (int64_t j = 0; j < d; ++j) g.at(j) = range_rng.next_normal();
                    Tensor bg = matvec(g);
                    Eigen::Map<const EVec> bgm(bg.data(), d);
                    Eigen::Map<const EVec> gm(g.data(), d);
                    EVec resid = bgm - qm * (qtb * gm);
                    est.add(resid.squaredNorm());
                }
                tau_sq = est.value() / static_cast<double>(extra);
            }
            out.tau_block.at(i) = std::sqrt(std::max(0.0, tau_sq));
            tail_sq.add(out.tau_block.at(i) * out.tau_block.at(i));
            out.hvp_count += calls;
        }
        out.tau_hat = std::sqrt(std::max(0.0, tail_sq.value()));
        return out;
    }

    // ExactHvp and LayerSubset share the plain Hutchinson loop.
    for (int64_t i : out.blocks) {
        ProbeStats st = probe_loop(i, cfg.samples, cfg.seed, d,
                                   [&](const std::vector<double>& signs) {
                                       Tensor hv = ctx.hvp(block_probe(T, d, i, signs.data()));
                                       return row_l1(hv, i);
                                   });
        out.s.at(i) = st.mean;
        out.variance.at(i) = st.variance;
        out.hvp_count += cfg.samples;
    }
    return out;
}

}  // namespace heta::curv
