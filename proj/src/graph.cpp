#include "heta/graph.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace heta::ad {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

constexpr double kTwoOverSqrtPi = 1.1283791670955125738961589031215;

}  // namespace

Tensor Graph::alloc(int64_t r, int64_t c, int rank) {
    if (rank == 0) return Tensor::scalar(0.0);
    if (rank == 1) return Tensor::vec(c);
    return Tensor::mat(r, c);
}

void Graph::finite_check(const Tensor& t, const char* opname) {
    if (!t.all_finite())
        throw NumericsError(std::string("non-finite result in op ") + opname);
}

Id Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

void Graph::truncate(size_t mark) {
    if (mark < nodes_.size()) nodes_.resize(mark);
}

Id Graph::leaf(Tensor t) {
    finite_check(t, "leaf");
    Node n;
    n.op = Op::Leaf;
    n.val = std::move(t);
    return push(std::move(n));
}

Id Graph::constant(Tensor t) {
    finite_check(t, "constant");
    Node n;
    n.op = Op::Constant;
    n.val = std::move(t);
    return push(std::move(n));
}

Id Graph::matmul(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows())
        throw ShapeError("matmul: incompatible shapes " + ta.shape_str() + " x " + tb.shape_str());
    Node n;
    n.op = Op::Matmul;
    n.a = a;
    n.b = b;
    n.val = alloc(ta.rows(), tb.cols(), 2);
    {
        CMap ma(ta.data(), ta.rows(), ta.cols());
        CMap mb(tb.data(), tb.rows(), tb.cols());
        MMap mo(n.val.data(), ta.rows(), tb.cols());
        mo.noalias() = ma * mb;
    }
    finite_check(n.val, "matmul");
    return push(std::move(n));
}

Id Graph::transpose(Id a) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw ShapeError("transpose: rank-2 required");
    Node n;
    n.op = Op::Transpose;
    n.a = a;
    n.val = alloc(ta.cols(), ta.rows(), 2);
    CMap ma(ta.data(), ta.rows(), ta.cols());
    MMap mo(n.val.data(), ta.cols(), ta.rows());
    mo = ma.transpose();
    return push(std::move(n));
}

Id Graph::add(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb))
        throw ShapeError("add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.val = alloc(ta.rows(), ta.cols(), ta.rank());
    const double* pa = ta.data();
    const double* pb = tb.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = pa[i] + pb[i];
    finite_check(n.val, "add");
    return push(std::move(n));
}

Id Graph::sub(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb))
        throw ShapeError("sub: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Node n;
    n.op = Op::Sub;
    n.a = a;
    n.b = b;
    n.val = alloc(ta.rows(), ta.cols(), ta.rank());
    const double* pa = ta.data();
    const double* pb = tb.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = pa[i] - pb[i];
    finite_check(n.val, "sub");
    return push(std::move(n));
}

Id Graph::mul(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb))
        throw ShapeError("mul: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    n.val = alloc(ta.rows(), ta.cols(), ta.rank());
    const double* pa = ta.data();
    const double* pb = tb.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = pa[i] * pb[i];
    finite_check(n.val, "mul");
    return push(std::move(n));
}

Id Graph::neg(Id a) {
    const Tensor& ta = val(a);
    Node n;
    n.op = Op::Neg;
    n.a = a;
    n.val = alloc(ta.rows(), ta.cols(), ta.rank());
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = -pa[i];
    return push(std::move(n));
}

Id Graph::scalar_mul(Id a, double c) {
    const Tensor& ta = val(a);
    Node n;
    n.op = Op::ScalarMul;
    n.a = a;
    n.aux_f = c;
    n.val = alloc(ta.rows(), ta.cols(), ta.rank());
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = pa[i] * c;
    finite_check(n.val, "scalar_mul");
    return push(std::move(n));
}

Id Graph::add_scalar(Id a, double c) {
    const Tensor& ta = val(a);
    Node n;
    n.op = Op::AddScalar;
    n.a = a;
    n.aux_f = c;
    n.val = alloc(ta.rows(), ta.cols(), ta.rank());
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = pa[i] + c;
    finite_check(n.val, "add_scalar");
    return push(std::move(n));
}

Id Graph::exp(Id a) {
    const Tensor& ta = val(a);
    Node n;
    n.op = Op::Exp;
    n.a = a;
    n.val = alloc(ta.rows(), ta.cols(), ta.rank());
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = std::exp(pa[i]);
    finite_check(n.val, "exp");
    return push(std::move(n));
}

Id Graph::log(Id a) {
    const Tensor& ta = val(a);
    Node n;
    n.op = Op::Log;
    n.a = a;
    n.val = alloc(ta.rows(), ta.cols(), ta.rank());
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = std::log(pa[i]);
    finite_check(n.val, "log");
    return push(std::move(n));
}

Id Graph::sqrt(Id a) {
    const Tensor& ta = val(a);
    Node n;
    n.op = Op::Sqrt;
    n.a = a;
    n.val = alloc(ta.rows(), ta.cols(), ta.rank());
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = std::sqrt(pa[i]);
    finite_check(n.val, "sqrt");
    return push(std::move(n));
}

Id Graph::erf(Id a) {
    const Tensor& ta = val(a);
    Node n;
    n.op = Op::Erf;
    n.a = a;
    n.val = alloc(ta.rows(), ta.cols(), ta.rank());
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = std::erf(pa[i]);
    return push(std::move(n));
}

Id Graph::relu(Id a) {
    const Tensor& ta = val(a);
    Node n;
    n.op = Op::Relu;
    n.a = a;
    n.val = alloc(ta.rows(), ta.cols(), ta.rank());
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = pa[i] > 0.0 ? pa[i] : 0.0;
    return push(std::move(n));
}

Id Graph::reciprocal(Id a) {
    const Tensor& ta = val(a);
    Node n;
    n.op = Op::Reciprocal;
    n.a = a;
    n.val = alloc(ta.rows(), ta.cols(), ta.rank());
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = 1.0 / pa[i];
    finite_check(n.val, "reciprocal");
    return push(std::move(n));
}

Id Graph::sum(Id a) {
    const Tensor& ta = val(a);
    Node n;
    n.op = Op::Sum;
    n.a = a;
    double s = 0.0;
    const double* pa = ta.data();
    for (int64_t i = 0; i < ta.numel(); ++i) s += pa[i];
    n.val = Tensor::scalar(s);
    finite_check(n.val, "sum");
    return push(std::move(n));
}

Id Graph::row_sum(Id a) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw ShapeError("row_sum: rank-2 required");
    Node n;
    n.op = Op::RowSum;
    n.a = a;
    n.val = alloc(1, ta.rows(), 1);
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t r = 0; r < ta.rows(); ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < ta.cols(); ++c) s += pa[r * ta.cols() + c];
        po[r] = s;
    }
    finite_check(n.val, "row_sum");
    return push(std::move(n));
}

Id Graph::col_sum(Id a) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw ShapeError("col_sum: rank-2 required");
    Node n;
    n.op = Op::ColSum;
    n.a = a;
    n.val = alloc(1, ta.cols(), 1);
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t c = 0; c < ta.cols(); ++c) po[c] = 0.0;
    for (int64_t r = 0; r < ta.rows(); ++r)
        for (int64_t c = 0; c < ta.cols(); ++c) po[c] += pa[r * ta.cols() + c];
    finite_check(n.val, "col_sum");
    return push(std::move(n));
}

Id Graph::tile_rows(Id v, int64_t m) {
    const Tensor& tv = val(v);
    if (tv.rank() != 1) throw ShapeError("tile_rows: rank-1 required");
    Node n;
    n.op = Op::TileRows;
    n.a = v;
    n.aux_i = m;
    n.val = alloc(m, tv.cols(), 2);
    const double* pv = tv.data();
    double* po = n.val.data();
    for (int64_t r = 0; r < m; ++r) std::memcpy(po + r * tv.cols(), pv, sizeof(double) * tv.cols());
    return push(std::move(n));
}

Id Graph::tile_cols(Id v, int64_t ncols) {
    const Tensor& tv = val(v);
    if (tv.rank() != 1) throw ShapeError("tile_cols: rank-1 required");
    Node n;
    n.op = Op::TileCols;
    n.a = v;
    n.aux_i = ncols;
    n.val = alloc(tv.cols(), ncols, 2);
    const double* pv = tv.data();
    double* po = n.val.data();
    for (int64_t r = 0; r < tv.cols(); ++r)
        for (int64_t c = 0; c < ncols; ++c) po[r * ncols + c] = pv[r];
    return push(std::move(n));
}

Id Graph::broadcast_scalar(Id s, int64_t r, int64_t c, int rank) {
    const Tensor& ts = val(s);
    if (ts.numel() != 1) throw ShapeError("broadcast_scalar: scalar required");
    Node n;
    n.op = Op::BroadcastScalar;
    n.a = s;
    n.aux_i = r;
    n.aux_j = c;
    n.aux_k = rank;
    n.val = alloc(r, c, rank);
    double v = ts.item();
    double* po = n.val.data();
    for (int64_t i = 0; i < n.val.numel(); ++i) po[i] = v;
    return push(std::move(n));
}

Id Graph::index_rows(Id a, std::shared_ptr<const std::vector<int64_t>> idx) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw ShapeError("index_rows: rank-2 required");
    for (int64_t r : *idx)
        if (r < 0 || r >= ta.rows()) throw ShapeError("index_rows: row index out of range");
    Node n;
    n.op = Op::IndexRows;
    n.a = a;
    n.idx = idx;
    int64_t k = static_cast<int64_t>(idx->size());
    n.val = alloc(k, ta.cols(), 2);
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < k; ++i)
        std::memcpy(po + i * ta.cols(), pa + (*idx)[static_cast<size_t>(i)] * ta.cols(),
                    sizeof(double) * ta.cols());
    return push(std::move(n));
}

Id Graph::scatter_rows(Id a, std::shared_ptr<const std::vector<int64_t>> idx, int64_t m) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw ShapeError("scatter_rows: rank-2 required");
    if (ta.rows() != static_cast<int64_t>(idx->size()))
        throw ShapeError("scatter_rows: row count must match index count");
    Node n;
    n.op = Op::ScatterRows;
    n.a = a;
    n.idx = idx;
    n.aux_i = m;
    n.val = alloc(m, ta.cols(), 2);
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t i = 0; i < ta.rows(); ++i) {
        int64_t dst = (*idx)[static_cast<size_t>(i)];
        if (dst < 0 || dst >= m) throw ShapeError("scatter_rows: row index out of range");
        for (int64_t c = 0; c < ta.cols(); ++c) po[dst * ta.cols() + c] += pa[i * ta.cols() + c];
    }
    finite_check(n.val, "scatter_rows");
    return push(std::move(n));
}

Id Graph::slice_cols(Id a, int64_t c0, int64_t c1) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw ShapeError("slice_cols: rank-2 required");
    if (c0 < 0 || c1 > ta.cols() || c0 >= c1) throw ShapeError("slice_cols: bad column range");
    Node n;
    n.op = Op::SliceCols;
    n.a = a;
    n.aux_i = c0;
    n.aux_j = c1;
    n.val = alloc(ta.rows(), c1 - c0, 2);
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t r = 0; r < ta.rows(); ++r)
        std::memcpy(po + r * (c1 - c0), pa + r * ta.cols() + c0, sizeof(double) * (c1 - c0));
    return push(std::move(n));
}

Id Graph::pad_cols(Id a, int64_t c0, int64_t total_cols) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw ShapeError("pad_cols: rank-2 required");
    if (c0 < 0 || c0 + ta.cols() > total_cols) throw ShapeError("pad_cols: bad placement");
    Node n;
    n.op = Op::PadCols;
    n.a = a;
    n.aux_i = c0;
    n.aux_j = total_cols;
    n.val = alloc(ta.rows(), total_cols, 2);
    const double* pa = ta.data();
    double* po = n.val.data();
    for (int64_t r = 0; r < ta.rows(); ++r)
        std::memcpy(po + r * total_cols + c0, pa + r * ta.cols(), sizeof(double) * ta.cols());
    return push(std::move(n));
}

Id Graph::reshape(Id a, int64_t r, int64_t c, int rank) {
    const Tensor& ta = val(a);
    int64_t want = (rank == 0) ? 1 : (rank == 1 ? c : r * c);
    if (ta.numel() != want) throw ShapeError("reshape: numel mismatch");
    Node n;
    n.op = Op::Reshape;
    n.a = a;
    n.aux_i = r;
    n.aux_j = c;
    n.aux_k = rank;
    n.val = alloc(r, c, rank);
    std::memcpy(n.val.data(), ta.data(), sizeof(double) * static_cast<size_t>(ta.numel()));
    return push(std::move(n));
}

Id Graph::add_rowvec(Id a, Id v) {
    const Tensor& ta = val(a);
    return add(a, tile_rows(v, ta.rows()));
}

Id Graph::mul_rowvec(Id a, Id v) {
    const Tensor& ta = val(a);
    return mul(a, tile_rows(v, ta.rows()));
}

Id Graph::dot(Id a, Id b) { return sum(mul(a, b)); }

Id Graph::pick(Id v, int64_t i) {
    const Tensor& tv = val(v);
    if (tv.rank() != 1) throw ShapeError("pick: rank-1 required");
    Id m = reshape(v, tv.cols(), 1, 2);
    auto idx = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{i});
    Id r = index_rows(m, idx);
    return reshape(r, 1, 1, 0);
}

Id Graph::row(Id a, int64_t r) {
    const Tensor& ta = val(a);
    auto idx = std::make_shared<const std::vector<int64_t>>(std::vector<int64_t>{r});
    Id picked = index_rows(a, idx);
    return reshape(picked, 1, ta.cols(), 1);
}

Id Graph::softmax_causal(Id scores) {
    const Tensor& ts = val(scores);
    if (ts.rank() != 2 || ts.rows() != ts.cols())
        throw ShapeError("softmax_causal: square matrix required");
    int64_t T = ts.rows();
    Tensor mask = Tensor::mat(T, T);
    for (int64_t r = 0; r < T; ++r)
        for (int64_t c = 0; c <= r; ++c) mask.at(r, c) = 1.0;
    // Row-wise max over the visible prefix, detached (softmax is shift
    // invariant, so the constant shift is exact for gradients too).
    Tensor cmax = Tensor::vec(T);
    for (int64_t r = 0; r < T; ++r) {
        double m = ts.at(r, 0);
        for (int64_t c = 1; c <= r; ++c) m = std::max(m, ts.at(r, c));
        cmax.at(r) = m;
    }
    Id maskc = constant(std::move(mask));
    Id shift = mul(tile_cols(constant(std::move(cmax)), T), maskc);
    Id e = mul(exp(sub(mul(scores, maskc), shift)), maskc);
    Id s = row_sum(e);
    return mul(e, tile_cols(reciprocal(s), T));
}

Id Graph::softmax_vec(Id v) {
    const Tensor& tv = val(v);
    if (tv.rank() != 1) throw ShapeError("softmax_vec: rank-1 required");
    double m = tv.at(0);
    for (int64_t i = 1; i < tv.cols(); ++i) m = std::max(m, tv.at(i));
    Id e = exp(add_scalar(v, -m));
    Id s = sum(e);
    return mul(e, broadcast_scalar(reciprocal(s), 1, tv.cols(), 1));
}

Id Graph::log_softmax_vec(Id v) {
    const Tensor& tv = val(v);
    if (tv.rank() != 1) throw ShapeError("log_softmax_vec: rank-1 required");
    double m = tv.at(0);
    for (int64_t i = 1; i < tv.cols(); ++i) m = std::max(m, tv.at(i));
    Id zc = add_scalar(v, -m);
    Id lse = log(sum(exp(zc)));
    return sub(zc, broadcast_scalar(lse, 1, tv.cols(), 1));
}

Id Graph::layernorm(Id a, Id gamma, Id beta, double eps) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw ShapeError("layernorm: rank-2 required");
    int64_t ncols = ta.cols();
    Id mu = scalar_mul(row_sum(a), 1.0 / static_cast<double>(ncols));
    Id xc = sub(a, tile_cols(mu, ncols));
    Id var = scalar_mul(row_sum(mul(xc, xc)), 1.0 / static_cast<double>(ncols));
    Id rstd = reciprocal(sqrt(add_scalar(var, eps)));
    Id y = mul(xc, tile_cols(rstd, ncols));
    return add_rowvec(mul_rowvec(y, gamma), beta);
}

Id Graph::gelu(Id a) {
    Id t = erf(scalar_mul(a, 0.70710678118654752440084436210485));
    return scalar_mul(mul(a, add_scalar(t, 1.0)), 0.5);
}

Id Graph::softplus(Id a) { return log(add_scalar(exp(a), 1.0)); }

std::vector<Id> Graph::gradients(Id scalar, const std::vector<Id>& wrt) {
    if (val(scalar).numel() != 1 || val(scalar).rank() != 0)
        throw ShapeError("gradients: output must be a scalar (shape [])");
    const size_t n0 = nodes_.size();

    std::vector<uint8_t> needs(n0, 0);
    for (Id w : wrt) {
        if (w < 0 || static_cast<size_t>(w) >= n0) throw ShapeError("gradients: bad wrt id");
        needs[static_cast<size_t>(w)] = 1;
    }
    for (size_t i = 0; i < n0; ++i) {
        if (needs[i]) continue;
        const Node& nd = nodes_[i];
        if ((nd.a >= 0 && needs[static_cast<size_t>(nd.a)]) ||
            (nd.b >= 0 && needs[static_cast<size_t>(nd.b)]))
            needs[i] = 1;
    }

    std::vector<Id> adj(n0, kNoId);
    adj[static_cast<size_t>(scalar)] = constant(Tensor::scalar(1.0));

    auto accum = [this, &adj](Id p, Id contrib) {
        if (adj[static_cast<size_t>(p)] == kNoId)
            adj[static_cast<size_t>(p)] = contrib;
        else
            adj[static_cast<size_t>(p)] = add(adj[static_cast<size_t>(p)], contrib);
    };

    for (Id i = scalar; i >= 0; --i) {
        Id dy = adj[static_cast<size_t>(i)];
        if (dy == kNoId || !needs[static_cast<size_t>(i)]) continue;
        // Copy the metadata: pushing adjoint nodes may reallocate nodes_.
        const Node nd = nodes_[static_cast<size_t>(i)];
        const bool need_a = nd.a >= 0 && needs[static_cast<size_t>(nd.a)];
        const bool need_b = nd.b >= 0 && needs[static_cast<size_t>(nd.b)];
        if (!need_a && !need_b) continue;
        switch (nd.op) {
            case Op::Leaf:
            case Op::Constant:
                break;
            case Op::Matmul:
                if (need_a) accum(nd.a, matmul(dy, transpose(nd.b)));
                if (need_b) accum(nd.b, matmul(transpose(nd.a), dy));
                break;
            case Op::Transpose:
                if (need_a) accum(nd.a, transpose(dy));
                break;
            case Op::Add:
                if (need_a) accum(nd.a, dy);
                if (need_b) accum(nd.b, dy);
                break;
            case Op::Sub:
                if (need_a) accum(nd.a, dy);
                if (need_b) accum(nd.b, neg(dy));
                break;
            case Op::Mul:
                if (need_a) accum(nd.a, mul(dy, nd.b));
                if (need_b) accum(nd.b, mul(dy, nd.a));
                break;
            case Op::Neg:
                if (need_a) accum(nd.a, neg(dy));
                break;
            case Op::ScalarMul:
                if (need_a) accum(nd.a, scalar_mul(dy, nd.aux_f));
                break;
            case Op::AddScalar:
                if (need_a) accum(nd.a, dy);
                break;
            case Op::Exp:
                if (need_a) accum(nd.a, mul(dy, i));
                break;
            case Op::Log:
                if (need_a) accum(nd.a, mul(dy, reciprocal(nd.a)));
                break;
            case Op::Sqrt:
                if (need_a) accum(nd.a, scalar_mul(mul(dy, reciprocal(i)), 0.5));
                break;
            case Op::Erf:
                if (need_a)
                    accum(nd.a, mul(dy, scalar_mul(exp(neg(mul(nd.a, nd.a))), kTwoOverSqrtPi)));
                break;
            case Op::Relu: {
                if (need_a) {
                    const Tensor& ta = val(nd.a);
                    Tensor step = alloc(ta.rows(), ta.cols(), ta.rank());
                    const double* pa = ta.data();
                    double* ps = step.data();
                    for (int64_t k = 0; k < ta.numel(); ++k) ps[k] = pa[k] > 0.0 ? 1.0 : 0.0;
                    accum(nd.a, mul(dy, constant(std::move(step))));
                }
                break;
            }
            case Op::Reciprocal:
                if (need_a) accum(nd.a, neg(mul(dy, mul(i, i))));
                break;
            case Op::Sum: {
                if (need_a) {
                    const Tensor& ta = val(nd.a);
                    accum(nd.a, broadcast_scalar(dy, ta.rows(), ta.cols(), ta.rank()));
                }
                break;
            }
            case Op::RowSum:
                if (need_a) accum(nd.a, tile_cols(dy, val(nd.a).cols()));
                break;
            case Op::ColSum:
                if (need_a) accum(nd.a, tile_rows(dy, val(nd.a).rows()));
                break;
            case Op::TileRows:
                if (need_a) accum(nd.a, col_sum(dy));
                break;
            case Op::TileCols:
                if (need_a) accum(nd.a, row_sum(dy));
                break;
            case Op::BroadcastScalar:
                if (need_a) accum(nd.a, sum(dy));
                break;
            case Op::IndexRows:
                if (need_a) accum(nd.a, scatter_rows(dy, nd.idx, val(nd.a).rows()));
                break;
            case Op::ScatterRows:
                if (need_a) accum(nd.a, index_rows(dy, nd.idx));
                break;
            case Op::SliceCols:
                if (need_a) accum(nd.a, pad_cols(dy, nd.aux_i, val(nd.a).cols()));
                break;
            case Op::PadCols:
                if (need_a) accum(nd.a, slice_cols(dy, nd.aux_i, nd.aux_i + val(nd.a).cols()));
                break;
            case Op::Reshape: {
                if (need_a) {
                    const Tensor& ta = val(nd.a);
                    accum(nd.a, reshape(dy, ta.rows(), ta.cols(), ta.rank()));
                }
                break;
            }
        }
    }

    std::vector<Id> out;
    out.reserve(wrt.size());
    for (Id w : wrt) {
        Id g = adj[static_cast<size_t>(w)];
        if (g == kNoId) {
            const Tensor& tw = val(w);
            g = constant(alloc(tw.rows(), tw.cols(), tw.rank()));
        }
        out.push_back(g);
    }
    return out;
}

HvpContext::HvpContext(Graph& graph, Id g, Id x) : graph_(graph), x_(x) {
    grad_id_ = graph_.gradients(g, {x})[0];
    grad_val_ = graph_.val(grad_id_);
    mark_ = graph_.mark();
}

Tensor HvpContext::hvp(const Tensor& v) {
    if (!v.same_shape(graph_.val(x_))) throw ShapeError("hvp: v shape must match x");
    Id vc = graph_.constant(v);
    Id s = graph_.dot(grad_id_, vc);
    Id h = graph_.gradients(s, {x_})[0];
    Tensor out = graph_.val(h);
    graph_.truncate(mark_);
    return out;
}

}  // namespace heta::ad
