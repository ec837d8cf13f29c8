#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "heta/tensor.h"

namespace heta::ad {

using Id = int32_t;
constexpr Id kNoId = -1;

enum class Op : uint8_t {
    Leaf,       // differentiable input
    Constant,   // non-differentiable value
    Matmul,
    Transpose,
    Add,
    Sub,
    Mul,
    Neg,
    ScalarMul,  // aux_f
    AddScalar,  // aux_f
    Exp,
    Log,
    Sqrt,
    Erf,
    Relu,
    Reciprocal,
    Sum,              // -> scalar
    RowSum,           // [m,n] -> [m]
    ColSum,           // [m,n] -> [n]
    TileRows,         // [n] -> [aux_i, n]
    TileCols,         // [m] -> [m, aux_i]
    BroadcastScalar,  // scalar -> shape(aux_i rows, aux_j cols, aux_k rank)
    IndexRows,        // rows of [m,n] gathered by idx -> [k,n]
    ScatterRows,      // [k,n] scattered into zero [aux_i, n] by idx (duplicates accumulate)
    SliceCols,        // cols [aux_i, aux_j) of [m,n]
    PadCols,          // [m,k] placed at col aux_i of zero [m, aux_j]
    Reshape,          // same numel, shape per aux
};

struct Node {
    Op op;
    Id a = kNoId;
    Id b = kNoId;
    double aux_f = 0.0;
    int64_t aux_i = 0;
    int64_t aux_j = 0;
    int aux_k = 0;
    Tensor val;
    std::shared_ptr<const std::vector<int64_t>> idx;  // for IndexRows/ScatterRows
};

// Eagerly-evaluated computation tape. Node values are computed at insertion,
// in insertion order, single-threaded; grads build new nodes on the same tape
// so gradients-of-gradients (HVPs) come from the same machinery.
class Graph {
  public:
    Graph() { nodes_.reserve(1024); }

    Id leaf(Tensor t);
    Id constant(Tensor t);
    Id constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    Id matmul(Id a, Id b);
    Id transpose(Id a);
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);
    Id neg(Id a);
    Id scalar_mul(Id a, double c);
    Id add_scalar(Id a, double c);
    Id exp(Id a);
    Id log(Id a);
    Id sqrt(Id a);
    Id erf(Id a);
    Id relu(Id a);
    Id reciprocal(Id a);
    Id sum(Id a);
    Id row_sum(Id a);
    Id col_sum(Id a);
    Id tile_rows(Id v, int64_t m);
    Id tile_cols(Id v, int64_t n);
    Id broadcast_scalar(Id s, int64_t r, int64_t c, int rank);
    Id index_rows(Id a, std::shared_ptr<const std::vector<int64_t>> idx);
    Id scatter_rows(Id a, std::shared_ptr<const std::vector<int64_t>> idx, int64_t m);
    Id slice_cols(Id a, int64_t c0, int64_t c1);
    Id pad_cols(Id a, int64_t c0, int64_t total_cols);
    Id reshape(Id a, int64_t r, int64_t c, int rank);

    // Composites (built from the primitives above, so they are twice
    // differentiable for free).
    Id add_rowvec(Id a, Id v);            // [m,n] + [n]
    Id mul_rowvec(Id a, Id v);            // [m,n] * [n]
    Id dot(Id a, Id b);                   // sum(a*b) -> scalar
    Id pick(Id v, int64_t i);             // vector element -> scalar
    Id row(Id a, int64_t r);              // matrix row -> [n]
    Id softmax_causal(Id scores);         // row-wise softmax over prefix, masked entries exactly 0
    Id softmax_vec(Id v);                 // [n] -> [n]
    Id log_softmax_vec(Id v);             // [n] -> [n], max-shift stabilized
    Id layernorm(Id a, Id gamma, Id beta, double eps);  // row-wise
    Id gelu(Id a);                        // exact erf form
    Id softplus(Id a);

    const Tensor& val(Id i) const { return nodes_[static_cast<size_t>(i)].val; }
    size_t size() const { return nodes_.size(); }

    // Reverse-mode gradients of a scalar node w.r.t. the given leaves.
    // Gradient nodes are appended to this graph and are differentiable again.
    std::vector<Id> gradients(Id scalar, const std::vector<Id>& wrt);

    // Tape truncation: drop every node at or after `mark` (their buffers are
    // recycled). Only valid if no live Id at or after mark is used afterwards.
    size_t mark() const { return nodes_.size(); }
    void truncate(size_t mark);

  private:
    Id push(Node n);
    Tensor alloc(int64_t r, int64_t c, int rank);
    void finite_check(const Tensor& t, const char* opname);

    std::vector<Node> nodes_;
};

// Convenience: dense Hessian-vector product machinery for a scalar node.
// Holds the first-gradient tape position so repeated HVPs at the same point
// only pay for the second backward pass.
class HvpContext {
  public:
    // g must be a scalar node depending on leaf x.
    HvpContext(Graph& graph, Id g, Id x);

    const Tensor& grad() const { return grad_val_; }
    // H * v for the scalar wrt x (same shape as x).
    Tensor hvp(const Tensor& v);

  private:
    Graph& graph_;
    Id x_;
    Id grad_id_;
    Tensor grad_val_;
    size_t mark_;
};

}  // namespace heta::ad
