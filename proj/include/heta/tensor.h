#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "heta/error.h"

namespace heta {

// Dense row-major tensor of 64-bit floats, rank 0..2.
// Buffers are shared and treated as immutable once a Tensor is handed out;
// mutate only through data() while constructing.
class Tensor {
  public:
    Tensor() : rows_(0), cols_(0), rank_(0) {}

    static Tensor scalar(double v) {
        Tensor t;
        t.rank_ = 0;
        t.rows_ = 1;
        t.cols_ = 1;
        t.buf_ = std::make_shared<std::vector<double>>(1, v);
        return t;
    }
    static Tensor vec(int64_t n) {
        Tensor t;
        t.rank_ = 1;
        t.rows_ = 1;
        t.cols_ = n;
        t.buf_ = std::make_shared<std::vector<double>>(static_cast<size_t>(n), 0.0);
        return t;
    }
    static Tensor mat(int64_t r, int64_t c) {
        Tensor t;
        t.rank_ = 2;
        t.rows_ = r;
        t.cols_ = c;
        t.buf_ = std::make_shared<std::vector<double>>(static_cast<size_t>(r * c), 0.0);
        return t;
    }
    static Tensor from_vec(std::vector<double> v) {
        Tensor t;
        t.rank_ = 1;
        t.rows_ = 1;
        t.cols_ = static_cast<int64_t>(v.size());
        t.buf_ = std::make_shared<std::vector<double>>(std::move(v));
        return t;
    }
    static Tensor from_mat(int64_t r, int64_t c, std::vector<double> v) {
        if (static_cast<int64_t>(v.size()) != r * c)
            throw ShapeError("from_mat: data length does not match shape");
        Tensor t;
        t.rank_ = 2;
        t.rows_ = r;
        t.cols_ = c;
        t.buf_ = std::make_shared<std::vector<double>>(std::move(v));
        return t;
    }

    int rank() const { return rank_; }
    int64_t rows() const { return rows_; }
    int64_t cols() const { return cols_; }
    int64_t numel() const { return rows_ * cols_; }

    bool same_shape(const Tensor& o) const {
        return rank_ == o.rank_ && rows_ == o.rows_ && cols_ == o.cols_;
    }

    const double* data() const { return buf_->data(); }
    double* data() { return buf_->data(); }

    double item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor");
        return (*buf_)[0];
    }
    double at(int64_t i) const { return (*buf_)[static_cast<size_t>(i)]; }
    double at(int64_t r, int64_t c) const { return (*buf_)[static_cast<size_t>(r * cols_ + c)]; }
    double& at(int64_t i) { return (*buf_)[static_cast<size_t>(i)]; }
    double& at(int64_t r, int64_t c) { return (*buf_)[static_cast<size_t>(r * cols_ + c)]; }

    bool all_finite() const {
        for (double v : *buf_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        if (rank_ == 0) return "[]";
        if (rank_ == 1) return "[" + std::to_string(cols_) + "]";
        return "[" + std::to_string(rows_) + "," + std::to_string(cols_) + "]";
    }

    // Deep copy with a fresh buffer.
    Tensor clone() const {
        Tensor t = *this;
        t.buf_ = std::make_shared<std::vector<double>>(*buf_);
        return t;
    }

  private:
    std::shared_ptr<std::vector<double>> buf_;
    int64_t rows_;
    int64_t cols_;
    int rank_;
};

inline double l1_norm(const Tensor& t) {
    double s = 0.0;
    const double* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) s += std::fabs(p[i]);
    return s;
}

inline double l2_norm_sq(const Tensor& t) {
    double s = 0.0;
    const double* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) s += p[i] * p[i];
    return s;
}

inline double max_abs(const Tensor& t) {
    double s = 0.0;
    const double* p = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) s = std::max(s, std::fabs(p[i]));
    return s;
}

}  // namespace heta
