#pragma once

#include <cmath>

namespace heta {

// Neumaier compensated accumulator. Estimator accumulations use this so the
// summation order cannot move results beyond ~1e-12.
class KahanSum {
  public:
    void add(double v) {
        double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }
    void reset() { sum_ = comp_ = 0.0; }

  private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

}  // namespace heta
