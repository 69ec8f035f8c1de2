#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace nid {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam over a fixed list of parameter blocks. Blocks are identified by
// position, so step() must always be called with the same layout.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(std::span<const std::span<double>> params,
            std::span<const std::span<const double>> grads) {
    if (first_.empty()) {
      for (const auto& p : params) {
        first_.emplace_back(p.size(), 0.0);
        second_.emplace_back(p.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t blk = 0; blk < params.size(); ++blk) {
      auto p = params[blk];
      auto g = grads[blk];
      auto& m = first_[blk];
      auto& v = second_[blk];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        p[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

// Plain gradient descent with the same calling convention as Adam.
inline void sgd_step(std::span<const std::span<double>> params,
                     std::span<const std::span<const double>> grads, double learning_rate) {
  for (std::size_t blk = 0; blk < params.size(); ++blk) {
    for (std::size_t i = 0; i < params[blk].size(); ++i) {
      params[blk][i] -= learning_rate * grads[blk][i];
    }
  }
}

}  // namespace nid
