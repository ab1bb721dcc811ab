#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "t2d/common.hpp"

namespace t2d {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// AdamW over a fixed list of dense matrices. Decay is decoupled: applied to
// the parameter directly, scaled by the learning rate.
class AdamW {
 public:
  AdamW(AdamWConfig cfg, const std::vector<Matrix*>& params) : cfg_(cfg), params_(params) {
    for (auto* p : params_) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }

  void step(const std::vector<Matrix*>& grads) {
    if (grads.size() != params_.size()) throw ContractViolation("gradient count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Matrix& p = *params_[k];
      const Matrix& g = *grads[k];
      m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
      v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      if (cfg_.weight_decay != 0.0) p *= 1.0 - cfg_.learning_rate * cfg_.weight_decay;
      p.array() -= cfg_.learning_rate * (m_[k].array() / c1) /
                   ((v_[k].array() / c2).sqrt() + cfg_.eps);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<Matrix*> params_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

// Lazy AdamW over the rows of one table: only rows present in a step's
// gradient are touched, each with its own step count.
class SparseRowAdamW {
 public:
  SparseRowAdamW(AdamWConfig cfg, Matrix* table)
      : cfg_(cfg), table_(table), m_(Matrix::Zero(table->rows(), table->cols())),
        v_(Matrix::Zero(table->rows(), table->cols())), t_(table->rows(), 0) {}

  void step(const std::map<std::uint32_t, RowVector>& row_grads) {
    Matrix& p = *table_;
    for (const auto& [r, g] : row_grads) {
      const auto t = ++t_[r];
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
      m_.row(r) = cfg_.beta1 * m_.row(r) + (1.0 - cfg_.beta1) * g;
      v_.row(r) = cfg_.beta2 * v_.row(r) + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      if (cfg_.weight_decay != 0.0) p.row(r) *= 1.0 - cfg_.learning_rate * cfg_.weight_decay;
      p.row(r).array() -= cfg_.learning_rate * (m_.row(r).array() / c1) /
                          ((v_.row(r).array() / c2).sqrt() + cfg_.eps);
    }
  }

 private:
  AdamWConfig cfg_;
  Matrix* table_;
  Matrix m_, v_;
  std::vector<std::size_t> t_;
};

}  // namespace t2d
