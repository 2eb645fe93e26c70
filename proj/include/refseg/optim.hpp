// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "refseg/error.hpp"

namespace refseg {

struct AdamWConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double weight_decay = 0.01;
};

// Decoupled weight decay; moments are part of the training state and travel
// with checkpoints.
class AdamW {
public:
  AdamW(size_t n_params, const AdamWConfig& cfg) : cfg_(cfg), m_(n_params, 0.f), v_(n_params, 0.f) {}

  void step(std::vector<float>& params, const std::vector<float>& grads, double lr_scale = 1.0) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw_error(Errc::run, "AdamW: parameter size mismatch");
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double bc1 = 1.0 - std::pow(b1, double(t_));
    const double bc2 = 1.0 - std::pow(b2, double(t_));
    const double lr = cfg_.lr * lr_scale;
    for (size_t i = 0; i < params.size(); ++i) {
      double g = grads[i];
      double m = b1 * m_[i] + (1.0 - b1) * g;
      double v = b2 * v_[i] + (1.0 - b2) * g * g;
      m_[i] = static_cast<float>(m);
      v_[i] = static_cast<float>(v);
      double mh = m / bc1, vh = v / bc2;
      double upd = mh / (std::sqrt(vh) + cfg_.eps) + cfg_.weight_decay * params[i];
      params[i] = static_cast<float>(params[i] - lr * upd);
    }
  }

  int64_t steps() const { return t_; }
  std::vector<float>& moment1() { return m_; }
  std::vector<float>& moment2() { return v_; }
  void restore(std::vector<float> m, std::vector<float> v, int64_t t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }
  const AdamWConfig& config() const { return cfg_; }

private:
  AdamWConfig cfg_;
  std::vector<float> m_, v_;
  int64_t t_ = 0;
};

}  // namespace refseg
