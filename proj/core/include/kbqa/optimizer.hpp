#pragma once

#include "kbqa/params.hpp"

namespace kbqa::optim {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

class Adam {
 public:
  Adam(const model::ModelParams& like, AdamConfig cfg);

  /// params -= lr * mhat / (sqrt(vhat) + eps), bias-corrected. The moments
  /// see grads * grad_scale. Returns false if any updated parameter is not
  /// finite (or the parameters are large enough for their sum to overflow).
  bool step(model::ModelParams& params, const model::ModelParams& grads, double grad_scale = 1.0);
  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  model::ModelParams m_;
  model::ModelParams v_;
  long t_ = 0;
};

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
double clip_global_norm(model::ModelParams& grads, double max_norm);

/// The factor clip_global_norm would apply for a gradient of norm `norm`.
double clip_scale(double norm, double max_norm);

}  // namespace kbqa::optim
