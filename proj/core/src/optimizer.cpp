#include "kbqa/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "kbqa/errors.hpp"

namespace kbqa::optim {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
}

Adam::Adam(const model::ModelParams& like, AdamConfig cfg)
    : cfg_(cfg), m_(model::ModelParams::zeros_like(like)), v_(model::ModelParams::zeros_like(like)) {
  cfg_.validate();
}

bool Adam::step(model::ModelParams& params, const model::ModelParams& grads, double grad_scale) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = m_.tensors();
  auto v = v_.tensors();
  // One pass per cache-sized block instead of one pass per expression.
  constexpr Eigen::Index kBlock = 1024;
  Eigen::VectorXd gs(kBlock);
  bool finite = true;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const Eigen::Index n = p[k].size();
    for (Eigen::Index at = 0; at < n; at += kBlock) {
      const Eigen::Index len = std::min(kBlock, n - at);
      auto pf = p[k].flat().segment(at, len);
      auto mf = m[k].flat().segment(at, len);
      auto vf = v[k].flat().segment(at, len);
      auto gf = gs.head(len);
      gf = g[k].flat().segment(at, len);
      if (grad_scale != 1.0) gf *= grad_scale;
      mf = cfg_.beta1 * mf + (1.0 - cfg_.beta1) * gf;
      vf = cfg_.beta2 * vf + (1.0 - cfg_.beta2) * gf.cwiseAbs2();
      pf.array() -= cfg_.lr * (mf.array() / c1) / ((vf.array() / c2).sqrt() + cfg_.eps);
      finite = finite && std::isfinite(pf.sum());
    }
  }
  return finite;
}

double clip_scale(double norm, double max_norm) { return norm > max_norm ? max_norm / norm : 1.0; }

double clip_global_norm(model::ModelParams& grads, double max_norm) {
  const double norm = model::global_norm(grads);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  const double scale = clip_scale(norm, max_norm);
  if (scale != 1.0) {
    for (auto& t : grads.tensors()) t.flat() *= scale;
  }
  return norm;
}

}  // namespace kbqa::optim
