#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "kbqa/optimizer.hpp"

namespace kbqa {
namespace {

model::ModelDims dims() {
  model::ModelDims d;
  d.embed = 4;
  d.kb = 4;
  d.hidden = 8;
  d.vocab = 300;  // word_emb spans more than one update block
  d.entity_rows = 5;
  d.predicate_rows = 3;
  return d;
}

std::vector<double> flatten(const model::ModelParams& p) {
  std::vector<double> out;
  for (const auto& t : p.tensors()) {
    auto f = t.flat();
    out.insert(out.end(), f.data(), f.data() + f.size());
  }
  return out;
}

// Textbook Adam, one scalar at a time.
struct ScalarAdam {
  double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  int t = 0;

  void step(std::vector<double>& p, const std::vector<double>& g, double scale) {
    if (m.empty()) m.assign(p.size(), 0.0), v.assign(p.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] * scale;
      m[i] = b1 * m[i] + (1 - b1) * gi;
      v[i] = b2 * v[i] + (1 - b2) * gi * gi;
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

TEST(Adam, MatchesScalarOracleWithGradientScale) {
  const auto d = dims();
  auto params = model::init_params(d, 3);
  optim::Adam adam(params, optim::AdamConfig{});
  ScalarAdam oracle;
  auto expect = flatten(params);
  const double scales[] = {1.0, 0.25, 3.0};
  for (int s = 0; s < 3; ++s) {
    auto grads = model::init_params(d, 100 + s);
    EXPECT_TRUE(adam.step(params, grads, scales[s]));
    oracle.step(expect, flatten(grads), scales[s]);
  }
  const auto got = flatten(params);
  ASSERT_EQ(got.size(), expect.size());
  ASSERT_GT(d.embed * d.vocab, 1024);
  for (std::size_t i = 0; i < got.size(); ++i) {
    ASSERT_NEAR(got[i], expect[i], 1e-12 * std::max(1.0, std::abs(expect[i]))) << "coordinate " << i;
  }
  EXPECT_EQ(adam.steps(), 3);
}

TEST(Adam, ReportsNonFiniteParameters) {
  const auto d = dims();
  auto params = model::init_params(d, 3);
  optim::Adam adam(params, optim::AdamConfig{});
  auto grads = model::ModelParams::zeros_like(params);
  EXPECT_TRUE(adam.step(params, grads));
  grads.bridge_b[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(adam.step(params, grads));
}

TEST(Clip, ScaleAndInPlaceClipAgree) {
  EXPECT_EQ(optim::clip_scale(3.0, 5.0), 1.0);
  EXPECT_DOUBLE_EQ(optim::clip_scale(10.0, 5.0), 0.5);

  auto grads = model::init_params(dims(), 9);
  const double before = model::global_norm(grads);
  ASSERT_GT(before, 1.0);
  EXPECT_EQ(optim::clip_global_norm(grads, 1.0), before);
  EXPECT_NEAR(model::global_norm(grads), 1.0, 1e-12);
}

}  // namespace
}  // namespace kbqa
