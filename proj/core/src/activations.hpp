#pragma once

#include <Eigen/Dense>

namespace kbqa::model {

// Eigen has no vectorized tanh for double; this form goes through the
// vectorized exp and is exact to a few ulps. Both decoder routes use it so
// they agree bit for bit.
template <typename Derived>
void tanh_inplace(const Eigen::MatrixBase<Derived>& m_) {
  auto& m = const_cast<Eigen::MatrixBase<Derived>&>(m_);
  m.array() = 1.0 - 2.0 / ((2.0 * m.array()).exp() + 1.0);
}

template <typename Derived>
typename Derived::PlainObject tanh_of(const Eigen::MatrixBase<Derived>& x) {
  typename Derived::PlainObject out = x;
  tanh_inplace(out);
  return out;
}

}  // namespace kbqa::model
