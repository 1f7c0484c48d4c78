#pragma once

#include <bit>
#include <cstdint>

#include "nec/types.hpp"

namespace nec {

/// Tr[rho sum_j sigma^z_j] / n for a density matrix on n sites.
template <typename Derived>
double magnetization(const Eigen::MatrixBase<Derived>& rho) {
  const Index dim = rho.rows();
  const int n = std::countr_zero(static_cast<std::uint64_t>(dim));
  double acc = 0.0;
  for (Index s = 0; s < dim; ++s) {
    const int ups = std::popcount(static_cast<std::uint64_t>(s));
    acc += std::real(rho(s, s)) * static_cast<double>(2 * ups - n);
  }
  return n > 0 ? acc / n : 0.0;
}

/// <sigma^z> of one site.
template <typename Derived>
double site_magnetization(const Eigen::MatrixBase<Derived>& rho, int site) {
  double acc = 0.0;
  for (Index s = 0; s < rho.rows(); ++s) acc += std::real(rho(s, s)) * (((s >> site) & 1) ? 1.0 : -1.0);
  return acc;
}

}  // namespace nec
