#pragma once

#include <complex>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace nec {

using Complex = std::complex<double>;
using Index = Eigen::Index;

/// Dense complex matrix. Density matrices, and stacks of them laid side by
/// side as square column blocks, all use this type.
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

/// Compressed-column sparse operator on a cluster Hilbert space.
using SparseMatrix = Eigen::SparseMatrix<Complex>;

inline constexpr Complex kI{0.0, 1.0};

}  // namespace nec
