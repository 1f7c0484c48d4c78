#pragma once

#include <random>
#include <vector>

#include "nec/lindblad.hpp"
#include "nec/operators.hpp"

namespace nec::test {

inline Matrix random_density(Index dim, std::mt19937& rng) {
  std::normal_distribution<double> n;
  Matrix a(dim, dim);
  for (Index k = 0; k < a.size(); ++k) a.data()[k] = {n(rng), n(rng)};
  Matrix r = a * a.adjoint();
  return r / r.trace();
}

inline Matrix random_hermitian(Index dim, std::mt19937& rng) {
  std::normal_distribution<double> n;
  Matrix a(dim, dim);
  for (Index k = 0; k < a.size(); ++k) a.data()[k] = {n(rng), n(rng)};
  return 0.5 * (a + a.adjoint());
}

/// Tensor product with factor 0 on the least significant bit.
inline Matrix kron_sites(const std::vector<Matrix>& factors) {
  Matrix out = Matrix::Ones(1, 1);
  for (int i = static_cast<int>(factors.size()) - 1; i >= 0; --i) {
    const Matrix& f = factors[static_cast<std::size_t>(i)];
    Matrix t(out.rows() * f.rows(), out.cols() * f.cols());
    for (Index a = 0; a < out.rows(); ++a) {
      for (Index b = 0; b < out.cols(); ++b) t.block(a * f.rows(), b * f.cols(), f.rows(), f.cols()) = out(a, b) * f;
    }
    out = t;
  }
  return out;
}

/// Single-site reduced density matrix.
inline Matrix reduce_to_site(const Matrix& rho, int site) {
  Matrix r = Matrix::Zero(2, 2);
  const Index mask = ~(Index{1} << site);
  for (Index s = 0; s < rho.rows(); ++s) {
    for (Index u = 0; u < rho.cols(); ++u) {
      if ((s & mask) == (u & mask)) r((s >> site) & 1, (u >> site) & 1) += rho(s, u);
    }
  }
  return r;
}

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  }
  return out;
}

/// Dense column-stacking Liouvillian from vec(A X B) = (B^T kron A) vec(X).
inline Matrix dense_liouvillian(const GeneratorSnapshot& g) {
  const Index d = g.dim();
  const Matrix id = Matrix::Identity(d, d);
  const Matrix h = Matrix(g.hamiltonian());
  Matrix m = -kI * (kron(id, h) - kron(h.transpose(), id));
  for (const auto& ch : g.channels()) {
    const Matrix l = Matrix(ch.op);
    const Matrix ldl = l.adjoint() * l;
    m += ch.rate * (kron(l.conjugate(), l) - 0.5 * kron(id, ldl) - 0.5 * kron(ldl.transpose(), id));
  }
  return m;
}

}  // namespace nec::test
