#include "nec/stability.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include <Eigen/Eigenvalues>

#include "nec/errors.hpp"
#include "nec/parallel.hpp"

namespace nec {

namespace {

Matrix dissipator(const SparseMatrix& l, const Matrix& rho) {
  const SparseMatrix adj = l.adjoint();
  const SparseMatrix ldl = adj * l;
  const Matrix l_rho = l * rho;
  return Matrix(l_rho * adj) - 0.5 * Matrix(ldl * rho) - 0.5 * Matrix(rho * ldl);
}

Vector vec_transpose(const SparseMatrix& probe) {
  const SparseMatrix t = probe.transpose();
  return vectorize(Matrix(t));
}

}  // namespace

BlochMatrix build_bloch(const Matrix& rho_ss, const ClusterOperatorSet& set, Prescription prescription,
                        const BlochOptions& options) {
  const Index dim = set.geometry.dim();
  if (dim * dim > 65536) throw CapExceeded("Bloch matrix needs ell <= 2");
  const MeanFieldClosure closure = evaluate_closure(set, rho_ss);

  BlochMatrix b;
  b.m_cmf = Matrix(superoperator_matrix(close_generator(set, closure, prescription)));
  b.phase_scale = options.phase_scale;
  b.prescription = prescription;

  for (std::size_t a = 0; a < set.boundary.size(); ++a) {
    const auto& c = set.boundary[a];
    if (c.kind == CouplingKind::DissipativeBackaction && !options.include_backaction) continue;
    const auto& values = closure.values[a];
    const Matrix response = c.kind == CouplingKind::HamiltonianField
                                ? Matrix(-kI * (c.on_op * rho_ss) + kI * (rho_ss * c.on_op))
                                : dissipator(c.on_op, rho_ss);
    for (std::size_t p = 0; p < c.probes.size(); ++p) {
      // Product rule: every other scalar stays frozen.
      double weight = c.base;
      const bool squared = c.kind != CouplingKind::HamiltonianField && prescription == Prescription::Factorized;
      for (std::size_t q = 0; q < values.size(); ++q) {
        if (q == p) continue;
        weight *= squared ? values[q] * values[q] : values[q];
      }
      if (squared) weight *= 2.0 * values[p];
      b.terms.push_back({weight * vectorize(response), vec_transpose(c.probes[p].op), c.probes[p].offset, c.kind});
    }
  }
  return b;
}

Matrix BlochMatrix::at(double kx, double ky) const {
  Matrix m = m_cmf;
  for (const auto& t : terms) {
    const double phase = phase_scale * (kx * t.offset.dx + ky * t.offset.dy);
    m.noalias() += std::polar(1.0, phase) * (t.v * t.w.transpose());
  }
  return m;
}

double mu_of(const Matrix& m_k) {
  Eigen::ComplexEigenSolver<Matrix> solver(m_k, false);
  return solver.eigenvalues().real().maxCoeff();
}

double mu_of_k(const BlochMatrix& bloch, double kx, double ky) { return mu_of(bloch.at(kx, ky)); }

std::vector<double> k_grid(int ell, int points) {
  std::vector<double> k(static_cast<std::size_t>(points));
  const double half = std::numbers::pi / ell;
  for (int i = 0; i < points; ++i) k[static_cast<std::size_t>(i)] = -half + 2.0 * half * (i + 1) / (points + 1);
  return k;
}

MuTable mu_table(const BlochMatrix& bloch, std::span<const double> kx, std::span<const double> ky, int threads) {
  MuTable t;
  t.kx.assign(kx.begin(), kx.end());
  t.ky.assign(ky.begin(), ky.end());
  t.prescription = bloch.prescription;
  const std::size_t nx = t.kx.size();
  t.mu = parallel_map<double>(nx * t.ky.size(), threads,
                              [&](std::size_t i) { return mu_of_k(bloch, t.kx[i % nx], t.ky[i / nx]); });
  return t;
}

void write_mu_csv(std::ostream& out, const MuTable& t) {
  out << "kx,ky,mu,prescription\n";
  const auto precision = out.precision(12);
  for (std::size_t iy = 0; iy < t.ky.size(); ++iy) {
    for (std::size_t ix = 0; ix < t.kx.size(); ++ix) {
      out << t.kx[ix] << ',' << t.ky[iy] << ',' << t.at(ix, iy) << ',' << to_string(t.prescription) << '\n';
    }
  }
  out.precision(precision);
}

bool spectrum_symmetry_check(const Matrix& m_k, const Matrix& m_minus_k, double tol) {
  if (m_k.rows() != m_minus_k.rows()) return false;
  const Vector a = Eigen::ComplexEigenSolver<Matrix>(m_k, false).eigenvalues();
  Vector b = Eigen::ComplexEigenSolver<Matrix>(m_minus_k, false).eigenvalues().conjugate();
  std::vector<bool> used(static_cast<std::size_t>(b.size()), false);
  for (Index i = 0; i < a.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    Index pick = -1;
    for (Index j = 0; j < b.size(); ++j) {
      if (used[static_cast<std::size_t>(j)]) continue;
      const double d = std::abs(a[i] - b[j]);
      if (d < best) {
        best = d;
        pick = j;
      }
    }
    if (pick < 0 || best > tol) return false;
    used[static_cast<std::size_t>(pick)] = true;
  }
  return true;
}

}  // namespace nec
