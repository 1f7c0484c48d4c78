#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "nec/cmf.hpp"

namespace nec {

/// One linearized boundary link: the rhs responds to a fluctuation of the
/// cluster at `offset` by v * (w^T vec(delta rho)) times the Bloch phase.
struct RankOneTerm {
  Vector v;  // d generator / d c applied to the steady state, vectorized
  Vector w;  // vec(probe^T), so w^T vec(X) = tr(probe X)
  Offset offset;
  CouplingKind kind = CouplingKind::HamiltonianField;
};

struct BlochOptions {
  bool include_backaction = true;
  /// Phase of a link is exp(i phase_scale k . d) with d in cluster units.
  /// 1 keeps k conjugate to the cluster index; ell measures k per site.
  int phase_scale = 1;
};

/// M_k = M_cmf + sum_alpha exp(i k . d_alpha) v_alpha w_alpha^T with every
/// scalar of M_cmf frozen at the steady state.
struct BlochMatrix {
  Matrix m_cmf;
  std::vector<RankOneTerm> terms;
  int phase_scale = 1;
  Prescription prescription = Prescription::Trace;

  Matrix at(double kx, double ky) const;
};

/// Throws CapExceeded for ell > 2.
BlochMatrix build_bloch(const Matrix& rho_ss, const ClusterOperatorSet& set, Prescription prescription,
                        const BlochOptions& options = {});

/// Largest real part of the spectrum.
double mu_of(const Matrix& m_k);
double mu_of_k(const BlochMatrix& bloch, double kx, double ky);

/// `points` values strictly inside (-pi/ell, pi/ell), endpoints excluded.
std::vector<double> k_grid(int ell, int points = 65);

struct MuTable {
  std::vector<double> kx;
  std::vector<double> ky;
  std::vector<double> mu;  // mu[iy * kx.size() + ix]
  Prescription prescription = Prescription::Trace;

  double at(std::size_t ix, std::size_t iy) const { return mu[iy * kx.size() + ix]; }
};

MuTable mu_table(const BlochMatrix& bloch, std::span<const double> kx, std::span<const double> ky, int threads);

/// Rows `kx,ky,mu,prescription`.
void write_mu_csv(std::ostream& out, const MuTable& table);

/// Eigenvalues of m_minus_k are the complex conjugates of those of m_k,
/// matched greedily within tol.
bool spectrum_symmetry_check(const Matrix& m_k, const Matrix& m_minus_k, double tol = 1e-8);

}  // namespace nec
