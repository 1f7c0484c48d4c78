#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <span>
#include <utility>
#include <vector>

#include "nec/types.hpp"

namespace nec {

/// Lattice coordinate. Inside a cluster, x is the column in [0, ell) and y the
/// row; the linear index is x + ell * y. Coordinates outside [0, ell) refer to
/// sites of neighboring clusters.
struct SiteIndex {
  int x = 0;
  int y = 0;

  friend bool operator==(const SiteIndex&, const SiteIndex&) = default;
  friend SiteIndex operator+(SiteIndex a, SiteIndex b) { return {a.x + b.x, a.y + b.y}; }
};

/// Displacement between clusters, in cluster units.
struct Offset {
  int dx = 0;
  int dy = 0;

  friend auto operator<=>(const Offset&, const Offset&) = default;
};

inline constexpr SiteIndex kEast{1, 0};
inline constexpr SiteIndex kNorth{0, 1};

/// An ell x ell block of spins. Basis states are bit strings with site i at
/// bit i; a set bit means spin up.
class ClusterGeometry {
 public:
  explicit ClusterGeometry(int ell);

  int ell() const { return ell_; }
  int sites() const { return ell_ * ell_; }
  Index dim() const { return Index{1} << sites(); }

  bool contains(SiteIndex s) const { return s.x >= 0 && s.y >= 0 && s.x < ell_ && s.y < ell_; }
  int linear(SiteIndex s) const;
  SiteIndex site(int linear) const { return {linear % ell_, linear / ell_}; }

  /// Cluster that owns a lattice coordinate, and the coordinate within it.
  Offset owner(SiteIndex s) const;
  SiteIndex local(SiteIndex s) const;

 private:
  int ell_;
};

/// Channel rates of the NEC dissipator. gamma_nu/gamma_mu are majority
/// moves, the barred rates are the wrong moves.
struct NecRates {
  double gamma = 1.0;
  double T = 0.0;
  double h = 0.0;
  double nu = 1.0;
  double mu = 1.0;
  double nubar = 0.0;
  double mubar = 0.0;
};

/// Inverts T = (mubar + nubar) / gamma and h = (nubar - mubar) / (gamma T)
/// under nu + nubar = mu + mubar = gamma. Throws RateOutOfRange when a channel
/// would be negative.
NecRates build_rates(double gamma, double T, double h);

enum class SiteOp { Identity, X, Y, Z, Raise, Lower, Up, Down };

struct Factor {
  int site = 0;
  SiteOp op = SiteOp::Identity;
};

SparseMatrix site_operator(int n_sites, int site, SiteOp op);

/// Tensor product of single-site factors on distinct sites.
SparseMatrix product_operator(int n_sites, std::span<const Factor> factors);

/// Product of sigma^x on every site.
SparseMatrix global_flip(int n_sites);

/// Majority projectors (P_up, P_dn) of a three-site plaquette, built from
/// P_up = (2 + sum z - prod z) / 4.
std::pair<SparseMatrix, SparseMatrix> majority_projectors(const ClusterGeometry& geometry,
                                                          const std::array<SiteIndex, 3>& plaquette);

enum class Channel { Nu, Mu, NuBar, MuBar, Dephasing };

const char* to_string(Channel channel);

/// A Lindblad channel: `op` carries no rate; the dissipator is
/// rate * D[op].
struct JumpChannel {
  SparseMatrix op;
  double rate = 0.0;
  int site = 0;
  Channel channel = Channel::Nu;

  /// sqrt(rate) * op, the jump operator in the usual normalization.
  SparseMatrix scaled() const { return std::sqrt(rate) * op; }
};

enum class HamiltonianKind { None, XField, Pxp2d, PxpNec };

const char* to_string(HamiltonianKind kind);

struct HamiltonianSpec {
  HamiltonianKind kind = HamiltonianKind::None;
  double omega = 0.0;   // XField amplitude
  double omega1 = 0.0;  // blockade term of the PXP models
  double omega2 = 0.0;  // anti-blockade term of the PXP models
  double gamma_x = 0.0; // unconstrained sigma^x jump rate

  static HamiltonianSpec none() { return {}; }
  static HamiltonianSpec x_field(double omega) { return {HamiltonianKind::XField, omega, 0.0, 0.0, 0.0}; }
  static HamiltonianSpec pxp_2d(double omega) { return {HamiltonianKind::Pxp2d, 0.0, omega, omega, 0.0}; }
  static HamiltonianSpec pxp_nec(double omega) { return {HamiltonianKind::PxpNec, 0.0, omega, omega, 0.0}; }

  /// The amplitude reported in outputs (omega for XField, omega1 otherwise).
  double amplitude() const { return kind == HamiltonianKind::XField ? omega : omega1; }
};

enum class CouplingKind { HamiltonianField, DissipativeRate, DissipativeBackaction };

const char* to_string(CouplingKind kind);

/// Operator evaluated on the cluster displaced by `offset`.
struct Probe {
  Offset offset;
  SparseMatrix op;
};

/// One mean-field link produced by a plaquette that straddles the cluster
/// edge. After tracing out the neighbors it contributes
///   HamiltonianField:       base * prod(c) * on_op to the Hamiltonian,
///   Dissipative*:           a channel D[on_op] with rate base * prod(c),
/// where c runs over the expectations of the probes on their clusters.
struct BoundaryCoupling {
  CouplingKind kind = CouplingKind::HamiltonianField;
  SparseMatrix on_op;
  std::vector<Probe> probes;
  double base = 0.0;
  SiteIndex anchor;  // plaquette vertex, in the coordinates of this cluster
  Channel channel = Channel::Nu;  // meaningful for dissipative kinds only
};

/// Majority and wrong-move channels of every plaquette lying fully inside the
/// cluster, in the reduced two-neighbor form.
std::vector<JumpChannel> nec_jump_operators(const NecRates& rates, const ClusterGeometry& geometry);

/// Dissipative couplings of plaquettes that straddle the cluster edge, both
/// those anchored inside (DissipativeRate) and those anchored in a neighbor
/// with a leg inside (DissipativeBackaction).
std::vector<BoundaryCoupling> nec_boundary_couplings(const NecRates& rates, const ClusterGeometry& geometry);

struct HamiltonianParts {
  SparseMatrix on_cluster;
  std::vector<BoundaryCoupling> boundary;
};

HamiltonianParts build_hamiltonian(const HamiltonianSpec& spec, const ClusterGeometry& geometry);

/// sigma^x jumps at rate gamma_x on every site. Empty when gamma_x == 0.
std::vector<JumpChannel> dephasing_jumps(double gamma_x, const ClusterGeometry& geometry);

struct ClusterOperatorSet {
  ClusterGeometry geometry{1};
  SparseMatrix hamiltonian_on;
  std::vector<JumpChannel> jumps_on;
  std::vector<BoundaryCoupling> boundary;
};

ClusterOperatorSet build_operator_set(const ClusterGeometry& geometry, const NecRates& rates,
                                      const HamiltonianSpec& hamiltonian);

}  // namespace nec
