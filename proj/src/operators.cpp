#include "nec/operators.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "nec/errors.hpp"

namespace nec {

ClusterGeometry::ClusterGeometry(int ell) : ell_(ell) {
  if (ell < 1 || ell > 4) throw std::invalid_argument("cluster size must lie in [1, 4], got " + std::to_string(ell));
}

int ClusterGeometry::linear(SiteIndex s) const {
  if (!contains(s)) {
    throw SiteOutOfCluster("site (" + std::to_string(s.x) + ", " + std::to_string(s.y) + ") outside a " +
                           std::to_string(ell_) + "x" + std::to_string(ell_) + " cluster");
  }
  return s.x + ell_ * s.y;
}

namespace {

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

}  // namespace

Offset ClusterGeometry::owner(SiteIndex s) const { return {floor_div(s.x, ell_), floor_div(s.y, ell_)}; }

SiteIndex ClusterGeometry::local(SiteIndex s) const {
  const Offset o = owner(s);
  return {s.x - o.dx * ell_, s.y - o.dy * ell_};
}

NecRates build_rates(double gamma, double T, double h) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw RateOutOfRange("gamma must be positive and finite");
  if (!std::isfinite(T) || !std::isfinite(h)) throw RateOutOfRange("T and h must be finite");
  NecRates r;
  r.gamma = gamma;
  r.T = T;
  r.h = h;
  r.nubar = gamma * T * (1.0 + h) / 2.0;
  r.mubar = gamma * T * (1.0 - h) / 2.0;
  r.nu = gamma - r.nubar;
  r.mu = gamma - r.mubar;
  for (double rate : {r.nu, r.mu, r.nubar, r.mubar}) {
    if (rate < 0.0) {
      throw RateOutOfRange("channel rate negative for T=" + std::to_string(T) + ", h=" + std::to_string(h));
    }
  }
  return r;
}

namespace {

struct SiteAction {
  int bit;
  Complex amp;
};

// Basis bit 1 is spin up.
SiteAction act(SiteOp op, int bit) {
  switch (op) {
    case SiteOp::Identity: return {bit, 1.0};
    case SiteOp::X: return {1 - bit, 1.0};
    case SiteOp::Y: return {1 - bit, bit ? Complex{0.0, 1.0} : Complex{0.0, -1.0}};
    case SiteOp::Z: return {bit, bit ? 1.0 : -1.0};
    case SiteOp::Raise: return {1, bit ? 0.0 : 1.0};
    case SiteOp::Lower: return {0, bit ? 1.0 : 0.0};
    case SiteOp::Up: return {bit, bit ? 1.0 : 0.0};
    case SiteOp::Down: return {bit, bit ? 0.0 : 1.0};
  }
  return {bit, 0.0};
}

using Triplets = std::vector<Eigen::Triplet<Complex>>;

SparseMatrix from_triplets(Index dim, const Triplets& triplets) {
  SparseMatrix m(dim, dim);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

}  // namespace

SparseMatrix product_operator(int n_sites, std::span<const Factor> factors) {
  std::uint64_t seen = 0;
  for (const auto& f : factors) {
    if (f.site < 0 || f.site >= n_sites) throw SiteOutOfCluster("factor site " + std::to_string(f.site) + " out of range");
    if (seen & (std::uint64_t{1} << f.site)) throw std::invalid_argument("repeated site in operator product");
    seen |= std::uint64_t{1} << f.site;
  }
  const Index dim = Index{1} << n_sites;
  Triplets triplets;
  triplets.reserve(static_cast<std::size_t>(dim));
  for (Index s = 0; s < dim; ++s) {
    Index target = s;
    Complex amp = 1.0;
    for (const auto& f : factors) {
      const auto a = act(f.op, static_cast<int>((s >> f.site) & 1));
      amp *= a.amp;
      if (amp == Complex{0.0}) break;
      target = (target & ~(Index{1} << f.site)) | (Index{a.bit} << f.site);
    }
    if (amp != Complex{0.0}) triplets.emplace_back(target, s, amp);
  }
  return from_triplets(dim, triplets);
}

SparseMatrix site_operator(int n_sites, int site, SiteOp op) {
  const Factor f{site, op};
  return product_operator(n_sites, std::span<const Factor>(&f, 1));
}

SparseMatrix global_flip(int n_sites) {
  std::vector<Factor> factors;
  for (int i = 0; i < n_sites; ++i) factors.push_back({i, SiteOp::X});
  return product_operator(n_sites, factors);
}

std::pair<SparseMatrix, SparseMatrix> majority_projectors(const ClusterGeometry& geometry,
                                                          const std::array<SiteIndex, 3>& plaquette) {
  std::array<int, 3> sites{};
  for (int k = 0; k < 3; ++k) sites[k] = geometry.linear(plaquette[k]);
  if (sites[0] == sites[1] || sites[0] == sites[2] || sites[1] == sites[2]) {
    throw std::invalid_argument("plaquette sites must be distinct");
  }
  const int n = geometry.sites();
  const Index dim = geometry.dim();
  SparseMatrix identity(dim, dim);
  identity.setIdentity();
  SparseMatrix sum_z(dim, dim);
  for (int s : sites) sum_z += site_operator(n, s, SiteOp::Z);
  const std::array<Factor, 3> zzz{Factor{sites[0], SiteOp::Z}, Factor{sites[1], SiteOp::Z}, Factor{sites[2], SiteOp::Z}};
  const SparseMatrix prod_z = product_operator(n, zzz);
  SparseMatrix up = 0.25 * (2.0 * identity + sum_z - prod_z);
  SparseMatrix down = 0.25 * (2.0 * identity - sum_z + prod_z);
  up.prune(Complex{0.0});
  down.prune(Complex{0.0});
  return {up, down};
}

const char* to_string(Channel channel) {
  switch (channel) {
    case Channel::Nu: return "nu";
    case Channel::Mu: return "mu";
    case Channel::NuBar: return "nubar";
    case Channel::MuBar: return "mubar";
    case Channel::Dephasing: return "dephasing";
  }
  return "?";
}

const char* to_string(HamiltonianKind kind) {
  switch (kind) {
    case HamiltonianKind::None: return "none";
    case HamiltonianKind::XField: return "x_field";
    case HamiltonianKind::Pxp2d: return "pxp_2d";
    case HamiltonianKind::PxpNec: return "pxp_nec";
  }
  return "?";
}

const char* to_string(CouplingKind kind) {
  switch (kind) {
    case CouplingKind::HamiltonianField: return "hamiltonian_field";
    case CouplingKind::DissipativeRate: return "dissipative_rate";
    case CouplingKind::DissipativeBackaction: return "dissipative_backaction";
  }
  return "?";
}

namespace {

// NEC plaquette move: flip the vertex when the (East, North) configuration is
// enabled. Configuration index = s_E + 2 s_N with s = 1 for up.
struct FlipRule {
  SiteOp flip;
  std::uint8_t enabled;
  double rate;
  Channel channel;
};

std::array<FlipRule, 4> nec_rules(const NecRates& r) {
  return {{
      {SiteOp::Raise, std::uint8_t{1u << 3}, r.nu, Channel::Nu},                      // both legs up
      {SiteOp::Lower, std::uint8_t{1u << 0}, r.mu, Channel::Mu},                      // both legs down
      {SiteOp::Lower, std::uint8_t{(1u << 1) | (1u << 2) | (1u << 3)}, r.nubar, Channel::NuBar},  // some leg up
      {SiteOp::Raise, std::uint8_t{(1u << 0) | (1u << 1) | (1u << 2)}, r.mubar, Channel::MuBar},  // some leg down
  }};
}

// A plaquette leg is either resolved on the cluster basis (site >= 0) or
// pinned to a fixed spin of an outside configuration.
struct Leg {
  int site = -1;
  int fixed_bit = 0;
};

SparseMatrix conditioned_flip(const ClusterGeometry& g, std::optional<int> anchor, SiteOp flip,
                              const std::array<Leg, 2>& legs, std::uint8_t enabled) {
  const Index dim = g.dim();
  Triplets triplets;
  for (Index s = 0; s < dim; ++s) {
    int config = 0;
    for (int k = 0; k < 2; ++k) {
      const int bit = legs[k].site >= 0 ? static_cast<int>((s >> legs[k].site) & 1) : legs[k].fixed_bit;
      config |= bit << k;
    }
    if (!((enabled >> config) & 1)) continue;
    Index target = s;
    if (anchor) {
      const auto a = act(flip, static_cast<int>((s >> *anchor) & 1));
      if (a.amp == Complex{0.0}) continue;
      target = (s & ~(Index{1} << *anchor)) | (Index{a.bit} << *anchor);
    }
    triplets.emplace_back(target, s, 1.0);
  }
  return from_triplets(dim, triplets);
}

bool is_identity(const SparseMatrix& m) {
  if (m.nonZeros() != m.rows()) return false;
  for (Index k = 0; k < m.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
      if (it.row() != it.col() || it.value() != Complex{1.0}) return false;
    }
  }
  return true;
}

std::vector<Probe> make_probes(const ClusterGeometry& g, const std::map<Offset, std::vector<Factor>>& grouped) {
  std::vector<Probe> probes;
  for (const auto& [offset, factors] : grouped) {
    probes.push_back({offset, product_operator(g.sites(), factors)});
  }
  return probes;
}

// Every vertex whose plaquette (vertex, East, North) or PXP cross can touch
// the cluster lies within two sites of it.
template <typename Fn>
void for_each_nearby_anchor(const ClusterGeometry& g, Fn&& fn) {
  for (int y = -2; y < g.ell() + 2; ++y) {
    for (int x = -2; x < g.ell() + 2; ++x) fn(SiteIndex{x, y});
  }
}

}  // namespace

std::vector<JumpChannel> nec_jump_operators(const NecRates& rates, const ClusterGeometry& g) {
  std::vector<JumpChannel> out;
  for (int y = 0; y < g.ell(); ++y) {
    for (int x = 0; x < g.ell(); ++x) {
      const SiteIndex j{x, y};
      const SiteIndex east = j + kEast;
      const SiteIndex north = j + kNorth;
      if (!g.contains(east) || !g.contains(north)) continue;
      const std::array<Leg, 2> legs{Leg{g.linear(east)}, Leg{g.linear(north)}};
      for (const auto& rule : nec_rules(rates)) {
        out.push_back({conditioned_flip(g, g.linear(j), rule.flip, legs, rule.enabled), rule.rate, g.linear(j),
                       rule.channel});
      }
    }
  }
  return out;
}

std::vector<BoundaryCoupling> nec_boundary_couplings(const NecRates& rates, const ClusterGeometry& g) {
  std::vector<BoundaryCoupling> out;
  for_each_nearby_anchor(g, [&](SiteIndex j) {
    const std::array<SiteIndex, 2> leg_sites{j + kEast, j + kNorth};
    const bool anchor_in = g.contains(j);
    const bool east_in = g.contains(leg_sites[0]);
    const bool north_in = g.contains(leg_sites[1]);
    if (!anchor_in && !east_in && !north_in) return;
    if (anchor_in && east_in && north_in) return;

    std::vector<int> outside;
    for (int k = 0; k < 2; ++k) {
      if (!g.contains(leg_sites[k])) outside.push_back(k);
    }
    const int n_configs = 1 << outside.size();
    for (const auto& rule : nec_rules(rates)) {
      for (int a = 0; a < n_configs; ++a) {
        std::array<Leg, 2> legs{};
        std::map<Offset, std::vector<Factor>> grouped;
        for (int k = 0; k < 2; ++k) {
          if (g.contains(leg_sites[k])) legs[k].site = g.linear(leg_sites[k]);
        }
        for (std::size_t i = 0; i < outside.size(); ++i) {
          const int k = outside[i];
          const int bit = (a >> i) & 1;
          legs[k].fixed_bit = bit;
          grouped[g.owner(leg_sites[k])].push_back(
              {g.linear(g.local(leg_sites[k])), bit ? SiteOp::Up : SiteOp::Down});
        }
        std::optional<int> anchor;
        if (anchor_in) {
          anchor = g.linear(j);
        } else {
          // Tracing the vertex flip out leaves <L^dag L> on the vertex site.
          grouped[g.owner(j)].push_back(
              {g.linear(g.local(j)), rule.flip == SiteOp::Raise ? SiteOp::Down : SiteOp::Up});
        }
        SparseMatrix on_op = conditioned_flip(g, anchor, rule.flip, legs, rule.enabled);
        if (on_op.nonZeros() == 0) continue;
        if (!anchor_in && is_identity(on_op)) continue;  // D[identity] vanishes
        BoundaryCoupling c;
        c.kind = anchor_in ? CouplingKind::DissipativeRate : CouplingKind::DissipativeBackaction;
        c.on_op = std::move(on_op);
        c.probes = make_probes(g, grouped);
        c.base = rule.rate;
        c.anchor = j;
        c.channel = rule.channel;
        out.push_back(std::move(c));
      }
    }
  });
  return out;
}

namespace {

struct ProductTerm {
  double amplitude;
  std::vector<std::pair<SiteIndex, SiteOp>> factors;
};

std::vector<ProductTerm> hamiltonian_terms(const HamiltonianSpec& spec, SiteIndex j) {
  const SiteIndex west{j.x - 1, j.y};
  const SiteIndex south{j.x, j.y - 1};
  const SiteIndex east = j + kEast;
  const SiteIndex north = j + kNorth;
  switch (spec.kind) {
    case HamiltonianKind::None: return {};
    case HamiltonianKind::XField: return {{spec.omega, {{j, SiteOp::X}}}};
    case HamiltonianKind::PxpNec:
      return {{spec.omega1, {{north, SiteOp::Down}, {j, SiteOp::X}, {east, SiteOp::Down}}},
              {spec.omega2, {{north, SiteOp::Up}, {j, SiteOp::X}, {east, SiteOp::Up}}}};
    case HamiltonianKind::Pxp2d:
      return {{spec.omega1,
               {{west, SiteOp::Down}, {south, SiteOp::Down}, {j, SiteOp::X}, {east, SiteOp::Down}, {north, SiteOp::Down}}},
              {spec.omega2,
               {{west, SiteOp::Up}, {south, SiteOp::Up}, {j, SiteOp::X}, {east, SiteOp::Up}, {north, SiteOp::Up}}}};
  }
  return {};
}

}  // namespace

HamiltonianParts build_hamiltonian(const HamiltonianSpec& spec, const ClusterGeometry& g) {
  HamiltonianParts parts;
  parts.on_cluster = SparseMatrix(g.dim(), g.dim());
  for_each_nearby_anchor(g, [&](SiteIndex j) {
    for (const auto& term : hamiltonian_terms(spec, j)) {
      if (term.amplitude == 0.0) continue;
      std::vector<Factor> inside;
      std::map<Offset, std::vector<Factor>> grouped;
      for (const auto& [site, op] : term.factors) {
        if (g.contains(site)) {
          inside.push_back({g.linear(site), op});
        } else {
          grouped[g.owner(site)].push_back({g.linear(g.local(site)), op});
        }
      }
      if (inside.empty()) continue;
      SparseMatrix on_op = product_operator(g.sites(), inside);
      if (grouped.empty()) {
        parts.on_cluster += term.amplitude * on_op;
        continue;
      }
      BoundaryCoupling c;
      c.kind = CouplingKind::HamiltonianField;
      c.on_op = std::move(on_op);
      c.probes = make_probes(g, grouped);
      c.base = term.amplitude;
      c.anchor = j;
      parts.boundary.push_back(std::move(c));
    }
  });
  parts.on_cluster.prune(Complex{0.0});
  parts.on_cluster.makeCompressed();
  return parts;
}

std::vector<JumpChannel> dephasing_jumps(double gamma_x, const ClusterGeometry& g) {
  if (gamma_x < 0.0 || !std::isfinite(gamma_x)) throw RateOutOfRange("gamma_x must be nonnegative");
  std::vector<JumpChannel> out;
  if (gamma_x == 0.0) return out;
  for (int s = 0; s < g.sites(); ++s) {
    out.push_back({site_operator(g.sites(), s, SiteOp::X), gamma_x, s, Channel::Dephasing});
  }
  return out;
}

ClusterOperatorSet build_operator_set(const ClusterGeometry& g, const NecRates& rates,
                                      const HamiltonianSpec& hamiltonian) {
  ClusterOperatorSet set;
  set.geometry = g;
  auto parts = build_hamiltonian(hamiltonian, g);
  set.hamiltonian_on = std::move(parts.on_cluster);
  for (auto& c : parts.boundary) set.boundary.push_back(std::move(c));
  for (auto& ch : nec_jump_operators(rates, g)) {
    if (ch.rate > 0.0) set.jumps_on.push_back(std::move(ch));
  }
  for (auto& ch : dephasing_jumps(hamiltonian.gamma_x, g)) set.jumps_on.push_back(std::move(ch));
  for (auto& c : nec_boundary_couplings(rates, g)) {
    if (c.base > 0.0) set.boundary.push_back(std::move(c));
  }
  return set;
}

}  // namespace nec
