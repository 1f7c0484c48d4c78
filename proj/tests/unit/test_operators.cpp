#include <doctest.h>

#include <algorithm>

#include "nec/cmf.hpp"
#include "nec/errors.hpp"
#include "nec/operators.hpp"
#include "support.hpp"

using namespace nec;

namespace {

double diff(const SparseMatrix& a, const SparseMatrix& b) { return (Matrix(a) - Matrix(b)).cwiseAbs().maxCoeff(); }

SparseMatrix conj_by(const SparseMatrix& x, const SparseMatrix& m) { return x * m * x; }

}  // namespace

TEST_CASE("build_rates inverts the noise amplitude and bias") {
  const auto r = build_rates(1.0, 0.1, 0.1);
  CHECK(r.nubar == doctest::Approx(0.055).epsilon(1e-14));
  CHECK(r.mubar == doctest::Approx(0.045).epsilon(1e-14));
  CHECK(r.nu == doctest::Approx(0.945).epsilon(1e-14));
  CHECK(r.mu == doctest::Approx(0.955).epsilon(1e-14));
  CHECK(r.nu + r.nubar == doctest::Approx(r.mu + r.mubar));

  const auto zero = build_rates(1.0, 0.0, 0.3);
  CHECK(zero.nubar == 0.0);
  CHECK(zero.mubar == 0.0);
  CHECK(zero.nu == 1.0);
  CHECK(zero.mu == 1.0);

  CHECK_THROWS_AS(build_rates(1.0, 2.0, 0.5), RateOutOfRange);
  CHECK_THROWS_AS(build_rates(1.0, -0.1, 0.0), RateOutOfRange);
}

TEST_CASE("majority projectors are complete orthogonal projectors") {
  for (int ell : {2, 3}) {
    const ClusterGeometry g(ell);
    const Matrix id = Matrix::Identity(g.dim(), g.dim());
    for (int y = 0; y + 1 < ell; ++y) {
      for (int x = 0; x + 1 < ell; ++x) {
        const SiteIndex j{x, y};
        const auto [up, dn] = majority_projectors(g, {j, j + kEast, j + kNorth});
        const Matrix pu(up), pd(dn);
        CHECK((pu + pd - id).norm() < 1e-12);
        CHECK((pu * pu - pu).norm() < 1e-12);
        CHECK((pd * pd - pd).norm() < 1e-12);
        CHECK((pu * pd).norm() < 1e-12);
        CHECK((pu - pu.adjoint()).norm() < 1e-12);
      }
    }
  }
  CHECK_THROWS_AS(majority_projectors(ClusterGeometry(2), {SiteIndex{1, 1}, SiteIndex{2, 1}, SiteIndex{1, 2}}),
                  SiteOutOfCluster);
}

TEST_CASE("majority projector examples") {
  const ClusterGeometry g(2);
  const auto [up, dn] = majority_projectors(g, {SiteIndex{0, 0}, kEast, kNorth});
  const Matrix pu(up);
  // sites 0 and 1 up, site 2 down, site 3 down: majority up
  Vector s = Vector::Zero(16);
  s(0b0011) = 1.0;
  CHECK((pu * s - s).norm() < 1e-15);
  Vector none = Vector::Zero(16);
  none(0) = 1.0;
  CHECK((pu * none).norm() < 1e-15);
  CHECK(std::real((pu * maximally_mixed(g)).trace()) == doctest::Approx(0.5));
}

TEST_CASE("reduced jump forms equal the literal three-site forms") {
  const auto rates = build_rates(1.0, 0.3, 0.2);
  for (int ell : {2, 3}) {
    const ClusterGeometry g(ell);
    const auto jumps = nec_jump_operators(rates, g);
    CHECK(jumps.size() == static_cast<std::size_t>(4 * (ell - 1) * (ell - 1)));
    for (const auto& ch : jumps) {
      const SiteIndex j = g.site(ch.site);
      const auto [up, dn] = majority_projectors(g, {j, j + kEast, j + kNorth});
      const SparseMatrix raise = site_operator(g.sites(), ch.site, SiteOp::Raise);
      const SparseMatrix lower = site_operator(g.sites(), ch.site, SiteOp::Lower);
      SparseMatrix literal;
      switch (ch.channel) {
        case Channel::Nu: literal = raise * up; break;
        case Channel::Mu: literal = lower * dn; break;
        case Channel::NuBar: literal = lower * up; break;
        case Channel::MuBar: literal = raise * dn; break;
        case Channel::Dephasing: FAIL("unexpected channel"); break;
      }
      CHECK(diff(ch.op, literal) < 1e-12);
    }
  }
}

TEST_CASE("nu jump acts on the plaquette basis as expected") {
  const auto rates = build_rates(1.0, 0.1, 0.0);
  const ClusterGeometry g(2);
  const auto jumps = nec_jump_operators(rates, g);
  const auto nu = std::find_if(jumps.begin(), jumps.end(), [](const JumpChannel& c) { return c.channel == Channel::Nu; });
  REQUIRE(nu != jumps.end());
  const Matrix l(nu->scaled());
  Vector in = Vector::Zero(16);
  in(0b0110) = 1.0;  // j down, East and North up
  Vector want = Vector::Zero(16);
  want(0b0111) = std::sqrt(rates.nu);
  CHECK((l * in - want).norm() < 1e-14);
  Vector blocked = Vector::Zero(16);
  blocked(0b0100) = 1.0;  // j and East down, North up
  CHECK((l * blocked).norm() < 1e-14);
}

TEST_CASE("every jump and boundary operator has at most one entry per column") {
  const auto set = build_operator_set(ClusterGeometry(2), build_rates(1.0, 0.2, 0.1), HamiltonianSpec::pxp_nec(0.1));
  for (const auto& ch : set.jumps_on) CHECK_NOTHROW(to_flip(ch.op));
  for (const auto& c : set.boundary) {
    if (c.kind != CouplingKind::HamiltonianField) CHECK_NOTHROW(to_flip(c.on_op));
    for (const auto& p : c.probes) CHECK_NOTHROW(to_flip(p.op));
  }
}

TEST_CASE("global spin flip maps the channel set at h to the one at -h") {
  for (const auto& spec : {HamiltonianSpec::pxp_nec(0.1), HamiltonianSpec::pxp_2d(0.2), HamiltonianSpec::x_field(0.3)}) {
    CAPTURE(to_string(spec.kind));
    const ClusterGeometry g(2);
    const auto a = build_operator_set(g, build_rates(1.0, 0.3, 0.4), spec);
    const auto b = build_operator_set(g, build_rates(1.0, 0.3, -0.4), spec);
    const SparseMatrix x = global_flip(g.sites());

    CHECK(diff(conj_by(x, a.hamiltonian_on), b.hamiltonian_on) < 1e-12);

    REQUIRE(a.jumps_on.size() == b.jumps_on.size());
    for (const auto& ch : a.jumps_on) {
      const SparseMatrix flipped = conj_by(x, ch.op);
      const bool found = std::any_of(b.jumps_on.begin(), b.jumps_on.end(), [&](const JumpChannel& other) {
        return other.site == ch.site && std::abs(other.rate - ch.rate) < 1e-14 && diff(other.op, flipped) < 1e-12;
      });
      CHECK(found);
    }

    REQUIRE(a.boundary.size() == b.boundary.size());
    for (const auto& c : a.boundary) {
      const SparseMatrix on = conj_by(x, c.on_op);
      const bool found = std::any_of(b.boundary.begin(), b.boundary.end(), [&](const BoundaryCoupling& other) {
        if (other.kind != c.kind || std::abs(other.base - c.base) > 1e-14 || diff(other.on_op, on) > 1e-12) return false;
        if (other.probes.size() != c.probes.size()) return false;
        for (std::size_t p = 0; p < c.probes.size(); ++p) {
          if (!(other.probes[p].offset == c.probes[p].offset)) return false;
          if (diff(other.probes[p].op, conj_by(x, c.probes[p].op)) > 1e-12) return false;
        }
        return true;
      });
      CHECK(found);
    }
  }
}

TEST_CASE("Hamiltonian construction") {
  SUBCASE("x field on one site") {
    const auto parts = build_hamiltonian(HamiltonianSpec::x_field(0.7), ClusterGeometry(1));
    CHECK(parts.boundary.empty());
    CHECK(diff(parts.on_cluster, 0.7 * site_operator(1, 0, SiteOp::X)) < 1e-15);
  }
  SUBCASE("pxp_nec at ell = 2") {
    const ClusterGeometry g(2);
    const auto parts = build_hamiltonian(HamiltonianSpec::pxp_nec(0.1), g);
    CHECK((Matrix(parts.on_cluster) - Matrix(parts.on_cluster).adjoint()).norm() < 1e-15);

    // The (0,0) blockade term lies fully inside the cluster.
    const Factor inside[] = {{2, SiteOp::Down}, {0, SiteOp::X}, {1, SiteOp::Down}};
    const SparseMatrix term = product_operator(4, inside);
    CHECK(std::none_of(parts.boundary.begin(), parts.boundary.end(),
                       [](const BoundaryCoupling& c) { return c.anchor == SiteIndex{0, 0}; }));
    CHECK(std::abs(std::real((Matrix(parts.on_cluster).adjoint() * Matrix(term)).trace())) > 0.0);

    // The (1,1) terms have both legs outside: one coupling per term, each
    // probing the East and North neighbors.
    std::vector<const BoundaryCoupling*> corner;
    for (const auto& c : parts.boundary) {
      if (c.anchor == SiteIndex{1, 1}) corner.push_back(&c);
    }
    REQUIRE(corner.size() == 2);
    for (const auto* c : corner) {
      CHECK(c->kind == CouplingKind::HamiltonianField);
      REQUIRE(c->probes.size() == 2);
      CHECK(c->probes[0].offset == Offset{0, 1});
      CHECK(c->probes[1].offset == Offset{1, 0});
      CHECK(diff(c->on_op, site_operator(4, 3, SiteOp::X)) < 1e-15);
    }
    const bool blockade = diff(corner[0]->probes[0].op, site_operator(4, 1, SiteOp::Down)) < 1e-15 ||
                          diff(corner[1]->probes[0].op, site_operator(4, 1, SiteOp::Down)) < 1e-15;
    CHECK(blockade);
  }
}

TEST_CASE("dephasing jumps") {
  CHECK(dephasing_jumps(0.0, ClusterGeometry(2)).empty());
  const auto jumps = dephasing_jumps(0.1, ClusterGeometry(2));
  REQUIRE(jumps.size() == 4);
  for (const auto& ch : jumps) {
    const Matrix l(ch.scaled());
    CHECK((l - l.adjoint()).norm() < 1e-15);
    CHECK((l * l - 0.1 * Matrix::Identity(16, 16)).norm() < 1e-14);
  }
}

TEST_CASE("cluster geometry ownership") {
  const ClusterGeometry g(2);
  CHECK(g.owner({-1, 0}) == Offset{-1, 0});
  CHECK(g.owner({2, 3}) == Offset{1, 1});
  CHECK(g.local({-1, 3}) == SiteIndex{1, 1});
  CHECK(g.linear({1, 1}) == 3);
  CHECK_THROWS_AS(g.linear({2, 0}), SiteOutOfCluster);
}
