#include <doctest.h>

#include <algorithm>

#include "nec/cmf.hpp"
#include "nec/errors.hpp"
#include "nec/observables.hpp"
#include "nec/sweep.hpp"
#include "support.hpp"

using namespace nec;

namespace {

const BoundaryCoupling& find_coupling(const ClusterOperatorSet& set, SiteIndex anchor, Channel channel,
                                      std::size_t probes) {
  for (const auto& c : set.boundary) {
    if (c.kind == CouplingKind::DissipativeRate && c.anchor == anchor && c.channel == channel &&
        c.probes.size() == probes) {
      return c;
    }
  }
  throw std::runtime_error("coupling not found");
}

std::size_t index_of(const ClusterOperatorSet& set, const BoundaryCoupling& c) {
  return static_cast<std::size_t>(&c - set.boundary.data());
}

SteadyStateResult solve(const ModelConfig& model, double T, double h, const Matrix& seed) {
  return ti_evolve(operator_set_at(model, T, h), seed, model.prescription, model.steady);
}

}  // namespace

TEST_CASE("closure scalars of saturated and mixed states") {
  ModelConfig model;
  const auto set = operator_set_at(model, 0.1, 0.1);
  const auto rates = build_rates(1.0, 0.1, 0.1);
  const ClusterGeometry& g = set.geometry;

  // Edge vertex (1,0): East leg outside, North leg inside.
  const auto& edge = find_coupling(set, {1, 0}, Channel::Nu, 1);
  const auto& corner = find_coupling(set, {1, 1}, Channel::Nu, 2);

  const auto up = evaluate_closure(set, all_up(g));
  CHECK(up.values[index_of(set, edge)][0] == doctest::Approx(1.0));
  CHECK(coupling_rate(edge, up.values[index_of(set, edge)], Prescription::Trace) == doctest::Approx(rates.nu));

  const auto down = evaluate_closure(set, all_down(g));
  CHECK(coupling_rate(edge, down.values[index_of(set, edge)], Prescription::Trace) == 0.0);

  const auto mixed = evaluate_closure(set, maximally_mixed(g));
  const auto& c = mixed.values[index_of(set, corner)];
  CHECK(c[0] == doctest::Approx(0.5));
  CHECK(c[1] == doctest::Approx(0.5));
  CHECK(coupling_rate(corner, c, Prescription::Trace) == doctest::Approx(rates.nu / 4));
  CHECK(coupling_rate(corner, c, Prescription::Factorized) == doctest::Approx(rates.nu / 16));

  for (const auto& state : {all_up(g), all_down(g), maximally_mixed(g)}) {
    CHECK(closure_in_range(set, evaluate_closure(set, state)));
  }
}

TEST_CASE("a negative projector expectation is rejected") {
  ModelConfig model;
  const auto set = operator_set_at(model, 0.1, 0.1);
  const auto& edge = find_coupling(set, {1, 0}, Channel::Nu, 1);
  const double bad[] = {-0.01};
  CHECK_THROWS_AS(coupling_rate(edge, bad, Prescription::Trace), NegativeRate);
  CHECK_THROWS_AS(coupling_rate(edge, bad, Prescription::Factorized), NegativeRate);
  const double tiny[] = {-1e-12};
  CHECK(coupling_rate(edge, tiny, Prescription::Trace) == 0.0);
}

TEST_CASE("missing neighbors switch their couplings off") {
  ModelConfig model;
  const auto set = operator_set_at(model, 0.2, 0.0);
  const Matrix rho = maximally_mixed(set.geometry);
  const auto closure = evaluate_closure(set, [](Offset) -> const Matrix* { return nullptr; });
  const auto open = close_generator(set, closure, Prescription::Trace);
  CHECK(open.channels().size() == set.jumps_on.size());
  CHECK((Matrix(open.hamiltonian()) - Matrix(set.hamiltonian_on)).norm() == 0.0);
}

TEST_CASE("compiled flow matches the closed generator") {
  std::mt19937 rng(21);
  for (const auto& spec : {HamiltonianSpec::pxp_nec(0.3), HamiltonianSpec::pxp_2d(0.2), HamiltonianSpec::x_field(0.4)}) {
    for (auto p : {Prescription::Trace, Prescription::Factorized}) {
      for (int ell : {1, 2}) {
        CAPTURE(to_string(spec.kind));
        CAPTURE(ell);
        ModelConfig model;
        model.ell = ell;
        model.hamiltonian = spec;
        model.hamiltonian.gamma_x = 0.05;
        const auto set = operator_set_at(model, 0.3, 0.2);
        const CmfFlow flow(set, p);
        const Matrix rho = test::random_density(set.geometry.dim(), rng);
        Matrix fast;
        flow.ti_rhs(rho, fast);
        const Matrix slow = rhs(rho, close_generator(set, rho, p));
        CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }
}

TEST_CASE("magnetization") {
  const ClusterGeometry g(2);
  CHECK(magnetization(all_up(g)) == 1.0);
  CHECK(magnetization(all_down(g)) == -1.0);
  CHECK(magnetization(maximally_mixed(g)) == 0.0);
  std::mt19937 rng(22);
  const Matrix rho = test::random_density(16, rng);
  double avg = 0.0;
  for (int s = 0; s < 4; ++s) avg += site_magnetization(rho, s) / 4;
  CHECK(avg == doctest::Approx(magnetization(rho)));
}

TEST_CASE("dark state survives the closure") {
  ModelConfig model;
  model.hamiltonian = HamiltonianSpec::none();
  const auto set = operator_set_at(model, 0.0, 0.0);
  const auto res = ti_evolve(set, all_up(set.geometry), Prescription::Trace);
  CHECK(res.converged);
  CHECK(magnetization(res.state) == 1.0);
}

TEST_CASE("bistability at low noise, a unique state at high noise") {
  ModelConfig model;
  const ClusterGeometry g(2);
  const auto up = solve(model, 0.1, 0.0, all_up(g));
  const auto down = solve(model, 0.1, 0.0, all_down(g));
  REQUIRE(up.converged);
  REQUIRE(down.converged);
  CHECK(magnetization(up.state) - magnetization(down.state) > 0.5);

  const auto hot_up = solve(model, 0.3, 0.0, all_up(g));
  const auto hot_down = solve(model, 0.3, 0.0, all_down(g));
  CHECK(std::abs(magnetization(hot_up.state) - magnetization(hot_down.state)) < 1e-4);
}

TEST_CASE("an equal mixture of the two steady states is not stationary") {
  ModelConfig model;
  const auto set = operator_set_at(model, 0.1, 0.0);
  const ClusterGeometry& g = set.geometry;
  const auto up = ti_evolve(set, all_up(g), model.prescription);
  const auto down = ti_evolve(set, all_down(g), model.prescription);
  const Matrix mix = 0.5 * (up.state + down.state);
  const CmfFlow flow(set, model.prescription);
  Matrix d;
  flow.ti_rhs(mix, d);
  CHECK(d.norm() > 1e-3);

  // Break the h = 0 symmetry slightly so the flow leaves the symmetric saddle.
  const auto res = ti_evolve(set, 0.99 * mix + 0.01 * all_up(g), model.prescription);
  REQUIRE(res.converged);
  const double m = magnetization(res.state);
  CHECK(std::min(std::abs(m - magnetization(up.state)), std::abs(m - magnetization(down.state))) < 1e-5);
}

TEST_CASE("spin-flip duality of steady states") {
  for (auto p : {Prescription::Trace, Prescription::Factorized}) {
    ModelConfig model;
    model.prescription = p;
    const ClusterGeometry g(2);
    const auto a = solve(model, 0.15, 0.3, all_up(g));
    const auto b = solve(model, 0.15, -0.3, all_down(g));
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    CHECK(magnetization(a.state) == doctest::Approx(-magnetization(b.state)).epsilon(1e-6));
    const Matrix x(global_flip(4));
    CHECK((x * a.state * x - b.state).norm() < 1e-5);
  }
}

TEST_CASE("dissipative closure scalars stay in [0, 1] along a trajectory") {
  ModelConfig model;
  model.hamiltonian = HamiltonianSpec::pxp_nec(0.4);
  const auto set = operator_set_at(model, 0.2, 0.1);
  std::mt19937 rng(23);
  bool in_range = true;
  int calls = 0;
  ti_evolve(set, test::random_density(16, rng), model.prescription, model.steady, [&](double, const Matrix& rho) {
    in_range = in_range && closure_in_range(set, evaluate_closure(set, rho));
    ++calls;
  });
  CHECK(calls > 10);
  CHECK(in_range);
}

TEST_CASE("prescription names") {
  CHECK(parse_prescription("trace") == Prescription::Trace);
  CHECK(parse_prescription("factorized") == Prescription::Factorized);
  CHECK(std::string(to_string(Prescription::Factorized)) == "factorized");
  CHECK_THROWS_AS(parse_prescription("linear"), std::invalid_argument);
}
