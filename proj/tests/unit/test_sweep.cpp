#include <doctest.h>

#include <sstream>

#include "nec/errors.hpp"
#include "nec/sweep.hpp"

using namespace nec;

namespace {

// Diagram whose bistable cells are exactly T < Tc(h) for the given constants.
PhaseDiagram synthetic_diagram(double R, double T_star, std::vector<double> T_grid, double dh) {
  PhaseDiagram d;
  d.T = std::move(T_grid);
  d.h = h_grid(dh);
  for (double T : d.T) {
    HysteresisResult row;
    row.T = T;
    row.h = d.h;
    for (double h : d.h) {
      const double tc = R * R * (1 - std::abs(h)) * (1 - std::abs(h)) + T_star;
      const double dm = T < tc ? 1.0 : 0.0;
      row.m_forward.push_back(-dm / 2);
      row.m_backward.push_back(dm / 2);
      row.dm.push_back(dm);
      row.converged.push_back(true);
    }
    d.rows.push_back(std::move(row));
  }
  return d;
}

}  // namespace

TEST_CASE("h grid") {
  const auto g = h_grid(0.1);
  REQUIRE(g.size() == 21);
  CHECK(g.front() == -1.0);
  CHECK(g.back() == 1.0);
  CHECK(g[10] == 0.0);
  CHECK(h_grid(0.5).size() == 5);
  CHECK_THROWS_AS(h_grid(0.3), std::invalid_argument);
  CHECK_THROWS_AS(h_grid(0.0), std::invalid_argument);
}

TEST_CASE("critical line fit recovers exact constants") {
  std::vector<BoundaryPoint> points;
  for (double h : {0.0, 0.2, -0.3, 0.5, 0.7, -0.9}) {
    points.push_back({h, 0.41 * 0.41 * (1 - std::abs(h)) * (1 - std::abs(h)) + 0.08});
  }
  const auto fit = fit_boundary(points);
  CHECK(fit.R == doctest::Approx(0.41).epsilon(1e-9));
  CHECK(fit.T_star == doctest::Approx(0.08).epsilon(1e-9));
  CHECK(fit.residual < 1e-12);
  CHECK(fit.Tc(0.0) == doctest::Approx(0.41 * 0.41 + 0.08));
  CHECK(fit.points == points.size());

  points.resize(3);
  CHECK_THROWS_AS(fit_boundary(points), InsufficientBoundary);
}

TEST_CASE("boundary detection on a synthetic diagram") {
  std::vector<double> T;
  for (int i = 1; i <= 40; ++i) T.push_back(0.01 * i);
  const auto d = synthetic_diagram(0.4, 0.08, T, 0.1);
  const auto points = detect_boundary(d);
  // |h| = 1 has Tc = T* = 0.08 and still crosses inside the grid.
  CHECK(points.size() == 21);
  for (const auto& p : points) {
    const double tc = 0.16 * (1 - std::abs(p.h)) * (1 - std::abs(p.h)) + 0.08;
    CHECK(std::abs(p.T - tc) <= 0.01);
  }
  const auto fit = fit_boundary(points);
  CHECK(fit.T_star == doctest::Approx(0.08).epsilon(0.1));
  CHECK(fit.R == doctest::Approx(0.4).epsilon(0.05));
}

TEST_CASE("transition classifier") {
  const std::vector<double> T{0.1, 0.2, 0.3, 0.4};
  const std::vector<double> sqrt_like{1.0, 0.5, 0.08, 0.0};
  const std::vector<double> jump{1.0, 0.9, 0.8, 0.0};
  const std::vector<double> normal{0.0, 0.0, 0.0, 0.0};
  const std::vector<double> ambiguous{1.0, 0.6, 0.2, 0.0};
  const std::vector<double> everywhere{1.0, 1.0, 1.0, 1.0};
  CHECK(classify_transition(T, sqrt_like) == TransitionOrder::Continuous);
  CHECK(classify_transition(T, jump) == TransitionOrder::FirstOrder);
  CHECK_THROWS_AS(classify_transition(T, normal), Unclassified);
  CHECK_THROWS_AS(classify_transition(T, ambiguous), Unclassified);
  CHECK_THROWS_AS(classify_transition(T, everywhere), Unclassified);
}

TEST_CASE("hysteresis in the normal phase has coinciding branches") {
  ModelConfig model;
  const auto r = hysteresis(model, 0.3, 0.2);
  REQUIRE(r.h.size() == 11);
  for (std::size_t i = 0; i < r.h.size(); ++i) {
    CHECK(r.converged[i]);
    CHECK(r.dm[i] < 1e-4);
    CHECK(r.dm[i] >= 0.0);
  }
}

TEST_CASE("hysteresis in the bistable phase") {
  ModelConfig model;
  const auto r = hysteresis(model, 0.1, 0.1);
  for (std::size_t i = 0; i < r.h.size(); ++i) {
    CAPTURE(r.h[i]);
    if (std::abs(r.h[i]) <= 0.5 + 1e-9) CHECK(r.dm[i] > kBistableThreshold);
    if (std::abs(r.h[i]) >= 0.8 - 1e-9) CHECK(r.dm[i] < kBistableThreshold);
    // Spin-flip duality of the order parameter.
    CHECK(std::abs(r.dm[i] - r.dm[r.h.size() - 1 - i]) < 1e-3);
    CHECK(r.dm[i] == doctest::Approx(std::abs(r.m_forward[i] - r.m_backward[i])));
  }
}

TEST_CASE("phase CSV layout") {
  ModelConfig model;
  const auto d = synthetic_diagram(0.4, 0.15, {0.1, 0.2}, 0.5);
  std::ostringstream out;
  write_phase_csv(out, model, d);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "model,ell,omega,T,h,mz_fwd,mz_bwd,dmz,converged");
  std::getline(in, line);
  CHECK(line == "pxp_nec,2,0.1,0.1,-1,-0.5,0.5,1,1");
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 10);
}
