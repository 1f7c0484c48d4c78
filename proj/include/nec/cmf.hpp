#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "nec/lindblad.hpp"
#include "nec/observables.hpp"
#include "nec/operators.hpp"

namespace nec {

/// How a traced plaquette turns probe expectations c into a channel rate:
/// Trace gives base * prod(c), Factorized gives base * prod(c^2).
enum class Prescription { Trace, Factorized };

const char* to_string(Prescription p);
Prescription parse_prescription(std::string_view name);

/// Probe expectations of every boundary coupling: values[alpha][p] is the
/// expectation of probe p of coupling alpha on its neighbor cluster.
struct MeanFieldClosure {
  std::vector<std::vector<double>> values;
};

/// State of the cluster at a given offset, or nullptr when the neighbor does
/// not exist (open lattice edge). Couplings with a missing neighbor vanish.
using NeighborStates = std::function<const Matrix*(Offset)>;

MeanFieldClosure evaluate_closure(const ClusterOperatorSet& set, const NeighborStates& neighbors);

/// Translation-invariant closure: every neighbor is `state` itself.
MeanFieldClosure evaluate_closure(const ClusterOperatorSet& set, const Matrix& state);

/// True when every dissipative probe expectation lies in [-tol, 1 + tol].
bool closure_in_range(const ClusterOperatorSet& set, const MeanFieldClosure& closure, double tol = 1e-9);

/// Effective rate of a dissipative coupling. Throws NegativeRate below
/// -1e-9, clamps small negatives to zero.
double coupling_rate(const BoundaryCoupling& coupling, std::span<const double> scalars, Prescription prescription);

GeneratorSnapshot close_generator(const ClusterOperatorSet& set, const MeanFieldClosure& closure,
                                  Prescription prescription);

GeneratorSnapshot close_generator(const ClusterOperatorSet& set, const Matrix& state, Prescription prescription);

// ---------------------------------------------------------------------------
// States

/// Pure computational basis state; bit i of `up_mask` set means site i up.
Matrix basis_state(const ClusterGeometry& geometry, std::uint64_t up_mask);
Matrix all_up(const ClusterGeometry& geometry);
Matrix all_down(const ClusterGeometry& geometry);
Matrix maximally_mixed(const ClusterGeometry& geometry);

// ---------------------------------------------------------------------------
// Compiled closed flow

/// Operator with at most one nonzero per column, stored as (source, target,
/// amplitude) triples. Every operator of the NEC model has this form.
struct FlipEntry {
  int source;
  int target;
  Complex amp;
};
using FlipOp = std::vector<FlipEntry>;

/// Throws std::invalid_argument unless the matrix maps each basis state to at
/// most one basis state, injectively.
FlipOp to_flip(const SparseMatrix& m);

/// Fast evaluator of the closed CMF right-hand side. Probes shared between
/// couplings are evaluated once; `scalars` passed to evaluate() are indexed
/// by unique probe and must already refer to the right neighbor.
class CmfFlow {
 public:
  CmfFlow(const ClusterOperatorSet& set, Prescription prescription);

  Index dim() const { return dim_; }
  Prescription prescription() const { return prescription_; }
  std::size_t probe_count() const { return probes_.size(); }
  Offset probe_offset(std::size_t p) const { return probes_[p].offset; }

  /// tr(P rho) for every unique probe P, ignoring offsets.
  void probe_expectations(const Eigen::Ref<const Matrix>& rho, std::span<double> out) const;

  /// Closed rhs with the given probe scalars. NaN scalars switch their
  /// couplings off.
  void evaluate(const Eigen::Ref<const Matrix>& rho, std::span<const double> scalars, Eigen::Ref<Matrix> out) const;

  /// Translation-invariant rhs: probes evaluated on rho itself.
  void ti_rhs(const Matrix& rho, Matrix& out) const;

 private:
  struct UniqueProbe {
    Offset offset;
    FlipOp op;
  };
  struct Term {
    CouplingKind kind;
    FlipOp op;
    double base;
    std::vector<int> probes;
  };

  Index dim_;
  Prescription prescription_;
  SparseMatrix hamiltonian_;
  std::vector<std::pair<FlipOp, double>> jumps_;
  Eigen::VectorXd constant_decay_;
  std::vector<UniqueProbe> probes_;
  std::vector<Term> terms_;
};

SteadyStateResult ti_evolve(const ClusterOperatorSet& set, const Matrix& initial, Prescription prescription,
                            const SteadyStateOptions& options = {}, const Observer& observer = {});

}  // namespace nec
