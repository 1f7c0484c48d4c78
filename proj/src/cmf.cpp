#include "nec/cmf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "nec/errors.hpp"

namespace nec {

const char* to_string(Prescription p) { return p == Prescription::Trace ? "trace" : "factorized"; }

Prescription parse_prescription(std::string_view name) {
  if (name == "trace") return Prescription::Trace;
  if (name == "factorized") return Prescription::Factorized;
  throw std::invalid_argument("unknown boundary prescription '" + std::string(name) + "'");
}

namespace {

double expectation(const SparseMatrix& op, const Matrix& rho) {
  // tr(op rho) = sum_{ij} op_ij rho_ji
  double acc = 0.0;
  for (Index k = 0; k < op.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(op, k); it; ++it) acc += std::real(it.value() * rho(it.col(), it.row()));
  }
  return acc;
}

bool is_dissipative(CouplingKind kind) { return kind != CouplingKind::HamiltonianField; }

}  // namespace

MeanFieldClosure evaluate_closure(const ClusterOperatorSet& set, const NeighborStates& neighbors) {
  MeanFieldClosure closure;
  closure.values.reserve(set.boundary.size());
  for (const auto& c : set.boundary) {
    std::vector<double> values;
    values.reserve(c.probes.size());
    for (const auto& p : c.probes) {
      const Matrix* state = neighbors(p.offset);
      values.push_back(state ? expectation(p.op, *state) : std::numeric_limits<double>::quiet_NaN());
    }
    closure.values.push_back(std::move(values));
  }
  return closure;
}

MeanFieldClosure evaluate_closure(const ClusterOperatorSet& set, const Matrix& state) {
  return evaluate_closure(set, [&state](Offset) { return &state; });
}

bool closure_in_range(const ClusterOperatorSet& set, const MeanFieldClosure& closure, double tol) {
  for (std::size_t a = 0; a < set.boundary.size(); ++a) {
    if (!is_dissipative(set.boundary[a].kind)) continue;
    for (double v : closure.values[a]) {
      if (std::isnan(v)) continue;
      if (v < -tol || v > 1.0 + tol) return false;
    }
  }
  return true;
}

namespace {

double rate_from_product(double base, double product) {
  const double rate = base * product;
  if (rate < -1e-9) throw NegativeRate("derived channel rate " + std::to_string(rate) + " is negative");
  return std::max(rate, 0.0);
}

}  // namespace

double coupling_rate(const BoundaryCoupling& coupling, std::span<const double> scalars, Prescription prescription) {
  double product = 1.0;
  for (double c : scalars) {
    product *= prescription == Prescription::Trace ? c : c * c;
    if (prescription == Prescription::Factorized && c < -1e-9) {
      throw NegativeRate("probe expectation " + std::to_string(c) + " is negative");
    }
  }
  return rate_from_product(coupling.base, product);
}

GeneratorSnapshot close_generator(const ClusterOperatorSet& set, const MeanFieldClosure& closure,
                                  Prescription prescription) {
  SparseMatrix hamiltonian = set.hamiltonian_on;
  std::vector<RatedJump> channels;
  channels.reserve(set.jumps_on.size() + set.boundary.size());
  for (const auto& ch : set.jumps_on) channels.push_back({ch.op, ch.rate});
  for (std::size_t a = 0; a < set.boundary.size(); ++a) {
    const auto& c = set.boundary[a];
    const auto& values = closure.values[a];
    if (std::any_of(values.begin(), values.end(), [](double v) { return std::isnan(v); })) continue;
    if (c.kind == CouplingKind::HamiltonianField) {
      double product = c.base;
      for (double v : values) product *= v;
      hamiltonian += product * c.on_op;
    } else {
      channels.push_back({c.on_op, coupling_rate(c, values, prescription)});
    }
  }
  return GeneratorSnapshot(std::move(hamiltonian), std::move(channels));
}

GeneratorSnapshot close_generator(const ClusterOperatorSet& set, const Matrix& state, Prescription prescription) {
  return close_generator(set, evaluate_closure(set, state), prescription);
}

Matrix basis_state(const ClusterGeometry& g, std::uint64_t up_mask) {
  Matrix rho = Matrix::Zero(g.dim(), g.dim());
  const Index s = static_cast<Index>(up_mask) & (g.dim() - 1);
  rho(s, s) = 1.0;
  return rho;
}

Matrix all_up(const ClusterGeometry& g) { return basis_state(g, static_cast<std::uint64_t>(g.dim() - 1)); }
Matrix all_down(const ClusterGeometry& g) { return basis_state(g, 0); }

Matrix maximally_mixed(const ClusterGeometry& g) {
  return Matrix::Identity(g.dim(), g.dim()) / static_cast<double>(g.dim());
}

// ---------------------------------------------------------------------------

FlipOp to_flip(const SparseMatrix& m) {
  FlipOp op;
  std::vector<char> hit(static_cast<std::size_t>(m.rows()), 0);
  for (Index col = 0; col < m.outerSize(); ++col) {
    int count = 0;
    for (SparseMatrix::InnerIterator it(m, col); it; ++it) {
      if (it.value() == Complex{0.0}) continue;
      if (++count > 1) throw std::invalid_argument("operator has more than one entry in a column");
      if (hit[static_cast<std::size_t>(it.row())]++) throw std::invalid_argument("operator is not injective");
      op.push_back({static_cast<int>(col), static_cast<int>(it.row()), it.value()});
    }
  }
  return op;
}

namespace {

bool same_flip(const FlipOp& a, const FlipOp& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a[k].source != b[k].source || a[k].target != b[k].target || a[k].amp != b[k].amp) return false;
  }
  return true;
}

// out += rate * L rho L^dag for a flip operator L.
void add_sandwich(const FlipOp& op, double rate, const Complex* rho, Complex* out, Index dim) {
  for (const auto& eu : op) {
    const Complex cu = rate * std::conj(eu.amp);
    const Complex* rho_col = rho + static_cast<Index>(eu.source) * dim;
    Complex* out_col = out + static_cast<Index>(eu.target) * dim;
    for (const auto& es : op) out_col[es.target] += es.amp * cu * rho_col[es.source];
  }
}

// out += -i coef [F, rho] for a Hermitian flip operator F.
void add_commutator(const FlipOp& op, double coef, const Complex* rho, Complex* out, Index dim) {
  const Complex minus_i_coef{0.0, -coef};
  // F rho: row t of the product gathers row s of rho.
  for (Index u = 0; u < dim; ++u) {
    const Complex* rho_col = rho + u * dim;
    Complex* out_col = out + u * dim;
    for (const auto& e : op) out_col[e.target] += minus_i_coef * e.amp * rho_col[e.source];
  }
  // rho F: column s of the product is a * (column t of rho).
  for (const auto& e : op) {
    const Complex w = -minus_i_coef * e.amp;
    const Complex* rho_col = rho + static_cast<Index>(e.target) * dim;
    Complex* out_col = out + static_cast<Index>(e.source) * dim;
    for (Index r = 0; r < dim; ++r) out_col[r] += w * rho_col[r];
  }
}

void add_decay(const FlipOp& op, double rate, Eigen::VectorXd& decay) {
  for (const auto& e : op) decay[e.source] += rate * std::norm(e.amp);
}

}  // namespace

CmfFlow::CmfFlow(const ClusterOperatorSet& set, Prescription prescription)
    : dim_(set.geometry.dim()), prescription_(prescription), hamiltonian_(set.hamiltonian_on) {
  constant_decay_ = Eigen::VectorXd::Zero(dim_);
  for (const auto& ch : set.jumps_on) {
    if (ch.rate == 0.0) continue;
    jumps_.emplace_back(to_flip(ch.op), ch.rate);
    add_decay(jumps_.back().first, ch.rate, constant_decay_);
  }
  for (const auto& c : set.boundary) {
    Term term{c.kind, to_flip(c.on_op), c.base, {}};
    for (const auto& p : c.probes) {
      FlipOp op = to_flip(p.op);
      auto it = std::find_if(probes_.begin(), probes_.end(),
                             [&](const UniqueProbe& u) { return u.offset == p.offset && same_flip(u.op, op); });
      if (it == probes_.end()) {
        probes_.push_back({p.offset, std::move(op)});
        it = probes_.end() - 1;
      }
      term.probes.push_back(static_cast<int>(it - probes_.begin()));
    }
    terms_.push_back(std::move(term));
  }
}

void CmfFlow::probe_expectations(const Eigen::Ref<const Matrix>& rho, std::span<double> out) const {
  for (std::size_t p = 0; p < probes_.size(); ++p) {
    double acc = 0.0;
    for (const auto& e : probes_[p].op) acc += std::real(e.amp * rho(e.source, e.target));
    out[p] = acc;
  }
}

void CmfFlow::evaluate(const Eigen::Ref<const Matrix>& rho, std::span<const double> scalars,
                       Eigen::Ref<Matrix> out) const {
  const Index dim = dim_;
  out.noalias() = -kI * (hamiltonian_ * rho);
  out.noalias() += kI * (rho * hamiltonian_);

  Matrix dense_rho = rho;  // contiguous column-major copy for raw access
  const Complex* r = dense_rho.data();
  Matrix acc = out;
  Complex* o = acc.data();

  Eigen::VectorXd decay = constant_decay_;
  for (const auto& [op, rate] : jumps_) add_sandwich(op, rate, r, o, dim);

  for (const auto& term : terms_) {
    double product = 1.0;
    bool missing = false;
    for (int p : term.probes) {
      const double c = scalars[static_cast<std::size_t>(p)];
      if (std::isnan(c)) {
        missing = true;
        break;
      }
      if (term.kind != CouplingKind::HamiltonianField && prescription_ == Prescription::Factorized) {
        if (c < -1e-9) throw NegativeRate("probe expectation " + std::to_string(c) + " is negative");
        product *= c * c;
      } else {
        product *= c;
      }
    }
    if (missing) continue;
    if (term.kind == CouplingKind::HamiltonianField) {
      const double coef = term.base * product;
      if (coef != 0.0) add_commutator(term.op, coef, r, o, dim);
    } else {
      const double rate = rate_from_product(term.base, product);
      if (rate == 0.0) continue;
      add_sandwich(term.op, rate, r, o, dim);
      add_decay(term.op, rate, decay);
    }
  }

  for (Index u = 0; u < dim; ++u) {
    Complex* col = o + u * dim;
    const Complex* rho_col = r + u * dim;
    for (Index s = 0; s < dim; ++s) col[s] -= 0.5 * (decay[s] + decay[u]) * rho_col[s];
  }
  out = acc;
}

void CmfFlow::ti_rhs(const Matrix& rho, Matrix& out) const {
  std::vector<double> scalars(probes_.size());
  probe_expectations(rho, scalars);
  out.resize(dim_, dim_);
  evaluate(rho, scalars, out);
}

SteadyStateResult ti_evolve(const ClusterOperatorSet& set, const Matrix& initial, Prescription prescription,
                            const SteadyStateOptions& options, const Observer& observer) {
  const CmfFlow flow(set, prescription);
  const RhsFunction f = [&flow](double, const Matrix& x, Matrix& out) { flow.ti_rhs(x, out); };
  return integrate_to_steady(f, initial, flow.dim(), options, observer);
}

}  // namespace nec
