#pragma once
// Finite-stellar-rank ansatz machinery: (R,Q) core templates with
// translation/inversion symmetry orbits, phi <-> ladder polynomial
// conversion, dense state construction, the analytic expectation engine,
// and the Gaussian-effective-potential baseline.

#include "stellarprep/fock.hpp"

#include <map>
#include <string>
#include <vector>

namespace stellarprep::ansatz {

using fock::Complex;
using fock::FockCutoff;
using fock::VectorXcd;

// Sparse phi-monomial: sorted (site, exponent>0) pairs. Empty = constant.
using Monomial = std::vector<std::pair<int, int>>;

struct Orbit {
  Monomial representative;         // lexicographically smallest occupation image
  std::vector<Monomial> members;   // distinct monomials related by shift/inversion
  std::string label;               // window shape, e.g. "1,0,3" ("1" = constant)
};

struct CoreTemplate {
  int rank = 0;     // R, even
  int span = 0;     // Q
  int n_modes = 1;  // N
  std::vector<Orbit> orbits;  // orbit 0 is the constant monomial

  // |c_{R,Q}|: window shapes per site including the constant term.
  int monomials_per_site() const { return monomials_per_site_; }
  // free coefficients once the overall scale is fixed
  int independent_coefficients() const { return static_cast<int>(orbits.size()) - 1; }

  int monomials_per_site_ = 1;
};

CoreTemplate enumerate_core_template(int rank, int span, int n_modes);

struct CoreState {
  CoreTemplate tmpl;
  Eigen::VectorXd coeffs;  // one per orbit, real

  // Flattened global polynomial: distinct monomials with their coefficients.
  std::vector<std::pair<Monomial, double>> expanded() const;
};

// Vacuum core |0...0> for a given template (constant coefficient 1).
CoreState vacuum_core(const CoreTemplate& tmpl);

struct AnsatzParams {
  double r = 0.0;
  CoreState core;
};

// Product of per-site factors phi_j^p pi_j^q, in the order listed.
struct ObservableFactor {
  int site = 0;
  int p = 0;
  int q = 0;
};
struct ObservableSpec {
  std::vector<ObservableFactor> factors;

  static ObservableSpec phi_power(int site, int p) { return {{{site, p, 0}}}; }
  static ObservableSpec pi_power(int site, int q) { return {{{site, 0, q}}}; }
  static ObservableSpec phi_phi(int site_a, int site_b);
  static ObservableSpec moment(int p, int q) { return {{{0, p, q}}}; }  // phi^p pi^q at site 0
};

// <psi|O|psi> / <psi|psi> evaluated analytically (no state vector built):
// squeezers conjugate through as phi -> e^r phi, pi -> e^{-r} pi and the
// remaining vacuum matrix elements factorize over sites.
Complex expectation(const AnsatzParams& params, const ObservableSpec& obs);

// Lattice Hamiltonian expectation via translation invariance (N >= 2).
double energy(const AnsatzParams& params, double m_sq, double lambda_coupling, int n_modes);
// Single-mode anharmonic-oscillator energy.
double energy_single_mode(const AnsatzParams& params, int sigma, double lambda_coupling);

// Dense verification path: normalized  (x)_j S_j(r) |C>  in the truncated space.
VectorXcd build_state(const AnsatzParams& params, const FockCutoff& cutoff);

// Polynomial applied to the vacuum, keyed by full occupation vectors.
using Polynomial = std::map<std::vector<int>, double>;
Polynomial phi_to_ladder(const Polynomial& phi_poly);   // d_n -> c'_n
Polynomial ladder_to_phi(const Polynomial& ladder_poly);

// Fock amplitudes of C(phi)|0> for the expanded core: occupation -> amplitude.
Polynomial core_fock_amplitudes(const CoreState& core);

struct GepObservables {
  double energy = 0.0;
  std::vector<double> two_point;  // <phi_0 phi_j>, j = 0..N-1
  double phi2 = 0.0, phi4 = 0.0, pi2 = 0.0;
};
GepObservables gep_observables(double mu, double m_sq, double lambda_coupling, int n_modes);

double moment_ratio(double phi2n, double phi2, int n);

// Text record: template header plus orbit-label -> coefficient lines.
std::string serialize(const AnsatzParams& params);
AnsatzParams deserialize(const std::string& text);

}  // namespace stellarprep::ansatz
