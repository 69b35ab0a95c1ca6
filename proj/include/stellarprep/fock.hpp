#pragma once
// Truncated-Fock-space linear algebra: ladder/quadrature operators,
// anharmonic-oscillator and lattice Hamiltonians, exact diagonalization
// oracles, squeezing matrices.

#include <Eigen/Dense>
#include <complex>
#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace stellarprep::fock {

using Complex = std::complex<double>;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

// Boson-number cutoff Lambda per mode, N modes; Hilbert dimension (Lambda+1)^N.
struct FockCutoff {
  int lambda = 0;
  int n_modes = 1;

  FockCutoff(int lambda_, int n_modes_ = 1);
  int local_dim() const { return lambda + 1; }
  long dim() const;  // guarded in the constructor
};

// Dense operator over the truncated space. Only used where the full dense
// matrix is affordable; large multimode Hamiltonians go through SumOperator.
struct TruncatedOperator {
  FockCutoff cutoff;
  MatrixXcd mat;

  bool is_hermitian(double tol = 1e-12) const;
  bool is_unitary(double tol = 1e-10) const;
};

// Sum of products of single-mode operators: H = sum_t c_t * prod_f M_{t,f} on
// mode m_{t,f}. Supports matrix-free application for large multimode spaces.
struct SumOperator {
  struct Factor {
    int mode;
    MatrixXcd op;  // (lambda+1) x (lambda+1)
  };
  struct Term {
    Complex coeff;
    std::vector<Factor> factors;  // applied right-to-left (last factor first)
  };
  FockCutoff cutoff{0, 1};
  std::vector<Term> terms;

  VectorXcd apply(const VectorXcd& v) const;
  MatrixXcd dense() const;  // guarded: dim must be small
};

struct Spectrum {
  double e0 = 0.0;
  double e1 = 0.0;
  VectorXcd ground;
};

// ---- single-mode building blocks (dimension lambda+1) -------------------
MatrixXd annihilator(int lambda);                 // a^Lambda
MatrixXd creator(int lambda);                     // a^Lambda dagger
MatrixXd phi_local(int lambda);                   // (a + a†)/sqrt(2)
MatrixXcd pi_local(int lambda);                   // i (a† − a)/sqrt(2)
MatrixXd parity_local(int lambda);                // |n> -> (−1)^n |n>

// ---- embedded mode operators --------------------------------------------
// (a, a†) acting on `mode`, identity elsewhere, as a SumOperator.
std::pair<SumOperator, SumOperator> ladder_ops(const FockCutoff& cutoff, int mode);
// (phi, pi) acting on `mode`.
std::pair<SumOperator, SumOperator> quadratures(const FockCutoff& cutoff, int mode);

// ---- Hamiltonians --------------------------------------------------------
// H = pi^2/2 + sigma phi^2/2 + lambda phi^4 (single mode).
TruncatedOperator hamiltonian_0p1(int sigma, double lambda_coupling,
                                  const FockCutoff& cutoff);
// H = sum_j [ pi_j^2/2 + (phi_{j+1}-phi_j)^2/2 + m^2 phi_j^2/2 + (lambda/4) phi_j^4 ],
// periodic, N = cutoff.n_modes >= 2.
SumOperator hamiltonian_1p1(double m_sq, double lambda_coupling,
                            const FockCutoff& cutoff);

// ---- squeezing ------------------------------------------------------------
// S^Lambda(r) = exp( (r/2) [ (a†)^2 − a^2 ] ) on the truncated single-mode space.
MatrixXd squeeze_matrix(double r, const FockCutoff& cutoff);

// |<n2|S(r)|n1>|^2 for n2 = 0..n2_max at a convergence-certified reference
// cutoff (doubled until the tail probability moves < 1e−12).
std::vector<double> squeezed_fock_distribution(double r, int n1, int n2_max);

// ---- diagonalization ------------------------------------------------------
// Lowest two eigenpairs. When `parity_sector` is given (+1 or −1), both levels
// are taken within that parity sector.
Spectrum exact_ground(const TruncatedOperator& h,
                      std::optional<int> parity_sector = std::nullopt);
Spectrum exact_ground(const SumOperator& h,
                      std::optional<int> parity_sector = std::nullopt);

// ---- misc -----------------------------------------------------------------
double fidelity(const VectorXcd& psi, const VectorXcd& chi);

// Cyclic shift (mode j -> j+1) permutation on the multimode basis.
Eigen::VectorXi cyclic_shift_permutation(const FockCutoff& cutoff);

// Apply a single-mode matrix to one mode of a multimode vector (matrix-free).
VectorXcd apply_mode_op(const MatrixXcd& op, int mode, const FockCutoff& cutoff,
                        const VectorXcd& v);

// Double lambda until `value(lambda)` changes by < tol; returns converged value.
double converge_cutoff(const std::function<double(int)>& value, int lambda0,
                       double tol = 1e-8, int max_doublings = 8);

}  // namespace stellarprep::fock
