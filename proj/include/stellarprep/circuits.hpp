#pragma once
// Qubit-circuit compilation of the squeezed-core ansatz: Fock-state
// encodings, sparse core-state preparation, Trotterized squeezing circuits,
// truncation/Trotter error budgets, a statevector simulator, gate-count
// accounting, and OpenQASM 2.0 export/import.

#include "stellarprep/ansatz.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace stellarprep::circuits {

// ---- encodings ------------------------------------------------------------

struct QubitEncoding {
  enum class Scheme { Unary, Binary };
  Scheme scheme = Scheme::Unary;
  int lambda = 0;  // boson cutoff per mode

  QubitEncoding(Scheme s, int lam);
  // Lambda+1 (unary) or ceil(log2(Lambda+1)) (binary) qubits per mode.
  int qubits_per_mode() const;
};

// ---- gates and circuits ---------------------------------------------------

// Rotation convention: rotation(axis, theta) = exp(-i theta/2 sigma_axis);
// pauli_rot(P,a,P',b,theta) = exp(-i theta/2 P_a P'_b); controlled rotations
// are Ry on the target, active when every control matches its control value.
struct Gate {
  enum class Kind { Not, Cnot, Rotation, ControlledRotation, PauliRotation };
  Kind kind = Kind::Not;
  int target = 0;
  int control = 0;  // Cnot only
  char axis = 'y';  // Rotation only: 'x', 'y', 'z'
  double angle = 0.0;
  std::vector<int> controls;        // ControlledRotation
  std::vector<int> control_values;  // 0/1, parallel to `controls`
  char pauli_a = 'x', pauli_b = 'x';  // PauliRotation
  int qubit_a = 0, qubit_b = 0;

  static Gate not_gate(int target);
  static Gate cnot(int control, int target);
  static Gate rotation(char axis, int target, double angle);
  static Gate controlled_ry(std::vector<int> controls, std::vector<int> values,
                            int target, double angle);
  static Gate pauli_rot(char pa, int qa, char pb, int qb, double angle);
};

struct CircuitMetadata {
  double r = 0.0;
  int lambda = 0;
  int k_layers = 0;
  int rank = 0;
  int span = 0;
  int n_modes = 1;
};

struct GateCircuit {
  int n_qubits = 0;
  std::vector<Gate> gates;
  QubitEncoding encoding{QubitEncoding::Scheme::Unary, 0};
  CircuitMetadata meta;

  void append(const GateCircuit& other);  // same n_qubits required
};

struct ErrorBudget {
  double eps_trunc = 0.0;
  double eps_trott = 0.0;
  int lambda = 0;
  int k_layers = 0;
  double fidelity_lower = 0.0;  // [1 - (eps_trunc+eps_trott)^2/2]^2 when sum < 1
};

// Bitstring -> real amplitude; character i of the key is qubit i ('0'/'1').
using SparseState = std::map<std::string, double>;

// ---- operations -----------------------------------------------------------

// Map the expanded, normalized core state to qubit registers (mode j occupies
// qubits [j*n_q, (j+1)*n_q)). Requires encoding.lambda >= core rank.
SparseState encode_core(const ansatz::CoreState& core, const QubitEncoding& encoding);

// Circuit mapping the (normalized, real) sparse state to |0...0>: repeated
// dif-qubit search, CNOT alignment, NOT staging, and a controlled-Ry merge,
// then NOT gates clearing the surviving basis state.
GateCircuit sparse_reduction(const SparseState& state, int n_qubits);
// Inverse of sparse_reduction: prepares the sparse state from |0...0>.
GateCircuit sparse_prep(const SparseState& state, int n_qubits);

// Trotterized squeezing circuit on unary registers: K repetitions of the
// (m=0, m=2) exponential pair followed by K of (m=1, m=3), each two-boson
// hop realized as two two-qubit Pauli rotations on unary qubits (n, n+2).
// Multi-mode circuits are per-register tensor copies.
GateCircuit trotter_squeeze(double r, const QubitEncoding& encoding, int k_layers,
                            int n_modes = 1);

// Truncation-error bound eps_trunc: prefactor * [G + g_leak] with prefactor
// N*sqrt(N*|c_{R,Q}|) (span given) or sqrt(R/2+1) (single mode). G is the
// path-counting majorant with ratio threshold q = 1.1 r^2; g_leak is the
// unitarity complement of the squeezed-number distribution.
// Throws when r^2 >= 1/1.1 (threshold invalid: bound unavailable).
double trunc_error(double r, int rank, std::optional<int> span, int n_modes,
                   int lambda);

enum class TrotterBoundMode { ExactCommutator, AnalyticBeta };

// eps_trott: exact mode (N r^2 / 2K)(||[s0,s2]|| + ||[s1,s3]||) with spectral
// norms of explicit (lambda+1)-dim matrices; analytic mode N r^2 beta(Lambda)/2K.
double trotter_error(double r, int lambda, int k_layers, int n_modes,
                     TrotterBoundMode mode = TrotterBoundMode::ExactCommutator);

// Smallest Lambda (scanned upward from the rank floor) then smallest K
// (bisected) such that with eps_trunc = eps_trott = eps/2 the fidelity bound
// [1 - eps^2/2]^2 >= f0 holds, using the exact-commutator Trotter bound.
ErrorBudget min_resources(double r, int rank, std::optional<int> span, int n_modes,
                          double f0, int lambda_max = 64);

// Exact statevector (qubit i is bit i of the index; n_qubits <= 26).
Eigen::VectorXcd simulate(const GateCircuit& circuit);
Eigen::VectorXcd apply_circuit(const GateCircuit& circuit, Eigen::VectorXcd state);

struct GateCounts {
  long not_gates = 0;
  long cnots = 0;
  long rotations = 0;
  long controlled_rotations = 0;
  long pauli_rotations = 0;
  // Accounting convention (documented in the README): CNOT 1, two-qubit
  // Pauli rotation 2, k-controlled rotation 2k (borrowed-qubit ladder).
  long cnot_equivalents = 0;
};
GateCounts gate_counts(const GateCircuit& circuit);

// OpenQASM 2.0 subset: x, cx, ry, rz, cry; Pauli rotations are emitted as
// cx+rz sandwiches with ry/rz basis changes; multi-controlled rotations as
// Gray-code multiplexed ry/cx ladders. Byte-stable for a fixed circuit.
std::string export_qasm(const GateCircuit& circuit);
// Reads the exported subset back into primitive gates (for round trips).
GateCircuit import_qasm(const std::string& text);

}  // namespace stellarprep::circuits
