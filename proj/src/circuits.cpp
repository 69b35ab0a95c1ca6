#include "stellarprep/circuits.hpp"

#include "stellarprep/fock.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace stellarprep::circuits {

using Complex = std::complex<double>;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;

// ---- encodings ------------------------------------------------------------

QubitEncoding::QubitEncoding(Scheme s, int lam) : scheme(s), lambda(lam) {
  if (lam < 0) throw std::invalid_argument("QubitEncoding: negative cutoff");
}

int QubitEncoding::qubits_per_mode() const {
  if (scheme == Scheme::Unary) return lambda + 1;
  int bits = 1;
  while ((1 << bits) < lambda + 1) ++bits;
  return bits;
}

// ---- gate factories -------------------------------------------------------

namespace {
void check_angle(double a) {
  if (!std::isfinite(a)) throw std::invalid_argument("Gate: non-finite angle");
}
}  // namespace

Gate Gate::not_gate(int target) {
  Gate g;
  g.kind = Kind::Not;
  g.target = target;
  return g;
}

Gate Gate::cnot(int control, int target) {
  if (control == target) throw std::invalid_argument("cnot: identical operands");
  Gate g;
  g.kind = Kind::Cnot;
  g.control = control;
  g.target = target;
  return g;
}

Gate Gate::rotation(char axis, int target, double angle) {
  check_angle(angle);
  if (axis != 'x' && axis != 'y' && axis != 'z')
    throw std::invalid_argument("rotation: bad axis");
  Gate g;
  g.kind = Kind::Rotation;
  g.axis = axis;
  g.target = target;
  g.angle = angle;
  return g;
}

Gate Gate::controlled_ry(std::vector<int> controls, std::vector<int> values,
                         int target, double angle) {
  check_angle(angle);
  if (controls.empty() || controls.size() != values.size())
    throw std::invalid_argument("controlled_ry: bad control lists");
  for (size_t i = 0; i < controls.size(); ++i) {
    if (controls[i] == target)
      throw std::invalid_argument("controlled_ry: control equals target");
    if (values[i] != 0 && values[i] != 1)
      throw std::invalid_argument("controlled_ry: control value not 0/1");
    for (size_t j = i + 1; j < controls.size(); ++j)
      if (controls[i] == controls[j])
        throw std::invalid_argument("controlled_ry: duplicate control");
  }
  Gate g;
  g.kind = Kind::ControlledRotation;
  g.target = target;
  g.angle = angle;
  g.controls = std::move(controls);
  g.control_values = std::move(values);
  return g;
}

Gate Gate::pauli_rot(char pa, int qa, char pb, int qb, double angle) {
  check_angle(angle);
  if (qa == qb) throw std::invalid_argument("pauli_rot: identical operands");
  auto ok = [](char p) { return p == 'x' || p == 'y' || p == 'z'; };
  if (!ok(pa) || !ok(pb)) throw std::invalid_argument("pauli_rot: bad Pauli");
  Gate g;
  g.kind = Kind::PauliRotation;
  g.pauli_a = pa;
  g.pauli_b = pb;
  g.qubit_a = qa;
  g.qubit_b = qb;
  g.angle = angle;
  return g;
}

void GateCircuit::append(const GateCircuit& other) {
  if (other.n_qubits != n_qubits)
    throw std::invalid_argument("GateCircuit::append: qubit count mismatch");
  gates.insert(gates.end(), other.gates.begin(), other.gates.end());
}

// ---- core-state encoding --------------------------------------------------

SparseState encode_core(const ansatz::CoreState& core, const QubitEncoding& encoding) {
  const int rank = core.tmpl.rank;
  if (encoding.lambda < rank)
    throw std::invalid_argument("encode_core: cutoff below core rank");
  const int n_modes = core.tmpl.n_modes;
  const int n_q = encoding.qubits_per_mode();

  const ansatz::Polynomial amps = ansatz::core_fock_amplitudes(core);
  double norm2 = 0.0;
  for (const auto& [occ, a] : amps) norm2 += a * a;
  if (norm2 <= 0.0) throw std::invalid_argument("encode_core: zero core state");
  const double inv_norm = 1.0 / std::sqrt(norm2);

  SparseState state;
  for (const auto& [occ, a] : amps) {
    std::string bits(static_cast<size_t>(n_modes) * n_q, '0');
    for (int j = 0; j < n_modes; ++j) {
      const int n = occ[j];
      if (n > encoding.lambda)
        throw std::invalid_argument("encode_core: occupation above cutoff");
      if (encoding.scheme == QubitEncoding::Scheme::Unary) {
        bits[static_cast<size_t>(j) * n_q + n] = '1';
      } else {
        for (int i = 0; i < n_q; ++i)
          if (n & (1 << i)) bits[static_cast<size_t>(j) * n_q + i] = '1';
      }
    }
    state[bits] += a * inv_norm;
  }
  for (auto it = state.begin(); it != state.end();)
    it = std::abs(it->second) < 1e-15 ? state.erase(it) : std::next(it);
  return state;
}

// ---- sparse-state preparation ---------------------------------------------

namespace {

// Classical application of the reduction gates to a sparse real state.
void sparse_apply(SparseState& state, const Gate& g) {
  switch (g.kind) {
    case Gate::Kind::Not: {
      SparseState next;
      for (auto& [key, amp] : state) {
        std::string k = key;
        k[g.target] = k[g.target] == '0' ? '1' : '0';
        next[k] = amp;
      }
      state = std::move(next);
      return;
    }
    case Gate::Kind::Cnot: {
      SparseState next;
      for (auto& [key, amp] : state) {
        std::string k = key;
        if (k[g.control] == '1') k[g.target] = k[g.target] == '0' ? '1' : '0';
        next[k] = amp;
      }
      state = std::move(next);
      return;
    }
    case Gate::Kind::Rotation:
    case Gate::Kind::ControlledRotation: {
      if (g.kind == Gate::Kind::Rotation && g.axis != 'y')
        throw std::logic_error("sparse_apply: only Ry rotations supported");
      const double c = std::cos(g.angle / 2.0), s = std::sin(g.angle / 2.0);
      SparseState next;
      for (auto& [key, amp] : state) {
        bool active = true;
        for (size_t i = 0; i < g.controls.size(); ++i)
          if ((key[g.controls[i]] == '1') != (g.control_values[i] == 1)) {
            active = false;
            break;
          }
        if (!active) {
          next[key] += amp;
          continue;
        }
        // Ry on the target: |0> -> c|0> + s|1>, |1> -> -s|0> + c|1>
        std::string flipped = key;
        flipped[g.target] = key[g.target] == '0' ? '1' : '0';
        if (key[g.target] == '0') {
          next[key] += c * amp;
          next[flipped] += s * amp;
        } else {
          next[flipped] += -s * amp;
          next[key] += c * amp;
        }
      }
      for (auto it = next.begin(); it != next.end();)
        it = std::abs(it->second) < 1e-13 ? next.erase(it) : std::next(it);
      state = std::move(next);
      return;
    }
    default:
      throw std::logic_error("sparse_apply: unsupported gate");
  }
}

// First qubit (ascending scan) splitting `keys` as unevenly as possible with
// neither side empty; returns {qubit, value-of-smaller-side} (ties pick 1).
std::pair<int, int> best_split(const std::vector<std::string>& keys, int n_qubits) {
  int best_b = -1, best_imbalance = -1, best_v = 1;
  for (int b = 0; b < n_qubits; ++b) {
    int ones = 0;
    for (const auto& k : keys) ones += k[b] == '1';
    const int zeros = static_cast<int>(keys.size()) - ones;
    if (ones == 0 || zeros == 0) continue;
    const int imbalance = std::abs(ones - zeros);
    if (imbalance > best_imbalance) {
      best_imbalance = imbalance;
      best_b = b;
      best_v = ones <= zeros ? 1 : 0;
    }
  }
  if (best_b < 0) throw std::logic_error("sparse_prep: no splitting qubit");
  return {best_b, best_v};
}

}  // namespace

GateCircuit sparse_reduction(const SparseState& input, int n_qubits) {
  if (input.empty()) throw std::invalid_argument("sparse_reduction: empty state");
  for (const auto& [key, amp] : input) {
    if (static_cast<int>(key.size()) != n_qubits)
      throw std::invalid_argument("sparse_reduction: key length mismatch");
    if (!std::isfinite(amp))
      throw std::invalid_argument("sparse_reduction: non-finite amplitude");
  }
  SparseState state = input;
  double norm2 = 0.0;
  for (const auto& [key, amp] : state) norm2 += amp * amp;
  const double inv_norm = 1.0 / std::sqrt(norm2);
  for (auto& [key, amp] : state) amp *= inv_norm;

  GateCircuit circ;
  circ.n_qubits = n_qubits;
  auto emit = [&](const Gate& g) {
    circ.gates.push_back(g);
    sparse_apply(state, g);
  };

  while (state.size() > 1) {
    std::vector<std::string> support;
    support.reserve(state.size());
    for (const auto& [key, amp] : state) support.push_back(key);

    // First search: isolate a single string x1 via maximally uneven splits.
    std::vector<std::string> t = support;
    std::vector<int> dif_qubits, dif_vals;
    while (t.size() > 1) {
      auto [b, v] = best_split(t, n_qubits);
      dif_qubits.push_back(b);
      dif_vals.push_back(v);
      std::vector<std::string> kept;
      for (const auto& k : t)
        if ((k[b] == '1') == (v == 1)) kept.push_back(k);
      t = std::move(kept);
    }
    std::string x1 = t.front();
    const int dif = dif_qubits.back();
    dif_qubits.pop_back();
    dif_vals.pop_back();

    // Second search: isolate the partner x2 among strings that agree with x1
    // on the remaining dif qubits.
    std::vector<std::string> t2;
    for (const auto& k : support) {
      bool match = true;
      for (size_t i = 0; i < dif_qubits.size(); ++i)
        if ((k[dif_qubits[i]] == '1') != (dif_vals[i] == 1)) {
          match = false;
          break;
        }
      if (match && k != x1) t2.push_back(k);
    }
    while (t2.size() > 1) {
      auto [b, v] = best_split(t2, n_qubits);
      dif_qubits.push_back(b);
      dif_vals.push_back(v);
      std::vector<std::string> kept;
      for (const auto& k : t2)
        if ((k[b] == '1') == (v == 1)) kept.push_back(k);
      t2 = std::move(kept);
    }
    std::string x2 = t2.front();

    // (a) ensure x1 carries 1 on the dif qubit
    if (x1[dif] != '1') {
      emit(Gate::not_gate(dif));
      x1[dif] = '1';
      x2[dif] = x2[dif] == '0' ? '1' : '0';
    }
    // (b) align x1 with x2 everywhere else, controlled on dif (x2 has dif=0)
    for (int b = 0; b < n_qubits; ++b) {
      if (b == dif || x1[b] == x2[b]) continue;
      emit(Gate::cnot(dif, b));
      x1[b] = x2[b];
    }
    // (c) stage the shared dif-qubit values to 1
    for (int b : dif_qubits) {
      if (x1[b] == '1') continue;
      emit(Gate::not_gate(b));
      x1[b] = '1';
      x2[b] = '1';
    }
    // (d) merge the pair with a controlled Ry on dif
    const double c1 = state.count(x1) ? state.at(x1) : 0.0;
    const double c2 = state.count(x2) ? state.at(x2) : 0.0;
    const double theta = 2.0 * std::atan2(-c1, c2);
    if (dif_qubits.empty())  // final pair: an unconditional Ry suffices
      emit(Gate::rotation('y', dif, theta));
    else
      emit(Gate::controlled_ry(dif_qubits, std::vector<int>(dif_qubits.size(), 1),
                               dif, theta));
  }

  const std::string survivor = state.begin()->first;
  for (int b = 0; b < n_qubits; ++b)
    if (survivor[b] == '1') circ.gates.push_back(Gate::not_gate(b));
  return circ;
}

GateCircuit sparse_prep(const SparseState& state, int n_qubits) {
  GateCircuit red = sparse_reduction(state, n_qubits);
  GateCircuit circ;
  circ.n_qubits = n_qubits;
  circ.gates.reserve(red.gates.size());
  for (auto it = red.gates.rbegin(); it != red.gates.rend(); ++it) {
    Gate g = *it;
    if (g.kind == Gate::Kind::Rotation || g.kind == Gate::Kind::ControlledRotation ||
        g.kind == Gate::Kind::PauliRotation)
      g.angle = -g.angle;
    circ.gates.push_back(g);
  }
  return circ;
}

// ---- Trotterized squeezing ------------------------------------------------

namespace {
double ladder_ell(int n) { return n < 0 ? 0.0 : std::sqrt((n + 1.0) * (n + 2.0)); }
}  // namespace

GateCircuit trotter_squeeze(double r, const QubitEncoding& encoding, int k_layers,
                            int n_modes) {
  if (encoding.scheme != QubitEncoding::Scheme::Unary)
    throw std::invalid_argument("trotter_squeeze: unary encoding required");
  if (k_layers < 1) throw std::invalid_argument("trotter_squeeze: k_layers < 1");
  if (n_modes < 1) throw std::invalid_argument("trotter_squeeze: n_modes < 1");
  const int lambda = encoding.lambda;
  const int n_q = encoding.qubits_per_mode();

  GateCircuit circ;
  circ.n_qubits = n_modes * n_q;
  circ.encoding = encoding;
  circ.meta.r = r;
  circ.meta.lambda = lambda;
  circ.meta.k_layers = k_layers;
  circ.meta.n_modes = n_modes;

  for (int mode = 0; mode < n_modes; ++mode) {
    const int base = mode * n_q;
    // exp(-i(r/K) T_n) on unary qubits (n, n+2) is the commuting pair
    // exp(+i phi X_{n+2} Y_n) exp(-i phi Y_{n+2} X_n), phi = r l_n / 4K.
    auto emit_layer = [&](int m) {
      for (int n = m; n + 2 <= lambda; n += 4) {
        const double half = r * ladder_ell(n) / (2.0 * k_layers);
        circ.gates.push_back(Gate::pauli_rot('x', base + n + 2, 'y', base + n, -half));
        circ.gates.push_back(Gate::pauli_rot('y', base + n + 2, 'x', base + n, half));
      }
    };
    // operator order (e0 e2)^K (e1 e3)^K: rightmost factors act first
    for (int k = 0; k < k_layers; ++k) {
      emit_layer(3);
      emit_layer(1);
    }
    for (int k = 0; k < k_layers; ++k) {
      emit_layer(2);
      emit_layer(0);
    }
  }
  return circ;
}

// ---- truncation error bound -----------------------------------------------

namespace {

double log_factorial(int n) { return std::lgamma(n + 1.0); }

// ln s(Delta) for the path-counting majorant at (n1, n2).
double log_s(double r, int n1, int n2, int delta) {
  const int mx = std::max(n1, n2);
  const int p0 = std::abs(n2 - n1) / 2;
  return p0 * std::log(r) - p0 * std::log(2.0) -
         0.5 * (log_factorial(n1) + log_factorial(n2)) +
         2.0 * delta * std::log(r / 2.0) + log_factorial(mx + 2 * delta) -
         log_factorial(delta) - log_factorial(p0 + delta);
}

// Term ratio s(Delta+1)/s(Delta).
double ratio_b(double r, int n1, int n2, int delta) {
  const int mx = std::max(n1, n2);
  const int p0 = std::abs(n2 - n1) / 2;
  return 0.25 * r * r * (mx + 2.0 * delta + 1.0) * (mx + 2.0 * delta + 2.0) /
         ((delta + 1.0) * (p0 + delta + 1.0));
}

// Matrix-element discrepancy bound G(r, R, Lambda).
double g_discrepancy(double r, int rank, int lambda) {
  const double q = 1.1 * r * r;
  if (q >= 1.0)
    throw std::domain_error("trunc_error: r^2 >= 1/1.1, bound unavailable");
  double best = 0.0;
  for (int n1 = 0; n1 <= rank; ++n1) {
    double sum_sq = 0.0;
    for (int n2 = n1 % 2; n2 <= lambda; n2 += 2) {
      const int mx = std::max(n1, n2);
      const int start = (lambda - mx + 1) / 2 + 1;
      double g_tilde;
      if (n1 == 0 && n2 == 0) {
        // b(Delta) increases monotonically toward r^2 here
        g_tilde = 2.0 * std::exp(log_s(r, 0, 0, start)) / (1.0 - r * r);
      } else {
        double partial = 0.0;
        int delta = start;
        while (ratio_b(r, n1, n2, delta) > q) {
          partial += std::exp(log_s(r, n1, n2, delta));
          ++delta;
          if (delta - start > 1000000)
            throw std::runtime_error("trunc_error: Delta_q search cap exceeded");
        }
        g_tilde = 2.0 * partial + 2.0 * std::exp(log_s(r, n1, n2, delta)) / (1.0 - q);
      }
      sum_sq += g_tilde * g_tilde;
    }
    best = std::max(best, std::sqrt(sum_sq));
  }
  return best;
}

// Leakage of S(r)|n1> past the cutoff, maximized over n1 <= rank. The
// squeezed-number distributions are cached per (r, n1) since resource scans
// sweep lambda with everything else fixed.
double g_leak(double r, int rank, int lambda) {
  static thread_local std::map<std::pair<double, int>, std::vector<double>> cache;
  double worst = 0.0;
  for (int n1 = 0; n1 <= rank; ++n1) {
    auto& probs = cache[{r, n1}];
    if (static_cast<int>(probs.size()) <= lambda)
      probs = fock::squeezed_fock_distribution(r, n1, std::max(lambda, 80));
    double kept = 0.0;
    for (int n2 = 0; n2 <= lambda; ++n2) kept += probs[n2];
    worst = std::max(worst, std::sqrt(std::max(0.0, 1.0 - kept)));
  }
  return worst;
}

}  // namespace

double trunc_error(double r, int rank, std::optional<int> span, int n_modes,
                   int lambda) {
  if (lambda < rank) throw std::invalid_argument("trunc_error: lambda < rank");
  if (rank < 0 || rank % 2 != 0)
    throw std::invalid_argument("trunc_error: rank must be even and >= 0");
  r = std::abs(r);
  if (r == 0.0) return 0.0;

  double prefactor;
  if (span) {
    const auto tmpl = ansatz::enumerate_core_template(rank, *span, n_modes);
    prefactor = n_modes * std::sqrt(double(n_modes) * tmpl.monomials_per_site());
  } else {
    prefactor = std::sqrt(rank / 2.0 + 1.0);
  }
  return prefactor * (g_discrepancy(r, rank, lambda) + g_leak(r, rank, lambda));
}

// ---- Trotter error bound --------------------------------------------------

namespace {

// s_m^Lambda = sum_n T_{4n+m} as an explicit Hermitian matrix.
MatrixXcd s_m_matrix(int lambda, int m) {
  MatrixXcd s = MatrixXcd::Zero(lambda + 1, lambda + 1);
  const Complex i_unit(0.0, 1.0);
  for (int n = m; n + 2 <= lambda; n += 4) {
    const double ell = ladder_ell(n);
    s(n + 2, n) += i_unit * ell / 2.0;
    s(n, n + 2) += -i_unit * ell / 2.0;
  }
  return s;
}

double spectral_norm_hermitian(const MatrixXcd& h) {
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(h, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return std::max(std::abs(ev.minCoeff()), std::abs(ev.maxCoeff()));
}

double commutator_norm_sum(int lambda) {
  double total = 0.0;
  for (int m : {0, 1}) {
    const MatrixXcd a = s_m_matrix(lambda, m);
    const MatrixXcd b = s_m_matrix(lambda, m + 2);
    const MatrixXcd comm = a * b - b * a;  // anti-Hermitian
    total += spectral_norm_hermitian(Complex(0.0, 1.0) * comm);
  }
  return total;
}

double beta_lambda(int lambda) {
  double beta = 0.0;
  for (int m : {0, 1})
    for (int n = m; n + 2 <= lambda; n += 4)
      beta += 0.5 * ladder_ell(n) * (ladder_ell(n - 2) + ladder_ell(n + 2));
  return beta;
}

}  // namespace

double trotter_error(double r, int lambda, int k_layers, int n_modes,
                     TrotterBoundMode mode) {
  if (k_layers < 1) throw std::invalid_argument("trotter_error: k_layers < 1");
  if (lambda < 0) throw std::invalid_argument("trotter_error: negative lambda");
  const double scale = n_modes * r * r / (2.0 * k_layers);
  if (mode == TrotterBoundMode::AnalyticBeta) return scale * beta_lambda(lambda);
  return scale * commutator_norm_sum(lambda);
}

// ---- resource search ------------------------------------------------------

ErrorBudget min_resources(double r, int rank, std::optional<int> span, int n_modes,
                          double f0, int lambda_max) {
  if (f0 <= 0.0 || f0 >= 1.0)
    throw std::invalid_argument("min_resources: f0 must lie in (0, 1)");
  // [1 - eps^2/2]^2 >= f0  <=>  eps <= sqrt(2 (1 - sqrt(f0)))
  const double eps_target = std::sqrt(2.0 * (1.0 - std::sqrt(f0)));
  const double half = eps_target / 2.0;

  int lambda = -1;
  double eps_trunc = 0.0;
  for (int lam = rank; lam <= lambda_max; ++lam) {
    const double e = trunc_error(r, rank, span, n_modes, lam);
    if (e <= half) {
      lambda = lam;
      eps_trunc = e;
      break;
    }
  }
  if (lambda < 0)
    throw std::runtime_error("min_resources: f0 unreachable within lambda_max");

  const double c1 = trotter_error(r, lambda, 1, n_modes,
                                  TrotterBoundMode::ExactCommutator);
  long k = 1;
  if (c1 > half) {
    long lo = 1, hi = 2;
    while (c1 / hi > half) hi *= 2;
    while (lo + 1 < hi) {
      const long mid = lo + (hi - lo) / 2;
      (c1 / mid <= half ? hi : lo) = mid;
    }
    k = hi;
  }

  ErrorBudget budget;
  budget.lambda = lambda;
  budget.k_layers = static_cast<int>(k);
  budget.eps_trunc = eps_trunc;
  budget.eps_trott = c1 / k;
  const double eps = budget.eps_trunc + budget.eps_trott;
  budget.fidelity_lower = eps < 1.0 ? std::pow(1.0 - eps * eps / 2.0, 2) : 0.0;
  return budget;
}

// ---- statevector simulation -----------------------------------------------

namespace {

void apply_gate(VectorXcd& v, const Gate& g) {
  const long dim = v.size();
  switch (g.kind) {
    case Gate::Kind::Not: {
      const long mt = 1L << g.target;
      for (long idx = 0; idx < dim; ++idx)
        if (!(idx & mt)) std::swap(v[idx], v[idx | mt]);
      return;
    }
    case Gate::Kind::Cnot: {
      const long mc = 1L << g.control, mt = 1L << g.target;
      for (long idx = 0; idx < dim; ++idx)
        if ((idx & mc) && !(idx & mt)) std::swap(v[idx], v[idx | mt]);
      return;
    }
    case Gate::Kind::Rotation: {
      const long mt = 1L << g.target;
      const double c = std::cos(g.angle / 2.0), s = std::sin(g.angle / 2.0);
      for (long idx = 0; idx < dim; ++idx) {
        if (idx & mt) continue;
        const Complex a0 = v[idx], a1 = v[idx | mt];
        switch (g.axis) {
          case 'x':
            v[idx] = c * a0 - Complex(0, s) * a1;
            v[idx | mt] = -Complex(0, s) * a0 + c * a1;
            break;
          case 'y':
            v[idx] = c * a0 - s * a1;
            v[idx | mt] = s * a0 + c * a1;
            break;
          case 'z':
            v[idx] = Complex(c, -s) * a0;
            v[idx | mt] = Complex(c, s) * a1;
            break;
        }
      }
      return;
    }
    case Gate::Kind::ControlledRotation: {
      const long mt = 1L << g.target;
      const double c = std::cos(g.angle / 2.0), s = std::sin(g.angle / 2.0);
      for (long idx = 0; idx < dim; ++idx) {
        if (idx & mt) continue;
        bool active = true;
        for (size_t i = 0; i < g.controls.size(); ++i) {
          const bool bit = idx & (1L << g.controls[i]);
          if (bit != (g.control_values[i] == 1)) {
            active = false;
            break;
          }
        }
        if (!active) continue;
        const Complex a0 = v[idx], a1 = v[idx | mt];
        if (g.axis == 'z') {
          v[idx] = Complex(c, -s) * a0;
          v[idx | mt] = Complex(c, s) * a1;
        } else {
          v[idx] = c * a0 - s * a1;
          v[idx | mt] = s * a0 + c * a1;
        }
      }
      return;
    }
    case Gate::Kind::PauliRotation: {
      const double c = std::cos(g.angle / 2.0), s = std::sin(g.angle / 2.0);
      VectorXcd pv = VectorXcd::Zero(dim);
      for (long idx = 0; idx < dim; ++idx) {
        long out = idx;
        Complex phase(1.0, 0.0);
        auto apply_pauli = [&](char p, int q) {
          const long m = 1L << q;
          const bool bit = out & m;
          switch (p) {
            case 'x':
              out ^= m;
              break;
            case 'y':
              phase *= bit ? Complex(0, -1) : Complex(0, 1);
              out ^= m;
              break;
            case 'z':
              if (bit) phase = -phase;
              break;
          }
        };
        apply_pauli(g.pauli_a, g.qubit_a);
        apply_pauli(g.pauli_b, g.qubit_b);
        pv[out] += phase * v[idx];
      }
      v = c * v - Complex(0, s) * pv;
      return;
    }
  }
}

void check_operands(const GateCircuit& circuit) {
  auto in_range = [&](int q) {
    if (q < 0 || q >= circuit.n_qubits)
      throw std::invalid_argument("simulate: gate operand out of range");
  };
  for (const auto& g : circuit.gates) {
    switch (g.kind) {
      case Gate::Kind::Not:
      case Gate::Kind::Rotation:
        in_range(g.target);
        break;
      case Gate::Kind::Cnot:
        in_range(g.control);
        in_range(g.target);
        break;
      case Gate::Kind::ControlledRotation:
        in_range(g.target);
        for (int c : g.controls) in_range(c);
        break;
      case Gate::Kind::PauliRotation:
        in_range(g.qubit_a);
        in_range(g.qubit_b);
        break;
    }
  }
}

}  // namespace

Eigen::VectorXcd apply_circuit(const GateCircuit& circuit, Eigen::VectorXcd state) {
  if (circuit.n_qubits < 0 || circuit.n_qubits > 26)
    throw std::invalid_argument("simulate: qubit count outside [0, 26]");
  if (state.size() != (1L << circuit.n_qubits))
    throw std::invalid_argument("apply_circuit: state dimension mismatch");
  check_operands(circuit);
  for (const auto& g : circuit.gates) apply_gate(state, g);
  return state;
}

Eigen::VectorXcd simulate(const GateCircuit& circuit) {
  if (circuit.n_qubits < 0 || circuit.n_qubits > 26)
    throw std::invalid_argument("simulate: qubit count outside [0, 26]");
  VectorXcd v = VectorXcd::Zero(1L << circuit.n_qubits);
  v[0] = 1.0;
  return apply_circuit(circuit, std::move(v));
}

// ---- gate accounting ------------------------------------------------------

GateCounts gate_counts(const GateCircuit& circuit) {
  GateCounts counts;
  for (const auto& g : circuit.gates) {
    switch (g.kind) {
      case Gate::Kind::Not:
        ++counts.not_gates;
        break;
      case Gate::Kind::Cnot:
        ++counts.cnots;
        ++counts.cnot_equivalents;
        break;
      case Gate::Kind::Rotation:
        ++counts.rotations;
        break;
      case Gate::Kind::ControlledRotation:
        ++counts.controlled_rotations;
        counts.cnot_equivalents += 2L * static_cast<long>(g.controls.size());
        break;
      case Gate::Kind::PauliRotation:
        ++counts.pauli_rotations;
        counts.cnot_equivalents += 2;
        break;
    }
  }
  return counts;
}

// ---- OpenQASM 2.0 export / import -----------------------------------------

namespace {

std::string fmt_angle(double a) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", a);
  return buf;
}

constexpr double kHalfPi = 1.5707963267948966;

// Emit G with G P G^dag = Z as ry/rz lines (pre), inverse afterwards (post).
void basis_change(std::vector<std::string>& lines, char pauli, int q, bool pre) {
  const std::string qq = "q[" + std::to_string(q) + "]";
  if (pauli == 'z') return;
  if (pauli == 'x') {
    lines.push_back("ry(" + fmt_angle(pre ? -kHalfPi : kHalfPi) + ") " + qq + ";");
    return;
  }
  // pauli == 'y': G = Ry(-pi/2) Rz(-pi/2)
  if (pre) {
    lines.push_back("rz(" + fmt_angle(-kHalfPi) + ") " + qq + ";");
    lines.push_back("ry(" + fmt_angle(-kHalfPi) + ") " + qq + ";");
  } else {
    lines.push_back("ry(" + fmt_angle(kHalfPi) + ") " + qq + ";");
    lines.push_back("rz(" + fmt_angle(kHalfPi) + ") " + qq + ";");
  }
}

int gray_code(int i) { return i ^ (i >> 1); }

// Gray-code multiplexed Ry ladder applying Ry(theta) on `target` exactly when
// all `controls` read 1 (2^k ry + 2^k cx, no ancilla).
void emit_multiplexed_ry(std::vector<std::string>& lines, const std::vector<int>& controls,
                         int target, double theta) {
  const int k = static_cast<int>(controls.size());
  const int terms = 1 << k;
  const std::string qt = "q[" + std::to_string(target) + "]";
  for (int i = 0; i < terms; ++i) {
    const int parity = __builtin_popcount(gray_code(i) & (terms - 1)) & 1;
    const double alpha = (parity ? -1.0 : 1.0) * theta / terms;
    lines.push_back("ry(" + fmt_angle(alpha) + ") " + qt + ";");
    int ctrl_bit;
    if (i + 1 < terms) {
      const int diff = gray_code(i) ^ gray_code(i + 1);
      ctrl_bit = 0;
      while (!(diff & (1 << ctrl_bit))) ++ctrl_bit;
    } else {
      ctrl_bit = k - 1;
    }
    lines.push_back("cx q[" + std::to_string(controls[ctrl_bit]) + "]," + qt + ";");
  }
}

}  // namespace

std::string export_qasm(const GateCircuit& circuit) {
  std::vector<std::string> lines;
  lines.push_back("OPENQASM 2.0;");
  lines.push_back("include \"qelib1.inc\";");
  lines.push_back("qreg q[" + std::to_string(circuit.n_qubits) + "];");

  for (const auto& g : circuit.gates) {
    const std::string qt = "q[" + std::to_string(g.target) + "]";
    switch (g.kind) {
      case Gate::Kind::Not:
        lines.push_back("x " + qt + ";");
        break;
      case Gate::Kind::Cnot:
        lines.push_back("cx q[" + std::to_string(g.control) + "]," + qt + ";");
        break;
      case Gate::Kind::Rotation:
        if (g.axis == 'y') {
          lines.push_back("ry(" + fmt_angle(g.angle) + ") " + qt + ";");
        } else if (g.axis == 'z') {
          lines.push_back("rz(" + fmt_angle(g.angle) + ") " + qt + ";");
        } else {  // rx = Ry(pi/2) Rz(theta) Ry(-pi/2) in operator order
          lines.push_back("ry(" + fmt_angle(-kHalfPi) + ") " + qt + ";");
          lines.push_back("rz(" + fmt_angle(g.angle) + ") " + qt + ";");
          lines.push_back("ry(" + fmt_angle(kHalfPi) + ") " + qt + ";");
        }
        break;
      case Gate::Kind::ControlledRotation: {
        // conjugate 0-valued controls with x so the active pattern is all-ones
        for (size_t i = 0; i < g.controls.size(); ++i)
          if (g.control_values[i] == 0)
            lines.push_back("x q[" + std::to_string(g.controls[i]) + "];");
        if (g.controls.size() == 1) {
          const std::string mnemonic = g.axis == 'z' ? "crz" : "cry";
          lines.push_back(mnemonic + "(" + fmt_angle(g.angle) + ") q[" +
                          std::to_string(g.controls[0]) + "]," + qt + ";");
        } else {
          emit_multiplexed_ry(lines, g.controls, g.target, g.angle);
        }
        for (size_t i = 0; i < g.controls.size(); ++i)
          if (g.control_values[i] == 0)
            lines.push_back("x q[" + std::to_string(g.controls[i]) + "];");
        break;
      }
      case Gate::Kind::PauliRotation: {
        basis_change(lines, g.pauli_a, g.qubit_a, true);
        basis_change(lines, g.pauli_b, g.qubit_b, true);
        const std::string qa = "q[" + std::to_string(g.qubit_a) + "]";
        const std::string qb = "q[" + std::to_string(g.qubit_b) + "]";
        lines.push_back("cx " + qa + "," + qb + ";");
        lines.push_back("rz(" + fmt_angle(g.angle) + ") " + qb + ";");
        lines.push_back("cx " + qa + "," + qb + ";");
        basis_change(lines, g.pauli_b, g.qubit_b, false);
        basis_change(lines, g.pauli_a, g.qubit_a, false);
        break;
      }
    }
  }

  std::string out;
  for (const auto& line : lines) {
    out += line;
    out += '\n';
  }
  return out;
}

namespace {

int parse_qubit(const std::string& token) {
  const auto lb = token.find("q["), rb = token.find(']');
  if (lb == std::string::npos || rb == std::string::npos || rb < lb + 2)
    throw std::invalid_argument("import_qasm: bad qubit token '" + token + "'");
  return std::stoi(token.substr(lb + 2, rb - lb - 2));
}

}  // namespace

GateCircuit import_qasm(const std::string& text) {
  GateCircuit circ;
  circ.n_qubits = -1;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.rfind("OPENQASM", 0) == 0 || line.rfind("include", 0) == 0 ||
        line.rfind("//", 0) == 0)
      continue;
    if (line.rfind("qreg", 0) == 0) {
      circ.n_qubits = parse_qubit(line);  // reads the [n] bracket
      continue;
    }
    std::string name = line.substr(0, line.find_first_of(" ("));
    double angle = 0.0;
    std::string rest;
    const auto paren = line.find('(');
    if (paren != std::string::npos) {
      const auto close = line.find(')', paren);
      angle = std::stod(line.substr(paren + 1, close - paren - 1));
      rest = line.substr(close + 1);
    } else {
      rest = line.substr(name.size());
    }
    std::vector<int> qubits;
    size_t pos = 0;
    while ((pos = rest.find("q[", pos)) != std::string::npos) {
      const auto rb = rest.find(']', pos);
      qubits.push_back(std::stoi(rest.substr(pos + 2, rb - pos - 2)));
      pos = rb;
    }
    if (name == "x" && qubits.size() == 1) {
      circ.gates.push_back(Gate::not_gate(qubits[0]));
    } else if (name == "cx" && qubits.size() == 2) {
      circ.gates.push_back(Gate::cnot(qubits[0], qubits[1]));
    } else if ((name == "ry" || name == "rz" || name == "rx") && qubits.size() == 1) {
      circ.gates.push_back(Gate::rotation(name[1], qubits[0], angle));
    } else if (name == "cry" && qubits.size() == 2) {
      circ.gates.push_back(Gate::controlled_ry({qubits[0]}, {1}, qubits[1], angle));
    } else if (name == "crz" && qubits.size() == 2) {
      // controlled-Rz: phase rotation on the target when the control is 1
      Gate g;
      g.kind = Gate::Kind::ControlledRotation;
      g.controls = {qubits[0]};
      g.control_values = {1};
      g.target = qubits[1];
      g.angle = angle;
      g.axis = 'z';
      circ.gates.push_back(g);
    } else {
      throw std::invalid_argument("import_qasm: unsupported line '" + line + "'");
    }
  }
  if (circ.n_qubits < 0) throw std::invalid_argument("import_qasm: missing qreg");
  return circ;
}

}  // namespace stellarprep::circuits
